//! Parameter checkpoints.
//!
//! Layout: an 8-byte little-endian header length, a UTF-8 JSON header
//! `{"kind","arch","arch_hash","tensors":[{"name","shape","offset"}]}`, then
//! all tensors as little-endian `f32`, `offset` counted in elements.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::iqa::{IqaArch, IqaParams};
use crate::nn::Parameters;
use crate::vqa::{VqaArch, VqaParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub arch: serde_json::Value,
    pub arch_hash: String,
    pub tensors: Vec<TensorEntry>,
}

/// SHA-256 of the architecture's JSON form, hex encoded.
pub fn arch_hash<A: Serialize>(arch: &A) -> Result<String> {
    let json = serde_json::to_string(arch)?;
    Ok(Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

fn save<A: Serialize>(path: &Path, kind: &str, arch: &A, params: &impl Parameters<f32>) -> Result<()> {
    let mut tensors = Vec::new();
    let mut data = Vec::new();
    let mut offset = 0;
    for (name, t) in params.named() {
        tensors.push(TensorEntry { name, shape: t.shape().to_vec(), offset });
        offset += t.numel();
        for v in t.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header { kind: kind.into(), arch: serde_json::to_value(arch)?, arch_hash: arch_hash(arch)?, tensors };
    let h = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + h.len() + data.len());
    out.extend_from_slice(&(h.len() as u64).to_le_bytes());
    out.extend_from_slice(&h);
    out.extend_from_slice(&data);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read(path: &Path, kind: &str) -> Result<(Header, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 8 {
        return Err(bad("truncated header".into()));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(8..8usize.saturating_add(hlen)).ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("bad header: {e}")))?;
    if header.kind != kind {
        return Err(bad(format!("holds a {} model, expected {kind}", header.kind)));
    }
    let raw = &bytes[8 + hlen..];
    if raw.len() % 4 != 0 {
        return Err(bad("payload is not a whole number of floats".into()));
    }
    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Ok((header, data))
}

fn fill(path: &Path, header: &Header, data: &[f32], params: &mut impl Parameters<f32>) -> Result<()> {
    let bad = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
    let named = params.named_mut();
    if named.len() != header.tensors.len() {
        return Err(bad(format!("{} tensors stored, model has {}", header.tensors.len(), named.len())));
    }
    for ((name, t), e) in named.into_iter().zip(&header.tensors) {
        if name != e.name || t.shape() != e.shape.as_slice() {
            return Err(bad(format!("tensor {} {:?} does not match model {name} {:?}", e.name, e.shape, t.shape())));
        }
        let src = data.get(e.offset..e.offset + t.numel()).ok_or_else(|| bad(format!("tensor {name} out of range")))?;
        t.data_mut().copy_from_slice(src);
    }
    Ok(())
}

fn arch_of<A: DeserializeOwned + Serialize>(path: &Path, header: &Header) -> Result<A> {
    let arch: A = serde_json::from_value(header.arch.clone())
        .map_err(|e| Error::Checkpoint(format!("{}: bad architecture: {e}", path.display())))?;
    if arch_hash(&arch)? != header.arch_hash {
        return Err(Error::Checkpoint(format!(
            "{}: architecture hash does not match its architecture",
            path.display()
        )));
    }
    Ok(arch)
}

pub fn save_iqa(path: impl AsRef<Path>, params: &IqaParams<f32>) -> Result<()> {
    save(path.as_ref(), "iqa", &params.arch, params)
}

pub fn save_vqa(path: impl AsRef<Path>, params: &VqaParams<f32>) -> Result<()> {
    save(path.as_ref(), "vqa", &params.arch, params)
}

pub fn load_iqa(path: impl AsRef<Path>) -> Result<IqaParams<f32>> {
    let path = path.as_ref();
    let (header, data) = read(path, "iqa")?;
    let arch: IqaArch = arch_of(path, &header)?;
    let mut p = IqaParams::zeros(&arch)?;
    fill(path, &header, &data, &mut p)?;
    Ok(p)
}

pub fn load_vqa(path: impl AsRef<Path>) -> Result<VqaParams<f32>> {
    let path = path.as_ref();
    let (header, data) = read(path, "vqa")?;
    let arch: VqaArch = arch_of(path, &header)?;
    let mut p = VqaParams::zeros(&arch)?;
    fill(path, &header, &data, &mut p)?;
    Ok(p)
}
