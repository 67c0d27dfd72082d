//! Run configuration. Defaults mirror the full-scale training recipe;
//! [`RunConfig::toy`] shrinks geometry and model width for desk-scale runs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fragment::ViewSpec;
use crate::iqa::IqaArch;
use crate::vqa::{PaddingType, VqaArch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Cosine annealing to zero over all steps, no warmup.
    Cosine,
    Constant,
}

impl Schedule {
    /// Learning rate at `step` of `total`.
    pub fn lr(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => {
                let frac = step as f64 / total.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IqaConfig {
    pub fps: u64,
    pub resize: usize,
    pub crop: usize,
    pub flip_p: f64,
    pub lr: f64,
    pub batch: usize,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub epochs: usize,
    pub channels: Vec<usize>,
    pub pam: bool,
    pub fpa: bool,
}

impl Default for IqaConfig {
    fn default() -> Self {
        IqaConfig {
            fps: 2,
            resize: 512,
            crop: 320,
            flip_p: 0.5,
            lr: 0.002,
            batch: 32,
            weight_decay: 0.01,
            schedule: Schedule::Cosine,
            epochs: 30,
            channels: vec![8, 16, 32, 64],
            pam: true,
            fpa: true,
        }
    }
}

impl IqaConfig {
    pub fn arch(&self) -> IqaArch {
        IqaArch { channels: self.channels.clone(), pam: self.pam, fpa: self.fpa }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VqaConfig {
    pub frag: usize,
    pub patch: usize,
    /// Kernel size initialized before zero-ring expansion; `null` disables expansion.
    pub base_patch: Option<usize>,
    pub grid: usize,
    pub clip_len: usize,
    pub stride: usize,
    pub views: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub beta: f64,
    pub padding: PaddingType,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub embed_dim: usize,
    pub stage_channels: Vec<usize>,
}

impl Default for VqaConfig {
    fn default() -> Self {
        VqaConfig {
            frag: 48,
            patch: 6,
            base_patch: Some(4),
            grid: 7,
            clip_len: 32,
            stride: 2,
            views: 4,
            lr: 0.001,
            batch: 16,
            epochs: 30,
            beta: 0.3,
            padding: PaddingType::Zero,
            weight_decay: 0.01,
            schedule: Schedule::Cosine,
            embed_dim: 24,
            stage_channels: vec![24, 24],
        }
    }
}

impl VqaConfig {
    pub fn arch(&self) -> VqaArch {
        VqaArch {
            embed_dim: self.embed_dim,
            stage_channels: self.stage_channels.clone(),
            patch: self.patch,
            base_patch: self.base_patch.filter(|&b| b < self.patch),
            padding: self.padding,
        }
    }

    pub fn view_spec(&self) -> ViewSpec {
        ViewSpec {
            grid: self.grid,
            frag_size: self.frag,
            clip_len: self.clip_len,
            stride: self.stride,
            n_views: self.views,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub iqa: IqaConfig,
    pub vqa: VqaConfig,
    pub paths: Paths,
}

impl RunConfig {
    /// Desk-scale settings for the synthetic dataset (96x128 frames).
    pub fn toy() -> Self {
        RunConfig {
            seed: 0,
            iqa: IqaConfig { resize: 96, crop: 64, epochs: 20, ..IqaConfig::default() },
            vqa: VqaConfig {
                frag: 12,
                grid: 4,
                clip_len: 8,
                epochs: 60,
                embed_dim: 16,
                stage_channels: vec![16, 16],
                ..VqaConfig::default()
            },
            paths: Paths::default(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let (i, v) = (&self.iqa, &self.vqa);
        if i.fps == 0 || i.crop == 0 || i.resize < i.crop || i.batch == 0 {
            return bad(format!(
                "iqa geometry/batch invalid: fps {} resize {} crop {} batch {}",
                i.fps, i.resize, i.crop, i.batch
            ));
        }
        if i.crop % 16 != 0 {
            return bad(format!("iqa crop {} must be a multiple of 16", i.crop));
        }
        if !(0.0..=1.0).contains(&i.flip_p) || i.lr < 0.0 || i.weight_decay < 0.0 {
            return bad("iqa flip_p must be in [0,1], lr and weight_decay >= 0".into());
        }
        if v.batch < 2 {
            return bad(format!("vqa batch {} must be >= 2 to form pairs", v.batch));
        }
        if v.frag == 0 || v.grid == 0 || v.clip_len == 0 || v.stride == 0 || v.views == 0 {
            return bad("vqa geometry fields must be positive".into());
        }
        if v.frag % v.patch.max(1) != 0 || v.clip_len % crate::vqa::TEMPORAL_PATCH != 0 {
            return bad(format!(
                "fragment {} must be a multiple of patch {} and clip_len {} even",
                v.frag, v.patch, v.clip_len
            ));
        }
        if v.lr < 0.0 || v.weight_decay < 0.0 || !v.beta.is_finite() {
            return bad("vqa lr, weight_decay must be >= 0 and beta finite".into());
        }
        self.iqa.arch().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.vqa.arch().validate().map_err(|e| Error::Config(e.to_string()))
    }
}
