//! One-factor ablations over the head modules and the tokenization.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::eval::{evaluate, MetricCell};
use super::train::{train_iqa, train_vqa};
use crate::error::{Error, Result};
use crate::iqa::IqaParams;
use crate::media::Manifest;
use crate::vqa::{PaddingType, VqaParams};

/// Values to try per factor; each non-baseline value yields one row, and
/// the two head toggles are crossed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Toggles {
    pub pam: Vec<bool>,
    pub fpa: Vec<bool>,
    pub padding: Vec<PaddingType>,
    /// Fragment sizes; the patch size follows so tokens per fragment stay fixed.
    pub frag_size: Vec<usize>,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles {
            pam: vec![true, false],
            fpa: vec![true, false],
            padding: vec![PaddingType::Zero, PaddingType::Reflect, PaddingType::Replicate],
            frag_size: Vec::new(),
        }
    }
}

impl Toggles {
    /// Default toggles plus fragment sizes at 2/3 and 4/3 of the baseline
    /// (patch 4 without expansion and patch 8 with expansion at full scale).
    pub fn standard(base: &RunConfig) -> Self {
        let f = base.vqa.frag;
        let mut t = Toggles::default();
        t.frag_size = vec![f, f * 2 / 3, f * 4 / 3];
        t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: RunConfig,
}

fn onoff(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// Baseline first, then one row per toggle value that differs from it.
pub fn variants(base: &RunConfig, t: &Toggles) -> Result<Vec<Variant>> {
    let mut out = vec![Variant { name: "baseline".into(), config: base.clone() }];
    for &pam in &t.pam {
        for &fpa in &t.fpa {
            if (pam, fpa) == (base.iqa.pam, base.iqa.fpa) {
                continue;
            }
            let mut c = base.clone();
            c.iqa.pam = pam;
            c.iqa.fpa = fpa;
            out.push(Variant { name: format!("pam={} fpa={}", onoff(pam), onoff(fpa)), config: c });
        }
    }
    for &p in &t.padding {
        if p == base.vqa.padding {
            continue;
        }
        let mut c = base.clone();
        c.vqa.padding = p;
        out.push(Variant { name: format!("padding={} patch={}", p.as_str(), c.vqa.patch), config: c });
    }
    let tokens = base.vqa.frag / base.vqa.patch.max(1);
    for &f in &t.frag_size {
        if f == base.vqa.frag {
            continue;
        }
        if tokens == 0 || f % tokens != 0 {
            return Err(Error::Config(format!("fragment {f} is not a multiple of {tokens} tokens")));
        }
        let mut c = base.clone();
        c.vqa.frag = f;
        c.vqa.patch = f / tokens;
        let expand = base.vqa.base_patch.filter(|&b| c.vqa.patch > b && (c.vqa.patch - b).is_multiple_of(2));
        c.vqa.base_patch = expand;
        let how = match expand {
            Some(_) => c.vqa.padding.as_str(),
            None => "w/o",
        };
        out.push(Variant { name: format!("frag={f} padding={how} patch={}", c.vqa.patch), config: c });
    }
    for v in &out {
        v.config.validate()?;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub iqa: MetricCell,
    pub vqa: MetricCell,
    pub fused: MetricCell,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<36} {:>8} {:>8} {:>8} {:>8} {:>8}", "variant", "IQA", "VQA", "SRCC", "PLCC", "main");
        let main = |c: &MetricCell| c.metrics.map_or("-".to_string(), |m| format!("{:.4}", m.main_score));
        for r in &self.rows {
            let (sr, pl) = r
                .fused
                .metrics
                .map_or(("-".into(), "-".into()), |m| (format!("{:.4}", m.srcc), format!("{:.4}", m.plcc)));
            let fm = main(&r.fused);
            let _ = writeln!(s, "{:<36} {:>8} {:>8} {:>8} {:>8} {:>8}", r.name, main(&r.iqa), main(&r.vqa), sr, pl, fm);
        }
        s
    }
}

/// Trains and evaluates every variant; branches shared between variants are
/// trained once.
pub fn ablation(train: &Manifest, eval: &Manifest, base: &RunConfig, toggles: &Toggles) -> Result<AblationTable> {
    let mut iqa_cache: HashMap<String, IqaParams<f32>> = HashMap::new();
    let mut vqa_cache: HashMap<String, VqaParams<f32>> = HashMap::new();
    let mut rows = Vec::new();
    for v in variants(base, toggles)? {
        let c = &v.config;
        let ik = serde_json::to_string(&(c.seed, &c.iqa))?;
        let vk = serde_json::to_string(&(c.seed, &c.vqa))?;
        if !iqa_cache.contains_key(&ik) {
            log::info!("ablation {}: training frame branch", v.name);
            iqa_cache.insert(ik.clone(), train_iqa(train, c)?.params);
        }
        if !vqa_cache.contains_key(&vk) {
            log::info!("ablation {}: training clip branch", v.name);
            vqa_cache.insert(vk.clone(), train_vqa(train, c)?.params);
        }
        let report = evaluate(eval, &iqa_cache[&ik], &vqa_cache[&vk], c)?;
        rows.push(AblationRow {
            name: v.name,
            iqa: report.metrics.iqa,
            vqa: report.metrics.vqa,
            fused: report.metrics.fused,
        });
    }
    Ok(AblationTable { rows })
}
