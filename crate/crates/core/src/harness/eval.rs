//! Per-video scoring of both branches, fusion and the evaluation report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{self, arch_hash};
use super::config::RunConfig;
use super::fuse;
use crate::error::{Error, Result};
use crate::iqa::{self, IqaParams};
use crate::media::{self, FrameStack, Manifest, RawVideo};
use crate::metrics::{self, EvalMetrics};
use crate::vqa::{self, VqaParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub video_id: String,
    pub y_iqa: f64,
    pub y_vqa: f64,
    pub y_fused: f64,
    pub mos_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoFailure {
    pub video_id: String,
    pub error: String,
}

/// Metrics of one prediction column, or why they are undefined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub metrics: Option<EvalMetrics>,
    pub error: Option<String>,
}

impl MetricCell {
    fn of(pred: &[f64], label: &[f64]) -> Self {
        match metrics::main_score(pred, label) {
            Ok(m) => MetricCell { metrics: Some(m), error: None },
            Err(e) => MetricCell { metrics: None, error: Some(e.to_string()) },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetrics {
    pub iqa: MetricCell,
    pub vqa: MetricCell,
    pub fused: MetricCell,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<ScoreRecord>,
    pub failures: Vec<VideoFailure>,
    pub metrics: ReportMetrics,
    pub config: RunConfig,
    pub wall_clock_s: f64,
}

impl EvalReport {
    /// Metrics recomputed from the stored records.
    pub fn recompute_metrics(&self) -> ReportMetrics {
        metrics_of(&self.records)
    }

    /// JSON of the record section alone.
    pub fn records_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.records)?)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:>8} {:>8} {:>8}", "column", "SRCC", "PLCC", "main");
        for (name, cell) in [("IQA", &self.metrics.iqa), ("VQA", &self.metrics.vqa), ("fused", &self.metrics.fused)] {
            match (&cell.metrics, &cell.error) {
                (Some(m), _) => {
                    let _ = writeln!(s, "{name:<8} {:>8.4} {:>8.4} {:>8.4}", m.srcc, m.plcc, m.main_score);
                }
                (None, e) => {
                    let _ = writeln!(s, "{name:<8} undefined ({})", e.as_deref().unwrap_or("?"));
                }
            }
        }
        let _ = writeln!(s, "{} videos scored, {} failed", self.records.len(), self.failures.len());
        for f in &self.failures {
            let _ = writeln!(s, "  {}: {}", f.video_id, f.error);
        }
        s
    }

    /// Writes `report.json` and `report.txt` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        let txt = dir.join("report.txt");
        fs::write(&txt, self.to_table()).map_err(|e| Error::io(&txt, e))
    }
}

fn metrics_of(records: &[ScoreRecord]) -> ReportMetrics {
    let col = |f: fn(&ScoreRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
    let label = col(|r| r.mos_norm);
    ReportMetrics {
        iqa: MetricCell::of(&col(|r| r.y_iqa), &label),
        vqa: MetricCell::of(&col(|r| r.y_vqa), &label),
        fused: MetricCell::of(&col(|r| r.y_fused), &label),
    }
}

/// Center-cropped frames of the frame-branch test protocol.
pub fn iqa_eval_frames(v: &RawVideo, cfg: &RunConfig) -> Result<FrameStack> {
    let c = &cfg.iqa;
    let idx = media::sample_frame_indices(v, c.fps);
    let frames = idx
        .iter()
        .map(|&i| {
            let f = media::resize_smaller_edge(&v.frame_tensor(i), c.resize)?;
            media::center_crop(&f, c.crop)
        })
        .collect::<Result<Vec<_>>>()?;
    FrameStack::new(frames, idx.iter().map(|&i| v.timestamp(i)).collect())
}

/// `(y_iqa, y_vqa)` for one decoded video.
pub fn score_video(
    v: &RawVideo,
    iqa_params: &IqaParams<f32>,
    vqa_params: &VqaParams<f32>,
    cfg: &RunConfig,
) -> Result<(f64, f64)> {
    let (y_iqa, _) = iqa::iqa_video_score(&iqa_eval_frames(v, cfg)?, iqa_params)?;
    let (y_vqa, _) = vqa::vqa_video_score(v, vqa_params, &cfg.vqa.view_spec(), cfg.seed)?;
    Ok((y_iqa, y_vqa))
}

/// Scores every video of `manifest`; per-video failures are collected and
/// the remaining videos still contribute.
pub fn evaluate(
    manifest: &Manifest,
    iqa_params: &IqaParams<f32>,
    vqa_params: &VqaParams<f32>,
    cfg: &RunConfig,
) -> Result<EvalReport> {
    let start = Instant::now();
    let outcomes: Vec<std::result::Result<ScoreRecord, VideoFailure>> = manifest
        .records
        .par_iter()
        .map(|r| {
            let scored = media::load_raw_video(manifest.payload_path(r))
                .and_then(|v| score_video(&v, iqa_params, vqa_params, cfg));
            match scored {
                Ok((y_iqa, y_vqa)) => Ok(ScoreRecord {
                    video_id: r.id.clone(),
                    y_iqa,
                    y_vqa,
                    y_fused: fuse(y_iqa, y_vqa),
                    mos_norm: r.mos_norm,
                }),
                Err(e) => Err(VideoFailure { video_id: r.id.clone(), error: e.to_string() }),
            }
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(f) => failures.push(f),
        }
    }
    Ok(EvalReport {
        metrics: metrics_of(&records),
        records,
        failures,
        config: cfg.clone(),
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

/// [`evaluate`] with checkpoints whose architectures must match `cfg`.
pub fn evaluate_checkpoints(
    manifest: &Manifest,
    iqa_ckpt: impl AsRef<Path>,
    vqa_ckpt: impl AsRef<Path>,
    cfg: &RunConfig,
) -> Result<EvalReport> {
    let iqa_params = checkpoint::load_iqa(iqa_ckpt.as_ref())?;
    let vqa_params = checkpoint::load_vqa(vqa_ckpt.as_ref())?;
    if arch_hash(&iqa_params.arch)? != arch_hash(&cfg.iqa.arch())? {
        return Err(Error::Checkpoint(format!(
            "{} was trained with {:?}, configuration expects {:?}",
            iqa_ckpt.as_ref().display(),
            iqa_params.arch,
            cfg.iqa.arch()
        )));
    }
    if arch_hash(&vqa_params.arch)? != arch_hash(&cfg.vqa.arch())? {
        return Err(Error::Checkpoint(format!(
            "{} was trained with {:?}, configuration expects {:?}",
            vqa_ckpt.as_ref().display(),
            vqa_params.arch,
            cfg.vqa.arch()
        )));
    }
    evaluate(manifest, &iqa_params, &vqa_params, cfg)
}
