//! Training loops. The frame branch regresses every frame onto its video's
//! normalized MOS; the clip branch is trained on whole batches with the
//! correlation-plus-ranking objective.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::optim::{sum_grads, AdamW};
use crate::error::{Error, Result};
use crate::iqa::{self, IqaParams};
use crate::losses::{combined_vqa_loss, smooth_l1, BatchScores};
use crate::media::{self, Manifest, RawVideo};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;
use crate::vqa::{self, VqaParams};

/// Stream index separating the two branches' shuffles and inits.
const IQA_STREAM: u64 = 0;
const VQA_STREAM: u64 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    /// Mean batch loss per optimizer step.
    pub steps: Vec<f64>,
    /// Batches skipped as degenerate.
    pub skipped: usize,
}

impl LossCurve {
    pub fn last(&self) -> Option<f64> {
        self.steps.last().copied()
    }
}

#[derive(Clone, Debug)]
pub struct Trained<P> {
    pub params: P,
    pub curve: LossCurve,
}

fn load_all(manifest: &Manifest) -> Result<Vec<RawVideo>> {
    manifest.records.par_iter().map(|r| media::load_raw_video(manifest.payload_path(r))).collect()
}

/// 2 fps frames resized to the training edge, each paired with its label.
fn iqa_training_frames(manifest: &Manifest, cfg: &RunConfig) -> Result<Vec<(Tensor<f32>, f64)>> {
    let c = &cfg.iqa;
    let per_video = manifest
        .records
        .par_iter()
        .map(|r| {
            let v = media::load_raw_video(manifest.payload_path(r))?;
            media::sample_frame_indices(&v, c.fps)
                .into_iter()
                .map(|i| {
                    let f = media::resize_smaller_edge(&v.frame_tensor(i), c.resize)?;
                    Ok((f, r.mos_norm))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let frames: Vec<_> = per_video.into_iter().flatten().collect();
    if frames.is_empty() {
        return Err(Error::Contract("training split produced no frames".into()));
    }
    Ok(frames)
}

/// Trains the frame branch with smooth L1 on random crops.
pub fn train_iqa(manifest: &Manifest, cfg: &RunConfig) -> Result<Trained<IqaParams<f32>>> {
    cfg.validate()?;
    let c = &cfg.iqa;
    let frames = iqa_training_frames(manifest, cfg)?;
    let mut params = IqaParams::init(&c.arch(), &mut stream(cfg.seed, Purpose::Init, &[IQA_STREAM]))?;
    let n = frames.len();
    let b = c.batch.min(n);
    let probe = frames.iter().take(b).map(|(f, _)| media::center_crop(f, c.crop)).collect::<Result<Vec<_>>>()?;
    let label_mean = frames.iter().map(|f| f.1).sum::<f64>() / n as f64;
    params.calibrate_offset(&probe, label_mean)?;
    let mut opt = AdamW::new(c.weight_decay);
    let total = c.epochs * n.div_ceil(b);
    let mut curve = LossCurve::default();
    log::info!("iqa: {} frames, {} steps", n, total);
    for epoch in 0..c.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seed, Purpose::Shuffle, &[IQA_STREAM, epoch as u64]));
        for (s, chunk) in order.chunks(b).enumerate() {
            let m = chunk.len() as f64;
            let parts = chunk
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let (frame, label) = &frames[i];
                    let mut rng = stream(cfg.seed, Purpose::Crop, &[epoch as u64, s as u64, j as u64]);
                    let x = media::random_crop_flip(frame, c.crop, c.flip_p, &mut rng)?;
                    let mut loss = 0.0;
                    let (_, g, _) = iqa::frame_backward(&params, &x, |y| {
                        let (l, d) = smooth_l1(y as f64, *label);
                        loss = l;
                        (d / m) as f32
                    })?;
                    Ok((loss, g))
                })
                .collect::<Result<Vec<_>>>()?;
            let loss = parts.iter().map(|p| p.0).sum::<f64>() / m;
            if !loss.is_finite() {
                return Err(Error::NonFinite("iqa training loss"));
            }
            let grads = sum_grads(parts.into_iter().map(|p| p.1).collect()).expect("non-empty batch");
            let step = curve.steps.len();
            opt.step(&mut params, &grads, c.schedule.lr(c.lr, step, total))?;
            curve.steps.push(loss);
        }
        log::info!("iqa epoch {}: loss {:.5}", epoch + 1, curve.last().unwrap_or(f64::NAN));
    }
    Ok(Trained { params, curve })
}

/// Trains the clip branch with `plcc_loss + beta * rank_loss` per batch.
pub fn train_vqa(manifest: &Manifest, cfg: &RunConfig) -> Result<Trained<VqaParams<f32>>> {
    cfg.validate()?;
    let c = &cfg.vqa;
    let spec = c.view_spec();
    let videos = load_all(manifest)?;
    let labels: Vec<f64> = manifest.records.iter().map(|r| r.mos_norm).collect();
    let mut params = VqaParams::init(&c.arch(), &mut stream(cfg.seed, Purpose::Init, &[VQA_STREAM]))?;
    let mut opt = AdamW::new(c.weight_decay);
    let n = videos.len();
    let b = c.batch.min(n);
    let total = c.epochs * n.div_ceil(b);
    let mut curve = LossCurve::default();
    let mut step = 0;
    log::info!("vqa: {} videos, {} steps", n, total);
    for epoch in 0..c.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seed, Purpose::Shuffle, &[VQA_STREAM, epoch as u64]));
        for chunk in order.chunks(b) {
            let lr = c.schedule.lr(c.lr, step, total);
            step += 1;
            if chunk.len() < 2 {
                log::warn!("vqa epoch {}: skipping batch of {} (needs pairs)", epoch + 1, chunk.len());
                curve.skipped += 1;
                continue;
            }
            let mut tapes = chunk
                .par_iter()
                .map(|&i| {
                    let mut rng = stream(cfg.seed, Purpose::Temporal, &[epoch as u64, i as u64]);
                    let view_id = rng.random_range(0..spec.n_views);
                    let view = spec.view(&videos[i], view_id, &mut rng)?;
                    vqa::view_tape(&params, &view.data)
                })
                .collect::<Result<Vec<_>>>()?;
            let preds: Vec<f64> = tapes.iter().map(|(t, tr)| tr.score(t) as f64).collect();
            let batch = BatchScores::new(preds, chunk.iter().map(|&i| labels[i]).collect())?;
            let loss = match combined_vqa_loss(&batch, c.beta) {
                Ok(l) => l,
                Err(Error::DegenerateBatch(msg)) => {
                    log::warn!("vqa epoch {}: skipping degenerate batch ({msg})", epoch + 1);
                    curve.skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let parts = tapes
                .par_iter_mut()
                .zip(&loss.grad)
                .map(|((tape, tr), &g)| tr.backward(tape, g as f32))
                .collect::<Result<Vec<_>>>()?;
            let grads = sum_grads(parts).expect("non-empty batch");
            opt.step(&mut params, &grads, lr)?;
            curve.steps.push(loss.value);
        }
        log::info!("vqa epoch {}: loss {:.5}", epoch + 1, curve.last().unwrap_or(f64::NAN));
    }
    if curve.steps.is_empty() {
        return Err(Error::DegenerateBatch("every vqa batch was degenerate".into()));
    }
    Ok(Trained { params, curve })
}
