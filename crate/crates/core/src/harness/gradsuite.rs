//! Finite-difference checks of every loss and of both branch forwards,
//! run in 64-bit.

use rand::seq::index;
use rand::Rng as _;
use serde::Serialize;

use crate::error::Result;
use crate::iqa::{self, IqaArch, IqaParams};
use crate::losses::{
    combined_vqa_loss, plcc_loss, rank_hinge_argument, rank_loss, smooth_l1, BatchScores, DEFAULT_BETA,
};
use crate::nn::Parameters;
use crate::rng::{stream, Purpose, Rng};
use crate::tensor::{GradCheck, GradReport, Probe, Tape, Tensor};
use crate::vqa::{self, VqaArch, VqaParams};

#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub pass: bool,
    pub failure: Option<String>,
}

impl SuiteEntry {
    fn from_report(name: &str, r: &GradReport) -> Self {
        SuiteEntry {
            name: name.into(),
            checked: r.checked,
            skipped: r.skipped.len(),
            max_rel_err: r.max_rel_err,
            pass: r.pass,
            failure: r.failure.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
}

impl SuiteReport {
    pub fn checked(&self) -> usize {
        self.entries.iter().map(|e| e.checked).sum()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<22} {:>8} {:>8} {:>12} {}\n", "check", "checked", "skipped", "max_rel_err", "result");
        for e in &self.entries {
            s += &format!(
                "{:<22} {:>8} {:>8} {:>12.3e} {}\n",
                e.name,
                e.checked,
                e.skipped,
                e.max_rel_err,
                match (&e.failure, e.pass) {
                    (Some(f), _) => format!("FAIL ({f})"),
                    (None, true) => "ok".into(),
                    (None, false) => "FAIL".into(),
                }
            );
        }
        s
    }
}

/// Coordinate budget per check.
#[derive(Clone, Copy, Debug)]
pub struct SuiteBudget {
    pub per_loss: usize,
    pub per_branch: usize,
}

impl Default for SuiteBudget {
    fn default() -> Self {
        SuiteBudget { per_loss: 64, per_branch: 220 }
    }
}

fn random_batch(rng: &mut Rng, m: usize, ties: bool) -> (Vec<f64>, Vec<f64>) {
    let pred = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
    let label =
        (0..m).map(|_| if ties { rng.random_range(0..4) as f64 } else { rng.random_range(-2.0..2.0) }).collect();
    (pred, label)
}

fn hinge_regime(b: &BatchScores) -> Vec<bool> {
    let m = b.len();
    (0..m * m).map(|k| rank_hinge_argument(b, k / m, k % m) > 0.0).collect()
}

type LossFn = fn(&[f64], &[f64]) -> Result<(f64, Vec<f64>, Vec<bool>)>;

fn smooth_l1_batch(p: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>, Vec<bool>)> {
    let mut v = 0.0;
    let mut g = Vec::new();
    let mut regime = Vec::new();
    for (a, b) in p.iter().zip(y) {
        let (l, d) = smooth_l1(*a, *b);
        v += l;
        g.push(d);
        regime.push((b - a).abs() < 1.0);
    }
    Ok((v, g, regime))
}

fn plcc_batch(p: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>, Vec<bool>)> {
    let l = plcc_loss(&BatchScores::new(p.to_vec(), y.to_vec())?)?;
    Ok((l.value, l.grad, Vec::new()))
}

fn rank_batch(p: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>, Vec<bool>)> {
    let b = BatchScores::new(p.to_vec(), y.to_vec())?;
    let l = rank_loss(&b)?;
    Ok((l.value, l.grad, hinge_regime(&b)))
}

fn combined_batch(p: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>, Vec<bool>)> {
    let b = BatchScores::new(p.to_vec(), y.to_vec())?;
    let l = combined_vqa_loss(&b, DEFAULT_BETA)?;
    Ok((l.value, l.grad, hinge_regime(&b)))
}

fn check_loss(gc: &GradCheck, f: LossFn, rng: &mut Rng, coords: usize, ties: bool) -> GradReport {
    const M: usize = 8;
    let mut report = GradReport::empty();
    let mut done = 0;
    while done < coords {
        let (pred, label) = random_batch(rng, M, ties);
        let analytic = match f(&pred, &label) {
            Ok((_, g, _)) => g,
            Err(e) => {
                report.pass = false;
                report.failure = Some(e.to_string());
                return report;
            }
        };
        let all: Vec<usize> = (0..M).collect();
        let r = gc.check(
            |theta| f(theta, &label).map(|(v, _, regime)| Probe { value: v, regime }),
            &pred,
            &analytic,
            &all[..M.min(coords - done)],
        );
        done += M;
        report = report.merge(r);
    }
    report
}

fn pick(rng: &mut Rng, n: usize, k: usize) -> Vec<usize> {
    let mut v = index::sample(rng, n, k.min(n)).into_vec();
    v.sort_unstable();
    v
}

/// Checks `d score / d theta` of the frame branch on a 16x16 input.
pub fn check_iqa(gc: &GradCheck, arch: &IqaArch, seed: u64, coords: usize) -> Result<GradReport> {
    let mut rng = stream(seed, Purpose::Gradcheck, &[1, arch.pam as u64, arch.fpa as u64]);
    let mut params: IqaParams<f64> = IqaParams::init(arch, &mut rng)?;
    let mut flat = params.flatten();
    for v in flat.iter_mut() {
        *v += rng.random_range(-0.05..0.05);
    }
    params.load_flat(&flat)?;
    let frame = Tensor::from_fn(&[3, 16, 16], |_| rng.random_range(0.0..1.0));
    let (_, grads, _) = iqa::frame_backward(&params, &frame, |_| 1.0)?;
    let analytic: Vec<f64> = grads.concat();
    let coords = pick(&mut rng, flat.len(), coords);
    let f = |theta: &[f64]| -> Result<Probe> {
        let mut p = params.clone();
        p.load_flat(theta)?;
        let mut tape = Tape::new();
        let x = tape.constant(frame.clone());
        let tr = iqa::frame_forward_tape(&p, &mut tape, x, false)?;
        let value = tape.value(tr.head_out).data()[0] + p.offset.data()[0];
        Ok(Probe { value, regime: tape.relu_pattern() })
    };
    Ok(gc.check(f, &flat, &analytic, &coords))
}

/// Checks `d score / d theta` of the clip branch on a `[3,2,12,12]` view.
pub fn check_vqa(gc: &GradCheck, arch: &VqaArch, seed: u64, coords: usize) -> Result<GradReport> {
    let mut rng = stream(seed, Purpose::Gradcheck, &[2, arch.patch as u64]);
    let params: VqaParams<f64> = VqaParams::init(arch, &mut rng)?;
    let flat = params.flatten();
    let view = Tensor::from_fn(&[3, 2, 12, 12], |_| rng.random_range(0.0..1.0));
    let (_, grads, _) = vqa::view_backward(&params, &view, |_| 1.0)?;
    let analytic: Vec<f64> = grads.concat();
    let coords = pick(&mut rng, flat.len(), coords);
    let f = |theta: &[f64]| -> Result<Probe> {
        let mut p = params.clone();
        p.load_flat(theta)?;
        let mut tape = Tape::new();
        let x = tape.constant(view.clone());
        let tr = vqa::view_forward_tape(&p, &mut tape, x, false)?;
        Ok(Probe { value: tape.value(tr.y).data()[0], regime: tape.relu_pattern() })
    };
    Ok(gc.check(f, &flat, &analytic, &coords))
}

/// Runs all checks.
pub fn run(seed: u64, budget: SuiteBudget) -> Result<SuiteReport> {
    let gc = GradCheck::default();
    let mut rng = stream(seed, Purpose::Gradcheck, &[0]);
    let mut entries = Vec::new();
    let losses: [(&str, LossFn); 4] = [
        ("smooth_l1", smooth_l1_batch),
        ("plcc_loss", plcc_batch),
        ("rank_loss", rank_batch),
        ("combined_vqa_loss", combined_batch),
    ];
    for (name, f) in losses {
        let a = check_loss(&gc, f, &mut rng, budget.per_loss / 2, false);
        let b = check_loss(&gc, f, &mut rng, budget.per_loss - budget.per_loss / 2, true);
        entries.push(SuiteEntry::from_report(name, &a.merge(b)));
    }
    let iqa_full = check_iqa(&gc, &IqaArch::default(), seed, budget.per_branch)?;
    entries.push(SuiteEntry::from_report("iqa_branch", &iqa_full));
    let plain = IqaArch { pam: false, fpa: false, ..Default::default() };
    let iqa_plain = check_iqa(&gc, &plain, seed, budget.per_branch / 4)?;
    entries.push(SuiteEntry::from_report("iqa_branch_plain_head", &iqa_plain));
    let varch = VqaArch { embed_dim: 4, stage_channels: vec![4, 4], ..Default::default() };
    entries.push(SuiteEntry::from_report("vqa_branch", &check_vqa(&gc, &varch, seed, budget.per_branch)?));
    Ok(SuiteReport { entries })
}
