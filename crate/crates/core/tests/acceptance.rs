//! One PASS/FAIL line per acceptance criterion. Exits non-zero on any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{max_abs_diff, naive_conv3d, pearson_oracle, random_tensor, rng, srcc_oracle};
use rand::Rng as _;
use zoomvqa::fragment::{region_bounds, ViewSpec};
use zoomvqa::harness::{checkpoint, eval, fuse, gradsuite, train, RunConfig};
use zoomvqa::losses::{combined_vqa_loss, plcc_loss, rank_loss, BatchScores};
use zoomvqa::media::{self, Manifest, RawVideo, Split, SynthOptions};
use zoomvqa::metrics;
use zoomvqa::tensor::{ops, Tensor};
use zoomvqa::vqa::{self, PaddingType, VqaParams};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let detail = f()?;
    let el = t.elapsed();
    ensure!(el < limit, "{detail}; took {:.1}s, limit {}s", el.as_secs_f64(), limit.as_secs());
    Ok(format!("{detail}; {:.1}s", el.as_secs_f64()))
}

fn batch(p: &[f64], l: &[f64]) -> BatchScores {
    BatchScores::new(p.to_vec(), l.to_vec()).unwrap()
}

fn gradient_suite() -> Outcome {
    timed(Duration::from_secs(120), || {
        let r =
            gradsuite::run(0, gradsuite::SuiteBudget { per_loss: 64, per_branch: 220 }).map_err(|e| e.to_string())?;
        let (n, err) = (r.checked(), r.max_rel_err());
        ensure!(r.pass() && n >= 500 && err < 1e-3, "checked {n}, max rel err {err:.3e}\n{}", r.to_table());
        Ok(format!("{n} coordinates over {} checks, max rel err {err:.2e}", r.entries.len()))
    })
}

fn loss_oracles() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-6;
    let plcc = [
        ([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 0.0),
        ([3.0, 2.0, 1.0], [1.0, 2.0, 3.0], 1.0),
        ([1.0, 2.0, 3.0], [2.0, 4.0, 6.0], 0.0),
    ];
    for (p, l, want) in plcc {
        let got = plcc_loss(&batch(&p, &l)).map_err(|e| e.to_string())?.value;
        ensure!(close(got, want), "plcc_loss({p:?}, {l:?}) = {got}, want {want}");
    }
    let rank = [([0.0, 1.0], 0.0), ([0.5, 0.5], 0.5), ([1.0, 0.0], 1.0)];
    for (p, want) in rank {
        let got = rank_loss(&batch(&p, &[0.0, 1.0])).map_err(|e| e.to_string())?.value;
        ensure!(close(got, want), "rank_loss({p:?}) = {got}, want {want}");
    }
    let mut r = rng(2);
    for _ in 0..20 {
        let p: Vec<f64> = (0..8).map(|_| r.random_range(-2.0..2.0)).collect();
        let l: Vec<f64> = (0..8).map(|_| r.random_range(-2.0..2.0)).collect();
        let b = batch(&p, &l);
        let (pl, rk) = (plcc_loss(&b).unwrap().value, rank_loss(&b).unwrap().value);
        for beta in [0.0, 0.3, 1.0, 3.0] {
            let c = combined_vqa_loss(&b, beta).unwrap().value;
            ensure!(close(c, pl + beta * rk), "combined at beta {beta}: {c} vs {}", pl + beta * rk);
        }
    }
    Ok("6 hand cases, 80 linearity checks".into())
}

fn correlation_oracles() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0f64;
    for k in 0..100 {
        let ties = k % 2 == 1;
        let mut draw = || if ties { r.random_range(0..5) as f64 } else { r.random_range(-10.0..10.0) };
        let p: Vec<f64> = (0..20).map(|_| draw()).collect();
        let l: Vec<f64> = (0..20).map(|_| draw()).collect();
        let s = metrics::srcc(&p, &l).map_err(|e| e.to_string())?;
        let c = metrics::plcc(&p, &l).map_err(|e| e.to_string())?;
        let d = (s - srcc_oracle(&p, &l)).abs().max((c - pearson_oracle(&p, &l)).abs());
        worst = worst.max(d);
        ensure!(d < 1e-9, "vector {k}: deviation {d:e}");
        let mono: Vec<f64> = p.iter().map(|v| v.powi(3) + 2.0 * v).collect();
        ensure!(metrics::srcc(&mono, &l).unwrap() == s, "srcc changed under monotone map on vector {k}");
        let aff: Vec<f64> = p.iter().map(|v| 4.0 * v - 7.0).collect();
        ensure!(metrics::srcc(&aff, &l).unwrap() == s, "srcc changed under affine map on vector {k}");
        ensure!((metrics::plcc(&aff, &l).unwrap() - c).abs() < 1e-12, "plcc changed under affine map on vector {k}");
    }
    Ok(format!("100 vectors, max deviation {worst:.1e}"))
}

fn fragment_exactness() -> Outcome {
    timed(Duration::from_secs(60), || {
        let mut r = rng(4);
        let mut pixels = 0usize;
        for k in 0..50 {
            let (w, h, n) = (r.random_range(16..120), r.random_range(16..120), r.random_range(1..12));
            let v = RawVideo::new(w, h, 25, 1, n, (0..w * h * 3 * n).map(|_| r.random::<u8>()).collect()).unwrap();
            let spec = ViewSpec {
                grid: r.random_range(1..6),
                frag_size: r.random_range(1..12),
                clip_len: r.random_range(1..6),
                stride: r.random_range(1..4),
                n_views: r.random_range(1..4),
            };
            let seed = r.random::<u64>();
            let id = r.random_range(0..spec.n_views);
            let view = spec.view(&v, id, &mut vqa::view_rng(seed, id)).map_err(|e| e.to_string())?;
            let again = spec.view(&v, id, &mut vqa::view_rng(seed, id)).unwrap();
            ensure!(view == again, "video {k}: view not deterministic");
            let src = media::ensure_min_edge(&v, spec.grid * spec.frag_size).unwrap();
            let g = &view.grid;
            ensure!(g.source_dims == (src.height, src.width), "video {k}: source dims");

            // regions tile each axis in order
            for (len, parts) in [(src.height, g.grid_h), (src.width, g.grid_w)] {
                let mut next = 0;
                for i in 0..parts {
                    let (s, m) = region_bounds(len, parts, i);
                    ensure!(
                        s == next && m >= spec.frag_size,
                        "video {k}: region {i} at {s}+{m}, expected start {next}"
                    );
                    next += m;
                }
                ensure!(next == len, "video {k}: regions cover {next} of {len}");
            }
            let (fs, t) = (spec.frag_size, spec.clip_len);
            let (hh, ww) = (g.grid_h * fs, g.grid_w * fs);
            ensure!(view.data.shape() == [3, t, hh, ww], "video {k}: shape {:?}", view.data.shape());
            for c in 0..3 {
                for ti in 0..t {
                    let src_t = view.temporal_indices[ti];
                    for y in 0..hh {
                        for x in 0..ww {
                            let (oy, ox) = g.offset(y / fs, x / fs);
                            let want = src.pixel(src_t, oy + y % fs, ox + x % fs, c) as f32 / 255.0;
                            let got = view.data.data()[((c * t + ti) * hh + y) * ww + x];
                            ensure!(got.to_bits() == want.to_bits(), "video {k}: pixel ({c},{ti},{y},{x})");
                            pixels += 1;
                        }
                    }
                }
            }
        }
        Ok(format!("50 videos, {pixels} pixels bit-exact"))
    })
}

fn expansion_equivalence() -> Outcome {
    let mut r = rng(5);
    let mut worst = 0f64;
    for k in 0..100 {
        let (co, ci, kt) = (r.random_range(1..5), 3, r.random_range(1..3));
        let kernel = random_tensor(&[co, ci, kt, 4, 4], &mut r);
        let big = vqa::expand_patch_head(&kernel, 6, PaddingType::Zero).map_err(|e| e.to_string())?;
        let (t, gh, gw) = (kt * r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
        let x = random_tensor(&[ci, t, gh * 6, gw * 6], &mut r);
        let got = ops::conv3d(&x, &big, None, [kt, 6, 6], [0, 0, 0]).map_err(|e| e.to_string())?;
        // central 4x4 of every 6x6 window, stacked into a 4-stride grid
        let centre = Tensor::from_fn(&[ci, t, gh * 4, gw * 4], |i| {
            let (xx, y) = (i % (gw * 4), (i / (gw * 4)) % (gh * 4));
            let rest = i / (gw * 4 * gh * 4);
            let (sy, sx) = (y / 4 * 6 + 1 + y % 4, xx / 4 * 6 + 1 + xx % 4);
            x.data()[(rest * gh * 6 + sy) * gw * 6 + sx]
        });
        let want = naive_conv3d(&centre, &kernel, None, [kt, 4, 4], [0, 0, 0]);
        let d = max_abs_diff(&got, &want);
        worst = worst.max(d);
        ensure!(d < 1e-6, "case {k}: max diff {d:e}");
        let rf = vqa::expand_patch_head(&kernel, 6, PaddingType::Reflect).unwrap();
        let rp = vqa::expand_patch_head(&kernel, 6, PaddingType::Replicate).unwrap();
        let a = ops::conv3d(&x, &rf, None, [kt, 6, 6], [0, 0, 0]).unwrap();
        let b = ops::conv3d(&x, &rp, None, [kt, 6, 6], [0, 0, 0]).unwrap();
        ensure!(max_abs_diff(&a, &b) > 1e-6, "case {k}: reflect and replicate responses coincide");
        ensure!(max_abs_diff(&a, &got) > 1e-6, "case {k}: reflect response equals zero padding");
    }
    Ok(format!("100 kernels, max diff {worst:.1e}"))
}

fn fusion() -> Outcome {
    ensure!(fuse(0.0, 0.0) == 0.5, "fuse(0,0) = {}", fuse(0.0, 0.0));
    let grid: Vec<f64> = (0..21).map(|i| -10.0 + i as f64).collect();
    for &a in &grid {
        for &b in &grid {
            let v = fuse(a, b);
            ensure!(v > 0.0 && v < 1.0, "fuse({a},{b}) = {v}");
            ensure!(fuse(a + 1.0, b) > v && fuse(a, b + 1.0) > v, "not strictly increasing at ({a},{b})");
        }
    }
    let mut r = rng(6);
    for _ in 0..10_000 {
        let (a, b) = (r.random_range(-30.0..30.0), r.random_range(-30.0..30.0));
        let v = fuse(a, b);
        ensure!(v > 0.0 && v < 1.0, "fuse({a},{b}) = {v}");
    }
    Ok("21x21 grid strictly increasing, 10000 random draws inside (0,1)".into())
}

struct Toy {
    _dir: tempfile::TempDir,
    cfg: RunConfig,
    test: Manifest,
    iqa_ckpt: std::path::PathBuf,
    vqa_ckpt: std::path::PathBuf,
    vqa: VqaParams<f32>,
}

fn toy_run(dir: tempfile::TempDir) -> Result<(Toy, Outcome), String> {
    let t = Instant::now();
    let e = |e: zoomvqa::Error| e.to_string();
    let cfg = RunConfig::toy();
    let base = SynthOptions { seed: 7, ..Default::default() };
    let train_m = media::synth_dataset(&SynthOptions { n_videos: 64, split: Split::Train, ..base.clone() }, dir.path())
        .map_err(e)?;
    let test_m = media::synth_dataset(
        &SynthOptions { n_videos: 16, split: Split::Test, norm: Some(train_m.norm_stats), ..base },
        dir.path(),
    )
    .map_err(e)?;
    let iqa = train::train_iqa(&train_m, &cfg).map_err(e)?.params;
    let vqa = train::train_vqa(&train_m, &cfg).map_err(e)?.params;
    let tr = eval::evaluate(&train_m, &iqa, &vqa, &cfg).map_err(e)?;
    let te = eval::evaluate(&test_m, &iqa, &vqa, &cfg).map_err(e)?;
    let elapsed = t.elapsed();

    let m = |c: &eval::MetricCell| c.metrics.ok_or_else(|| c.error.clone().unwrap_or_default());
    let (tr_f, te_f) = (m(&tr.metrics.fused)?, m(&te.metrics.fused)?);
    let (te_i, te_v) = (m(&te.metrics.iqa)?, m(&te.metrics.vqa)?);
    let (tr_i, tr_v) = (m(&tr.metrics.iqa)?, m(&tr.metrics.vqa)?);
    let detail = format!(
        "train srcc fused {:.4} (iqa {:.4}, vqa {:.4}); test srcc fused {:.4}; test main fused {:.4} iqa {:.4} vqa {:.4}; train main fused {:.4} iqa {:.4} vqa {:.4}; {:.0}s",
        tr_f.srcc, tr_i.srcc, tr_v.srcc, te_f.srcc, te_f.main_score, te_i.main_score, te_v.main_score,
        tr_f.main_score, tr_i.main_score, tr_v.main_score, elapsed.as_secs_f64()
    );
    let ok = tr_f.srcc >= 0.90
        && te_f.srcc >= 0.75
        && te_f.main_score >= te_i.main_score.max(te_v.main_score) - 0.02
        && elapsed < Duration::from_secs(15 * 60);

    let iqa_ckpt = dir.path().join("iqa.ckpt");
    let vqa_ckpt = dir.path().join("vqa.ckpt");
    checkpoint::save_iqa(&iqa_ckpt, &iqa).map_err(e)?;
    checkpoint::save_vqa(&vqa_ckpt, &vqa).map_err(e)?;
    let toy = Toy { _dir: dir, cfg, test: test_m, iqa_ckpt, vqa_ckpt, vqa };
    Ok((toy, if ok { Ok(detail) } else { Err(detail) }))
}

fn determinism(toy: &Toy) -> Outcome {
    let run = || -> Result<String, String> {
        let r =
            eval::evaluate_checkpoints(&toy.test, &toy.iqa_ckpt, &toy.vqa_ckpt, &toy.cfg).map_err(|e| e.to_string())?;
        r.records_json().map_err(|e| e.to_string())
    };
    let (a, b) = (run()?, run()?);
    ensure!(a.as_bytes() == b.as_bytes(), "record sections differ");
    Ok(format!("{} bytes identical", a.len()))
}

fn quality_map(toy: &Toy, dir: &Path) -> Outcome {
    let spec = toy.cfg.vqa.view_spec();
    let mut worst = 0f64;
    for rec in toy.test.records.iter().take(4) {
        let v = media::load_raw_video(toy.test.payload_path(rec)).map_err(|e| e.to_string())?;
        for id in 0..spec.n_views {
            let view = spec.view(&v, id, &mut vqa::view_rng(toy.cfg.seed, id)).map_err(|e| e.to_string())?;
            let (y, q) = vqa::vqa_forward(&view, &toy.vqa).map_err(|e| e.to_string())?;
            let direct = vqa::view_score(&toy.vqa, &view.data).map_err(|e| e.to_string())? as f64;
            worst = worst.max((q.mean() - y).abs()).max((q.mean() - direct).abs());
            ensure!(worst < 1e-6, "{}: map mean {} vs view score {y}", rec.id, q.mean());
            let path = dir.join("q.ppm");
            vqa::render_quality_map(&q, None, &path).map_err(|e| e.to_string())?;
            let bytes = std::fs::read(&path).unwrap();
            let (hh, ww) = (view.grid.grid_h * view.grid.frag_size, view.grid.grid_w * view.grid.frag_size);
            let header = format!("P6\n{ww} {hh}\n255\n");
            ensure!(bytes.starts_with(header.as_bytes()), "bad header");
            ensure!(bytes.len() == header.len() + hh * ww * 3, "payload size {}", bytes.len());
            let px = &bytes[header.len()..];
            let cells = q.normalized_cells();
            let fs = view.grid.frag_size;
            for y in 0..hh {
                for x in 0..ww {
                    let cell = (y / fs) * view.grid.grid_w + x / fs;
                    let c = vqa::ramp_color(cells[cell]);
                    let want = [c[0].round() as u8, c[1].round() as u8, c[2].round() as u8];
                    ensure!(px[(y * ww + x) * 3..(y * ww + x) * 3 + 3] == want, "pixel ({y},{x}) not its cell color");
                }
            }
        }
    }
    ensure!(vqa::ramp_color(0.0) == [255.0, 0.0, 0.0], "low end {:?}", vqa::ramp_color(0.0));
    ensure!(vqa::ramp_color(1.0) == [0.0, 255.0, 0.0], "high end {:?}", vqa::ramp_color(1.0));
    Ok(format!("{} maps, max mean deviation {worst:.1e}", 4 * spec.n_views))
}

fn report(n: usize, name: &str, outcome: Outcome, failed: &mut bool) {
    match outcome {
        Ok(d) => println!("PASS {n} {name}: {d}"),
        Err(d) => {
            *failed = true;
            println!("FAIL {n} {name}: {d}");
        }
    }
}

fn guard(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    })
}

fn main() -> ExitCode {
    let mut failed = false;
    report(1, "gradient suite", guard(gradient_suite), &mut failed);
    report(2, "loss oracles", guard(loss_oracles), &mut failed);
    report(3, "correlation oracles", guard(correlation_oracles), &mut failed);
    report(4, "fragment exactness", guard(fragment_exactness), &mut failed);
    report(5, "expansion equivalence", guard(expansion_equivalence), &mut failed);
    report(6, "fusion", guard(fusion), &mut failed);

    let dir = tempfile::tempdir().expect("tempdir");
    let scratch = tempfile::tempdir().expect("tempdir");
    let mut toy = None;
    // a learning miss still leaves the trained models for 8 and 9
    let out = guard(|| {
        let (t, o) = toy_run(dir)?;
        toy = Some(t);
        o
    });
    report(7, "toy learning", out, &mut failed);
    match &toy {
        Some(t) => {
            report(8, "eval determinism", guard(|| determinism(t)), &mut failed);
            report(9, "quality map", guard(|| quality_map(t, scratch.path())), &mut failed);
        }
        None => {
            report(8, "eval determinism", Err("toy run did not produce models".into()), &mut failed);
            report(9, "quality map", Err("toy run did not produce models".into()), &mut failed);
        }
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
