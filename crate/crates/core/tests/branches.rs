mod common;

use common::{max_abs_diff, naive_conv3d, random_tensor, rng};
use rand::Rng as _;
use zoomvqa::fragment::{FragmentGrid, ViewSpec};
use zoomvqa::harness::gradsuite;
use zoomvqa::iqa::{self, IqaArch, IqaHead, IqaParams, PamParams};
use zoomvqa::media::{FrameStack, RawVideo};
use zoomvqa::nn::Parameters;
use zoomvqa::rng::{stream, Purpose};
use zoomvqa::tensor::{ops, GradCheck, Tensor};
use zoomvqa::vqa::{self, PaddingType, QualityMap, VqaArch, VqaParams};
use zoomvqa::Error;

fn iqa_params(seed: u64) -> IqaParams<f32> {
    IqaParams::init(&IqaArch::default(), &mut stream(seed, Purpose::Init, &[0])).unwrap()
}

fn frame(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut r = stream(seed, Purpose::Synth, &[1]);
    Tensor::from_fn(&[3, h, w], |_| r.random_range(0.0..1.0))
}

#[test]
fn backbone_shapes_and_determinism() {
    let p = iqa_params(1);
    let x = frame(320, 320, 2);
    let pyr = iqa::backbone_forward(&x, &p).unwrap();
    let shapes: Vec<_> = pyr.iter().map(|t| t.shape().to_vec()).collect();
    assert_eq!(shapes, vec![vec![8, 160, 160], vec![16, 80, 80], vec![32, 40, 40], vec![64, 20, 20]]);
    assert_eq!(pyr, iqa::backbone_forward(&x, &iqa_params(1)).unwrap());
    assert!(matches!(iqa::backbone_forward(&frame(40, 48, 0), &p), Err(Error::Geometry(_))));
}

#[test]
fn zero_input_zero_bias_gives_zero_pyramid() {
    let mut p = iqa_params(3);
    for s in &mut p.stages {
        s.bias = Tensor::zeros(s.bias.shape());
    }
    let pyr = iqa::backbone_forward(&Tensor::zeros(&[3, 32, 32]), &p).unwrap();
    assert!(pyr.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn pyramid_alignment() {
    let mut r = rng(4);
    let pyr: Vec<Tensor<f64>> =
        [(8, 16), (16, 8), (32, 4), (64, 2)].iter().map(|&(c, s)| random_tensor(&[c, s, s], &mut r)).collect();
    let a = iqa::frame_pyramid_align(&pyr).unwrap();
    assert_eq!(a.shape(), &[120, 2, 2]);
    let mut start = 0;
    for t in &pyr {
        let c = t.shape()[0];
        let pooled = ops::adaptive_avg_pool2d(t, 2, 2).unwrap();
        assert_eq!(a.slice_channels(start, start + c).unwrap(), pooled);
        let s = t.shape()[1];
        let b = s / 2;
        for ch in 0..c {
            for i in 0..2 {
                for j in 0..2 {
                    let mut acc = 0.0;
                    for y in i * b..(i + 1) * b {
                        for x in j * b..(j + 1) * b {
                            acc += t.data()[(ch * s + y) * s + x];
                        }
                    }
                    let got = a.data()[((start + ch) * 2 + i) * 2 + j];
                    assert!((got - acc / (b * b) as f64).abs() < 1e-12);
                }
            }
        }
        start += c;
    }
    let constant: Vec<Tensor<f64>> =
        [(1, 8), (1, 4), (1, 2), (1, 1)].iter().map(|&(c, s)| Tensor::full(&[c, s, s], 3.0)).collect();
    assert!(iqa::frame_pyramid_align(&constant).unwrap().data().iter().all(|&v| v == 3.0));
}

#[test]
fn pam_hand_cases() {
    let f = Tensor::from_fn(&[1, 2, 2], |i| i as f64 - 1.5);
    let mut pam: PamParams<f64> = PamParams::zeros(1, 1);
    let (y, w, _) = iqa::patch_attention(&f, &pam).unwrap();
    assert_eq!(y, 0.0);
    assert!(w.data().iter().all(|&v| v == 0.0));
    pam.w2.bias = Tensor::full(&[1], 1.0);
    let (y, w, s) = iqa::patch_attention(&f, &pam).unwrap();
    assert_eq!(y, 2.0);
    assert!(w.data().iter().all(|&v| v == 1.0));
    assert!(s.data().iter().all(|&v| v == 0.5));
}

#[test]
fn pam_decomposes_and_respects_ranges() {
    let mut r = rng(5);
    for k in 0..5 {
        let f = random_tensor(&[12, 3, 3], &mut r);
        let pam: PamParams<f64> = PamParams {
            w1: zoomvqa::nn::Linear { weight: random_tensor(&[3, 12], &mut r), bias: random_tensor(&[3], &mut r) },
            w2: zoomvqa::nn::Linear { weight: random_tensor(&[12, 3], &mut r), bias: random_tensor(&[12], &mut r) },
            v1: zoomvqa::nn::Linear { weight: random_tensor(&[3, 12], &mut r), bias: random_tensor(&[3], &mut r) },
            v2: zoomvqa::nn::Linear { weight: random_tensor(&[12, 3], &mut r), bias: random_tensor(&[12], &mut r) },
        };
        let (y, w, s) = iqa::patch_attention(&f, &pam).unwrap();
        let direct: f64 = w.data().iter().zip(s.data()).map(|(a, b)| a * b).sum();
        assert_eq!(y, direct, "case {k}");
        assert!(w.data().iter().all(|&v| v >= 0.0));
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn iqa_gradients_match_finite_differences() {
    let gc = GradCheck::default();
    for arch in
        [IqaArch::default(), IqaArch { pam: false, ..Default::default() }, IqaArch { fpa: false, ..Default::default() }]
    {
        let r = gradsuite::check_iqa(&gc, &arch, 11, 120).unwrap();
        assert!(r.pass && r.checked >= 60, "{arch:?}: {r:?}");
    }
}

#[test]
fn pam_gradients_match_finite_differences() {
    // the PAM parameters are the trailing block before the offset
    let mut p: IqaParams<f64> = IqaParams::init(&IqaArch::default(), &mut stream(2, Purpose::Init, &[])).unwrap();
    let mut flat = p.flatten();
    let mut r = rng(6);
    flat.iter_mut().for_each(|v| *v += r.random_range(-0.05..0.05));
    p.load_flat(&flat).unwrap();
    let x: Tensor<f64> = Tensor::from_fn(&[3, 16, 16], |_| r.random_range(0.0..1.0));
    let (_, grads, _) = iqa::frame_backward(&p, &x, |_| 1.0).unwrap();
    let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
    let analytic = grads.concat();
    let mut coords = Vec::new();
    let mut off = 0;
    for ((n, t), g) in p.named().iter().zip(&grads) {
        assert_eq!(t.numel(), g.len(), "{n}");
        if n.starts_with("pam.") {
            coords.extend(off..off + t.numel());
        }
        off += t.numel();
    }
    assert!(names.iter().any(|n| n == "pam.w2.weight"));
    let stride = (coords.len() / 600).max(1);
    let coords: Vec<usize> = coords.into_iter().step_by(stride).collect();
    let f = |th: &[f64]| {
        let mut q = p.clone();
        q.load_flat(th)?;
        let mut tape = zoomvqa::tensor::Tape::new();
        let xv = tape.constant(x.clone());
        let tr = iqa::frame_forward_tape(&q, &mut tape, xv, false)?;
        Ok(zoomvqa::tensor::Probe { value: tape.value(tr.head_out).data()[0], regime: tape.relu_pattern() })
    };
    let rep = GradCheck::default().check(f, &flat, &analytic, &coords);
    assert!(rep.pass && rep.checked > 300, "{rep:?}");
}

#[test]
fn iqa_video_score_is_frame_mean() {
    let p = iqa_params(7);
    let frames: Vec<_> = (0..3).map(|i| frame(32, 32, 10 + i)).collect();
    let single = FrameStack::new(vec![frames[0].clone()], vec![0.0]).unwrap();
    let (y1, per) = iqa::iqa_video_score(&single, &p).unwrap();
    assert_eq!(y1, iqa::frame_score(&p, &frames[0]).unwrap() as f64);
    assert_eq!(per, vec![y1]);
    let dup = FrameStack::new(vec![frames[0].clone(); 8], (0..8).map(|i| i as f64).collect()).unwrap();
    assert!((iqa::iqa_video_score(&dup, &p).unwrap().0 - y1).abs() < 1e-12);
    let fwd = FrameStack::new(frames.clone(), vec![0.0, 0.5, 1.0]).unwrap();
    let rev = FrameStack::new(frames.iter().rev().cloned().collect(), vec![0.0, 0.5, 1.0]).unwrap();
    let (a, pa) = iqa::iqa_video_score(&fwd, &p).unwrap();
    let (b, _) = iqa::iqa_video_score(&rev, &p).unwrap();
    assert!((a - b).abs() < 1e-12);
    assert!((a - pa.iter().sum::<f64>() / 3.0).abs() < 1e-15);
}

#[test]
fn offset_calibration_centres_scores() {
    let mut p = iqa_params(8);
    let frames: Vec<_> = (0..4).map(|i| frame(32, 32, 20 + i)).collect();
    p.calibrate_offset(&frames, -0.25).unwrap();
    let mean: f64 = frames.iter().map(|f| iqa::frame_score(&p, f).unwrap() as f64).sum::<f64>() / 4.0;
    assert!((mean + 0.25).abs() < 1e-4);
    assert!(matches!(p.head, IqaHead::Pam(_)));
}

#[test]
fn expansion_ring_and_equivalence() {
    let ones: Tensor<f64> = Tensor::ones(&[1, 3, 2, 4, 4]);
    let e = vqa::expand_patch_head(&ones, 6, PaddingType::Zero).unwrap();
    assert_eq!(e.shape(), &[1, 3, 2, 6, 6]);
    for (i, &v) in e.data().iter().enumerate() {
        let (y, x) = ((i / 6) % 6, i % 6);
        let inside = (1..5).contains(&y) && (1..5).contains(&x);
        assert_eq!(v, if inside { 1.0 } else { 0.0 });
    }
    let mut r = rng(9);
    for size in [6, 8] {
        let k = random_tensor(&[3, 3, 2, 4, 4], &mut r);
        let big = vqa::expand_patch_head(&k, size, PaddingType::Zero).unwrap();
        let x = random_tensor(&[3, 2, size, size], &mut r);
        let pad = (size - 4) / 2;
        let got = ops::conv3d(&x, &big, None, [2, size, size], [0, 0, 0]).unwrap();
        let centre = Tensor::from_fn(&[3, 2, 4, 4], |i| {
            let (c, t, y, xx) = (i / 32, (i / 16) % 2, (i / 4) % 4, i % 4);
            x.data()[((c * 2 + t) * size + y + pad) * size + xx + pad]
        });
        let want = naive_conv3d(&centre, &k, None, [2, 4, 4], [0, 0, 0]);
        assert!(max_abs_diff(&got, &want) < 1e-12);
    }
    let k = random_tensor(&[2, 3, 2, 4, 4], &mut r);
    let rf = vqa::expand_patch_head(&k, 6, PaddingType::Reflect).unwrap();
    let rp = vqa::expand_patch_head(&k, 6, PaddingType::Replicate).unwrap();
    assert_ne!(rf, rp);
    assert!(vqa::expand_patch_head(&k, 5, PaddingType::Zero).is_err());
    assert!(vqa::expand_patch_head(&k, 12, PaddingType::Reflect).is_err());
}

fn small_vqa(seed: u64) -> VqaParams<f32> {
    let arch = VqaArch { embed_dim: 4, stage_channels: vec![4, 4], ..Default::default() };
    VqaParams::init(&arch, &mut stream(seed, Purpose::Init, &[1])).unwrap()
}

#[test]
fn init_kernel_has_zero_ring() {
    let p = small_vqa(1);
    let k = &p.embed.kernel;
    assert_eq!(k.shape(), &[4, 3, 2, 6, 6]);
    for (i, &v) in k.data().iter().enumerate() {
        let (y, x) = ((i / 6) % 6, i % 6);
        if y == 0 || y == 5 || x == 0 || x == 5 {
            assert_eq!(v, 0.0);
        }
    }
}

#[test]
fn full_resolution_token_grid() {
    let p = small_vqa(2);
    let x = Tensor::zeros(&[3, 2, 336, 336]);
    let (mut tape, tr) = vqa::view_tape(&p, &x).unwrap();
    assert_eq!(tape.value(tr.tokens).shape(), &[4, 1, 56, 56]);
    assert_eq!(tape.value(tr.scores).shape(), &[1, 1, 56, 56]);
    tr.backward(&mut tape, 1.0).unwrap();
    assert!(matches!(vqa::view_score(&p, &Tensor::zeros(&[3, 3, 12, 12])), Err(Error::Geometry(_))));
}

fn grid(gh: usize, frag: usize) -> FragmentGrid {
    FragmentGrid {
        grid_h: gh,
        grid_w: gh,
        frag_size: frag,
        offsets: vec![(0, 0); gh * gh],
        source_dims: (gh * frag, gh * frag),
    }
}

#[test]
fn constant_view_bias_path() {
    let arch = VqaArch { embed_dim: 2, stage_channels: vec![2, 2], ..Default::default() };
    let mut p: VqaParams<f32> = VqaParams::zeros(&arch).unwrap();
    p.head.bias = Tensor::full(&[1], 0.7);
    let v = RawVideo::new(12, 12, 8, 1, 2, vec![90; 12 * 12 * 6]).unwrap();
    let spec = ViewSpec { grid: 2, frag_size: 6, clip_len: 2, stride: 1, n_views: 1 };
    let view = spec.view(&v, 0, &mut vqa::view_rng(0, 0)).unwrap();
    let (y, q) = vqa::vqa_forward(&view, &p).unwrap();
    assert!((y - 0.7).abs() < 1e-6);
    assert!(q.scores.data().iter().all(|&s| s == 0.7f32));
}

#[test]
fn vqa_gradients_match_finite_differences() {
    let arch = VqaArch { embed_dim: 3, stage_channels: vec![3, 2], ..Default::default() };
    let r = gradsuite::check_vqa(&GradCheck::default(), &arch, 12, 200).unwrap();
    assert!(r.pass && r.checked >= 100, "{r:?}");
    let plain = VqaArch { embed_dim: 3, stage_channels: vec![2, 2], base_patch: None, ..Default::default() };
    let r = gradsuite::check_vqa(&GradCheck::default(), &plain, 13, 100).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn video_score_views() {
    let p = small_vqa(3);
    let mut r = stream(1, Purpose::Synth, &[9]);
    let v = RawVideo::new(30, 30, 8, 1, 8, (0..30 * 30 * 24).map(|_| r.random::<u8>()).collect()).unwrap();
    let one = ViewSpec { grid: 2, frag_size: 12, clip_len: 4, stride: 1, n_views: 1 };
    let (y, per) = vqa::vqa_video_score(&v, &p, &one, 5).unwrap();
    let view = one.view(&v, 0, &mut vqa::view_rng(5, 0)).unwrap();
    let (yv, q) = vqa::vqa_forward(&view, &p).unwrap();
    assert_eq!(per.len(), 1);
    assert!((y - yv).abs() < 1e-6);
    assert!((q.mean() - yv).abs() < 1e-6);
    let four = ViewSpec { n_views: 4, ..one };
    let (y4, per4) = vqa::vqa_video_score(&v, &p, &four, 5).unwrap();
    assert!((y4 - per4.iter().sum::<f64>() / 4.0).abs() < 1e-15);
    let mut rev = per4.clone();
    rev.reverse();
    assert!((rev.iter().sum::<f64>() / 4.0 - y4).abs() < 1e-12);
    assert_eq!(vqa::vqa_video_score(&v, &p, &four, 5).unwrap(), (y4, per4));
}

#[test]
fn quality_map_rendering() {
    let uniform = QualityMap::new(Tensor::full(&[1, 2, 2], 0.3), grid(2, 3)).unwrap();
    assert_eq!(uniform.normalized_cells(), vec![0.5; 4]);
    let (h, w, rgb) = vqa::render_quality_map_rgb(&uniform, None).unwrap();
    assert_eq!((h, w), (6, 6));
    assert!(rgb.chunks(3).all(|p| p == [128, 128, 0]));

    let scores = Tensor::new(&[1, 1, 2], vec![0.0f32, 1.0]).unwrap();
    let g = FragmentGrid { grid_h: 1, grid_w: 2, frag_size: 4, offsets: vec![(0, 0), (0, 4)], source_dims: (4, 8) };
    let q = QualityMap::new(scores, g).unwrap();
    let (h, w, rgb) = vqa::render_quality_map_rgb(&q, None).unwrap();
    assert_eq!((h, w), (4, 8));
    for y in 0..4 {
        for x in 0..8 {
            let px = &rgb[(y * 8 + x) * 3..(y * 8 + x) * 3 + 3];
            assert_eq!(px, if x < 4 { [255, 0, 0] } else { [0, 255, 0] });
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.ppm");
    vqa::render_quality_map(&q, Some(&Tensor::zeros(&[3, 10, 20])), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let header = b"P6\n8 4\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 4 * 8 * 3);
    assert_eq!(&bytes[header.len()..header.len() + 3], &[128, 0, 0]);
}

#[test]
fn architectures_validate() {
    assert!(IqaParams::<f32>::init(&IqaArch { channels: vec![8, 16], ..Default::default() }, &mut rng(0)).is_err());
    let bad = VqaArch { base_patch: Some(3), ..Default::default() };
    assert!(matches!(VqaParams::<f32>::init(&bad, &mut rng(0)), Err(Error::Parameter(_))));
    let p = small_vqa(0);
    assert_eq!(p.cast::<f64>().cast::<f32>(), p);
    assert!(p.named().iter().map(|(n, _)| n.as_str()).eq([
        "embed.kernel",
        "embed.bias",
        "stage1.kernel",
        "stage1.bias",
        "stage2.kernel",
        "stage2.bias",
        "head.kernel",
        "head.bias"
    ]));
}
