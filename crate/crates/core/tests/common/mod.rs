#![allow(dead_code)]

use rand::Rng as _;
use zoomvqa::rng::{stream, Purpose, Rng};
use zoomvqa::tensor::{GradCheck, GradReport, Probe, Tape, Tensor, Var};
use zoomvqa::Result;

pub fn rng(seed: u64) -> Rng {
    stream(seed, Purpose::Gradcheck, &[9999])
}

pub fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Direct 3-D cross-correlation: `[C,T,H,W]` input, `[Co,C,kt,kh,kw]` kernel.
pub fn naive_conv3d(
    x: &Tensor<f64>,
    k: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    stride: [usize; 3],
    pad: [usize; 3],
) -> Tensor<f64> {
    let (xs, ks) = (x.shape(), k.shape());
    let (c, t, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (co, kt, kh, kw) = (ks[0], ks[2], ks[3], ks[4]);
    let ot = (t + 2 * pad[0] - kt) / stride[0] + 1;
    let oh = (h + 2 * pad[1] - kh) / stride[1] + 1;
    let ow = (w + 2 * pad[2] - kw) / stride[2] + 1;
    let mut out = vec![0.0; co * ot * oh * ow];
    let xd = x.data();
    let kd = k.data();
    for o in 0..co {
        for a in 0..ot {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for ci in 0..c {
                        for dt in 0..kt {
                            for dy in 0..kh {
                                for dx in 0..kw {
                                    let st = (a * stride[0] + dt) as isize - pad[0] as isize;
                                    let sy = (i * stride[1] + dy) as isize - pad[1] as isize;
                                    let sx = (j * stride[2] + dx) as isize - pad[2] as isize;
                                    if st < 0
                                        || sy < 0
                                        || sx < 0
                                        || st >= t as isize
                                        || sy >= h as isize
                                        || sx >= w as isize
                                    {
                                        continue;
                                    }
                                    let xv = xd[((ci * t + st as usize) * h + sy as usize) * w + sx as usize];
                                    let kv = kd[(((o * c + ci) * kt + dt) * kh + dy) * kw + dx];
                                    acc += xv * kv;
                                }
                            }
                        }
                    }
                    out[((o * ot + a) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    Tensor::new(&[co, ot, oh, ow], out).unwrap()
}

pub fn max_abs_diff<T: zoomvqa::tensor::Element>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).fold(0.0, f64::max)
}

/// Gradient check of `sum(r * op(inputs))` with respect to every input
/// scalar, where `r` is a fixed random weighting of the output.
pub fn check_op<F>(shapes: &[Vec<usize>], seed: u64, build: F) -> GradReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut r = rng(seed);
    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random_tensor(s, &mut r)).collect();
    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.data().to_vec()).collect();
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.value(out).shape().to_vec()
    };
    let weights = random_tensor(&out_shape, &mut r);

    let unflatten = |theta: &[f64]| -> Vec<Tensor<f64>> {
        let mut off = 0;
        shapes
            .iter()
            .map(|s| {
                let n: usize = s.iter().product();
                let t = Tensor::new(s, theta[off..off + n].to_vec()).unwrap();
                off += n;
                t
            })
            .collect()
    };
    let forward = |theta: &[f64], grads: bool| -> Result<(f64, Vec<bool>, Vec<f64>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = unflatten(theta).into_iter().map(|t| tape.leaf(t)).collect();
        let out = build(&mut tape, &vars)?;
        let wv = tape.constant(weights.clone());
        let prod = tape.hadamard(out, wv)?;
        let loss = tape.sum_all(prod)?;
        let value = tape.value(loss).data()[0];
        let regime = tape.relu_pattern();
        let mut g = Vec::new();
        if grads {
            tape.backward(loss)?;
            for (v, s) in vars.iter().zip(shapes) {
                match tape.grad(*v) {
                    Some(gr) => g.extend_from_slice(gr),
                    None => g.extend(std::iter::repeat_n(0.0, s.iter().product())),
                }
            }
        }
        Ok((value, regime, g))
    };
    let (_, _, analytic) = forward(&flat, true).unwrap();
    let coords: Vec<usize> = (0..flat.len()).collect();
    GradCheck::default().check(
        |theta| forward(theta, false).map(|(v, regime, _)| Probe { value: v, regime }),
        &flat,
        &analytic,
        &coords,
    )
}

/// Pearson from raw sums, `(n Sxy - Sx Sy) / sqrt((n Sxx - Sx^2)(n Syy - Sy^2))`.
pub fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}

/// Rank by counting: `1 + #{less} + (#{equal} - 1) / 2`.
pub fn rank_oracle(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let less = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn srcc_oracle(x: &[f64], y: &[f64]) -> f64 {
    pearson_oracle(&rank_oracle(x), &rank_oracle(y))
}

/// Rank hinge by explicit enumeration of all ordered pairs.
pub fn rank_loss_oracle(pred: &[f64], label: &[f64]) -> f64 {
    let m = pred.len();
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            let e = if label[i] >= label[j] { 1.0 } else { -1.0 };
            total += f64::max(0.0, (label[i] - label[j]).abs() - e * (pred[i] - pred[j]));
        }
    }
    total / (m * m) as f64
}
