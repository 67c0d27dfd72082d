//! Clip-level branch: non-overlapping spatio-temporal tokenization, two
//! convolutional stages and a per-token score head whose mean is the view score.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fragment::{ClipView, FragmentGrid, ViewSpec};
use crate::media::RawVideo;
use crate::nn::{collect_grads, kaiming_uniform, Conv, Parameters};
use crate::rng::{self, Purpose, Rng};
use crate::tensor::ops::pool_bounds;
use crate::tensor::{Element, Tape, Tensor, Var};

/// Temporal extent (and stride) of the tokenization kernel.
pub const TEMPORAL_PATCH: usize = 2;

/// How the outer ring of an enlarged tokenization kernel is filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaddingType {
    Zero,
    Reflect,
    Replicate,
}

impl PaddingType {
    pub fn as_str(self) -> &'static str {
        match self {
            PaddingType::Zero => "zero",
            PaddingType::Reflect => "reflect",
            PaddingType::Replicate => "replicate",
        }
    }
}

impl std::str::FromStr for PaddingType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(PaddingType::Zero),
            "reflect" => Ok(PaddingType::Reflect),
            "replicate" => Ok(PaddingType::Replicate),
            _ => Err(Error::Parameter(format!("unknown padding type {s:?}"))),
        }
    }
}

/// Source index for position `j` of an axis padded by `pad` on each side,
/// or `None` where zero padding applies.
fn padded_source(j: usize, pad: usize, n: usize, padding: PaddingType) -> Option<usize> {
    let src = j as isize - pad as isize;
    let n = n as isize;
    if (0..n).contains(&src) {
        return Some(src as usize);
    }
    match padding {
        PaddingType::Zero => None,
        PaddingType::Replicate => Some(src.clamp(0, n - 1) as usize),
        PaddingType::Reflect => Some(if src < 0 { -src } else { 2 * (n - 1) - src } as usize),
    }
}

/// Enlarges the spatial taps of a `[C,3,kt,k,k]` kernel to `new_size`, keeping
/// the original taps centered and filling the ring according to `padding`.
pub fn expand_patch_head<T: Element>(kernel: &Tensor<T>, new_size: usize, padding: PaddingType) -> Result<Tensor<T>> {
    let s = kernel.shape();
    if s.len() != 5 || s[3] != s[4] {
        return Err(Error::dim("expand_patch_head", format!("expected [C,Cin,kt,k,k], got {s:?}")));
    }
    let k = s[3];
    if new_size <= k || !(new_size - k).is_multiple_of(2) {
        return Err(Error::Parameter(format!("cannot center a {k}x{k} kernel in {new_size}x{new_size}")));
    }
    let pad = (new_size - k) / 2;
    if padding == PaddingType::Reflect && pad >= k {
        return Err(Error::Parameter(format!("reflect padding of {pad} needs a kernel wider than {k}")));
    }
    let outer = s[0] * s[1] * s[2];
    let src = kernel.data();
    let mut data = Vec::with_capacity(outer * new_size * new_size);
    for o in 0..outer {
        let plane = &src[o * k * k..(o + 1) * k * k];
        for y in 0..new_size {
            for x in 0..new_size {
                data.push(match (padded_source(y, pad, k, padding), padded_source(x, pad, k, padding)) {
                    (Some(sy), Some(sx)) => plane[sy * k + sx],
                    _ => T::zero(),
                });
            }
        }
    }
    Tensor::new(&[s[0], s[1], s[2], new_size, new_size], data)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaArch {
    pub embed_dim: usize,
    /// Output channels of the two `1x3x3` stages.
    pub stage_channels: Vec<usize>,
    /// Spatial tokenization size `k`.
    pub patch: usize,
    /// Kernel size initialized before expansion to `patch`; `None` initializes at `patch` directly.
    pub base_patch: Option<usize>,
    pub padding: PaddingType,
}

impl Default for VqaArch {
    fn default() -> Self {
        VqaArch {
            embed_dim: 24,
            stage_channels: vec![24, 24],
            patch: 6,
            base_patch: Some(4),
            padding: PaddingType::Zero,
        }
    }
}

impl VqaArch {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.patch == 0 || self.stage_channels.len() != 2 || self.stage_channels.contains(&0)
        {
            return Err(Error::Parameter(format!("invalid clip branch architecture {self:?}")));
        }
        if let Some(b) = self.base_patch {
            if b > self.patch || !(self.patch - b).is_multiple_of(2) {
                return Err(Error::Parameter(format!("cannot expand patch {b} to {}", self.patch)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VqaParams<T: Element = f32> {
    pub arch: VqaArch,
    pub embed: Conv<T>,
    pub stages: Vec<Conv<T>>,
    pub head: Conv<T>,
}

impl<T: Element> VqaParams<T> {
    pub fn init(arch: &VqaArch, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let (e, k) = (arch.embed_dim, arch.patch);
        let embed = match arch.base_patch {
            Some(b) if b < k => {
                let small: Tensor<T> = kaiming_uniform(&[e, 3, TEMPORAL_PATCH, b, b], 3 * TEMPORAL_PATCH * b * b, rng);
                Conv { kernel: expand_patch_head(&small, k, arch.padding)?, bias: Tensor::zeros(&[e]) }
            }
            _ => Conv::init(&[e, 3, TEMPORAL_PATCH, k, k], rng),
        };
        let mut c_in = e;
        let mut stages = Vec::new();
        for &c in &arch.stage_channels {
            stages.push(Conv::init(&[c, c_in, 1, 3, 3], rng));
            c_in = c;
        }
        let head = Conv::init(&[1, c_in, 1, 1, 1], rng);
        Ok(VqaParams { arch: arch.clone(), embed, stages, head })
    }

    pub fn zeros(arch: &VqaArch) -> Result<Self> {
        arch.validate()?;
        let (e, k) = (arch.embed_dim, arch.patch);
        let mut c_in = e;
        let mut stages = Vec::new();
        for &c in &arch.stage_channels {
            stages.push(Conv::zeros(&[c, c_in, 1, 3, 3]));
            c_in = c;
        }
        Ok(VqaParams {
            arch: arch.clone(),
            embed: Conv::zeros(&[e, 3, TEMPORAL_PATCH, k, k]),
            stages,
            head: Conv::zeros(&[1, c_in, 1, 1, 1]),
        })
    }

    pub fn cast<U: Element>(&self) -> VqaParams<U> {
        let conv = |c: &Conv<T>| Conv { kernel: c.kernel.cast(), bias: c.bias.cast() };
        VqaParams {
            arch: self.arch.clone(),
            embed: conv(&self.embed),
            stages: self.stages.iter().map(conv).collect(),
            head: conv(&self.head),
        }
    }
}

impl<T: Element> Parameters<T> for VqaParams<T> {
    fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = Vec::new();
        self.embed.push_named("embed", &mut v);
        for (i, s) in self.stages.iter().enumerate() {
            s.push_named(&format!("stage{}", i + 1), &mut v);
        }
        self.head.push_named("head", &mut v);
        v
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v = Vec::new();
        self.embed.push_named_mut("embed", &mut v);
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.push_named_mut(&format!("stage{}", i + 1), &mut v);
        }
        self.head.push_named_mut("head", &mut v);
        v
    }
}

/// Tape handles of one view forward.
#[derive(Clone, Debug)]
pub struct VqaTrace {
    /// Token grid after tokenization, `[E, T', H', W']`.
    pub tokens: Var,
    /// Per-token scores, `[1, T', H', W']`.
    pub scores: Var,
    /// Mean of `scores`.
    pub y: Var,
    params: Vec<Var>,
}

/// Records one view forward on `tape`; `x` is `[3, T, H, W]`.
pub fn view_forward_tape<T: Element>(
    params: &VqaParams<T>,
    tape: &mut Tape<T>,
    x: Var,
    trainable: bool,
) -> Result<VqaTrace> {
    let s = tape.value(x).shape().to_vec();
    let k = params.arch.patch;
    if s.len() != 4 || s[0] != 3 {
        return Err(Error::dim("vqa_forward", format!("expected [3,T,H,W], got {s:?}")));
    }
    if !s[1].is_multiple_of(TEMPORAL_PATCH)
        || !s[2].is_multiple_of(k)
        || !s[3].is_multiple_of(k)
        || s[1] == 0
        || s[2] == 0
        || s[3] == 0
    {
        return Err(Error::Geometry(format!(
            "view {}x{}x{} is not divisible into {TEMPORAL_PATCH}x{k}x{k} tokens",
            s[1], s[2], s[3]
        )));
    }
    let mut vars = Vec::new();
    let mut bind = |c: &Conv<T>, tape: &mut Tape<T>| {
        let cv = c.bind(tape, trainable);
        vars.extend([cv.kernel, cv.bias]);
        cv
    };
    let ev = bind(&params.embed, tape);
    let tokens = tape.conv3d(x, ev.kernel, Some(ev.bias), [TEMPORAL_PATCH, k, k], [0, 0, 0])?;
    let mut h = tokens;
    for stage in &params.stages {
        let sv = bind(stage, tape);
        let z = tape.conv3d(h, sv.kernel, Some(sv.bias), [1, 1, 1], [0, 1, 1])?;
        h = tape.relu(z);
    }
    let hv = bind(&params.head, tape);
    let scores = tape.conv3d(h, hv.kernel, Some(hv.bias), [1, 1, 1], [0, 0, 0])?;
    let y = tape.mean_all(scores)?;
    Ok(VqaTrace { tokens, scores, y, params: vars })
}

/// View score for a `[3,T,H,W]` input.
pub fn view_score<T: Element>(params: &VqaParams<T>, data: &Tensor<T>) -> Result<T> {
    let mut tape = Tape::new();
    let x = tape.constant(data.clone());
    let tr = view_forward_tape(params, &mut tape, x, false)?;
    Ok(tape.value(tr.y).data()[0])
}

/// Records a trainable view forward; finish with [`VqaTrace::backward`].
pub fn view_tape<T: Element>(params: &VqaParams<T>, data: &Tensor<T>) -> Result<(Tape<T>, VqaTrace)> {
    let mut tape = Tape::new();
    let x = tape.constant(data.clone());
    let tr = view_forward_tape(params, &mut tape, x, true)?;
    Ok((tape, tr))
}

impl VqaTrace {
    pub fn score<T: Element>(&self, tape: &Tape<T>) -> T {
        tape.value(self.y).data()[0]
    }

    /// Gradient of `seed * score` in [`Parameters::named`] order.
    pub fn backward<T: Element>(&self, tape: &mut Tape<T>, seed: T) -> Result<Vec<Vec<T>>> {
        tape.backward_from(self.y, vec![seed])?;
        Ok(collect_grads(tape, &self.params))
    }
}

/// View score, the gradient of `seed(score) * score` in [`Parameters::named`]
/// order, and the relu sign pattern of the pass.
pub fn view_backward<T: Element>(
    params: &VqaParams<T>,
    data: &Tensor<T>,
    seed: impl FnOnce(T) -> T,
) -> Result<(T, Vec<Vec<T>>, Vec<bool>)> {
    let (mut tape, tr) = view_tape(params, data)?;
    let score = tr.score(&tape);
    let pattern = tape.relu_pattern();
    let grads = tr.backward(&mut tape, seed(score))?;
    Ok((score, grads, pattern))
}

/// Per-token scores of one view, tied to the grid the view was sampled with.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityMap {
    /// `[T', H', W']`.
    pub scores: Tensor<f32>,
    pub grid: FragmentGrid,
    /// `(min, max)` of the per-fragment cell scores.
    pub normalization: (f64, f64),
}

impl QualityMap {
    pub fn new(scores: Tensor<f32>, grid: FragmentGrid) -> Result<Self> {
        if scores.ndim() != 3 || !scores.is_finite() {
            return Err(Error::dim("quality_map", format!("expected finite [T',H',W'], got {:?}", scores.shape())));
        }
        let mut q = QualityMap { scores, grid, normalization: (0.0, 0.0) };
        let cells = q.cell_scores();
        let lo = cells.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = cells.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        q.normalization = (lo, hi);
        Ok(q)
    }

    pub fn mean(&self) -> f64 {
        self.scores.mean()
    }

    /// Mean score per fragment cell over time and the tokens inside the
    /// fragment, row-major over the grid.
    pub fn cell_scores(&self) -> Vec<f64> {
        let s = self.scores.shape();
        let (t, h, w) = (s[0], s[1], s[2]);
        let (gh, gw) = (self.grid.grid_h, self.grid.grid_w);
        let d = self.scores.data();
        let mut out = Vec::with_capacity(gh * gw);
        for r in 0..gh {
            let (y0, y1) = pool_bounds(r, h, gh);
            for c in 0..gw {
                let (x0, x1) = pool_bounds(c, w, gw);
                let mut acc = 0.0;
                for f in 0..t {
                    for y in y0..y1 {
                        for x in x0..x1 {
                            acc += d[(f * h + y) * w + x] as f64;
                        }
                    }
                }
                out.push(acc / (t * (y1 - y0) * (x1 - x0)) as f64);
            }
        }
        out
    }

    /// Cell scores mapped to `[0, 1]`; a constant map sits at 0.5.
    pub fn normalized_cells(&self) -> Vec<f64> {
        let (lo, hi) = self.normalization;
        self.cell_scores().into_iter().map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 }).collect()
    }
}

/// Forward of one clip view: the view score and its quality map.
pub fn vqa_forward(view: &ClipView, params: &VqaParams<f32>) -> Result<(f64, QualityMap)> {
    let mut tape = Tape::new();
    let x = tape.constant(view.data.clone());
    let tr = view_forward_tape(params, &mut tape, x, false)?;
    let s = tape.value(tr.scores).clone();
    let shape = s.shape()[1..].to_vec();
    let q = QualityMap::new(s.reshape(&shape)?, view.grid.clone())?;
    Ok((tape.value(tr.y).data()[0] as f64, q))
}

/// Grid stream of view `view_id`; a view is fully determined by `(seed, view_id)`.
pub fn view_rng(seed: u64, view_id: usize) -> Rng {
    rng::stream(seed, Purpose::Grid, &[view_id as u64])
}

/// Mean view score over `spec.n_views` views, plus the per-view scores.
pub fn vqa_video_score(v: &RawVideo, params: &VqaParams<f32>, spec: &ViewSpec, seed: u64) -> Result<(f64, Vec<f64>)> {
    if spec.n_views == 0 {
        return Err(Error::Parameter("need at least one view".into()));
    }
    let per_view = (0..spec.n_views)
        .into_par_iter()
        .map(|id| {
            let view = spec.view(v, id, &mut view_rng(seed, id))?;
            view_score(params, &view.data).map(f64::from)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((per_view.iter().sum::<f64>() / per_view.len() as f64, per_view))
}

/// Red at 0, green at 1.
pub fn ramp_color(s: f64) -> [f64; 3] {
    let s = s.clamp(0.0, 1.0);
    [255.0 * (1.0 - s), 255.0 * s, 0.0]
}

/// RGB24 heatmap of `grid_h*frag x grid_w*frag` pixels. With a `[3,H,W]`
/// frame in `[0,1]`, the frame is resized nearest-neighbor to the same size
/// and blended half and half under the ramp colors.
pub fn render_quality_map_rgb(qmap: &QualityMap, frame: Option<&Tensor<f32>>) -> Result<(usize, usize, Vec<u8>)> {
    let g = &qmap.grid;
    let f = g.frag_size;
    let (oh, ow) = g.extent();
    if let Some(fr) = frame {
        if fr.ndim() != 3 || fr.shape()[0] != 3 {
            return Err(Error::dim("render_quality_map", format!("frame must be [3,H,W], got {:?}", fr.shape())));
        }
    }
    let cells = qmap.normalized_cells();
    let mut out = Vec::with_capacity(oh * ow * 3);
    for y in 0..oh {
        for x in 0..ow {
            let color = ramp_color(cells[(y / f) * g.grid_w + x / f]);
            for (c, &cv) in color.iter().enumerate() {
                let v = match frame {
                    Some(fr) => {
                        let (h, w) = (fr.shape()[1], fr.shape()[2]);
                        let sy = (y * h / oh).min(h - 1);
                        let sx = (x * w / ow).min(w - 1);
                        0.5 * cv + 0.5 * 255.0 * fr.data()[(c * h + sy) * w + sx] as f64
                    }
                    None => cv,
                };
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok((oh, ow, out))
}

/// Writes the heatmap of [`render_quality_map_rgb`] as a binary PPM.
pub fn render_quality_map(qmap: &QualityMap, frame: Option<&Tensor<f32>>, out_path: impl AsRef<Path>) -> Result<()> {
    let path = out_path.as_ref();
    let (h, w, rgb) = render_quality_map_rgb(qmap, frame)?;
    let mut buf = format!("P6\n{w} {h}\n255\n").into_bytes();
    buf.extend_from_slice(&rgb);
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}
