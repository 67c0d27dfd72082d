//! Frame-level branch: a four-stage convolutional backbone, pyramid alignment
//! of the stage outputs, and the patch attention head.
//!
//! Forward passes are written once against a [`Tape`] and are generic over the
//! element type; inference binds parameters as constants.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::FrameStack;
use crate::nn::{collect_grads, Conv, ConvVars, Linear, LinearVars, Parameters};
use crate::rng::Rng;
use crate::tensor::{Element, Tape, Tensor, Var};

/// Weight-branch output bias at initialization (the matching weights start at zero).
const PAM_WEIGHT_BIAS_INIT: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IqaArch {
    /// Output channels of the four backbone stages.
    pub channels: Vec<usize>,
    /// Patch attention head; when off the head is global mean pool plus one FC.
    pub pam: bool,
    /// Pyramid alignment; when off only the last stage feeds the head.
    pub fpa: bool,
}

impl Default for IqaArch {
    fn default() -> Self {
        IqaArch { channels: vec![8, 16, 32, 64], pam: true, fpa: true }
    }
}

impl IqaArch {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != 4 || self.channels.contains(&0) {
            return Err(Error::Parameter(format!("backbone needs 4 non-empty stages, got {:?}", self.channels)));
        }
        Ok(())
    }

    /// Channel width entering the head.
    pub fn head_channels(&self) -> usize {
        if self.fpa {
            self.channels.iter().sum()
        } else {
            self.channels[3]
        }
    }

    /// Hidden width of each PAM branch.
    pub fn pam_hidden(&self) -> usize {
        (self.head_channels() / 4).max(1)
    }
}

/// Two per-position FC pairs: `w = relu(W2 relu(W1 f))`, `s = sigmoid(V2 relu(V1 f))`.
#[derive(Clone, Debug, PartialEq)]
pub struct PamParams<T: Element = f32> {
    pub w1: Linear<T>,
    pub w2: Linear<T>,
    pub v1: Linear<T>,
    pub v2: Linear<T>,
}

impl<T: Element> PamParams<T> {
    pub fn zeros(channels: usize, hidden: usize) -> Self {
        PamParams {
            w1: Linear::zeros(channels, hidden),
            w2: Linear::zeros(hidden, channels),
            v1: Linear::zeros(channels, hidden),
            v2: Linear::zeros(hidden, channels),
        }
    }

    /// Kaiming init, except the last weight-branch layer which starts at zero
    /// weights and a small positive bias so every patch weight begins active.
    pub fn init(channels: usize, hidden: usize, rng: &mut Rng) -> Self {
        let w1 = Linear::init(channels, hidden, rng);
        let mut w2 = Linear::zeros(hidden, channels);
        w2.bias = Tensor::full(&[channels], T::of_f64(PAM_WEIGHT_BIAS_INIT));
        let v1 = Linear::init(channels, hidden, rng);
        let v2 = Linear::init(hidden, channels, rng);
        PamParams { w1, w2, v1, v2 }
    }

    fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> [LinearVars; 4] {
        [
            self.w1.bind(tape, trainable),
            self.w2.bind(tape, trainable),
            self.v1.bind(tape, trainable),
            self.v2.bind(tape, trainable),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum IqaHead<T: Element = f32> {
    Pam(PamParams<T>),
    MeanFc(Linear<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct IqaParams<T: Element = f32> {
    pub arch: IqaArch,
    pub stages: Vec<Conv<T>>,
    pub head: IqaHead<T>,
    /// Scalar added to every frame score. The attention sum is nonnegative,
    /// so this lets the branch reach below-average normalized labels.
    pub offset: Tensor<T>,
}

impl<T: Element> IqaParams<T> {
    pub fn init(arch: &IqaArch, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let mut c_in = 3;
        let mut stages = Vec::new();
        for &c in &arch.channels {
            stages.push(Conv::init(&[c, c_in, 3, 3], rng));
            c_in = c;
        }
        let head = if arch.pam {
            IqaHead::Pam(PamParams::init(arch.head_channels(), arch.pam_hidden(), rng))
        } else {
            IqaHead::MeanFc(Linear::init(arch.head_channels(), 1, rng))
        };
        Ok(IqaParams { arch: arch.clone(), stages, head, offset: Tensor::zeros(&[1]) })
    }

    pub fn zeros(arch: &IqaArch) -> Result<Self> {
        arch.validate()?;
        let mut c_in = 3;
        let mut stages = Vec::new();
        for &c in &arch.channels {
            stages.push(Conv::zeros(&[c, c_in, 3, 3]));
            c_in = c;
        }
        let head = if arch.pam {
            IqaHead::Pam(PamParams::zeros(arch.head_channels(), arch.pam_hidden()))
        } else {
            IqaHead::MeanFc(Linear::zeros(arch.head_channels(), 1))
        };
        Ok(IqaParams { arch: arch.clone(), stages, head, offset: Tensor::zeros(&[1]) })
    }

    pub fn cast<U: Element>(&self) -> IqaParams<U> {
        let lin = |l: &Linear<T>| Linear { weight: l.weight.cast(), bias: l.bias.cast() };
        IqaParams {
            arch: self.arch.clone(),
            stages: self.stages.iter().map(|c| Conv { kernel: c.kernel.cast(), bias: c.bias.cast() }).collect(),
            head: match &self.head {
                IqaHead::Pam(p) => {
                    IqaHead::Pam(PamParams { w1: lin(&p.w1), w2: lin(&p.w2), v1: lin(&p.v1), v2: lin(&p.v2) })
                }
                IqaHead::MeanFc(l) => IqaHead::MeanFc(lin(l)),
            },
            offset: self.offset.cast(),
        }
    }

    /// Sets the offset so the mean score over `frames` equals `target`.
    pub fn calibrate_offset(&mut self, frames: &[Tensor<T>], target: f64) -> Result<()> {
        if frames.is_empty() {
            return Err(Error::Contract("no frames to calibrate on".into()));
        }
        self.offset = Tensor::zeros(&[1]);
        let scores = frames.par_iter().map(|f| frame_score(self, f).map(T::as_f64)).collect::<Result<Vec<_>>>()?;
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        self.offset = Tensor::full(&[1], T::of_f64(target - mean));
        Ok(())
    }

    fn offset_value(&self) -> T {
        self.offset.data()[0]
    }
}

impl<T: Element> Parameters<T> for IqaParams<T> {
    fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            s.push_named(&format!("stage{}", i + 1), &mut v);
        }
        match &self.head {
            IqaHead::Pam(p) => {
                p.w1.push_named("pam.w1", &mut v);
                p.w2.push_named("pam.w2", &mut v);
                p.v1.push_named("pam.v1", &mut v);
                p.v2.push_named("pam.v2", &mut v);
            }
            IqaHead::MeanFc(l) => l.push_named("head.fc", &mut v),
        }
        v.push(("offset".into(), &self.offset));
        v
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v = Vec::new();
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.push_named_mut(&format!("stage{}", i + 1), &mut v);
        }
        match &mut self.head {
            IqaHead::Pam(p) => {
                p.w1.push_named_mut("pam.w1", &mut v);
                p.w2.push_named_mut("pam.w2", &mut v);
                p.v1.push_named_mut("pam.v1", &mut v);
                p.v2.push_named_mut("pam.v2", &mut v);
            }
            IqaHead::MeanFc(l) => l.push_named_mut("head.fc", &mut v),
        }
        v.push(("offset".into(), &mut self.offset));
        v
    }
}

/// Tape handles of one frame forward.
#[derive(Clone, Debug)]
pub struct IqaTrace {
    pub pyramid: Vec<Var>,
    pub aligned: Var,
    /// PAM weight and score maps (absent for the mean-pool head).
    pub maps: Option<(Var, Var)>,
    /// Head output before the offset.
    pub head_out: Var,
    params: Vec<Var>,
}

fn lin_vars(l: LinearVars) -> [Var; 2] {
    [l.weight, l.bias]
}

fn conv_vars(c: ConvVars) -> [Var; 2] {
    [c.kernel, c.bias]
}

fn backbone_on_tape<T: Element>(
    params: &IqaParams<T>,
    tape: &mut Tape<T>,
    x: Var,
    trainable: bool,
    vars: &mut Vec<Var>,
) -> Result<Vec<Var>> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::dim("backbone_forward", format!("expected [3,H,W], got {s:?}")));
    }
    if !s[1].is_multiple_of(16) || !s[2].is_multiple_of(16) || s[1] == 0 || s[2] == 0 {
        return Err(Error::Geometry(format!("backbone input {}x{} must be a positive multiple of 16", s[1], s[2])));
    }
    let mut h = x;
    let mut pyramid = Vec::with_capacity(4);
    for stage in &params.stages {
        let cv = stage.bind(tape, trainable);
        vars.extend(conv_vars(cv));
        let z = tape.conv2d(h, cv.kernel, Some(cv.bias), 2, 1)?;
        h = tape.relu(z);
        pyramid.push(h);
    }
    Ok(pyramid)
}

fn align_on_tape<T: Element>(tape: &mut Tape<T>, pyramid: &[Var]) -> Result<Var> {
    let last = tape.value(pyramid[3]).shape().to_vec();
    let (h4, w4) = (last[1], last[2]);
    let mut parts = Vec::with_capacity(4);
    for &f in &pyramid[..3] {
        let s = tape.value(f).shape().to_vec();
        if !s[1].is_multiple_of(h4) || !s[2].is_multiple_of(w4) {
            return Err(Error::Geometry(format!("stage {}x{} is not an integer multiple of {h4}x{w4}", s[1], s[2])));
        }
        parts.push(tape.adaptive_avg_pool2d(f, h4, w4)?);
    }
    parts.push(pyramid[3]);
    tape.concat_channels(&parts)
}

fn pam_on_tape<T: Element>(
    pam: &PamParams<T>,
    tape: &mut Tape<T>,
    f: Var,
    trainable: bool,
    vars: &mut Vec<Var>,
) -> Result<(Var, Var, Var)> {
    let c = tape.value(f).shape()[0];
    if c != pam.w1.weight.shape()[1] {
        return Err(Error::dim(
            "patch_attention",
            format!("feature width {c} != head width {}", pam.w1.weight.shape()[1]),
        ));
    }
    let [w1, w2, v1, v2] = pam.bind(tape, trainable);
    for l in [w1, w2, v1, v2] {
        vars.extend(lin_vars(l));
    }
    let a = tape.channel_fc(f, w1.weight, Some(w1.bias))?;
    let a = tape.relu(a);
    let a = tape.channel_fc(a, w2.weight, Some(w2.bias))?;
    let w = tape.relu(a);
    let b = tape.channel_fc(f, v1.weight, Some(v1.bias))?;
    let b = tape.relu(b);
    let b = tape.channel_fc(b, v2.weight, Some(v2.bias))?;
    let s = tape.sigmoid(b);
    let ws = tape.hadamard(w, s)?;
    let y = tape.sum_all(ws)?;
    Ok((y, w, s))
}

/// Records one frame forward on `tape`. Parameters are bound as leaves when
/// `trainable`, otherwise as constants.
pub fn frame_forward_tape<T: Element>(
    params: &IqaParams<T>,
    tape: &mut Tape<T>,
    frame: Var,
    trainable: bool,
) -> Result<IqaTrace> {
    let mut vars = Vec::new();
    let pyramid = backbone_on_tape(params, tape, frame, trainable, &mut vars)?;
    let aligned = if params.arch.fpa { align_on_tape(tape, &pyramid)? } else { pyramid[3] };
    let (head_out, maps) = match &params.head {
        IqaHead::Pam(p) => {
            let (y, w, s) = pam_on_tape(p, tape, aligned, trainable, &mut vars)?;
            (y, Some((w, s)))
        }
        IqaHead::MeanFc(l) => {
            let c = tape.value(aligned).shape()[0];
            if c != l.weight.shape()[1] {
                return Err(Error::dim(
                    "mean_fc_head",
                    format!("feature width {c} != head width {}", l.weight.shape()[1]),
                ));
            }
            let pooled = tape.adaptive_avg_pool2d(aligned, 1, 1)?;
            let lv = l.bind(tape, trainable);
            vars.extend(lin_vars(lv));
            let o = tape.channel_fc(pooled, lv.weight, Some(lv.bias))?;
            (tape.sum_all(o)?, None)
        }
    };
    Ok(IqaTrace { pyramid, aligned, maps, head_out, params: vars })
}

/// Score of one preprocessed `[3,H,W]` frame.
pub fn frame_score<T: Element>(params: &IqaParams<T>, frame: &Tensor<T>) -> Result<T> {
    let mut tape = Tape::new();
    let x = tape.constant(frame.clone());
    let tr = frame_forward_tape(params, &mut tape, x, false)?;
    Ok(tape.value(tr.head_out).data()[0] + params.offset_value())
}

/// Frame score and the gradient of `seed(score) * score` with respect to
/// every parameter, in [`Parameters::named`] order. Also returns the relu
/// sign pattern of the pass.
pub fn frame_backward<T: Element>(
    params: &IqaParams<T>,
    frame: &Tensor<T>,
    seed: impl FnOnce(T) -> T,
) -> Result<(T, Vec<Vec<T>>, Vec<bool>)> {
    let mut tape = Tape::new();
    let x = tape.constant(frame.clone());
    let tr = frame_forward_tape(params, &mut tape, x, true)?;
    let score = tape.value(tr.head_out).data()[0] + params.offset_value();
    let pattern = tape.relu_pattern();
    let seed = seed(score);
    tape.backward_from(tr.head_out, vec![seed])?;
    let mut grads = collect_grads(&mut tape, &tr.params);
    grads.push(vec![seed]);
    Ok((score, grads, pattern))
}

/// The four backbone stage outputs for one frame.
pub fn backbone_forward<T: Element>(frame: &Tensor<T>, params: &IqaParams<T>) -> Result<Vec<Tensor<T>>> {
    let mut tape = Tape::new();
    let x = tape.constant(frame.clone());
    let p = backbone_on_tape(params, &mut tape, x, false, &mut Vec::new())?;
    Ok(p.iter().map(|&v| tape.value(v).clone()).collect())
}

/// Pools stages 1..3 to the last stage's spatial size and concatenates all
/// four along channels, in stage order.
pub fn frame_pyramid_align<T: Element>(pyramid: &[Tensor<T>]) -> Result<Tensor<T>> {
    if pyramid.len() != 4 {
        return Err(Error::dim("frame_pyramid_align", format!("need 4 stages, got {}", pyramid.len())));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = pyramid.iter().map(|t| tape.constant(t.clone())).collect();
    let out = align_on_tape(&mut tape, &vars)?;
    Ok(tape.value(out).clone())
}

/// `(sum(w * s), w, s)` for a `[C,h,w]` feature map.
pub fn patch_attention<T: Element>(f: &Tensor<T>, pam: &PamParams<T>) -> Result<(T, Tensor<T>, Tensor<T>)> {
    if f.ndim() != 3 {
        return Err(Error::dim("patch_attention", format!("expected [C,h,w], got {:?}", f.shape())));
    }
    let mut tape = Tape::new();
    let x = tape.constant(f.clone());
    let (y, w, s) = pam_on_tape(pam, &mut tape, x, false, &mut Vec::new())?;
    Ok((tape.value(y).data()[0], tape.value(w).clone(), tape.value(s).clone()))
}

/// Mean frame score over a stack of preprocessed frames, plus the per-frame scores.
pub fn iqa_video_score(frames: &FrameStack, params: &IqaParams<f32>) -> Result<(f64, Vec<f64>)> {
    if frames.is_empty() {
        return Err(Error::Contract("no frames to score".into()));
    }
    let per_frame =
        frames.frames().par_iter().map(|f| frame_score(params, f).map(f64::from)).collect::<Result<Vec<_>>>()?;
    let y = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok((y, per_frame))
}
