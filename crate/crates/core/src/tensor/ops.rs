//! Pure forward kernels and the matching backward kernels.
//!
//! Everything here is a function of immutable inputs and returns fresh
//! buffers, so it is safe to call from many threads at once. The tape in
//! [`super::Tape`] records calls to these functions and replays the backward
//! kernels in reverse order.

use rayon::prelude::*;

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Below this many multiply-adds a convolution runs on the calling thread.
const PAR_THRESHOLD: usize = 1 << 18;

/// Resolved shapes of a (possibly degenerate, T = 1) 3-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeometry {
    pub fn new(
        op: &'static str,
        c_in: usize,
        input: [usize; 3],
        kernel_shape: &[usize],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        if kernel_shape.len() != 5 {
            return Err(Error::dim(op, format!("kernel must be 5-D, got {kernel_shape:?}")));
        }
        if kernel_shape[1] != c_in {
            return Err(Error::dim(
                op,
                format!("input channels {c_in} but kernel expects {} (axis 1)", kernel_shape[1]),
            ));
        }
        let kernel = [kernel_shape[2], kernel_shape[3], kernel_shape[4]];
        let mut output = [0; 3];
        for a in 0..3 {
            if stride[a] == 0 {
                return Err(Error::dim(op, format!("stride on axis {a} must be >= 1")));
            }
            let padded = input[a] + 2 * padding[a];
            if kernel[a] == 0 || kernel[a] > padded {
                return Err(Error::dim(
                    op,
                    format!("kernel extent {} exceeds padded input {padded} on axis {a}", kernel[a]),
                ));
            }
            output[a] = (padded - kernel[a]) / stride[a] + 1;
        }
        Ok(ConvGeometry { c_in, c_out: kernel_shape[0], input, kernel, stride, padding, output })
    }

    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output.iter().product()
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    fn macs(&self) -> usize {
        self.c_out * self.c_in * self.taps() * self.out_plane()
    }

    /// Range of output positions whose tap `k` lands inside the input on axis `a`.
    #[inline]
    fn valid_outputs(&self, a: usize, k: usize) -> std::ops::Range<usize> {
        let s = self.stride[a];
        let pad = self.padding[a];
        // smallest o with o*s + k >= pad
        let lo = if k >= pad { 0 } else { (pad - k).div_ceil(s) };
        // largest o with o*s + k - pad <= input - 1
        let hi_num = self.input[a] + pad;
        let hi = if hi_num <= k { 0 } else { ((hi_num - k - 1) / s + 1).min(self.output[a]) };
        lo.min(hi)..hi
    }
}

/// Channel-major accumulation of one output channel's plane.
fn conv_channel<T: Element>(g: &ConvGeometry, co: usize, input: &[T], kernel: &[T], out: &mut [T]) {
    let [_, oh_n, ow_n] = g.output;
    let [_, ih_n, iw_n] = g.input;
    let [kt_n, kh_n, kw_n] = g.kernel;
    let in_plane = g.in_plane();
    for ci in 0..g.c_in {
        let src = &input[ci * in_plane..(ci + 1) * in_plane];
        let kbase = (co * g.c_in + ci) * g.taps();
        for kt in 0..kt_n {
            let ots = g.valid_outputs(0, kt);
            for kh in 0..kh_n {
                let ohs = g.valid_outputs(1, kh);
                for kw in 0..kw_n {
                    let w = kernel[kbase + (kt * kh_n + kh) * kw_n + kw];
                    if w == T::zero() {
                        continue;
                    }
                    let ows = g.valid_outputs(2, kw);
                    for ot in ots.clone() {
                        let it = ot * g.stride[0] + kt - g.padding[0];
                        for oh in ohs.clone() {
                            let ih = oh * g.stride[1] + kh - g.padding[1];
                            let row_in = (it * ih_n + ih) * iw_n;
                            let row_out = (ot * oh_n + oh) * ow_n;
                            for ow in ows.clone() {
                                let iw = ow * g.stride[2] + kw - g.padding[2];
                                out[row_out + ow] += w * src[row_in + iw];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Raw-buffer forward pass; `input` is `[c_in, T, H, W]`, kernel `[c_out, c_in, kt, kh, kw]`.
pub fn conv_forward<T: Element>(g: &ConvGeometry, input: &[T], kernel: &[T], bias: Option<&[T]>) -> Vec<T> {
    let plane = g.out_plane();
    let mut out = vec![T::zero(); g.c_out * plane];
    let body = |(co, chunk): (usize, &mut [T])| {
        if let Some(b) = bias {
            chunk.iter_mut().for_each(|v| *v = b[co]);
        }
        conv_channel(g, co, input, kernel, chunk);
    };
    if g.macs() >= PAR_THRESHOLD {
        out.par_chunks_mut(plane).enumerate().for_each(body);
    } else {
        out.chunks_mut(plane).enumerate().for_each(body);
    }
    out
}

/// Gradients of a convolution with respect to input, kernel and bias.
pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Option<Vec<T>>,
    pub bias: Vec<T>,
}

pub fn conv_backward<T: Element>(
    g: &ConvGeometry,
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    need_input: bool,
    need_kernel: bool,
) -> ConvGrads<T> {
    let out_plane = g.out_plane();
    let in_plane = g.in_plane();
    let taps = g.taps();
    let [_, oh_n, ow_n] = g.output;
    let [_, ih_n, iw_n] = g.input;
    let [kt_n, kh_n, kw_n] = g.kernel;
    let par = g.macs() >= PAR_THRESHOLD;

    let bias = grad_out.chunks(out_plane).map(|c| c.iter().fold(T::zero(), |acc, &v| acc + v)).collect();

    let kernel_grad = need_kernel.then(|| {
        let mut gk = vec![T::zero(); g.c_out * g.c_in * taps];
        let body = |(co, gk_co): (usize, &mut [T])| {
            let go = &grad_out[co * out_plane..(co + 1) * out_plane];
            for ci in 0..g.c_in {
                let src = &input[ci * in_plane..(ci + 1) * in_plane];
                for kt in 0..kt_n {
                    let ots = g.valid_outputs(0, kt);
                    for kh in 0..kh_n {
                        let ohs = g.valid_outputs(1, kh);
                        for kw in 0..kw_n {
                            let ows = g.valid_outputs(2, kw);
                            let mut acc = T::zero();
                            for ot in ots.clone() {
                                let it = ot * g.stride[0] + kt - g.padding[0];
                                for oh in ohs.clone() {
                                    let ih = oh * g.stride[1] + kh - g.padding[1];
                                    let row_in = (it * ih_n + ih) * iw_n;
                                    let row_out = (ot * oh_n + oh) * ow_n;
                                    for ow in ows.clone() {
                                        let iw = ow * g.stride[2] + kw - g.padding[2];
                                        acc += go[row_out + ow] * src[row_in + iw];
                                    }
                                }
                            }
                            gk_co[ci * taps + (kt * kh_n + kh) * kw_n + kw] = acc;
                        }
                    }
                }
            }
        };
        if par {
            gk.par_chunks_mut(g.c_in * taps).enumerate().for_each(body);
        } else {
            gk.chunks_mut(g.c_in * taps).enumerate().for_each(body);
        }
        gk
    });

    let input_grad = need_input.then(|| {
        let mut gi = vec![T::zero(); g.c_in * in_plane];
        let body = |(ci, gi_ci): (usize, &mut [T])| {
            for co in 0..g.c_out {
                let go = &grad_out[co * out_plane..(co + 1) * out_plane];
                let kbase = (co * g.c_in + ci) * taps;
                for kt in 0..kt_n {
                    let ots = g.valid_outputs(0, kt);
                    for kh in 0..kh_n {
                        let ohs = g.valid_outputs(1, kh);
                        for kw in 0..kw_n {
                            let w = kernel[kbase + (kt * kh_n + kh) * kw_n + kw];
                            if w == T::zero() {
                                continue;
                            }
                            let ows = g.valid_outputs(2, kw);
                            for ot in ots.clone() {
                                let it = ot * g.stride[0] + kt - g.padding[0];
                                for oh in ohs.clone() {
                                    let ih = oh * g.stride[1] + kh - g.padding[1];
                                    let row_in = (it * ih_n + ih) * iw_n;
                                    let row_out = (ot * oh_n + oh) * ow_n;
                                    for ow in ows.clone() {
                                        let iw = ow * g.stride[2] + kw - g.padding[2];
                                        gi_ci[row_in + iw] += w * go[row_out + ow];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        };
        if par {
            gi.par_chunks_mut(in_plane).enumerate().for_each(body);
        } else {
            gi.chunks_mut(in_plane).enumerate().for_each(body);
        }
        gi
    });

    ConvGrads { input: input_grad, kernel: kernel_grad, bias }
}

fn check_bias<T: Element>(op: &'static str, bias: Option<&Tensor<T>>, c_out: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [c_out] => {
            Err(Error::dim(op, format!("bias shape {:?}, expected [{c_out}]", b.shape())))
        }
        _ => Ok(()),
    }
}

pub(crate) fn conv2d_geometry<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    let (is, ks) = (input.shape(), kernel.shape());
    if is.len() != 3 || ks.len() != 4 {
        return Err(Error::dim(
            "conv2d",
            format!("expected input [C,H,W] and kernel [Co,C,kh,kw], got {is:?} and {ks:?}"),
        ));
    }
    ConvGeometry::new(
        "conv2d",
        is[0],
        [1, is[1], is[2]],
        &[ks[0], ks[1], 1, ks[2], ks[3]],
        [1, stride, stride],
        [0, padding, padding],
    )
}

pub(crate) fn conv3d_geometry<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: [usize; 3],
    padding: [usize; 3],
) -> Result<ConvGeometry> {
    let (is, ks) = (input.shape(), kernel.shape());
    if is.len() != 4 || ks.len() != 5 {
        return Err(Error::dim(
            "conv3d",
            format!("expected input [C,T,H,W] and kernel [Co,C,kt,kh,kw], got {is:?} and {ks:?}"),
        ));
    }
    ConvGeometry::new("conv3d", is[0], [is[1], is[2], is[3]], ks, stride, padding)
}

/// 2-D cross-correlation of `[C,H,W]` with `[Co,C,kh,kw]`.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = conv2d_geometry(input, kernel, stride, padding)?;
    check_bias("conv2d", bias, g.c_out)?;
    let out = conv_forward(&g, input.data(), kernel.data(), bias.map(Tensor::data));
    Tensor::new(&[g.c_out, g.output[1], g.output[2]], out)?.ensure_finite("conv2d")
}

/// 3-D cross-correlation of `[C,T,H,W]` with `[Co,C,kt,kh,kw]`.
pub fn conv3d<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: [usize; 3],
    padding: [usize; 3],
) -> Result<Tensor<T>> {
    let g = conv3d_geometry(input, kernel, stride, padding)?;
    check_bias("conv3d", bias, g.c_out)?;
    let out = conv_forward(&g, input.data(), kernel.data(), bias.map(Tensor::data));
    Tensor::new(&[g.c_out, g.output[0], g.output[1], g.output[2]], out)?.ensure_finite("conv3d")
}

/// Affine map along the last axis: `[..., Cin] x [Cout, Cin] -> [..., Cout]`.
pub fn fully_connected<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (c_out, c_in) = fc_dims("fully_connected", input.shape().last().copied(), weight)?;
    check_bias("fully_connected", bias, c_out)?;
    let rows = input.numel() / c_in.max(1);
    let (x, w) = (input.data(), weight.data());
    let mut out = Vec::with_capacity(rows * c_out);
    for r in 0..rows {
        let xr = &x[r * c_in..(r + 1) * c_in];
        for o in 0..c_out {
            let wr = &w[o * c_in..(o + 1) * c_in];
            let mut acc = bias.map_or(T::zero(), |b| b.data()[o]);
            for (a, b) in xr.iter().zip(wr) {
                acc += *a * *b;
            }
            out.push(acc);
        }
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().expect("checked non-empty") = c_out;
    Tensor::new(&shape, out)?.ensure_finite("fully_connected")
}

/// Affine map along the leading (channel) axis, i.e. a 1x1 convolution:
/// `[Cin, ...] x [Cout, Cin] -> [Cout, ...]`.
pub fn channel_fc<T: Element>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (c_out, c_in) = fc_dims("channel_fc", input.shape().first().copied(), weight)?;
    check_bias("channel_fc", bias, c_out)?;
    let plane = input.numel() / c_in.max(1);
    let (x, w) = (input.data(), weight.data());
    let mut out = vec![T::zero(); c_out * plane];
    for (o, row) in out.chunks_mut(plane.max(1)).enumerate().take(c_out) {
        if let Some(b) = bias {
            row.iter_mut().for_each(|v| *v = b.data()[o]);
        }
        for i in 0..c_in {
            let wv = w[o * c_in + i];
            let src = &x[i * plane..(i + 1) * plane];
            for (r, s) in row.iter_mut().zip(src) {
                *r += wv * *s;
            }
        }
    }
    let mut shape = input.shape().to_vec();
    shape[0] = c_out;
    Tensor::new(&shape, out)?.ensure_finite("channel_fc")
}

fn fc_dims<T: Element>(op: &'static str, axis: Option<usize>, weight: &Tensor<T>) -> Result<(usize, usize)> {
    let ws = weight.shape();
    if ws.len() != 2 {
        return Err(Error::dim(op, format!("weight must be [Cout,Cin], got {ws:?}")));
    }
    match axis {
        Some(c) if c == ws[1] => Ok((ws[0], ws[1])),
        Some(c) => Err(Error::dim(op, format!("input feature axis {c} != weight Cin {}", ws[1]))),
        None => Err(Error::dim(op, "input has no axes")),
    }
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    map(x, |v| if v > T::zero() { v } else { T::zero() })
}

#[inline]
pub fn sigmoid_scalar<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    map(x, sigmoid_scalar)
}

fn map<T: Element>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::from_fn(x.shape(), |i| f(x.data()[i]))
}

pub fn hadamard<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::dim("hadamard", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(Tensor::from_fn(a.shape(), |i| a.data()[i] * b.data()[i]))
}

/// Concatenation along axis 0; all trailing axes must agree.
pub fn concat_channels<T: Element>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::dim("concat_channels", "no inputs"))?;
    if first.ndim() == 0 {
        return Err(Error::dim("concat_channels", "scalar input"));
    }
    let tail = &first.shape()[1..];
    let mut channels = 0;
    let mut data = Vec::new();
    for (i, p) in parts.iter().enumerate() {
        if p.ndim() != first.ndim() || &p.shape()[1..] != tail {
            return Err(Error::dim(
                "concat_channels",
                format!("input {i} has shape {:?}, expected [_, {tail:?}]", p.shape()),
            ));
        }
        channels += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    let mut shape = vec![channels];
    shape.extend_from_slice(tail);
    Tensor::new(&shape, data)
}

/// Half-open input range averaged into output cell `i` (floor/ceil partition).
#[inline]
pub fn pool_bounds(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = i * input / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
}

fn pool_dims<T: Element>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::dim("adaptive_avg_pool2d", format!("expected [C,H,W], got {s:?}")));
    }
    if out_h == 0 || out_w == 0 || out_h > s[1] || out_w > s[2] {
        return Err(Error::dim(
            "adaptive_avg_pool2d",
            format!("output {out_h}x{out_w} incompatible with input {}x{}", s[1], s[2]),
        ));
    }
    Ok((s[0], s[1], s[2]))
}

pub fn adaptive_avg_pool2d<T: Element>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = pool_dims(x, out_h, out_w)?;
    let src = x.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for oy in 0..out_h {
            let (y0, y1) = pool_bounds(oy, h, out_h);
            for ox in 0..out_w {
                let (x0, x1) = pool_bounds(ox, w, out_w);
                let mut acc = T::zero();
                for y in y0..y1 {
                    for v in &plane[y * w + x0..y * w + x1] {
                        acc += *v;
                    }
                }
                out.push(acc / T::of_f64(((y1 - y0) * (x1 - x0)) as f64));
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

pub(crate) fn adaptive_avg_pool2d_backward<T: Element>(
    in_shape: &[usize],
    out_h: usize,
    out_w: usize,
    grad_out: &[T],
) -> Vec<T> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let mut gi = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for oy in 0..out_h {
            let (y0, y1) = pool_bounds(oy, h, out_h);
            for ox in 0..out_w {
                let (x0, x1) = pool_bounds(ox, w, out_w);
                let share = grad_out[(ch * out_h + oy) * out_w + ox] / T::of_f64(((y1 - y0) * (x1 - x0)) as f64);
                for y in y0..y1 {
                    for v in &mut gi[ch * h * w + y * w + x0..ch * h * w + y * w + x1] {
                        *v += share;
                    }
                }
            }
        }
    }
    gi
}

pub fn sum_all<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::scalar(x.data().iter().fold(T::zero(), |acc, &v| acc + v))
}

pub fn mean_all<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.data().iter().fold(T::zero(), |acc, &v| acc + v);
    Tensor::scalar(s / T::of_f64(x.numel() as f64))
}

/// Backward of [`fully_connected`] / [`channel_fc`] expressed over `(rows, c_in)`
/// row-major views. Returns `(grad_input, grad_weight, grad_bias)`.
pub(crate) fn fc_backward_rows<T: Element>(
    x: &[T],
    w: &[T],
    go: &[T],
    rows: usize,
    c_in: usize,
    c_out: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut gx = vec![T::zero(); rows * c_in];
    let mut gw = vec![T::zero(); c_out * c_in];
    let mut gb = vec![T::zero(); c_out];
    for r in 0..rows {
        for o in 0..c_out {
            let g = go[r * c_out + o];
            gb[o] += g;
            for i in 0..c_in {
                gx[r * c_in + i] += g * w[o * c_in + i];
                gw[o * c_in + i] += g * x[r * c_in + i];
            }
        }
    }
    (gx, gw, gb)
}

/// Backward of [`channel_fc`] over channel-major `[c, plane]` buffers.
pub(crate) fn channel_fc_backward<T: Element>(
    x: &[T],
    w: &[T],
    go: &[T],
    plane: usize,
    c_in: usize,
    c_out: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut gx = vec![T::zero(); c_in * plane];
    let mut gw = vec![T::zero(); c_out * c_in];
    let mut gb = vec![T::zero(); c_out];
    for o in 0..c_out {
        let gor = &go[o * plane..(o + 1) * plane];
        gb[o] = gor.iter().fold(T::zero(), |a, &v| a + v);
        for i in 0..c_in {
            let xr = &x[i * plane..(i + 1) * plane];
            let wv = w[o * c_in + i];
            let mut acc = T::zero();
            let gxr = &mut gx[i * plane..(i + 1) * plane];
            for p in 0..plane {
                acc += gor[p] * xr[p];
                gxr[p] += wv * gor[p];
            }
            gw[o * c_in + i] = acc;
        }
    }
    (gx, gw, gb)
}
