//! Codec-free video ingestion and the frame protocol of the IQA branch.
//!
//! Videos are stored as a raw `.rgb24` payload (frame-major, row-major,
//! interleaved RGB bytes) next to a JSON sidecar with the same stem:
//!
//! ```text
//! clip.rgb24   width*height*3*num_frames bytes
//! clip.json    {"width":..,"height":..,"fps_num":..,"fps_den":..,"num_frames":..}
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose, Rng};
use crate::tensor::Tensor;

/// Frame rate of the IQA frame protocol.
pub const IQA_SAMPLE_FPS: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub width: usize,
    pub height: usize,
    pub fps_num: u64,
    pub fps_den: u64,
    pub num_frames: usize,
}

/// Decoded video: RGB24 interleaved bytes, frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RawVideo {
    pub width: usize,
    pub height: usize,
    pub fps_num: u64,
    pub fps_den: u64,
    pub num_frames: usize,
    pub frames: Vec<u8>,
}

impl RawVideo {
    pub fn new(
        width: usize,
        height: usize,
        fps_num: u64,
        fps_den: u64,
        num_frames: usize,
        frames: Vec<u8>,
    ) -> Result<Self> {
        let v = RawVideo { width, height, fps_num, fps_den, num_frames, frames };
        v.validate()?;
        Ok(v)
    }

    fn validate(&self) -> Result<()> {
        if self.fps_num == 0 || self.fps_den == 0 {
            return Err(Error::Format(format!("fps {}/{} must be positive", self.fps_num, self.fps_den)));
        }
        if self.num_frames == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::Format("video needs at least one non-empty frame".into()));
        }
        let expected = self.frame_bytes() * self.num_frames;
        if self.frames.len() != expected {
            return Err(Error::CorruptPayload(format!(
                "payload has {} bytes, expected {expected} ({} frames of {}x{}x3)",
                self.frames.len(),
                self.num_frames,
                self.height,
                self.width
            )));
        }
        Ok(())
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            width: self.width,
            height: self.height,
            fps_num: self.fps_num,
            fps_den: self.fps_den,
            num_frames: self.num_frames,
        }
    }

    pub fn fps(&self) -> f64 {
        self.fps_num as f64 / self.fps_den as f64
    }

    pub fn frame_bytes(&self) -> usize {
        self.width * self.height * 3
    }

    pub fn frame(&self, index: usize) -> &[u8] {
        let n = self.frame_bytes();
        &self.frames[index * n..(index + 1) * n]
    }

    /// Byte at `(frame, row, col, channel)`.
    #[inline]
    pub fn pixel(&self, frame: usize, row: usize, col: usize, channel: usize) -> u8 {
        self.frames[((frame * self.height + row) * self.width + col) * 3 + channel]
    }

    /// Frame `index` as a planar `[3, H, W]` tensor scaled to `[0, 1]`.
    pub fn frame_tensor(&self, index: usize) -> Tensor<f32> {
        let (h, w) = (self.height, self.width);
        let src = self.frame(index);
        let mut data = vec![0.0f32; 3 * h * w];
        for p in 0..h * w {
            for c in 0..3 {
                data[c * h * w + p] = src[p * 3 + c] as f32 / 255.0;
            }
        }
        Tensor::new(&[3, h, w], data).expect("shape matches by construction")
    }

    pub fn timestamp(&self, index: usize) -> f64 {
        index as f64 * self.fps_den as f64 / self.fps_num as f64
    }
}

/// Path of the JSON sidecar belonging to a `.rgb24` payload.
pub fn sidecar_path(payload: &Path) -> PathBuf {
    payload.with_extension("json")
}

pub fn load_raw_video(path: impl AsRef<Path>) -> Result<RawVideo> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side)
        .map_err(|e| Error::Format(format!("missing or unreadable sidecar {}: {e}", side.display())))?;
    let meta: Sidecar =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("bad sidecar {}: {e}", side.display())))?;
    let frames = fs::read(path).map_err(|e| Error::io(path, e))?;
    RawVideo::new(meta.width, meta.height, meta.fps_num, meta.fps_den, meta.num_frames, frames)
}

pub fn write_raw_video(path: impl AsRef<Path>, video: &RawVideo) -> Result<()> {
    let path = path.as_ref();
    video.validate()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, &video.frames).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string(&video.sidecar())?).map_err(|e| Error::io(&side, e))
}

/// Sampled frames in `[0, 1]` with their source timestamps in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStack {
    frames: Vec<Tensor<f32>>,
    timestamps: Vec<f64>,
}

impl FrameStack {
    pub fn new(frames: Vec<Tensor<f32>>, timestamps: Vec<f64>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Contract("frame stack needs at least one frame".into()));
        }
        if frames.len() != timestamps.len() {
            return Err(Error::Contract("one timestamp per frame required".into()));
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Contract("timestamps must be strictly increasing".into()));
        }
        let shape = frames[0].shape().to_vec();
        if shape.len() != 3 || shape[0] != 3 || frames.iter().any(|f| f.shape() != shape.as_slice()) {
            return Err(Error::dim("frame_stack", format!("frames must share one [3,H,W] shape, first is {shape:?}")));
        }
        Ok(FrameStack { frames, timestamps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Tensor<f32>] {
        &self.frames
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    /// Applies `f` to every frame, keeping timestamps.
    pub fn map(&self, f: impl Fn(&Tensor<f32>) -> Result<Tensor<f32>> + Sync + Send) -> Result<FrameStack> {
        let frames = self.frames.par_iter().map(f).collect::<Result<Vec<_>>>()?;
        FrameStack::new(frames, self.timestamps.clone())
    }

    /// All frames as one `[T, 3, H, W]` tensor.
    pub fn to_tensor(&self) -> Result<Tensor<f32>> {
        crate::tensor::stack(&self.frames)
    }
}

/// Source frame indices nearest to `k / rate` seconds for `k = 0, 1, ..`,
/// ties resolved to the lower index, duplicates dropped.
pub fn sample_frame_indices(v: &RawVideo, rate: u64) -> Vec<usize> {
    let (num, den) = (v.fps_num as i128, v.fps_den as i128);
    let rate = rate.max(1) as i128;
    let mut out: Vec<usize> = Vec::new();
    for k in 0i128.. {
        // exact position k * num / (rate * den); nearest with ties down = ceil(x - 1/2)
        let a = 2 * k * num - rate * den;
        let b = 2 * rate * den;
        let idx = (a + b - 1).div_euclid(b).max(0) as usize;
        if idx >= v.num_frames {
            break;
        }
        if out.last() != Some(&idx) {
            out.push(idx);
        }
    }
    out
}

/// Frames at 2 fps, at native resolution.
pub fn sample_frames_2fps(v: &RawVideo) -> FrameStack {
    let idx = sample_frame_indices(v, IQA_SAMPLE_FPS);
    let frames = idx.iter().map(|&i| v.frame_tensor(i)).collect();
    let ts = idx.iter().map(|&i| v.timestamp(i)).collect();
    FrameStack::new(frames, ts).expect("sampling yields at least frame 0 with increasing timestamps")
}

fn frame_dims(frame: &Tensor<f32>, op: &'static str) -> Result<(usize, usize, usize)> {
    match *frame.shape() {
        [c, h, w] if h > 0 && w > 0 => Ok((c, h, w)),
        _ => Err(Error::dim(op, format!("expected [C,H,W], got {:?}", frame.shape()))),
    }
}

/// Output geometry that maps the smaller edge to `target`, rounding the other
/// edge to the nearest integer.
pub fn smaller_edge_dims(h: usize, w: usize, target: usize) -> (usize, usize) {
    if h <= w {
        (target, ((w * target) as f64 / h as f64).round() as usize)
    } else {
        (((h * target) as f64 / w as f64).round() as usize, target)
    }
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(frame: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = frame_dims(frame, "resize_bilinear")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Parameter(format!("resize target {out_h}x{out_w} must be positive")));
    }
    let taps = |out: usize, input: usize| -> Vec<(usize, usize, f32)> {
        let scale = input as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(input - 1);
                let i1 = (i0 + 1).min(input - 1);
                (i0, i1, (src - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = taps(out_h, h);
    let xs = taps(out_w, w);
    let src = frame.data();
    let mut data = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, wy) in &ys {
            for &(x0, x1, wx) in &xs {
                let (a, b) = (plane[y0 * w + x0], plane[y0 * w + x1]);
                let (cc, d) = (plane[y1 * w + x0], plane[y1 * w + x1]);
                let top = a + wx * (b - a);
                let bottom = cc + wx * (d - cc);
                data.push(top + wy * (bottom - top));
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], data)
}

/// Resizes so the smaller edge equals `target`, preserving aspect ratio.
pub fn resize_smaller_edge(frame: &Tensor<f32>, target: usize) -> Result<Tensor<f32>> {
    if target == 0 {
        return Err(Error::Parameter("resize target must be positive".into()));
    }
    let (_, h, w) = frame_dims(frame, "resize_smaller_edge")?;
    let (oh, ow) = smaller_edge_dims(h, w, target);
    if (oh, ow) == (h, w) {
        return Ok(frame.clone());
    }
    resize_bilinear(frame, oh, ow)
}

/// `size x size` window at `(top, left)`; a pure slice.
pub fn crop(frame: &Tensor<f32>, top: usize, left: usize, size: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = frame_dims(frame, "crop")?;
    if top + size > h || left + size > w {
        return Err(Error::Geometry(format!("{size}x{size} crop at ({top},{left}) does not fit a {h}x{w} frame")));
    }
    let src = frame.data();
    let mut data = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in top..top + size {
            let row = ch * h * w + y * w;
            data.extend_from_slice(&src[row + left..row + left + size]);
        }
    }
    Tensor::new(&[c, size, size], data)
}

pub fn center_crop(frame: &Tensor<f32>, size: usize) -> Result<Tensor<f32>> {
    let (_, h, w) = frame_dims(frame, "center_crop")?;
    if h < size || w < size {
        return Err(Error::Geometry(format!("{h}x{w} frame is smaller than crop {size}")));
    }
    crop(frame, (h - size) / 2, (w - size) / 2, size)
}

/// Reverses the width axis.
pub fn flip_horizontal(frame: &Tensor<f32>) -> Tensor<f32> {
    let s = frame.shape();
    let w = *s.last().unwrap_or(&1);
    let mut data = frame.data().to_vec();
    data.chunks_mut(w.max(1)).for_each(|row| row.reverse());
    Tensor::new(s, data).expect("same shape")
}

/// Uniformly placed `size x size` crop, horizontally flipped with probability `flip_p`.
pub fn random_crop_flip(frame: &Tensor<f32>, size: usize, flip_p: f64, rng: &mut Rng) -> Result<Tensor<f32>> {
    let (_, h, w) = frame_dims(frame, "random_crop_flip")?;
    if h < size || w < size {
        return Err(Error::Geometry(format!("{h}x{w} frame is smaller than crop {size}")));
    }
    let top = rng.random_range(0..=h - size);
    let left = rng.random_range(0..=w - size);
    let c = crop(frame, top, left, size)?;
    Ok(if rng.random_bool(flip_p.clamp(0.0, 1.0)) { flip_horizontal(&c) } else { c })
}

/// Resizes every frame of a video so its smaller edge is at least `min_edge`
/// (bilinear, rounded back to bytes). Videos already large enough are returned as is.
pub fn ensure_min_edge(v: &RawVideo, min_edge: usize) -> Result<std::borrow::Cow<'_, RawVideo>> {
    if v.height.min(v.width) >= min_edge {
        return Ok(std::borrow::Cow::Borrowed(v));
    }
    let (oh, ow) = smaller_edge_dims(v.height, v.width, min_edge);
    let frames: Vec<Vec<u8>> = (0..v.num_frames)
        .into_par_iter()
        .map(|i| {
            let t = resize_bilinear(&v.frame_tensor(i), oh, ow)?;
            let d = t.data();
            let mut out = vec![0u8; oh * ow * 3];
            for p in 0..oh * ow {
                for c in 0..3 {
                    out[p * 3 + c] = (d[c * oh * ow + p] * 255.0).round().clamp(0.0, 255.0) as u8;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(std::borrow::Cow::Owned(RawVideo::new(ow, oh, v.fps_num, v.fps_den, v.num_frames, frames.concat())?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Mean and (population) standard deviation of the raw MOS of a training split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    /// Population statistics; a constant split gets `std = 1` so normalization stays defined.
    pub fn from_scores(scores: &[f64]) -> Self {
        let n = scores.len().max(1) as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        NormStats { mean, std: if std > 0.0 { std } else { 1.0 } }
    }

    pub fn normalize(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.std
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    /// Payload path, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub mos_raw: f64,
    #[serde(skip)]
    pub mos_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset_name: String,
    pub split: Split,
    pub norm_stats: NormStats,
    pub records: Vec<VideoRecord>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Manifest {
    /// Builds a manifest; `norm` must be the training split's statistics for
    /// test manifests and is computed from the records when `None`.
    pub fn new(
        dataset_name: impl Into<String>,
        split: Split,
        mut records: Vec<VideoRecord>,
        norm: Option<NormStats>,
        base_dir: impl Into<PathBuf>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Format("manifest has no records".into()));
        }
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Format(format!("duplicate video id {:?}", r.id)));
            }
            if !r.mos_raw.is_finite() {
                return Err(Error::Format(format!("non-finite MOS for {:?}", r.id)));
            }
        }
        let norm =
            norm.unwrap_or_else(|| NormStats::from_scores(&records.iter().map(|r| r.mos_raw).collect::<Vec<_>>()));
        for r in &mut records {
            r.mos_norm = norm.normalize(r.mos_raw);
        }
        Ok(Manifest { dataset_name: dataset_name.into(), split, norm_stats: norm, records, base_dir: base_dir.into() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("bad manifest {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::new(m.dataset_name, m.split, m.records, Some(m.norm_stats), base)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn payload_path(&self, record: &VideoRecord) -> PathBuf {
        if record.path.is_absolute() {
            record.path.clone()
        } else {
            self.base_dir.join(&record.path)
        }
    }

    /// Restricts to the given records, keeping normalization statistics.
    pub fn subset(&self, keep: impl Fn(&VideoRecord) -> bool) -> Result<Manifest> {
        let records = self.records.iter().filter(|r| keep(r)).cloned().collect();
        Manifest::new(self.dataset_name.clone(), self.split, records, Some(self.norm_stats), self.base_dir.clone())
    }
}

/// Parameters of the procedural dataset generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub n_videos: usize,
    pub seed: u64,
    pub split: Split,
    pub width: usize,
    pub height: usize,
    pub num_frames: usize,
    pub fps_num: u64,
    pub fps_den: u64,
    /// Largest noise standard deviation, in 8-bit code values.
    pub sigma_max: f64,
    /// Number of evenly spaced noise levels in `[0, sigma_max]`.
    pub sigma_levels: usize,
    /// Statistics to reuse (set for held-out splits).
    pub norm: Option<NormStats>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            n_videos: 16,
            seed: 0,
            split: Split::Train,
            width: 128,
            height: 96,
            num_frames: 24,
            fps_num: 8,
            fps_den: 1,
            sigma_max: 24.0,
            sigma_levels: 16,
            norm: None,
        }
    }
}

/// Noise level of a synthetic video and the MOS it implies.
pub fn synth_mos(sigma: f64, sigma_max: f64) -> f64 {
    100.0 * (1.0 - sigma / sigma_max)
}

/// Renders one procedural video: a drifting sinusoidal gradient plus
/// per-pixel Gaussian noise of standard deviation `sigma`.
pub fn synth_video(opts: &SynthOptions, sigma: f64, rng: &mut Rng) -> RawVideo {
    let (w, h) = (opts.width, opts.height);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let freq = rng.random_range(0.01..0.04);
    let speed = rng.random_range(0.5..2.0);
    let amp = rng.random_range(30.0..55.0);
    let phases: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
    let tilt = rng.random_range(-30.0..30.0);
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut frames = Vec::with_capacity(w * h * 3 * opts.num_frames);
    for t in 0..opts.num_frames {
        for y in 0..h {
            for x in 0..w {
                let u = x as f64 * ca + y as f64 * sa - speed * t as f64;
                let ramp = tilt * (x as f64 / w as f64 - 0.5);
                for phase in &phases {
                    let clean = 128.0 + ramp + amp * (std::f64::consts::TAU * freq * u + phase).sin();
                    let n = if sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                    frames.push((clean + n).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    RawVideo::new(w, h, opts.fps_num, opts.fps_den, opts.num_frames, frames).expect("consistent geometry")
}

/// Writes `n_videos` procedural videos plus `<split>.json` into `out_dir`.
///
/// Each video's noise level is drawn from an evenly spaced grid and its MOS is
/// `100 * (1 - sigma / sigma_max)`, so quality is a known monotone function of
/// the distortion.
pub fn synth_dataset(opts: &SynthOptions, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    if opts.n_videos < 2 {
        return Err(Error::Parameter(format!("synthetic dataset needs >= 2 videos, got {}", opts.n_videos)));
    }
    if opts.sigma_levels < 2 || !(opts.sigma_max > 0.0) {
        return Err(Error::Parameter("sigma grid needs >= 2 levels and sigma_max > 0".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let split = opts.split;
    let records = (0..opts.n_videos)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(opts.seed, Purpose::Synth, &[split as u64, i as u64]);
            let level = r.random_range(0..opts.sigma_levels);
            let sigma = opts.sigma_max * level as f64 / (opts.sigma_levels - 1) as f64;
            let video = synth_video(opts, sigma, &mut r);
            let id = format!("{}_{i:04}", split.as_str());
            let file = PathBuf::from(format!("{id}.rgb24"));
            write_raw_video(out_dir.join(&file), &video)?;
            Ok(VideoRecord { id, path: file, mos_raw: synth_mos(sigma, opts.sigma_max), mos_norm: 0.0 })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest::new("synthetic-noise", split, records, opts.norm, out_dir)?;
    manifest.save(out_dir.join(format!("{}.json", split.as_str())))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(fps_num: u64, fps_den: u64, n: usize) -> RawVideo {
        RawVideo::new(2, 2, fps_num, fps_den, n, vec![0; 12 * n]).unwrap()
    }

    #[test]
    fn sampling_30fps() {
        assert_eq!(sample_frame_indices(&video(30, 1, 90), 2), vec![0, 15, 30, 45, 60, 75]);
    }

    #[test]
    fn sampling_degenerate_and_identity() {
        assert_eq!(sample_frame_indices(&video(1, 1, 1), 2), vec![0]);
        assert_eq!(sample_frame_indices(&video(2, 1, 7), 2), (0..7).collect::<Vec<_>>());
        // 25 fps: 12.5 frames per sample, ties go down
        assert_eq!(sample_frame_indices(&video(25, 1, 40), 2), vec![0, 12, 25, 37]);
        // slow video: 1 fps never repeats an index
        assert_eq!(sample_frame_indices(&video(1, 1, 3), 2), vec![0, 1, 2]);
    }

    #[test]
    fn smaller_edge_arithmetic() {
        assert_eq!(smaller_edge_dims(720, 1280, 512), (512, 910));
        assert_eq!(smaller_edge_dims(512, 910, 512), (512, 910));
        assert_eq!(smaller_edge_dims(1280, 720, 512), (910, 512));
    }

    #[test]
    fn resize_identity_and_constant() {
        let f = Tensor::from_fn(&[3, 4, 6], |i| (i % 7) as f32 / 7.0);
        assert_eq!(resize_smaller_edge(&f, 4).unwrap(), f);
        assert_eq!(resize_bilinear(&f, 4, 6).unwrap(), f);
        let c = Tensor::full(&[3, 5, 9], 0.3f32);
        let r = resize_smaller_edge(&c, 7).unwrap();
        assert_eq!(r.shape(), &[3, 7, 13]);
        assert!(r.data().iter().all(|&v| v == 0.3));
        assert!(resize_smaller_edge(&c, 0).is_err());
    }

    #[test]
    fn center_crop_window() {
        let f = Tensor::from_fn(&[1, 512, 512], |i| i as f32);
        let c = center_crop(&f, 320).unwrap();
        assert_eq!(c.data()[0], (96 * 512 + 96) as f32);
        assert_eq!(*c.data().last().unwrap(), (415 * 512 + 415) as f32);
        assert!(matches!(center_crop(&f, 513), Err(Error::Geometry(_))));
    }

    #[test]
    fn flip_twice_is_identity() {
        let f = Tensor::from_fn(&[3, 4, 5], |i| i as f32);
        let once = flip_horizontal(&f);
        assert_ne!(once, f);
        assert_eq!(flip_horizontal(&once), f);
    }

    #[test]
    fn norm_stats_are_population() {
        let s = NormStats::from_scores(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert_eq!(NormStats::from_scores(&[5.0]).std, 1.0);
    }

    #[test]
    fn manifest_rejects_duplicates() {
        let r = VideoRecord { id: "a".into(), path: "a.rgb24".into(), mos_raw: 1.0, mos_norm: 0.0 };
        assert!(Manifest::new("d", Split::Train, vec![r.clone(), r], None, ".").is_err());
        assert!(Manifest::new("d", Split::Train, vec![], None, ".").is_err());
    }
}
