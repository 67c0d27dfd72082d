//! Grid mini-patch sampling: clip views for the VQA branch.
//!
//! A view takes `clip_len` frames at a fixed temporal stride and, from each
//! cell of a `grid x grid` partition of the frame, one `frag_size` square at
//! native resolution. The fragment offsets are drawn once per view and shared
//! by every frame of the clip.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::{self, RawVideo};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Start and length of region `i` when `len` pixels are split into `parts`
/// regions; the `len % parts` leftover pixels go one each to the trailing regions.
pub fn region_bounds(len: usize, parts: usize, i: usize) -> (usize, usize) {
    let base = len / parts;
    let rem = len % parts;
    let first_long = parts - rem;
    let start = i * base + i.saturating_sub(first_long);
    let size = base + usize::from(i >= first_long);
    (start, size)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragmentGrid {
    pub grid_h: usize,
    pub grid_w: usize,
    pub frag_size: usize,
    /// `(top, left)` per cell, row-major over the grid.
    pub offsets: Vec<(usize, usize)>,
    pub source_dims: (usize, usize),
}

impl FragmentGrid {
    /// Region `(top, left, height, width)` of cell `(r, c)`.
    pub fn region(&self, r: usize, c: usize) -> (usize, usize, usize, usize) {
        let (top, h) = region_bounds(self.source_dims.0, self.grid_h, r);
        let (left, w) = region_bounds(self.source_dims.1, self.grid_w, c);
        (top, left, h, w)
    }

    pub fn offset(&self, r: usize, c: usize) -> (usize, usize) {
        self.offsets[r * self.grid_w + c]
    }

    /// Spatial extent `(height, width)` of the tiled view.
    pub fn extent(&self) -> (usize, usize) {
        (self.grid_h * self.frag_size, self.grid_w * self.frag_size)
    }
}

/// Draws one uniformly placed fragment per cell of a `grid x grid` partition.
pub fn plan_grid(
    source_h: usize,
    source_w: usize,
    grid: usize,
    frag_size: usize,
    rng: &mut Rng,
) -> Result<FragmentGrid> {
    if grid == 0 || frag_size == 0 {
        return Err(Error::Parameter(format!("grid {grid} and fragment size {frag_size} must be positive")));
    }
    let need = grid * frag_size;
    if source_h < need || source_w < need {
        return Err(Error::Geometry(format!(
            "{source_h}x{source_w} source is smaller than the {need}x{need} fragment extent; resize the smaller edge to {need} first"
        )));
    }
    let mut offsets = Vec::with_capacity(grid * grid);
    for r in 0..grid {
        let (top, h) = region_bounds(source_h, grid, r);
        for c in 0..grid {
            let (left, w) = region_bounds(source_w, grid, c);
            let dy = rng.random_range(0..=h - frag_size);
            let dx = rng.random_range(0..=w - frag_size);
            offsets.push((top + dy, left + dx));
        }
    }
    Ok(FragmentGrid { grid_h: grid, grid_w: grid, frag_size, offsets, source_dims: (source_h, source_w) })
}

/// Frame indices of view `view_id`: `start + k * stride` for `k < clip_len`,
/// clamped to the last frame. Starts are spread uniformly over the video;
/// a single view is centered.
pub fn sample_clip_indices(
    num_frames: usize,
    clip_len: usize,
    stride: usize,
    view_id: usize,
    n_views: usize,
) -> Result<Vec<usize>> {
    if num_frames == 0 || clip_len == 0 || stride == 0 || n_views == 0 {
        return Err(Error::Parameter("frames, clip length, stride and views must be positive".into()));
    }
    if view_id >= n_views {
        return Err(Error::Parameter(format!("view {view_id} out of range for {n_views} views")));
    }
    let span = (clip_len - 1) * stride + 1;
    let max_start = num_frames.saturating_sub(span);
    let start = if n_views == 1 { max_start / 2 } else { view_id * max_start / (n_views - 1) };
    Ok((0..clip_len).map(|k| (start + k * stride).min(num_frames - 1)).collect())
}

/// Fraction of source pixels not visited by a fragment view.
pub fn sampling_cost_ratio(source_h: usize, source_w: usize, grid: usize, frag_size: usize) -> f64 {
    let sampled = (grid * frag_size) as f64;
    1.0 - sampled * sampled / (source_h as f64 * source_w as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipView {
    /// `[3, T, grid_h * frag, grid_w * frag]` in `[0, 1]`.
    pub data: Tensor<f32>,
    pub grid: FragmentGrid,
    pub temporal_indices: Vec<usize>,
    pub view_id: usize,
}

impl ClipView {
    /// The view as an RGB24 video, for inspection.
    pub fn to_raw_video(&self, fps_num: u64, fps_den: u64) -> Result<RawVideo> {
        let s = self.data.shape();
        let (t, h, w) = (s[1], s[2], s[3]);
        let d = self.data.data();
        let mut bytes = vec![0u8; t * h * w * 3];
        for c in 0..3 {
            for f in 0..t {
                for p in 0..h * w {
                    bytes[(f * h * w + p) * 3 + c] = (d[(c * t + f) * h * w + p] * 255.0).round() as u8;
                }
            }
        }
        RawVideo::new(w, h, fps_num, fps_den, t, bytes)
    }

    pub fn dump(&self, path: impl AsRef<Path>, fps_num: u64, fps_den: u64) -> Result<()> {
        media::write_raw_video(path, &self.to_raw_video(fps_num, fps_den)?)
    }
}

/// Copies the planned fragments of the given frames, tiled in grid order.
pub fn extract_view(v: &RawVideo, grid: &FragmentGrid, temporal_indices: &[usize], view_id: usize) -> Result<ClipView> {
    if grid.source_dims != (v.height, v.width) {
        return Err(Error::Geometry(format!(
            "grid planned for {:?}, video is {}x{}",
            grid.source_dims, v.height, v.width
        )));
    }
    if temporal_indices.is_empty() {
        return Err(Error::Geometry("view needs at least one frame".into()));
    }
    if let Some(&bad) = temporal_indices.iter().find(|&&i| i >= v.num_frames) {
        return Err(Error::Geometry(format!("frame {bad} out of range for {} frames", v.num_frames)));
    }
    let f = grid.frag_size;
    for &(top, left) in &grid.offsets {
        if top + f > v.height || left + f > v.width {
            return Err(Error::Geometry(format!("fragment at ({top},{left}) leaves the frame")));
        }
    }
    let (oh, ow) = grid.extent();
    let t = temporal_indices.len();
    let plane = oh * ow;
    let mut data = vec![0.0f32; 3 * t * plane];
    for (ti, &fi) in temporal_indices.iter().enumerate() {
        let frame = v.frame(fi);
        for r in 0..grid.grid_h {
            for c in 0..grid.grid_w {
                let (top, left) = grid.offset(r, c);
                for y in 0..f {
                    let src_row = ((top + y) * v.width + left) * 3;
                    let dst_row = (r * f + y) * ow + c * f;
                    for x in 0..f {
                        for ch in 0..3 {
                            data[(ch * t + ti) * plane + dst_row + x] = frame[src_row + x * 3 + ch] as f32 / 255.0;
                        }
                    }
                }
            }
        }
    }
    Ok(ClipView {
        data: Tensor::new(&[3, t, oh, ow], data)?,
        grid: grid.clone(),
        temporal_indices: temporal_indices.to_vec(),
        view_id,
    })
}

/// Geometry of the clip views fed to the VQA branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub grid: usize,
    pub frag_size: usize,
    pub clip_len: usize,
    pub stride: usize,
    pub n_views: usize,
}

impl ViewSpec {
    /// Full view: resizes sources below the fragment extent, picks the
    /// temporal window of `view_id` and plans a fresh grid from `rng`.
    pub fn view(&self, v: &RawVideo, view_id: usize, rng: &mut Rng) -> Result<ClipView> {
        let v = media::ensure_min_edge(v, self.grid * self.frag_size)?;
        let idx = sample_clip_indices(v.num_frames, self.clip_len, self.stride, view_id, self.n_views)?;
        let g = plan_grid(v.height, v.width, self.grid, self.frag_size, rng)?;
        extract_view(&v, &g, &idx, view_id)
    }
}
