//! Sparse grid optical flow and fixed-length feature windows.
//!
//! Each frame is split into `m_x × m_y` non-overlapping blocks and one
//! Lucas-Kanade vector is tracked at every block center. Consecutive flow
//! fields are stacked into windows of `T` seconds laid out as
//! `[component][cell][frame]`, with cells in row-major grid order.

mod cache;
mod lk;

pub use cache::{read_flow_cache, write_flow_cache, FlowSequence, FLOW_MAGIC, FLOW_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Fps, GrayFrame};

/// Frame rate every sequence is brought to before windowing.
pub const TARGET_FPS: Fps = Fps::integer(15);
/// Window length in seconds.
pub const WINDOW_SECONDS: f64 = 4.0;
/// Window start spacing in seconds.
pub const STRIDE_SECONDS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowGridSpec {
    pub m_x: usize,
    pub m_y: usize,
    pub pyramid_levels: usize,
    pub lk_window: usize,
    pub lk_iterations: usize,
    /// Convergence threshold on the per-iteration update, in pixels.
    pub lk_epsilon: f64,
    pub min_eig_threshold: f64,
}

impl Default for FlowGridSpec {
    fn default() -> Self {
        Self {
            m_x: 10,
            m_y: 5,
            pyramid_levels: 3,
            lk_window: 21,
            lk_iterations: 20,
            lk_epsilon: 0.01,
            min_eig_threshold: 1e-4,
        }
    }
}

impl FlowGridSpec {
    pub fn cells(&self) -> usize {
        self.m_x * self.m_y
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_x == 0 || self.m_y == 0 || self.pyramid_levels == 0 || self.lk_iterations == 0 {
            return Err(Error::Invalid("grid spec fields must be positive".into()));
        }
        if self.lk_window % 2 == 0 {
            return Err(Error::Invalid(format!(
                "lk_window must be odd, got {}",
                self.lk_window
            )));
        }
        if self.min_eig_threshold < 0.0 {
            return Err(Error::Invalid("min_eig_threshold must be non-negative".into()));
        }
        Ok(())
    }

    /// Pixel coordinates of the block centers, row-major.
    pub fn cell_centers(&self, width: usize, height: usize) -> Vec<(f64, f64)> {
        let bw = width as f64 / self.m_x as f64;
        let bh = height as f64 / self.m_y as f64;
        let mut out = Vec::with_capacity(self.cells());
        for r in 0..self.m_y {
            for c in 0..self.m_x {
                out.push(((c as f64 + 0.5) * bw - 0.5, (r as f64 + 0.5) * bh - 0.5));
            }
        }
        out
    }
}

/// One frame pair's grid of flow vectors, row-major `[m_y][m_x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub m_x: usize,
    pub m_y: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn zeros(m_x: usize, m_y: usize) -> Self {
        let n = m_x * m_y;
        Self {
            m_x,
            m_y,
            u: vec![0.0; n],
            v: vec![0.0; n],
            valid: vec![true; n],
        }
    }

    pub fn cells(&self) -> usize {
        self.m_x * self.m_y
    }
}

pub fn compute_grid_flow(prev: &GrayFrame, next: &GrayFrame, spec: &FlowGridSpec) -> Result<FlowField> {
    spec.validate()?;
    if (prev.width, prev.height) != (next.width, next.height) {
        return Err(Error::Shape(format!(
            "frame sizes differ: {}x{} vs {}x{}",
            prev.width, prev.height, next.width, next.height
        )));
    }
    if prev.width < spec.m_x * spec.lk_window || prev.height < spec.m_y * spec.lk_window {
        return Err(Error::Shape(format!(
            "frame {}x{} too small for a {}x{} grid with {} px windows",
            prev.width, prev.height, spec.m_x, spec.m_y, spec.lk_window
        )));
    }
    let a = lk::build_pyramid(prev, spec.pyramid_levels);
    let b = lk::build_pyramid(next, spec.pyramid_levels);
    let params = lk::LkParams {
        window: spec.lk_window,
        iterations: spec.lk_iterations,
        epsilon: spec.lk_epsilon,
        min_eig: spec.min_eig_threshold,
    };
    let mut field = FlowField::zeros(spec.m_x, spec.m_y);
    for (i, (x, y)) in spec.cell_centers(prev.width, prev.height).into_iter().enumerate() {
        let t = lk::track_point(&a, &b, x, y, &params);
        field.u[i] = t.dx;
        field.v[i] = t.dy;
        field.valid[i] = t.valid;
    }
    Ok(field)
}

/// Source frame indices that bring `n_frames` at `src` to the `dst` rate by
/// nearest-frame selection.
pub fn resample_indices(n_frames: usize, src: Fps, dst: Fps) -> Vec<usize> {
    if src == dst || n_frames == 0 {
        return (0..n_frames).collect();
    }
    let duration = n_frames as f64 / src.as_f64();
    let n_out = ((duration * dst.as_f64()).floor() as usize).max(1);
    (0..n_out)
        .map(|k| {
            // Integer arithmetic: k * (src.num * dst.den) / (src.den * dst.num), rounded.
            let num = k as u128 * src.num as u128 * dst.den as u128;
            let den = src.den as u128 * dst.num as u128;
            (((2 * num + den) / (2 * den)) as usize).min(n_frames - 1)
        })
        .collect()
}

/// `T` seconds of grid flow, `[2][cells][frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    pub m_x: usize,
    pub m_y: usize,
    pub frames: usize,
    pub data: Vec<f64>,
    pub t_start: f64,
    pub fps: Fps,
    pub subject_id: Option<String>,
}

impl FeatureWindow {
    pub fn zeros(m_x: usize, m_y: usize, frames: usize, fps: Fps) -> Self {
        Self {
            m_x,
            m_y,
            frames,
            data: vec![0.0; 2 * m_x * m_y * frames],
            t_start: 0.0,
            fps,
            subject_id: None,
        }
    }

    pub fn cells(&self) -> usize {
        self.m_x * self.m_y
    }

    /// Number of scalar time series (components × cells).
    pub fn n_series(&self) -> usize {
        2 * self.cells()
    }

    #[inline]
    pub fn index(&self, component: usize, cell: usize, t: usize) -> usize {
        (component * self.cells() + cell) * self.frames + t
    }

    /// Time series `s` (component-major, then cell).
    pub fn series(&self, s: usize) -> &[f64] {
        &self.data[s * self.frames..(s + 1) * self.frames]
    }
}

/// Frame count of one window at `fps`.
pub fn window_frames(fps: Fps, seconds: f64) -> usize {
    fps.frames_in(seconds)
}

/// Closed-form number of windows for `n_flows` flow fields.
pub fn window_count(n_flows: usize, fps: Fps, window_s: f64, stride_s: f64) -> usize {
    let f = fps.frames_in(window_s);
    let s = fps.frames_in(stride_s).max(1);
    if f == 0 || n_flows < f {
        0
    } else {
        (n_flows - f) / s + 1
    }
}

pub fn build_windows(
    flows: &[FlowField],
    fps: Fps,
    window_s: f64,
    stride_s: f64,
) -> Result<Vec<FeatureWindow>> {
    let f = fps.frames_in(window_s);
    let stride = fps.frames_in(stride_s);
    if f == 0 || stride == 0 {
        return Err(Error::Invalid(format!(
            "window {window_s}s / stride {stride_s}s round to zero frames at {fps} fps"
        )));
    }
    if flows.len() < f {
        return Err(Error::TooShort(format!(
            "{} flow fields, a {window_s}s window at {fps} fps needs {f}",
            flows.len()
        )));
    }
    let (m_x, m_y) = (flows[0].m_x, flows[0].m_y);
    if flows.iter().any(|fl| fl.m_x != m_x || fl.m_y != m_y) {
        return Err(Error::Shape("flow fields with differing grids".into()));
    }
    let cells = m_x * m_y;
    let count = (flows.len() - f) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * stride;
        let mut win = FeatureWindow::zeros(m_x, m_y, f, fps);
        win.t_start = start as f64 / fps.as_f64();
        for (t, fl) in flows[start..start + f].iter().enumerate() {
            for cell in 0..cells {
                win.data[cell * f + t] = fl.u[cell];
                win.data[(cells + cell) * f + t] = fl.v[cell];
            }
        }
        out.push(win);
    }
    Ok(out)
}

/// `x ↦ sign(x)·sqrt(|x|)`.
pub fn sqrt_normalize(w: &FeatureWindow) -> FeatureWindow {
    let mut out = w.clone();
    for x in &mut out.data {
        *x = x.signum() * x.abs().sqrt();
    }
    out
}

/// Removes each frame's mean flow vector (per component over all cells).
pub fn stabilize_mean_subtract(w: &FeatureWindow) -> FeatureWindow {
    let mut out = w.clone();
    let cells = w.cells();
    for c in 0..2 {
        for t in 0..w.frames {
            let mean =
                (0..cells).map(|cell| w.data[w.index(c, cell, t)]).sum::<f64>() / cells as f64;
            for cell in 0..cells {
                let i = w.index(c, cell, t);
                out.data[i] -= mean;
            }
        }
    }
    out
}

/// Per-frame mean removal applied directly to flow fields.
pub fn stabilize_field(f: &FlowField) -> FlowField {
    let n = f.cells() as f64;
    let mu = f.u.iter().sum::<f64>() / n;
    let mv = f.v.iter().sum::<f64>() / n;
    FlowField {
        u: f.u.iter().map(|x| x - mu).collect(),
        v: f.v.iter().map(|x| x - mv).collect(),
        ..f.clone()
    }
}
