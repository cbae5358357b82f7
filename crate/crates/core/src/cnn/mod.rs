//! Temporal convolutional network over flow windows.
//!
//! ```text
//! x [2·cells × F]  ─conv(K_T, M kernels spanning every series)→  z [M × (F−K_T+1)]
//!   ─ReLU→ ─pool(len, stride)→  a [M × P]  ─fc1 + sigmoid→  h [N_1]
//!   ─fc2 + softmax→  p [classes]
//! ```
//!
//! The convolution slides over time only: each kernel covers all cells and
//! both flow components. `h` is the learned descriptor. All arithmetic is in
//! `f64`; parameters are rounded to `f32` once training ends so the model
//! file reproduces them exactly.

mod io;
mod net;
mod train;
mod visual;

pub use io::{cnn_model_bytes, cnn_model_from_bytes, read_cnn_model, write_cnn_model, CNN_MAGIC, CNN_VERSION};
pub use net::{adagrad_step, loss_and_grads, CnnParams, Forward, ADAGRAD_EPS};
pub use train::{train, TrainReport};
pub use visual::{visualize_filter, write_filter_pngs, FilterImage};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowgrid::{sqrt_normalize, FeatureWindow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Max,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    /// Temporal kernel length in frames.
    pub k_t: usize,
    /// Number of kernels.
    pub m: usize,
    pub pool_len: usize,
    pub pool_stride: usize,
    pub pooling: Pooling,
    /// Hidden (descriptor) width.
    pub n_1: usize,
    /// Number of classes; `0` lets training take it from the class list.
    pub n_classes: usize,
    pub lr: f64,
    pub batch: usize,
    /// Maximum number of epochs.
    pub epochs: usize,
    /// Stop once the epoch loss improved by less than this fraction over
    /// `plateau_epochs` epochs. `0` disables early stopping.
    pub plateau_tol: f64,
    pub plateau_epochs: usize,
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            k_t: 20,
            m: 128,
            pool_len: 20,
            pool_stride: 15,
            pooling: Pooling::Max,
            n_1: 128,
            n_classes: 0,
            lr: 0.01,
            batch: 200,
            epochs: 50,
            plateau_tol: 1e-4,
            plateau_epochs: 5,
            seed: 0,
        }
    }
}

impl CnnConfig {
    /// Length of the convolution output for `frames` input frames.
    pub fn conv_len(&self, frames: usize) -> usize {
        (frames + 1).saturating_sub(self.k_t)
    }

    /// Pooled temporal length `P`.
    pub fn pooled_len(&self, frames: usize) -> usize {
        let t = self.conv_len(frames);
        if t < self.pool_len || self.pool_stride == 0 {
            0
        } else {
            (t - self.pool_len) / self.pool_stride + 1
        }
    }

    pub fn validate(&self, frames: usize) -> Result<()> {
        if self.k_t == 0 || self.m == 0 || self.n_1 == 0 || self.pool_len == 0 || self.pool_stride == 0 {
            return Err(Error::Invalid("CNN sizes must be positive".into()));
        }
        if self.k_t > frames {
            return Err(Error::Invalid(format!(
                "kernel length {} exceeds window length {frames}",
                self.k_t
            )));
        }
        if self.pooled_len(frames) == 0 {
            return Err(Error::Invalid(format!(
                "pool length {} exceeds convolution output {}",
                self.pool_len,
                self.conv_len(frames)
            )));
        }
        if !(self.lr > 0.0) || self.batch == 0 || self.epochs == 0 {
            return Err(Error::Invalid("lr, batch and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Window geometry a model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub m_x: usize,
    pub m_y: usize,
    pub frames: usize,
}

impl InputShape {
    pub fn of(w: &FeatureWindow) -> Self {
        Self {
            m_x: w.m_x,
            m_y: w.m_y,
            frames: w.frames,
        }
    }

    /// Number of input rows (series).
    pub fn rows(&self) -> usize {
        2 * self.m_x * self.m_y
    }

    pub fn len(&self) -> usize {
        self.rows() * self.frames
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub config: CnnConfig,
    pub shape: InputShape,
    pub classes: Vec<String>,
    /// Per-element training mean of the square-root-normalized windows.
    pub input_mean: Vec<f64>,
    pub params: CnnParams,
    pub report: TrainReport,
    /// Caller-owned description of how windows were produced.
    pub frontend: serde_json::Value,
}

impl CnnModel {
    fn check(&self, w: &FeatureWindow) -> Result<()> {
        if InputShape::of(w) != self.shape || w.data.len() != self.shape.len() {
            return Err(Error::Shape(format!(
                "window {}×{}×{} does not match model input {}×{}×{}",
                w.m_x, w.m_y, w.frames, self.shape.m_x, self.shape.m_y, self.shape.frames
            )));
        }
        Ok(())
    }

    /// Square-root normalization followed by training-mean subtraction.
    pub fn prepare(&self, w: &FeatureWindow) -> Result<Vec<f64>> {
        self.check(w)?;
        Ok(prepare_with(w, &self.input_mean))
    }

    /// Runs a raw window (preprocessing included) through the network.
    pub fn forward(&self, w: &FeatureWindow) -> Result<Forward> {
        let x = self.prepare(w)?;
        Ok(self.params.forward(&self.config, &x))
    }

    pub fn predict_proba(&self, w: &FeatureWindow) -> Result<Vec<f64>> {
        Ok(self.forward(w)?.probs)
    }

    /// The hidden-layer activation used as a learned descriptor.
    pub fn extract_descriptor(&self, w: &FeatureWindow) -> Result<Vec<f64>> {
        Ok(self.forward(w)?.hidden)
    }
}

pub(crate) fn prepare_with(w: &FeatureWindow, mean: &[f64]) -> Vec<f64> {
    let mut x = sqrt_normalize(w).data;
    for (v, m) in x.iter_mut().zip(mean) {
        *v -= m;
    }
    x
}
