use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{CnnConfig, InputShape, Pooling};
use crate::error::{Error, Result};

pub const ADAGRAD_EPS: f64 = 1e-8;

/// Network weights. Convolution kernels are stored `[m][row][k]` with
/// `row = component·cells + cell`, dense layers row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams {
    pub rows: usize,
    pub k_t: usize,
    pub m: usize,
    /// Pooled temporal length.
    pub p: usize,
    pub n_1: usize,
    pub n_classes: usize,
    pub conv_w: Vec<f64>,
    pub conv_b: Vec<f64>,
    pub fc1_w: Vec<f64>,
    pub fc1_b: Vec<f64>,
    pub fc2_w: Vec<f64>,
    pub fc2_b: Vec<f64>,
}

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub probs: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    /// Pooled ReLU activations, `[m][p]`.
    pub pooled: Vec<f64>,
    pub(crate) cols: Vec<f64>,
    pub(crate) conv: Vec<f64>,
    pub(crate) arg: Vec<usize>,
}

impl CnnParams {
    pub fn zeros(cfg: &CnnConfig, shape: InputShape, n_classes: usize) -> Self {
        let rows = shape.rows();
        let p = cfg.pooled_len(shape.frames);
        Self {
            rows,
            k_t: cfg.k_t,
            m: cfg.m,
            p,
            n_1: cfg.n_1,
            n_classes,
            conv_w: vec![0.0; cfg.m * rows * cfg.k_t],
            conv_b: vec![0.0; cfg.m],
            fc1_w: vec![0.0; cfg.n_1 * cfg.m * p],
            fc1_b: vec![0.0; cfg.n_1],
            fc2_w: vec![0.0; n_classes * cfg.n_1],
            fc2_b: vec![0.0; n_classes],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(cfg: &CnnConfig, shape: InputShape, n_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(cfg, shape, n_classes);
        let mut fill = |w: &mut [f64], fan_in: usize, fan_out: usize| {
            let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in w {
                *x = rng.random_range(-lim..lim);
            }
        };
        fill(&mut p.conv_w, p.rows * p.k_t, p.m * p.k_t);
        fill(&mut p.fc1_w, p.m * p.p, p.n_1);
        fill(&mut p.fc2_w, p.n_1, p.n_classes);
        p
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
        z
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [&self.conv_w, &self.conv_b, &self.fc1_w, &self.fc1_b, &self.fc2_w, &self.fc2_b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Rounds every weight to the nearest `f32`.
    pub fn quantize_f32(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }

    fn conv_len(&self, frames: usize) -> usize {
        frames + 1 - self.k_t
    }

    /// Forward pass on a prepared input `[rows][frames]`.
    pub fn forward(&self, cfg: &CnnConfig, x: &[f64]) -> Forward {
        let frames = x.len() / self.rows;
        let t_len = self.conv_len(frames);
        let dk = self.rows * self.k_t;

        // im2col: cols[(r·K + k)][t] = x[r][t + k]
        let mut cols = vec![0.0; dk * t_len];
        for r in 0..self.rows {
            let src = &x[r * frames..(r + 1) * frames];
            for k in 0..self.k_t {
                let dst = &mut cols[(r * self.k_t + k) * t_len..][..t_len];
                dst.copy_from_slice(&src[k..k + t_len]);
            }
        }
        let mut conv = vec![0.0; self.m * t_len];
        for (row, b) in conv.chunks_exact_mut(t_len).zip(&self.conv_b) {
            row.fill(*b);
        }
        // SAFETY: dimensions and strides describe the allocated buffers.
        unsafe {
            matrixmultiply::dgemm(
                self.m,
                dk,
                t_len,
                1.0,
                self.conv_w.as_ptr(),
                dk as isize,
                1,
                cols.as_ptr(),
                t_len as isize,
                1,
                1.0,
                conv.as_mut_ptr(),
                t_len as isize,
                1,
            );
        }

        let mut pooled = vec![0.0; self.m * self.p];
        let mut arg = vec![0usize; self.m * self.p];
        for mi in 0..self.m {
            let z = &conv[mi * t_len..(mi + 1) * t_len];
            for pi in 0..self.p {
                let start = pi * cfg.pool_stride;
                let span = &z[start..start + cfg.pool_len];
                let out = mi * self.p + pi;
                match cfg.pooling {
                    Pooling::Max => {
                        let mut best = 0;
                        for (t, &v) in span.iter().enumerate() {
                            if v.max(0.0) > span[best].max(0.0) {
                                best = t;
                            }
                        }
                        arg[out] = start + best;
                        pooled[out] = span[best].max(0.0);
                    }
                    Pooling::Average => {
                        pooled[out] = span.iter().map(|v| v.max(0.0)).sum::<f64>() / cfg.pool_len as f64;
                    }
                }
            }
        }

        let n_in = self.m * self.p;
        let hidden: Vec<f64> = (0..self.n_1)
            .map(|o| {
                let w = &self.fc1_w[o * n_in..(o + 1) * n_in];
                sigmoid(self.fc1_b[o] + dot(w, &pooled))
            })
            .collect();
        let logits: Vec<f64> = (0..self.n_classes)
            .map(|o| self.fc2_b[o] + dot(&self.fc2_w[o * self.n_1..(o + 1) * self.n_1], &hidden))
            .collect();
        let probs = softmax(&logits);
        Forward {
            probs,
            hidden,
            logits,
            pooled,
            cols,
            conv,
            arg,
        }
    }

    /// Adds `scale · ∂(−log p_label)/∂θ` to `grads`.
    fn backward(&self, cfg: &CnnConfig, fw: &Forward, label: usize, scale: f64, grads: &mut CnnParams) {
        let t_len = fw.conv.len() / self.m;
        let dk = self.rows * self.k_t;
        let n_in = self.m * self.p;

        let mut dlogit = fw.probs.clone();
        dlogit[label] -= 1.0;
        dlogit.iter_mut().for_each(|d| *d *= scale);

        let mut dh = vec![0.0; self.n_1];
        for (o, &d) in dlogit.iter().enumerate() {
            grads.fc2_b[o] += d;
            let w = &self.fc2_w[o * self.n_1..(o + 1) * self.n_1];
            let g = &mut grads.fc2_w[o * self.n_1..(o + 1) * self.n_1];
            for j in 0..self.n_1 {
                g[j] += d * fw.hidden[j];
                dh[j] += d * w[j];
            }
        }

        let mut dpooled = vec![0.0; n_in];
        for o in 0..self.n_1 {
            let h = fw.hidden[o];
            let d = dh[o] * h * (1.0 - h);
            grads.fc1_b[o] += d;
            let w = &self.fc1_w[o * n_in..(o + 1) * n_in];
            let g = &mut grads.fc1_w[o * n_in..(o + 1) * n_in];
            for j in 0..n_in {
                g[j] += d * fw.pooled[j];
                dpooled[j] += d * w[j];
            }
        }

        let mut dconv = vec![0.0; self.m * t_len];
        for mi in 0..self.m {
            for pi in 0..self.p {
                let d = dpooled[mi * self.p + pi];
                match cfg.pooling {
                    Pooling::Max => {
                        let t = fw.arg[mi * self.p + pi];
                        if fw.conv[mi * t_len + t] > 0.0 {
                            dconv[mi * t_len + t] += d;
                        }
                    }
                    Pooling::Average => {
                        let start = pi * cfg.pool_stride;
                        let share = d / cfg.pool_len as f64;
                        for t in start..start + cfg.pool_len {
                            if fw.conv[mi * t_len + t] > 0.0 {
                                dconv[mi * t_len + t] += share;
                            }
                        }
                    }
                }
            }
            grads.conv_b[mi] += dconv[mi * t_len..(mi + 1) * t_len].iter().sum::<f64>();
        }
        // dW += dZ · colsᵀ
        // SAFETY: dimensions and strides describe the allocated buffers.
        unsafe {
            matrixmultiply::dgemm(
                self.m,
                t_len,
                dk,
                1.0,
                dconv.as_ptr(),
                t_len as isize,
                1,
                fw.cols.as_ptr(),
                1,
                t_len as isize,
                1.0,
                grads.conv_w.as_mut_ptr(),
                dk as isize,
                1,
            );
        }
    }
}

/// Mean cross-entropy of a batch of prepared inputs and its gradient.
pub fn loss_and_grads(
    params: &CnnParams,
    cfg: &CnnConfig,
    inputs: &[&[f64]],
    labels: &[usize],
) -> Result<(f64, CnnParams)> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} inputs with {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    let mut grads = params.zeros_like();
    let scale = 1.0 / inputs.len() as f64;
    let mut loss = 0.0;
    for (x, &l) in inputs.iter().zip(labels) {
        if l >= params.n_classes {
            return Err(Error::Invalid(format!("label {l} out of range")));
        }
        if x.len() % params.rows != 0 || x.len() / params.rows < params.k_t {
            return Err(Error::Shape(format!("input of length {} does not fit the network", x.len())));
        }
        let fw = params.forward(cfg, x);
        loss -= log_softmax_at(&fw.logits, l);
        params.backward(cfg, &fw, l, scale, &mut grads);
    }
    Ok((loss * scale, grads))
}

/// One AdaGrad update: `acc += g²; θ −= lr·g / (√acc + ε)`.
pub fn adagrad_step(params: &mut CnnParams, grads: &CnnParams, accum: &mut CnnParams, lr: f64) {
    for ((p, g), a) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(accum.tensors_mut())
    {
        for ((p, &g), a) in p.iter_mut().zip(g).zip(a.iter_mut()) {
            *a += g * g;
            *p -= lr * g / (a.sqrt() + ADAGRAD_EPS);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn log_softmax_at(logits: &[f64], i: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[i] - lse
}
