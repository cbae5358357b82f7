//! Linear-prediction descriptors of flow windows.
//!
//! Every flow time series of a window gets its own order-`k` predictor
//! `x[t] ≈ Σ_{j=1..k} a[j]·x[t−j]`, fitted with the autocorrelation method and
//! the Levinson-Durbin recursion. The descriptor concatenates all predictors.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowgrid::FeatureWindow;

pub const DEFAULT_ORDER: usize = 9;
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LpcConfig {
    pub order: usize,
    /// Subtract each series' mean before fitting.
    pub mean_subtract: bool,
    /// Apply a Hamming taper before the autocorrelation.
    pub taper: bool,
}

impl Default for LpcConfig {
    fn default() -> Self {
        Self {
            order: DEFAULT_ORDER,
            mean_subtract: true,
            taper: false,
        }
    }
}

/// Biased, unnormalized autocorrelation `r[j] = Σ_{t=j}^{F−1} x[t]·x[t−j]`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if max_lag >= x.len() {
        return Err(Error::Invalid(format!(
            "max_lag {max_lag} needs more than {} samples",
            x.len()
        )));
    }
    Ok((0..=max_lag)
        .map(|j| x[j..].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevinsonSolution {
    /// Predictor coefficients `a[1..=k]`.
    pub coeffs: Vec<f64>,
    /// Final prediction-error energy.
    pub residual: f64,
    /// Reflection coefficient of each recursion stage.
    pub reflection: Vec<f64>,
}

/// Solves the order-`k` Toeplitz normal equations with a ridge
/// `r[0] += 1e-9·max(r[0], 1)`.
pub fn levinson_durbin(r: &[f64], k: usize) -> Result<LevinsonSolution> {
    if r.len() < k + 1 {
        return Err(Error::Invalid(format!(
            "order {k} needs {} autocorrelation lags, got {}",
            k + 1,
            r.len()
        )));
    }
    if r[..=k].iter().all(|&x| x == 0.0) {
        return Ok(LevinsonSolution {
            coeffs: vec![0.0; k],
            residual: 0.0,
            reflection: vec![0.0; k],
        });
    }
    let r0 = r[0] + 1e-9 * r[0].max(1.0);
    let mut a = vec![0.0f64; k + 1];
    let mut prev = vec![0.0f64; k + 1];
    let mut reflection = Vec::with_capacity(k);
    let mut err = r0;
    for i in 1..=k {
        let acc = r[i] - (1..i).map(|j| a[j] * r[i - j]).sum::<f64>();
        let kappa = if err > 0.0 { acc / err } else { 0.0 };
        prev[..i].copy_from_slice(&a[..i]);
        for j in 1..i {
            a[j] = prev[j] - kappa * prev[i - j];
        }
        a[i] = kappa;
        err *= 1.0 - kappa * kappa;
        err = err.max(0.0);
        reflection.push(kappa);
    }
    Ok(LevinsonSolution {
        coeffs: a[1..].to_vec(),
        residual: err,
        reflection,
    })
}

/// Concatenated predictor coefficients, series-major then coefficient index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpcDescriptor {
    pub coeffs: Vec<f64>,
}

impl LpcDescriptor {
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

pub fn lpc_descriptor(w: &FeatureWindow, cfg: &LpcConfig) -> Result<LpcDescriptor> {
    let k = cfg.order;
    if w.frames <= k {
        return Err(Error::Invalid(format!(
            "window of {} frames cannot fit order {k}",
            w.frames
        )));
    }
    let taper = cfg.taper.then(|| hamming(w.frames));
    let mut coeffs = Vec::with_capacity(w.n_series() * k);
    let mut buf = vec![0.0; w.frames];
    for s in 0..w.n_series() {
        let series = w.series(s);
        let mean = if cfg.mean_subtract {
            series.iter().sum::<f64>() / series.len() as f64
        } else {
            0.0
        };
        for (b, x) in buf.iter_mut().zip(series) {
            *b = x - mean;
        }
        if let Some(h) = &taper {
            buf.iter_mut().zip(h).for_each(|(b, h)| *b *= h);
        }
        let r = autocorrelation(&buf, k)?;
        coeffs.extend(levinson_durbin(&r, k)?.coeffs);
    }
    Ok(LpcDescriptor { coeffs })
}

/// Per-dimension z-scoring statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit(train: &[Vec<f64>]) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| Error::Invalid("cannot fit a normalizer on no data".into()))?;
        let d = first.len();
        if train.iter().any(|x| x.len() != d) {
            return Err(Error::Shape("training vectors of differing length".into()));
        }
        let n = train.len() as f64;
        let mut mean = vec![0.0; d];
        for x in train {
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for x in train {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::Shape(format!(
                "vector of length {} against {}-dimensional normalizer",
                x.len(),
                self.mean.len()
            )));
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }
}

pub fn fit_normalizer(train: &[LpcDescriptor]) -> Result<NormStats> {
    let rows: Vec<Vec<f64>> = train.iter().map(|d| d.coeffs.clone()).collect();
    NormStats::fit(&rows)
}

pub fn apply_normalizer(stats: &NormStats, d: &LpcDescriptor) -> Result<LpcDescriptor> {
    Ok(LpcDescriptor {
        coeffs: stats.apply(&d.coeffs)?,
    })
}

/// One row of a descriptor dump.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorRow {
    pub subject_id: String,
    pub sequence_id: String,
    pub t_start: f64,
    pub values: Vec<f64>,
}

/// CSV text: header then `subject_id,sequence_id,t_start,c0,…`.
pub fn descriptor_csv(rows: &[DescriptorRow]) -> String {
    let dim = rows.first().map_or(0, |r| r.values.len());
    let mut out = String::from("subject_id,sequence_id,t_start");
    for i in 0..dim {
        write!(out, ",c{i}").unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(out, "{},{},{}", r.subject_id, r.sequence_id, r.t_start).unwrap();
        for v in &r.values {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_descriptor_csv(text: &str, origin: &Path) -> Result<Vec<DescriptorRow>> {
    let bad = |line: usize, msg: &str| {
        Error::Format(format!("{}:{}: {msg}", origin.display(), line + 1))
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(0, "empty file"))?;
    let dim = header.split(',').count().saturating_sub(3);
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let subject_id = parts.next().ok_or_else(|| bad(i, "missing subject"))?.to_string();
        let sequence_id = parts.next().ok_or_else(|| bad(i, "missing sequence"))?.to_string();
        let t_start = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(i, "bad t_start"))?;
        let values = parts
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(i, "bad value"))?;
        if values.len() != dim {
            return Err(bad(i, "row width differs from header"));
        }
        rows.push(DescriptorRow {
            subject_id,
            sequence_id,
            t_start,
            values,
        });
    }
    Ok(rows)
}
