//! RBF-kernel support vector machines trained with SMO, calibrated with Platt
//! scaling, and combined one-vs-rest (default) or one-vs-one for multiclass
//! problems.

pub(crate) mod io;
mod kernel;
pub mod platt;
mod smo;

pub use io::{read_svm_model, svm_model_bytes, svm_model_from_bytes, write_svm_model, SvmModelFile, SVM_MAGIC, SVM_VERSION};
pub use kernel::{squared_distance, Gram};
pub use platt::Sigmoid;
pub use smo::SolverStats;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use kernel::{LruRows, RowSource};

/// Probabilities are floored here before normalization.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Multiclass {
    OneVsRest,
    OneVsOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub c: f64,
    /// Coefficient in `exp(−gamma·‖x − y‖²)`.
    pub gamma: f64,
    pub tol: f64,
    /// Iteration cap, in units of the training-set size.
    pub max_passes: usize,
    /// Kernel cache budget in bytes.
    pub cache_bytes: usize,
    pub multiclass: Multiclass,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            gamma: 1e-4,
            tol: 1e-3,
            max_passes: 1000,
            cache_bytes: 512 << 20,
            multiclass: Multiclass::OneVsRest,
        }
    }
}

impl SvmConfig {
    /// Defaults for normalized LPC descriptors.
    pub fn lpc() -> Self {
        Self::default()
    }

    /// Defaults for raw flow windows.
    pub fn raw() -> Self {
        Self {
            c: 10.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.c > 0.0
            && self.gamma > 0.0
            && self.tol > 0.0
            && self.max_passes > 0
            && self.c.is_finite()
            && self.gamma.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("SVM config fields must be positive: {self:?}")))
        }
    }
}

pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "kernel arguments of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(kernel::rbf(gamma, x, y))
}

/// One binary machine whose support vectors live in a shared pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    /// Class index treated as +1.
    pub positive: usize,
    /// Class index treated as −1; `None` means every other class.
    pub negative: Option<usize>,
    /// Indices into the pool.
    pub sv: Vec<u32>,
    pub alphas: Vec<f64>,
    pub labels: Vec<i8>,
    pub bias: f64,
    pub platt: Sigmoid,
}

impl Member {
    fn decision_from_kernel(&self, k: &[f64]) -> f64 {
        self.sv
            .iter()
            .zip(&self.alphas)
            .zip(&self.labels)
            .map(|((&i, &a), &y)| a * y as f64 * k[i as usize])
            .sum::<f64>()
            + self.bias
    }
}

/// A trained binary machine.
#[derive(Debug, Clone)]
pub struct BinarySvm {
    pub gamma: f64,
    pub support_vectors: Vec<Vec<f64>>,
    pub member: Member,
    pub stats: SolverStats,
}

impl BinarySvm {
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.support_vectors.first().map_or(x.len(), Vec::len), x)?;
        let k: Vec<f64> = self
            .support_vectors
            .iter()
            .map(|s| kernel::rbf(self.gamma, s, x))
            .collect();
        Ok(self.member.decision_from_kernel(&k))
    }

    /// Calibrated probability of the +1 class.
    pub fn probability(&self, x: &[f64]) -> Result<f64> {
        Ok(self.member.platt.probability(self.decision(x)?))
    }

    pub fn alphas(&self) -> &[f64] {
        &self.member.alphas
    }

    pub fn bias(&self) -> f64 {
        self.member.bias
    }
}

fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::Shape(format!(
            "feature vector of length {} for a {expected}-dimensional model",
            x.len()
        )));
    }
    Ok(())
}

fn check_data(xs: &[Vec<f64>]) -> Result<usize> {
    let dim = xs
        .first()
        .ok_or_else(|| Error::Invalid("no training data".into()))?
        .len();
    for (i, x) in xs.iter().enumerate() {
        if x.len() != dim {
            return Err(Error::Shape(format!(
                "training vector {i} has length {}, expected {dim}",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("training vector {i} has a non-finite feature")));
        }
    }
    Ok(dim)
}

/// Output of one solve on a subset, before pooling.
struct Fitted {
    /// Training-set indices of the support vectors.
    sv: Vec<usize>,
    alphas: Vec<f64>,
    labels: Vec<i8>,
    bias: f64,
    platt: Sigmoid,
    stats: SolverStats,
}

fn fit_on(rows: &mut RowSource<'_>, y: &[f64], cfg: &SvmConfig) -> Fitted {
    let n = y.len();
    let sol = smo::solve(rows, y, cfg.c, cfg.tol, cfg.max_passes.saturating_mul(n.max(1)));
    let sv: Vec<usize> = (0..n).filter(|&i| sol.alpha[i] > 0.0).collect();
    // Training decision values for calibration.
    let decisions: Vec<f64> = (0..n)
        .map(|t| {
            let kt = rows.row(t);
            sv.iter().map(|&i| sol.alpha[i] * y[i] * kt[i]).sum::<f64>() + sol.bias
        })
        .collect();
    let positive: Vec<bool> = y.iter().map(|&v| v > 0.0).collect();
    let platt = platt::fit(&decisions, &positive);
    Fitted {
        alphas: sv.iter().map(|&i| sol.alpha[i]).collect(),
        labels: sv.iter().map(|&i| y[i] as i8).collect(),
        sv,
        bias: sol.bias,
        platt,
        stats: sol.stats,
    }
}

fn row_source<'a>(xs: &'a [Vec<f64>], gram: Option<&'a Gram>, cfg: &SvmConfig) -> RowSource<'a> {
    match gram {
        Some(g) => RowSource::Full(g),
        None => RowSource::Lru(LruRows::new(xs, cfg.gamma, cfg.cache_bytes)),
    }
}

fn maybe_gram(xs: &[Vec<f64>], cfg: &SvmConfig) -> Option<Gram> {
    (Gram::bytes(xs.len()) <= cfg.cache_bytes).then(|| Gram::compute(xs, cfg.gamma))
}

/// Trains one machine on labels ±1.
pub fn train_binary(xs: &[Vec<f64>], y: &[i8], cfg: &SvmConfig) -> Result<BinarySvm> {
    cfg.validate()?;
    check_data(xs)?;
    if xs.len() != y.len() {
        return Err(Error::Shape(format!("{} vectors but {} labels", xs.len(), y.len())));
    }
    if let Some(bad) = y.iter().find(|&&v| v != 1 && v != -1) {
        return Err(Error::Invalid(format!("binary labels must be ±1, got {bad}")));
    }
    if !(y.contains(&1) && y.contains(&-1)) {
        return Err(Error::Invalid("binary training needs both classes".into()));
    }
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let gram = maybe_gram(xs, cfg);
    let mut rows = row_source(xs, gram.as_ref(), cfg);
    let fit = fit_on(&mut rows, &yf, cfg);
    Ok(BinarySvm {
        gamma: cfg.gamma,
        support_vectors: fit.sv.iter().map(|&i| xs[i].clone()).collect(),
        member: Member {
            positive: 1,
            negative: Some(0),
            sv: (0..fit.sv.len() as u32).collect(),
            alphas: fit.alphas,
            labels: fit.labels,
            bias: fit.bias,
            platt: fit.platt,
        },
        stats: fit.stats,
    })
}

/// Multiclass machine over a pooled set of support vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmEnsemble {
    pub config: SvmConfig,
    pub classes: Vec<String>,
    pub dim: usize,
    pub pool: Vec<Vec<f64>>,
    pub members: Vec<Member>,
}

/// Trains a multiclass ensemble; `labels[i]` indexes `classes`.
pub fn train_multiclass(
    xs: &[Vec<f64>],
    labels: &[usize],
    classes: &[String],
    cfg: &SvmConfig,
) -> Result<SvmEnsemble> {
    cfg.validate()?;
    let dim = check_data(xs)?;
    if xs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} vectors but {} labels",
            xs.len(),
            labels.len()
        )));
    }
    if classes.len() < 2 {
        return Err(Error::Invalid("multiclass training needs at least two classes".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes.len()) {
        return Err(Error::Invalid(format!("label {l} out of range")));
    }
    for (k, name) in classes.iter().enumerate() {
        if !labels.contains(&k) {
            return Err(Error::Invalid(format!("class `{name}` has no training data")));
        }
    }

    let gram = maybe_gram(xs, cfg);
    let mut fitted: Vec<(usize, Option<usize>, Fitted)> = Vec::new();
    let two_class = classes.len() == 2;
    match cfg.multiclass {
        Multiclass::OneVsRest if two_class => {
            let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
            let mut rows = row_source(xs, gram.as_ref(), cfg);
            fitted.push((1, Some(0), fit_on(&mut rows, &y, cfg)));
        }
        Multiclass::OneVsRest => {
            for k in 0..classes.len() {
                let y: Vec<f64> = labels.iter().map(|&l| if l == k { 1.0 } else { -1.0 }).collect();
                let mut rows = row_source(xs, gram.as_ref(), cfg);
                fitted.push((k, None, fit_on(&mut rows, &y, cfg)));
            }
        }
        Multiclass::OneVsOne => {
            for a in 0..classes.len() {
                for b in a + 1..classes.len() {
                    let idx: Vec<usize> = (0..xs.len())
                        .filter(|&i| labels[i] == a || labels[i] == b)
                        .collect();
                    let y: Vec<f64> = idx
                        .iter()
                        .map(|&i| if labels[i] == a { 1.0 } else { -1.0 })
                        .collect();
                    let mut fit = match &gram {
                        Some(g) => {
                            let sub = g.subset(&idx);
                            let mut rows = RowSource::Full(&sub);
                            fit_on(&mut rows, &y, cfg)
                        }
                        None => {
                            let sub: Vec<Vec<f64>> = idx.iter().map(|&i| xs[i].clone()).collect();
                            let mut rows = RowSource::Lru(LruRows::new(&sub, cfg.gamma, cfg.cache_bytes));
                            fit_on(&mut rows, &y, cfg)
                        }
                    };
                    fit.sv = fit.sv.iter().map(|&s| idx[s]).collect();
                    fitted.push((a, Some(b), fit));
                }
            }
        }
    }

    // Pool the union of support vectors, in training order.
    let mut used = vec![false; xs.len()];
    for (_, _, f) in &fitted {
        for &i in &f.sv {
            used[i] = true;
        }
    }
    let mut remap = vec![u32::MAX; xs.len()];
    let mut pool = Vec::new();
    for (i, u) in used.iter().enumerate() {
        if *u {
            remap[i] = pool.len() as u32;
            pool.push(xs[i].clone());
        }
    }
    let members = fitted
        .into_iter()
        .map(|(positive, negative, f)| Member {
            positive,
            negative,
            sv: f.sv.iter().map(|&i| remap[i]).collect(),
            alphas: f.alphas,
            labels: f.labels,
            bias: f.bias,
            platt: f.platt,
        })
        .collect();
    Ok(SvmEnsemble {
        config: *cfg,
        classes: classes.to_vec(),
        dim,
        pool,
        members,
    })
}

impl SvmEnsemble {
    fn kernel_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x)?;
        Ok(self
            .pool
            .iter()
            .map(|s| kernel::rbf(self.config.gamma, s, x))
            .collect())
    }

    /// Raw decision value of every member.
    pub fn decisions(&self, x: &[f64]) -> Result<Vec<f64>> {
        let k = self.kernel_row(x)?;
        Ok(self.members.iter().map(|m| m.decision_from_kernel(&k)).collect())
    }

    /// Distribution over `classes`.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let dec = self.decisions(x)?;
        let n = self.classes.len();
        let mut p = vec![0.0; n];
        match (self.members.len(), self.members.first()) {
            (1, Some(m)) if m.negative.is_some() => {
                let q = m.platt.probability(dec[0]);
                p[m.positive] = q;
                p[m.negative.unwrap()] = 1.0 - q;
            }
            _ => {
                for (m, &d) in self.members.iter().zip(&dec) {
                    match m.negative {
                        None => p[m.positive] = m.platt.probability(d),
                        Some(neg) => {
                            if d > 0.0 {
                                p[m.positive] += 1.0;
                            } else {
                                p[neg] += 1.0;
                            }
                        }
                    }
                }
            }
        }
        p.iter_mut().for_each(|v| *v = v.max(PROB_FLOOR));
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        Ok(p)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(crate::eval::argmax(&self.predict_proba(x)?))
    }
}
