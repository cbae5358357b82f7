use std::borrow::Borrow;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::net::{adagrad_step, loss_and_grads, CnnParams};
use super::{prepare_with, CnnConfig, CnnModel, InputShape};
use crate::error::{Error, Result};
use crate::flowgrid::{sqrt_normalize, FeatureWindow};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss of each epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Mini-batch AdaGrad on mean cross-entropy, reshuffling every epoch.
///
/// Deterministic for a fixed `cfg.seed`: initialization and shuffling draw
/// from separate derived streams, and gradients are reduced in batch order.
pub fn train<W: Borrow<FeatureWindow>>(
    windows: &[W],
    labels: &[usize],
    classes: &[String],
    cfg: &CnnConfig,
) -> Result<CnnModel> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Invalid("no training windows".into()))?
        .borrow();
    if windows.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} windows with {} labels",
            windows.len(),
            labels.len()
        )));
    }
    let shape = InputShape::of(first);
    if windows.iter().map(Borrow::borrow).any(|w| InputShape::of(w) != shape || w.data.len() != shape.len()) {
        return Err(Error::Shape("training windows differ in shape".into()));
    }
    cfg.validate(shape.frames)?;
    let n_classes = classes.len();
    if cfg.n_classes != 0 && cfg.n_classes != n_classes {
        return Err(Error::Invalid(format!(
            "config expects {} classes, data has {n_classes}",
            cfg.n_classes
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Invalid(format!("label {l} out of range for {n_classes} classes")));
    }
    if n_classes < 2 || labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::Invalid("training data must contain at least two classes".into()));
    }
    let mut cfg = *cfg;
    cfg.n_classes = n_classes;

    let mut input_mean = vec![0.0; shape.len()];
    for w in windows {
        for (m, x) in input_mean.iter_mut().zip(sqrt_normalize(w.borrow()).data) {
            *m += x;
        }
    }
    let n = windows.len() as f64;
    input_mean.iter_mut().for_each(|m| *m = (*m / n) as f32 as f64);

    let mut params = CnnParams::init(&cfg, shape, n_classes, &mut seed::rng(cfg.seed, &[0]));
    let mut accum = params.zeros_like();
    let mut shuffle = seed::rng(cfg.seed, &[1]);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch) {
            let xs: Vec<Vec<f64>> = batch.iter().map(|&i| prepare_with(windows[i].borrow(), &input_mean)).collect();
            let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            let ls: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = loss_and_grads(&params, &cfg, &refs, &ls)?;
            adagrad_step(&mut params, &grads, &mut accum, cfg.lr);
            total += loss * batch.len() as f64;
        }
        let loss = total / n;
        if !loss.is_finite() {
            return Err(Error::Invalid(format!("training diverged at epoch {epoch}")));
        }
        log::debug!("cnn epoch {epoch}: loss {loss:.6}");
        report.epoch_losses.push(loss);

        let k = cfg.plateau_epochs;
        if cfg.plateau_tol > 0.0 && k > 0 && report.epoch_losses.len() > k {
            let past = report.epoch_losses[report.epoch_losses.len() - 1 - k];
            if (past - loss) / past.abs().max(f64::MIN_POSITIVE) < cfg.plateau_tol {
                report.stopped_early = true;
                break;
            }
        }
    }
    params.quantize_f32();

    Ok(CnnModel {
        config: cfg,
        shape,
        classes: classes.to_vec(),
        input_mean,
        params,
        report,
        frontend: serde_json::Value::Null,
    })
}
