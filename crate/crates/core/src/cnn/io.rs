//! CNN model files.
//!
//! Little-endian layout:
//!
//! ```text
//! "EGNN" | version u16 | reserved u16 | meta_len u32 | meta (UTF-8 JSON)
//! input_mean f32[2·cells·F]
//! conv_w f32[M·2·cells·K_T] | conv_b f32[M]
//! fc1_w f32[N_1·M·P] | fc1_b f32[N_1]
//! fc2_w f32[classes·N_1] | fc2_b f32[classes]
//! ```
//!
//! `meta` carries the config, input shape, class list, training report and the
//! caller's front-end description; a
//! copy is written next to the model as `<file>.json` for inspection.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CnnConfig, CnnModel, CnnParams, InputShape, TrainReport};
use crate::error::{Error, Result};
use crate::svm::io::{put_json, Reader};

pub const CNN_MAGIC: &[u8; 4] = b"EGNN";
pub const CNN_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    config: CnnConfig,
    shape: InputShape,
    classes: Vec<String>,
    report: TrainReport,
    #[serde(default)]
    frontend: serde_json::Value,
}

fn meta(m: &CnnModel) -> Meta {
    Meta {
        config: m.config,
        shape: m.shape,
        classes: m.classes.clone(),
        report: m.report.clone(),
        frontend: m.frontend.clone(),
    }
}

pub fn cnn_model_bytes(m: &CnnModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CNN_MAGIC);
    out.extend_from_slice(&CNN_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    put_json(&mut out, &meta(m));
    for t in std::iter::once(m.input_mean.as_slice()).chain(m.params.tensors()) {
        for &v in t {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn cnn_model_from_bytes(bytes: &[u8]) -> Result<CnnModel> {
    let mut r = Reader::new(bytes);
    r.header(CNN_MAGIC, CNN_VERSION)?;
    let meta: Meta = r.json()?;
    let cfg = meta.config;
    cfg.validate(meta.shape.frames)
        .map_err(|e| Error::Format(format!("stored config is invalid: {e}")))?;
    if meta.classes.len() < 2 || cfg.n_classes != meta.classes.len() {
        return Err(Error::Format("class list does not match the config".into()));
    }
    let widen = |v: Vec<f32>| v.into_iter().map(f64::from).collect::<Vec<f64>>();
    let input_mean = widen(r.f32s(meta.shape.len())?);
    let mut params = CnnParams::zeros(&cfg, meta.shape, meta.classes.len());
    for t in params.tensors_mut() {
        *t = widen(r.f32s(t.len())?);
    }
    r.finish()?;
    Ok(CnnModel {
        config: cfg,
        shape: meta.shape,
        classes: meta.classes,
        input_mean,
        params,
        report: meta.report,
        frontend: meta.frontend,
    })
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the model and its JSON metadata sidecar.
pub fn write_cnn_model(path: &Path, m: &CnnModel) -> Result<()> {
    crate::write_atomic(path, &cnn_model_bytes(m))?;
    let json = serde_json::to_vec_pretty(&meta(m)).expect("metadata serializes");
    crate::write_atomic(&sidecar(path), &json)
}

pub fn read_cnn_model(path: &Path) -> Result<CnnModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    cnn_model_from_bytes(&bytes)
}
