//! Identify or verify the wearer of a head-mounted camera from the camera's own
//! motion.
//!
//! The pipeline: grid optical flow per frame pair ([`flowgrid`]), 4-second
//! windows with 2-second stride, then one of two back ends — per-series LPC
//! descriptors with an RBF SVM ([`lpc`], [`svm`]) or a temporal convolutional
//! network ([`cnn`]). Window posteriors are fused over longer videos and scored
//! with CMC, ROC and EER ([`eval`]). [`synth`] generates seeded synthetic walkers
//! for end-to-end experiments, and [`pipeline`] runs the identification and
//! verification protocols on top of all of it.

pub mod cnn;
pub mod error;
pub mod eval;
pub mod flowgrid;
pub mod ingest;
pub mod lpc;
pub mod pipeline;
pub mod seed;
pub mod svm;
pub mod synth;

pub use error::{Error, Result};

use std::fs;
use std::io::Write;
use std::path::Path;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
