use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};

use super::CnnModel;
use crate::error::{Error, Result};

/// One flow component of a kernel: rows are grid cells, columns are time,
/// values scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterImage {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl FilterImage {
    fn normalized(rows: usize, cols: usize, raw: &[f64]) -> Self {
        let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let values = if hi > lo {
            raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
        } else {
            vec![0.5; raw.len()]
        };
        Self { rows, cols, values }
    }

    pub fn to_gray8(&self) -> Vec<u8> {
        self.values.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        PngEncoder::new(&mut out)
            .write_image(&self.to_gray8(), self.cols as u32, self.rows as u32, ExtendedColorType::L8)
            .map_err(|e| Error::Image {
                path: PathBuf::new(),
                msg: e.to_string(),
            })?;
        Ok(out)
    }
}

/// Horizontal and vertical component images of kernel `m`.
pub fn visualize_filter(model: &CnnModel, m: usize) -> Result<[FilterImage; 2]> {
    let p = &model.params;
    if m >= p.m {
        return Err(Error::Invalid(format!("kernel {m} out of range, model has {}", p.m)));
    }
    let cells = p.rows / 2;
    let kernel = &p.conv_w[m * p.rows * p.k_t..(m + 1) * p.rows * p.k_t];
    let half = cells * p.k_t;
    Ok([
        FilterImage::normalized(cells, p.k_t, &kernel[..half]),
        FilterImage::normalized(cells, p.k_t, &kernel[half..]),
    ])
}

/// Writes `filter_<m>_u.png` and `filter_<m>_v.png` into `dir`.
pub fn write_filter_pngs(model: &CnnModel, m: usize, dir: &Path) -> Result<[PathBuf; 2]> {
    let [u, v] = visualize_filter(model, m)?;
    let pu = dir.join(format!("filter_{m:03}_u.png"));
    let pv = dir.join(format!("filter_{m:03}_v.png"));
    crate::write_atomic(&pu, &u.png_bytes()?)?;
    crate::write_atomic(&pv, &v.png_bytes()?)?;
    Ok([pu, pv])
}
