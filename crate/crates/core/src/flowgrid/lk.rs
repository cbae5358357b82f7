//! Pyramidal Lucas-Kanade for a sparse set of points.

use crate::ingest::GrayFrame;

/// One pyramid level with precomputed spatial gradients.
pub(crate) struct Level {
    pub width: usize,
    pub height: usize,
    pub img: Vec<f32>,
    pub gx: Vec<f32>,
    pub gy: Vec<f32>,
}

impl Level {
    fn new(width: usize, height: usize, img: Vec<f32>) -> Self {
        let mut gx = vec![0.0; img.len()];
        let mut gy = vec![0.0; img.len()];
        for y in 0..height {
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(height - 1);
            for x in 0..width {
                let xm = x.saturating_sub(1);
                let xp = (x + 1).min(width - 1);
                let i = y * width + x;
                gx[i] = (img[y * width + xp] - img[y * width + xm]) / (xp - xm).max(1) as f32;
                gy[i] = (img[yp * width + x] - img[ym * width + x]) / (yp - ym).max(1) as f32;
            }
        }
        Self {
            width,
            height,
            img,
            gx,
            gy,
        }
    }

    #[inline]
    fn sample(&self, buf: &[f32], x: f64, y: f64) -> f64 {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = (xc.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (yc.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let w = self.width;
        let a = buf[y0 * w + x0] as f64;
        let b = buf[y0 * w + x1] as f64;
        let c = buf[y1 * w + x0] as f64;
        let d = buf[y1 * w + x1] as f64;
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
    }
}

const BINOMIAL: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

fn downsample(width: usize, height: usize, img: &[f32]) -> (usize, usize, Vec<f32>) {
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0f32; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in BINOMIAL.iter().enumerate() {
                acc += w * img[y * width + clampi(x as isize + k as isize - 2, width)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let (nw, nh) = (width.div_ceil(2), height.div_ceil(2));
    let mut out = vec![0.0f32; nw * nh];
    for y in 0..nh {
        for x in 0..nw {
            let mut acc = 0.0;
            for (k, w) in BINOMIAL.iter().enumerate() {
                acc += w * tmp[clampi(2 * y as isize + k as isize - 2, height) * width + 2 * x];
            }
            out[y * nw + x] = acc;
        }
    }
    (nw, nh, out)
}

pub(crate) fn build_pyramid(frame: &GrayFrame, levels: usize) -> Vec<Level> {
    let mut out = vec![Level::new(frame.width, frame.height, frame.data.clone())];
    for _ in 1..levels {
        let last = out.last().expect("non-empty");
        if last.width < 8 || last.height < 8 {
            break;
        }
        let (w, h, img) = downsample(last.width, last.height, &last.img);
        out.push(Level::new(w, h, img));
    }
    out
}

pub(crate) struct LkParams {
    pub window: usize,
    pub iterations: usize,
    pub epsilon: f64,
    pub min_eig: f64,
}

/// Result of tracking one point: displacement and whether the finest-level
/// structure tensor was well conditioned.
pub(crate) struct Track {
    pub dx: f64,
    pub dy: f64,
    pub valid: bool,
}

fn min_eigenvalue(gxx: f64, gxy: f64, gyy: f64) -> f64 {
    let tr = 0.5 * (gxx + gyy);
    let det = gxx * gyy - gxy * gxy;
    tr - (tr * tr - det).max(0.0).sqrt()
}

pub(crate) fn track_point(prev: &[Level], next: &[Level], px: f64, py: f64, p: &LkParams) -> Track {
    let half = (p.window / 2) as isize;
    let area = (p.window * p.window) as f64;
    let n = p.window * p.window;
    let mut patch = vec![0.0f64; n];
    let mut pgx = vec![0.0f64; n];
    let mut pgy = vec![0.0f64; n];
    let mut g = (0.0f64, 0.0f64);
    let mut finest_ok = false;

    for lvl in (0..prev.len()).rev() {
        let scale = (1u64 << lvl) as f64;
        let (cx, cy) = (px / scale, py / scale);
        let (a, b) = (&prev[lvl], &next[lvl]);

        let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
        let mut k = 0;
        for oy in -half..=half {
            for ox in -half..=half {
                let (sx, sy) = (cx + ox as f64, cy + oy as f64);
                let ix = a.sample(&a.gx, sx, sy);
                let iy = a.sample(&a.gy, sx, sy);
                patch[k] = a.sample(&a.img, sx, sy);
                pgx[k] = ix;
                pgy[k] = iy;
                gxx += ix * ix;
                gxy += ix * iy;
                gyy += iy * iy;
                k += 1;
            }
        }
        let lam = min_eigenvalue(gxx, gxy, gyy) / area;
        let det = gxx * gyy - gxy * gxy;
        let usable = lam >= p.min_eig && lam > 0.0 && det > 0.0;
        if lvl == 0 {
            finest_ok = usable;
        }

        let mut v = (0.0f64, 0.0f64);
        if usable {
            for _ in 0..p.iterations {
                let (mut bx, mut by) = (0.0, 0.0);
                let mut k = 0;
                for oy in -half..=half {
                    for ox in -half..=half {
                        let j = b.sample(
                            &b.img,
                            cx + ox as f64 + g.0 + v.0,
                            cy + oy as f64 + g.1 + v.1,
                        );
                        let diff = patch[k] - j;
                        bx += diff * pgx[k];
                        by += diff * pgy[k];
                        k += 1;
                    }
                }
                let ex = (gyy * bx - gxy * by) / det;
                let ey = (gxx * by - gxy * bx) / det;
                v.0 += ex;
                v.1 += ey;
                if ex * ex + ey * ey < p.epsilon * p.epsilon {
                    break;
                }
            }
        }
        g = if lvl > 0 {
            (2.0 * (g.0 + v.0), 2.0 * (g.1 + v.1))
        } else {
            (g.0 + v.0, g.1 + v.1)
        };
    }

    let valid = finest_ok && g.0.is_finite() && g.1.is_finite();
    if valid {
        Track {
            dx: g.0,
            dy: g.1,
            valid,
        }
    } else {
        Track {
            dx: 0.0,
            dy: 0.0,
            valid: false,
        }
    }
}
