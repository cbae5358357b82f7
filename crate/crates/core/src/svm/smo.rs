//! SMO for the C-SVC dual
//!
//! ```text
//! min_α ½ αᵀQα − eᵀα   s.t.  0 ≤ α_i ≤ C,  yᵀα = 0,   Q_ij = y_i y_j K_ij
//! ```
//!
//! Working pairs: `i` is the maximal violator in the up set, `j` is picked from
//! the low set by second-order gain. Stops when the maximal violation
//! `m(α) − M(α)` falls below `tol`.

use super::kernel::RowSource;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverStats {
    pub iterations: usize,
    pub converged: bool,
    /// `m(α) − M(α)` at exit.
    pub final_gap: f64,
    /// Dual objective `eᵀα − ½αᵀQα` sampled once per sweep of `n` iterations,
    /// plus the final value.
    pub objective_trace: Vec<f64>,
}

pub struct Solution {
    pub alpha: Vec<f64>,
    /// Decision offset: `f(x) = Σ α_i y_i K(x_i, x) + bias`.
    pub bias: f64,
    pub stats: SolverStats,
}

fn dual_objective(alpha: &[f64], grad: &[f64]) -> f64 {
    // f(α) = ½ αᵀ(G − e) with G = Qα − e; the dual maximizes −f.
    -0.5 * alpha.iter().zip(grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>()
}

pub(crate) fn solve(rows: &mut RowSource<'_>, y: &[f64], c: f64, tol: f64, max_iter: usize) -> Solution {
    let n = y.len();
    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    let mut trace = vec![0.0];
    let mut iter = 0;
    let mut gap;

    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    loop {
        // Maximal violator in I_up.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = t;
                }
            }
        }
        let mut gmin = f64::INFINITY;
        for t in 0..n {
            if in_low(alpha[t], y[t]) {
                gmin = gmin.min(-y[t] * grad[t]);
            }
        }
        gap = gmax - gmin;
        if i_sel == usize::MAX || gap < tol {
            break;
        }
        if iter >= max_iter {
            break;
        }

        let i = i_sel;
        let ki = rows.row(i);
        // Second-order choice of j.
        let mut best = f64::INFINITY;
        let mut j_sel = usize::MAX;
        for t in 0..n {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            let b = gmax + y[t] * grad[t];
            if b > 0.0 {
                let mut a = 2.0 - 2.0 * ki[t];
                if a <= 0.0 {
                    a = TAU;
                }
                let gain = -(b * b) / a;
                if gain < best {
                    best = gain;
                    j_sel = t;
                }
            }
        }
        if j_sel == usize::MAX {
            break;
        }
        let j = j_sel;
        let kj = rows.row(j);

        let (yi, yj) = (y[i], y[j]);
        let (ai_old, aj_old) = (alpha[i], alpha[j]);
        let mut quad = 2.0 - 2.0 * ki[j];
        if quad <= 0.0 {
            quad = TAU;
        }
        if yi != yj {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 && alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = diff;
            } else if diff <= 0.0 && alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 && alpha[i] > c {
                alpha[i] = c;
                alpha[j] = c - diff;
            } else if diff <= 0.0 && alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c && alpha[i] > c {
                alpha[i] = c;
                alpha[j] = sum - c;
            } else if sum <= c && alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c && alpha[j] > c {
                alpha[j] = c;
                alpha[i] = sum - c;
            } else if sum <= c && alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let dai = alpha[i] - ai_old;
        let daj = alpha[j] - aj_old;
        for t in 0..n {
            grad[t] += y[t] * (yi * ki[t] * dai + yj * kj[t] * daj);
        }

        iter += 1;
        if iter % n.max(1) == 0 {
            trace.push(dual_objective(&alpha, &grad));
        }
    }
    trace.push(dual_objective(&alpha, &grad));

    // Offset from free vectors, else the midpoint of the feasible range.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else if ub.is_finite() && lb.is_finite() {
        (ub + lb) / 2.0
    } else if ub.is_finite() {
        ub
    } else if lb.is_finite() {
        lb
    } else {
        0.0
    };

    Solution {
        alpha,
        bias: -rho,
        stats: SolverStats {
            iterations: iter,
            converged: gap < tol,
            final_gap: gap,
            objective_trace: trace,
        },
    }
}
