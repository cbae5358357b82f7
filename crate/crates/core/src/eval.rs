//! Fusing window posteriors over a video, and identification/verification
//! metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::svm::squared_distance;

/// Floor applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-class `Σ_t log max(P_t(i), floor)`.
pub fn log_posterior_sums(window_probs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = window_probs
        .first()
        .ok_or_else(|| Error::Invalid("cannot fuse an empty list of windows".into()))?;
    let n = first.len();
    let mut acc = vec![0.0; n];
    for p in window_probs {
        if p.len() != n {
            return Err(Error::Shape("window distributions of differing length".into()));
        }
        for (a, &q) in acc.iter_mut().zip(p) {
            *a += q.max(LOG_FLOOR).ln();
        }
    }
    Ok(acc)
}

/// MAP label of a video: `argmax_i Π_t P_t(i)`.
pub fn map_fuse(window_probs: &[Vec<f64>]) -> Result<usize> {
    Ok(argmax(&log_posterior_sums(window_probs)?))
}

/// Most frequent window label; ties go to the lowest label.
pub fn mode_fuse(labels: &[usize]) -> Result<usize> {
    let max = *labels
        .iter()
        .max()
        .ok_or_else(|| Error::Invalid("cannot take the mode of no labels".into()))?;
    let mut counts = vec![0usize; max + 1];
    for &l in labels {
        counts[l] += 1;
    }
    let mut best = 0;
    for (l, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = l;
        }
    }
    Ok(best)
}

/// Classes ordered by descending score; ties by lower index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencePrediction {
    pub window_probs: Vec<Vec<f64>>,
    pub map_label: usize,
    pub mode_label: usize,
}

impl SequencePrediction {
    pub fn from_windows(window_probs: Vec<Vec<f64>>) -> Result<Self> {
        for p in &window_probs {
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > 1e-9 || p.iter().any(|&x| x < 0.0) {
                return Err(Error::Invalid(format!("window distribution sums to {s}")));
            }
        }
        let map_label = map_fuse(&window_probs)?;
        let labels: Vec<usize> = window_probs.iter().map(|p| argmax(p)).collect();
        let mode_label = mode_fuse(&labels)?;
        Ok(Self {
            window_probs,
            map_label,
            mode_label,
        })
    }
}

/// Accuracy at ranks 1..=n_classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmcCurve {
    pub top_k: Vec<f64>,
}

pub fn cmc(rankings: &[Vec<usize>], truths: &[usize]) -> Result<CmcCurve> {
    if rankings.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} rankings for {} truths",
            rankings.len(),
            truths.len()
        )));
    }
    let n = rankings.first().map_or(0, Vec::len);
    let mut hits = vec![0usize; n];
    for (r, &t) in rankings.iter().zip(truths) {
        let mut seen = vec![false; n];
        if r.len() != n || r.iter().any(|&c| c >= n || std::mem::replace(&mut seen[c], true)) {
            return Err(Error::Invalid("ranking is not a permutation of the class set".into()));
        }
        if let Some(pos) = r.iter().position(|&c| c == t) {
            hits[pos] += 1;
        }
    }
    let total = truths.len().max(1) as f64;
    let mut acc = 0;
    let top_k = hits
        .iter()
        .map(|h| {
            acc += h;
            acc as f64 / total
        })
        .collect();
    Ok(CmcCurve { top_k })
}

/// Thresholds are `+∞` at the accept-nothing end of a curve, which JSON
/// cannot hold; it is written as `null`.
mod threshold {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
        if t.is_finite() {
            s.serialize_f64(*t)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Accept when `score >= threshold`.
    #[serde(with = "threshold")]
    pub threshold: f64,
    pub far: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub eer: f64,
    #[serde(with = "threshold")]
    pub eer_threshold: f64,
}

impl RocCurve {
    /// TPR at a given FAR by linear interpolation along the curve.
    pub fn tpr_at(&self, far: f64) -> f64 {
        let p = &self.points;
        for w in p.windows(2) {
            if far <= w[1].far {
                if w[1].far == w[0].far {
                    return w[1].tpr.max(w[0].tpr);
                }
                let l = (far - w[0].far) / (w[1].far - w[0].far);
                return w[0].tpr + l.clamp(0.0, 1.0) * (w[1].tpr - w[0].tpr);
            }
        }
        p.last().map_or(0.0, |q| q.tpr)
    }
}

/// Threshold sweep over all distinct scores; EER where FAR = FRR, linearly
/// interpolated between adjacent thresholds.
pub fn roc_and_eer(scores: &[f64], is_target: &[bool]) -> Result<RocCurve> {
    if scores.len() != is_target.len() {
        return Err(Error::Shape("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Invalid("NaN score".into()));
    }
    let n_t = is_target.iter().filter(|&&t| t).count();
    let n_n = is_target.len() - n_t;
    if n_t == 0 || n_n == 0 {
        return Err(Error::Invalid("ROC needs both target and non-target trials".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        tpr: 0.0,
    }];
    // FAR − FRR scaled by n_t·n_n, kept in integers so exact crossings are found.
    let mut diffs = vec![-((n_t * n_n) as i64)];
    let (mut acc_t, mut acc_n) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if is_target[order[k]] {
                acc_t += 1;
            } else {
                acc_n += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            threshold: s,
            far: acc_n as f64 / n_n as f64,
            tpr: acc_t as f64 / n_t as f64,
        });
        diffs.push((acc_n * n_t) as i64 - ((n_t - acc_t) * n_n) as i64);
    }

    let i = diffs.iter().position(|&d| d >= 0).expect("last point accepts everything");
    let (eer, eer_threshold) = if i == 0 {
        (points[0].far, points[0].threshold)
    } else {
        let (a, b) = (&points[i - 1], &points[i]);
        let (da, db) = (diffs[i - 1] as f64, diffs[i] as f64);
        let l = -da / (db - da);
        let thr = if a.threshold.is_finite() {
            (1.0 - l) * a.threshold + l * b.threshold
        } else {
            b.threshold
        };
        ((1.0 - l) * a.far + l * b.far, thr)
    };
    Ok(RocCurve {
        points,
        eer,
        eer_threshold,
    })
}

/// Vertical average of several curves on a uniform FAR grid.
pub fn mean_roc(curves: &[RocCurve], grid: usize) -> Vec<(f64, f64)> {
    let grid = grid.max(2);
    (0..grid)
        .map(|g| {
            let far = g as f64 / (grid - 1) as f64;
            let tpr = curves.iter().map(|c| c.tpr_at(far)).sum::<f64>() / curves.len().max(1) as f64;
            (far, tpr)
        })
        .collect()
}

/// Distance from `probe` to its nearest gallery item.
pub fn nearest_distance(gallery: &[Vec<f64>], probe: &[f64]) -> Result<f64> {
    if gallery.is_empty() {
        return Err(Error::Invalid("empty gallery".into()));
    }
    let mut best = f64::INFINITY;
    for g in gallery {
        if g.len() != probe.len() {
            return Err(Error::Shape("probe and gallery dimensions differ".into()));
        }
        best = best.min(squared_distance(g, probe));
    }
    Ok(best.sqrt())
}

/// Accept/reject per probe video: a window is accepted when its nearest
/// gallery distance is below `threshold`, a video when a strict majority of its
/// windows is accepted.
pub fn nn_verify(gallery: &[Vec<f64>], probes: &[Vec<Vec<f64>>], threshold: f64) -> Result<Vec<bool>> {
    probes
        .iter()
        .map(|video| {
            if video.is_empty() {
                return Err(Error::Invalid("empty probe video".into()));
            }
            let mut accepted = 0;
            for w in video {
                if nearest_distance(gallery, w)? < threshold {
                    accepted += 1;
                }
            }
            Ok(2 * accepted > video.len())
        })
        .collect()
}

/// Video-level score consistent with [`nn_verify`]: the negated
/// `(⌊n/2⌋+1)`-th smallest window distance. `nn_verify` accepts at threshold
/// `t` exactly when this score exceeds `−t`.
pub fn nn_video_score(gallery: &[Vec<f64>], video: &[Vec<f64>]) -> Result<f64> {
    if video.is_empty() {
        return Err(Error::Invalid("empty probe video".into()));
    }
    let mut d = video
        .iter()
        .map(|w| nearest_distance(gallery, w))
        .collect::<Result<Vec<_>>>()?;
    d.sort_by(f64::total_cmp);
    Ok(-d[video.len() / 2])
}

/// Non-overlapping groups of `group` consecutive windows; a trailing partial
/// group is dropped.
pub fn window_groups(n_windows: usize, group: usize) -> Vec<std::ops::Range<usize>> {
    if group == 0 {
        return Vec::new();
    }
    (0..n_windows / group).map(|g| g * group..(g + 1) * group).collect()
}

/// Windows per group for a video of `seconds` given window length and stride.
pub fn windows_for_duration(seconds: f64, window_s: f64, stride_s: f64) -> usize {
    if seconds < window_s {
        return 1;
    }
    ((seconds - window_s) / stride_s).floor() as usize + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn map_examples() {
        assert_eq!(map_fuse(&[vec![0.2, 0.7, 0.1]]).unwrap(), 1);
        let probs = vec![vec![0.6, 0.4], vec![0.6, 0.4], vec![0.1, 0.9]];
        // 0.6·0.6·0.1 = 0.036 < 0.4·0.4·0.9 = 0.144
        assert_eq!(map_fuse(&probs).unwrap(), 1);
        assert_eq!(map_fuse(&vec![vec![0.25; 4]; 5]).unwrap(), 0);
        assert!(map_fuse(&[]).is_err());
    }

    #[test]
    fn map_floors_zero_probabilities() {
        let probs = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.9, 0.1]];
        assert_eq!(map_fuse(&probs).unwrap(), 0);
    }

    #[test]
    fn mode_examples() {
        assert_eq!(mode_fuse(&[1, 1, 2]).unwrap(), 1);
        assert_eq!(mode_fuse(&[2]).unwrap(), 2);
        assert_eq!(mode_fuse(&[1, 2]).unwrap(), 1);
        assert!(mode_fuse(&[]).is_err());
    }

    #[test]
    fn cmc_examples() {
        let r = vec![vec![0, 1, 2, 3]; 3];
        assert_eq!(cmc(&r, &[0, 0, 0]).unwrap().top_k, vec![1.0; 4]);
        let r = vec![vec![3, 0, 1, 2], vec![1, 2, 3, 0]];
        assert_eq!(cmc(&r, &[0, 2]).unwrap().top_k, vec![0.0, 1.0, 1.0, 1.0]);
        assert!(cmc(&[vec![0, 0, 1]], &[0]).is_err());
        assert!(cmc(&[vec![0, 3, 1]], &[0]).is_err());
    }

    #[test]
    fn eer_hand_enumerated() {
        let scores = [0.9, 0.8, 0.3, 0.7, 0.2, 0.1];
        let target = [true, true, true, false, false, false];
        let roc = roc_and_eer(&scores, &target).unwrap();
        assert_eq!(roc.eer, 1.0 / 3.0);
        assert_eq!(roc.eer_threshold, 0.7);
    }

    #[test]
    fn curves_survive_json() {
        let roc = roc_and_eer(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(roc.points[0].threshold, f64::INFINITY);
        let text = serde_json::to_string(&roc).unwrap();
        assert_eq!(serde_json::from_str::<RocCurve>(&text).unwrap(), roc);
    }

    #[test]
    fn eer_extremes() {
        let roc = roc_and_eer(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(roc.eer, 0.0);
        let roc = roc_and_eer(&[0.5; 6], &[true, false, true, false, true, false]).unwrap();
        assert_eq!(roc.eer, 0.5);
        assert!(roc_and_eer(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn nn_examples() {
        let gallery = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        assert_eq!(nn_verify(&gallery, &[vec![vec![1.0, 1.0]]], 1e-9).unwrap(), vec![true]);
        let origin = vec![vec![0.0, 0.0]];
        assert_eq!(nn_verify(&origin, &[vec![vec![3.0, 4.0]]], 4.0).unwrap(), vec![false]);
        let video = vec![vec![0.1, 0.0], vec![0.0, 0.1], vec![9.0, 9.0]];
        assert_eq!(nn_verify(&origin, &[video.clone()], 1.0).unwrap(), vec![true]);
        assert!(nn_verify(&[], &[video], 1.0).is_err());
    }

    #[test]
    fn groups_are_non_overlapping() {
        assert_eq!(window_groups(11, 5), vec![0..5, 5..10]);
        assert_eq!(window_groups(209, 1).len(), 209);
        assert_eq!(windows_for_duration(12.0, 4.0, 2.0), 5);
        assert_eq!(windows_for_duration(4.0, 4.0, 2.0), 1);
        assert_eq!(windows_for_duration(24.0, 4.0, 2.0), 11);
    }

    fn brute_force_argmax(probs: &[Vec<f64>]) -> usize {
        let n = probs[0].len();
        let prods: Vec<f64> = (0..n).map(|i| probs.iter().map(|p| p[i]).product()).collect();
        argmax(&prods)
    }

    proptest! {
        #[test]
        fn map_matches_brute_force(raw in proptest::collection::vec(proptest::collection::vec(0.05f64..1.0, 4), 1..10)) {
            let probs: Vec<Vec<f64>> = raw.iter().map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|x| x / s).collect()
            }).collect();
            prop_assert_eq!(map_fuse(&probs).unwrap(), brute_force_argmax(&probs));
        }

        #[test]
        fn map_ignores_per_window_log_offsets(raw in proptest::collection::vec(proptest::collection::vec(0.05f64..1.0, 3), 1..8), shift in 0.1f64..10.0) {
            let scaled: Vec<Vec<f64>> = raw.iter().map(|r| r.iter().map(|x| x * shift).collect()).collect();
            prop_assert_eq!(map_fuse(&raw).unwrap(), map_fuse(&scaled).unwrap());
        }

        #[test]
        fn curves_are_monotone(scores in proptest::collection::vec(-5.0f64..5.0, 4..60), seed in 0u64..1000) {
            let labels: Vec<bool> = (0..scores.len()).map(|i| (i as u64 * 7 + seed) % 3 == 0).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let roc = roc_and_eer(&scores, &labels).unwrap();
            for w in roc.points.windows(2) {
                prop_assert!(w[1].far >= w[0].far);
                prop_assert!(w[1].tpr >= w[0].tpr);
            }
            prop_assert!((0.0..=1.0).contains(&roc.eer));

            let n = 5;
            let rankings: Vec<Vec<usize>> = scores.iter().map(|s| ranking(&[*s, 0.0, -s, 1.0, 0.5])).collect();
            let truths: Vec<usize> = (0..scores.len()).map(|i| i % n).collect();
            let c = cmc(&rankings, &truths).unwrap();
            for w in c.top_k.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
            prop_assert_eq!(*c.top_k.last().unwrap(), 1.0);
        }

        #[test]
        fn nn_score_agrees_with_vote(pts in proptest::collection::vec(-3.0f64..3.0, 2..14), thr in 0.1f64..4.0) {
            let gallery = vec![vec![0.0], vec![0.5]];
            let video: Vec<Vec<f64>> = pts.iter().map(|&p| vec![p]).collect();
            let vote = nn_verify(&gallery, &[video.clone()], thr).unwrap()[0];
            let score = nn_video_score(&gallery, &video).unwrap();
            prop_assert_eq!(vote, score > -thr);
        }
    }
}
