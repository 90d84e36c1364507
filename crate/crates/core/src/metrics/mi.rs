use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use super::MetricError;
use crate::data::GroupLabel;

pub const MIN_MI_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MiEstimator {
    /// Equal-width bins over `[0, 1]`, plug-in estimate.
    Binned(usize),
    /// Nearest-neighbor estimator for a continuous variable against a
    /// discrete one, with `k` neighbors.
    Knn(usize),
}

impl Default for MiEstimator {
    fn default() -> Self {
        MiEstimator::Binned(20)
    }
}

/// Mutual information in nats between scores `y` and labels `a`, clamped
/// at zero.
pub fn mutual_information(
    y: &[f64],
    a: &[GroupLabel],
    estimator: MiEstimator,
) -> Result<f64, MetricError> {
    if y.len() != a.len() {
        return Err(MetricError::LengthMismatch(y.len(), a.len()));
    }
    if y.len() < MIN_MI_SAMPLES {
        return Err(MetricError::TooFewSamples(y.len()));
    }
    let mi = match estimator {
        MiEstimator::Binned(0) | MiEstimator::Knn(0) => {
            return Err(MetricError::BadEstimator(
                "bin and neighbor counts must be positive".into(),
            ))
        }
        MiEstimator::Binned(bins) => binned(y, a, bins),
        MiEstimator::Knn(k) => knn(y, a, k),
    };
    Ok(mi.max(0.0))
}

fn bin_of(v: f64, bins: usize) -> usize {
    ((v.clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1)
}

fn binned(y: &[f64], a: &[GroupLabel], bins: usize) -> f64 {
    let n = y.len() as f64;
    let mut joint: BTreeMap<(usize, GroupLabel), f64> = BTreeMap::new();
    let mut py: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pa: BTreeMap<GroupLabel, f64> = BTreeMap::new();
    for (&v, &g) in y.iter().zip(a) {
        let b = bin_of(v, bins);
        *joint.entry((b, g)).or_default() += 1.0;
        *py.entry(b).or_default() += 1.0;
        *pa.entry(g).or_default() += 1.0;
    }
    joint
        .iter()
        .map(|(&(b, g), &c)| {
            let p = c / n;
            p * (p / ((py[&b] / n) * (pa[&g] / n))).ln()
        })
        .sum()
}

/// Distance from `v` to its `k`-th nearest neighbor in `sorted` (which
/// contains `v` itself at `pos`).
fn kth_neighbor_distance(sorted: &[f64], pos: usize, k: usize) -> f64 {
    let v = sorted[pos];
    let (mut lo, mut hi) = (pos, pos + 1);
    let mut d = 0.0;
    for _ in 0..k {
        let left = (lo > 0).then(|| v - sorted[lo - 1]);
        let right = (hi < sorted.len()).then(|| sorted[hi] - v);
        match (left, right) {
            (Some(l), Some(r)) if l <= r => {
                d = l;
                lo -= 1;
            }
            (Some(l), None) => {
                d = l;
                lo -= 1;
            }
            (_, Some(r)) => {
                d = r;
                hi += 1;
            }
            (None, None) => break,
        }
    }
    d
}

/// Points of `sorted` within distance `r` of `v`, including `v` itself.
fn count_within(sorted: &[f64], v: f64, r: f64) -> usize {
    let start = sorted.partition_point(|&u| u < v && v - u > r);
    let end = sorted.partition_point(|&u| u <= v || u - v <= r);
    end - start
}

fn knn(y: &[f64], a: &[GroupLabel], k: usize) -> f64 {
    let mut by_label: BTreeMap<GroupLabel, Vec<f64>> = BTreeMap::new();
    for (&v, &g) in y.iter().zip(a) {
        by_label.entry(g).or_default().push(v);
    }
    for vals in by_label.values_mut() {
        vals.sort_by(f64::total_cmp);
    }
    // Points whose label is unique carry no neighbor information.
    let kept: Vec<(f64, GroupLabel)> = y
        .iter()
        .zip(a)
        .filter(|(_, g)| by_label[g].len() > 1)
        .map(|(&v, &g)| (v, g))
        .collect();
    if kept.is_empty() {
        return 0.0;
    }
    let mut all: Vec<f64> = kept.iter().map(|p| p.0).collect();
    all.sort_by(f64::total_cmp);
    let n = kept.len() as f64;
    let (mut sum_k, mut sum_label, mut sum_m) = (0.0, 0.0, 0.0);
    for &(v, g) in &kept {
        let same = &by_label[&g];
        let kk = k.min(same.len() - 1);
        let pos = same.partition_point(|&u| u < v);
        // Shrink the radius by one ulp so the count is strictly inside.
        let r = next_toward_zero(kth_neighbor_distance(same, pos, kk));
        sum_k += digamma(kk as f64);
        sum_label += digamma(same.len() as f64);
        sum_m += digamma(count_within(&all, v, r) as f64);
    }
    digamma(n) + (sum_k - sum_label - sum_m) / n
}

fn next_toward_zero(d: f64) -> f64 {
    if d > 0.0 {
        f64::from_bits(d.to_bits() - 1)
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use GroupLabel::{F, M};

    fn labels(n: usize, f: impl Fn(usize) -> GroupLabel) -> Vec<GroupLabel> {
        (0..n).map(f).collect()
    }

    #[test]
    fn constant_scores_have_zero_information() {
        let y = vec![0.4; 20];
        let a = labels(20, |i| if i % 2 == 0 { F } else { M });
        assert_eq!(
            mutual_information(&y, &a, MiEstimator::Binned(20)).unwrap(),
            0.0
        );
        assert_eq!(
            mutual_information(&y, &a, MiEstimator::Knn(3)).unwrap(),
            0.0
        );
    }

    #[test]
    fn indicator_scores_give_ln_two() {
        let a = labels(20, |i| if i < 10 { F } else { M });
        let y: Vec<f64> = a.iter().map(|&g| if g == M { 1.0 } else { 0.0 }).collect();
        let mi = mutual_information(&y, &a, MiEstimator::Binned(20)).unwrap();
        assert!((mi - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn hand_joint_distribution() {
        // p(0,F)=p(1,M)=0.4, p(0,M)=p(1,F)=0.1 over 20 samples.
        let mut y = Vec::new();
        let mut a = Vec::new();
        for (v, g, c) in [(0.1, F, 8), (0.9, M, 8), (0.1, M, 2), (0.9, F, 2)] {
            for _ in 0..c {
                y.push(v);
                a.push(g);
            }
        }
        let expected = 2.0 * 0.4 * (0.4f64 / 0.25).ln() + 2.0 * 0.1 * (0.1f64 / 0.25).ln();
        let mi = mutual_information(&y, &a, MiEstimator::Binned(20)).unwrap();
        assert!((mi - expected).abs() < 1e-12);
        assert!((mi - 0.1927).abs() < 1e-3);
    }

    #[test]
    fn too_few_samples() {
        assert_eq!(
            mutual_information(&[0.1; 9], &[F; 9], MiEstimator::default()).unwrap_err(),
            MetricError::TooFewSamples(9)
        );
        assert_eq!(
            mutual_information(&[0.1; 12], &[F; 11], MiEstimator::default()).unwrap_err(),
            MetricError::LengthMismatch(12, 11)
        );
    }

    /// Direct transcription of the discrete-continuous estimator with
    /// quadratic neighbor searches.
    fn brute_knn(y: &[f64], a: &[GroupLabel], k: usize) -> f64 {
        let idx: Vec<usize> = (0..y.len())
            .filter(|&i| a.iter().filter(|&&g| g == a[i]).count() > 1)
            .collect();
        let n = idx.len() as f64;
        let mut total = digamma(n);
        for &i in &idx {
            let mut d: Vec<f64> = idx
                .iter()
                .filter(|&&j| j != i && a[j] == a[i])
                .map(|&j| (y[j] - y[i]).abs())
                .collect();
            d.sort_by(f64::total_cmp);
            let kk = k.min(d.len());
            let r = next_toward_zero(d[kk - 1]);
            let m = idx.iter().filter(|&&j| (y[j] - y[i]).abs() <= r).count();
            total += (digamma(kk as f64) - digamma(d.len() as f64 + 1.0) - digamma(m as f64)) / n;
        }
        total.max(0.0)
    }

    #[test]
    fn knn_matches_brute_force() {
        let y: Vec<f64> = (0..40)
            .map(|i| ((i * 37 % 41) as f64 / 41.0 + (i % 3) as f64 * 0.1).min(1.0))
            .collect();
        let a = labels(40, |i| [F, M, GroupLabel::Cau][i % 3]);
        for k in [1, 3, 5] {
            let fast = mutual_information(&y, &a, MiEstimator::Knn(k)).unwrap();
            assert!((fast - brute_knn(&y, &a, k)).abs() < 1e-12);
        }
    }

    #[test]
    fn knn_detects_dependence() {
        let a = labels(200, |i| if i % 2 == 0 { F } else { M });
        let dependent: Vec<f64> = (0..200)
            .map(|i| if i % 2 == 0 { 0.2 } else { 0.7 } + (i as f64 * 0.618).fract() * 0.05)
            .collect();
        let independent: Vec<f64> = (0..200).map(|i| (i as f64 * 0.618).fract()).collect();
        let dep = mutual_information(&dependent, &a, MiEstimator::Knn(3)).unwrap();
        let ind = mutual_information(&independent, &a, MiEstimator::Knn(3)).unwrap();
        assert!(dep > 0.5, "{dep}");
        assert!(ind < 0.05, "{ind}");
    }
}
