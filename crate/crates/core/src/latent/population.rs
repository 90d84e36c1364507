use std::collections::BTreeMap;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{Generator, LatentError};
use crate::data::{
    Candidate, Dataset, Demographics, Dimension, GroupLabel, ProtectedAttribute, ScoreVector,
};
use crate::nn::sigmoid;
use crate::rng::{stream_rng, tag};

/// How a synthetic population is drawn and how its labels are biased.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasConfig {
    pub population: usize,
    pub seed: u64,
    /// Share of every group within its attribute; each attribute sums to 1.
    pub proportions: BTreeMap<GroupLabel, f64>,
    /// Added to a group member's ground-truth scores before clipping.
    pub offsets: BTreeMap<GroupLabel, ScoreVector>,
    /// Standard deviation of the gaussian label noise.
    pub noise_sd: f64,
    /// Scale of the seeded linear score map (logit units per unit readout).
    pub logit_scale: f64,
    /// Logit intercept per dimension.
    pub base_logit: ScoreVector,
    /// Codes closer than half this distance to a group threshold are
    /// redrawn, so groups are separable in latent space.
    pub label_margin: f64,
    /// Fraction of candidates whose age group is left unlabeled.
    pub missing_age: f64,
}

impl Default for BiasConfig {
    fn default() -> Self {
        use GroupLabel::*;
        let offset = |f: fn(&mut ScoreVector)| {
            let mut v = ScoreVector::splat(0.0);
            f(&mut v);
            v
        };
        Self {
            population: 5000,
            seed: 0,
            proportions: [
                (F, 0.5462),
                (M, 0.4538),
                (AfAm, 0.3),
                (Cau, 0.5),
                (Asi, 0.2),
                (Under40, 0.65),
                (AtOrOver40, 0.35),
            ]
            .into(),
            offsets: [
                (
                    M,
                    offset(|v| {
                        v.i = -0.10;
                        v.e = -0.05;
                    }),
                ),
                (
                    AfAm,
                    offset(|v| {
                        v.i = -0.08;
                        v.a = -0.04;
                    }),
                ),
                (
                    AtOrOver40,
                    offset(|v| {
                        v.i = -0.08;
                        v.o = -0.04;
                    }),
                ),
            ]
            .into(),
            noise_sd: 0.05,
            logit_scale: 1.3,
            base_logit: ScoreVector::splat(0.0),
            label_margin: 0.5,
            missing_age: 0.14,
        }
    }
}

impl BiasConfig {
    /// The default population with every offset removed.
    pub fn unbiased() -> Self {
        Self {
            offsets: BTreeMap::new(),
            ..Self::default()
        }
    }

    pub fn proportion(&self, g: GroupLabel) -> f64 {
        self.proportions.get(&g).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<(), LatentError> {
        let bad = |m: String| Err(LatentError::BadProportions(m));
        for attr in ProtectedAttribute::ALL {
            let mut sum = 0.0;
            for &g in attr.labels() {
                let p = self.proportion(g);
                if !(p > 0.0 && p < 1.0) {
                    return bad(format!("{g} proportion {p} outside (0, 1)"));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return bad(format!("{attr} proportions sum to {sum}"));
            }
        }
        if !(0.0..1.0).contains(&self.missing_age) {
            return bad(format!(
                "missing age fraction {} outside [0, 1)",
                self.missing_age
            ));
        }
        if !(self.label_margin >= 0.0 && self.noise_sd >= 0.0 && self.logit_scale.is_finite()) {
            return bad("margin, noise and scale must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// The latent hyperplanes that define one attribute's groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedAttribute {
    /// Unit latent direction; larger projections mean the protected side.
    pub direction: Vec<f64>,
    /// Ascending cut points on the projection; `labels[k]` lies between
    /// `thresholds[k - 1]` and `thresholds[k]`.
    pub thresholds: Vec<f64>,
    pub labels: Vec<GroupLabel>,
}

impl PlantedAttribute {
    pub fn label_of(&self, z: &[f64]) -> GroupLabel {
        let s = dot(&self.direction, z);
        let k = self.thresholds.iter().take_while(|&&t| s > t).count();
        self.labels[k]
    }

    fn near_threshold(&self, z: &[f64], half_margin: f64) -> bool {
        let s = dot(&self.direction, z);
        self.thresholds.iter().any(|t| (s - t).abs() < half_margin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledPopulation {
    pub dataset: Dataset,
    pub planted: BTreeMap<ProtectedAttribute, PlantedAttribute>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Group order along the planted direction, lowest projection first.
fn ordered_labels(attr: ProtectedAttribute) -> Vec<GroupLabel> {
    use GroupLabel::*;
    match attr {
        ProtectedAttribute::Gender => vec![F, M],
        ProtectedAttribute::Ethnicity => vec![Asi, Cau, AfAm],
        ProtectedAttribute::AgeGroup => vec![Under40, AtOrOver40],
    }
}

/// Cut points on a standard normal projection such that, after discarding
/// the bands of half-width `h` around every cut, group `k` holds share
/// `props[k]` of the remaining mass.
pub fn solve_thresholds(props: &[f64], h: f64) -> Vec<f64> {
    let normal = Normal::standard();
    let cum: Vec<f64> = props
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .take(props.len() - 1)
        .collect();
    let mut t: Vec<f64> = cum.iter().map(|&c| normal.inverse_cdf(c)).collect();
    for _ in 0..200 {
        let bands: Vec<f64> = t
            .iter()
            .map(|&x| normal.cdf(x + h) - normal.cdf(x - h))
            .collect();
        let kept = 1.0 - bands.iter().sum::<f64>();
        let next: Vec<f64> = (0..t.len())
            .map(|j| {
                let below = cum[j] * kept + bands[..j].iter().sum::<f64>();
                h + normal.inverse_cdf(below.clamp(1e-12, 1.0 - 1e-12))
            })
            .collect();
        let delta = next
            .iter()
            .zip(&t)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        t = next;
        if delta < 1e-13 {
            break;
        }
    }
    t
}

/// Orthonormal combinations of the rows of `basis`.
fn random_span_directions(basis: &Array2<f64>, count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let k = basis.nrows();
    let g = DMatrix::from_fn(k, count, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    (0..count)
        .map(|c| {
            let coef = Array1::from_shape_fn(k, |i| q[(i, c)]);
            basis.t().dot(&coef).to_vec()
        })
        .collect()
}

/// Draw a synthetic population: latent codes from a standard normal, group
/// labels from planted latent hyperplanes, features from the generator, and
/// ground-truth scores from a seeded readout of group-independent trait
/// features plus the configured group offsets and noise. Scores are rounded
/// to the six decimals of the score file format.
pub fn sample_population(
    gen: &dyn Generator,
    cfg: &BiasConfig,
) -> Result<SampledPopulation, LatentError> {
    cfg.validate()?;
    let layout = gen.layout();
    if layout.attribute_basis.nrows() < ProtectedAttribute::ALL.len() {
        return Err(LatentError::BadProportions(
            "generator has too few attribute dimensions".into(),
        ));
    }
    let d = gen.latent_dim();
    let mut rng = stream_rng(cfg.seed, &[tag::POPULATION, 0]);
    let directions = random_span_directions(
        &layout.attribute_basis,
        ProtectedAttribute::ALL.len(),
        &mut rng,
    );
    let planted: BTreeMap<_, _> = ProtectedAttribute::ALL
        .iter()
        .zip(directions)
        .map(|(&attr, direction)| {
            let labels = ordered_labels(attr);
            let props: Vec<f64> = labels.iter().map(|&g| cfg.proportion(g)).collect();
            let thresholds = solve_thresholds(&props, cfg.label_margin / 2.0);
            (
                attr,
                PlantedAttribute {
                    direction,
                    thresholds,
                    labels,
                },
            )
        })
        .collect();

    // One unit-norm readout combination per scored dimension.
    let traits = layout.trait_readouts.nrows();
    let score_map: Vec<Array1<f64>> = Dimension::ALL
        .iter()
        .map(|_| {
            let c = Array1::from_shape_fn(traits, |_| rng.sample::<f64, _>(StandardNormal));
            let c = &c / c.dot(&c).sqrt();
            layout.trait_readouts.t().dot(&c)
        })
        .collect();

    let mut latent_rng = stream_rng(cfg.seed, &[tag::POPULATION, 1]);
    let mut label_rng = stream_rng(cfg.seed, &[tag::POPULATION, 2]);
    let half = cfg.label_margin / 2.0;
    let mut candidates = Vec::with_capacity(cfg.population);
    for id in 0..cfg.population {
        let z = loop {
            let z: Vec<f64> = (0..d).map(|_| latent_rng.sample(StandardNormal)).collect();
            if !planted.values().any(|p| p.near_threshold(&z, half)) {
                break z;
            }
        };
        let mut demo = Demographics::default();
        for (&attr, p) in &planted {
            demo.set(attr, Some(p.label_of(&z)));
        }
        if label_rng.random::<f64>() < cfg.missing_age {
            demo.age_group = None;
        }
        let x = gen.forward(Array1::from(z.clone()).view());
        let mut scores: [f64; 6] = std::array::from_fn(|k| {
            sigmoid(cfg.base_logit.to_array()[k] + cfg.logit_scale * score_map[k].dot(&x))
        });
        // Offsets follow the true group even when the age label is hidden.
        for p in planted.values() {
            if let Some(off) = cfg.offsets.get(&p.label_of(&z)) {
                for (s, o) in scores.iter_mut().zip(off.to_array()) {
                    *s += o;
                }
            }
        }
        for s in &mut scores {
            *s += cfg.noise_sd * label_rng.sample::<f64, _>(StandardNormal);
        }
        let truth = ScoreVector::from_array(scores).clipped().quantized();
        candidates.push(
            Candidate::new(id as u64, demo, x.to_vec())
                .with_latent(z)
                .with_truth(truth),
        );
    }
    Ok(SampledPopulation {
        dataset: Dataset::new(candidates),
        planted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::partition_by_group;
    use crate::latent::SyntheticFaceGenerator;

    fn group_mean(ds: &Dataset, g: GroupLabel, dim: Dimension) -> (f64, f64, usize) {
        let xs: Vec<f64> = ds
            .iter()
            .filter(|c| c.demographics.get(g.attribute()) == Some(g))
            .map(|c| c.truth.unwrap().get(dim))
            .collect();
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v, xs.len())
    }

    #[test]
    fn thresholds_hit_proportions_after_margin_rejection() {
        let normal = Normal::standard();
        for h in [0.0, 0.25] {
            let props = [0.2, 0.5, 0.3];
            let t = solve_thresholds(&props, h);
            let mass = [
                normal.cdf(t[0] - h),
                normal.cdf(t[1] - h) - normal.cdf(t[0] + h),
                1.0 - normal.cdf(t[1] + h),
            ];
            let total: f64 = mass.iter().sum();
            for (m, p) in mass.iter().zip(props) {
                assert!((m / total - p).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn table_one_gender_counts_within_two_percent() {
        let gen = SyntheticFaceGenerator::new(1).unwrap();
        let cfg = BiasConfig {
            population: 10_000,
            ..BiasConfig::default()
        };
        let pop = sample_population(&gen, &cfg).unwrap();
        let parts = partition_by_group(&pop.dataset, ProtectedAttribute::Gender);
        let f = parts[&GroupLabel::F].len() as f64;
        let m = parts[&GroupLabel::M].len() as f64;
        assert!((f - 5462.0).abs() / 5462.0 <= 0.02, "{f}");
        assert!((m - 4538.0).abs() / 4538.0 <= 0.02, "{m}");
    }

    #[test]
    fn zero_offsets_leave_groups_indistinguishable() {
        let gen = SyntheticFaceGenerator::new(2).unwrap();
        let pop = sample_population(&gen, &BiasConfig::unbiased()).unwrap();
        let ds = &pop.dataset;
        // Welch two-sample z statistic at alpha = 0.01 (two-sided).
        let critical = Normal::standard().inverse_cdf(0.995);
        for attr in ProtectedAttribute::ALL {
            let labels = attr.labels();
            for dim in Dimension::ALL {
                let (m0, v0, n0) = group_mean(ds, labels[0], dim);
                let (m1, v1, n1) = group_mean(ds, labels[labels.len() - 1], dim);
                let zstat = (m0 - m1) / (v0 / n0 as f64 + v1 / n1 as f64).sqrt();
                assert!(zstat.abs() < critical, "{attr} {dim}: {zstat}");
                if dim == Dimension::I {
                    assert!((m0 - m1).abs() <= 0.02);
                }
            }
        }
    }

    #[test]
    fn injected_offset_shows_up_as_group_gap() {
        let gen = SyntheticFaceGenerator::new(3).unwrap();
        let mut cfg = BiasConfig::unbiased();
        let mut off = ScoreVector::splat(0.0);
        off.i = -0.08;
        cfg.offsets.insert(GroupLabel::AfAm, off);
        let ds = sample_population(&gen, &cfg).unwrap().dataset;
        let (afam, _, _) = group_mean(&ds, GroupLabel::AfAm, Dimension::I);
        let rest: Vec<f64> = ds
            .iter()
            .filter(|c| c.demographics.ethnicity != Some(GroupLabel::AfAm))
            .map(|c| c.truth.unwrap().i)
            .collect();
        let gap = rest.iter().sum::<f64>() / rest.len() as f64 - afam;
        assert!((gap - 0.08).abs() <= 0.02, "{gap}");
    }

    #[test]
    fn sampling_is_deterministic_and_labels_follow_hyperplanes() {
        let gen = SyntheticFaceGenerator::new(4).unwrap();
        let cfg = BiasConfig {
            population: 300,
            ..BiasConfig::default()
        };
        let a = sample_population(&gen, &cfg).unwrap();
        assert_eq!(a, sample_population(&gen, &cfg).unwrap());
        for c in a.dataset.iter() {
            let z = c.latent.as_ref().unwrap();
            assert_eq!(
                c.demographics.gender,
                Some(a.planted[&ProtectedAttribute::Gender].label_of(z))
            );
            assert!(c.truth.unwrap().out_of_range().is_none());
        }
        let dirs: Vec<&Vec<f64>> = a.planted.values().map(|p| &p.direction).collect();
        assert!(dot(dirs[0], dirs[1]).abs() < 1e-12);
        assert!((dot(dirs[2], dirs[2]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_proportions_rejected() {
        let gen = SyntheticFaceGenerator::new(0).unwrap();
        let mut cfg = BiasConfig::default();
        cfg.proportions.insert(GroupLabel::F, 0.6);
        assert!(matches!(
            sample_population(&gen, &cfg),
            Err(LatentError::BadProportions(_))
        ));
    }
}
