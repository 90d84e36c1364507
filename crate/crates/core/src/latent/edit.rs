use std::collections::BTreeMap;

use ndarray::ArrayView1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generator::check_dim;
use super::invert::{invert_best_effort, InversionOpts};
use super::{Boundary, Generator, LatentError};
use crate::data::{Candidate, CandidateId, Dataset, ProtectedAttribute};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EditMode {
    /// Mirror the code across the boundary hyperplane.
    Reflect,
    /// Move the code by `lambda` along the boundary normal; positive values
    /// move toward the boundary's positive label.
    FixedLambda(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EditSpec {
    pub mode: EditMode,
    /// Boundaries of other attributes to hold fixed: the edit direction is
    /// projected onto their orthogonal complement. Empty by default.
    pub condition_on: Vec<ProtectedAttribute>,
}

impl Default for EditSpec {
    fn default() -> Self {
        Self {
            mode: EditMode::Reflect,
            condition_on: Vec::new(),
        }
    }
}

impl EditSpec {
    pub fn fixed_lambda(lambda: f64) -> Self {
        Self {
            mode: EditMode::FixedLambda(lambda),
            condition_on: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), LatentError> {
        match self.mode {
            EditMode::FixedLambda(l) if !l.is_finite() => Err(LatentError::NonFiniteLambda),
            _ => Ok(()),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Move `z` along the boundary normal.
pub fn edit(z: &[f64], boundary: &Boundary, mode: EditMode) -> Result<Vec<f64>, LatentError> {
    edit_along(z, boundary, &boundary.alpha, mode)
}

/// Apply an edit moving along `direction` instead of the normal. Reflect
/// still lands at the negated signed distance.
pub fn edit_along(
    z: &[f64],
    boundary: &Boundary,
    direction: &[f64],
    mode: EditMode,
) -> Result<Vec<f64>, LatentError> {
    check_dim(boundary.dim(), z.len())?;
    check_dim(boundary.dim(), direction.len())?;
    let step = match mode {
        EditMode::Reflect => {
            let along = dot(&boundary.alpha, direction);
            if along.abs() < 1e-12 {
                return Err(LatentError::DegenerateBoundary);
            }
            -2.0 * boundary.signed_distance(z) / along
        }
        EditMode::FixedLambda(l) if l.is_finite() => l,
        EditMode::FixedLambda(_) => return Err(LatentError::NonFiniteLambda),
    };
    Ok(z.iter().zip(direction).map(|(v, d)| v + step * d).collect())
}

/// The unit component of `boundary.alpha` orthogonal to every other normal.
pub fn conditioned_direction(
    boundary: &Boundary,
    others: &[&Boundary],
) -> Result<Vec<f64>, LatentError> {
    // Gram-Schmidt over the other normals, then project them out.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for o in others {
        check_dim(boundary.dim(), o.dim())?;
        let mut v = o.alpha.clone();
        for q in &basis {
            let c = dot(&v, q);
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-9 {
            basis.push(v.iter().map(|a| a / n).collect());
        }
    }
    let mut dir = boundary.alpha.clone();
    for q in &basis {
        let c = dot(&dir, q);
        dir.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
    }
    let n = dot(&dir, &dir).sqrt();
    if n < 1e-9 {
        return Err(LatentError::DegenerateBoundary);
    }
    Ok(dir.iter().map(|a| a / n).collect())
}

/// Inversions whose residual exceeds
/// `max(rejection_factor * median residual, rejection_floor)` are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CounterfactualOpts {
    pub inversion: InversionOpts,
    pub rejection_factor: f64,
    pub rejection_floor: f64,
}

impl Default for CounterfactualOpts {
    fn default() -> Self {
        Self {
            inversion: InversionOpts::default(),
            rejection_factor: 10.0,
            rejection_floor: 1e-4,
        }
    }
}

/// Inverted latent codes of a whole population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedPopulation {
    pub codes: BTreeMap<CandidateId, Vec<f64>>,
    pub residuals: BTreeMap<CandidateId, f64>,
    pub rejection_threshold: f64,
}

impl InvertedPopulation {
    pub fn is_valid(&self, id: CandidateId) -> bool {
        self.residuals
            .get(&id)
            .is_some_and(|&r| r <= self.rejection_threshold)
    }

    pub fn rejected(&self) -> usize {
        self.residuals
            .keys()
            .filter(|&&id| !self.is_valid(id))
            .count()
    }

    /// The population as seen through the generator: features `G(z_inv)`,
    /// latents `z_inv`, and rejected inversions flagged invalid.
    pub fn reconstructed(&self, gen: &dyn Generator, ds: &Dataset) -> Result<Dataset, LatentError> {
        let mut out = Vec::with_capacity(ds.len());
        for c in ds.iter() {
            let z = self
                .codes
                .get(&c.id)
                .ok_or(LatentError::MissingCode(c.id))?;
            let mut r = c.clone();
            r.features = gen.forward(ArrayView1::from(z)).to_vec();
            r.latent = Some(z.clone());
            r.valid = c.valid && self.is_valid(c.id);
            out.push(r);
        }
        let mut rec = Dataset::new(out);
        rec.feature_names = ds.feature_names.clone();
        Ok(rec)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Invert every candidate (in parallel, one seed stream per id).
pub fn invert_population(
    gen: &dyn Generator,
    ds: &Dataset,
    opts: &CounterfactualOpts,
) -> Result<InvertedPopulation, LatentError> {
    let results: Vec<_> = ds
        .candidates()
        .par_iter()
        .map(|c| {
            let o = InversionOpts {
                seed: derive_seed(opts.inversion.seed, &[c.id.0]),
                ..opts.inversion
            };
            invert_best_effort(gen, &c.features, None, &o).map(|inv| (c.id, inv))
        })
        .collect::<Result<_, _>>()?;
    let threshold = (opts.rejection_factor
        * median(results.iter().map(|(_, r)| r.residual).collect()))
    .max(opts.rejection_floor);
    let mut codes = BTreeMap::new();
    let mut residuals = BTreeMap::new();
    for (id, inv) in results {
        residuals.insert(id, inv.residual);
        codes.insert(id, inv.z);
    }
    Ok(InvertedPopulation {
        codes,
        residuals,
        rejection_threshold: threshold,
    })
}

/// Counterfactual candidates for every labeled protected member of the
/// boundary's attribute: edit the inverted code and regenerate features.
/// Ids, labels and truth are kept; rejected inversions are flagged invalid.
pub fn counterfactualize_inverted(
    gen: &dyn Generator,
    ds: &Dataset,
    inverted: &InvertedPopulation,
    boundary: &Boundary,
    others: &[&Boundary],
    spec: &EditSpec,
) -> Result<Dataset, LatentError> {
    spec.validate()?;
    check_dim(gen.latent_dim(), boundary.dim())?;
    let direction = if others.is_empty() {
        boundary.alpha.clone()
    } else {
        conditioned_direction(boundary, others)?
    };
    let attr = boundary.attribute;
    let edited: Vec<&Candidate> = ds
        .iter()
        .filter(|c| c.demographics.is_protected(attr) == Some(true))
        .collect();
    let out: Vec<Candidate> = edited
        .par_iter()
        .map(|c| {
            let z = inverted
                .codes
                .get(&c.id)
                .ok_or(LatentError::MissingCode(c.id))?;
            let z_cf = edit_along(z, boundary, &direction, spec.mode)?;
            let mut cf = (*c).clone();
            cf.features = gen.forward(ArrayView1::from(&z_cf)).to_vec();
            cf.latent = Some(z_cf);
            cf.valid = c.valid && inverted.is_valid(c.id);
            Ok(cf)
        })
        .collect::<Result<_, LatentError>>()?;
    let mut cf = Dataset::new(out);
    cf.feature_names = ds.feature_names.clone();
    Ok(cf)
}

/// Invert, edit and regenerate the protected members of `attr`.
pub fn counterfactualize(
    gen: &dyn Generator,
    ds: &Dataset,
    boundaries: &[Boundary],
    attr: ProtectedAttribute,
    spec: &EditSpec,
    opts: &CounterfactualOpts,
) -> Result<Dataset, LatentError> {
    let boundary = boundaries
        .iter()
        .find(|b| b.attribute == attr)
        .ok_or(LatentError::MissingBoundary(attr))?;
    let others = spec
        .condition_on
        .iter()
        .filter(|&&a| a != attr)
        .map(|&a| {
            boundaries
                .iter()
                .find(|b| b.attribute == a)
                .ok_or(LatentError::MissingBoundary(a))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let inverted = invert_population(gen, ds, opts)?;
    counterfactualize_inverted(gen, ds, &inverted, boundary, &others, spec)
}
