use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::data::{Dimension, GroupLabel, PairedAuditRecord};

/// Tolerance of the per-candidate counterfactual-fairness verdict.
pub const DEFAULT_EPSILON: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionShift {
    pub mean: f64,
    pub median: f64,
    /// Share of records with `|shift| > epsilon` on this dimension.
    pub above_epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupShift {
    pub count: usize,
    pub mean: BTreeMap<Dimension, f64>,
    pub original_median: BTreeMap<Dimension, f64>,
    pub counterfactual_median: BTreeMap<Dimension, f64>,
    pub fair_fraction: f64,
}

/// Paired `counterfactual - original` statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftStats {
    pub epsilon: f64,
    pub records: usize,
    pub dimensions: BTreeMap<Dimension, DimensionShift>,
    /// Share of records whose largest absolute shift is at most epsilon.
    pub fair_fraction: f64,
    pub groups: BTreeMap<GroupLabel, GroupShift>,
}

impl ShiftStats {
    pub fn is_fair(&self) -> bool {
        self.fair_fraction == 1.0
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn is_fair(r: &PairedAuditRecord, epsilon: f64) -> bool {
    r.shift().iter().all(|d| d.abs() <= epsilon)
}

fn per_dim(f: impl Fn(usize) -> f64) -> BTreeMap<Dimension, f64> {
    Dimension::ALL.iter().map(|&d| (d, f(d.index()))).collect()
}

pub fn shift_stats(records: &[PairedAuditRecord], epsilon: f64) -> Result<ShiftStats, MetricError> {
    if records.is_empty() {
        return Err(MetricError::Empty);
    }
    let shifts: Vec<[f64; 6]> = records.iter().map(PairedAuditRecord::shift).collect();
    let column = |rows: &[[f64; 6]], k: usize| -> Vec<f64> { rows.iter().map(|s| s[k]).collect() };
    let dimensions = Dimension::ALL
        .iter()
        .map(|&d| {
            let col = column(&shifts, d.index());
            let above = col.iter().filter(|v| v.abs() > epsilon).count();
            (
                d,
                DimensionShift {
                    mean: mean(&col),
                    median: median(&col),
                    above_epsilon: above as f64 / col.len() as f64,
                },
            )
        })
        .collect();
    let fair = records.iter().filter(|r| is_fair(r, epsilon)).count();

    let mut by_group: BTreeMap<GroupLabel, Vec<&PairedAuditRecord>> = BTreeMap::new();
    for r in records {
        by_group.entry(r.original_group).or_default().push(r);
    }
    let groups = by_group
        .into_iter()
        .map(|(g, rs)| {
            let sh: Vec<[f64; 6]> = rs.iter().map(|r| r.shift()).collect();
            let orig: Vec<[f64; 6]> = rs.iter().map(|r| r.original.to_array()).collect();
            let cf: Vec<[f64; 6]> = rs.iter().map(|r| r.counterfactual.to_array()).collect();
            let fair = rs.iter().filter(|r| is_fair(r, epsilon)).count();
            (
                g,
                GroupShift {
                    count: rs.len(),
                    mean: per_dim(|k| mean(&column(&sh, k))),
                    original_median: per_dim(|k| median(&column(&orig, k))),
                    counterfactual_median: per_dim(|k| median(&column(&cf, k))),
                    fair_fraction: fair as f64 / rs.len() as f64,
                },
            )
        })
        .collect();
    Ok(ShiftStats {
        epsilon,
        records: records.len(),
        dimensions,
        fair_fraction: fair as f64 / records.len() as f64,
        groups,
    })
}
