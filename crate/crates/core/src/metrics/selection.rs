use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::data::{CandidateId, GroupLabel, ProtectedAttribute, ScoredPopulation};

/// The four-fifths rule: DI below this flags adverse impact.
pub const ADVERSE_IMPACT: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SelectionRule {
    TopN(usize),
    Threshold(f64),
}

/// Candidates selected on their interview score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub rule: SelectionRule,
    pub selected: BTreeSet<CandidateId>,
}

/// The `n` highest interview scores; ties at the cutoff go to lower ids.
pub fn select_top_n(pop: &ScoredPopulation, n: usize) -> SelectionOutcome {
    let mut order: Vec<(f64, CandidateId)> =
        pop.members().iter().map(|m| (m.scores.i, m.id)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    SelectionOutcome {
        rule: SelectionRule::TopN(n),
        selected: order.into_iter().take(n).map(|(_, id)| id).collect(),
    }
}

/// Everyone with interview score at least `tau`.
pub fn select_threshold(pop: &ScoredPopulation, tau: f64) -> Result<SelectionOutcome, MetricError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(MetricError::BadThreshold(tau));
    }
    Ok(SelectionOutcome {
        rule: SelectionRule::Threshold(tau),
        selected: pop
            .members()
            .iter()
            .filter(|m| m.scores.i >= tau)
            .map(|m| m.id)
            .collect(),
    })
}

pub fn select(
    pop: &ScoredPopulation,
    rule: SelectionRule,
) -> Result<SelectionOutcome, MetricError> {
    match rule {
        SelectionRule::TopN(n) => Ok(select_top_n(pop, n)),
        SelectionRule::Threshold(t) => select_threshold(pop, t),
    }
}

/// `rate_u / rate_p`, with `+inf` when only the unprivileged group has
/// selections and `1` when neither has.
pub fn di_from_rates(rate_unprivileged: f64, rate_privileged: f64) -> f64 {
    if rate_privileged == 0.0 {
        if rate_unprivileged == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        rate_unprivileged / rate_privileged
    }
}

/// Selection-rate ratio between two arbitrary label sets of one attribute.
pub fn disparate_impact_between(
    outcome: &SelectionOutcome,
    pop: &ScoredPopulation,
    attr: ProtectedAttribute,
    unprivileged: &[GroupLabel],
    privileged: &[GroupLabel],
) -> Result<f64, MetricError> {
    let (mut su, mut nu, mut sp, mut np) = (0usize, 0usize, 0usize, 0usize);
    for m in pop.members() {
        let Some(g) = m.demographics.get(attr) else {
            continue;
        };
        let chosen = usize::from(outcome.selected.contains(&m.id));
        if unprivileged.contains(&g) {
            nu += 1;
            su += chosen;
        } else if privileged.contains(&g) {
            np += 1;
            sp += chosen;
        }
    }
    if nu == 0 || np == 0 {
        return Err(MetricError::EmptyGroup(attr));
    }
    Ok(di_from_rates(su as f64 / nu as f64, sp as f64 / np as f64))
}

/// `P(selected | protected) / P(selected | reference)` over labeled
/// members; for ethnicity the reference group is Asi + Cau.
pub fn disparate_impact(
    outcome: &SelectionOutcome,
    pop: &ScoredPopulation,
    attr: ProtectedAttribute,
) -> Result<f64, MetricError> {
    let (prot, reference): (Vec<GroupLabel>, Vec<GroupLabel>) =
        attr.labels().iter().partition(|g| g.is_protected());
    disparate_impact_between(outcome, pop, attr, &prot, &reference)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SweepFamily {
    /// `N = start, start + step, ...`, always ending at the population size.
    TopN { start: usize, step: usize },
    /// `tau = 0, step, 2 step, ..., 1`.
    Threshold { step: f64 },
}

impl SweepFamily {
    pub fn top_n() -> Self {
        SweepFamily::TopN {
            start: 10,
            step: 10,
        }
    }

    pub fn threshold() -> Self {
        SweepFamily::Threshold { step: 0.05 }
    }

    pub fn grid(&self, population: usize) -> Vec<SelectionRule> {
        match *self {
            SweepFamily::TopN { start, step } => {
                let mut ns: Vec<usize> = (start.max(1)..population).step_by(step.max(1)).collect();
                ns.push(population);
                ns.into_iter().map(SelectionRule::TopN).collect()
            }
            SweepFamily::Threshold { step } => {
                let steps = (1.0 / step).round().max(1.0) as usize;
                (0..=steps)
                    .map(|k| SelectionRule::Threshold(k as f64 / steps as f64))
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub parameter: f64,
    #[serde(with = "crate::io::ratio")]
    pub di: f64,
}

/// DI over a grid of selection parameters.
pub fn di_sweep(
    pop: &ScoredPopulation,
    attr: ProtectedAttribute,
    family: SweepFamily,
) -> Result<Vec<SweepPoint>, MetricError> {
    family
        .grid(pop.len())
        .into_iter()
        .map(|rule| {
            let parameter = match rule {
                SelectionRule::TopN(n) => n as f64,
                SelectionRule::Threshold(t) => t,
            };
            let di = disparate_impact(&select(pop, rule)?, pop, attr)?;
            Ok(SweepPoint { parameter, di })
        })
        .collect()
}
