use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::data::{Dataset, ProtectedAttribute};
use crate::nn::sigmoid;
use crate::rng::{stream_rng, tag};

/// Settings of the attribute-leakage probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub holdout_fraction: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    /// A leak is flagged when held-out accuracy beats the majority-class
    /// rate by more than this.
    pub leak_margin: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            holdout_fraction: 0.3,
            iterations: 300,
            learning_rate: 0.5,
            leak_margin: 0.45,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub majority_rate: f64,
    pub leak: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnawarenessVerdict {
    /// Feature names that look like protected attributes.
    pub named_columns: Vec<String>,
    pub probes: BTreeMap<ProtectedAttribute, ProbeResult>,
}

impl UnawarenessVerdict {
    pub fn pass(&self) -> bool {
        self.named_columns.is_empty() && self.probes.values().all(|p| !p.leak)
    }
}

const ATTRIBUTE_WORDS: [&str; 6] = ["gender", "sex", "ethnicity", "race", "age", "protected"];

fn standardize(x: &mut [Vec<f64>]) {
    let d = x.first().map_or(0, Vec::len);
    let n = x.len() as f64;
    for k in 0..d {
        let m = x.iter().map(|r| r[k]).sum::<f64>() / n;
        let sd = (x.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>() / n).sqrt();
        for r in x.iter_mut() {
            r[k] = if sd > 0.0 { (r[k] - m) / sd } else { 0.0 };
        }
    }
}

fn logistic_fit(x: &[Vec<f64>], y: &[f64], cfg: &ProbeConfig) -> (Vec<f64>, f64) {
    let d = x.first().map_or(0, Vec::len);
    let n = x.len() as f64;
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    for _ in 0..cfg.iterations {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (r, &t) in x.iter().zip(y) {
            let p = sigmoid(r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b);
            let e = (p - t) / n;
            gw.iter_mut().zip(r).for_each(|(g, v)| *g += e * v);
            gb += e;
        }
        w.iter_mut()
            .zip(&gw)
            .for_each(|(a, g)| *a -= cfg.learning_rate * g);
        b -= cfg.learning_rate * gb;
    }
    (w, b)
}

/// Check that protected attributes are not explicitly among the features:
/// by column name, and by a linear probe that tries to recover each
/// protected/reference split from the features.
pub fn assert_unawareness(
    ds: &Dataset,
    cfg: &ProbeConfig,
) -> Result<UnawarenessVerdict, MetricError> {
    if ds.is_empty() {
        return Err(MetricError::Empty);
    }
    let named_columns = ds
        .feature_names
        .iter()
        .filter(|n| {
            let lower = n.to_lowercase();
            ATTRIBUTE_WORDS
                .iter()
                .any(|w| lower.split(|c: char| !c.is_alphanumeric()).any(|t| t == *w))
        })
        .cloned()
        .collect();

    let mut probes = BTreeMap::new();
    for attr in ProtectedAttribute::ALL {
        let mut rows: Vec<(Vec<f64>, f64)> = ds
            .iter()
            .filter_map(|c| {
                c.demographics
                    .is_protected(attr)
                    .map(|p| (c.features.clone(), f64::from(u8::from(p))))
            })
            .collect();
        let positives = rows.iter().filter(|r| r.1 > 0.5).count();
        if rows.len() < 10 || positives == 0 || positives == rows.len() {
            continue;
        }
        rows.shuffle(&mut stream_rng(
            cfg.seed,
            &[tag::PROBE, attr.index() as u64],
        ));
        let holdout =
            ((rows.len() as f64 * cfg.holdout_fraction).round() as usize).clamp(1, rows.len() - 1);
        let (mut x, y): (Vec<Vec<f64>>, Vec<f64>) = rows.into_iter().unzip();
        standardize(&mut x);
        let (test_x, train_x) = x.split_at(holdout);
        let (test_y, train_y) = y.split_at(holdout);
        let (w, b) = logistic_fit(train_x, train_y, cfg);
        let correct = test_x
            .iter()
            .zip(test_y)
            .filter(|(r, &t)| {
                let s: f64 = r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
                (s > 0.0) == (t > 0.5)
            })
            .count();
        let accuracy = correct as f64 / test_y.len() as f64;
        let pos = test_y.iter().filter(|&&t| t > 0.5).count() as f64 / test_y.len() as f64;
        let majority_rate = pos.max(1.0 - pos);
        probes.insert(
            attr,
            ProbeResult {
                accuracy,
                majority_rate,
                leak: accuracy - majority_rate > cfg.leak_margin,
            },
        );
    }
    Ok(UnawarenessVerdict {
        named_columns,
        probes,
    })
}
