//! End-to-end acceptance suite. Every criterion prints one PASS/FAIL line;
//! the test fails if any criterion does.
//!
//! Run with `cargo test -p counterfair-core --test acceptance -- --nocapture`
//! to see the lines.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use counterfair_core::io::{
    parse_counterfactual_csv, parse_scores_csv, to_json, write_counterfactual_csv, write_scores_csv,
};
use counterfair_core::latent::{
    counterfactualize_inverted, edit, invert, invert_best_effort, invert_population,
    learn_boundary, Boundary, BoundaryOpts, CounterfactualOpts, EditMode, EditSpec, Generator,
    InversionOpts, LinearGenerator, SyntheticFaceGenerator,
};
use counterfair_core::metrics::{
    disparate_impact, mutual_information, select_threshold, select_top_n, shift_stats, MiEstimator,
    SweepPoint,
};
use counterfair_core::models::{attribute_objective, ModelHyper};
use counterfair_core::nn::{
    gradient_check, mae, weighted_ce_loss, Activation, ClassWeights, CrossEntropyObjective,
    DenseNet, LayerSpec, Mode, MseObjective, Network, TrainConfig,
};
use counterfair_core::pipeline::{
    audit_blackbox, run_audit, AuditReport, ExperimentConfig, Provenance,
};
use counterfair_core::{
    Candidate, CandidateId, Dataset, Demographics, GroupLabel, PairedAuditRecord,
    ProtectedAttribute, ScoreVector, ScoredCandidate, ScoredPopulation,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

// 1. Gradient fidelity ---------------------------------------------------

/// Nudge every parameter off its initial value. Zero-initialized biases can
/// put a ReLU pre-activation exactly on the kink, where finite differences
/// measure the average of the two one-sided slopes.
fn jitter<N: Network>(mut net: N) -> N {
    for (b, p) in net.param_slices_mut().into_iter().enumerate() {
        for (k, v) in p.iter_mut().enumerate() {
            *v += 0.05 * ((b * 31 + k) as f64 * 1.37).sin();
        }
    }
    net
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let x = Array2::from_shape_fn((8, 6), |(i, j)| ((i * 6 + j) as f64 * 0.73).sin());
    let mse = |w: usize| MseObjective {
        targets: vec![Array2::from_shape_fn((8, w), |(i, j)| {
            ((i + 3 * j) % 7) as f64 / 7.0
        })],
    };
    let mut worst: f64 = 0.0;
    let mut combos = 0;
    let mut record = |label: &str, r: f64| -> Result<(), String> {
        combos += 1;
        worst = worst.max(r);
        ensure(r <= 1e-4, || format!("{label}: relative error {r:.2e}"))
    };

    for act in [
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Identity,
        Activation::ReLU,
    ] {
        let net = jitter(
            DenseNet::new(
                6,
                &[LayerSpec::hidden(5, 0.0), LayerSpec::output(2, act)],
                7,
            )
            .map_err(|e| e.to_string())?,
        );
        for mode in [Mode::Train, Mode::Eval] {
            let r = gradient_check(&net, &x, &mse(2), mode, 3, 1e-5).map_err(|e| e.to_string())?;
            record(&format!("{act:?}/MSE/{mode:?}"), r.max_relative_error)?;
        }
    }

    let deep = jitter(
        DenseNet::new(
            6,
            &[
                LayerSpec::hidden(7, 0.2),
                LayerSpec::hidden(4, 0.2),
                LayerSpec::output(1, Activation::Sigmoid),
            ],
            5,
        )
        .map_err(|e| e.to_string())?,
    );
    let r = gradient_check(&deep, &x, &mse(1), Mode::Train, 9, 1e-5).map_err(|e| e.to_string())?;
    record("dropout+batchnorm/MSE", r.max_relative_error)?;

    let cls = jitter(
        DenseNet::new(
            6,
            &[
                LayerSpec::hidden(5, 0.2),
                LayerSpec::output(3, Activation::Identity),
            ],
            2,
        )
        .map_err(|e| e.to_string())?,
    );
    let ce = CrossEntropyObjective {
        targets: vec![vec![
            Some(0),
            Some(2),
            None,
            Some(1),
            Some(2),
            Some(0),
            Some(1),
            None,
        ]],
        weights: vec![ClassWeights::new(vec![1.0, 2.5, 4.0]).map_err(|e| e.to_string())?],
    };
    for mode in [Mode::Train, Mode::Eval] {
        let r = gradient_check(&cls, &x, &ce, mode, 4, 1e-5).map_err(|e| e.to_string())?;
        record(&format!("weighted CE/{mode:?}"), r.max_relative_error)?;
    }

    // The two shipped multi-task architectures with their objectives.
    let hyper = ModelHyper {
        trunk_widths: vec![5, 4],
        head_hidden: 3,
        dropout: 0.2,
        train: TrainConfig::default(),
        init_seed: 1,
    };
    let oceani = jitter(hyper.oceani_net(6).map_err(|e| e.to_string())?);
    let six = MseObjective {
        targets: (0..6)
            .map(|k| Array2::from_shape_fn((8, 1), |(i, _)| ((i + k) % 5) as f64 / 5.0))
            .collect(),
    };
    let r = gradient_check(&oceani, &x, &six, Mode::Train, 5, 1e-5).map_err(|e| e.to_string())?;
    record("multi-task regressor", r.max_relative_error)?;

    let ds = Dataset::new(
        (0..8)
            .map(|i| {
                let g = [GroupLabel::F, GroupLabel::M][i % 2];
                let e = [GroupLabel::AfAm, GroupLabel::Cau, GroupLabel::Asi][i % 3];
                let a = (i % 4 != 3)
                    .then_some([GroupLabel::Under40, GroupLabel::AtOrOver40][(i / 2) % 2]);
                Candidate::new(
                    i as u64,
                    Demographics::new(Some(g), Some(e), a),
                    x.row(i).to_vec(),
                )
            })
            .collect(),
    );
    let attr_net = jitter(hyper.attribute_net(6).map_err(|e| e.to_string())?);
    let objective = attribute_objective(&ds).map_err(|e| e.to_string())?;
    let r = gradient_check(&attr_net, &x, &objective, Mode::Train, 6, 1e-5)
        .map_err(|e| e.to_string())?;
    record("multi-task classifier", r.max_relative_error)?;

    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "{combos} combinations, worst relative error {worst:.2e}, {elapsed:.2?}"
    ))
}

// 2. Metric oracles ------------------------------------------------------

fn brute_top_n(scores: &[(u64, f64)], n: usize) -> Vec<u64> {
    // A candidate is selected when fewer than n others outrank it.
    scores
        .iter()
        .filter(|(id, s)| {
            let ahead = scores
                .iter()
                .filter(|(j, t)| t > s || (t == s && j < id))
                .count();
            ahead < n
        })
        .map(|(id, _)| *id)
        .collect()
}

fn brute_di(selected: &[u64], labels: &[(u64, GroupLabel)]) -> Option<f64> {
    let rate = |protected: bool| {
        let members: Vec<u64> = labels
            .iter()
            .filter(|(_, g)| (*g == GroupLabel::M) == protected)
            .map(|(id, _)| *id)
            .collect();
        let hits = members.iter().filter(|id| selected.contains(id)).count();
        (!members.is_empty()).then(|| hits as f64 / members.len() as f64)
    };
    let (u, p) = (rate(true)?, rate(false)?);
    Some(match (u, p) {
        (u, p) if p > 0.0 => u / p,
        (u, _) if u > 0.0 => f64::INFINITY,
        _ => 1.0,
    })
}

fn same(a: f64, b: f64, tol: f64) -> bool {
    (a.is_infinite() && a == b) || (a - b).abs() <= tol
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checks = 0usize;
    for case in 0..500 {
        let size = rng.random_range(2..=20usize);
        // Coarse scores so ties are common.
        let scores: Vec<(u64, f64)> = (0..size)
            .map(|k| {
                (
                    k as u64 * 3 + 1,
                    f64::from(rng.random_range(0..=10u8)) / 10.0,
                )
            })
            .collect();
        let labels: Vec<(u64, GroupLabel)> = scores
            .iter()
            .map(|(id, _)| {
                (
                    *id,
                    if rng.random_bool(0.5) {
                        GroupLabel::M
                    } else {
                        GroupLabel::F
                    },
                )
            })
            .collect();
        let pop = ScoredPopulation::new(
            scores
                .iter()
                .zip(&labels)
                .map(|(&(id, s), &(_, g))| ScoredCandidate {
                    id: CandidateId(id),
                    demographics: Demographics::new(Some(g), None, None),
                    valid: true,
                    scores: ScoreVector {
                        i: s,
                        ..ScoreVector::splat(0.5)
                    },
                })
                .collect(),
        );
        for n in 0..=size + 1 {
            let got: Vec<u64> = select_top_n(&pop, n).selected.iter().map(|c| c.0).collect();
            let want = brute_top_n(&scores, n);
            ensure(got == want, || {
                format!("case {case}: top-{n} {got:?} vs {want:?}")
            })?;
            let outcome = select_top_n(&pop, n);
            match (
                disparate_impact(&outcome, &pop, ProtectedAttribute::Gender),
                brute_di(&want, &labels),
            ) {
                (Ok(d), Some(e)) => {
                    ensure(same(d, e, 1e-9), || format!("case {case}: DI {d} vs {e}"))?
                }
                (Err(_), None) => {}
                (d, e) => return Err(format!("case {case}: DI {d:?} vs {e:?}")),
            }
            checks += 1;
        }
        for k in 0..=20 {
            let tau = k as f64 / 20.0;
            let got: Vec<u64> = select_threshold(&pop, tau)
                .map_err(|e| e.to_string())?
                .selected
                .iter()
                .map(|c| c.0)
                .collect();
            let want: Vec<u64> = scores
                .iter()
                .filter(|(_, s)| *s >= tau)
                .map(|(id, _)| *id)
                .collect();
            ensure(got == want, || {
                format!("case {case}: tau {tau} {got:?} vs {want:?}")
            })?;
            checks += 1;
        }

        let w = rng.random_range(1..=3usize);
        let rows = size.min(20 / w).max(1);
        let pred = Array2::from_shape_fn((rows, w), |_| rng.random::<f64>());
        let target = Array2::from_shape_fn((rows, w), |_| rng.random::<f64>());
        let mut sum = 0.0;
        for r in 0..rows {
            for c in 0..w {
                sum += (pred[[r, c]] - target[[r, c]]).abs();
            }
        }
        let want = sum / (rows * w) as f64;
        let got = mae(pred.view(), target.view()).map_err(|e| e.to_string())?;
        ensure((got - want).abs() <= 1e-9, || {
            format!("case {case}: MAE {got} vs {want}")
        })?;

        let classes = rng.random_range(2..=4usize);
        let logits: Array2<f64> =
            Array2::from_shape_fn((rows, classes), |_| rng.random_range(-3.0..3.0));
        let targets: Vec<Option<usize>> = (0..rows)
            .map(|_| rng.random_bool(0.85).then(|| rng.random_range(0..classes)))
            .collect();
        let weights: Vec<f64> = (0..classes).map(|_| rng.random_range(0.5..4.0)).collect();
        let mut total = 0.0;
        let mut counted = 0;
        for (r, t) in targets.iter().enumerate() {
            if let Some(y) = *t {
                let z: f64 = (0..classes).map(|c| logits[[r, c]].exp()).sum();
                total += -weights[y] * (logits[[r, y]].exp() / z).ln();
                counted += 1;
            }
        }
        let want = if counted == 0 {
            0.0
        } else {
            total / counted as f64
        };
        let (got, _) = weighted_ce_loss(
            logits.view(),
            &targets,
            &ClassWeights::new(weights).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        ensure((got - want).abs() <= 1e-9, || {
            format!("case {case}: CE {got} vs {want}")
        })?;
        checks += 2;
    }

    // Binned MI against the plug-in sum over exact joints.
    let joint = |cells: &[(f64, GroupLabel, usize)]| {
        let mut y = Vec::new();
        let mut a = Vec::new();
        for &(v, g, c) in cells {
            y.extend(std::iter::repeat_n(v, c));
            a.extend(std::iter::repeat_n(g, c));
        }
        (y, a)
    };
    use GroupLabel::{F, M};
    let (y, a) = joint(&[(0.05, F, 10), (0.95, M, 10)]);
    let mi = mutual_information(&y, &a, MiEstimator::Binned(20)).map_err(|e| e.to_string())?;
    ensure((mi - std::f64::consts::LN_2).abs() <= 1e-12, || {
        format!("indicator MI {mi}")
    })?;

    let (y, a) = joint(&[(0.05, F, 8), (0.95, M, 8), (0.05, M, 2), (0.95, F, 2)]);
    let mi2 = mutual_information(&y, &a, MiEstimator::Binned(20)).map_err(|e| e.to_string())?;
    let exact = 0.8 * (0.4f64 / 0.25).ln() + 0.2 * (0.1f64 / 0.25).ln();
    ensure((mi2 - exact).abs() <= 1e-12, || {
        format!("0.4/0.1 joint MI {mi2} vs {exact}")
    })?;
    // The quoted reference value 0.1928 is the exact 0.192745 rounded up.
    ensure((mi2 - 0.1928).abs() < 1e-4, || {
        format!("0.4/0.1 joint MI {mi2}")
    })?;
    checks += 2;
    Ok(format!(
        "{checks} oracle comparisons; MI {mi:.6} and {mi2:.6} nats"
    ))
}

// 3. Edit algebra --------------------------------------------------------

fn edit_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_involution: f64 = 0.0;
    let mut worst_antisym: f64 = 0.0;
    for case in 0..10_000 {
        let d = 16;
        let z: Vec<f64> = normal_vec(&mut rng, d)
            .into_iter()
            .map(|v| v * 2.0)
            .collect();
        let w = normal_vec(&mut rng, d);
        let b = rng.random_range(-2.0..2.0);
        let bd = Boundary::from_weights(ProtectedAttribute::Gender, &w, b, GroupLabel::M)
            .map_err(|e| e.to_string())?;
        let once = edit(&z, &bd, EditMode::Reflect).map_err(|e| e.to_string())?;
        let twice = edit(&once, &bd, EditMode::Reflect).map_err(|e| e.to_string())?;
        let inv = twice
            .iter()
            .zip(&z)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let anti = (bd.signed_distance(&once) + bd.signed_distance(&z)).abs();
        worst_involution = worst_involution.max(inv);
        worst_antisym = worst_antisym.max(anti);
        ensure(inv <= 1e-9, || {
            format!("case {case}: involution error {inv:.2e}")
        })?;
        ensure(anti <= 1e-9, || {
            format!("case {case}: signed distance not negated ({anti:.2e})")
        })?;
        let identity = edit(&z, &bd, EditMode::FixedLambda(0.0)).map_err(|e| e.to_string())?;
        ensure(identity == z, || {
            format!("case {case}: FixedLambda(0) moved the code")
        })?;
    }
    Ok(format!(
        "10000 random pairs; involution {worst_involution:.1e}, antisymmetry {worst_antisym:.1e}"
    ))
}

// 4. Inversion -----------------------------------------------------------

fn inversion() -> Outcome {
    let gen = SyntheticFaceGenerator::new(ExperimentConfig::default().generator_seed())
        .map_err(|e| e.to_string())?;
    let opts = InversionOpts {
        restarts: 3,
        ..Default::default()
    };
    let residuals: Vec<f64> = (0..1000u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(10_000 + k);
            let z0 = normal_vec(&mut rng, gen.latent_dim());
            let x = gen.forward(ArrayView1::from(&z0)).to_vec();
            invert_best_effort(&gen, &x, None, &InversionOpts { seed: k, ..opts })
                .map(|i| i.residual)
                .unwrap_or(f64::INFINITY)
        })
        .collect();
    let good = residuals.iter().filter(|&&r| r <= 1e-4).count();
    ensure(good >= 990, || {
        format!("only {good}/1000 inversions reached 1e-4")
    })?;

    let lin = LinearGenerator::orthonormal(24, 8, 2, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let x = normal_vec(&mut rng, 24);
        let inv = invert(&lin, &x, None, &InversionOpts::default())
            .or_else(|_| invert_best_effort(&lin, &x, None, &InversionOpts::default()))
            .map_err(|e| e.to_string())?;
        let closed: Array1<f64> = lin.weights.t().dot(&ArrayView1::from(&x));
        let gap = inv
            .z
            .iter()
            .zip(&closed)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(gap);
    }
    ensure(worst <= 1e-6, || {
        format!("linear closed-form gap {worst:.2e}")
    })?;
    Ok(format!(
        "{good}/1000 codes at residual <= 1e-4; linear closed-form gap {worst:.1e}"
    ))
}

// 5. Boundary recovery ---------------------------------------------------

fn margin_codes(g: &[f64], n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<GroupLabel>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut codes = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    while codes.len() < n {
        let z = normal_vec(&mut rng, g.len());
        let s = dot(g, &z) - 0.3;
        if s.abs() < 0.25 {
            continue;
        }
        labels.push(if s > 0.0 {
            GroupLabel::AfAm
        } else {
            GroupLabel::Cau
        });
        codes.push(z);
    }
    (codes, labels)
}

fn boundary_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = unit(normal_vec(&mut rng, 16));
    let (codes, labels) = margin_codes(&g, 2000, 51);
    let b = learn_boundary(
        &codes,
        &labels,
        ProtectedAttribute::Ethnicity,
        &BoundaryOpts::default(),
    )
    .map_err(|e| e.to_string())?;
    let cos = dot(&b.alpha, &g);
    let (held, held_labels) = margin_codes(&g, 2000, 52);
    let correct = held
        .iter()
        .zip(&held_labels)
        .filter(|(z, l)| (b.signed_distance(z) > 0.0) == (**l == GroupLabel::AfAm))
        .count();
    let acc = correct as f64 / held.len() as f64;
    ensure(cos >= 0.99, || format!("cosine {cos:.4}"))?;
    ensure(acc >= 0.98, || format!("held-out accuracy {acc:.4}"))?;
    Ok(format!("cosine {cos:.4}, held-out accuracy {acc:.4}"))
}

// 6. Null-edit soundness -------------------------------------------------

fn null_edit() -> Outcome {
    let gen = LinearGenerator::orthonormal(20, 6, 1, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let alpha = unit(normal_vec(&mut rng, 6));
    let bd = Boundary::from_weights(ProtectedAttribute::Gender, &alpha, 0.1, GroupLabel::M)
        .map_err(|e| e.to_string())?;

    // Six latent readouts orthogonal to the edited direction, pulled back
    // to observation space through the orthonormal generator.
    let readouts: Vec<Vec<f64>> = (0..6)
        .map(|_| {
            let u = normal_vec(&mut rng, 6);
            let c = dot(&u, &alpha);
            let u: Vec<f64> = u.iter().zip(&alpha).map(|(a, b)| a - c * b).collect();
            gen.weights.dot(&ArrayView1::from(&u)).to_vec()
        })
        .collect();
    let score = |x: &[f64]| {
        ScoreVector::from_array(std::array::from_fn(|k| {
            1.0 / (1.0 + (-dot(&readouts[k], x)).exp())
        }))
    };

    let ds = Dataset::new(
        (0..300u64)
            .map(|i| {
                let z = normal_vec(&mut rng, 6);
                let g = if bd.signed_distance(&z) > 0.0 {
                    GroupLabel::M
                } else {
                    GroupLabel::F
                };
                let x = gen.forward(ArrayView1::from(&z)).to_vec();
                Candidate::new(i, Demographics::new(Some(g), None, None), x)
            })
            .collect(),
    );
    let inverted =
        invert_population(&gen, &ds, &CounterfactualOpts::default()).map_err(|e| e.to_string())?;
    let reconstructed = inverted
        .reconstructed(&gen, &ds)
        .map_err(|e| e.to_string())?;
    let mut records = Vec::new();
    for spec in [EditSpec::default(), EditSpec::fixed_lambda(2.5)] {
        let cf = counterfactualize_inverted(&gen, &ds, &inverted, &bd, &[], &spec)
            .map_err(|e| e.to_string())?;
        for c in cf.iter() {
            let orig = reconstructed.get(c.id).ok_or("missing original")?;
            records.push(PairedAuditRecord {
                candidate_id: c.id,
                edited_attribute: ProtectedAttribute::Gender,
                original: score(&orig.features),
                counterfactual: score(&c.features),
                original_group: GroupLabel::M,
            });
        }
    }
    let worst = records
        .iter()
        .flat_map(|r| r.shift())
        .map(f64::abs)
        .fold(0.0, f64::max);
    let stats = shift_stats(&records, 1e-9).map_err(|e| e.to_string())?;
    ensure(worst <= 1e-9, || format!("largest shift {worst:.2e}"))?;
    ensure(stats.fair_fraction == 1.0, || {
        format!("fair fraction {}", stats.fair_fraction)
    })?;
    Ok(format!(
        "{} edited candidates, largest shift {worst:.1e}",
        records.len()
    ))
}

// 7-10. Shipped pipeline -------------------------------------------------

struct Runs {
    biased: AuditReport,
    biased_time: Duration,
    biased_again: AuditReport,
    blackbox: AuditReport,
    unbiased: AuditReport,
    unbiased_time: Duration,
}

fn pipeline_runs() -> Result<Runs, String> {
    let timed = |cfg: &ExperimentConfig| {
        let t = Instant::now();
        run_audit(cfg, None, "acceptance")
            .map(|r| (r, t.elapsed()))
            .map_err(|e| e.to_string())
    };
    let biased_cfg = ExperimentConfig::default();
    let ((biased, _, exp2), biased_time) = timed(&biased_cfg)?;
    let ((biased_again, _, _), _) = timed(&biased_cfg)?;
    let ((unbiased, _, _), unbiased_time) = timed(&ExperimentConfig::unbiased())?;

    let orig =
        parse_scores_csv(&write_scores_csv(&exp2.original_scores)).map_err(|e| e.to_string())?;
    let cf = parse_counterfactual_csv(&write_counterfactual_csv(&exp2.counterfactual_scores))
        .map_err(|e| e.to_string())?;
    let provenance = Provenance::new("acceptance", biased_cfg.hash(), biased_cfg.seed);
    let blackbox = audit_blackbox(&orig, &cf, &biased_cfg.settings(), provenance)
        .map_err(|e| e.to_string())?;
    Ok(Runs {
        biased,
        biased_time,
        biased_again,
        blackbox,
        unbiased,
        unbiased_time,
    })
}

fn at(points: &[SweepPoint], parameter: f64) -> Option<f64> {
    points
        .iter()
        .find(|p| (p.parameter - parameter).abs() < 1e-9)
        .map(|p| p.di)
}

fn bias_detection(runs: &Runs) -> Outcome {
    ensure(runs.biased_time < Duration::from_secs(300), || {
        format!("biased run took {:?}", runs.biased_time)
    })?;
    ensure(runs.unbiased_time < Duration::from_secs(300), || {
        format!("unbiased run took {:?}", runs.unbiased_time)
    })?;
    let mut parts = Vec::new();
    let block = runs
        .biased
        .counterfactual
        .as_ref()
        .ok_or("no counterfactual block")?;
    for (attr, audit) in &block.attributes {
        let before = audit.before.di.top_n;
        let after = audit.after.as_ref().ok_or("no post-edit metrics")?.di.top_n;
        ensure(before < 0.8, || {
            format!("{attr}: pre-edit top-N DI {before:.3} not below 0.8")
        })?;
        ensure((after - 1.0).abs() < (before - 1.0).abs(), || {
            format!("{attr}: post-edit DI {after:.3} not closer to 1 than {before:.3}")
        })?;
        parts.push(format!("{attr} {before:.3}->{after:.3}"));
    }

    let block = runs
        .unbiased
        .counterfactual
        .as_ref()
        .ok_or("no counterfactual block")?;
    let mut null_parts = Vec::new();
    for (attr, audit) in &block.attributes {
        let before = at(&audit.before.sweeps.threshold, 0.5).ok_or("no tau=0.5 point")?;
        let after = at(
            &audit
                .after
                .as_ref()
                .ok_or("no post-edit metrics")?
                .sweeps
                .threshold,
            0.5,
        )
        .ok_or("no tau=0.5 point")?;
        ensure((0.9..=1.1).contains(&before), || {
            format!("zero-bias {attr}: pre-edit DI {before:.3}")
        })?;
        ensure((after - before).abs() <= 0.1, || {
            format!("zero-bias {attr}: DI moved {before:.3}->{after:.3}")
        })?;
        null_parts.push(format!("{attr} {before:.3}->{after:.3}"));
    }
    Ok(format!(
        "biased top-N (N=200): {}; zero-bias at tau=0.5: {}; runs {:.1?} and {:.1?}",
        parts.join(", "),
        null_parts.join(", "),
        runs.biased_time,
        runs.unbiased_time
    ))
}

fn counterfactual_validation(runs: &Runs) -> Outcome {
    let e3 = runs.biased.experiment3.as_ref().ok_or("no experiment 3")?;
    let mut parts = Vec::new();
    for attr in ProtectedAttribute::ALL {
        let label = attr.protected_label();
        let orig = *e3.recall_original.get(&label).ok_or("no original recall")?;
        let cf = *e3
            .recall_counterfactual
            .get(&label)
            .ok_or("no counterfactual recall")?;
        ensure(orig >= 0.9, || {
            format!("{label}: original recall {orig:.3}")
        })?;
        ensure(cf <= 0.5, || {
            format!("{label}: counterfactual recall {cf:.3}")
        })?;
        parts.push(format!("{label} {orig:.3}->{cf:.3}"));
    }
    Ok(format!("recall {}", parts.join(", ")))
}

fn determinism(runs: &Runs) -> Outcome {
    let a = to_json(&runs.biased.without_timestamp()).map_err(|e| e.to_string())?;
    let b = to_json(&runs.biased_again.without_timestamp()).map_err(|e| e.to_string())?;
    ensure(a == b, || {
        "report.json differs between identical runs".into()
    })?;
    ensure(
        runs.blackbox.counterfactual == runs.biased.counterfactual,
        || "black-box audit of the score files differs from the pipeline metrics".into(),
    )?;
    Ok(format!(
        "{} identical bytes; black-box metrics identical",
        a.len()
    ))
}

fn sweep_shape(runs: &Runs) -> Outcome {
    let block = runs
        .biased
        .counterfactual
        .as_ref()
        .ok_or("no counterfactual block")?;
    let population = runs
        .biased
        .population
        .as_ref()
        .ok_or("no population summary")?
        .valid;
    let mut parts = Vec::new();
    for (attr, audit) in &block.attributes {
        let sweeps = &audit.before.sweeps;
        let last = sweeps.top_n.last().ok_or("empty sweep")?;
        ensure(
            last.parameter == population as f64 && last.di == 1.0,
            || format!("{attr}: DI at N={} is {}", last.parameter, last.di),
        )?;
        let zero = at(&sweeps.threshold, 0.0).ok_or("no tau=0 point")?;
        ensure(zero == 1.0, || format!("{attr}: DI at tau=0 is {zero}"))?;
        let n200 = at(&sweeps.top_n, 200.0).ok_or("no N=200 point")?;
        ensure((last.di - 1.0).abs() < (n200 - 1.0).abs(), || {
            format!("{attr}: DI at N=200 is already {n200}")
        })?;
        parts.push(format!("{attr} N=200 {n200:.3} -> N={population} 1.0"));
    }
    Ok(parts.join(", "))
}

#[test]
fn acceptance_criteria() {
    let mut results: BTreeMap<usize, (&str, Outcome)> = BTreeMap::new();
    let mut record = |k: usize, name: &'static str, outcome: Outcome| {
        let line = match &outcome {
            Ok(detail) => format!("PASS criterion {k:>2} ({name}): {detail}"),
            Err(reason) => format!("FAIL criterion {k:>2} ({name}): {reason}"),
        };
        // Straight to the stderr handle so the lines show without --nocapture.
        let _ = writeln!(std::io::stderr(), "{line}");
        results.insert(k, (name, outcome));
    };

    record(1, "gradient fidelity", gradient_fidelity());
    record(2, "metric oracles", metric_oracles());
    record(3, "edit algebra", edit_algebra());
    record(4, "inversion", inversion());
    record(5, "boundary recovery", boundary_recovery());
    record(6, "null-edit soundness", null_edit());
    match pipeline_runs() {
        Ok(runs) => {
            record(7, "bias detection", bias_detection(&runs));
            record(
                8,
                "counterfactual validation",
                counterfactual_validation(&runs),
            );
            record(9, "determinism", determinism(&runs));
            record(10, "sweep shape", sweep_shape(&runs));
        }
        Err(e) => {
            for (k, name) in [
                (7, "bias detection"),
                (8, "counterfactual validation"),
                (9, "determinism"),
                (10, "sweep shape"),
            ] {
                record(k, name, Err(format!("pipeline failed: {e}")));
            }
        }
    }

    let failed: Vec<String> = results
        .iter()
        .filter(|(_, (_, o))| o.is_err())
        .map(|(k, (name, _))| format!("{k} ({name})"))
        .collect();
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}
