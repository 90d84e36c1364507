use counterfair_core::data::{GroupLabel, ProtectedAttribute};
use counterfair_core::io::render_markdown;
use counterfair_core::latent::EditMode;
use counterfair_core::pipeline::{
    run_audit, run_experiment1, run_experiment2, run_experiment3, ExperimentConfig,
};

fn small(mut cfg: ExperimentConfig) -> ExperimentConfig {
    cfg.population.population = 600;
    for m in [&mut cfg.oceani_model, &mut cfg.attribute_model] {
        m.train.epochs = 4;
        m.train.folds = 2;
    }
    cfg.selection.top_n = 50;
    cfg
}

#[test]
fn identity_edit_changes_nothing() {
    let mut cfg = small(ExperimentConfig::default());
    cfg.edit.mode = EditMode::FixedLambda(0.0);
    let exp1 = run_experiment1(&cfg, None).unwrap();
    let exp2 = run_experiment2(&exp1, None).unwrap();

    for (attr, audit) in &exp2.metrics.attributes {
        let shift = audit.shift.as_ref().unwrap();
        assert_eq!(shift.fair_fraction, 1.0, "{attr}");
        for d in shift.dimensions.values() {
            assert!(
                d.mean.abs() < 1e-9 && d.above_epsilon == 0.0,
                "{attr}: {d:?}"
            );
        }
        let after = audit.after.as_ref().unwrap();
        assert_eq!(after.di, audit.before.di, "{attr}");
        assert!((after.mi - audit.before.mi).abs() < 1e-12);
    }

    // The reconstruction reproduces the inputs up to the inversion residual.
    let ds = exp1.dataset();
    for c in exp2.reconstructed.iter() {
        let orig = ds.get(c.id).unwrap();
        let gap = c
            .features
            .iter()
            .zip(&orig.features)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-2, "candidate {}: {gap}", c.id);
    }

    let exp3 = run_experiment3(&exp1, &exp2, None).unwrap();
    for (label, cf) in &exp3.recall_counterfactual {
        let orig = exp3.recall_original[label];
        assert!((cf - orig).abs() <= 0.02, "{label}: {orig} vs {cf}");
    }
}

#[test]
fn report_has_every_table() {
    let cfg = small(ExperimentConfig::default());
    let (report, exp1, exp2) = run_audit(&cfg, None, "test").unwrap();

    let block = report.counterfactual.as_ref().unwrap();
    assert_eq!(block.attributes.len(), 3);
    for audit in block.attributes.values() {
        assert!(audit.after.is_some() && audit.shift.is_some());
    }
    let e1 = report.experiment1.as_ref().unwrap();
    for source in ["dataset", "model"] {
        assert_eq!(e1.baseline[source].len(), 3, "{source}");
    }
    assert_eq!(e1.group_eval.cells.len(), GroupLabel::ALL.len());

    let e3 = report.experiment3.as_ref().unwrap();
    let edited: Vec<GroupLabel> = e3.recall_counterfactual.keys().copied().collect();
    let protected: Vec<GroupLabel> = ProtectedAttribute::ALL
        .iter()
        .map(|a| a.protected_label())
        .collect();
    let mut protected_sorted = protected.clone();
    protected_sorted.sort();
    assert_eq!(edited, protected_sorted);

    // Before/after table: three attributes by two rules.
    let md = render_markdown(&report).unwrap();
    let section = md
        .split("## Disparate impact before and after editing")
        .nth(1)
        .unwrap()
        .split("\n## ")
        .next()
        .unwrap();
    let rows: Vec<&str> = section.lines().filter(|l| l.starts_with('|')).collect();
    assert_eq!(rows.len(), 2 + 3);
    assert_eq!(
        rows[0],
        "| Attribute | Top-N before | Top-N after | Threshold before | Threshold after |"
    );
    for (row, name) in rows[2..].iter().zip(["Gender", "Ethnicity", "Age"]) {
        assert!(row.starts_with(&format!("| {name} |")), "{row}");
        assert_eq!(row.matches('|').count(), 6);
    }

    assert_eq!(exp2.original_scores.len(), exp1.dataset().len());
}
