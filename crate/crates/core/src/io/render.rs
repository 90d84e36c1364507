use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{format_score, to_json, write_text, IoError};
use crate::data::{Dimension, GroupLabel, ProtectedAttribute};
use crate::metrics::ADVERSE_IMPACT;
use crate::models::GroupEvalTable;
use crate::pipeline::{AuditReport, BoxRow, MeanSd, SourceMetrics, Sweeps};

const MISSING: &str = "—";
const ADVERSE_MARK: &str = "▼";

/// Group columns of the accuracy table.
const EVAL_GROUPS: [GroupLabel; 7] = [
    GroupLabel::F,
    GroupLabel::M,
    GroupLabel::Asi,
    GroupLabel::AfAm,
    GroupLabel::Cau,
    GroupLabel::Under40,
    GroupLabel::AtOrOver40,
];

/// A CSV destined for `plots/`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotFile {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub json: String,
    pub markdown: String,
    pub plots: Vec<PlotFile>,
}

impl ReportBundle {
    pub fn new(report: &AuditReport) -> Result<Self, IoError> {
        Ok(Self {
            json: to_json(report)?,
            markdown: render_markdown(report)?,
            plots: render_plots(report),
        })
    }
}

/// Write `report.json`, `report.md` and `plots/*.csv` under `dir`.
pub fn write_bundle(dir: &Path, report: &AuditReport) -> Result<ReportBundle, IoError> {
    let bundle = ReportBundle::new(report)?;
    write_text(&dir.join("report.json"), &bundle.json)?;
    write_text(&dir.join("report.md"), &bundle.markdown)?;
    for p in &bundle.plots {
        write_text(&dir.join("plots").join(&p.name), &p.contents)?;
    }
    Ok(bundle)
}

fn num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "∞" } else { "-∞" }.to_string()
    } else {
        format!("{v:.3}")
    }
}

fn di_cell(v: f64) -> String {
    if v < ADVERSE_IMPACT {
        format!("{} {ADVERSE_MARK}", num(v))
    } else {
        num(v)
    }
}

fn opt(v: Option<f64>, f: fn(f64) -> String) -> String {
    v.map_or_else(|| MISSING.to_string(), f)
}

fn table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
    out.push_str(&line(header));
    let rule: Vec<String> = header
        .iter()
        .enumerate()
        .map(|(k, _)| if k == 0 { "---".into() } else { "---:".into() })
        .collect();
    out.push_str(&line(&rule));
    for r in rows {
        out.push_str(&line(r));
    }
    out.push('\n');
}

fn strings<const N: usize>(v: [&str; N]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn attribute_name(a: ProtectedAttribute) -> &'static str {
    match a {
        ProtectedAttribute::Gender => "Gender",
        ProtectedAttribute::Ethnicity => "Ethnicity",
        ProtectedAttribute::AgeGroup => "Age",
    }
}

fn attribute_header(first: &str) -> Vec<String> {
    let mut h = vec![first.to_string()];
    h.extend(
        ProtectedAttribute::ALL
            .iter()
            .map(|&a| attribute_name(a).to_string()),
    );
    h
}

fn eval_row(name: &str, t: &GroupEvalTable) -> Vec<String> {
    let mut row = vec![name.to_string()];
    row.extend(t.overall.iter().map(|&v| num(v)));
    row.extend(EVAL_GROUPS.iter().map(|&g| opt(t.group_average(g), num)));
    row
}

fn interview_row(name: &str, m: &BTreeMap<GroupLabel, MeanSd>) -> Vec<String> {
    let mut row = vec![name.to_string()];
    row.extend(EVAL_GROUPS.iter().map(|g| {
        m.get(g).map_or(MISSING.to_string(), |s| {
            format!("{} ± {}", num(s.mean), num(s.sd))
        })
    }));
    row
}

/// Rows of per-attribute metrics, keyed by row name.
type MetricRows<'a> = Vec<(String, BTreeMap<ProtectedAttribute, &'a SourceMetrics>)>;

fn metric_rows(report: &AuditReport) -> MetricRows<'_> {
    let mut rows: MetricRows<'_> = Vec::new();
    if let Some(e1) = &report.experiment1 {
        for (key, name) in [("dataset", "Dataset"), ("model", "Model")] {
            if let Some(m) = e1.baseline.get(key) {
                rows.push((name.to_string(), m.iter().map(|(&a, v)| (a, v)).collect()));
            }
        }
    }
    if let Some(block) = &report.counterfactual {
        let (before, after) = if report.experiment1.is_some() {
            ("Model-Inv", "Model-Inv-Mod")
        } else {
            ("Original", "Counterfactual")
        };
        rows.push((
            before.to_string(),
            block
                .attributes
                .iter()
                .map(|(&a, v)| (a, &v.before))
                .collect(),
        ));
        let edited: BTreeMap<_, _> = block
            .attributes
            .iter()
            .filter_map(|(&a, v)| v.after.as_ref().map(|m| (a, m)))
            .collect();
        if !edited.is_empty() {
            rows.push((after.to_string(), edited));
        }
    }
    rows
}

fn metric_table(out: &mut String, rows: &MetricRows<'_>, cell: impl Fn(&SourceMetrics) -> String) {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, m)| {
            let mut r = vec![name.clone()];
            r.extend(
                ProtectedAttribute::ALL
                    .iter()
                    .map(|a| m.get(a).map_or(MISSING.to_string(), |v| cell(v))),
            );
            r
        })
        .collect();
    table(out, &attribute_header("Model"), &body);
}

/// Markdown tables for every section present in the report.
pub fn render_markdown(report: &AuditReport) -> Result<String, IoError> {
    if report.experiment1.is_none() && report.counterfactual.is_none() {
        return Err(IoError::IncompleteReport(
            "both model results and counterfactual metrics".into(),
        ));
    }
    let p = &report.provenance;
    let s = &report.settings;
    let mut out = String::new();
    out.push_str("# Counterfactual fairness audit\n\n");
    let _ = writeln!(
        out,
        "`{}` {} · command `{}` · seed {} · config `{}`\n",
        p.tool, p.version, p.command, p.seed, p.config_hash
    );
    let _ = writeln!(
        out,
        "Selection: top-N with N = {}, threshold τ = {}. Fairness tolerance ε = {}. {} marks DI below {}.\n",
        s.top_n, s.threshold, s.epsilon, ADVERSE_MARK, ADVERSE_IMPACT
    );

    if let Some(pop) = &report.population {
        out.push_str("## Population\n\n");
        let mut header = vec!["".to_string()];
        header.extend(GroupLabel::ALL.iter().map(|g| g.display_name().to_string()));
        let row = |name: &str, m: &BTreeMap<GroupLabel, usize>| {
            let mut r = vec![name.to_string()];
            r.extend(
                GroupLabel::ALL
                    .iter()
                    .map(|g| m.get(g).copied().unwrap_or(0).to_string()),
            );
            r
        };
        table(
            &mut out,
            &header,
            &[
                row("Sampled", &pop.counts),
                row("After filtering", &pop.valid_counts),
            ],
        );
        let _ = writeln!(
            out,
            "{} of {} candidates kept after inversion.\n",
            pop.valid, pop.size
        );
    }

    if let Some(e1) = &report.experiment1 {
        out.push_str("## Scoring accuracy (1 − MAE)\n\n");
        let mut header = vec!["Model".to_string()];
        header.extend(Dimension::ALL.iter().map(|d| d.code().to_uppercase()));
        header.extend(EVAL_GROUPS.iter().map(|g| g.display_name().to_string()));
        let mut rows = vec![eval_row("Model", &e1.group_eval)];
        if let Some(e2) = &report.experiment2 {
            rows.push(eval_row("Model-Inv", &e2.group_eval_reconstructed));
        }
        table(&mut out, &header, &rows);

        out.push_str("## Interview score by group (mean ± sd)\n\n");
        let mut header = vec!["Source".to_string()];
        header.extend(EVAL_GROUPS.iter().map(|g| g.display_name().to_string()));
        let mut rows = vec![];
        for (key, name) in [("dataset", "Dataset"), ("model", "Model")] {
            if let Some(m) = e1.interview.get(key) {
                rows.push(interview_row(name, m));
            }
        }
        if let Some(e2) = &report.experiment2 {
            for (key, m) in &e2.interview {
                rows.push(interview_row(
                    &key.replace("model-inv-mod-", "Model-Inv-Mod ")
                        .replace("model-inv", "Model-Inv"),
                    m,
                ));
            }
        }
        table(&mut out, &header, &rows);

        let u = &e1.unawareness;
        let verdict = if u.pass() { "passed" } else { "failed" };
        let named = if u.named_columns.is_empty() {
            "no feature is named after a protected attribute".to_string()
        } else {
            format!(
                "features named after protected attributes: {}",
                u.named_columns.join(", ")
            )
        };
        let probes: Vec<String> = u
            .probes
            .iter()
            .map(|(attr, p)| {
                format!(
                    "{} {:.3} vs majority {:.3}{}",
                    attribute_name(*attr).to_lowercase(),
                    p.accuracy,
                    p.majority_rate,
                    if p.leak { " (leaks)" } else { "" }
                )
            })
            .collect();
        let _ = writeln!(
            out,
            "Unawareness {verdict}: {named}; probe accuracy {}.\n",
            probes.join(", ")
        );
    }

    let rows = metric_rows(report);
    if !rows.is_empty() {
        out.push_str("## Mutual information with the interview score (nats)\n\n");
        metric_table(&mut out, &rows, |m| num(m.mi));
        let _ = writeln!(out, "## Disparate impact, top-N (N = {})\n", s.top_n);
        metric_table(&mut out, &rows, |m| di_cell(m.di.top_n));
        let _ = writeln!(
            out,
            "## Disparate impact, threshold (τ = {})\n",
            s.threshold
        );
        metric_table(&mut out, &rows, |m| di_cell(m.di.threshold));
    }

    if let Some(block) = &report.counterfactual {
        out.push_str("## Disparate impact before and after editing\n\n");
        let header = strings([
            "Attribute",
            "Top-N before",
            "Top-N after",
            "Threshold before",
            "Threshold after",
        ]);
        let body: Vec<Vec<String>> = block
            .attributes
            .iter()
            .map(|(&a, v)| {
                let after = v.after.as_ref().map(|m| m.di);
                vec![
                    attribute_name(a).to_string(),
                    di_cell(v.before.di.top_n),
                    opt(after.map(|d| d.top_n), di_cell),
                    di_cell(v.before.di.threshold),
                    opt(after.map(|d| d.threshold), di_cell),
                ]
            })
            .collect();
        table(&mut out, &header, &body);

        let shifted: Vec<_> = block
            .attributes
            .iter()
            .filter_map(|(a, v)| v.shift.as_ref().map(|s| (a, s)))
            .collect();
        if !shifted.is_empty() {
            out.push_str("## Counterfactual score shifts\n\n");
            let mut header = strings(["Attribute", "Edited", "Fair share"]);
            header.extend(
                Dimension::ALL
                    .iter()
                    .map(|d| format!("Mean Δ{}", d.code().to_uppercase())),
            );
            let body: Vec<Vec<String>> = shifted
                .iter()
                .map(|(&a, s)| {
                    let mut r = vec![
                        attribute_name(a).to_string(),
                        s.records.to_string(),
                        num(s.fair_fraction),
                    ];
                    r.extend(Dimension::ALL.iter().map(|d| num(s.dimensions[d].mean)));
                    r
                })
                .collect();
            table(&mut out, &header, &body);
        }
    }

    if let Some(e2) = &report.experiment2 {
        let _ = writeln!(
            out,
            "Inversion: {} rejected (threshold {:.3e}, median residual {:.3e}).\n",
            e2.rejected_inversions, e2.rejection_threshold, e2.median_residual
        );
    }

    if let Some(e3) = &report.experiment3 {
        out.push_str("## Protected-attribute recall\n\n");
        let mut header = vec!["".to_string()];
        header.extend(GroupLabel::ALL.iter().map(|g| g.display_name().to_string()));
        let row = |name: &str, m: &BTreeMap<GroupLabel, f64>| {
            let mut r = vec![name.to_string()];
            r.extend(GroupLabel::ALL.iter().map(|g| opt(m.get(g).copied(), num)));
            r
        };
        table(
            &mut out,
            &header,
            &[
                row("Orig.", &e3.recall_original),
                row("Count.", &e3.recall_counterfactual),
            ],
        );
    }
    Ok(out)
}

fn box_csv(rows: &[BoxRow]) -> String {
    let mut out = String::from("attribute,group,dimension,min,q1,median,q3,max\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.attribute.code(),
            r.group.code(),
            r.dimension.code(),
            format_score(r.min),
            format_score(r.q1),
            format_score(r.median),
            format_score(r.q3),
            format_score(r.max)
        );
    }
    out
}

fn sweep_lines(out: &mut String, source: &str, attr: ProtectedAttribute, s: &Sweeps) {
    for (rule, points) in [("top_n", &s.top_n), ("threshold", &s.threshold)] {
        for p in points {
            let di = if p.di.is_finite() {
                format_score(p.di)
            } else {
                "inf".into()
            };
            let _ = writeln!(out, "{source},{},{rule},{},{di}", attr.code(), p.parameter);
        }
    }
}

/// Tidy CSVs: one box-plot file per score source and one file of DI sweeps.
pub fn render_plots(report: &AuditReport) -> Vec<PlotFile> {
    let mut plots = Vec::new();
    let boxes = report
        .experiment1
        .iter()
        .flat_map(|e| e.boxes.iter())
        .chain(report.experiment2.iter().flat_map(|e| e.boxes.iter()));
    for (source, rows) in boxes {
        plots.push(PlotFile {
            name: format!("box_{source}.csv"),
            contents: box_csv(rows),
        });
    }
    let mut sweeps = String::from("source,attribute,rule,parameter,di\n");
    if let Some(e1) = &report.experiment1 {
        for (source, m) in &e1.baseline {
            for (&a, v) in m {
                sweep_lines(&mut sweeps, source, a, &v.sweeps);
            }
        }
    }
    if let Some(block) = &report.counterfactual {
        for (&a, v) in &block.attributes {
            sweep_lines(&mut sweeps, "before", a, &v.before.sweeps);
            if let Some(after) = &v.after {
                sweep_lines(&mut sweeps, "after", a, &after.sweeps);
            }
        }
    }
    plots.push(PlotFile {
        name: "sweeps.csv".into(),
        contents: sweeps,
    });
    plots
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{AuditSettings, Provenance};

    #[test]
    fn cells_mark_adverse_impact_and_infinity() {
        assert_eq!(di_cell(0.29), "0.290 ▼");
        assert_eq!(di_cell(0.8), "0.800");
        assert_eq!(di_cell(f64::INFINITY), "∞");
        assert_eq!(opt(None, num), "—");
    }

    #[test]
    fn empty_report_is_incomplete() {
        let r = AuditReport::new(
            Provenance::new("audit", "x".into(), 1),
            AuditSettings::default(),
        );
        assert!(matches!(
            render_markdown(&r),
            Err(IoError::IncompleteReport(_))
        ));
    }
}
