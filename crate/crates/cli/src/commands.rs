use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

use counterfair_core::data::ProtectedAttribute;
use counterfair_core::io::{
    self, assemble_dataset, boundary_from_json, boundary_to_json, dataset_tables,
    parse_features_csv, parse_latents_csv, parse_scores_csv, read_text, to_json,
    write_counterfactual_csv, write_features_csv, write_latents_csv, write_scores_csv, write_text,
    IoError,
};
use counterfair_core::latent::{
    invert_population, sample_population, Boundary, InvertedPopulation, SyntheticFaceGenerator,
};
use counterfair_core::metrics::{di_sweep, SweepFamily};
use counterfair_core::models::{fit_oceani, FittedModel};
use counterfair_core::nn::{load_checkpoint, save_checkpoint, NnError};
use counterfair_core::pipeline::{
    audit_blackbox_files, learn_boundaries, run_audit, score_counterfactuals, AuditReport,
    ExperimentConfig, PipelineError, Provenance,
};
use counterfair_core::{Dataset, ScoredPopulation};

use crate::{Cli, Command, Common, EXIT_DATA, EXIT_NUMERIC};

const MODEL_KIND: &str = "oceani-model";

#[derive(Debug)]
pub enum CliError {
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Diverged { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

macro_rules! via_pipeline {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                PipelineError::from(e).into()
            }
        }
    )*};
}
via_pipeline!(
    counterfair_core::latent::LatentError,
    counterfair_core::models::ModelError,
    counterfair_core::metrics::MetricError,
    counterfair_core::data::DataError
);

/// Everything needed to reproduce a run.
#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config_hash: String,
    /// The effective configuration with every default spelled out.
    config: &'a ExperimentConfig,
    outputs: Vec<String>,
    status: &'static str,
    error: Option<String>,
}

struct Run {
    out: PathBuf,
    outputs: Vec<String>,
}

impl Run {
    fn write(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        write_text(&self.out.join(name), text)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = to_json(value)?;
        self.write(name, &text)
    }

    fn write_report(&mut self, report: &AuditReport) -> Result<(), CliError> {
        let bundle = io::write_bundle(&self.out, report)?;
        self.outputs.push("report.json".into());
        self.outputs.push("report.md".into());
        self.outputs
            .extend(bundle.plots.iter().map(|p| format!("plots/{}", p.name)));
        Ok(())
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_json_overrides(&read_text(path)?)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::GenData(c) => c,
        Command::Train { common, .. }
        | Command::Invert { common, .. }
        | Command::LearnBoundary { common, .. }
        | Command::Counterfactualize { common, .. }
        | Command::Audit { common, .. }
        | Command::AuditBlackbox { common, .. }
        | Command::Sweep { common, .. }
        | Command::Report { common, .. } => common,
    }
}

pub fn run(cli: Cli, command_line: &str) -> Result<(), CliError> {
    let common = common(&cli.command).clone();
    let cfg = load_config(&common);
    let effective = cfg.as_ref().cloned().unwrap_or_default();
    let mut run = Run {
        out: common.out.clone(),
        outputs: Vec::new(),
    };
    let result = cfg.and_then(|cfg| dispatch(&cli.command, &cfg, &mut run, command_line));
    let manifest = Manifest {
        tool: "counterfair",
        version: env!("CARGO_PKG_VERSION"),
        command: command_line,
        seed: effective.seed,
        config_hash: effective.hash(),
        config: &effective,
        outputs: run.outputs.clone(),
        status: if result.is_ok() { "ok" } else { "error" },
        error: result.as_ref().err().map(ToString::to_string),
    };
    let written = to_json(&manifest).map_err(CliError::from).and_then(|text| {
        write_text(&common.out.join("manifest.json"), &text).map_err(CliError::from)
    });
    result.and(written)
}

fn generator(cfg: &ExperimentConfig) -> Result<SyntheticFaceGenerator, CliError> {
    Ok(SyntheticFaceGenerator::new(cfg.generator_seed())?)
}

fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    let truth = parse_scores_csv(&read_text(&dir.join("truth.csv"))?)?;
    let (names, features) = parse_features_csv(&read_text(&dir.join("features.csv"))?)?;
    let latents_path = dir.join("latents.csv");
    let latents = if latents_path.exists() {
        Some(parse_latents_csv(&read_text(&latents_path)?)?)
    } else {
        None
    };
    Ok(assemble_dataset(
        &truth,
        names,
        &features,
        latents.as_ref(),
    )?)
}

fn load_inversion(path: &Path) -> Result<InvertedPopulation, CliError> {
    Ok(io::from_json(&read_text(path)?)?)
}

fn load_boundaries(dir: &Path) -> Result<Vec<Boundary>, CliError> {
    ProtectedAttribute::ALL
        .iter()
        .map(|a| {
            let path = dir.join(format!("{}.json", a.code()));
            boundary_from_json(&read_text(&path)?)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn dispatch(
    cmd: &Command,
    cfg: &ExperimentConfig,
    run: &mut Run,
    command_line: &str,
) -> Result<(), CliError> {
    let resolved = cfg.resolved();
    let provenance = || Provenance::new(command_line, cfg.hash(), cfg.seed).stamped();
    match cmd {
        Command::GenData(_) => {
            let gen = generator(cfg)?;
            let sampled = sample_population(&gen, &resolved.population)?;
            let ds = &sampled.dataset;
            let (truth, features) = dataset_tables(ds);
            let latents = ds
                .iter()
                .filter_map(|c| Some((c.id, c.latent.clone()?)))
                .collect();
            run.write("truth.csv", &write_scores_csv(&truth))?;
            run.write(
                "features.csv",
                &write_features_csv(&ds.feature_names, &features),
            )?;
            run.write("latents.csv", &write_latents_csv(&latents))?;
        }
        Command::Train { data, .. } => {
            let ds = load_dataset(data)?;
            let model = fit_oceani(&ds, &resolved.oceani_model)?;
            save_checkpoint(&run.out.join("model.json"), MODEL_KIND, &model)?;
            run.outputs.push("model.json".into());
            let predictions = ScoredPopulation::from_dataset(&ds, &model.score_out_of_fold(&ds)?);
            run.write(
                "predictions.csv",
                &write_scores_csv(&predictions.quantized()),
            )?;
        }
        Command::Invert { data, .. } => {
            let ds = load_dataset(data)?;
            let inverted = invert_population(&generator(cfg)?, &ds, &resolved.counterfactual)?;
            run.write_json("inversion.json", &inverted)?;
            run.write("latents.csv", &write_latents_csv(&inverted.codes))?;
        }
        Command::LearnBoundary {
            data, inversion, ..
        } => {
            let ds = load_dataset(data)?;
            let reconstructed = load_inversion(inversion)?.reconstructed(&generator(cfg)?, &ds)?;
            let (boundaries, summaries) = learn_boundaries(&reconstructed, &resolved.boundary)?;
            for b in &boundaries {
                run.write(
                    &format!("boundaries/{}.json", b.attribute.code()),
                    &boundary_to_json(b),
                )?;
            }
            run.write_json("boundaries/summary.json", &summaries)?;
        }
        Command::Counterfactualize {
            data,
            model,
            inversion,
            boundaries,
            ..
        } => {
            let ds = load_dataset(data)?;
            let gen = generator(cfg)?;
            let model: FittedModel = load_checkpoint(model, MODEL_KIND)?;
            let inverted = load_inversion(inversion)?;
            let reconstructed = inverted.reconstructed(&gen, &ds)?;
            let boundaries = load_boundaries(boundaries)?;
            let (orig, cf, _) = score_counterfactuals(
                &gen,
                &model,
                &reconstructed,
                &inverted,
                &boundaries,
                &resolved.edit,
            )?;
            run.write("original.csv", &write_scores_csv(&orig))?;
            run.write("counterfactual.csv", &write_counterfactual_csv(&cf))?;
        }
        Command::Audit { stages, .. } => {
            let stages = stages.clone().unwrap_or_else(|| run.out.join("stages"));
            let (report, _, exp2) = run_audit(cfg, Some(&stages), command_line)?;
            let report = AuditReport {
                provenance: Provenance {
                    generated_at: provenance().generated_at,
                    ..report.provenance
                },
                ..report
            };
            run.write("original.csv", &write_scores_csv(&exp2.original_scores))?;
            run.write(
                "counterfactual.csv",
                &write_counterfactual_csv(&exp2.counterfactual_scores),
            )?;
            run.write_report(&report)?;
        }
        Command::AuditBlackbox { orig, cf, .. } => {
            let report = audit_blackbox_files(orig, cf.as_deref(), &cfg.settings(), provenance())?;
            run.write_report(&report)?;
        }
        Command::Sweep { scores, .. } => {
            let pop = parse_scores_csv(&read_text(scores)?)?.valid_only();
            let s = cfg.selection;
            let families = [
                (
                    "top_n",
                    SweepFamily::TopN {
                        start: 10,
                        step: s.sweep_n_step,
                    },
                ),
                (
                    "threshold",
                    SweepFamily::Threshold {
                        step: s.sweep_threshold_step,
                    },
                ),
            ];
            let mut out = String::from("attribute,rule,parameter,di\n");
            let mut swept = 0;
            for attr in ProtectedAttribute::ALL {
                if !pop
                    .members()
                    .iter()
                    .any(|m| m.demographics.get(attr).is_some())
                {
                    continue;
                }
                for (rule, family) in families {
                    let points = di_sweep(&pop, attr, family)?;
                    for p in &points {
                        let di = if p.di.is_finite() {
                            io::format_score(p.di)
                        } else {
                            "inf".into()
                        };
                        out.push_str(&format!("{},{rule},{},{di}\n", attr.code(), p.parameter));
                    }
                    swept += 1;
                }
            }
            if swept == 0 {
                return Err(CliError::Data("no labeled candidates to sweep".into()));
            }
            run.write("sweeps.csv", &out)?;
        }
        Command::Report { report, .. } => {
            let parsed: AuditReport = io::from_json(&read_text(report)?)?;
            run.write_report(&parsed)?;
        }
    }
    Ok(())
}
