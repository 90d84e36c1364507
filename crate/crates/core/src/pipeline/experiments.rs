use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::report::{auditable, interview_by_group, source_metrics};
use super::{
    audit_scores, box_stats, AuditReport, BoundarySummary, Exp1Report, Exp2Report, Exp3Report,
    ExperimentConfig, MetricsBlock, PipelineError, PopulationSummary, Provenance, AUDITED,
};
use crate::data::{Dataset, GroupLabel, ProtectedAttribute, ScoredPopulation};
use crate::io::CounterfactualScores;
use crate::latent::{
    counterfactualize_inverted, invert_population, learn_boundary, sample_population, Boundary,
    BoundaryOpts, EditSpec, Generator, InvertedPopulation, LatentError, SampledPopulation,
    SyntheticFaceGenerator,
};
use crate::metrics::assert_unawareness;
use crate::models::{
    accuracy, evaluate_by_group, fit_oceani, fit_pattribute, recall_per_class, FittedModel,
};
use crate::nn::{load_checkpoint, save_checkpoint};

/// Directory of stage checkpoints. Each file is keyed by a hash of the
/// configuration parts that determine it, so a changed setting recomputes
/// only the stages it affects.
#[derive(Debug, Clone)]
pub struct StageCache {
    pub dir: PathBuf,
}

impl StageCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn path(&self, stage: &str, key: &impl Serialize) -> PathBuf {
        let digest = crate::io::to_json(key).map(|j| {
            use sha2::{Digest, Sha256};
            hex::encode(Sha256::digest(j.as_bytes()))
        });
        let tag = digest.map_or_else(|_| "unkeyed".to_string(), |d| d[..16].to_string());
        self.dir.join(format!("{stage}-{tag}.json"))
    }

    fn load_or<T, F>(
        cache: Option<&Self>,
        stage: &str,
        key: &impl Serialize,
        compute: F,
    ) -> Result<T, PipelineError>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T, PipelineError>,
    {
        let Some(cache) = cache else {
            return compute();
        };
        let path = cache.path(stage, key);
        if let Ok(v) = load_checkpoint(&path, stage) {
            return Ok(v);
        }
        let v = compute()?;
        save_checkpoint(&path, stage, &v).map_err(crate::models::ModelError::from)?;
        Ok(v)
    }

    pub fn stage_files(&self) -> Vec<PathBuf> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&self.dir)
            .into_iter()
            .flatten()
            .flatten()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        files.sort();
        files
    }
}

/// Outputs of the first experiment needed downstream.
pub struct Exp1Artifacts {
    pub config: ExperimentConfig,
    pub generator: SyntheticFaceGenerator,
    pub population: SampledPopulation,
    pub model: FittedModel,
    pub report: Exp1Report,
}

impl Exp1Artifacts {
    pub fn dataset(&self) -> &Dataset {
        &self.population.dataset
    }
}

pub struct Exp2Artifacts {
    pub inverted: InvertedPopulation,
    pub boundaries: Vec<Boundary>,
    pub reconstructed: Dataset,
    /// Counterfactual datasets per edited attribute (valid members only).
    pub counterfactuals: BTreeMap<ProtectedAttribute, Dataset>,
    /// Quantized scores of the reconstructed population, invalid members
    /// included and flagged.
    pub original_scores: ScoredPopulation,
    pub counterfactual_scores: CounterfactualScores,
    pub metrics: MetricsBlock,
    pub report: Exp2Report,
}

/// Sample the population, train the scoring model with k-fold cross
/// validation and measure its group accuracy and baseline bias.
pub fn run_experiment1(
    cfg: &ExperimentConfig,
    cache: Option<&StageCache>,
) -> Result<Exp1Artifacts, PipelineError> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let generator = SyntheticFaceGenerator::new(cfg.generator_seed())?;
    let population = sample_population(&generator, &cfg.population)?;
    let ds = &population.dataset;
    let unawareness = assert_unawareness(ds, &cfg.probe)?;
    let key = (cfg.seed, &cfg.population, &cfg.oceani_model);
    let model = StageCache::load_or(cache, "oceani-model", &key, || {
        Ok(fit_oceani(ds, &cfg.oceani_model)?)
    })?;

    let predictions = model.score_out_of_fold(ds)?;
    let group_eval = evaluate_by_group(&predictions, ds)?;
    let settings = cfg.settings();
    let sources = [
        ("dataset", ScoredPopulation::from_truth(ds).quantized()),
        (
            "model",
            ScoredPopulation::from_dataset(ds, &predictions).quantized(),
        ),
    ];
    let mut interview = BTreeMap::new();
    let mut boxes = BTreeMap::new();
    let mut baseline = BTreeMap::new();
    for (name, pop) in &sources {
        interview.insert(name.to_string(), interview_by_group(pop));
        boxes.insert(name.to_string(), box_stats(pop));
        let mut per_attr = BTreeMap::new();
        for attr in AUDITED {
            if auditable(pop, attr) {
                per_attr.insert(attr, source_metrics(pop, attr, &settings)?);
            }
        }
        baseline.insert(name.to_string(), per_attr);
    }
    let report = Exp1Report {
        group_eval,
        interview,
        boxes,
        baseline,
        unawareness,
    };
    Ok(Exp1Artifacts {
        config: cfg,
        generator,
        population,
        model,
        report,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Invert everyone, learn boundaries on the inverted codes, edit protected
/// members and score originals and counterfactuals with the fold model that
/// held each candidate out.
pub fn run_experiment2(
    exp1: &Exp1Artifacts,
    cache: Option<&StageCache>,
) -> Result<Exp2Artifacts, PipelineError> {
    let cfg = &exp1.config;
    let gen = &exp1.generator;
    let ds = exp1.dataset();
    let key = (cfg.seed, &cfg.population, &cfg.counterfactual);
    let inverted = StageCache::load_or(cache, "inversion", &key, || {
        Ok(invert_population(gen, ds, &cfg.counterfactual)?)
    })?;
    let reconstructed = inverted.reconstructed(gen, ds)?;

    let (boundaries, summaries) = learn_boundaries(&reconstructed, &cfg.boundary)?;
    let scored = score_counterfactuals(
        gen,
        &exp1.model,
        &reconstructed,
        &inverted,
        &boundaries,
        &cfg.edit,
    )?;
    let (original_scores, counterfactual_scores, counterfactuals) = scored;

    let settings = cfg.settings();
    let metrics = audit_scores(&original_scores, &counterfactual_scores, &settings)?;

    let valid_original = original_scores.valid_only();
    let mut interview = BTreeMap::new();
    let mut boxes = BTreeMap::new();
    interview.insert("model-inv".to_string(), interview_by_group(&valid_original));
    boxes.insert("model-inv".to_string(), box_stats(&valid_original));
    for (attr, rows) in &counterfactual_scores {
        let edited = ScoredPopulation::from_dataset(&counterfactuals[attr], rows);
        let name = format!("model-inv-mod-{}", attr.code());
        interview.insert(name.clone(), interview_by_group(&edited));
        boxes.insert(name, box_stats(&edited));
    }
    let valid_predictions = valid_original.score_map();
    let report = Exp2Report {
        rejected_inversions: inverted.rejected(),
        rejection_threshold: inverted.rejection_threshold,
        median_residual: median(inverted.residuals.values().copied().collect()),
        boundaries: summaries,
        group_eval_reconstructed: evaluate_by_group(&valid_predictions, &reconstructed)?,
        interview,
        boxes,
    };
    Ok(Exp2Artifacts {
        inverted,
        boundaries,
        reconstructed,
        counterfactuals,
        original_scores,
        counterfactual_scores,
        metrics,
        report,
    })
}

/// One boundary per attribute, fitted on the latent codes of valid,
/// labeled candidates.
pub fn learn_boundaries(
    ds: &Dataset,
    opts: &BoundaryOpts,
) -> Result<(Vec<Boundary>, BTreeMap<ProtectedAttribute, BoundarySummary>), PipelineError> {
    let mut boundaries = Vec::new();
    let mut summaries = BTreeMap::new();
    for attr in AUDITED {
        let (codes, labels): (Vec<Vec<f64>>, Vec<GroupLabel>) = ds
            .iter()
            .filter(|c| c.valid)
            .filter_map(|c| Some((c.latent.clone()?, c.demographics.get(attr)?)))
            .unzip();
        let b = learn_boundary(&codes, &labels, attr, opts)?;
        let correct = codes
            .iter()
            .zip(&labels)
            .filter(|(z, g)| (b.signed_distance(z) > 0.0) == g.is_protected())
            .count();
        summaries.insert(
            attr,
            BoundarySummary {
                positive_label: b.positive_label,
                offset: b.b,
                training_accuracy: correct as f64 / codes.len() as f64,
                training_codes: codes.len(),
            },
        );
        boundaries.push(b);
    }
    Ok((boundaries, summaries))
}

/// Quantized scores of the reconstructed population, counterfactual scores
/// per boundary, and the valid counterfactual datasets they came from.
pub type ScoredCounterfactuals = (
    ScoredPopulation,
    CounterfactualScores,
    BTreeMap<ProtectedAttribute, Dataset>,
);

/// Edit the protected members across every boundary and score originals
/// and counterfactuals with the fold model that held each candidate out.
pub fn score_counterfactuals(
    gen: &dyn Generator,
    model: &FittedModel,
    reconstructed: &Dataset,
    inverted: &InvertedPopulation,
    boundaries: &[Boundary],
    spec: &EditSpec,
) -> Result<ScoredCounterfactuals, PipelineError> {
    let original = model.score_out_of_fold(reconstructed)?;
    let original_scores = ScoredPopulation::from_dataset(reconstructed, &original).quantized();
    let mut counterfactuals = BTreeMap::new();
    let mut counterfactual_scores = CounterfactualScores::new();
    for b in boundaries {
        let others: Vec<&Boundary> = spec
            .condition_on
            .iter()
            .filter(|&&a| a != b.attribute)
            .map(|&a| {
                boundaries
                    .iter()
                    .find(|o| o.attribute == a)
                    .ok_or(LatentError::MissingBoundary(a))
            })
            .collect::<Result<_, _>>()?;
        let cf = counterfactualize_inverted(gen, reconstructed, inverted, b, &others, spec)?
            .valid_only();
        let scores = model.score_out_of_fold(&cf)?;
        counterfactual_scores.insert(
            b.attribute,
            scores
                .into_iter()
                .map(|(id, s)| (id, s.quantized()))
                .collect(),
        );
        counterfactuals.insert(b.attribute, cf);
    }
    Ok((original_scores, counterfactual_scores, counterfactuals))
}

/// Train the protected-attribute classifier on the original observations
/// and compare its recall on originals and on counterfactuals.
pub fn run_experiment3(
    exp1: &Exp1Artifacts,
    exp2: &Exp2Artifacts,
    cache: Option<&StageCache>,
) -> Result<Exp3Report, PipelineError> {
    let cfg = &exp1.config;
    let ds = exp1.dataset();
    let key = (cfg.seed, &cfg.population, &cfg.attribute_model);
    let model = StageCache::load_or(cache, "attribute-model", &key, || {
        Ok(fit_pattribute(ds, &cfg.attribute_model)?)
    })?;
    let predicted = model.classify_out_of_fold(ds)?;
    let mut acc = BTreeMap::new();
    let mut recall_original = BTreeMap::new();
    for attr in AUDITED {
        acc.insert(attr, accuracy(&predicted, ds, attr));
        recall_original.extend(recall_per_class(&predicted, ds, attr));
    }
    let mut recall_counterfactual = BTreeMap::new();
    let mut counterfactual_count = BTreeMap::new();
    for (&attr, cf) in &exp2.counterfactuals {
        let predicted_cf = model.classify_out_of_fold(cf)?;
        let label = attr.protected_label();
        if let Some(&r) = recall_per_class(&predicted_cf, cf, attr).get(&label) {
            recall_counterfactual.insert(label, r);
            counterfactual_count.insert(label, cf.len());
        }
    }
    Ok(Exp3Report {
        accuracy: acc,
        recall_original,
        recall_counterfactual,
        counterfactual_count,
    })
}

fn population_summary(ds: &Dataset, reconstructed: &Dataset) -> PopulationSummary {
    let count = |d: &Dataset, valid_only: bool| {
        let mut m: BTreeMap<GroupLabel, usize> = BTreeMap::new();
        for c in d.iter().filter(|c| c.valid || !valid_only) {
            for attr in ProtectedAttribute::ALL {
                if let Some(g) = c.demographics.get(attr) {
                    *m.entry(g).or_default() += 1;
                }
            }
        }
        m
    };
    PopulationSummary {
        size: ds.len(),
        valid: reconstructed.iter().filter(|c| c.valid).count(),
        counts: count(ds, false),
        valid_counts: count(reconstructed, true),
    }
}

/// All three experiments, assembled into one report (without timestamp).
pub fn run_audit(
    cfg: &ExperimentConfig,
    cache: Option<&Path>,
    command: &str,
) -> Result<(AuditReport, Exp1Artifacts, Exp2Artifacts), PipelineError> {
    let cache = cache.map(StageCache::new);
    let exp1 = run_experiment1(cfg, cache.as_ref())?;
    let exp2 = run_experiment2(&exp1, cache.as_ref())?;
    let exp3 = run_experiment3(&exp1, &exp2, cache.as_ref())?;
    let mut report = AuditReport::new(
        Provenance::new(command, cfg.hash(), cfg.seed),
        cfg.settings(),
    );
    report.population = Some(population_summary(exp1.dataset(), &exp2.reconstructed));
    report.experiment1 = Some(exp1.report.clone());
    report.experiment2 = Some(exp2.report.clone());
    report.counterfactual = Some(exp2.metrics.clone());
    report.experiment3 = Some(exp3);
    Ok((report, exp1, exp2))
}
