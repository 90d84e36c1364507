use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use super::{audit_scores, AuditReport, AuditSettings, PipelineError, Provenance};
use crate::data::{CandidateId, Dataset, ScoreVector, ScoredPopulation};
use crate::io::{parse_counterfactual_csv, parse_scores_csv, read_text, CounterfactualScores};

/// Audit from paired scores alone: no model, generator or features.
pub fn audit_blackbox(
    orig: &ScoredPopulation,
    cf: &CounterfactualScores,
    settings: &AuditSettings,
    provenance: Provenance,
) -> Result<AuditReport, PipelineError> {
    let mut report = AuditReport::new(provenance, *settings);
    report.counterfactual = Some(audit_scores(orig, cf, settings)?);
    Ok(report)
}

/// [`audit_blackbox`] on a scores file and an optional counterfactual file.
pub fn audit_blackbox_files(
    orig: &Path,
    cf: Option<&Path>,
    settings: &AuditSettings,
    provenance: Provenance,
) -> Result<AuditReport, PipelineError> {
    let pop = parse_scores_csv(&read_text(orig)?)?;
    let cf = match cf {
        Some(p) => parse_counterfactual_csv(&read_text(p)?)?,
        None => CounterfactualScores::new(),
    };
    audit_blackbox(&pop, &cf, settings, provenance)
}

/// An executable that reads `{"id", "features"}` JSON lines on stdin and
/// answers with `{"id", "o", "c", "e", "a", "n", "i"}` JSON lines on stdout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScorer {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    /// Candidates per invocation.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_batch() -> usize {
    1000
}

impl ExternalScorer {
    pub fn new(program: impl Into<String>, args: &[&str]) -> Self {
        Self {
            program: program.into(),
            args: args.iter().map(|s| s.to_string()).collect(),
            batch_size: default_batch(),
        }
    }
}

#[derive(Serialize)]
struct Request<'a> {
    id: CandidateId,
    features: &'a [f64],
}

#[derive(Deserialize)]
struct Reply {
    id: CandidateId,
    o: f64,
    c: f64,
    e: f64,
    a: f64,
    n: f64,
    i: f64,
}

fn run_batch(scorer: &ExternalScorer, input: String) -> Result<String, PipelineError> {
    let mut child = Command::new(&scorer.program)
        .args(&scorer.args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| crate::io::IoError::file(Path::new(&scorer.program), e))?;
    let mut stdin = child.stdin.take().expect("stdin is piped");
    // A separate writer keeps a scorer that answers while reading from
    // blocking on a full stdout pipe.
    let writer = std::thread::spawn(move || stdin.write_all(input.as_bytes()));
    let out = child
        .wait_with_output()
        .map_err(|e| crate::io::IoError::file(Path::new(&scorer.program), e))?;
    let wrote = writer.join().expect("writer thread does not panic");
    if !out.status.success() {
        return Err(PipelineError::ExternalFailure(out.status.code()));
    }
    if let Err(e) = wrote {
        return Err(PipelineError::ProtocolError(format!(
            "scorer closed its input early: {e}"
        )));
    }
    String::from_utf8(out.stdout)
        .map_err(|_| PipelineError::ProtocolError("output is not UTF-8".into()))
}

/// Score a dataset through an external command, in sequential batches.
pub fn score_via_external(
    scorer: &ExternalScorer,
    ds: &Dataset,
) -> Result<BTreeMap<CandidateId, ScoreVector>, PipelineError> {
    let mut scores = BTreeMap::new();
    let candidates = ds.candidates();
    for batch in candidates.chunks(scorer.batch_size.max(1)) {
        let mut input = String::new();
        for c in batch {
            let line = serde_json::to_string(&Request {
                id: c.id,
                features: &c.features,
            })
            .expect("requests serialize");
            input.push_str(&line);
            input.push('\n');
        }
        let output = run_batch(scorer, input)?;
        let mut got = BTreeMap::new();
        for (k, line) in output
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let r: Reply = serde_json::from_str(line)
                .map_err(|e| PipelineError::ProtocolError(format!("output line {}: {e}", k + 1)))?;
            let s = ScoreVector {
                o: r.o,
                c: r.c,
                e: r.e,
                a: r.a,
                n: r.n,
                i: r.i,
            };
            if let Some(d) = s.out_of_range() {
                return Err(PipelineError::ProtocolError(format!(
                    "candidate {}: {} score {} outside [0, 1]",
                    r.id,
                    d.code(),
                    s.get(d)
                )));
            }
            if !batch.iter().any(|c| c.id == r.id) {
                return Err(PipelineError::ProtocolError(format!(
                    "unexpected candidate {}",
                    r.id
                )));
            }
            if got.insert(r.id, s).is_some() {
                return Err(PipelineError::ProtocolError(format!(
                    "candidate {} scored twice",
                    r.id
                )));
            }
        }
        if let Some(c) = batch.iter().find(|c| !got.contains_key(&c.id)) {
            return Err(PipelineError::ProtocolError(format!(
                "missing candidate {}",
                c.id
            )));
        }
        scores.extend(got);
    }
    Ok(scores)
}
