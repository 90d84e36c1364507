use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::data::{
    Candidate, CandidateId, Dataset, Demographics, GroupLabel, ProtectedAttribute, ScoreVector,
    ScoredCandidate, ScoredPopulation,
};
use crate::latent::Boundary;

pub const SCORES_HEADER: &str = "candidate_id,gender,ethnicity,age_group,valid,o,c,e,a,n,i";
pub const COUNTERFACTUAL_HEADER: &str =
    "candidate_id,edited_attribute,o_cf,c_cf,e_cf,a_cf,n_cf,i_cf";

/// Counterfactual scores keyed by edited attribute, then candidate.
pub type CounterfactualScores = BTreeMap<ProtectedAttribute, BTreeMap<CandidateId, ScoreVector>>;

/// Column names and per-candidate rows of a numeric table.
pub type NumericTable = (Vec<String>, BTreeMap<CandidateId, Vec<f64>>);

type KeyedRecords = (Vec<String>, Vec<(u64, csv::StringRecord)>);

/// Six fractional digits, the canonical score precision.
pub fn format_score(v: f64) -> String {
    format!("{v:.6}")
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    let bytes = w.into_inner().expect("in-memory writer flushes");
    String::from_utf8(bytes).expect("written fields are UTF-8")
}

/// Records with their 1-based line numbers, after checking the header.
fn records(text: &str, header: Option<&str>) -> Result<KeyedRecords, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            IoError::schema(line, "", e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec));
    }
    let Some((_, head)) = rows.first() else {
        return Err(IoError::schema(1, "", "missing header"));
    };
    let names: Vec<String> = head.iter().map(str::to_string).collect();
    if let Some(expected) = header {
        if names.join(",") != expected {
            return Err(IoError::schema(
                1,
                "",
                format!("header must be `{expected}`"),
            ));
        }
    }
    let body = rows.split_off(1);
    for (line, rec) in &body {
        if rec.len() != names.len() {
            return Err(IoError::schema(
                *line,
                "",
                format!("expected {} fields, found {}", names.len(), rec.len()),
            ));
        }
    }
    Ok((names, body))
}

fn parse_id(line: u64, column: &str, s: &str) -> Result<CandidateId, IoError> {
    s.parse()
        .map(CandidateId)
        .map_err(|_| IoError::schema(line, column, format!("`{s}` is not a candidate id")))
}

fn parse_unit(line: u64, column: &str, s: &str) -> Result<f64, IoError> {
    let v: f64 = s
        .parse()
        .map_err(|_| IoError::schema(line, column, format!("`{s}` is not a number")))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(IoError::schema(
            line,
            column,
            format!("score {s} outside [0, 1]"),
        ));
    }
    Ok(v)
}

fn parse_float(line: u64, column: &str, s: &str) -> Result<f64, IoError> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(IoError::schema(
            line,
            column,
            format!("`{s}` is not a finite number"),
        )),
    }
}

fn parse_scores(line: u64, names: &[String], fields: &[&str]) -> Result<ScoreVector, IoError> {
    let mut v = [0.0; 6];
    for k in 0..6 {
        v[k] = parse_unit(line, &names[k], fields[k])?;
    }
    Ok(ScoreVector::from_array(v))
}

fn score_fields(s: ScoreVector) -> impl Iterator<Item = String> {
    s.to_array().into_iter().map(format_score)
}

/// One row per member, labels as group codes, empty for missing.
pub fn write_scores_csv(pop: &ScoredPopulation) -> String {
    let mut w = writer();
    w.write_record(SCORES_HEADER.split(','))
        .expect("in-memory write");
    for m in pop.members() {
        let mut row = vec![m.id.to_string()];
        for attr in ProtectedAttribute::ALL {
            row.push(
                m.demographics
                    .get(attr)
                    .map_or(String::new(), |g| g.code().to_string()),
            );
        }
        row.push(if m.valid { "1" } else { "0" }.to_string());
        row.extend(score_fields(m.scores));
        w.write_record(&row).expect("in-memory write");
    }
    finish(w)
}

pub fn parse_scores_csv(text: &str) -> Result<ScoredPopulation, IoError> {
    let (names, rows) = records(text, Some(SCORES_HEADER))?;
    let mut seen = BTreeSet::new();
    let mut members = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        let f: Vec<&str> = rec.iter().collect();
        let id = parse_id(line, "candidate_id", f[0])?;
        if !seen.insert(id) {
            return Err(IoError::schema(
                line,
                "candidate_id",
                format!("duplicate id {id}"),
            ));
        }
        let mut demographics = Demographics::default();
        for (k, attr) in ProtectedAttribute::ALL.into_iter().enumerate() {
            let s = f[1 + k];
            if !s.is_empty() {
                let g = GroupLabel::parse(attr, s)
                    .map_err(|e| IoError::schema(line, attr.code(), e.to_string()))?;
                demographics.set(attr, Some(g));
            }
        }
        let valid = match f[4] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(IoError::schema(
                    line,
                    "valid",
                    format!("`{other}` is not 0 or 1"),
                ))
            }
        };
        let scores = parse_scores(line, &names[5..], &f[5..])?;
        members.push(ScoredCandidate {
            id,
            demographics,
            valid,
            scores,
        });
    }
    Ok(ScoredPopulation::new(members))
}

pub fn write_counterfactual_csv(cf: &CounterfactualScores) -> String {
    let mut w = writer();
    w.write_record(COUNTERFACTUAL_HEADER.split(','))
        .expect("in-memory write");
    for (attr, rows) in cf {
        for (id, s) in rows {
            let mut row = vec![id.to_string(), attr.code().to_string()];
            row.extend(score_fields(*s));
            w.write_record(&row).expect("in-memory write");
        }
    }
    finish(w)
}

pub fn parse_counterfactual_csv(text: &str) -> Result<CounterfactualScores, IoError> {
    let (names, rows) = records(text, Some(COUNTERFACTUAL_HEADER))?;
    let mut out = CounterfactualScores::new();
    for (line, rec) in rows {
        let f: Vec<&str> = rec.iter().collect();
        let id = parse_id(line, "candidate_id", f[0])?;
        let attr = ProtectedAttribute::parse(f[1])
            .ok()
            .filter(|a| a.code() == f[1])
            .ok_or_else(|| {
                IoError::schema(
                    line,
                    "edited_attribute",
                    format!("`{}` is not gender, ethnicity or age_group", f[1]),
                )
            })?;
        let scores = parse_scores(line, &names[2..], &f[2..])?;
        if out.entry(attr).or_default().insert(id, scores).is_some() {
            return Err(IoError::schema(
                line,
                "candidate_id",
                format!("duplicate id {id} for {attr}"),
            ));
        }
    }
    Ok(out)
}

fn write_vectors(key: &str, names: &[String], rows: &BTreeMap<CandidateId, Vec<f64>>) -> String {
    let mut w = writer();
    let mut head = vec![key.to_string()];
    head.extend(names.iter().cloned());
    w.write_record(&head).expect("in-memory write");
    for (id, v) in rows {
        let mut row = vec![id.to_string()];
        // Shortest representation that parses back to the same bits.
        row.extend(v.iter().map(|x| format!("{x:?}")));
        w.write_record(&row).expect("in-memory write");
    }
    finish(w)
}

fn parse_vectors(text: &str, key: &str) -> Result<NumericTable, IoError> {
    let (names, rows) = records(text, None)?;
    if names.first().map(String::as_str) != Some(key) {
        return Err(IoError::schema(
            1,
            key,
            format!("first column must be `{key}`"),
        ));
    }
    let mut out = BTreeMap::new();
    for (line, rec) in rows {
        let id = parse_id(line, key, &rec[0])?;
        let v = rec
            .iter()
            .zip(&names)
            .skip(1)
            .map(|(s, n)| parse_float(line, n, s))
            .collect::<Result<Vec<_>, _>>()?;
        if out.insert(id, v).is_some() {
            return Err(IoError::schema(line, key, format!("duplicate id {id}")));
        }
    }
    Ok((names[1..].to_vec(), out))
}

/// Latent codes as `id,z_0,...,z_{d-1}`.
pub fn write_latents_csv(codes: &BTreeMap<CandidateId, Vec<f64>>) -> String {
    let d = codes.values().next().map_or(0, Vec::len);
    let names: Vec<String> = (0..d).map(|k| format!("z_{k}")).collect();
    write_vectors("id", &names, codes)
}

pub fn parse_latents_csv(text: &str) -> Result<BTreeMap<CandidateId, Vec<f64>>, IoError> {
    let (names, codes) = parse_vectors(text, "id")?;
    for (k, n) in names.iter().enumerate() {
        if *n != format!("z_{k}") {
            return Err(IoError::schema(1, n, format!("expected column `z_{k}`")));
        }
    }
    Ok(codes)
}

/// Observed features as `candidate_id,<feature names>`. Unnamed features
/// are written as `x_0,x_1,...`.
pub fn write_features_csv(names: &[String], features: &BTreeMap<CandidateId, Vec<f64>>) -> String {
    if names.is_empty() {
        let d = features.values().next().map_or(0, Vec::len);
        let generated: Vec<String> = (0..d).map(|k| format!("x_{k}")).collect();
        return write_vectors("candidate_id", &generated, features);
    }
    write_vectors("candidate_id", names, features)
}

pub fn parse_features_csv(text: &str) -> Result<NumericTable, IoError> {
    parse_vectors(text, "candidate_id")
}

/// Join a truth scores table with feature rows (and optionally latent
/// codes) into a dataset. Every scored candidate needs a feature row.
pub fn assemble_dataset(
    truth: &ScoredPopulation,
    feature_names: Vec<String>,
    features: &BTreeMap<CandidateId, Vec<f64>>,
    latents: Option<&BTreeMap<CandidateId, Vec<f64>>>,
) -> Result<Dataset, IoError> {
    let mut out = Vec::with_capacity(truth.len());
    for m in truth.members() {
        let f = features.get(&m.id).ok_or_else(|| {
            IoError::schema(
                0,
                "candidate_id",
                format!("candidate {} has no feature row", m.id),
            )
        })?;
        let mut c = Candidate::new(m.id.0, m.demographics, f.clone()).with_truth(m.scores);
        c.valid = m.valid;
        if let Some(z) = latents.and_then(|l| l.get(&m.id)) {
            c = c.with_latent(z.clone());
        }
        out.push(c);
    }
    let mut ds = Dataset::new(out);
    ds.feature_names = feature_names;
    Ok(ds)
}

/// The inverse of [`assemble_dataset`]: truth table and feature rows.
pub fn dataset_tables(ds: &Dataset) -> (ScoredPopulation, BTreeMap<CandidateId, Vec<f64>>) {
    let features = ds.iter().map(|c| (c.id, c.features.clone())).collect();
    (ScoredPopulation::from_truth(ds), features)
}

/// On-disk form of a boundary. `norm_check` records `|alpha|` so readers
/// can reject corrupted files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFile {
    pub attribute: ProtectedAttribute,
    pub alpha: Vec<f64>,
    pub b: f64,
    pub positive_label: GroupLabel,
    pub norm_check: f64,
}

pub fn boundary_to_json(b: &Boundary) -> String {
    let file = BoundaryFile {
        attribute: b.attribute,
        alpha: b.alpha.clone(),
        b: b.b,
        positive_label: b.positive_label,
        norm_check: b.norm(),
    };
    super::to_json(&file).expect("boundary serializes")
}

pub fn boundary_from_json(text: &str) -> Result<Boundary, IoError> {
    let f: BoundaryFile = super::from_json(text)?;
    let b = Boundary {
        attribute: f.attribute,
        alpha: f.alpha,
        b: f.b,
        positive_label: f.positive_label,
    };
    if (b.norm() - 1.0).abs() > 1e-9 || (b.norm() - f.norm_check).abs() > 1e-9 {
        return Err(IoError::Json(format!(
            "boundary normal has length {}",
            b.norm()
        )));
    }
    if f.positive_label.attribute() != f.attribute {
        return Err(IoError::Json(format!(
            "label {} does not belong to {}",
            f.positive_label, f.attribute
        )));
    }
    Ok(b)
}
