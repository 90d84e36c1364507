//! Candidate populations, protected-group labels and paired audit records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("candidate {0} is not present in the original population")]
    UnknownCandidate(CandidateId),
    #[error("candidate {id} has no protected {attribute} label to edit")]
    NotProtected {
        id: CandidateId,
        attribute: ProtectedAttribute,
    },
    #[error("unknown {0} label `{1}`")]
    BadLabel(ProtectedAttribute, String),
    #[error("unknown protected attribute `{0}`")]
    BadAttribute(String),
}

/// Stable, non-negative identifier of a candidate. Ids order everything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidateId(pub u64);

impl fmt::Display for CandidateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtectedAttribute {
    Gender,
    Ethnicity,
    AgeGroup,
}

impl ProtectedAttribute {
    pub const ALL: [ProtectedAttribute; 3] = [
        ProtectedAttribute::Gender,
        ProtectedAttribute::Ethnicity,
        ProtectedAttribute::AgeGroup,
    ];

    /// Labels of this attribute in table order.
    pub fn labels(self) -> &'static [GroupLabel] {
        use GroupLabel::*;
        match self {
            ProtectedAttribute::Gender => &[F, M],
            ProtectedAttribute::Ethnicity => &[AfAm, Cau, Asi],
            ProtectedAttribute::AgeGroup => &[Under40, AtOrOver40],
        }
    }

    /// The single protected label of this attribute.
    pub fn protected_label(self) -> GroupLabel {
        match self {
            ProtectedAttribute::Gender => GroupLabel::M,
            ProtectedAttribute::Ethnicity => GroupLabel::AfAm,
            ProtectedAttribute::AgeGroup => GroupLabel::AtOrOver40,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            ProtectedAttribute::Gender => "gender",
            ProtectedAttribute::Ethnicity => "ethnicity",
            ProtectedAttribute::AgeGroup => "age_group",
        }
    }

    pub fn parse(s: &str) -> Result<Self, DataError> {
        match s {
            "gender" => Ok(ProtectedAttribute::Gender),
            "ethnicity" => Ok(ProtectedAttribute::Ethnicity),
            "age_group" | "age" => Ok(ProtectedAttribute::AgeGroup),
            other => Err(DataError::BadAttribute(other.to_string())),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ProtectedAttribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// A demographic group. M, AfAm and AtOrOver40 are the protected groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GroupLabel {
    F,
    M,
    AfAm,
    Cau,
    Asi,
    Under40,
    AtOrOver40,
}

impl GroupLabel {
    /// All groups in the column order of the group tables.
    pub const ALL: [GroupLabel; 7] = [
        GroupLabel::F,
        GroupLabel::M,
        GroupLabel::AfAm,
        GroupLabel::Cau,
        GroupLabel::Asi,
        GroupLabel::Under40,
        GroupLabel::AtOrOver40,
    ];

    pub fn attribute(self) -> ProtectedAttribute {
        use GroupLabel::*;
        match self {
            F | M => ProtectedAttribute::Gender,
            AfAm | Cau | Asi => ProtectedAttribute::Ethnicity,
            Under40 | AtOrOver40 => ProtectedAttribute::AgeGroup,
        }
    }

    pub fn is_protected(self) -> bool {
        matches!(
            self,
            GroupLabel::M | GroupLabel::AfAm | GroupLabel::AtOrOver40
        )
    }

    /// Position of the label within its attribute's class list.
    pub fn class_index(self) -> usize {
        self.attribute()
            .labels()
            .iter()
            .position(|&l| l == self)
            .expect("label belongs to its attribute")
    }

    pub fn from_class_index(attr: ProtectedAttribute, idx: usize) -> Option<Self> {
        attr.labels().get(idx).copied()
    }

    pub fn code(self) -> &'static str {
        use GroupLabel::*;
        match self {
            F => "F",
            M => "M",
            AfAm => "AfAm",
            Cau => "Cau",
            Asi => "Asi",
            Under40 => "Under40",
            AtOrOver40 => "AtOrOver40",
        }
    }

    /// Short column header used in rendered tables.
    pub fn display_name(self) -> &'static str {
        use GroupLabel::*;
        match self {
            F => "F",
            M => "M",
            AfAm => "Af.Am.",
            Cau => "Cau.",
            Asi => "Asi.",
            Under40 => "A < 40",
            AtOrOver40 => "A ≥ 40",
        }
    }

    pub fn parse(attr: ProtectedAttribute, s: &str) -> Result<Self, DataError> {
        attr.labels()
            .iter()
            .copied()
            .find(|l| l.code() == s)
            .ok_or_else(|| DataError::BadLabel(attr, s.to_string()))
    }

    /// Age group for an age in years; the split is exactly at 40.
    pub fn from_age(years: f64) -> Self {
        if years >= 40.0 {
            GroupLabel::AtOrOver40
        } else {
            GroupLabel::Under40
        }
    }
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// One optional label per protected attribute.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    pub gender: Option<GroupLabel>,
    pub ethnicity: Option<GroupLabel>,
    pub age_group: Option<GroupLabel>,
}

impl Demographics {
    pub fn new(
        gender: Option<GroupLabel>,
        ethnicity: Option<GroupLabel>,
        age_group: Option<GroupLabel>,
    ) -> Self {
        Self {
            gender,
            ethnicity,
            age_group,
        }
    }

    pub fn get(&self, attr: ProtectedAttribute) -> Option<GroupLabel> {
        match attr {
            ProtectedAttribute::Gender => self.gender,
            ProtectedAttribute::Ethnicity => self.ethnicity,
            ProtectedAttribute::AgeGroup => self.age_group,
        }
    }

    pub fn set(&mut self, attr: ProtectedAttribute, label: Option<GroupLabel>) {
        match attr {
            ProtectedAttribute::Gender => self.gender = label,
            ProtectedAttribute::Ethnicity => self.ethnicity = label,
            ProtectedAttribute::AgeGroup => self.age_group = label,
        }
    }

    /// `Some(true)` for a protected member, `Some(false)` for the reference
    /// groups (Asi and Cau merged), `None` when unlabeled.
    pub fn is_protected(&self, attr: ProtectedAttribute) -> Option<bool> {
        self.get(attr).map(GroupLabel::is_protected)
    }
}

/// One of the six scored dimensions: the Big Five traits plus the interview score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    O,
    C,
    E,
    A,
    N,
    I,
}

impl Dimension {
    pub const ALL: [Dimension; 6] = [
        Dimension::O,
        Dimension::C,
        Dimension::E,
        Dimension::A,
        Dimension::N,
        Dimension::I,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Dimension::O => "o",
            Dimension::C => "c",
            Dimension::E => "e",
            Dimension::A => "a",
            Dimension::N => "n",
            Dimension::I => "i",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dimension::O => "Openness",
            Dimension::C => "Conscientiousness",
            Dimension::E => "Extraversion",
            Dimension::A => "Agreeableness",
            Dimension::N => "Neuroticism",
            Dimension::I => "Interview",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// OCEAN trait scores plus interview score, each expected in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreVector {
    pub o: f64,
    pub c: f64,
    pub e: f64,
    pub a: f64,
    pub n: f64,
    pub i: f64,
}

impl ScoreVector {
    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            o: v[0],
            c: v[1],
            e: v[2],
            a: v[3],
            n: v[4],
            i: v[5],
        }
    }

    pub fn splat(v: f64) -> Self {
        Self::from_array([v; 6])
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.o, self.c, self.e, self.a, self.n, self.i]
    }

    pub fn get(&self, dim: Dimension) -> f64 {
        self.to_array()[dim.index()]
    }

    pub fn interview(&self) -> f64 {
        self.i
    }

    /// First dimension outside `[0, 1]` (or non-finite), if any.
    pub fn out_of_range(&self) -> Option<Dimension> {
        Dimension::ALL
            .into_iter()
            .find(|&d| !(0.0..=1.0).contains(&self.get(d)))
    }

    pub fn clipped(self) -> Self {
        Self::from_array(self.to_array().map(|v| v.clamp(0.0, 1.0)))
    }

    /// Snap every component to the six-fractional-digit grid used by the
    /// score files, so metrics computed in memory match metrics recomputed
    /// from the written files.
    pub fn quantized(self) -> Self {
        Self::from_array(self.to_array().map(quantize_score))
    }

    pub fn minus(self, other: Self) -> [f64; 6] {
        let a = self.to_array();
        let b = other.to_array();
        std::array::from_fn(|k| a[k] - b[k])
    }
}

pub fn quantize_score(v: f64) -> f64 {
    format!("{v:.6}").parse().expect("formatted float parses")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: CandidateId,
    pub demographics: Demographics,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<ScoreVector>,
    pub valid: bool,
}

impl Candidate {
    pub fn new(id: u64, demographics: Demographics, features: Vec<f64>) -> Self {
        Self {
            id: CandidateId(id),
            demographics,
            features,
            latent: None,
            truth: None,
            valid: true,
        }
    }

    pub fn with_truth(mut self, truth: ScoreVector) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn with_latent(mut self, latent: Vec<f64>) -> Self {
        self.latent = Some(latent);
        self
    }
}

/// An id-ordered population. Construction sorts by id; duplicates are kept so
/// that [`validate_dataset`] can report them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    candidates: Vec<Candidate>,
    feature_dim: usize,
    latent_dim: Option<usize>,
    /// Optional column names of the feature vector.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(mut candidates: Vec<Candidate>) -> Self {
        candidates.sort_by_key(|c| c.id);
        let feature_dim = candidates.first().map_or(0, |c| c.features.len());
        let latent_dim = candidates
            .first()
            .and_then(|c| c.latent.as_ref().map(Vec::len));
        Self {
            candidates,
            feature_dim,
            latent_dim,
            feature_names: Vec::new(),
        }
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn into_candidates(self) -> Vec<Candidate> {
        self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn latent_dim(&self) -> Option<usize> {
        self.latent_dim
    }

    pub fn get(&self, id: CandidateId) -> Option<&Candidate> {
        self.candidates
            .binary_search_by_key(&id, |c| c.id)
            .ok()
            .map(|i| &self.candidates[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter()
    }

    /// Candidates still flagged valid, in id order.
    pub fn valid_only(&self) -> Dataset {
        let mut out = Dataset::new(
            self.candidates
                .iter()
                .filter(|c| c.valid)
                .cloned()
                .collect(),
        );
        out.feature_names = self.feature_names.clone();
        out
    }

    /// Row-major feature matrix of all candidates.
    pub fn feature_matrix(&self) -> ndarray::Array2<f64> {
        let mut m = ndarray::Array2::zeros((self.len(), self.feature_dim));
        for (r, c) in self.candidates.iter().enumerate() {
            for (k, &v) in c.features.iter().enumerate().take(self.feature_dim) {
                m[[r, k]] = v;
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Violation {
    DuplicateId(CandidateId),
    /// A score component outside `[0, 1]`; names the dimension code.
    ScoreOutOfRange(CandidateId, String),
    FeatureDimension {
        id: CandidateId,
        expected: usize,
        found: usize,
    },
    LatentDimension {
        id: CandidateId,
        expected: Option<usize>,
        found: Option<usize>,
    },
    NonFiniteFeature(CandidateId),
    LabelAttributeMismatch(CandidateId, ProtectedAttribute),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId(id) => write!(f, "candidate {id}: duplicate id"),
            Violation::ScoreOutOfRange(id, dim) => {
                write!(f, "candidate {id}: score `{dim}` outside [0, 1]")
            }
            Violation::FeatureDimension {
                id,
                expected,
                found,
            } => write!(
                f,
                "candidate {id}: feature dimension {found}, expected {expected}"
            ),
            Violation::LatentDimension {
                id,
                expected,
                found,
            } => write!(
                f,
                "candidate {id}: latent dimension {found:?}, expected {expected:?}"
            ),
            Violation::NonFiniteFeature(id) => write!(f, "candidate {id}: non-finite feature"),
            Violation::LabelAttributeMismatch(id, attr) => {
                write!(
                    f,
                    "candidate {id}: {attr} slot holds a label of another attribute"
                )
            }
        }
    }
}

/// Every broken invariant of the dataset, sorted. Empty means valid.
pub fn validate_dataset(ds: &Dataset) -> Vec<Violation> {
    let mut out = BTreeSet::new();
    let mut seen = BTreeSet::new();
    for c in ds.iter() {
        if !seen.insert(c.id) {
            out.insert(Violation::DuplicateId(c.id));
        }
        if c.features.len() != ds.feature_dim {
            out.insert(Violation::FeatureDimension {
                id: c.id,
                expected: ds.feature_dim,
                found: c.features.len(),
            });
        }
        if c.features.iter().any(|v| !v.is_finite()) {
            out.insert(Violation::NonFiniteFeature(c.id));
        }
        let found = c.latent.as_ref().map(Vec::len);
        if found != ds.latent_dim {
            out.insert(Violation::LatentDimension {
                id: c.id,
                expected: ds.latent_dim,
                found,
            });
        }
        if let Some(truth) = c.truth {
            for d in Dimension::ALL {
                if !(0.0..=1.0).contains(&truth.get(d)) {
                    out.insert(Violation::ScoreOutOfRange(c.id, d.code().to_string()));
                }
            }
        }
        for attr in ProtectedAttribute::ALL {
            if let Some(label) = c.demographics.get(attr) {
                if label.attribute() != attr {
                    out.insert(Violation::LabelAttributeMismatch(c.id, attr));
                }
            }
        }
    }
    out.into_iter().collect()
}

/// Buckets of candidate ids per label of `attr`. Unlabeled candidates are
/// left out; ids within a bucket ascend.
pub fn partition_by_group(
    ds: &Dataset,
    attr: ProtectedAttribute,
) -> BTreeMap<GroupLabel, Vec<CandidateId>> {
    let mut out: BTreeMap<GroupLabel, Vec<CandidateId>> = BTreeMap::new();
    for c in ds.iter() {
        if let Some(label) = c.demographics.get(attr) {
            out.entry(label).or_default().push(c.id);
        }
    }
    out
}

/// Protected vs. reference split (`true` = protected). For ethnicity this
/// merges Asi and Cau into the reference bucket.
pub fn partition_protected(
    ds: &Dataset,
    attr: ProtectedAttribute,
) -> BTreeMap<bool, Vec<CandidateId>> {
    let mut out: BTreeMap<bool, Vec<CandidateId>> = BTreeMap::new();
    for c in ds.iter() {
        if let Some(p) = c.demographics.is_protected(attr) {
            out.entry(p).or_default().push(c.id);
        }
    }
    out
}

/// A scored member of a population: labels, validity and one score vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub id: CandidateId,
    pub demographics: Demographics,
    pub valid: bool,
    pub scores: ScoreVector,
}

/// Id-ordered scores with group labels; the input of every fairness metric.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoredPopulation {
    members: Vec<ScoredCandidate>,
}

impl ScoredPopulation {
    pub fn new(mut members: Vec<ScoredCandidate>) -> Self {
        members.sort_by_key(|m| m.id);
        Self { members }
    }

    /// Join a dataset's labels with a score map. Candidates without a score
    /// are dropped.
    pub fn from_dataset(ds: &Dataset, scores: &BTreeMap<CandidateId, ScoreVector>) -> Self {
        Self::new(
            ds.iter()
                .filter_map(|c| {
                    scores.get(&c.id).map(|&s| ScoredCandidate {
                        id: c.id,
                        demographics: c.demographics,
                        valid: c.valid,
                        scores: s,
                    })
                })
                .collect(),
        )
    }

    /// Ground-truth labels of a dataset as a scored population.
    pub fn from_truth(ds: &Dataset) -> Self {
        Self::new(
            ds.iter()
                .filter_map(|c| {
                    c.truth.map(|s| ScoredCandidate {
                        id: c.id,
                        demographics: c.demographics,
                        valid: c.valid,
                        scores: s,
                    })
                })
                .collect(),
        )
    }

    pub fn members(&self) -> &[ScoredCandidate] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn get(&self, id: CandidateId) -> Option<&ScoredCandidate> {
        self.members
            .binary_search_by_key(&id, |m| m.id)
            .ok()
            .map(|i| &self.members[i])
    }

    pub fn valid_only(&self) -> Self {
        Self {
            members: self.members.iter().filter(|m| m.valid).copied().collect(),
        }
    }

    pub fn quantized(&self) -> Self {
        Self {
            members: self
                .members
                .iter()
                .map(|m| ScoredCandidate {
                    scores: m.scores.quantized(),
                    ..*m
                })
                .collect(),
        }
    }

    pub fn score_map(&self) -> BTreeMap<CandidateId, ScoreVector> {
        self.members.iter().map(|m| (m.id, m.scores)).collect()
    }

    /// Replace the scores of the given ids, keeping labels and validity.
    pub fn with_replaced_scores(&self, replaced: &BTreeMap<CandidateId, ScoreVector>) -> Self {
        Self {
            members: self
                .members
                .iter()
                .map(|m| match replaced.get(&m.id) {
                    Some(&s) => ScoredCandidate { scores: s, ..*m },
                    None => *m,
                })
                .collect(),
        }
    }
}

/// One individual's original and counterfactual scores for a single edit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedAuditRecord {
    pub candidate_id: CandidateId,
    pub edited_attribute: ProtectedAttribute,
    pub original: ScoreVector,
    pub counterfactual: ScoreVector,
    pub original_group: GroupLabel,
}

impl PairedAuditRecord {
    /// Component-wise `counterfactual - original`.
    pub fn shift(&self) -> [f64; 6] {
        self.counterfactual.minus(self.original)
    }
}

/// Pair counterfactual scores with the original scores of the same
/// candidates. Each counterfactual id must be a protected member of `attr`
/// in `orig`.
pub fn pair_records(
    orig: &ScoredPopulation,
    cf: &BTreeMap<CandidateId, ScoreVector>,
    attr: ProtectedAttribute,
) -> Result<Vec<PairedAuditRecord>, DataError> {
    cf.iter()
        .map(|(&id, &counterfactual)| {
            let member = orig.get(id).ok_or(DataError::UnknownCandidate(id))?;
            let group = member
                .demographics
                .get(attr)
                .filter(|g| g.is_protected())
                .ok_or(DataError::NotProtected {
                    id,
                    attribute: attr,
                })?;
            Ok(PairedAuditRecord {
                candidate_id: id,
                edited_attribute: attr,
                original: member.scores,
                counterfactual,
                original_group: group,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cand(id: u64, g: GroupLabel, e: GroupLabel, a: Option<GroupLabel>) -> Candidate {
        Candidate::new(id, Demographics::new(Some(g), Some(e), a), vec![0.0; 3])
            .with_truth(ScoreVector::splat(0.5))
    }

    #[test]
    fn well_formed_dataset_has_no_violations() {
        let ds = Dataset::new(vec![
            cand(1, GroupLabel::F, GroupLabel::Cau, Some(GroupLabel::Under40)),
            cand(2, GroupLabel::M, GroupLabel::AfAm, None),
            cand(
                3,
                GroupLabel::F,
                GroupLabel::Asi,
                Some(GroupLabel::AtOrOver40),
            ),
        ]);
        assert!(validate_dataset(&ds).is_empty());
    }

    #[test]
    fn duplicate_id_is_reported() {
        let ds = Dataset::new(vec![
            cand(7, GroupLabel::F, GroupLabel::Cau, None),
            cand(7, GroupLabel::M, GroupLabel::Cau, None),
        ]);
        assert_eq!(
            validate_dataset(&ds),
            vec![Violation::DuplicateId(CandidateId(7))]
        );
    }

    #[test]
    fn out_of_range_score_is_reported() {
        let mut bad = cand(2, GroupLabel::F, GroupLabel::Cau, None);
        bad.truth = Some(ScoreVector {
            o: 1.3,
            ..ScoreVector::splat(0.5)
        });
        let ds = Dataset::new(vec![cand(1, GroupLabel::M, GroupLabel::Cau, None), bad]);
        assert_eq!(
            validate_dataset(&ds),
            vec![Violation::ScoreOutOfRange(CandidateId(2), "o".into())]
        );
    }

    #[test]
    fn mismatched_label_and_dimensions_are_reported() {
        let mut c = cand(4, GroupLabel::F, GroupLabel::Cau, None);
        c.demographics.gender = Some(GroupLabel::Cau);
        let mut d = cand(5, GroupLabel::F, GroupLabel::Cau, None);
        d.features.push(1.0);
        let v = validate_dataset(&Dataset::new(vec![c, d]));
        assert!(v.contains(&Violation::LabelAttributeMismatch(
            CandidateId(4),
            ProtectedAttribute::Gender
        )));
        assert!(v
            .iter()
            .any(|x| matches!(x, Violation::FeatureDimension { id, .. } if id.0 == 5)));
    }

    #[test]
    fn partition_counts_and_excludes_unlabeled() {
        let ds = Dataset::new(vec![
            cand(1, GroupLabel::F, GroupLabel::Cau, None),
            cand(2, GroupLabel::F, GroupLabel::Cau, None),
            cand(3, GroupLabel::M, GroupLabel::Cau, None),
        ]);
        let p = partition_by_group(&ds, ProtectedAttribute::Gender);
        assert_eq!(p[&GroupLabel::F], vec![CandidateId(1), CandidateId(2)]);
        assert_eq!(p[&GroupLabel::M], vec![CandidateId(3)]);
        assert!(partition_by_group(&ds, ProtectedAttribute::AgeGroup).is_empty());
    }

    #[test]
    fn ethnicity_protected_split_merges_reference_groups() {
        let ds = Dataset::new(vec![
            cand(1, GroupLabel::F, GroupLabel::Cau, None),
            cand(2, GroupLabel::F, GroupLabel::Asi, None),
            cand(3, GroupLabel::M, GroupLabel::AfAm, None),
        ]);
        let p = partition_protected(&ds, ProtectedAttribute::Ethnicity);
        assert_eq!(p[&false].len(), 2);
        assert_eq!(p[&true], vec![CandidateId(3)]);
    }

    #[test]
    fn age_split_is_at_forty() {
        assert_eq!(GroupLabel::from_age(39.99), GroupLabel::Under40);
        assert_eq!(GroupLabel::from_age(40.0), GroupLabel::AtOrOver40);
    }

    fn scored(id: u64, g: GroupLabel) -> ScoredCandidate {
        ScoredCandidate {
            id: CandidateId(id),
            demographics: Demographics::new(Some(g), None, None),
            valid: true,
            scores: ScoreVector::splat(0.4),
        }
    }

    #[test]
    fn pairing_counts_and_errors() {
        let orig = ScoredPopulation::new(
            (0..20)
                .map(|i| {
                    scored(
                        i,
                        if i % 2 == 0 {
                            GroupLabel::M
                        } else {
                            GroupLabel::F
                        },
                    )
                })
                .collect(),
        );
        let cf: BTreeMap<_, _> = [0, 2, 4, 6, 8]
            .into_iter()
            .map(|i| (CandidateId(i), ScoreVector::splat(0.6)))
            .collect();
        let recs = pair_records(&orig, &cf, ProtectedAttribute::Gender).unwrap();
        assert_eq!(recs.len(), 5);
        assert!(recs.iter().all(|r| r.original_group == GroupLabel::M));

        let unknown: BTreeMap<_, _> = [(CandidateId(99), ScoreVector::splat(0.5))].into();
        assert_eq!(
            pair_records(&orig, &unknown, ProtectedAttribute::Gender),
            Err(DataError::UnknownCandidate(CandidateId(99)))
        );
        assert!(
            pair_records(&orig, &BTreeMap::new(), ProtectedAttribute::Gender)
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn quantize_matches_six_digit_text() {
        let q = quantize_score(0.123_456_789);
        assert_eq!(format!("{q}"), "0.123457");
    }

    fn arb_label(attr: ProtectedAttribute) -> impl Strategy<Value = Option<GroupLabel>> {
        let labels = attr.labels().to_vec();
        proptest::option::of(proptest::sample::select(labels))
    }

    proptest! {
        #[test]
        fn partition_is_disjoint_and_exhaustive(
            labels in proptest::collection::vec(arb_label(ProtectedAttribute::AgeGroup), 0..60)
        ) {
            let ds = Dataset::new(labels.iter().enumerate().map(|(i, &a)| {
                Candidate::new(i as u64, Demographics::new(None, None, a), vec![])
            }).collect());
            let p = partition_by_group(&ds, ProtectedAttribute::AgeGroup);
            let mut all: Vec<_> = p.values().flatten().copied().collect();
            let n = all.len();
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), n);
            let labeled: Vec<_> = ds.iter().filter(|c| c.demographics.age_group.is_some()).map(|c| c.id).collect();
            prop_assert_eq!(all, labeled);
        }

        #[test]
        fn validation_is_order_insensitive(
            ids in proptest::collection::vec(0u64..20, 1..30), seed in any::<u64>()
        ) {
            let cands: Vec<_> = ids.iter().map(|&i| cand(i, GroupLabel::F, GroupLabel::Cau, None)).collect();
            let mut shuffled = cands.clone();
            let k = (seed as usize) % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            let a = validate_dataset(&Dataset::new(cands));
            let b = validate_dataset(&Dataset::new(shuffled));
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(validate_dataset(&Dataset::new(ids.iter().map(|&i| cand(i, GroupLabel::F, GroupLabel::Cau, None)).collect())), a);
        }
    }
}
