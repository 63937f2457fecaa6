//! Domain types shared by the ensembling, metric, training and I/O modules.
//!
//! All values here are plain data. Construction does not enforce the dataset
//! invariants; [`validate_dataset`] reports every violation with its location
//! so callers can decide how to fail.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Human-annotated relevance grade, 0 (bad) through 4 (perfect).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct RelevanceLabel(u8);

impl RelevanceLabel {
    pub const MAX: u8 = 4;

    pub fn new(value: u8) -> Result<Self, Error> {
        if value <= Self::MAX {
            Ok(Self(value))
        } else {
            Err(Error::InvalidInput(format!(
                "relevance label {value} outside 0..={}",
                Self::MAX
            )))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for RelevanceLabel {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<RelevanceLabel> for u8 {
    fn from(label: RelevanceLabel) -> u8 {
        label.0
    }
}

impl fmt::Display for RelevanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One candidate document: its features, golden label and the logit each
/// teacher assigned to it (entry `k` is teacher `k`'s score).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocEntry {
    pub doc_id: String,
    pub features: Vec<f64>,
    pub label: RelevanceLabel,
    pub teacher_logits: Vec<f64>,
}

/// A query together with its pre-retrieved candidate documents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryGroup {
    pub query_id: String,
    pub docs: Vec<DocEntry>,
}

impl QueryGroup {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn labels(&self) -> Vec<RelevanceLabel> {
        self.docs.iter().map(|d| d.label).collect()
    }

    /// Number of teachers, taken from the first document.
    pub fn num_teachers(&self) -> usize {
        self.docs.first().map_or(0, |d| d.teacher_logits.len())
    }

    /// Logits of a single teacher across the group, in document order.
    pub fn teacher_column(&self, teacher: usize) -> Vec<f64> {
        self.docs
            .iter()
            .map(|d| d.teacher_logits[teacher])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    pub groups: Vec<QueryGroup>,
    pub feature_dim: usize,
    pub num_teachers: usize,
}

impl Dataset {
    /// Builds a dataset taking the feature dimension and teacher count from
    /// the first document. The result is not validated.
    pub fn from_groups(groups: Vec<QueryGroup>) -> Self {
        let first = groups.iter().flat_map(|g| g.docs.first()).next();
        let feature_dim = first.map_or(0, |d| d.features.len());
        let num_teachers = first.map_or(0, |d| d.teacher_logits.len());
        Self {
            groups,
            feature_dim,
            num_teachers,
        }
    }

    pub fn num_docs(&self) -> usize {
        self.groups.iter().map(QueryGroup::len).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    EmptyGroup,
    DuplicateDocId,
    FeatureDim { expected: usize, found: usize },
    TeacherCount { expected: usize, found: usize },
    NonFiniteFeature { index: usize },
    NonFiniteLogit { teacher: usize },
}

/// A single broken invariant together with where it was found.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub group_index: usize,
    pub query_id: String,
    pub doc_index: Option<usize>,
    pub doc_id: Option<String>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "group {} ('{}')", self.group_index, self.query_id)?;
        if let (Some(i), Some(id)) = (self.doc_index, &self.doc_id) {
            write!(f, ", doc {i} ('{id}')")?;
        }
        match &self.kind {
            ViolationKind::EmptyGroup => write!(f, ": group has no documents"),
            ViolationKind::DuplicateDocId => write!(f, ": duplicate doc_id"),
            ViolationKind::FeatureDim { expected, found } => {
                write!(f, ": expected {expected} features, found {found}")
            }
            ViolationKind::TeacherCount { expected, found } => {
                write!(f, ": expected {expected} teacher logits, found {found}")
            }
            ViolationKind::NonFiniteFeature { index } => {
                write!(f, ": feature {index} is not finite")
            }
            ViolationKind::NonFiniteLogit { teacher } => {
                write!(f, ": logit of teacher {teacher} is not finite")
            }
        }
    }
}

/// Checks one group against the dataset-wide dimensions.
pub fn validate_group(
    group: &QueryGroup,
    group_index: usize,
    feature_dim: usize,
    num_teachers: usize,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let violation = |doc: Option<(usize, &DocEntry)>, kind| Violation {
        group_index,
        query_id: group.query_id.clone(),
        doc_index: doc.map(|(i, _)| i),
        doc_id: doc.map(|(_, d)| d.doc_id.clone()),
        kind,
    };

    if group.docs.is_empty() {
        out.push(violation(None, ViolationKind::EmptyGroup));
    }
    let mut seen = HashSet::new();
    for (i, doc) in group.docs.iter().enumerate() {
        let at = Some((i, doc));
        if !seen.insert(doc.doc_id.as_str()) {
            out.push(violation(at, ViolationKind::DuplicateDocId));
        }
        if doc.features.len() != feature_dim {
            out.push(violation(
                at,
                ViolationKind::FeatureDim {
                    expected: feature_dim,
                    found: doc.features.len(),
                },
            ));
        }
        if doc.teacher_logits.len() != num_teachers {
            out.push(violation(
                at,
                ViolationKind::TeacherCount {
                    expected: num_teachers,
                    found: doc.teacher_logits.len(),
                },
            ));
        }
        if let Some(index) = doc.features.iter().position(|v| !v.is_finite()) {
            out.push(violation(at, ViolationKind::NonFiniteFeature { index }));
        }
        if let Some(teacher) = doc.teacher_logits.iter().position(|v| !v.is_finite()) {
            out.push(violation(at, ViolationKind::NonFiniteLogit { teacher }));
        }
    }
    out
}

/// Returns every invariant violation in the dataset; empty means valid.
pub fn validate_dataset(dataset: &Dataset) -> Vec<Violation> {
    dataset
        .groups
        .iter()
        .enumerate()
        .flat_map(|(gi, g)| validate_group(g, gi, dataset.feature_dim, dataset.num_teachers))
        .collect()
}

/// Evolving per-group state of the iterative ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleState {
    pub iteration: usize,
    /// Current ensemble logit per document.
    pub logits: Vec<f64>,
    /// Binary teacher weights per document (rows) and teacher (columns).
    pub weights: Vec<Vec<u8>>,
}

/// When the iterative ensemble stops refining a group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopPolicy {
    /// Stop as soon as no label-distinct pair is in reversed order.
    OrderConsistent,
    /// Keep refining label-distinct pairs until order is consistent and no
    /// pair update would move a logit by more than `epsilon`.
    FixedPoint { epsilon: f64 },
}

impl Default for StopPolicy {
    fn default() -> Self {
        StopPolicy::FixedPoint { epsilon: 1e-4 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairPolicy {
    #[default]
    UniformRandom,
    Sweep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PileConfig {
    pub lambda: f64,
    pub max_iters_exponent: f64,
    pub max_iters_override: Option<usize>,
    pub stop_policy: StopPolicy,
    pub pair_policy: PairPolicy,
    pub seed: u64,
    pub trace: bool,
}

impl Default for PileConfig {
    fn default() -> Self {
        Self {
            lambda: 0.9,
            max_iters_exponent: 1.5,
            max_iters_override: None,
            stop_policy: StopPolicy::default(),
            pair_policy: PairPolicy::default(),
            seed: 0,
            trace: false,
        }
    }
}

impl PileConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::Config(format!(
                "update rate must lie in (0, 1], got {}",
                self.lambda
            )));
        }
        if !self.max_iters_exponent.is_finite() || self.max_iters_exponent < 0.0 {
            return Err(Error::Config(format!(
                "max-iteration exponent must be finite and non-negative, got {}",
                self.max_iters_exponent
            )));
        }
        if let StopPolicy::FixedPoint { epsilon } = self.stop_policy {
            if epsilon.is_nan() || epsilon <= 0.0 {
                return Err(Error::Config(format!(
                    "fixed-point epsilon must be positive, got {epsilon}"
                )));
            }
        }
        Ok(())
    }

    /// Iteration cap for a group of `n` documents: `ceil(n^exponent)`,
    /// lowered to the override when one is set.
    pub fn max_iters(&self, n: usize) -> usize {
        let cap = (n as f64).powf(self.max_iters_exponent).ceil() as usize;
        match self.max_iters_override {
            Some(limit) => cap.min(limit),
            None => cap,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOutput {
    pub logits: Vec<f64>,
    pub final_weights: Vec<Vec<u8>>,
    pub iterations_used: usize,
    pub converged: bool,
    pub trace: Option<Vec<EnsembleState>>,
}
