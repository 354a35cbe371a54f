//! The black-box prediction interface the attack probes.
//!
//! Two concrete victims are provided: [`PrototypeVictim`], a deterministic
//! in-process nearest-class-mean classifier used for desk-scale
//! verification, and [`RemoteVictim`], a wire-protocol client for attacking
//! externally served models. The attack code only ever sees the [`Victim`]
//! trait, so it stays black-box by construction.

mod prototype;
mod remote;

pub use prototype::{build_prototype_victim, MissingEmbeddingPolicy, PrototypeVictim};
pub use remote::{
    serve_victim, ClassesResponse, PredictRequest, PredictResponse, RemoteVictim, ServerHandle,
};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::Table;

#[derive(Debug, Error)]
pub enum VictimError {
    #[error("class {class:?} is unknown to the victim")]
    UnknownClass { class: String },
    #[error("requested class list is empty")]
    EmptyClassList,
    #[error("column {col} out of range for table {table_id} (m={m})")]
    ColumnOutOfRange {
        table_id: String,
        col: usize,
        m: usize,
    },
    #[error("header weight {value} outside [0, 1]")]
    HeaderWeightOutOfRange { value: f64 },
    #[error("decision threshold {value} outside (-1, 1)")]
    ThresholdOutOfRange { value: f64 },
    #[error("class {class:?} has no training entities with embeddings")]
    ClassWithoutEntities { class: String },
    #[error("class {class:?} has a zero mean embedding; prototype is degenerate")]
    DegeneratePrototype { class: String },
    #[error("no embedding for {kind} {token:?} (policy: fail)")]
    MissingEmbedding { kind: &'static str, token: String },
    #[error("training corpus has no annotated columns")]
    NoAnnotatedColumns,
    #[error("victim model file {path}: {message}")]
    Model { path: String, message: String },
    #[error("transport failure for endpoint {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("protocol violation from endpoint {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },
}

impl VictimError {
    /// Remote failures get a dedicated exit code at the CLI boundary.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            VictimError::Transport { .. } | VictimError::Protocol { .. }
        )
    }
}

/// Prediction scores for an ordered list of requested classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitVector {
    pub classes: Vec<String>,
    pub scores: Vec<f64>,
}

impl LogitVector {
    pub fn new(classes: Vec<String>, scores: Vec<f64>) -> Self {
        debug_assert_eq!(classes.len(), scores.len());
        debug_assert!(scores.iter().all(|s| s.is_finite()));
        LogitVector { classes, scores }
    }

    pub fn score_of(&self, class: &str) -> Option<f64> {
        self.classes
            .iter()
            .position(|c| c == class)
            .map(|i| self.scores[i])
    }
}

/// The subset of the victim's vocabulary assigned to a column. May be empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub classes: BTreeSet<String>,
}

impl PredictionSet {
    pub fn new(classes: impl IntoIterator<Item = String>) -> Self {
        PredictionSet {
            classes: classes.into_iter().collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn contains(&self, class: &str) -> bool {
        self.classes.contains(class)
    }

    /// True when the two sets share no class: the attack success condition
    /// compares prediction sets before and after perturbation this way.
    pub fn is_disjoint(&self, other: &PredictionSet) -> bool {
        self.classes.is_disjoint(&other.classes)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(String::as_str)
    }
}

/// Black-box CTA model: callers see prediction scores and nothing else.
///
/// Implementations must be deterministic: identical `(table, column,
/// classes)` inputs yield identical outputs across calls, threads, and
/// transports.
pub trait Victim: Send + Sync {
    /// The victim's class vocabulary, in a stable order.
    fn classes(&self) -> &[String];

    /// The threshold its prediction sets are cut at.
    fn threshold(&self) -> f64;

    /// Scores for exactly the requested classes, in request order.
    fn predict_logits(
        &self,
        table: &Table,
        col: usize,
        classes: &[String],
    ) -> Result<LogitVector, VictimError>;

    /// `{c in vocabulary : logit(c) >= threshold}`.
    fn predict_classes(&self, table: &Table, col: usize) -> Result<PredictionSet, VictimError> {
        let vocab = self.classes().to_vec();
        let logits = self.predict_logits(table, col, &vocab)?;
        let tau = self.threshold();
        Ok(PredictionSet::new(
            logits
                .classes
                .into_iter()
                .zip(logits.scores)
                .filter(|(_, score)| *score >= tau)
                .map(|(class, _)| class),
        ))
    }
}
