//! Multi-teacher knowledge distillation for learning-to-rank.
//!
//! Teacher logits are combined per query, either by plain averaging or by
//! [`pile::pile_ensemble`], which iteratively drops the teachers responsible
//! for label-inverted document pairs. The resulting targets distill into a
//! small scorer trained with a pairwise ranking loss.

pub mod cli;
pub mod error;
pub mod io;
pub mod metrics;
pub mod pile;
pub mod pipeline;
pub mod student;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    validate_dataset, Dataset, DocEntry, EnsembleOutput, EnsembleState, PairPolicy, PileConfig,
    QueryGroup, RelevanceLabel, StopPolicy, Violation, ViolationKind,
};
