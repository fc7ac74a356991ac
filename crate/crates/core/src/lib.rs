//! Core library for the patex pipeline: mapping patent abstracts to
//! occupational task statements and aggregating technology exposure scores.
//!
//! The pipeline, end to end:
//!
//! 1. [`corpus`] loads patents, tasks, detailed work activities and
//!    occupations, and deduplicates patent families by office preference.
//! 2. [`textprep`] normalizes abstracts and task statements into token lists.
//! 3. [`tfidf`] builds document-frequency statistics and sparse tf-idf
//!    vectors over a shared vocabulary.
//! 4. [`embedding`] loads word vectors and derives a sparse word-similarity
//!    matrix over that vocabulary.
//! 5. [`similarity`] scores every task query against every patent with the
//!    soft cosine measure, keeps scores above a sigma-based cutoff, and
//!    merges the runs of two embeddings into one task-patent matrix.
//! 6. [`fourir`] classifies patents against a technology-field concordance.
//! 7. [`scores`] turns matrix counts into log-scale exposure values and
//!    aggregates them to occupations and career clusters.
//! 8. [`analysis`] provides the statistical toolkit used on top: Pearson
//!    correlation, OLS with named terms, locally weighted smoothing,
//!    external-index comparison and quadrant reports.
//!
//! Everything here is deterministic: given the same inputs and parameters,
//! every function produces bit-identical results regardless of thread count.

pub mod analysis;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod fourir;
pub mod numeric;
pub mod scores;
pub mod similarity;
pub mod textprep;
pub mod tfidf;

pub use analysis::{ExternalIndex, IndexComparison, QuadrantReport, RegressionResult};
pub use corpus::{DwaRecord, OccupationRecord, PatentLoad, PatentRecord, TaskRecord};
pub use embedding::{WordSimilarityMatrix, WordVectorTable};
pub use error::Error;
pub use fourir::{CodePattern, ConcordanceTable, Dimension, TechField};
pub use scores::{EntityKind, ExposureScore, PatentSubset, PatentTagIndex, TaskTypeProfile};
pub use similarity::{Provenance, ScoreRun, TaskPatentScoreMatrix, TaskQuery, ThresholdScope};
pub use textprep::TokenizedDoc;
pub use tfidf::{CorpusStats, SparseVector};

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
