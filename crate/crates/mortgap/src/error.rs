//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // panel ingestion
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: missing column {column:?} (schema maps it to {role})")]
    MissingColumn {
        path: String,
        column: String,
        role: &'static str,
    },
    #[error("{path} row {row}: {message}")]
    BadRecord {
        path: String,
        row: usize,
        message: String,
    },
    #[error("unparseable age label {label:?}: expected a leading integer lower bound")]
    BadAgeLabel { label: String },
    #[error("duplicate age lower bound {lower} (labels {first:?} and {second:?})")]
    DuplicateAgeLower {
        lower: u32,
        first: String,
        second: String,
    },
    #[error("panel has {count} population labels, expected exactly two: {labels:?}")]
    PopulationCount { count: usize, labels: Vec<String> },
    #[error("incomplete panel: no record for (age {age:?}, year {year}, population {pop:?})")]
    IncompletePanel {
        age: String,
        year: i32,
        pop: String,
    },
    #[error("empty panel: {reason}")]
    EmptyPanel { reason: String },
    #[error("subset bounds outside panel: {reason}")]
    SubsetBounds { reason: String },
    #[error("cause-grouping config {path} line {line}: {message}")]
    CauseConfig {
        path: String,
        line: usize,
        message: String,
    },
    #[error("cause groups {first:?} and {second:?} overlap in {revision}: ranges {a} and {b}")]
    OverlappingCauses {
        revision: String,
        first: String,
        second: String,
        a: String,
        b: String,
    },

    // design / parameter handling
    #[error("index out of range: {what} {index} (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },
    #[error("linear predictor {value:.3} exceeds {limit} at cell (age {age}, year {year}); intensity would overflow")]
    PredictorOverflow {
        value: f64,
        limit: f64,
        age: usize,
        year: usize,
    },
    #[error("parameter vector has length {got}, layout requires {want}")]
    ParamLength { got: usize, want: usize },

    // distribution kernels
    #[error("{what} must be positive and finite, got {value}")]
    DomainPositive { what: &'static str, value: f64 },
    #[error("{what} must be nonnegative and finite, got {value}")]
    DomainNonNegative { what: &'static str, value: f64 },
    #[error("series for I_{order}({argument:.6e}) did not converge within {max_terms} terms")]
    BesselNoConvergence {
        order: u64,
        argument: f64,
        max_terms: usize,
    },

    // fitting
    #[error("model dimensions disagree: {reason}")]
    DimensionMismatch { reason: String },
    #[error("{model} model requires {needs} data")]
    DataKind {
        model: &'static str,
        needs: &'static str,
    },
    #[error(
        "EM log-likelihood decreased at iteration {iteration}: {previous:.12e} -> {current:.12e}"
    )]
    EmNotMonotone {
        iteration: usize,
        previous: f64,
        current: f64,
    },
    #[error("linear solve failed in {context}: system is not positive definite")]
    SolveFailed { context: &'static str },
    #[error("{context}: {reason}")]
    NotIdentified { context: String, reason: String },

    // forecasting
    #[error("random walk with drift needs at least 3 period observations, got {got}")]
    SeriesTooShort { got: usize },
    #[error("forecast horizon must be at least 1")]
    ZeroHorizon,

    // evaluation
    #[error("error series have different lengths: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("forecast-accuracy test needs at least 2 error pairs, got {got}")]
    DmTooShort { got: usize },
    #[error("empty {what}")]
    EmptyInput { what: &'static str },
    #[error("age group {group:?} names no panel age: {label:?}")]
    UnknownAgeLabel { group: String, label: String },

    // simulation oracles
    #[error("oracle summation did not converge: {what}")]
    OracleTruncation { what: String },
    #[error("simulation spec {path} line {line}: {message}")]
    SimSpec {
        path: String,
        line: usize,
        message: String,
    },

    // serialized artifacts
    #[error("{path} line {line}: {message}")]
    BadArtifact {
        path: String,
        line: usize,
        message: String,
    },
    #[error("artifact mismatch: {reason}")]
    ArtifactMismatch { reason: String },
}
