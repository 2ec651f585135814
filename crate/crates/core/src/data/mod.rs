//! Schema, CSV ingestion, preprocessing, splitting and missingness simulation.

mod dataset;
pub mod mnar;
mod preprocess;
mod schema;

pub use dataset::{load_dataset, read_dataset, split_dataset, split_sizes, Dataset, Split};
pub use mnar::{simulate_mnar, simulate_mnar_with, MnarOptions, MnarOutcome};
pub use preprocess::{fit_preprocessor, plotting_position, Preprocessor, QuantileStandardizer};
pub use schema::{Column, ColumnKind, FeatureSchema, MISSING_LABEL};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("csv header {found:?} does not match schema columns {expected:?}")]
    HeaderMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("row {row}: expected {expected} fields, found {found}")]
    ArityMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: unknown category '{label}' in column '{column}'")]
    UnknownCategory {
        row: usize,
        column: String,
        label: String,
    },
    #[error("row {row}: non-numeric value in numerical column '{column}'")]
    NonNumericValue { row: usize, column: String },
    #[error("numerical feature '{0}' is constant on the training rows")]
    ConstantFeature(String),
    #[error("no numerical non-target feature is left to mask")]
    NoMaskableFeatures,
    #[error("need at least {needed} rows, found {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("matrix shapes do not match the schema")]
    ShapeMismatch,
    #[error("{0}")]
    InvalidArgument(String),
}
