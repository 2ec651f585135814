//! Fidelity, utility and privacy scores for synthetic tabular data.
//!
//! Every score takes a real and a synthetic [`Dataset`] sharing one schema.
//! Learner-based scores use the small histogram GBDT in [`gbdt`].

use cascade_core::data::Dataset;
use thiserror::Error;

pub mod auc;
pub mod bivariate;
pub mod detection;
pub mod features;
pub mod gbdt;
pub mod mle;
pub mod privacy;
pub mod report;
pub mod univariate;

pub use auc::{auc, auc_to_score};
pub use bivariate::{pearson, trend_scores, PairKind, PairScore, SkippedPair, TrendScores};
pub use detection::{detection_score, DetectionResult, LearnerConfig};
pub use gbdt::{FeatureMatrix, Gbdt, GbdtConfig, Loss};
pub use mle::{mle_score, MleResult, MleTask};
pub use privacy::{dcr_share, mia_score, MiaResult};
pub use report::{evaluate, EvaluateConfig, MetricReport};
pub use univariate::{jsd, ks_statistic, shape_scores, tvd, FeatureShape, ShapeScores};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("schemas differ: {0}")]
    SchemaMismatch(String),
    #[error("feature `{0}` has no observed values after dropping missing cells")]
    EmptyAfterMissingDrop(String),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("schema has no target column")]
    NoTarget,
    #[error("target `{0}` takes a single class in the training data")]
    SingleClassTarget(String),
    #[error("need at least {needed} rows, found {found}")]
    TooFewRows { needed: usize, found: usize },
}

/// Real and synthetic tables must agree on column names, order and types,
/// including the category lists.
pub fn check_schemas(real: &Dataset, synth: &Dataset) -> Result<(), MetricsError> {
    let (a, b) = (&real.schema.columns, &synth.schema.columns);
    if a.len() != b.len() {
        return Err(MetricsError::SchemaMismatch(format!(
            "{} vs {} columns",
            a.len(),
            b.len()
        )));
    }
    for (x, y) in a.iter().zip(b) {
        if x.name != y.name || x.kind != y.kind {
            return Err(MetricsError::SchemaMismatch(format!(
                "column `{}` vs `{}`",
                x.name, y.name
            )));
        }
    }
    Ok(())
}
