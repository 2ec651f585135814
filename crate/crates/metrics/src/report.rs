use std::io::Write;

use cascade_core::data::Dataset;
use serde::{Deserialize, Serialize};

use crate::bivariate::{trend_scores, PairScore, SkippedPair};
use crate::detection::{detection_score, DetectionResult, LearnerConfig};
use crate::mle::{mle_score, MleResult};
use crate::privacy::{dcr_share, mia_score, MiaResult};
use crate::univariate::{shape_scores, FeatureShape};
use crate::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    pub learner: LearnerConfig,
    pub detection: bool,
    pub mle: bool,
    pub privacy: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            learner: LearnerConfig::default(),
            detection: true,
            mle: true,
            privacy: true,
        }
    }
}

/// All scores of one real/synthetic comparison. Scores that do not apply
/// (no target column, no numerical feature, disabled in the config) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub shape: f64,
    pub shape_cat: Option<f64>,
    pub shape_num: Option<f64>,
    pub wd_num: Option<f64>,
    pub jsd_cat: Option<f64>,
    pub trend: f64,
    pub trend_mixed: Option<f64>,
    pub detection: Option<f64>,
    pub mle: Option<f64>,
    pub dcr_share: Option<f64>,
    pub mia: Option<f64>,
    pub features: Vec<FeatureShape>,
    pub pairs: Vec<PairScore>,
    pub skipped_pairs: Vec<SkippedPair>,
    pub detection_detail: Option<DetectionResult>,
    pub mle_detail: Option<MleResult>,
    pub mia_detail: Option<MiaResult>,
}

pub const SCORE_COLUMNS: [&str; 11] = [
    "shape",
    "shape_cat",
    "shape_num",
    "wd_num",
    "jsd_cat",
    "trend",
    "trend_mixed",
    "detection",
    "mle",
    "dcr_share",
    "mia",
];

impl MetricReport {
    pub fn scores(&self) -> [Option<f64>; 11] {
        [
            Some(self.shape),
            self.shape_cat,
            self.shape_num,
            self.wd_num,
            self.jsd_cat,
            Some(self.trend),
            self.trend_mixed,
            self.detection,
            self.mle,
            self.dcr_share,
            self.mia,
        ]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One header line and one value line; absent scores are empty cells.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(SCORE_COLUMNS)?;
        out.write_record(
            self.scores()
                .iter()
                .map(|s| s.map(|v| v.to_string()).unwrap_or_default()),
        )?;
        out.flush()?;
        Ok(())
    }

    /// Per-feature marginal breakdown: name, type, score, distance.
    pub fn write_shape_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["feature", "type", "score", "distance"])?;
        for f in &self.features {
            let kind = if f.categorical {
                "categorical"
            } else {
                "numerical"
            };
            out.write_record([
                f.name.as_str(),
                kind,
                &f.score.to_string(),
                &f.distance.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Full evaluation. Marginal, pairwise and detection scores compare against
/// `real_train`; MLE and privacy scores also use `real_test`.
pub fn evaluate(
    real_train: &Dataset,
    real_test: &Dataset,
    synth: &Dataset,
    seed: u64,
    cfg: &EvaluateConfig,
) -> Result<MetricReport, MetricsError> {
    crate::check_schemas(real_train, synth)?;
    crate::check_schemas(real_train, real_test)?;
    let shape = shape_scores(real_train, synth)?;
    let trend = trend_scores(real_train, synth)?;
    let detection = cfg
        .detection
        .then(|| detection_score(real_train, synth, seed, &cfg.learner))
        .transpose()?;
    let mle = match cfg.mle && real_train.schema.target_column().is_some() {
        true => Some(mle_score(real_train, real_test, synth, &cfg.learner)?),
        false => None,
    };
    let (dcr, mia) = if cfg.privacy {
        (
            Some(dcr_share(real_train, real_test, synth)?),
            Some(mia_score(real_train, real_test, synth, seed, &cfg.learner)?),
        )
    } else {
        (None, None)
    };
    Ok(MetricReport {
        shape: shape.shape,
        shape_cat: shape.shape_cat,
        shape_num: shape.shape_num,
        wd_num: shape.wd_num,
        jsd_cat: shape.jsd_cat,
        trend: trend.trend,
        trend_mixed: trend.trend_mixed,
        detection: detection.as_ref().map(|d| d.score),
        mle: mle.as_ref().map(|m| m.score),
        dcr_share: dcr,
        mia: mia.as_ref().map(|m| m.score),
        features: shape.features,
        pairs: trend.pairs,
        skipped_pairs: trend.skipped,
        detection_detail: detection,
        mle_detail: mle,
        mia_detail: mia,
    })
}
