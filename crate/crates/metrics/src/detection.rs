use cascade_core::data::Dataset;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auc::{auc, auc_to_score};
use crate::features::TabularEncoding;
use crate::gbdt::{Gbdt, GbdtConfig, Loss};
use crate::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub gbdt: GbdtConfig,
    pub folds: usize,
    /// Categorical columns with at least this many categories are
    /// frequency-encoded instead of one-hot encoded.
    pub high_cardinality: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gbdt: GbdtConfig::default(),
            folds: 5,
            high_cardinality: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub score: f64,
    /// Best mean validation AUC over boosting iterations.
    pub best_auc: f64,
    pub best_iteration: usize,
    pub rows_per_class: usize,
}

/// `min(n, rows)` rows drawn without replacement, in shuffled order.
pub(crate) fn subsample(n: usize, take: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.truncate(take.min(n));
    idx
}

/// Real-vs-synthetic classification: the best cross-validated AUC over
/// boosting iterations is turned into `1 − (2 max(0.5, Ā) − 1)`.
pub fn detection_score(
    real: &Dataset,
    synth: &Dataset,
    seed: u64,
    cfg: &LearnerConfig,
) -> Result<DetectionResult, MetricsError> {
    crate::check_schemas(real, synth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = real.n_rows().min(synth.n_rows());
    if n < cfg.folds.max(2) {
        return Err(MetricsError::TooFewRows {
            needed: cfg.folds.max(2),
            found: n,
        });
    }
    let real = real.subset(&subsample(real.n_rows(), n, &mut rng));
    let synth = synth.subset(&subsample(synth.n_rows(), n, &mut rng));
    let enc = TabularEncoding::fit(&[&real, &synth], None, cfg.high_cardinality);
    let x = enc.transform(&real).vstack(&enc.transform(&synth));
    let y: Vec<f64> = (0..2 * n).map(|i| if i < n { 0.0 } else { 1.0 }).collect();
    let mut order: Vec<usize> = (0..2 * n).collect();
    order.shuffle(&mut rng);
    let k = cfg.folds.max(2);
    let curves: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|fold| -> Result<Vec<f64>, MetricsError> {
            let (val, train): (Vec<usize>, Vec<usize>) = order
                .iter()
                .enumerate()
                .map(|(i, &r)| (i % k == fold, r))
                .fold((Vec::new(), Vec::new()), |(mut v, mut t), (is_val, r)| {
                    if is_val {
                        v.push(r)
                    } else {
                        t.push(r)
                    }
                    (v, t)
                });
            let yt: Vec<f64> = train.iter().map(|&r| y[r]).collect();
            let model = Gbdt::fit(&x.select_rows(&train), &yt, Loss::Logistic, &cfg.gbdt)?;
            let labels: Vec<bool> = val.iter().map(|&r| y[r] > 0.5).collect();
            let mut curve = Vec::with_capacity(model.n_trees());
            model.for_each_stage(&x.select_rows(&val), |_, raw| curve.push(auc(raw, &labels)));
            Ok(curve)
        })
        .collect::<Result<_, _>>()?;
    let iters = curves.iter().map(Vec::len).min().unwrap_or(0);
    let mut best_auc = 0.5;
    let mut best_iteration = 0;
    for i in 0..iters {
        let m = curves.iter().map(|c| c[i]).sum::<f64>() / k as f64;
        if m > best_auc {
            best_auc = m;
            best_iteration = i + 1;
        }
    }
    Ok(DetectionResult {
        score: auc_to_score(best_auc),
        best_auc,
        best_iteration,
        rows_per_class: n,
    })
}
