use cascade_core::data::Dataset;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auc::{auc, auc_to_score};
use crate::detection::{subsample, LearnerConfig};
use crate::features::TabularEncoding;
use crate::gbdt::{Gbdt, Loss};
use crate::MetricsError;

/// Distance encoding: numerical features min-max scaled on the union of real
/// train and test, missing cells imputed with the scaled train mean plus a
/// missing indicator, categorical features one-hot.
struct DistanceEncoding {
    /// Per numerical feature: (min, max, scaled train mean, has missing).
    num: Vec<(f64, f64, f64, bool)>,
    cards: Vec<usize>,
}

impl DistanceEncoding {
    fn fit(train: &Dataset, test: &Dataset) -> Self {
        let num = (0..train.schema.n_numerical())
            .map(|j| {
                let obs: Vec<f64> = train
                    .observed(j, &train.all_rows())
                    .into_iter()
                    .chain(test.observed(j, &test.all_rows()))
                    .collect();
                let lo = obs.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = obs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let (lo, hi) = if obs.is_empty() { (0.0, 1.0) } else { (lo, hi) };
                let scale = |x: f64| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 };
                let tr = train.observed(j, &train.all_rows());
                let mean = if tr.is_empty() {
                    0.0
                } else {
                    tr.iter().map(|&x| scale(x)).sum::<f64>() / tr.len() as f64
                };
                let any_missing = [train, test]
                    .iter()
                    .any(|d| (0..d.n_rows()).any(|r| d.missing.get(r, j)));
                (lo, hi, mean, any_missing)
            })
            .collect();
        Self {
            num,
            cards: train.schema.cardinalities(),
        }
    }

    fn transform(&self, ds: &Dataset) -> Vec<Vec<f64>> {
        (0..ds.n_rows())
            .map(|r| {
                let mut v = Vec::new();
                for (j, &(lo, hi, mean, flag)) in self.num.iter().enumerate() {
                    match ds.num(r, j) {
                        Some(x) => v.push(if hi > lo { (x - lo) / (hi - lo) } else { 0.0 }),
                        None => v.push(mean),
                    }
                    if flag {
                        v.push(if ds.missing.get(r, j) { 1.0 } else { 0.0 });
                    }
                }
                for (j, &k) in self.cards.iter().enumerate() {
                    let c = ds.cat_values.get(r, j) as usize;
                    v.extend((0..k).map(|i| if i == c { 1.0 } else { 0.0 }));
                }
                v
            })
            .collect()
    }
}

fn nearest_sq(x: &[f64], pool: &[Vec<f64>]) -> f64 {
    pool.iter()
        .map(|p| p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Share of synthetic rows whose nearest real neighbour lies in the training
/// set: 1 if closer to train, 0 if closer to test, 0.5 on an exact tie.
pub fn dcr_share(
    real_train: &Dataset,
    real_test: &Dataset,
    synth: &Dataset,
) -> Result<f64, MetricsError> {
    crate::check_schemas(real_train, synth)?;
    crate::check_schemas(real_train, real_test)?;
    if real_train.n_rows() == 0 || real_test.n_rows() == 0 || synth.n_rows() == 0 {
        return Err(MetricsError::TooFewRows {
            needed: 1,
            found: 0,
        });
    }
    let enc = DistanceEncoding::fit(real_train, real_test);
    let (tr, te, sy) = (
        enc.transform(real_train),
        enc.transform(real_test),
        enc.transform(synth),
    );
    let total: f64 = sy
        .par_iter()
        .map(|s| {
            let (a, b) = (nearest_sq(s, &tr), nearest_sq(s, &te));
            if a < b {
                1.0
            } else if a > b {
                0.0
            } else {
                0.5
            }
        })
        .sum();
    Ok(total / sy.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaResult {
    pub score: f64,
    pub repetition_aucs: Vec<f64>,
}

pub const MIA_REPETITIONS: usize = 5;

/// Membership inference: per repetition, a classifier learns held-out real
/// (75% of test) against synthetic rows, then must tell the remaining test
/// rows from an equal number of training rows. Each repetition's AUC goes
/// through `1 − (2 max(0.5, a) − 1)`; the scores are averaged.
pub fn mia_score(
    real_train: &Dataset,
    real_test: &Dataset,
    synth: &Dataset,
    seed: u64,
    cfg: &LearnerConfig,
) -> Result<MiaResult, MetricsError> {
    crate::check_schemas(real_train, synth)?;
    crate::check_schemas(real_train, real_test)?;
    if real_test.n_rows() < 8 {
        return Err(MetricsError::TooFewRows {
            needed: 8,
            found: real_test.n_rows(),
        });
    }
    if real_train.n_rows() == 0 || synth.n_rows() == 0 {
        return Err(MetricsError::EmptyTrainingSet);
    }
    let enc = TabularEncoding::fit(&[real_train, real_test, synth], None, cfg.high_cardinality);
    let (x_train, x_test, x_synth) = (
        enc.transform(real_train),
        enc.transform(real_test),
        enc.transform(synth),
    );
    let aucs: Vec<f64> = (0..MIA_REPETITIONS as u64)
        .into_par_iter()
        .map(|rep| -> Result<f64, MetricsError> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(rep));
            let mut order = real_test.all_rows();
            order.shuffle(&mut rng);
            let n_fit = real_test.n_rows() * 3 / 4;
            let (fit_rows, probe_rows) = order.split_at(n_fit);
            let synth_rows = subsample(synth.n_rows(), n_fit, &mut rng);
            let member_rows = subsample(real_train.n_rows(), probe_rows.len(), &mut rng);

            let x = x_test
                .select_rows(fit_rows)
                .vstack(&x_synth.select_rows(&synth_rows));
            let y: Vec<f64> = (0..x.n)
                .map(|i| if i < fit_rows.len() { 0.0 } else { 1.0 })
                .collect();
            let model = Gbdt::fit(&x, &y, Loss::Logistic, &cfg.gbdt)?;

            let probe = x_test
                .select_rows(probe_rows)
                .vstack(&x_train.select_rows(&member_rows));
            let labels: Vec<bool> = (0..probe.n).map(|i| i >= probe_rows.len()).collect();
            Ok(auc(&model.predict_raw(&probe), &labels))
        })
        .collect::<Result<_, _>>()?;
    let score = aucs.iter().map(|&a| auc_to_score(a)).sum::<f64>() / aucs.len() as f64;
    Ok(MiaResult {
        score,
        repetition_aucs: aucs,
    })
}
