//! Joint training and ancestral sampling of the two-stage model.

use std::time::Instant;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, FeatureSchema, Preprocessor, Split};
use crate::encoders::{EncoderConfig, EncoderError, EncoderSet};
use crate::highres::{assemble_mixed, FlowBatch, HighResConfig, HighResModel, SourceTable};
use crate::lowres::{LowResConfig, LowResModel};
use crate::nn::{Adam, AdamConfig, NnError};
use crate::{Matrix, Scalar};

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("encoder: {0}")]
    Encoder(#[from] EncoderError),
    #[error("network: {0}")]
    Nn(#[from] NnError),
    #[error("dataset has no numerical feature to refine")]
    NoNumericalFeatures,
    #[error("dataset has no training rows")]
    NoTrainingRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Stop early once this many seconds have elapsed.
    pub max_seconds: Option<f64>,
    pub log_every: usize,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from `lr` at the first step down to 0 after the last.
    #[default]
    Cosine,
}

impl TrainConfig {
    /// Learning rate used at 1-based step `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let frac = (step.saturating_sub(1)) as f64 / self.steps.max(1) as f64;
                self.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 256,
            lr: 1e-3,
            seed: 0,
            max_seconds: None,
            log_every: 50,
            lr_schedule: LrSchedule::Cosine,
        }
    }
}

/// Losses averaged over one logging window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub low_loss: f64,
    pub high_loss: f64,
    pub elapsed_s: f64,
}

/// Everything needed to generate rows: the fitted transforms and both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade<T> {
    pub schema: FeatureSchema,
    pub preprocessor: Preprocessor,
    pub encoders: EncoderSet,
    pub lowres: LowResModel<T>,
    pub highres: HighResModel<T>,
}

/// Teacher-forced training rows: low-resolution rows, targets and sources.
struct TrainingTable<T> {
    low: Matrix<u32>,
    x1: Matrix<T>,
    source: SourceTable<T>,
}

fn training_table<T: Scalar>(
    ds: &Dataset,
    pre: &Matrix<f64>,
    encoders: &EncoderSet,
    rows: &[usize],
) -> TrainingTable<T> {
    let sub = ds.subset(rows);
    let pre = pre.select_rows(rows);
    let low = encoders.encode_dataset(&sub, &pre);
    let source = SourceTable::from_low_res(encoders, &low);
    let x1 = Matrix::from_vec(
        pre.rows(),
        pre.cols(),
        pre.as_slice()
            .iter()
            .zip(source.mask.as_slice())
            .map(|(&v, &m)| if m { T::zero() } else { T::of(v) })
            .collect(),
    )
    .expect("same shape as the preprocessed block");
    TrainingTable { low, x1, source }
}

/// Fits preprocessing and encoders on the training rows, then trains both
/// networks jointly: every step draws one batch that feeds the low-resolution
/// loss and the flow-matching loss, each with its own optimizer.
pub fn fit_cascade<T: Scalar>(
    ds: &Dataset,
    enc_cfg: &EncoderConfig,
    low_cfg: &LowResConfig,
    high_cfg: &HighResConfig,
    train: &TrainConfig,
) -> Result<(Cascade<T>, Vec<LossRecord>), CascadeError> {
    if ds.schema.n_numerical() == 0 {
        return Err(CascadeError::NoNumericalFeatures);
    }
    let rows = ds.rows_in(Split::Train);
    if rows.is_empty() {
        return Err(CascadeError::NoTrainingRows);
    }
    let preprocessor = Preprocessor::fit(ds)?;
    let pre = preprocessor.apply(ds);
    let encoders = EncoderSet::fit(ds, &pre, enc_cfg)?;
    info!(
        "encoders fitted: categories per feature {:?}",
        encoders
            .encoders
            .iter()
            .map(|e| e.n_categories())
            .collect::<Vec<_>>()
    );
    let table = training_table::<T>(ds, &pre, &encoders, &rows);

    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let cards = encoders.low_res_cardinalities();
    let mut lowres = LowResModel::<T>::new(&cards, low_cfg.clone(), &mut rng);
    let mut highres = HighResModel::<T>::new(
        &cards,
        encoders.n_numerical(),
        encoders.hash(),
        high_cfg.clone(),
        &mut rng,
    );
    let adam_cfg = AdamConfig::with_lr(train.lr);
    let mut opt_low = Adam::new(adam_cfg, lowres.n_params());
    let mut opt_high = Adam::new(adam_cfg, highres.n_params());

    let n = table.low.rows();
    let (j_cols, k) = (cards.len(), encoders.n_numerical());
    let noise_width = j_cols * low_cfg.embed_dim;
    let b = train.batch.max(1);
    let mut log = Vec::new();
    let (mut acc_low, mut acc_high, mut acc_n) = (0.0, 0.0, 0usize);
    let started = Instant::now();
    let mut idx = vec![0usize; b];
    let mut low_b = vec![0u32; b * j_cols];
    let (mut x1_b, mut mu_b, mut sigma_b) = (
        vec![T::zero(); b * k],
        vec![T::zero(); b * k],
        vec![T::zero(); b * k],
    );
    let mut mask_b = vec![false; b * k];
    for step in 1..=train.steps {
        let lr = train.lr_at(step);
        opt_low.config.lr = lr;
        opt_high.config.lr = lr;
        for i in idx.iter_mut() {
            *i = rng.random_range(0..n);
        }
        for (s, &r) in idx.iter().enumerate() {
            low_b[s * j_cols..(s + 1) * j_cols].copy_from_slice(table.low.row(r));
            x1_b[s * k..(s + 1) * k].copy_from_slice(table.x1.row(r));
            mu_b[s * k..(s + 1) * k].copy_from_slice(table.source.mu.row(r));
            sigma_b[s * k..(s + 1) * k].copy_from_slice(table.source.sigma.row(r));
            mask_b[s * k..(s + 1) * k].copy_from_slice(table.source.mask.row(r));
        }
        let t_low: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
        let noise: Vec<T> = (0..b * noise_width)
            .map(|_| T::of(rng.sample(StandardNormal)))
            .collect();
        let t_high: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
        let eps: Vec<T> = (0..b * k)
            .map(|_| T::of(rng.sample(StandardNormal)))
            .collect();

        let mut g_low = lowres.zero_grads();
        let l_low = lowres.loss_with_grads(&low_b, &t_low, &noise, Some(&mut g_low))?;
        opt_low.step(&mut [
            (&mut lowres.trunk.params_mut()[..], &g_low.trunk[..]),
            (&mut lowres.embeddings[..], &g_low.embeddings[..]),
        ])?;
        lowres.normalize_embeddings();

        let mut g_high = highres.zero_grads();
        let batch = FlowBatch {
            low: &low_b,
            x1: &x1_b,
            mu: &mu_b,
            sigma: &sigma_b,
            mask: &mask_b,
            t: &t_high,
            eps: &eps,
        };
        let l_high = highres.loss_with_grads(&batch, Some(&mut g_high))?;
        opt_high.step(&mut [
            (&mut highres.cond[..], &g_high.cond[..]),
            (&mut highres.schedule.params_mut()[..], &g_high.schedule[..]),
            (&mut highres.field.params_mut()[..], &g_high.field[..]),
        ])?;

        acc_low += l_low.to_f64_lossy();
        acc_high += l_high.to_f64_lossy();
        acc_n += 1;
        let elapsed = started.elapsed().as_secs_f64();
        let out_of_time = train.max_seconds.is_some_and(|cap| elapsed >= cap);
        if step % train.log_every.max(1) == 0 || step == train.steps || out_of_time {
            let rec = LossRecord {
                step,
                low_loss: acc_low / acc_n as f64,
                high_loss: acc_high / acc_n as f64,
                elapsed_s: elapsed,
            };
            info!(
                "step {step}: low {:.4} high {:.4} ({elapsed:.1}s)",
                rec.low_loss, rec.high_loss
            );
            log.push(rec);
            (acc_low, acc_high, acc_n) = (0.0, 0.0, 0);
        }
        if out_of_time {
            info!("wall-clock cap reached after {step} steps");
            break;
        }
    }
    let cascade = Cascade {
        schema: ds.schema.clone(),
        preprocessor,
        encoders,
        lowres,
        highres,
    };
    Ok((cascade, log))
}

/// Seeds of the two sampling stages, derived from one user seed.
fn stage_seeds(seed: u64) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (rng.random(), rng.random())
}

impl<T: Scalar> Cascade<T> {
    /// Numerical block for given low-resolution rows (modelling scale), masked
    /// coordinates at 0.
    pub fn refine(&self, low: &Matrix<u32>, steps: usize, seed: u64) -> Matrix<T> {
        let source = SourceTable::from_low_res(&self.encoders, low);
        self.highres.sample(low, &source, steps, seed)
    }

    /// Turns low-resolution rows and their refined numerical block into a
    /// dataset on the original scale.
    pub fn assemble(&self, low: &Matrix<u32>, x: &Matrix<T>) -> Dataset {
        let n = low.rows();
        let (kc, kn) = (self.encoders.n_categorical(), self.encoders.n_numerical());
        let mut cat = Matrix::zeros(n, kc);
        let mut num = Matrix::zeros(n, kn);
        let mut missing = Matrix::filled(n, kn, false);
        let mut row = vec![0.0; kn];
        for r in 0..n {
            cat.row_mut(r).copy_from_slice(&low.row(r)[..kc]);
            for (v, &xv) in row.iter_mut().zip(x.row(r)) {
                *v = xv.to_f64_lossy();
            }
            for (j, v) in assemble_mixed(low.row(r), &row, &self.encoders, &self.preprocessor)
                .into_iter()
                .enumerate()
            {
                match v {
                    Some(v) => num.set(r, j, v),
                    None => missing.set(r, j, true),
                }
            }
        }
        Dataset::new(self.schema.clone(), cat, num, missing)
            .expect("generated blocks match the schema")
    }

    /// Ancestral sampling of `n` rows.
    pub fn sample(&self, n: usize, steps: usize, seed: u64) -> Dataset {
        let (s_low, s_high) = stage_seeds(seed);
        let low = self.lowres.sample(n, steps, s_low);
        let x = self.refine(&low, steps, s_high);
        self.assemble(&low, &x)
    }
}
