//! Two-stage MNAR missingness simulation.
//!
//! Stage 1 (MAR part): a seeded subset of the non-target features drives a
//! random logistic model whose probabilities mask the remaining numerical
//! features. Stage 2 (MCAR part): a fixed share of the logistic inputs' cells is
//! masked uniformly at random, hiding some of the stage-1 drivers.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DataError, Dataset, Split};
use crate::Matrix;

#[derive(Debug, Clone)]
pub struct MnarOptions {
    pub p_miss: f64,
    pub seed: u64,
    /// Share of non-target features used as logistic inputs (rounded up, at least 1).
    pub input_fraction: f64,
    /// Share of the input features' cells masked completely at random.
    pub mcar_rate: f64,
    /// Explicit logistic inputs by column name; overrides the random draw.
    pub inputs: Option<Vec<String>>,
    /// Restricts which numerical columns stage 1 may mask.
    pub maskable: Option<Vec<String>>,
}

impl MnarOptions {
    pub fn new(p_miss: f64, seed: u64) -> Self {
        Self {
            p_miss,
            seed,
            input_fraction: 0.3,
            mcar_rate: 0.1,
            inputs: None,
            maskable: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MnarOutcome {
    pub dataset: Dataset,
    /// Schema indices of the logistic inputs.
    pub inputs: Vec<usize>,
    /// Schema indices of the numerical columns masked by stage 1.
    pub masked: Vec<usize>,
    /// Cells newly masked by stage 1, over the numerical block.
    pub stage1: Matrix<bool>,
}

impl MnarOutcome {
    /// Realized stage-1 missing rate over the stage-1 features.
    pub fn stage1_rate(&self) -> f64 {
        let n = self.stage1.rows();
        let hits = self.stage1.as_slice().iter().filter(|&&m| m).count();
        hits as f64 / (n * self.masked.len()).max(1) as f64
    }
}

const BIAS_RANGE: (f64, f64) = (-20.0, 20.0);
const BIAS_TOL: f64 = 1e-4;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Bias `b` with `mean(sigmoid(eta + b)) ≈ target`, found by bisection.
pub fn calibrate_bias(eta: &[f64], target: f64) -> f64 {
    let mean_prob = |b: f64| eta.iter().map(|&e| sigmoid(e + b)).sum::<f64>() / eta.len() as f64;
    let (mut lo, mut hi) = BIAS_RANGE;
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let m = mean_prob(mid);
        if (m - target).abs() < BIAS_TOL {
            break;
        }
        if m < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    mid
}

pub fn simulate_mnar(ds: &Dataset, p_miss: f64, seed: u64) -> Result<Dataset, DataError> {
    simulate_mnar_with(ds, &MnarOptions::new(p_miss, seed)).map(|o| o.dataset)
}

pub fn simulate_mnar_with(ds: &Dataset, opts: &MnarOptions) -> Result<MnarOutcome, DataError> {
    if !(0.0..1.0).contains(&opts.p_miss) {
        return Err(DataError::InvalidArgument(format!(
            "p_miss must lie in [0, 1), got {}",
            opts.p_miss
        )));
    }
    let schema = &ds.schema;
    let lookup = |name: &String| {
        schema
            .column_index(name)
            .ok_or_else(|| DataError::InvalidArgument(format!("unknown column '{name}'")))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let features: Vec<usize> = (0..schema.columns.len())
        .filter(|&c| !schema.columns[c].target)
        .collect();

    let inputs: Vec<usize> = match &opts.inputs {
        Some(names) => names.iter().map(lookup).collect::<Result<_, _>>()?,
        None => {
            let k = ((opts.input_fraction * features.len() as f64).ceil() as usize)
                .clamp(1, features.len());
            let mut picked: Vec<usize> = sample(&mut rng, features.len(), k)
                .into_iter()
                .map(|i| features[i])
                .collect();
            picked.sort_unstable();
            picked
        }
    };
    let allowed: Option<Vec<usize>> = match &opts.maskable {
        Some(names) => Some(names.iter().map(lookup).collect::<Result<_, _>>()?),
        None => None,
    };
    let masked: Vec<usize> = features
        .iter()
        .copied()
        .filter(|c| !schema.columns[*c].is_categorical() && !inputs.contains(c))
        .filter(|c| allowed.as_ref().is_none_or(|a| a.contains(c)))
        .collect();
    if masked.is_empty() {
        return Err(DataError::NoMaskableFeatures);
    }

    let n = ds.n_rows();
    let calib_rows: Vec<usize> = {
        let train = ds.rows_in(Split::Train);
        if train.is_empty() {
            ds.all_rows()
        } else {
            train
        }
    };
    let design = logistic_design(ds, &inputs, &calib_rows);

    let mut out = ds.clone();
    let mut stage1 = Matrix::filled(n, ds.num_values.cols(), false);
    for &col in &masked {
        let j = schema.block_position(col);
        let coef: Vec<f64> = (0..design.cols())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let mut eta: Vec<f64> = design
            .iter_rows()
            .map(|row| row.iter().zip(&coef).map(|(x, w)| x * w).sum())
            .collect();
        if eta.is_empty() {
            eta = vec![0.0; n];
        }
        let calib: Vec<f64> = calib_rows.iter().map(|&r| eta[r]).collect();
        let mean = calib.iter().sum::<f64>() / calib.len() as f64;
        let var = calib.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / calib.len() as f64;
        if var > 0.0 {
            let scale = var.sqrt().recip();
            eta.iter_mut().for_each(|e| *e *= scale);
        }
        let draws: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        if opts.p_miss == 0.0 {
            continue;
        }
        let calib: Vec<f64> = calib_rows.iter().map(|&r| eta[r]).collect();
        let bias = calibrate_bias(&calib, opts.p_miss);
        for r in 0..n {
            if draws[r] < sigmoid(eta[r] + bias) && !out.missing.get(r, j) {
                out.missing.set(r, j, true);
                out.num_values.set(r, j, f64::NAN);
                stage1.set(r, j, true);
            }
        }
    }

    for &col in &inputs {
        let hits = (opts.mcar_rate * n as f64).round() as usize;
        let rows = sample(&mut rng, n, hits.min(n)).into_vec();
        let pos = schema.block_position(col);
        if schema.columns[col].is_categorical() {
            let code = out.schema.ensure_missing_category(col);
            for r in rows {
                out.cat_values.set(r, pos, code);
            }
        } else {
            for r in rows {
                out.missing.set(r, pos, true);
                out.num_values.set(r, pos, f64::NAN);
            }
        }
    }

    Ok(MnarOutcome {
        dataset: out,
        inputs,
        masked,
        stage1,
    })
}

/// Standardized logistic design matrix: numerical inputs mean-imputed,
/// categorical inputs one-hot, every column scaled to unit variance over the
/// calibration rows. Constant columns are dropped.
fn logistic_design(ds: &Dataset, inputs: &[usize], calib_rows: &[usize]) -> Matrix<f64> {
    let n = ds.n_rows();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for &col in inputs {
        let pos = ds.schema.block_position(col);
        match ds.schema.columns[col].categories() {
            Some(cats) => {
                for code in 0..cats.len() as u32 {
                    columns.push(
                        (0..n)
                            .map(|r| f64::from(ds.cat_values.get(r, pos) == code))
                            .collect(),
                    );
                }
            }
            None => {
                let observed = ds.observed(pos, &ds.all_rows());
                let mean = if observed.is_empty() {
                    0.0
                } else {
                    observed.iter().sum::<f64>() / observed.len() as f64
                };
                columns.push((0..n).map(|r| ds.num(r, pos).unwrap_or(mean)).collect());
            }
        }
    }
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for mut c in columns {
        let m = calib_rows.iter().map(|&r| c[r]).sum::<f64>() / calib_rows.len() as f64;
        let v =
            calib_rows.iter().map(|&r| (c[r] - m).powi(2)).sum::<f64>() / calib_rows.len() as f64;
        if v <= 1e-300 {
            continue;
        }
        let s = v.sqrt();
        c.iter_mut().for_each(|x| *x = (*x - m) / s);
        kept.push(c);
    }
    let mut m = Matrix::zeros(n, kept.len());
    for (j, c) in kept.iter().enumerate() {
        for r in 0..n {
            m.set(r, j, c[r]);
        }
    }
    m
}
