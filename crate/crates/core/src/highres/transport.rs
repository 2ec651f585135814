//! Transport-cost comparison between the encoder-induced coupling and an
//! independent standard-normal source.
//!
//! Under the coupling `x_0 = μ_z + σ_z ε` the expected squared transport per
//! feature is `E[(x_1 − μ_z)²] + E[σ_z²]`; under the independent source it is
//! `E[x_1²] + 1`. On standardized features the coupled cost is smaller as soon
//! as both terms are bounded by one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::coupling_params;
use crate::data::{Dataset, Preprocessor, Split};
use crate::encoders::{EncoderKind, EncoderSet};
use crate::Matrix;

/// Wasserstein-1 distance between two empirical distributions on the line,
/// computed as the integral of the absolute CDF difference.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (x - prev);
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        prev = x;
    }
    total
}

/// Per-feature quantities behind the coupled-vs-independent bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTransport {
    pub kind: EncoderKind,
    pub n_components: usize,
    /// `E[(x_1 − μ_z)²]` over the observed training values.
    pub recon_mse: f64,
    /// `E[σ_z²]` with the floored source scale.
    pub mean_sigma2: f64,
    pub recon_ok: bool,
    pub sigma_ok: bool,
    pub cost_coupled: f64,
    pub cost_independent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportReport {
    pub n_mc: usize,
    /// Monte-Carlo `E‖x_1 − x_0‖²` under the coupling.
    pub cost_coupled: f64,
    /// Monte-Carlo `E‖x_1 − x_0‖²` with `x_0 ~ N(0, I)`.
    pub cost_independent: f64,
    /// Standard error of the paired difference `independent − coupled`.
    pub gap_std_error: f64,
    pub features: Vec<FeatureTransport>,
    /// `false` when any encoder is not a tree; the bound then has no guarantee.
    pub bound_guaranteed: bool,
}

impl TransportReport {
    /// Gap in units of its standard error.
    pub fn gap_z(&self) -> f64 {
        (self.cost_independent - self.cost_coupled) / self.gap_std_error
    }
}

/// Observed standardized values of the rows used for transport analysis:
/// training rows when tagged, otherwise all rows.
pub struct TransportData {
    pub values: Matrix<f64>,
    pub missing: Matrix<bool>,
}

impl TransportData {
    pub fn new(ds: &Dataset, pre: &Preprocessor) -> Self {
        let train = ds.rows_in(Split::Train);
        let rows = if train.is_empty() {
            ds.all_rows()
        } else {
            train
        };
        let sub = ds.subset(&rows);
        Self {
            values: pre.apply(&sub),
            missing: sub.missing,
        }
    }

    fn observed(&self, j: usize) -> Vec<f64> {
        (0..self.values.rows())
            .filter(|&r| !self.missing.get(r, j))
            .map(|r| self.values.get(r, j))
            .collect()
    }
}

/// Monte-Carlo transport costs of the coupled and independent sources.
///
/// Each draw picks a training row uniformly; every observed coordinate is
/// transported from `μ_z + σ_z ε` (coupled) and from `ε'` (independent).
/// Missing coordinates carry no continuous value and are skipped.
pub fn transport_cost_gap(
    data: &TransportData,
    encoders: &EncoderSet,
    n_mc: usize,
    seed: u64,
) -> TransportReport {
    let n = data.values.rows();
    let k = encoders.n_numerical();
    assert!(
        n > 0 && n_mc > 1,
        "transport analysis needs rows and at least two draws"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut feat_c = vec![0.0; k];
    let mut feat_i = vec![0.0; k];
    let (mut sum_d, mut sum_d2, mut sum_c, mut sum_i) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..n_mc {
        let r = rng.random_range(0..n);
        let (mut c, mut ind) = (0.0, 0.0);
        for (j, enc) in encoders.encoders.iter().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            let e2: f64 = rng.sample(StandardNormal);
            if data.missing.get(r, j) {
                continue;
            }
            let x1 = data.values.get(r, j);
            let (mu, sigma) = coupling_params(enc, enc.encode_value(x1))
                .expect("observed values encode to a component");
            let dc = (x1 - mu - sigma * e).powi(2);
            let di = (x1 - e2).powi(2);
            feat_c[j] += dc;
            feat_i[j] += di;
            c += dc;
            ind += di;
        }
        let d = ind - c;
        sum_c += c;
        sum_i += ind;
        sum_d += d;
        sum_d2 += d * d;
    }
    let m = n_mc as f64;
    let var_d = (sum_d2 - sum_d * sum_d / m) / (m - 1.0);
    let features = encoders
        .encoders
        .iter()
        .enumerate()
        .map(|(j, enc)| {
            let xs = data.observed(j);
            let cnt = xs.len().max(1) as f64;
            let (mut recon, mut s2) = (0.0, 0.0);
            for &x in &xs {
                let (mu, sigma) = coupling_params(enc, enc.encode_value(x))
                    .expect("observed values encode to a component");
                recon += (x - mu).powi(2);
                s2 += sigma * sigma;
            }
            let (recon_mse, mean_sigma2) = (recon / cnt, s2 / cnt);
            FeatureTransport {
                kind: enc.kind,
                n_components: enc.components.len(),
                recon_mse,
                mean_sigma2,
                recon_ok: recon_mse <= 1.0 + 1e-9,
                sigma_ok: mean_sigma2 <= 1.0 + 1e-9,
                cost_coupled: feat_c[j] / m,
                cost_independent: feat_i[j] / m,
            }
        })
        .collect();
    TransportReport {
        n_mc,
        cost_coupled: sum_c / m,
        cost_independent: sum_i / m,
        gap_std_error: (var_d / m).sqrt(),
        features,
        bound_guaranteed: encoders.encoders.iter().all(|e| e.kind == EncoderKind::Dt),
    }
}

/// Distance of the intermediate marginal `p_t` to the data for one feature and
/// one time, under both sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WdPoint {
    pub t: f64,
    pub feature: usize,
    pub wd_coupled: f64,
    pub wd_independent: f64,
}

/// Wasserstein-1 of `x_t = t x_1 + (1 − t) x_0` to the observed data at each
/// time, on the linear path, for the coupled and the independent source.
pub fn wd_trace(
    data: &TransportData,
    encoders: &EncoderSet,
    times: &[f64],
    n: usize,
    seed: u64,
) -> Vec<WdPoint> {
    let rows = data.values.rows();
    let mut out = Vec::new();
    for (j, enc) in encoders.encoders.iter().enumerate() {
        let reference = data.observed(j);
        if reference.is_empty() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(j as u64));
        let draws: Vec<(f64, f64, f64)> = (0..n)
            .filter_map(|_| {
                let r = rng.random_range(0..rows);
                let e: f64 = rng.sample(StandardNormal);
                let e2: f64 = rng.sample(StandardNormal);
                if data.missing.get(r, j) {
                    return None;
                }
                let x1 = data.values.get(r, j);
                let (mu, sigma) = coupling_params(enc, enc.encode_value(x1))?;
                Some((x1, mu + sigma * e, e2))
            })
            .collect();
        for &t in times {
            let coupled: Vec<f64> = draws.iter().map(|d| t * d.0 + (1.0 - t) * d.1).collect();
            let indep: Vec<f64> = draws.iter().map(|d| t * d.0 + (1.0 - t) * d.2).collect();
            out.push(WdPoint {
                t,
                feature: j,
                wd_coupled: wasserstein1(&coupled, &reference),
                wd_independent: wasserstein1(&indep, &reference),
            });
        }
    }
    out
}
