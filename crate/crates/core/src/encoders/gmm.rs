//! One-dimensional Gaussian mixture discretization fitted by EM.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Component, EncoderError, EncoderKind, FeatureEncoder};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmConfig {
    pub max_components: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Added to every component variance during EM.
    pub reg_var: f64,
    /// Stop increasing the component count after this many candidates in a row
    /// fail to improve the BIC.
    pub patience: usize,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            max_components: 30,
            max_iter: 200,
            tol: 1e-6,
            reg_var: 1e-6,
            patience: 2,
        }
    }
}

#[derive(Debug, Clone)]
struct Mixture {
    w: Vec<f64>,
    mu: Vec<f64>,
    var: Vec<f64>,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

impl Mixture {
    fn k(&self) -> usize {
        self.w.len()
    }

    fn log_joint(&self, k: usize, x: f64) -> f64 {
        let d = x - self.mu[k];
        self.w[k].ln() - 0.5 * (LN_2PI + self.var[k].ln() + d * d / self.var[k])
    }

    fn log_sum_exp(scores: &[f64]) -> f64 {
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
    }
}

/// k-means++ seeding of `k` centres.
fn kmeans_pp(xs: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centres = vec![xs[rng.random_range(0..xs.len())]];
    let mut d2: Vec<f64> = xs.iter().map(|&x| (x - centres[0]).powi(2)).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = xs.len() - 1;
        for (i, &d) in d2.iter().enumerate() {
            if u < d {
                pick = i;
                break;
            }
            u -= d;
        }
        let c = xs[pick];
        centres.push(c);
        for (d, &x) in d2.iter_mut().zip(xs) {
            *d = d.min((x - c).powi(2));
        }
    }
    centres
}

/// EM from k-means++ seeds. Returns the fitted mixture, its mean
/// log-likelihood, and whether it converged.
fn em(xs: &[f64], k: usize, cfg: &GmmConfig, rng: &mut ChaCha8Rng) -> (Mixture, f64, bool) {
    let centres = kmeans_pp(xs, k, rng);
    let k = centres.len();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n + cfg.reg_var;
    let mut mix = Mixture {
        w: vec![1.0 / k as f64; k],
        mu: centres,
        var: vec![var; k],
    };
    let mut resp = vec![0.0; xs.len() * k];
    let mut prev = f64::NEG_INFINITY;
    let mut ll = prev;
    for _ in 0..cfg.max_iter {
        // E step
        let mut total = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let row = &mut resp[i * k..(i + 1) * k];
            for (j, r) in row.iter_mut().enumerate() {
                *r = mix.log_joint(j, x);
            }
            let lse = Mixture::log_sum_exp(row);
            total += lse;
            for r in row.iter_mut() {
                *r = (*r - lse).exp();
            }
        }
        ll = total / n;
        // M step
        for j in 0..k {
            let nk: f64 = (0..xs.len()).map(|i| resp[i * k + j]).sum();
            if nk <= 1e-12 {
                mix.w[j] = 1e-300;
                continue;
            }
            let mu = (0..xs.len()).map(|i| resp[i * k + j] * xs[i]).sum::<f64>() / nk;
            let v = (0..xs.len())
                .map(|i| resp[i * k + j] * (xs[i] - mu).powi(2))
                .sum::<f64>()
                / nk;
            mix.w[j] = nk / n;
            mix.mu[j] = mu;
            mix.var[j] = v + cfg.reg_var;
        }
        if (ll - prev).abs() < cfg.tol {
            return (mix, ll, true);
        }
        prev = ll;
    }
    (mix, ll, false)
}

/// Fits the mixture, chooses the component count by BIC, prunes light
/// components, and converts the result into a hard clustering.
pub fn fit_gmm(values: &[f64], cfg: &GmmConfig, seed: u64) -> Result<FeatureEncoder, EncoderError> {
    if values.len() < 2 || values.iter().any(|v| !v.is_finite()) {
        return Err(EncoderError::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len() as f64;
    let mut best: Option<(Mixture, f64)> = None;
    let mut since_best = 0;
    for k in 1..=cfg.max_components.max(1) {
        let (mix, ll, converged) = em(values, k, cfg, &mut rng);
        if !converged {
            warn!("EM did not converge with {k} components; keeping the last iterate");
        }
        let k_eff = mix.k();
        let bic = -2.0 * n * ll + (3 * k_eff - 1) as f64 * n.ln();
        if best.as_ref().is_none_or(|(_, b)| bic < *b) {
            best = Some((mix, bic));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
        if k_eff < k {
            // fewer distinct seeds than requested: more components cannot help
            break;
        }
    }
    let (mut mix, _) = best.expect("at least one candidate was fitted");

    let cut = 1.0 / (10.0 * cfg.max_components.max(1) as f64);
    let keep: Vec<usize> = (0..mix.k()).filter(|&j| mix.w[j] >= cut).collect();
    let keep = if keep.is_empty() {
        vec![(0..mix.k())
            .max_by(|&a, &b| mix.w[a].total_cmp(&mix.w[b]))
            .unwrap()]
    } else {
        keep
    };
    mix = Mixture {
        w: keep.iter().map(|&j| mix.w[j]).collect(),
        mu: keep.iter().map(|&j| mix.mu[j]).collect(),
        var: keep.iter().map(|&j| mix.var[j]).collect(),
    };
    let wsum: f64 = mix.w.iter().sum();
    mix.w.iter_mut().for_each(|w| *w /= wsum);

    // hard assignment, ties to the lowest index
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); mix.k()];
    for &x in values {
        let mut arg = 0;
        let mut top = mix.log_joint(0, x);
        for j in 1..mix.k() {
            let s = mix.log_joint(j, x);
            if s > top {
                top = s;
                arg = j;
            }
        }
        members[arg].push(x);
    }
    let mut components: Vec<Component> = members
        .iter()
        .filter(|m| !m.is_empty())
        .map(|m| {
            let c = m.len() as f64;
            let mu = m.iter().sum::<f64>() / c;
            let var = m.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / c;
            Component {
                mu,
                sigma: var.sqrt(),
                weight: c / n,
                inflated: None,
            }
        })
        .collect();
    components.sort_by(|a, b| a.mu.total_cmp(&b.mu));
    Ok(FeatureEncoder {
        kind: EncoderKind::Gmm,
        components,
        thresholds: Vec::new(),
        has_missing: false,
    })
}
