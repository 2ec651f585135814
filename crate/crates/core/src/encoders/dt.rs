//! Greedy maximum-likelihood decision-tree discretization of one feature.

use super::{Component, EncoderError, EncoderKind, FeatureEncoder};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtConfig {
    pub max_depth: usize,
    /// Minimum number of values in each child of a split.
    pub min_leaf: usize,
    pub min_gain: f64,
    /// Upper bound on candidate thresholds evaluated per node.
    pub max_candidates: usize,
    /// Variance floor inside the split likelihood.
    pub var_floor: f64,
}

impl Default for DtConfig {
    fn default() -> Self {
        Self {
            max_depth: 8,
            min_leaf: 32,
            min_gain: 1e-6,
            max_candidates: 255,
            var_floor: 1e-30,
        }
    }
}

struct Prefix {
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl Prefix {
    /// Prefix sums of `x − mean` and its square; centring limits cancellation.
    fn new(sorted: &[f64]) -> Self {
        let shift = sorted.iter().sum::<f64>() / sorted.len() as f64;
        let mut s1 = Vec::with_capacity(sorted.len() + 1);
        let mut s2 = Vec::with_capacity(sorted.len() + 1);
        let (mut a, mut b) = (0.0, 0.0);
        s1.push(0.0);
        s2.push(0.0);
        for &x in sorted {
            let d = x - shift;
            a += d;
            b += d * d;
            s1.push(a);
            s2.push(b);
        }
        Self { s1, s2 }
    }

    /// Gaussian log-likelihood at the MLE of the values in `[lo, hi)`. A range
    /// of tied values has variance exactly zero before the floor.
    fn loglik(&self, sorted: &[f64], lo: usize, hi: usize, floor: f64) -> f64 {
        let n = (hi - lo) as f64;
        let var = if sorted[lo] == sorted[hi - 1] {
            0.0
        } else {
            let m = (self.s1[hi] - self.s1[lo]) / n;
            (self.s2[hi] - self.s2[lo]) / n - m * m
        };
        -0.5 * n * ((2.0 * std::f64::consts::PI * var.max(floor)).ln() + 1.0)
    }
}

/// Lengths of the runs of tied values that end at and start at each position.
struct Runs {
    ends_at: Vec<usize>,
    starts_at: Vec<usize>,
}

impl Runs {
    fn new(sorted: &[f64]) -> Self {
        let n = sorted.len();
        let mut ends_at = vec![1; n];
        let mut starts_at = vec![1; n];
        for i in 1..n {
            if sorted[i] == sorted[i - 1] {
                ends_at[i] = ends_at[i - 1] + 1;
            }
        }
        for i in (0..n.saturating_sub(1)).rev() {
            if sorted[i] == sorted[i + 1] {
                starts_at[i] = starts_at[i + 1] + 1;
            }
        }
        Self { ends_at, starts_at }
    }
}

/// Admissible split positions `i` in `(lo, hi)`: `sorted[i − 1] < sorted[i]`
/// and both children hold at least `min_leaf` values, unless `i` is an edge of
/// a run of at least `min_leaf` tied values, which may always be cut off.
/// Ordinary positions are thinned to about `cap`, spaced by quantile, keeping
/// both neighbours of every quantile target.
fn candidates(
    sorted: &[f64],
    runs: &Runs,
    lo: usize,
    hi: usize,
    min_leaf: usize,
    cap: usize,
) -> Vec<usize> {
    let min_leaf = min_leaf.max(1);
    let mut ordinary = Vec::new();
    let mut edges = Vec::new();
    for i in lo + 1..hi {
        if sorted[i - 1] == sorted[i] {
            continue;
        }
        if runs.ends_at[i - 1] >= min_leaf || runs.starts_at[i] >= min_leaf {
            edges.push(i);
        } else if i - lo >= min_leaf && hi - i >= min_leaf {
            ordinary.push(i);
        }
    }
    if ordinary.len() > cap {
        let mut picked = Vec::with_capacity(2 * cap);
        let span = (hi - lo) as f64;
        for j in 1..=cap {
            let target = lo as f64 + span * j as f64 / (cap + 1) as f64;
            let p = ordinary.partition_point(|&i| (i as f64) < target);
            if p < ordinary.len() {
                picked.push(ordinary[p]);
            }
            if p > 0 {
                picked.push(ordinary[p - 1]);
            }
        }
        ordinary = picked;
    }
    ordinary.extend(edges);
    ordinary.sort_unstable();
    ordinary.dedup();
    ordinary
}

#[allow(clippy::too_many_arguments)]
fn grow(
    sorted: &[f64],
    prefix: &Prefix,
    runs: &Runs,
    lo: usize,
    hi: usize,
    depth: usize,
    cfg: &DtConfig,
    leaves: &mut Vec<(usize, usize)>,
) {
    if depth < cfg.max_depth && hi - lo >= cfg.min_leaf.max(2) {
        let parent = prefix.loglik(sorted, lo, hi, cfg.var_floor);
        let mut best: Option<(usize, f64)> = None;
        for i in candidates(sorted, runs, lo, hi, cfg.min_leaf, cfg.max_candidates) {
            let gain = prefix.loglik(sorted, lo, i, cfg.var_floor)
                + prefix.loglik(sorted, i, hi, cfg.var_floor)
                - parent;
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        if let Some((i, gain)) = best {
            if gain >= cfg.min_gain {
                grow(sorted, prefix, runs, lo, i, depth + 1, cfg, leaves);
                grow(sorted, prefix, runs, i, hi, depth + 1, cfg, leaves);
                return;
            }
        }
    }
    leaves.push((lo, hi));
}

/// Fits the tree on the observed values of one feature. Leaves become
/// components ordered from left to right; a value `x < τ` goes left.
pub fn fit_dt(values: &[f64], cfg: &DtConfig) -> Result<FeatureEncoder, EncoderError> {
    if values.len() < 2 || values.iter().any(|v| !v.is_finite()) {
        return Err(EncoderError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let prefix = Prefix::new(&sorted);
    let runs = Runs::new(&sorted);
    let mut leaves = Vec::new();
    grow(
        &sorted,
        &prefix,
        &runs,
        0,
        sorted.len(),
        0,
        cfg,
        &mut leaves,
    );
    let n = sorted.len() as f64;
    let components = leaves
        .iter()
        .map(|&(lo, hi)| {
            let part = &sorted[lo..hi];
            let m = part.len() as f64;
            let mu = part.iter().sum::<f64>() / m;
            let var = part.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / m;
            Component {
                mu,
                sigma: var.sqrt(),
                weight: m / n,
                inflated: None,
            }
        })
        .collect();
    let thresholds = leaves[1..]
        .iter()
        .map(|&(lo, _)| 0.5 * (sorted[lo - 1] + sorted[lo]))
        .collect();
    Ok(FeatureEncoder {
        kind: EncoderKind::Dt,
        components,
        thresholds,
        has_missing: false,
    })
}
