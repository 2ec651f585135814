use cascade_core::data::Dataset;
use cascade_core::highres::transport::wasserstein1;
use serde::{Deserialize, Serialize};

use crate::MetricsError;

/// Two-sample Kolmogorov-Smirnov statistic: the largest gap between the two
/// empirical CDFs over the pooled sample.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    // once one sample is exhausted its CDF is 1; the gap only shrinks from here
    best.max((i as f64 / na - j as f64 / nb).abs())
}

/// Relative frequencies of codes `0..k`.
pub fn frequencies(codes: &[u32], k: usize) -> Vec<f64> {
    let mut f = vec![0.0; k];
    for &c in codes {
        f[c as usize] += 1.0;
    }
    let n = codes.len().max(1) as f64;
    f.iter_mut().for_each(|v| *v /= n);
    f
}

/// Total variation distance `½ Σ |p − q|`.
pub fn tvd(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Jensen-Shannon divergence in nats, with `0 ln 0 = 0`.
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let kl_to_mid = |x: &[f64]| -> f64 {
        x.iter()
            .zip(p.iter().zip(q))
            .filter(|(&xi, _)| xi > 0.0)
            .map(|(&xi, (&pi, &qi))| xi * (xi / (0.5 * (pi + qi))).ln())
            .sum()
    };
    0.5 * kl_to_mid(p) + 0.5 * kl_to_mid(q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureShape {
    pub name: String,
    pub categorical: bool,
    /// `1 − KS` or `1 − TVD`.
    pub score: f64,
    /// Wasserstein-1 on min-max scaled values or Jensen-Shannon divergence.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeScores {
    pub shape: f64,
    pub shape_cat: Option<f64>,
    pub shape_num: Option<f64>,
    pub wd_num: Option<f64>,
    pub jsd_cat: Option<f64>,
    pub features: Vec<FeatureShape>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Observed values of a numerical column (block index `j`).
pub(crate) fn observed(ds: &Dataset, j: usize) -> Vec<f64> {
    (0..ds.n_rows()).filter_map(|r| ds.num(r, j)).collect()
}

/// Marginal fidelity of every column.
pub fn shape_scores(real: &Dataset, synth: &Dataset) -> Result<ShapeScores, MetricsError> {
    crate::check_schemas(real, synth)?;
    let schema = &real.schema;
    let mut features = Vec::new();
    for (c, col) in schema.columns.iter().enumerate() {
        let j = schema.block_position(c);
        if let Some(cats) = col.categories() {
            let p = frequencies(&real.cat_values.column(j), cats.len());
            let q = frequencies(&synth.cat_values.column(j), cats.len());
            features.push(FeatureShape {
                name: col.name.clone(),
                categorical: true,
                score: 1.0 - tvd(&p, &q),
                distance: jsd(&p, &q),
            });
        } else {
            let a = observed(real, j);
            let b = observed(synth, j);
            if a.is_empty() || b.is_empty() {
                return Err(MetricsError::EmptyAfterMissingDrop(col.name.clone()));
            }
            let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = if hi > lo { hi - lo } else { 1.0 };
            let scale = |v: &[f64]| v.iter().map(|x| (x - lo) / span).collect::<Vec<_>>();
            features.push(FeatureShape {
                name: col.name.clone(),
                categorical: false,
                score: 1.0 - ks_statistic(&a, &b),
                distance: wasserstein1(&scale(&a), &scale(&b)),
            });
        }
    }
    let cat = || features.iter().filter(|f| f.categorical);
    let num = || features.iter().filter(|f| !f.categorical);
    Ok(ShapeScores {
        shape: mean(features.iter().map(|f| f.score)).unwrap_or(1.0),
        shape_cat: mean(cat().map(|f| f.score)),
        shape_num: mean(num().map(|f| f.score)),
        wd_num: mean(num().map(|f| f.distance)),
        jsd_cat: mean(cat().map(|f| f.distance)),
        features,
    })
}
