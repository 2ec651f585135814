use cascade_core::data::Dataset;
use serde::{Deserialize, Serialize};

use crate::univariate::tvd;
use crate::MetricsError;

const MIXED_BINS: usize = 10;

/// Pearson correlation, `None` when either side is constant or empty.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.is_empty() {
        return None;
    }
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Numerical,
    Categorical,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub a: String,
    pub b: String,
    pub kind: PairKind,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub a: String,
    pub b: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendScores {
    pub trend: f64,
    pub trend_mixed: Option<f64>,
    pub pairs: Vec<PairScore>,
    pub skipped: Vec<SkippedPair>,
}

/// A column reduced to what the pair scores need.
enum Col {
    Num(Vec<Option<f64>>),
    Cat(Vec<u32>, usize),
}

fn columns(ds: &Dataset) -> Vec<Col> {
    let schema = &ds.schema;
    (0..schema.columns.len())
        .map(|c| {
            let j = schema.block_position(c);
            match schema.columns[c].categories() {
                Some(cats) => Col::Cat(ds.cat_values.column(j), cats.len()),
                None => Col::Num((0..ds.n_rows()).map(|r| ds.num(r, j)).collect()),
            }
        })
        .collect()
}

/// Equal-width bin of `x` on `[lo, hi]`, out-of-range values clipped into the
/// edge bins.
pub fn bin_index(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let b = ((x - lo) / (hi - lo) * bins as f64).floor();
    (b.max(0.0) as usize).min(bins - 1)
}

fn contingency(pairs: &[(usize, usize)], ka: usize, kb: usize) -> Vec<f64> {
    let mut t = vec![0.0; ka * kb];
    for &(a, b) in pairs {
        t[a * kb + b] += 1.0;
    }
    let n = pairs.len().max(1) as f64;
    t.iter_mut().for_each(|v| *v /= n);
    t
}

fn observed_range(v: &[Option<f64>]) -> Option<(f64, f64)> {
    let mut it = v.iter().flatten().copied();
    let first = it.next()?;
    Some(it.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x))))
}

/// Pairwise dependence fidelity over every pair of columns.
///
/// Numerical pairs compare Pearson correlations, categorical pairs the
/// contingency tables, and mixed pairs the contingency table after binning the
/// numerical member into ten equal-width bins fitted on the real data. Rows
/// missing either member are dropped for that pair.
pub fn trend_scores(real: &Dataset, synth: &Dataset) -> Result<TrendScores, MetricsError> {
    crate::check_schemas(real, synth)?;
    let names: Vec<&str> = real
        .schema
        .columns
        .iter()
        .map(|c| c.name.as_str())
        .collect();
    let (rc, sc) = (columns(real), columns(synth));
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for a in 0..names.len() {
        for b in a + 1..names.len() {
            let skip = |reason: &str| SkippedPair {
                a: names[a].into(),
                b: names[b].into(),
                reason: reason.into(),
            };
            let scored = match (&rc[a], &rc[b], &sc[a], &sc[b]) {
                (Col::Num(ra), Col::Num(rb), Col::Num(sa), Col::Num(sb)) => {
                    let both = |x: &[Option<f64>], y: &[Option<f64>]| -> (Vec<f64>, Vec<f64>) {
                        x.iter()
                            .zip(y)
                            .filter_map(|(u, v)| Some(((*u)?, (*v)?)))
                            .unzip()
                    };
                    let (rx, ry) = both(ra, rb);
                    let (sx, sy) = both(sa, sb);
                    match (pearson(&rx, &ry), pearson(&sx, &sy)) {
                        (Some(r), Some(s)) => Ok((PairKind::Numerical, 1.0 - 0.5 * (s - r).abs())),
                        _ => Err(skip("constant or empty pair")),
                    }
                }
                (Col::Cat(ra, ka), Col::Cat(rb, kb), Col::Cat(sa, _), Col::Cat(sb, _)) => {
                    let zip = |x: &[u32], y: &[u32]| {
                        x.iter()
                            .zip(y)
                            .map(|(&u, &v)| (u as usize, v as usize))
                            .collect::<Vec<_>>()
                    };
                    let p = contingency(&zip(ra, rb), *ka, *kb);
                    let q = contingency(&zip(sa, sb), *ka, *kb);
                    Ok((PairKind::Categorical, 1.0 - tvd(&p, &q)))
                }
                _ => {
                    // one numerical, one categorical member
                    let (num_r, num_s, cat_r, cat_s, k) = match (&rc[a], &rc[b], &sc[a], &sc[b]) {
                        (Col::Num(nr), Col::Cat(cr, k), Col::Num(ns), Col::Cat(cs, _))
                        | (Col::Cat(cr, k), Col::Num(nr), Col::Cat(cs, _), Col::Num(ns)) => {
                            (nr, ns, cr, cs, *k)
                        }
                        _ => unreachable!("schemas were checked to match"),
                    };
                    match observed_range(num_r) {
                        Some((lo, hi)) if num_s.iter().any(Option::is_some) => {
                            let table = |num: &[Option<f64>], cat: &[u32]| {
                                let rows: Vec<(usize, usize)> = num
                                    .iter()
                                    .zip(cat)
                                    .filter_map(|(x, &c)| {
                                        Some((c as usize, bin_index((*x)?, lo, hi, MIXED_BINS)))
                                    })
                                    .collect();
                                contingency(&rows, k, MIXED_BINS)
                            };
                            Ok((
                                PairKind::Mixed,
                                1.0 - tvd(&table(num_r, cat_r), &table(num_s, cat_s)),
                            ))
                        }
                        _ => Err(skip("numerical member entirely missing")),
                    }
                }
            };
            match scored {
                Ok((kind, score)) => pairs.push(PairScore {
                    a: names[a].into(),
                    b: names[b].into(),
                    kind,
                    score,
                }),
                Err(s) => skipped.push(s),
            }
        }
    }
    let mean = |it: &mut dyn Iterator<Item = f64>| {
        let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        (n > 0).then(|| s / n as f64)
    };
    Ok(TrendScores {
        trend: mean(&mut pairs.iter().map(|p| p.score)).unwrap_or(1.0),
        trend_mixed: mean(
            &mut pairs
                .iter()
                .filter(|p| p.kind == PairKind::Mixed)
                .map(|p| p.score),
        ),
        pairs,
        skipped,
    })
}
