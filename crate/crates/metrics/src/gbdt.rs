//! Small histogram gradient-boosted trees for logistic and squared loss.
//!
//! Features are bucketed into at most `n_bins` quantile bins per column;
//! missing values (NaN) get their own bucket and at every split are routed to
//! whichever child gives the larger gain.

use serde::{Deserialize, Serialize};

use crate::MetricsError;

/// Dense row-major feature matrix; NaN marks a missing value.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub n: usize,
    pub p: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n: usize, p: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * p, "feature buffer does not match its shape");
        Self { n, p, data }
    }

    pub fn get(&self, r: usize, f: usize) -> f64 {
        self.data[r * self.p + f]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.p..(r + 1) * self.p]
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let data = rows
            .iter()
            .flat_map(|&r| self.row(r).iter().copied())
            .collect();
        Self {
            n: rows.len(),
            p: self.p,
            data,
        }
    }

    pub fn vstack(&self, other: &Self) -> Self {
        assert_eq!(self.p, other.p);
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self {
            n: self.n + other.n,
            p: self.p,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Logistic,
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub n_bins: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            n_trees: 500,
            max_depth: 5,
            learning_rate: 0.1,
            n_bins: 64,
            lambda: 1.0,
            min_samples_leaf: 20,
        }
    }
}

const MISSING: u8 = u8::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BinMapper {
    /// Per feature: increasing cut points; a value falls in the bin given by
    /// the number of cut points not above it.
    edges: Vec<Vec<f64>>,
}

impl BinMapper {
    fn fit(x: &FeatureMatrix, n_bins: usize) -> Self {
        let n_bins = n_bins.clamp(2, 254);
        let edges = (0..x.p)
            .map(|f| {
                let mut v: Vec<f64> = (0..x.n)
                    .map(|r| x.get(r, f))
                    .filter(|v| !v.is_nan())
                    .collect();
                v.sort_by(f64::total_cmp);
                let mut uniq = v.clone();
                uniq.dedup();
                if uniq.len() <= n_bins {
                    return uniq.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
                }
                let mut cuts: Vec<f64> = (1..n_bins)
                    .filter_map(|q| {
                        let at = v[q * v.len() / n_bins];
                        let k = uniq.partition_point(|&u| u <= at);
                        (k < uniq.len()).then(|| 0.5 * (at + uniq[k]))
                    })
                    .collect();
                cuts.dedup();
                cuts
            })
            .collect();
        Self { edges }
    }

    fn bin(&self, f: usize, x: f64) -> u8 {
        if x.is_nan() {
            MISSING
        } else {
            self.edges[f].partition_point(|&e| e <= x) as u8
        }
    }

    fn n_bins(&self, f: usize) -> usize {
        self.edges[f].len() + 1
    }

    /// Column-major bin codes.
    fn transform(&self, x: &FeatureMatrix) -> Vec<u8> {
        let mut out = vec![0u8; x.n * x.p];
        for f in 0..x.p {
            for r in 0..x.n {
                out[f * x.n + r] = self.bin(f, x.get(r, f));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Node {
    feature: usize,
    /// Rows with bin `<= threshold` go left.
    threshold: u8,
    missing_left: bool,
    left: usize,
    right: usize,
    value: f64,
    leaf: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_binned(&self, bins: &[u8], n: usize, r: usize) -> f64 {
        let mut k = 0;
        loop {
            let node = &self.nodes[k];
            if node.leaf {
                return node.value;
            }
            let b = bins[node.feature * n + r];
            let left = if b == MISSING {
                node.missing_left
            } else {
                b <= node.threshold
            };
            k = if left { node.left } else { node.right };
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Stat {
    g: f64,
    h: f64,
    n: usize,
}

impl Stat {
    fn add(&mut self, o: &Stat) {
        self.g += o.g;
        self.h += o.h;
        self.n += o.n;
    }

    fn sub(&self, o: &Stat) -> Stat {
        Stat {
            g: self.g - o.g,
            h: self.h - o.h,
            n: self.n - o.n,
        }
    }

    fn score(&self, lambda: f64) -> f64 {
        self.g * self.g / (self.h + lambda)
    }
}

struct Split {
    gain: f64,
    feature: usize,
    threshold: u8,
    missing_left: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gbdt {
    loss: Loss,
    base: f64,
    mapper: BinMapper,
    trees: Vec<Tree>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Gbdt {
    pub fn fit(
        x: &FeatureMatrix,
        y: &[f64],
        loss: Loss,
        cfg: &GbdtConfig,
    ) -> Result<Self, MetricsError> {
        if x.n == 0 {
            return Err(MetricsError::EmptyTrainingSet);
        }
        assert_eq!(y.len(), x.n, "one label per row");
        let mapper = BinMapper::fit(x, cfg.n_bins);
        let bins = mapper.transform(x);
        let mean = y.iter().sum::<f64>() / x.n as f64;
        let base = match loss {
            Loss::Logistic => {
                let p = mean.clamp(1e-6, 1.0 - 1e-6);
                (p / (1.0 - p)).ln()
            }
            Loss::Squared => mean,
        };
        let mut raw = vec![base; x.n];
        let mut g = vec![0.0; x.n];
        let mut h = vec![0.0; x.n];
        let mut trees = Vec::with_capacity(cfg.n_trees);
        for _ in 0..cfg.n_trees {
            for r in 0..x.n {
                match loss {
                    Loss::Logistic => {
                        let p = sigmoid(raw[r]);
                        g[r] = p - y[r];
                        h[r] = (p * (1.0 - p)).max(1e-12);
                    }
                    Loss::Squared => {
                        g[r] = raw[r] - y[r];
                        h[r] = 1.0;
                    }
                }
            }
            let tree = grow(&mapper, &bins, x.n, &g, &h, cfg);
            for (r, v) in raw.iter_mut().enumerate() {
                *v += tree.predict_binned(&bins, x.n, r);
            }
            trees.push(tree);
        }
        Ok(Self {
            loss,
            base,
            mapper,
            trees,
        })
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Raw scores (log-odds or regression values) of the full ensemble.
    pub fn predict_raw(&self, x: &FeatureMatrix) -> Vec<f64> {
        let mut last = Vec::new();
        self.for_each_stage(x, |_, raw| last = raw.to_vec());
        if self.trees.is_empty() {
            return vec![self.base; x.n];
        }
        last
    }

    pub fn predict_proba(&self, x: &FeatureMatrix) -> Vec<f64> {
        self.predict_raw(x).into_iter().map(sigmoid).collect()
    }

    /// Predicted values on the response scale.
    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        match self.loss {
            Loss::Logistic => self.predict_proba(x),
            Loss::Squared => self.predict_raw(x),
        }
    }

    /// Calls `f(i, raw)` after adding tree `i` (0-based) to the ensemble.
    pub fn for_each_stage(&self, x: &FeatureMatrix, mut f: impl FnMut(usize, &[f64])) {
        let bins = self.mapper.transform(x);
        let mut raw = vec![self.base; x.n];
        for (i, t) in self.trees.iter().enumerate() {
            for (r, v) in raw.iter_mut().enumerate() {
                *v += t.predict_binned(&bins, x.n, r);
            }
            f(i, &raw);
        }
    }
}

fn best_split(
    mapper: &BinMapper,
    hist: &[Vec<Stat>],
    total: &Stat,
    cfg: &GbdtConfig,
) -> Option<Split> {
    let parent = total.score(cfg.lambda);
    let mut best: Option<Split> = None;
    for (f, hf) in hist.iter().enumerate() {
        let nb = mapper.n_bins(f);
        let miss = hf[nb];
        let mut left = Stat::default();
        for b in 0..nb.saturating_sub(1) {
            left.add(&hf[b]);
            for missing_left in [false, true] {
                if missing_left && miss.n == 0 {
                    continue;
                }
                let mut l = left;
                if missing_left {
                    l.add(&miss);
                }
                let r = total.sub(&l);
                if l.n < cfg.min_samples_leaf || r.n < cfg.min_samples_leaf {
                    continue;
                }
                let gain = l.score(cfg.lambda) + r.score(cfg.lambda) - parent;
                if gain > 1e-12 && best.as_ref().is_none_or(|s| gain > s.gain) {
                    best = Some(Split {
                        gain,
                        feature: f,
                        threshold: b as u8,
                        missing_left,
                    });
                }
            }
        }
    }
    best
}

fn grow(mapper: &BinMapper, bins: &[u8], n: usize, g: &[f64], h: &[f64], cfg: &GbdtConfig) -> Tree {
    let p = mapper.edges.len();
    let leaf_value = |s: &Stat| -cfg.learning_rate * s.g / (s.h + cfg.lambda);
    let mut nodes = Vec::new();
    // (node index, rows, depth)
    let mut stack = vec![(0usize, (0..n).collect::<Vec<usize>>(), 0usize)];
    nodes.push(Node {
        feature: 0,
        threshold: 0,
        missing_left: false,
        left: 0,
        right: 0,
        value: 0.0,
        leaf: true,
    });
    while let Some((k, rows, depth)) = stack.pop() {
        let mut total = Stat::default();
        for &r in &rows {
            total.add(&Stat {
                g: g[r],
                h: h[r],
                n: 1,
            });
        }
        nodes[k].value = leaf_value(&total);
        if depth >= cfg.max_depth || rows.len() < 2 * cfg.min_samples_leaf.max(1) {
            continue;
        }
        let hist: Vec<Vec<Stat>> = (0..p)
            .map(|f| {
                let nb = mapper.n_bins(f);
                let mut hf = vec![Stat::default(); nb + 1];
                let col = &bins[f * n..(f + 1) * n];
                for &r in &rows {
                    let b = col[r];
                    let slot = if b == MISSING { nb } else { b as usize };
                    let s = &mut hf[slot];
                    s.g += g[r];
                    s.h += h[r];
                    s.n += 1;
                }
                hf
            })
            .collect();
        let Some(split) = best_split(mapper, &hist, &total, cfg) else {
            continue;
        };
        let col = &bins[split.feature * n..(split.feature + 1) * n];
        let (l_rows, r_rows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| {
            let b = col[r];
            if b == MISSING {
                split.missing_left
            } else {
                b <= split.threshold
            }
        });
        let (l, r) = (nodes.len(), nodes.len() + 1);
        for _ in 0..2 {
            nodes.push(Node {
                feature: 0,
                threshold: 0,
                missing_left: false,
                left: 0,
                right: 0,
                value: 0.0,
                leaf: true,
            });
        }
        let node = &mut nodes[k];
        node.leaf = false;
        node.feature = split.feature;
        node.threshold = split.threshold;
        node.missing_left = split.missing_left;
        node.left = l;
        node.right = r;
        stack.push((r, r_rows, depth + 1));
        stack.push((l, l_rows, depth + 1));
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auc::auc;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn logloss(p: &[f64], y: &[f64]) -> f64 {
        p.iter()
            .zip(y)
            .map(|(&p, &y)| -(y * p.max(1e-15).ln() + (1.0 - y) * (1.0 - p).max(1e-15).ln()))
            .sum::<f64>()
            / y.len() as f64
    }

    #[test]
    fn separable_data_reaches_full_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut data = Vec::new();
        let mut y = Vec::new();
        for _ in 0..400 {
            let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            data.extend([a, b]);
            y.push(if a + b > 0.0 { 1.0 } else { 0.0 });
        }
        let x = FeatureMatrix::new(400, 2, data);
        let m = Gbdt::fit(
            &x,
            &y,
            Loss::Logistic,
            &GbdtConfig {
                n_trees: 50,
                ..GbdtConfig::default()
            },
        )
        .unwrap();
        let labels: Vec<bool> = y.iter().map(|&v| v > 0.5).collect();
        assert!(auc(&m.predict_proba(&x), &labels) > 0.999);
    }

    #[test]
    fn xor_clusters_with_depth_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut data = Vec::new();
        let mut y = Vec::new();
        for i in 0..800 {
            let (cx, cy) = [(0.0, 0.0), (1.0, 1.0), (0.0, 1.0), (1.0, 0.0)][i % 4];
            data.extend([
                cx + 0.1 * rng.random::<f64>(),
                cy + 0.1 * rng.random::<f64>(),
            ]);
            y.push(if i % 4 < 2 { 1.0 } else { 0.0 });
        }
        let x = FeatureMatrix::new(800, 2, data);
        let cfg = GbdtConfig {
            n_trees: 50,
            max_depth: 2,
            ..GbdtConfig::default()
        };
        let m = Gbdt::fit(&x, &y, Loss::Logistic, &cfg).unwrap();
        let labels: Vec<bool> = y.iter().map(|&v| v > 0.5).collect();
        assert!(auc(&m.predict_proba(&x), &labels) > 0.95);
    }

    #[test]
    fn constant_labels_predict_the_prior() {
        let x = FeatureMatrix::new(50, 1, (0..50).map(f64::from).collect());
        let m = Gbdt::fit(
            &x,
            &[1.0; 50],
            Loss::Logistic,
            &GbdtConfig {
                n_trees: 10,
                ..GbdtConfig::default()
            },
        )
        .unwrap();
        let p = m.predict_proba(&x);
        assert!(p.iter().all(|&v| v > 0.99 && v < 1.0));
        assert_eq!(auc(&p, &[true; 50]), 0.5);
    }

    #[test]
    fn training_logloss_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 300;
        let data: Vec<f64> = (0..n * 3).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..n)
            .map(|r| {
                if data[r * 3] + 0.3 * rng.random::<f64>() > 0.6 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let x = FeatureMatrix::new(n, 3, data);
        let m = Gbdt::fit(
            &x,
            &y,
            Loss::Logistic,
            &GbdtConfig {
                n_trees: 60,
                ..GbdtConfig::default()
            },
        )
        .unwrap();
        let mut prev = f64::INFINITY;
        m.for_each_stage(&x, |_, raw| {
            let p: Vec<f64> = raw.iter().map(|&v| sigmoid(v)).collect();
            let l = logloss(&p, &y);
            assert!(l <= prev + 1e-12);
            prev = l;
        });
    }

    #[test]
    fn missing_values_are_routed() {
        // the label is exactly "feature is missing"
        let data: Vec<f64> = (0..200)
            .map(|i| if i % 2 == 0 { f64::NAN } else { (i % 7) as f64 })
            .collect();
        let y: Vec<f64> = (0..200)
            .map(|i| if i % 2 == 0 { 1.0 } else { 0.0 })
            .collect();
        let x = FeatureMatrix::new(200, 1, data);
        let m = Gbdt::fit(
            &x,
            &y,
            Loss::Logistic,
            &GbdtConfig {
                n_trees: 20,
                ..GbdtConfig::default()
            },
        )
        .unwrap();
        let p = m.predict_proba(&x);
        assert!(p[0] > 0.8 && p[1] < 0.2);
    }

    #[test]
    fn regression_fits_a_step() {
        let x = FeatureMatrix::new(100, 1, (0..100).map(f64::from).collect());
        let y: Vec<f64> = (0..100).map(|i| if i < 50 { -1.0 } else { 2.0 }).collect();
        let m = Gbdt::fit(
            &x,
            &y,
            Loss::Squared,
            &GbdtConfig {
                n_trees: 100,
                ..GbdtConfig::default()
            },
        )
        .unwrap();
        let p = m.predict(&x);
        assert!((p[10] + 1.0).abs() < 0.01 && (p[90] - 2.0).abs() < 0.01);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let x = FeatureMatrix::new(0, 2, vec![]);
        assert!(matches!(
            Gbdt::fit(&x, &[], Loss::Squared, &GbdtConfig::default()),
            Err(MetricsError::EmptyTrainingSet)
        ));
    }
}
