use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{DataError, Dataset, Split};
use crate::Matrix;

fn std_normal() -> Normal {
    Normal::standard()
}

fn normal_density(g: f64) -> f64 {
    (-0.5 * g * g).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard-normal CDF refined by one Newton step against the library quantile,
/// which is the more accurate of the two; keeps `invert(transform(x))` tight.
fn normal_cdf(g: f64) -> f64 {
    let n = std_normal();
    let u = n.cdf(g);
    if u <= 0.0 || u >= 1.0 {
        return u;
    }
    (u - (n.inverse_cdf(u) - g) * normal_density(g)).clamp(0.0, 1.0)
}

/// Empirical-CDF plotting position of a 1-based (possibly averaged) rank.
#[inline]
pub fn plotting_position(rank: f64, n: usize) -> f64 {
    rank / (n as f64 + 1.0)
}

/// Quantile-normal transform of one feature followed by standardization.
///
/// `values` are the distinct training values in increasing order and `cdf` the
/// matching plotting positions (ties share their average rank).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileStandardizer {
    pub values: Vec<f64>,
    pub cdf: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl QuantileStandardizer {
    pub fn fit(train: &[f64]) -> Option<Self> {
        let mut sorted: Vec<f64> = train.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mut values = Vec::new();
        let mut cdf = Vec::new();
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n && sorted[end] == sorted[start] {
                end += 1;
            }
            // average of the 1-based ranks start+1 ..= end
            let rank = (start + 1 + end) as f64 / 2.0;
            values.push(sorted[start]);
            cdf.push(plotting_position(rank, n));
            start = end;
        }
        if values.len() < 2 {
            return None;
        }
        let mut fitted = Self {
            values,
            cdf,
            mean: 0.0,
            std: 1.0,
        };
        let gauss: Vec<f64> = sorted.iter().map(|&x| fitted.gaussianize(x)).collect();
        let mean = gauss.iter().sum::<f64>() / n as f64;
        let var = gauss.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n as f64;
        fitted.mean = mean;
        fitted.std = var.sqrt();
        Some(fitted)
    }

    fn cdf_of(&self, x: f64) -> f64 {
        let k = self.values.len();
        if x <= self.values[0] {
            return self.cdf[0];
        }
        if x >= self.values[k - 1] {
            return self.cdf[k - 1];
        }
        let hi = self.values.partition_point(|&v| v <= x);
        let lo = hi - 1;
        if self.values[lo] == x {
            return self.cdf[lo];
        }
        let w = (x - self.values[lo]) / (self.values[hi] - self.values[lo]);
        self.cdf[lo] + w * (self.cdf[hi] - self.cdf[lo])
    }

    fn value_of(&self, u: f64) -> f64 {
        let k = self.cdf.len();
        if u <= self.cdf[0] {
            return self.values[0];
        }
        if u >= self.cdf[k - 1] {
            return self.values[k - 1];
        }
        let hi = self.cdf.partition_point(|&c| c <= u);
        let lo = hi - 1;
        if self.cdf[lo] == u {
            return self.values[lo];
        }
        let w = (u - self.cdf[lo]) / (self.cdf[hi] - self.cdf[lo]);
        self.values[lo] + w * (self.values[hi] - self.values[lo])
    }

    fn gaussianize(&self, x: f64) -> f64 {
        std_normal().inverse_cdf(self.cdf_of(x))
    }

    pub fn transform(&self, x: f64) -> f64 {
        (self.gaussianize(x) - self.mean) / self.std
    }

    /// Maps a standardized value back to the data scale, clipped to the
    /// observed training range.
    pub fn invert(&self, y: f64) -> f64 {
        let g = y * self.std + self.mean;
        self.value_of(normal_cdf(g))
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().expect("fitted grid is non-empty")
    }
}

/// Per-numerical-feature transforms fitted on the observed training cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub features: Vec<QuantileStandardizer>,
}

impl Preprocessor {
    pub fn fit(ds: &Dataset) -> Result<Self, DataError> {
        let train = ds.rows_in(Split::Train);
        let names = ds.schema.numerical_columns();
        let features = (0..ds.num_values.cols())
            .map(|j| {
                QuantileStandardizer::fit(&ds.observed(j, &train)).ok_or_else(|| {
                    DataError::ConstantFeature(ds.schema.columns[names[j]].name.clone())
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { features })
    }

    /// Transformed numerical block; masked cells are filled with 0 (the
    /// post-transform mean) and the dataset's mask stays authoritative.
    pub fn apply(&self, ds: &Dataset) -> Matrix<f64> {
        let mut out = Matrix::zeros(ds.n_rows(), self.features.len());
        for r in 0..ds.n_rows() {
            for (j, f) in self.features.iter().enumerate() {
                if let Some(x) = ds.num(r, j) {
                    out.set(r, j, f.transform(x));
                }
            }
        }
        out
    }

    pub fn transform(&self, feature: usize, x: f64) -> f64 {
        self.features[feature].transform(x)
    }

    pub fn invert(&self, feature: usize, y: f64) -> f64 {
        self.features[feature].invert(y)
    }
}

pub fn fit_preprocessor(ds: &Dataset) -> Result<Preprocessor, DataError> {
    Preprocessor::fit(ds)
}
