//! Per-feature low-resolution encoders.
//!
//! Each numerical feature is coarsened into a category `z`: one category per
//! Gaussian component, one of which may be an inflated point mass, plus a
//! trailing missing category when the training data has missing cells. Each
//! ordinary component also supplies the source mean and scale of the flow.

mod dt;
mod gmm;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use dt::{fit_dt, DtConfig};
pub use gmm::{fit_gmm, GmmConfig};

use crate::data::{Dataset, Split};
use crate::Matrix;

/// Variance below which a component is a candidate inflated value.
pub const INFLATION_VAR_EPS: f64 = 1e-10;
/// Floor on the source scale handed to the coupling.
pub const SIGMA_MIN: f64 = 1e-3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EncoderError {
    #[error("cannot fit an encoder on fewer than two values")]
    EmptyInput,
    #[error("category {0} is a missing or inflated category and has no source distribution")]
    SpecialCategoryHasNoSource(u32),
    #[error("category {category} is out of range for an encoder with {count} categories")]
    UnknownCategory { category: u32, count: usize },
    #[error("encoder json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Dt,
    Gmm,
}

/// A value carrying point mass, on the modelling scale and on the original
/// data scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflatedValue {
    pub value: f64,
    pub raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub mu: f64,
    pub sigma: f64,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inflated: Option<InflatedValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub kind: EncoderKind,
    pub components: Vec<Component>,
    /// DT only: the `K − 1` increasing split points between consecutive leaves.
    /// Leaf `k` covers `[thresholds[k−1], thresholds[k])` with open outer ends.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub thresholds: Vec<f64>,
    pub has_missing: bool,
}

impl FeatureEncoder {
    /// Number of categories, missing category included.
    pub fn n_categories(&self) -> usize {
        self.components.len() + usize::from(self.has_missing)
    }

    pub fn missing_category(&self) -> Option<u32> {
        self.has_missing.then_some(self.components.len() as u32)
    }

    pub fn is_missing_category(&self, z: u32) -> bool {
        self.has_missing && z as usize == self.components.len()
    }

    pub fn inflated(&self, z: u32) -> Option<InflatedValue> {
        self.components.get(z as usize).and_then(|c| c.inflated)
    }

    /// Missing and inflated categories carry no continuous detail.
    pub fn is_special(&self, z: u32) -> bool {
        self.is_missing_category(z) || self.inflated(z).is_some()
    }

    pub fn n_inflated(&self) -> usize {
        self.components
            .iter()
            .filter(|c| c.inflated.is_some())
            .count()
    }

    fn leaf_of(&self, x: f64) -> usize {
        self.thresholds.partition_point(|&t| t <= x)
    }

    fn gmm_score(c: &Component, x: f64) -> f64 {
        let s = c.sigma.max(1e-6);
        let d = (x - c.mu) / s;
        c.weight.max(1e-300).ln() - s.ln() - 0.5 * d * d
    }

    /// Category of an observed value. Total on the reals: exact inflated values
    /// go to their point mass, everything else to an ordinary component when
    /// one exists.
    pub fn encode_value(&self, x: f64) -> u32 {
        if let Some(k) = self
            .components
            .iter()
            .position(|c| c.inflated.is_some_and(|v| v.value == x))
        {
            return k as u32;
        }
        let ordinary = |k: usize| self.components[k].inflated.is_none();
        match self.kind {
            EncoderKind::Dt => {
                let leaf = self.leaf_of(x);
                if ordinary(leaf) {
                    return leaf as u32;
                }
                // The leaf is a point mass and `x` is not its value: use the
                // nearest ordinary leaf, searching first on the side of `x`.
                let v = self.components[leaf].inflated.unwrap().value;
                let k = self.components.len();
                let left = (0..leaf).rev().find(|&j| ordinary(j));
                let right = (leaf + 1..k).find(|&j| ordinary(j));
                let pick = if x < v {
                    left.or(right)
                } else {
                    right.or(left)
                };
                pick.unwrap_or(leaf) as u32
            }
            EncoderKind::Gmm => {
                let mut best = None;
                let mut best_score = f64::NEG_INFINITY;
                for (k, c) in self.components.iter().enumerate() {
                    if c.inflated.is_some() {
                        continue;
                    }
                    let s = Self::gmm_score(c, x);
                    // strict comparison: ties go to the lowest index
                    if best.is_none() || s > best_score {
                        best = Some(k);
                        best_score = s;
                    }
                }
                best.unwrap_or(0) as u32
            }
        }
    }

    /// Category of a possibly missing value; `None` only for a missing value on
    /// a feature that had no missing cells in training.
    pub fn encode(&self, x: Option<f64>) -> Option<u32> {
        match x {
            Some(v) => Some(self.encode_value(v)),
            None => self.missing_category(),
        }
    }

    /// Source mean and scale of an ordinary category.
    pub fn source_params(&self, z: u32) -> Result<(f64, f64), EncoderError> {
        if z as usize >= self.n_categories() {
            return Err(EncoderError::UnknownCategory {
                category: z,
                count: self.n_categories(),
            });
        }
        if self.is_special(z) {
            return Err(EncoderError::SpecialCategoryHasNoSource(z));
        }
        let c = &self.components[z as usize];
        Ok((c.mu, c.sigma.max(SIGMA_MIN)))
    }

    /// Flags components whose training values are all one value as inflated;
    /// every other component gets its empirical spread. `raw` holds the same
    /// values on the original data scale.
    pub fn detect_inflated(&mut self, values: &[f64], raw: &[f64]) {
        debug_assert_eq!(values.len(), raw.len());
        for c in &mut self.components {
            c.inflated = None;
        }
        let k = self.components.len();
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &x) in values.iter().enumerate() {
            groups[self.encode_value(x) as usize].push(i);
        }
        for (c, idx) in self.components.iter_mut().zip(&groups) {
            if idx.is_empty() {
                continue;
            }
            let n = idx.len() as f64;
            let mean = idx.iter().map(|&i| values[i]).sum::<f64>() / n;
            let var = idx.iter().map(|&i| (values[i] - mean).powi(2)).sum::<f64>() / n;
            let first = values[idx[0]];
            if var < INFLATION_VAR_EPS && idx.iter().all(|&i| values[i] == first) {
                c.mu = first;
                c.sigma = 0.0;
                c.inflated = Some(InflatedValue {
                    value: first,
                    raw: raw[idx[0]],
                });
            } else {
                c.sigma = var.sqrt();
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub max_components: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Dt,
            max_depth: 8,
            min_leaf: 32,
            max_components: 30,
            seed: 0,
        }
    }
}

/// Fits one encoder on a feature's observed values (modelling scale) and the
/// matching raw values.
pub fn fit_feature(
    values: &[f64],
    raw: &[f64],
    has_missing: bool,
    cfg: &EncoderConfig,
    seed: u64,
) -> Result<FeatureEncoder, EncoderError> {
    let mut enc = match cfg.kind {
        EncoderKind::Dt => fit_dt(
            values,
            &DtConfig {
                max_depth: cfg.max_depth,
                min_leaf: cfg.min_leaf,
                ..DtConfig::default()
            },
        )?,
        EncoderKind::Gmm => fit_gmm(
            values,
            &GmmConfig {
                max_components: cfg.max_components,
                ..GmmConfig::default()
            },
            seed,
        )?,
    };
    enc.detect_inflated(values, raw);
    enc.has_missing = has_missing;
    Ok(enc)
}

/// One encoder per numerical column, in block order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSet {
    pub encoders: Vec<FeatureEncoder>,
    /// Cardinalities of the categorical columns that precede the encoded ones
    /// in a low-resolution row.
    pub categorical_cardinalities: Vec<usize>,
}

impl EncoderSet {
    /// Fits on the training rows of `ds`; `pre` is the preprocessed numerical
    /// block of the whole dataset.
    pub fn fit(ds: &Dataset, pre: &Matrix<f64>, cfg: &EncoderConfig) -> Result<Self, EncoderError> {
        let rows = {
            let train = ds.rows_in(Split::Train);
            if train.is_empty() {
                ds.all_rows()
            } else {
                train
            }
        };
        let encoders = (0..ds.num_values.cols())
            .into_par_iter()
            .map(|j| {
                let observed: Vec<usize> = rows
                    .iter()
                    .copied()
                    .filter(|&r| !ds.missing.get(r, j))
                    .collect();
                let values: Vec<f64> = observed.iter().map(|&r| pre.get(r, j)).collect();
                let raw: Vec<f64> = observed.iter().map(|&r| ds.num_values.get(r, j)).collect();
                let has_missing = observed.len() < rows.len();
                fit_feature(
                    &values,
                    &raw,
                    has_missing,
                    cfg,
                    cfg.seed.wrapping_add(j as u64),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            encoders,
            categorical_cardinalities: ds.schema.cardinalities(),
        })
    }

    pub fn n_categorical(&self) -> usize {
        self.categorical_cardinalities.len()
    }

    pub fn n_numerical(&self) -> usize {
        self.encoders.len()
    }

    /// Cardinalities of a full low-resolution row: categorical columns, then
    /// one encoded column per numerical feature.
    pub fn low_res_cardinalities(&self) -> Vec<usize> {
        self.categorical_cardinalities
            .iter()
            .copied()
            .chain(self.encoders.iter().map(FeatureEncoder::n_categories))
            .collect()
    }

    /// Low-resolution rows `(x_cat, z)` for every row of `ds`. Missing cells on
    /// a feature without a missing category fall back to its first category.
    pub fn encode_dataset(&self, ds: &Dataset, pre: &Matrix<f64>) -> Matrix<u32> {
        let (kc, kn) = (self.n_categorical(), self.n_numerical());
        let n = ds.n_rows();
        let mut out = Matrix::zeros(n, kc + kn);
        for r in 0..n {
            out.row_mut(r)[..kc].copy_from_slice(ds.cat_values.row(r));
            for (j, enc) in self.encoders.iter().enumerate() {
                let x = (!ds.missing.get(r, j)).then(|| pre.get(r, j));
                out.set(r, kc + j, enc.encode(x).unwrap_or(0));
            }
        }
        out
    }

    /// Per-coordinate mask of a low-resolution row: `true` where the numerical
    /// feature is missing or inflated.
    pub fn special_mask(&self, low: &[u32]) -> Vec<bool> {
        let kc = self.n_categorical();
        self.encoders
            .iter()
            .enumerate()
            .map(|(j, e)| e.is_special(low[kc + j]))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("encoder set serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EncoderError> {
        serde_json::from_str(text).map_err(|e| EncoderError::Json(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("encoder set serializes");
        hex::encode(Sha256::digest(compact.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_leaf() -> FeatureEncoder {
        FeatureEncoder {
            kind: EncoderKind::Dt,
            components: vec![
                Component {
                    mu: 2.0,
                    sigma: 0.5,
                    weight: 0.5,
                    inflated: None,
                },
                Component {
                    mu: 8.0,
                    sigma: 1e-6,
                    weight: 0.5,
                    inflated: None,
                },
            ],
            thresholds: vec![5.0],
            has_missing: true,
        }
    }

    #[test]
    fn interval_lookup_and_missing() {
        let e = two_leaf();
        assert_eq!(e.encode_value(4.9), 0);
        assert_eq!(e.encode_value(5.1), 1);
        assert_eq!(e.encode_value(5.0), 1);
        assert_eq!(e.encode(None), Some(2));
        assert_eq!(e.n_categories(), 3);
        let mut no_missing = e.clone();
        no_missing.has_missing = false;
        assert_eq!(no_missing.encode(None), None);
    }

    #[test]
    fn source_params_lookup_floor_and_specials() {
        let e = two_leaf();
        assert_eq!(e.source_params(0), Ok((2.0, 0.5)));
        assert_eq!(e.source_params(1), Ok((8.0, 1e-3)));
        assert_eq!(
            e.source_params(2),
            Err(EncoderError::SpecialCategoryHasNoSource(2))
        );
        assert!(matches!(
            e.source_params(3),
            Err(EncoderError::UnknownCategory { .. })
        ));
    }

    #[test]
    fn inflation_needs_identical_values() {
        let mut e = two_leaf();
        e.detect_inflated(
            &[1.0, 2.0, 3.0, 7.0, 7.0, 7.0],
            &[10.0, 20.0, 30.0, 70.0, 70.0, 70.0],
        );
        assert_eq!(
            e.inflated(1),
            Some(InflatedValue {
                value: 7.0,
                raw: 70.0
            })
        );
        assert!(e.is_special(1) && !e.is_special(0));
        assert_eq!(e.encode_value(7.0), 1);

        let mut e = two_leaf();
        e.detect_inflated(&[3.0, 3.0, 8.0, 8.0 + 1e-3], &[3.0, 3.0, 8.0, 8.001]);
        assert_eq!(e.inflated(1), None);
        assert!((e.components[1].sigma - 5e-4).abs() < 1e-12);
    }

    #[test]
    fn values_near_a_point_mass_go_to_an_ordinary_leaf() {
        let mut e = two_leaf();
        e.components.push(Component {
            mu: 12.0,
            sigma: 1.0,
            weight: 0.1,
            inflated: None,
        });
        e.thresholds.push(10.0);
        e.detect_inflated(
            &[1.0, 3.0, 7.0, 7.0, 11.0, 13.0],
            &[1.0, 3.0, 7.0, 7.0, 11.0, 13.0],
        );
        assert!(e.inflated(1).is_some());
        assert_eq!(e.encode_value(7.0), 1);
        assert_eq!(e.encode_value(6.0), 0);
        assert_eq!(e.encode_value(8.0), 2);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut e = two_leaf();
        e.components[0].mu = 0.1 + 0.2;
        e.components[1].sigma = 1.0 / 3.0;
        e.components[1].inflated = Some(InflatedValue {
            value: -1.234_567_890_123_456_7e-5,
            raw: 0.0,
        });
        let set = EncoderSet {
            encoders: vec![e],
            categorical_cardinalities: vec![3, 2],
        };
        let back = EncoderSet::from_json(&set.to_json()).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.hash(), set.hash());
        assert_eq!(set.low_res_cardinalities(), vec![3, 2, 3]);
    }
}
