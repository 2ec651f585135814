use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schema::{ColumnKind, FeatureSchema, MISSING_LABEL};
use super::DataError;
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A typed table: the categorical block as dense codes, the numerical block as
/// reals plus a missingness mask.
///
/// Masked numerical cells hold NaN. Use [`Dataset::num`] to read a cell; it
/// returns `None` for masked entries so the sentinel never reaches arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub cat_values: Matrix<u32>,
    pub num_values: Matrix<f64>,
    pub missing: Matrix<bool>,
    pub split: Vec<Split>,
}

impl Dataset {
    /// Assembles a dataset from its blocks; masked numerical cells are reset to
    /// the NaN sentinel and every row is tagged `Train`.
    pub fn new(
        schema: FeatureSchema,
        cat_values: Matrix<u32>,
        mut num_values: Matrix<f64>,
        missing: Matrix<bool>,
    ) -> Result<Self, DataError> {
        let n = cat_values.rows().max(num_values.rows());
        let cards = schema.cardinalities();
        if cat_values.cols() != cards.len()
            || num_values.cols() != schema.n_numerical()
            || missing.cols() != schema.n_numerical()
            || (!cards.is_empty() && cat_values.rows() != n)
            || (schema.n_numerical() > 0 && (num_values.rows() != n || missing.rows() != n))
        {
            return Err(DataError::ShapeMismatch);
        }
        for r in 0..cat_values.rows() {
            for (j, &card) in cards.iter().enumerate() {
                if cat_values.get(r, j) as usize >= card {
                    return Err(DataError::ShapeMismatch);
                }
            }
        }
        for r in 0..num_values.rows() {
            for j in 0..num_values.cols() {
                if missing.get(r, j) {
                    num_values.set(r, j, f64::NAN);
                } else if !num_values.get(r, j).is_finite() {
                    return Err(DataError::NonNumericValue {
                        row: r,
                        column: schema.columns[schema.numerical_columns()[j]].name.clone(),
                    });
                }
            }
        }
        Ok(Self {
            schema,
            cat_values,
            num_values,
            missing,
            split: vec![Split::Train; n],
        })
    }

    pub fn n_rows(&self) -> usize {
        self.split.len()
    }

    /// Numerical cell, `None` when masked.
    #[inline]
    pub fn num(&self, row: usize, feature: usize) -> Option<f64> {
        if self.missing.get(row, feature) {
            None
        } else {
            let v = self.num_values.get(row, feature);
            debug_assert!(
                !v.is_nan(),
                "unmasked numerical cell holds the NaN sentinel"
            );
            Some(v)
        }
    }

    /// Observed values of one numerical feature over the given rows.
    pub fn observed(&self, feature: usize, rows: &[usize]) -> Vec<f64> {
        rows.iter().filter_map(|&r| self.num(r, feature)).collect()
    }

    pub fn rows_in(&self, split: Split) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&r| self.split[r] == split)
            .collect()
    }

    pub fn all_rows(&self) -> Vec<usize> {
        (0..self.n_rows()).collect()
    }

    /// Row subset; split tags are carried over.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            cat_values: self.cat_values.select_rows(rows),
            num_values: self.num_values.select_rows(rows),
            missing: self.missing.select_rows(rows),
            split: rows.iter().map(|&r| self.split[r]).collect(),
        }
    }

    pub fn partition(&self, split: Split) -> Self {
        self.subset(&self.rows_in(split))
    }

    /// Missing share per numerical feature.
    pub fn missing_rates(&self) -> Vec<f64> {
        let n = self.n_rows().max(1) as f64;
        (0..self.missing.cols())
            .map(|j| {
                (0..self.n_rows())
                    .filter(|&r| self.missing.get(r, j))
                    .count() as f64
                    / n
            })
            .collect()
    }

    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))?;
        let cat_cols = self.schema.categorical_columns();
        let num_cols = self.schema.numerical_columns();
        let mut record: Vec<String> = vec![String::new(); self.schema.columns.len()];
        for r in 0..self.n_rows() {
            for (j, &c) in cat_cols.iter().enumerate() {
                let cats = self.schema.columns[c].categories().expect("categorical");
                record[c] = cats[self.cat_values.get(r, j) as usize].clone();
            }
            for (j, &c) in num_cols.iter().enumerate() {
                record[c] = match self.num(r, j) {
                    Some(v) => format!("{v}"),
                    None => String::new(),
                };
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|source| DataError::Io {
            path: "<csv writer>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let file = std::fs::File::create(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.to_csv_writer(std::io::BufWriter::new(file))
    }

    /// Writes the numerical missingness mask as a boolean CSV (one column per
    /// numerical feature).
    pub fn write_mask_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let num_cols = self.schema.numerical_columns();
        w.write_record(
            num_cols
                .iter()
                .map(|&c| self.schema.columns[c].name.as_str()),
        )?;
        for r in 0..self.n_rows() {
            w.write_record((0..num_cols.len()).map(|j| {
                if self.missing.get(r, j) {
                    "true"
                } else {
                    "false"
                }
            }))?;
        }
        w.flush().map_err(|source| DataError::Io {
            path: "<csv writer>".into(),
            source,
        })?;
        Ok(())
    }
}

/// Reads a CSV whose header names the schema's columns (in any order).
///
/// Empty numerical cells become missing. Empty categorical cells map to the
/// missing-category label, which must then be declared in the schema.
pub fn read_dataset<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();

    let mut expected: Vec<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
    let mut found: Vec<&str> = header.iter().map(String::as_str).collect();
    expected.sort_unstable();
    found.sort_unstable();
    if expected != found {
        return Err(DataError::HeaderMismatch {
            expected: schema.columns.iter().map(|c| c.name.clone()).collect(),
            found: header,
        });
    }
    // csv column position of every schema column
    let position: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| *h == c.name)
                .expect("checked above")
        })
        .collect();

    let cat_cols = schema.categorical_columns();
    let num_cols = schema.numerical_columns();
    let mut cats = Vec::new();
    let mut nums = Vec::new();
    let mut miss = Vec::new();
    let mut n = 0usize;
    for (row, rec) in rdr.records().enumerate() {
        let rec = match rec {
            Ok(rec) => rec,
            Err(e) => {
                if let csv::ErrorKind::UnequalLengths { len, .. } = e.kind() {
                    return Err(DataError::ArityMismatch {
                        row,
                        expected: header.len(),
                        found: *len as usize,
                    });
                }
                return Err(e.into());
            }
        };
        if rec.len() != header.len() {
            return Err(DataError::ArityMismatch {
                row,
                expected: header.len(),
                found: rec.len(),
            });
        }
        for &c in &cat_cols {
            let cell = rec[position[c]].trim();
            let ColumnKind::Categorical { categories } = &schema.columns[c].kind else {
                unreachable!()
            };
            let label = if cell.is_empty() { MISSING_LABEL } else { cell };
            let code = categories.iter().position(|l| l == label).ok_or_else(|| {
                DataError::UnknownCategory {
                    row,
                    column: schema.columns[c].name.clone(),
                    label: label.to_string(),
                }
            })?;
            cats.push(code as u32);
        }
        for &c in &num_cols {
            let cell = rec[position[c]].trim();
            if cell.is_empty() {
                nums.push(f64::NAN);
                miss.push(true);
            } else {
                let v: f64 = cell
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| DataError::NonNumericValue {
                        row,
                        column: schema.columns[c].name.clone(),
                    })?;
                nums.push(v);
                miss.push(false);
            }
        }
        n += 1;
    }
    let ds = Dataset {
        schema: schema.clone(),
        cat_values: Matrix::from_vec(n, cat_cols.len(), cats).expect("row-major fill"),
        num_values: Matrix::from_vec(n, num_cols.len(), nums).expect("row-major fill"),
        missing: Matrix::from_vec(n, num_cols.len(), miss).expect("row-major fill"),
        split: vec![Split::Train; n],
    };
    Ok(ds)
}

pub fn load_dataset(path: &Path, schema: &FeatureSchema) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dataset(std::io::BufReader::new(file), schema)
}

/// Partition sizes (train, val, test): val and test take `floor(0.1 n)` and
/// `floor(0.2 n)`, the remainder goes to train.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let val = n / 10;
    let test = n / 5;
    (n - val - test, val, test)
}

/// Seeded 70/10/20 row split.
pub fn split_dataset(mut ds: Dataset, seed: u64) -> Result<Dataset, DataError> {
    let n = ds.n_rows();
    if n < 10 {
        return Err(DataError::TooFewRows {
            needed: 10,
            found: n,
        });
    }
    let (train, val, _) = split_sizes(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for (k, &r) in order.iter().enumerate() {
        ds.split[r] = if k < train {
            Split::Train
        } else if k < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(ds)
}
