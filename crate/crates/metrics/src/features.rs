use cascade_core::data::Dataset;

use crate::gbdt::FeatureMatrix;

#[derive(Debug, Clone, PartialEq)]
enum ColumnEncoding {
    Numeric {
        j: usize,
    },
    OneHot {
        j: usize,
        k: usize,
    },
    /// Category replaced by its relative frequency in the fitting data.
    Frequency {
        j: usize,
        freq: Vec<f64>,
    },
}

/// Turns a dataset into a learner-ready matrix: numerical columns as-is with
/// NaN for missing cells, categorical columns one-hot below `high_cardinality`
/// categories and frequency-encoded at or above it.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularEncoding {
    columns: Vec<ColumnEncoding>,
}

impl TabularEncoding {
    /// Fits on the union of `sources`; `exclude` skips a schema column (the
    /// prediction target).
    pub fn fit(sources: &[&Dataset], exclude: Option<usize>, high_cardinality: usize) -> Self {
        let schema = &sources[0].schema;
        let columns = schema
            .columns
            .iter()
            .enumerate()
            .filter(|(c, _)| Some(*c) != exclude)
            .map(|(c, col)| {
                let j = schema.block_position(c);
                match col.categories() {
                    None => ColumnEncoding::Numeric { j },
                    Some(cats) if cats.len() < high_cardinality => {
                        ColumnEncoding::OneHot { j, k: cats.len() }
                    }
                    Some(cats) => {
                        let mut freq = vec![0.0; cats.len()];
                        let mut n = 0.0;
                        for ds in sources {
                            for r in 0..ds.n_rows() {
                                freq[ds.cat_values.get(r, j) as usize] += 1.0;
                                n += 1.0;
                            }
                        }
                        freq.iter_mut().for_each(|f| *f /= f64::max(n, 1.0));
                        ColumnEncoding::Frequency { j, freq }
                    }
                }
            })
            .collect();
        Self { columns }
    }

    pub fn width(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match c {
                ColumnEncoding::OneHot { k, .. } => *k,
                _ => 1,
            })
            .sum()
    }

    pub fn transform(&self, ds: &Dataset) -> FeatureMatrix {
        let p = self.width();
        let mut data = Vec::with_capacity(ds.n_rows() * p);
        for r in 0..ds.n_rows() {
            for c in &self.columns {
                match c {
                    ColumnEncoding::Numeric { j } => data.push(ds.num(r, *j).unwrap_or(f64::NAN)),
                    ColumnEncoding::OneHot { j, k } => {
                        let v = ds.cat_values.get(r, *j) as usize;
                        data.extend((0..*k).map(|i| if i == v { 1.0 } else { 0.0 }));
                    }
                    ColumnEncoding::Frequency { j, freq } => {
                        data.push(freq[ds.cat_values.get(r, *j) as usize])
                    }
                }
            }
        }
        FeatureMatrix::new(ds.n_rows(), p, data)
    }
}
