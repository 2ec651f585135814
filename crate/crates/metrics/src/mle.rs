use cascade_core::data::Dataset;
use serde::{Deserialize, Serialize};

use crate::auc::auc;
use crate::detection::LearnerConfig;
use crate::features::TabularEncoding;
use crate::gbdt::{Gbdt, Loss};
use crate::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MleTask {
    /// AUC; one-vs-rest macro average for more than two classes.
    Classification,
    /// RMSE of the target standardized by real-train mean and std.
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub task: MleTask,
    pub target: String,
    pub metric_real: f64,
    pub metric_synth: f64,
    pub score: f64,
}

struct Target {
    /// Rows with an observed target.
    rows: Vec<usize>,
    values: Vec<f64>,
}

fn target_of(ds: &Dataset, c: usize) -> Target {
    let j = ds.schema.block_position(c);
    if ds.schema.columns[c].is_categorical() {
        Target {
            rows: ds.all_rows(),
            values: (0..ds.n_rows())
                .map(|r| f64::from(ds.cat_values.get(r, j)))
                .collect(),
        }
    } else {
        let (rows, values) = (0..ds.n_rows())
            .filter_map(|r| Some((r, ds.num(r, j)?)))
            .unzip();
        Target { rows, values }
    }
}

/// Trains on `train`, predicts `test`, one model per class (or a single one for
/// binary targets), and returns the macro AUC over classes present in `test`.
fn classification_metric(
    x_train: &crate::FeatureMatrix,
    y_train: &[f64],
    x_test: &crate::FeatureMatrix,
    y_test: &[f64],
    k: usize,
    cfg: &LearnerConfig,
) -> Result<f64, MetricsError> {
    let classes: Vec<usize> = if k == 2 { vec![1] } else { (0..k).collect() };
    let mut sum = 0.0;
    let mut used = 0usize;
    for c in classes {
        let labels: Vec<bool> = y_test.iter().map(|&v| v as usize == c).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        let y: Vec<f64> = y_train
            .iter()
            .map(|&v| if v as usize == c { 1.0 } else { 0.0 })
            .collect();
        let model = Gbdt::fit(x_train, &y, Loss::Logistic, &cfg.gbdt)?;
        sum += auc(&model.predict_raw(x_test), &labels);
        used += 1;
    }
    Ok(if used == 0 { 0.5 } else { sum / used as f64 })
}

/// Train-on-synthetic / test-on-real gap: `|M_S − M_R|` where both models are
/// evaluated on `real_test`.
pub fn mle_score(
    real_train: &Dataset,
    real_test: &Dataset,
    synth: &Dataset,
    cfg: &LearnerConfig,
) -> Result<MleResult, MetricsError> {
    crate::check_schemas(real_train, synth)?;
    crate::check_schemas(real_train, real_test)?;
    let c = real_train
        .schema
        .target_column()
        .ok_or(MetricsError::NoTarget)?;
    let name = real_train.schema.columns[c].name.clone();
    let (tr, te, sy) = (
        target_of(real_train, c),
        target_of(real_test, c),
        target_of(synth, c),
    );
    if tr.rows.is_empty() || sy.rows.is_empty() {
        return Err(MetricsError::EmptyTrainingSet);
    }
    if te.rows.is_empty() {
        return Err(MetricsError::TooFewRows {
            needed: 1,
            found: 0,
        });
    }
    let encode = |ds: &Dataset, rows: &[usize]| {
        let sub = ds.subset(rows);
        (
            TabularEncoding::fit(&[&sub], Some(c), cfg.high_cardinality),
            sub,
        )
    };
    let (enc_r, sub_r) = encode(real_train, &tr.rows);
    let (enc_s, sub_s) = encode(synth, &sy.rows);
    let test = real_test.subset(&te.rows);
    let (xr, xs) = (enc_r.transform(&sub_r), enc_s.transform(&sub_s));
    let (tr_on_r, tr_on_s) = (enc_r.transform(&test), enc_s.transform(&test));

    let (task, m_r, m_s) = match real_train.schema.columns[c].categories() {
        Some(cats) => {
            let single = |v: &[f64]| v.iter().all(|&x| x == v[0]);
            if single(&tr.values) {
                return Err(MetricsError::SingleClassTarget(name));
            }
            let k = cats.len();
            // a model fitted to one class can only score every row alike
            let m_s = if single(&sy.values) {
                0.5
            } else {
                classification_metric(&xs, &sy.values, &tr_on_s, &te.values, k, cfg)?
            };
            (
                MleTask::Classification,
                classification_metric(&xr, &tr.values, &tr_on_r, &te.values, k, cfg)?,
                m_s,
            )
        }
        None => {
            let n = tr.values.len() as f64;
            let mean = tr.values.iter().sum::<f64>() / n;
            let sd = (tr.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let sd = if sd > 0.0 { sd } else { 1.0 };
            let z = |v: &[f64]| v.iter().map(|x| (x - mean) / sd).collect::<Vec<_>>();
            let y_test = z(&te.values);
            let rmse = |x: &crate::FeatureMatrix,
                        y: &[f64],
                        x_test: &crate::FeatureMatrix|
             -> Result<f64, MetricsError> {
                let pred = Gbdt::fit(x, y, Loss::Squared, &cfg.gbdt)?.predict(x_test);
                Ok((pred
                    .iter()
                    .zip(&y_test)
                    .map(|(p, t)| (p - t).powi(2))
                    .sum::<f64>()
                    / y_test.len() as f64)
                    .sqrt())
            };
            (
                MleTask::Regression,
                rmse(&xr, &z(&tr.values), &tr_on_r)?,
                rmse(&xs, &z(&sy.values), &tr_on_s)?,
            )
        }
    };
    Ok(MleResult {
        task,
        target: name,
        metric_real: m_r,
        metric_synth: m_s,
        score: (m_s - m_r).abs(),
    })
}
