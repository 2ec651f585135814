use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cascade_core::cascade::{fit_cascade, CascadeError, LossRecord};
use cascade_core::data::{
    load_dataset, simulate_mnar, split_dataset, Dataset, FeatureSchema, Split,
};
use cascade_core::highres::transport::{
    transport_cost_gap, wd_trace, TransportData, TransportReport,
};
use cascade_metrics::bivariate::bin_index;
use cascade_metrics::evaluate as evaluate_metrics;
use log::info;
use serde::Serialize;

use crate::bundle::{Model, ModelBundle};
use crate::config::{Precision, RunConfig};
use crate::UserResult;

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let out = RunConfig::require("paths.out", &cfg.paths.out)
        .user()?
        .to_path_buf();
    fs::create_dir_all(&out)
        .with_context(|| format!("creating output directory {}", out.display()))?;
    fs::write(out.join("config.json"), cfg.to_json()).context("writing the effective config")?;
    Ok(out)
}

fn load_schema(cfg: &RunConfig) -> Result<FeatureSchema> {
    let path = RunConfig::require("paths.schema", &cfg.paths.schema).user()?;
    FeatureSchema::load(path).user()
}

fn load(path: &Path, schema: &FeatureSchema) -> Result<Dataset> {
    load_dataset(path, schema)
        .user()
        .with_context(|| format!("loading {}", path.display()))
}

fn write_csv<S: Serialize>(path: &Path, rows: impl IntoIterator<Item = S>) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn fit_error(e: CascadeError) -> anyhow::Error {
    match e {
        CascadeError::Nn(_) => anyhow::Error::new(e),
        other => crate::UserError::wrap(other),
    }
}

pub fn fit(cfg: &RunConfig) -> Result<()> {
    let schema = load_schema(cfg)?;
    let data = RunConfig::require("paths.data", &cfg.paths.data).user()?;
    let ds = split_dataset(load(data, &schema)?, cfg.split.seed).user()?;
    let out = out_dir(cfg)?;
    info!(
        "fitting on {} training rows",
        ds.rows_in(Split::Train).len()
    );
    let (model, log): (Model, Vec<LossRecord>) = match cfg.precision {
        Precision::F32 => {
            let (m, log) =
                fit_cascade::<f32>(&ds, &cfg.encoder, &cfg.lowres, &cfg.highres, &cfg.training)
                    .map_err(fit_error)?;
            (Model::F32(m), log)
        }
        Precision::F64 => {
            let (m, log) =
                fit_cascade::<f64>(&ds, &cfg.encoder, &cfg.lowres, &cfg.highres, &cfg.training)
                    .map_err(fit_error)?;
            (Model::F64(m), log)
        }
    };
    write_csv(&out.join("losses.csv"), &log)?;
    ModelBundle {
        model,
        config: cfg.clone(),
    }
    .save(&out.join("bundle"))?;
    info!("bundle written to {}", out.join("bundle").display());
    Ok(())
}

fn load_bundle(cfg: &RunConfig) -> Result<ModelBundle> {
    let dir = RunConfig::require("paths.bundle", &cfg.paths.bundle).user()?;
    ModelBundle::load(dir)
        .user()
        .with_context(|| format!("loading bundle {}", dir.display()))
}

pub fn sample(cfg: &RunConfig) -> Result<()> {
    let bundle = load_bundle(cfg)?;
    let out = out_dir(cfg)?;
    let s = &cfg.sampling;
    let ds = bundle.model.sample(s.n, s.steps, s.seed);
    ds.write_csv(&out.join("synthetic.csv"))?;
    info!("{} rows written", ds.n_rows());
    Ok(())
}

pub fn simulate_missing(cfg: &RunConfig) -> Result<()> {
    let schema = load_schema(cfg)?;
    let data = RunConfig::require("paths.data", &cfg.paths.data).user()?;
    let ds = load(data, &schema)?;
    let out = out_dir(cfg)?;
    let masked = simulate_mnar(&ds, cfg.mnar.p, cfg.mnar.seed).user()?;
    masked.write_csv(&out.join("masked.csv"))?;
    let mask = fs::File::create(out.join("mask.csv"))?;
    masked.write_mask_csv(std::io::BufWriter::new(mask))?;
    // stage 2 may add the missing label to categorical columns
    fs::write(out.join("schema.json"), masked.schema.to_json())?;
    Ok(())
}

#[derive(Serialize)]
struct DensityCell {
    x_bin: usize,
    y_bin: usize,
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
    real: usize,
    synth: usize,
}

/// 2-D histogram counts of every pair of numerical columns on a grid fitted
/// to the real data's range.
fn density_grids(real: &Dataset, synth: &Dataset, bins: usize, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let names: Vec<&str> = real
        .schema
        .numerical_columns()
        .iter()
        .map(|&c| real.schema.columns[c].name.as_str())
        .collect();
    let range = |j: usize| {
        let obs = real.observed(j, &real.all_rows());
        let lo = obs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = obs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if obs.is_empty() {
            (0.0, 1.0)
        } else {
            (lo, hi)
        }
    };
    let bins = bins.max(1);
    for a in 0..names.len() {
        for b in a + 1..names.len() {
            let (ra, rb) = (range(a), range(b));
            let count = |ds: &Dataset| {
                let mut grid = vec![0usize; bins * bins];
                for r in 0..ds.n_rows() {
                    if let (Some(x), Some(y)) = (ds.num(r, a), ds.num(r, b)) {
                        grid[bin_index(x, ra.0, ra.1, bins) * bins
                            + bin_index(y, rb.0, rb.1, bins)] += 1;
                    }
                }
                grid
            };
            let (gr, gs) = (count(real), count(synth));
            let edge = |(lo, hi): (f64, f64), i: usize| lo + (hi - lo) * i as f64 / bins as f64;
            let cells = (0..bins * bins).map(|i| {
                let (x, y) = (i / bins, i % bins);
                DensityCell {
                    x_bin: x,
                    y_bin: y,
                    x_lo: edge(ra, x),
                    x_hi: edge(ra, x + 1),
                    y_lo: edge(rb, y),
                    y_hi: edge(rb, y + 1),
                    real: gr[i],
                    synth: gs[i],
                }
            });
            let file: String = format!("{}__{}.csv", names[a], names[b])
                .chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || "._-".contains(c) {
                        c
                    } else {
                        '_'
                    }
                })
                .collect();
            write_csv(&dir.join(file), cells)?;
        }
    }
    Ok(())
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let schema = load_schema(cfg)?;
    let p = &cfg.paths;
    let (train, test) = match (&p.real_train, &p.real_test) {
        (Some(tr), Some(te)) => (load(tr, &schema)?, load(te, &schema)?),
        (None, None) => {
            let data = p
                .data
                .as_deref()
                .ok_or(crate::config::ConfigError::Missing(
                    "paths.real_train/real_test or paths.data",
                ))
                .user()?;
            let ds = split_dataset(load(data, &schema)?, cfg.split.seed).user()?;
            (ds.partition(Split::Train), ds.partition(Split::Test))
        }
        _ => bail!(crate::UserError::wrap(crate::config::ConfigError::Invalid(
            "set both paths.real_train and paths.real_test".into()
        ))),
    };
    let synth = load(RunConfig::require("paths.synth", &p.synth).user()?, &schema)?;
    let out = out_dir(cfg)?;
    let report = evaluate_metrics(
        &train,
        &test,
        &synth,
        cfg.metrics.seed,
        &cfg.metrics.evaluate,
    )
    .user()?;
    fs::write(out.join("report.json"), report.to_json())?;
    report.write_summary_csv(fs::File::create(out.join("summary.csv"))?)?;
    report.write_shape_csv(fs::File::create(out.join("shape.csv"))?)?;
    write_csv(&out.join("pairs.csv"), &report.pairs)?;
    density_grids(
        &train,
        &synth,
        cfg.metrics.density_bins,
        &out.join("density"),
    )?;
    info!("shape {:.4} trend {:.4}", report.shape, report.trend);
    Ok(())
}

#[derive(Serialize)]
struct WdRow<'a> {
    t: f64,
    feature: &'a str,
    wd_coupled: f64,
    wd_independent: f64,
}

#[derive(Serialize)]
struct TransportOutput<'a> {
    #[serde(flatten)]
    report: &'a TransportReport,
    gap_z: f64,
    feature_names: Vec<&'a str>,
    wd_trace: Vec<WdRow<'a>>,
}

pub fn transport_report(cfg: &RunConfig) -> Result<()> {
    let bundle = load_bundle(cfg)?;
    let schema = bundle.model.schema().clone();
    let data = cfg
        .paths
        .data
        .clone()
        .or_else(|| bundle.config.paths.data.clone());
    let data = RunConfig::require("paths.data", &data).user()?;
    let ds = split_dataset(load(data, &schema)?, bundle.config.split.seed).user()?;
    let t = &cfg.transport;
    if t.n_mc < 2 || t.wd_samples == 0 {
        bail!(crate::UserError::wrap(crate::config::ConfigError::Invalid(
            "transport.n_mc must be >= 2 and wd_samples >= 1".into()
        )));
    }
    let out = out_dir(cfg)?;
    let td = TransportData::new(&ds, bundle.model.preprocessor());
    let encoders = bundle.model.encoders();
    let report = transport_cost_gap(&td, encoders, t.n_mc, t.seed);
    if !report.bound_guaranteed {
        log::warn!("non-tree encoders: the transport bound is not guaranteed");
    }
    let names: Vec<&str> = schema
        .numerical_columns()
        .iter()
        .map(|&c| schema.columns[c].name.as_str())
        .collect();
    let trace = wd_trace(&td, encoders, &t.wd_times, t.wd_samples, t.seed);
    let rows: Vec<WdRow> = trace
        .iter()
        .map(|p| WdRow {
            t: p.t,
            feature: names[p.feature],
            wd_coupled: p.wd_coupled,
            wd_independent: p.wd_independent,
        })
        .collect();
    write_csv(&out.join("wd_trace.csv"), &rows)?;
    let output = TransportOutput {
        report: &report,
        gap_z: report.gap_z(),
        feature_names: names.clone(),
        wd_trace: rows,
    };
    fs::write(
        out.join("transport.json"),
        serde_json::to_string_pretty(&output)?,
    )?;
    info!(
        "coupled {:.4} vs independent {:.4} (z = {:.1})",
        report.cost_coupled,
        report.cost_independent,
        report.gap_z()
    );
    Ok(())
}
