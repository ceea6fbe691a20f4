//! Benchmark harness: plain ridge, the x-only transfer reduction and the
//! full pipeline on the same split of each dataset.

use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;

use crate::bundle::save_bundle;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::pipeline::{load_inputs, ridge_baseline, run_on, tca_x_only, Evaluation, Inputs, Jitter};

pub const METHODS: [&str; 3] = ["RR", "TCA", "ACDT"];

/// Published reference RMSE for the six standard regression datasets.
pub fn reference_rmse(dataset: &str, method: &str) -> Option<f64> {
    let (rr, tca, acdt) = match dataset.to_ascii_lowercase().as_str() {
        "forest" | "forestfires" | "forest-fires" => (0.4650, 0.3946, 0.3761),
        "student" => (0.8091, 0.7585, 0.7542),
        "slump" => (0.3666, 0.3665, 0.3556),
        "stocktl" => (0.6717, 0.9429, 0.6703),
        "stockusd" => (0.6793, 0.6691, 0.6506),
        "airfoil" => (0.7067, 0.7067, 0.7039),
        _ => return None,
    };
    match method {
        "RR" => Some(rr),
        "TCA" => Some(tca),
        "ACDT" => Some(acdt),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub dataset: String,
    pub method: String,
    /// Split seed of the repeat, or `mean` for the summary row.
    pub seed: String,
    pub rmse: Option<f64>,
    pub rmse_std: Option<f64>,
    pub reference_rmse: Option<f64>,
    pub settings_digest: String,
    pub status: String,
}

#[derive(Debug, Clone, Default)]
pub struct BenchOptions {
    /// Number of splits per dataset; each repeat shifts the split seed and
    /// the sampler seed by its index. Zero is treated as one.
    pub repeats: usize,
    /// Directory for per-dataset bundles.
    pub out_dir: Option<PathBuf>,
}

/// Name used in the table: the configured name or the training file stem.
pub fn dataset_name(cfg: &RunConfig) -> String {
    cfg.name.clone().unwrap_or_else(|| {
        cfg.train
            .as_deref()
            .and_then(Path::file_stem)
            .map_or_else(|| "unnamed".to_string(), |s| s.to_string_lossy().into_owned())
    })
}

fn row(name: &str, method: &str, seed: String, digest: &str, result: &Result<Option<f64>>) -> BenchRow {
    let (rmse, status) = match result {
        Ok(Some(r)) => (Some(*r), "ok".to_string()),
        Ok(None) => (None, "no test truth".to_string()),
        Err(e) => (None, format!("failed: {e}")),
    };
    BenchRow {
        dataset: name.to_string(),
        method: method.to_string(),
        seed,
        rmse,
        rmse_std: None,
        reference_rmse: reference_rmse(name, method),
        settings_digest: digest.to_string(),
        status,
    }
}

fn bundle_path(dir: &Path, name: &str, repeat: usize, repeats: usize) -> PathBuf {
    if repeats > 1 {
        dir.join(format!("{name}.r{repeat}.bundle.json"))
    } else {
        dir.join(format!("{name}.bundle.json"))
    }
}

fn run_repeat(cfg: &RunConfig, inputs: &Inputs, name: &str, bundle_out: Option<PathBuf>) -> [Result<Option<f64>>; 3] {
    let Some(test) = inputs.test.as_ref() else {
        let none = || Err(Error::Config("no test set; set split < 1 or give a test file".into()));
        return [none(), none(), none()];
    };
    let rmse_of = |e: Result<Evaluation>| e.map(|ev| ev.rmse);
    let rr = rmse_of(ridge_baseline(&inputs.train, test, cfg.ridge_lambda));
    let q = cfg.resolved_q(inputs.train.p()).min(inputs.train.p());
    let tca = rmse_of(tca_x_only(
        &inputs.train,
        test,
        cfg.mu,
        q,
        Jitter::Relative(cfg.jitter),
        cfg.ridge_lambda,
    ));
    let acdt = run_on(&inputs.train, Some(test), cfg).and_then(|out| {
        if let Some(path) = bundle_out {
            save_bundle(&out.fitted.bundle, path)?;
        }
        Ok(out.evaluation.and_then(|e| e.rmse))
    });
    if let Err(e) = &acdt {
        warn!("{name}: pipeline failed: {e}");
    }
    [rr, tca, acdt]
}

fn bench_one(cfg: &RunConfig, opts: &BenchOptions) -> Vec<BenchRow> {
    let name = dataset_name(cfg);
    let repeats = opts.repeats.max(1);
    let mut per_method: Vec<Vec<f64>> = vec![Vec::new(); METHODS.len()];
    let mut rows = Vec::new();
    for r in 0..repeats {
        let mut cfg_r = cfg.clone();
        cfg_r.split_seed = cfg.split_seed.wrapping_add(r as u64);
        cfg_r.seed = cfg.seed.wrapping_add(r as u64);
        let digest = cfg_r.settings_digest();
        let results = match load_inputs(&cfg_r) {
            Ok(inputs) => {
                let out = opts.out_dir.as_deref().map(|d| bundle_path(d, &name, r, repeats));
                run_repeat(&cfg_r, &inputs, &name, out)
            }
            Err(e) => {
                let msg = e.to_string();
                std::array::from_fn(|_| Err(Error::Dataset(msg.clone())))
            }
        };
        for (k, res) in results.iter().enumerate() {
            if let Ok(Some(v)) = res {
                per_method[k].push(*v);
            }
            rows.push(row(&name, METHODS[k], cfg_r.split_seed.to_string(), &digest, res));
        }
    }
    if repeats > 1 {
        let digest = cfg.settings_digest();
        for (k, vals) in per_method.iter().enumerate() {
            let summary = if vals.len() == repeats {
                let mean = vals.iter().sum::<f64>() / repeats as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / repeats as f64;
                let mut r = row(&name, METHODS[k], "mean".into(), &digest, &Ok(Some(mean)));
                r.rmse_std = Some(var.sqrt());
                r
            } else {
                let failed = Err(Error::Dataset(format!("{} of {repeats} repeats failed", repeats - vals.len())));
                row(&name, METHODS[k], "mean".into(), &digest, &failed)
            };
            rows.push(summary);
        }
    }
    rows
}

/// Runs every dataset (concurrently) and returns the rows in input order.
/// A failing dataset only marks its own rows.
pub fn bench(configs: &[RunConfig], opts: &BenchOptions) -> Result<Vec<BenchRow>> {
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let per_dataset: Vec<Vec<BenchRow>> = configs.par_iter().map(|c| bench_one(c, opts)).collect();
    Ok(per_dataset.into_iter().flatten().collect())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn write_bench_csv(rows: &[BenchRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "dataset",
        "method",
        "seed",
        "rmse",
        "rmse_std",
        "reference_rmse",
        "settings_digest",
        "status",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.dataset.as_str(),
            r.method.as_str(),
            r.seed.as_str(),
            &fmt(r.rmse),
            &fmt(r.rmse_std),
            &fmt(r.reference_rmse),
            r.settings_digest.as_str(),
            r.status.as_str(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
