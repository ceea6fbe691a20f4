//! Run configuration and its flat `key=value` file format.
//!
//! Keys mirror the CLI flags without the leading dashes (`burn-in`,
//! `ridge-lambda`, ...). Blank lines and lines starting with `#` are
//! ignored. Relative paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapt::TransferConfig;
use crate::dp::{GibbsConfig, Hyperparams, PartitionRule};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: Option<String>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub response: String,

    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub tau: f64,
    /// Output dimension; `None` uses half the feature count, rounded up.
    pub q: Option<usize>,
    pub knn: usize,
    pub jitter: f64,

    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub partition_rule: PartitionRule,
    pub a0: f64,
    pub b0: f64,
    pub av: f64,
    pub bv: f64,
    pub ai: f64,
    pub bi: f64,
    /// Clusters smaller than this are merged into the nearest atom before
    /// transfer; 0 disables merging.
    pub merge_floor: usize,
    /// Skip mining and treat the whole training set as one latent domain.
    pub single_domain: bool,

    pub ridge_lambda: f64,
    /// Training fraction used when no test file is given; 1 keeps every row
    /// for training.
    pub split: f64,
    pub split_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TransferConfig::default();
        let g = GibbsConfig::default();
        RunConfig {
            name: None,
            train: None,
            test: None,
            response: "y".into(),
            alpha: t.alpha,
            beta: t.beta,
            mu: t.mu,
            tau: t.tau,
            q: None,
            knn: t.knn,
            jitter: t.jitter,
            sweeps: g.sweeps,
            burn_in: g.burn_in,
            seed: g.seed,
            partition_rule: g.partition_rule,
            a0: 50.0,
            b0: 1.0,
            av: 1.0,
            bv: 1.0,
            ai: 1.0,
            bi: 1.0,
            merge_floor: 0,
            single_domain: false,
            ridge_lambda: 1e-3,
            split: 0.7,
            split_seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{value}' for '{key}'"))),
    }
}

impl RunConfig {
    /// Sets one key. `base` resolves relative paths.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<()> {
        let path = |v: &str| {
            let p = PathBuf::from(v);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        match key {
            "name" => self.name = Some(value.to_string()),
            "train" => self.train = Some(path(value)),
            "test" => self.test = if value.is_empty() { None } else { Some(path(value)) },
            "response" => self.response = value.to_string(),
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "mu" => self.mu = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "q" => {
                self.q = match value {
                    "auto" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "knn" => self.knn = parse(key, value)?,
            "jitter" => self.jitter = parse(key, value)?,
            "sweeps" => self.sweeps = parse(key, value)?,
            "burn-in" => self.burn_in = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "partition-rule" => self.partition_rule = value.parse()?,
            "a0" => self.a0 = parse(key, value)?,
            "b0" => self.b0 = parse(key, value)?,
            "av" => self.av = parse(key, value)?,
            "bv" => self.bv = parse(key, value)?,
            "ai" => self.ai = parse(key, value)?,
            "bi" => self.bi = parse(key, value)?,
            "merge-floor" => self.merge_floor = parse(key, value)?,
            "single-domain" => self.single_domain = parse_bool(key, value)?,
            "ridge-lambda" => self.ridge_lambda = parse(key, value)?,
            "split" => self.split = parse(key, value)?,
            "split-seed" => self.split_seed = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies every `key=value` line of `text`.
    pub fn apply_text(&mut self, text: &str, base: Option<&Path>) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            self.set(k.trim(), v.trim(), base)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, path.parent())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_file(path)?;
        Ok(cfg)
    }

    /// Output dimension for `p` features.
    pub fn resolved_q(&self, p: usize) -> usize {
        self.q.unwrap_or(p.div_ceil(2).max(1))
    }

    pub fn transfer(&self, p: usize) -> TransferConfig {
        TransferConfig {
            alpha: self.alpha,
            beta: self.beta,
            mu: self.mu,
            tau: self.tau,
            q: self.resolved_q(p),
            knn: self.knn,
            jitter: self.jitter,
        }
    }

    pub fn gibbs(&self) -> GibbsConfig {
        GibbsConfig {
            sweeps: self.sweeps,
            burn_in: self.burn_in,
            seed: self.seed,
            partition_rule: self.partition_rule,
        }
    }

    /// Hyperparameters for `k` regression coefficients (intercept included).
    pub fn hyperparams(&self, k: usize) -> Hyperparams {
        Hyperparams::uniform(k, self.a0, self.b0, self.av, self.bv, self.ai, self.bi)
    }

    pub fn validate(&self) -> Result<()> {
        self.gibbs().validate()?;
        if !(self.split > 0.0 && self.split <= 1.0) {
            return Err(Error::Config(format!("split must be in (0, 1], got {}", self.split)));
        }
        if self.ridge_lambda.is_nan() || self.ridge_lambda < 0.0 {
            return Err(Error::Config("ridge-lambda must be >= 0".into()));
        }
        Ok(())
    }

    /// Canonical `key=value` listing of the numerical settings (paths and
    /// name excluded), one per line in a fixed order.
    pub fn settings_text(&self) -> String {
        let q = self.q.map_or("auto".to_string(), |q| q.to_string());
        let rule = match self.partition_rule {
            PartitionRule::LastSweep => "last-sweep",
            PartitionRule::Modal => "modal",
        };
        [
            format!("response={}", self.response),
            format!("alpha={}", self.alpha),
            format!("beta={}", self.beta),
            format!("mu={}", self.mu),
            format!("tau={}", self.tau),
            format!("q={q}"),
            format!("knn={}", self.knn),
            format!("jitter={}", self.jitter),
            format!("sweeps={}", self.sweeps),
            format!("burn-in={}", self.burn_in),
            format!("seed={}", self.seed),
            format!("partition-rule={rule}"),
            format!("a0={}", self.a0),
            format!("b0={}", self.b0),
            format!("av={}", self.av),
            format!("bv={}", self.bv),
            format!("ai={}", self.ai),
            format!("bi={}", self.bi),
            format!("merge-floor={}", self.merge_floor),
            format!("single-domain={}", self.single_domain),
            format!("ridge-lambda={}", self.ridge_lambda),
            format!("split={}", self.split),
            format!("split-seed={}", self.split_seed),
        ]
        .join("\n")
    }

    /// Short hex digest of [`settings_text`](Self::settings_text).
    pub fn settings_digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let hash = Sha256::digest(self.settings_text().as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
