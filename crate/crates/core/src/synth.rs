//! Synthetic data with planted regression domains.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, Role};
use crate::error::{Error, Result};
use crate::stochastics::Rng;

/// Generator settings. Domain `k` draws every feature from `N(shift_k, 1)`
/// and sets `y = x·atom_k + intercept_k + noise·ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub atoms: Vec<Vec<f64>>,
    /// Per-domain intercepts; empty means all zero.
    pub intercepts: Vec<f64>,
    pub train_sizes: Vec<usize>,
    /// Per-domain test sizes; empty or all zero means no test set.
    pub test_sizes: Vec<usize>,
    /// Per-domain feature mean; empty means all zero.
    pub shifts: Vec<f64>,
    pub noise: f64,
    pub seed: u64,
}

/// Generated data with 1-based planted labels.
#[derive(Debug, Clone)]
pub struct Synth {
    pub train: Dataset,
    pub train_labels: Vec<usize>,
    pub test: Option<Dataset>,
    pub test_labels: Vec<usize>,
}

impl SynthSpec {
    pub fn domains(&self) -> usize {
        self.atoms.len()
    }

    pub fn p(&self) -> usize {
        self.atoms.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.domains();
        if m == 0 || self.p() == 0 {
            return Err(Error::param("need at least one domain with at least one coefficient"));
        }
        if self.atoms.iter().any(|a| a.len() != self.p()) {
            return Err(Error::param("all atoms must have the same length"));
        }
        for (what, len) in [
            ("train sizes", self.train_sizes.len()),
            ("test sizes", if self.test_sizes.is_empty() { m } else { self.test_sizes.len() }),
            ("intercepts", if self.intercepts.is_empty() { m } else { self.intercepts.len() }),
            ("shifts", if self.shifts.is_empty() { m } else { self.shifts.len() }),
        ] {
            if len != m {
                return Err(Error::param(format!("{what}: expected {m} entries, got {len}")));
            }
        }
        if self.train_sizes.iter().sum::<usize>() == 0 {
            return Err(Error::param("no training instances requested"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::param(format!("noise must be >= 0, got {}", self.noise)));
        }
        let all = self.atoms.iter().flatten().chain(&self.intercepts).chain(&self.shifts);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::param("non-finite generator parameter"));
        }
        Ok(())
    }

    fn at(v: &[f64], k: usize) -> f64 {
        v.get(k).copied().unwrap_or(0.0)
    }
}

fn draw(rng: &mut Rng, spec: &SynthSpec, sizes: &[usize], role: Role) -> Result<(Dataset, Vec<usize>)> {
    let p = spec.p();
    let mut rows: Vec<(Vec<f64>, f64, usize)> = Vec::new();
    for (k, &size) in sizes.iter().enumerate() {
        let shift = SynthSpec::at(&spec.shifts, k);
        let intercept = SynthSpec::at(&spec.intercepts, k);
        for _ in 0..size {
            let x: Vec<f64> = (0..p).map(|_| shift + rng.standard_normal()).collect();
            let signal: f64 = x.iter().zip(&spec.atoms[k]).map(|(a, b)| a * b).sum();
            let y = signal + intercept + spec.noise * rng.standard_normal();
            rows.push((x, y, k + 1));
        }
    }
    rng.shuffle(&mut rows);
    let n = rows.len();
    let features = DMatrix::from_fn(n, p, |i, j| rows[i].0[j]);
    let response = DVector::from_fn(n, |i, _| rows[i].1);
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    let data = Dataset::new(features, Some(response), names, Some("y".into()), role)?;
    Ok((data, rows.iter().map(|r| r.2).collect()))
}

pub fn generate(spec: &SynthSpec) -> Result<Synth> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let (train, train_labels) = draw(&mut rng, spec, &spec.train_sizes, Role::Train)?;
    let (test, test_labels) = if spec.test_sizes.iter().sum::<usize>() > 0 {
        let (d, l) = draw(&mut rng, spec, &spec.test_sizes, Role::Test)?;
        (Some(d), l)
    } else {
        (None, Vec::new())
    };
    Ok(Synth {
        train,
        train_labels,
        test,
        test_labels,
    })
}

fn write_labels(labels: &[usize], path: &Path) -> Result<()> {
    let mut out = String::from("domain\n");
    for l in labels {
        out.push_str(&format!("{l}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes `train.csv`, `train_labels.csv` and, when present, `test.csv` and
/// `test_labels.csv` into `dir`.
pub fn write_synth(s: &Synth, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    s.train.write_csv(dir.join("train.csv"))?;
    write_labels(&s.train_labels, &dir.join("train_labels.csv"))?;
    if let Some(test) = &s.test {
        test.write_csv(dir.join("test.csv"))?;
        write_labels(&s.test_labels, &dir.join("test_labels.csv"))?;
    }
    Ok(())
}
