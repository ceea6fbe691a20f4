//! End-to-end fit and evaluation, plus the two reference arms (plain ridge
//! and the x-only transfer reduction).

use std::path::Path;

use log::info;
use nalgebra::{DMatrix, DVector};

use crate::adapt::{build_h, build_s, fit_transfer, jitter_scale, solve_pencil, transform, TransferFit};
use crate::bundle::{ModelBundle, PartitionSummary, Predictions, FORMAT_VERSION};
use crate::config::RunConfig;
use crate::data::{apply_scaler, build_joint_stack, fit_scaler, load_csv, Dataset, JointStack, Role, Scaler};
use crate::dp::{coefficient_posterior, merge_small_clusters, run_gibbs, with_intercept, GibbsOutput};
use crate::error::{Error, Result};
use crate::regress::{fit_ridge, predict, rmse};
use crate::stochastics::Rng;

/// Training data and an optional target set (which may carry truth).
#[derive(Debug, Clone)]
pub struct Inputs {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

/// Loads the training file and the test file, or splits the training file
/// when no test file is configured and `split < 1`.
pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let train_path = cfg
        .train
        .as_ref()
        .ok_or_else(|| Error::Config("no training file given".into()))?;
    let full = load_csv(train_path, Some(&cfg.response))?;
    if let Some(test_path) = &cfg.test {
        let test = load_target(test_path, &cfg.response)?;
        return Ok(Inputs { train: full, test });
    }
    if cfg.split < 1.0 {
        let (train, test) = full.split(cfg.split, cfg.split_seed)?;
        return Ok(Inputs {
            train,
            test: Some(test),
        });
    }
    Ok(Inputs {
        train: full,
        test: None,
    })
}

/// Loads a target file. The response column is optional; a file with a
/// header but no rows yields `None`.
pub fn load_target(path: impl AsRef<Path>, response: &str) -> Result<Option<Dataset>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let headers = reader.headers().map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let has_response = headers.iter().any(|h| h == response);
    if reader.records().next().is_none() {
        return Ok(None);
    }
    let d = load_csv(path, has_response.then_some(response))?;
    Ok(Some(d.with_role(Role::Test)?))
}

/// Result of the mining stage. Labels are 0-based.
#[derive(Debug, Clone)]
pub struct Mined {
    pub labels: Vec<usize>,
    pub atoms: Vec<DVector<f64>>,
    /// Present when the sampler ran.
    pub gibbs: Option<GibbsOutput>,
}

impl Mined {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.atoms.len()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Mines latent domains on standardized features with an intercept column
/// against the z-scored response.
pub fn mine_domains(x_std: &DMatrix<f64>, zy: &DVector<f64>, cfg: &RunConfig) -> Result<Mined> {
    let design = with_intercept(x_std);
    if cfg.single_domain {
        let lambda = DVector::from_element(design.ncols(), 1.0);
        let (mean, _) = coefficient_posterior(&design, zy, &lambda)?;
        return Ok(Mined {
            labels: vec![0; zy.len()],
            atoms: vec![mean],
            gibbs: None,
        });
    }
    let hp = cfg.hyperparams(design.ncols());
    let out = run_gibbs(&mut Rng::new(cfg.seed), &design, zy, &hp, &cfg.gibbs())?;
    let (labels, atoms) = if cfg.merge_floor > 1 {
        merge_small_clusters(&out.labels, &out.atoms, cfg.merge_floor)
    } else {
        (out.labels.clone(), out.atoms.clone())
    };
    Ok(Mined {
        labels,
        atoms,
        gibbs: Some(out),
    })
}

/// Everything produced while fitting.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub bundle: ModelBundle,
    pub mined: Mined,
    pub transfer: TransferFit,
    pub stack: JointStack,
    /// Transferred training representation, `n_train × q`.
    pub train_z: DMatrix<f64>,
}

/// Standardized copies of train and test plus the z-scored response.
struct Normalized {
    scaler: Scaler,
    train: Dataset,
    test: Option<Dataset>,
    zy: DVector<f64>,
}

fn normalize(train: &Dataset, test: Option<&Dataset>) -> Result<Normalized> {
    let y = train
        .response
        .as_ref()
        .ok_or_else(|| Error::Dataset("training data requires a response".into()))?;
    if train.n() < 2 {
        return Err(Error::Dataset(format!("need at least 2 training rows, got {}", train.n())));
    }
    if let Some(t) = test {
        if t.names != train.names {
            return Err(Error::Dimension(format!(
                "test columns {:?} do not match training columns {:?}",
                t.names, train.names
            )));
        }
    }
    let scaler = fit_scaler(train);
    let zy = scaler.standardize_response(y)?;
    Ok(Normalized {
        train: apply_scaler(&scaler, train)?,
        test: test.map(|t| apply_scaler(&scaler, t)).transpose()?,
        scaler,
        zy,
    })
}

/// Fits the full model. The test features (unlabeled) take part in the
/// transfer stage as the target domain.
pub fn fit_model(train: &Dataset, test: Option<&Dataset>, cfg: &RunConfig) -> Result<Fitted> {
    cfg.validate()?;
    let norm = normalize(train, test).map_err(|e| e.in_stage("normalize"))?;

    let mined = mine_domains(&norm.train.features, &norm.zy, cfg).map_err(|e| e.in_stage("mine"))?;
    info!("mined {} latent domains with sizes {:?}", mined.atoms.len(), mined.sizes());

    let (stack, transfer) = (|| {
        let stack = build_joint_stack(&norm.train, norm.test.as_ref(), &mined.labels, cfg.alpha)?;
        let tcfg = cfg.transfer(train.p());
        let fit = fit_transfer(&stack, &tcfg, &train.names)?;
        Ok::<_, Error>((stack, fit))
    })()
    .map_err(|e| e.in_stage("adapt"))?;

    let (train_z, ridge) = (|| {
        let d_train = stack.d.select_columns(&stack.train_columns());
        let train_z = transform(&transfer.map, &d_train)?.transpose();
        let ridge = fit_ridge(&train_z, &norm.zy, cfg.ridge_lambda)?;
        Ok::<_, Error>((train_z, ridge))
    })()
    .map_err(|e| e.in_stage("fit"))?;

    let gibbs = mined.gibbs.as_ref();
    let bundle = ModelBundle {
        format_version: FORMAT_VERSION,
        feature_names: train.names.clone(),
        response_name: train.response_name.clone().unwrap_or_else(|| cfg.response.clone()),
        scaler: norm.scaler,
        partition: PartitionSummary {
            labels: mined.labels.iter().map(|l| l + 1).collect(),
            sizes: mined.sizes(),
            atoms: mined.atoms.iter().map(|a| a.iter().copied().collect()).collect(),
            sigma: gibbs.map(|g| g.sigma),
            nu: gibbs.map(|g| g.nu),
        },
        map: transfer.map.clone(),
        ridge,
        config: cfg.clone(),
    };
    Ok(Fitted {
        bundle,
        mined,
        transfer,
        stack,
        train_z,
    })
}

/// Test predictions and, when truth is available, RMSE in z-scored units.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: Predictions,
    pub rmse: Option<f64>,
}

fn score(scaler: &Scaler, pred_z: DVector<f64>, test: &Dataset) -> Result<Evaluation> {
    let raw = scaler.unstandardize_response(&pred_z)?;
    let rmse = match &test.response {
        Some(y) => Some(rmse(&pred_z, &scaler.standardize_response(y)?)?),
        None => None,
    };
    Ok(Evaluation {
        predictions: Predictions { z: pred_z, raw },
        rmse,
    })
}

/// Predicts `test` with a fitted bundle.
pub fn evaluate(bundle: &ModelBundle, test: &Dataset) -> Result<Evaluation> {
    (|| {
        let pred = bundle.predict(test)?;
        score(&bundle.scaler, pred.z, test)
    })()
    .map_err(|e| e.in_stage("predict"))
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub fitted: Fitted,
    /// `None` when the target set is empty.
    pub evaluation: Option<Evaluation>,
}

/// Fits on `train` and evaluates on `test`.
pub fn run_on(train: &Dataset, test: Option<&Dataset>, cfg: &RunConfig) -> Result<RunOutput> {
    let fitted = fit_model(train, test, cfg)?;
    let evaluation = test.map(|t| evaluate(&fitted.bundle, t)).transpose()?;
    Ok(RunOutput { fitted, evaluation })
}

/// Loads the configured data and runs the full pipeline.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunOutput> {
    let inputs = load_inputs(cfg).map_err(|e| e.in_stage("load"))?;
    run_on(&inputs.train, inputs.test.as_ref(), cfg)
}

/// Plain ridge on standardized features against the z-scored response.
pub fn ridge_baseline(train: &Dataset, test: &Dataset, ridge_lambda: f64) -> Result<Evaluation> {
    let norm = normalize(train, Some(test))?;
    let model = fit_ridge(&norm.train.features, &norm.zy, ridge_lambda)?;
    let test_std = norm.test.as_ref().expect("test was given");
    let pred = predict(&model, &test_std.features)?;
    score(&norm.scaler, pred, test)
}

/// Jitter for the constraint matrix of [`tca_x_only`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Jitter {
    /// Multiple of the constraint's mean diagonal.
    Relative(f64),
    Absolute(f64),
}

/// The reduction with no response row, no graph term and one source domain:
/// `min tr(Bᵀ(X S Xᵀ + μI)B)` subject to `Bᵀ X H Xᵀ B = I` on the stacked
/// standardized features, then ridge on the projected training rows.
pub fn tca_x_only(
    train: &Dataset,
    test: &Dataset,
    mu: f64,
    q: usize,
    jitter: Jitter,
    ridge_lambda: f64,
) -> Result<Evaluation> {
    let norm = normalize(train, Some(test))?;
    let test_std = norm.test.as_ref().expect("test was given");
    let (n_tr, n_te, p) = (train.n(), test.n(), train.p());
    let mut x = DMatrix::zeros(p, n_tr + n_te);
    x.columns_mut(0, n_tr).copy_from(&norm.train.features.transpose());
    x.columns_mut(n_tr, n_te).copy_from(&test_std.features.transpose());
    let s = build_s(&[n_tr, n_te])?;
    let h = build_h(n_tr + n_te);
    let a = &x * s * x.transpose() + DMatrix::identity(p, p) * mu;
    let c = &x * h * x.transpose();
    let scale = jitter_scale(&c);
    let jitter = match jitter {
        Jitter::Relative(r) => r * scale,
        Jitter::Absolute(a) => a,
    };
    let sol = solve_pencil(&a, &c, q, jitter, scale)?;
    let z_train = &norm.train.features * &sol.b;
    let model = fit_ridge(&z_train, &norm.zy, ridge_lambda)?;
    let pred = predict(&model, &(&test_std.features * &sol.b))?;
    score(&norm.scaler, pred, test)
}
