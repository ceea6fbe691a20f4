use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use acdt::adapt::{fit_transfer, write_spectrum_csv};
use acdt::bench::{bench, write_bench_csv, BenchOptions};
use acdt::bundle::{load_bundle, save_bundle};
use acdt::config::RunConfig;
use acdt::data::{apply_scaler, build_joint_stack, fit_scaler, load_csv};
use acdt::dp::{canonical_labels, write_trace_csv};
use acdt::pipeline::{evaluate, fit_model, load_inputs, load_target, mine_domains, run_on, Evaluation};
use acdt::projection::{emit_projection, write_projection_csv, ProjectionMode};
use acdt::synth::{generate, write_synth, SynthSpec};
use acdt::{Error, Result};

#[derive(Parser)]
#[command(name = "acdt", version, about = "Latent-domain mining and cross-domain transfer for linear regression")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine latent domains in the training data and write per-row labels.
    Mine {
        #[command(flatten)]
        run: RunArgs,
        /// Labels CSV (`row,domain`); printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-sweep trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Learn the transfer map and write it as JSON.
    Adapt {
        #[command(flatten)]
        run: RunArgs,
        /// Labels CSV with a 1-based `domain` column; mined when omitted.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Spectrum CSV of S, L and the selected eigenvalues.
        #[arg(long)]
        spectrum: Option<PathBuf>,
    },
    /// Fit the full model and save the bundle.
    Fit {
        #[command(flatten)]
        run: RunArgs,
        /// Bundle path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict a CSV with a saved bundle.
    Predict {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Predictions CSV; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit, predict and report RMSE.
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory for bundle.json, predictions.csv and trace.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run plain ridge, the x-only reduction and the full pipeline on each
    /// configured dataset.
    Bench {
        /// One config file per dataset.
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Output directory for results.csv and bundles.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        /// Worker threads (defaults to the number of CPUs).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Generate synthetic data with planted regression domains.
    Synth {
        /// Coefficient atoms, `;` between domains and `,` between entries,
        /// e.g. `2,3;-2,-3`.
        #[arg(long, allow_hyphen_values = true)]
        atoms: String,
        /// Training rows per domain, e.g. `100,100`.
        #[arg(long)]
        sizes: String,
        /// Test rows per domain.
        #[arg(long)]
        test_sizes: Option<String>,
        /// Feature mean per domain.
        #[arg(long, allow_hyphen_values = true)]
        shifts: Option<String>,
        /// Intercept per domain.
        #[arg(long, allow_hyphen_values = true)]
        intercepts: Option<String>,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write 2-D coordinates with domain labels for plotting.
    Project {
        #[arg(long)]
        bundle: PathBuf,
        /// The training CSV the bundle was fit on.
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        /// `pca` or `transferred`.
        #[arg(long, default_value = "pca")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Flags shared by every stage; each overrides the config file.
#[derive(Args, Default)]
struct RunArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training CSV with a header row.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Target-domain CSV; its response column is optional.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Response column name (default `y`).
    #[arg(long)]
    response: Option<String>,
    /// Shrink factor on the z-scored training response.
    #[arg(long)]
    alpha: Option<f64>,
    /// Penalty weight on the response coordinate of the map.
    #[arg(long)]
    beta: Option<f64>,
    /// Weight of the map penalty.
    #[arg(long)]
    mu: Option<f64>,
    /// Weight of the manifold (graph Laplacian) term.
    #[arg(long)]
    tau: Option<f64>,
    /// Number of transferred components.
    #[arg(long)]
    q: Option<usize>,
    /// Neighbours per instance in the graph.
    #[arg(long)]
    knn: Option<usize>,
    /// Relative diagonal jitter on the variance matrix.
    #[arg(long)]
    jitter: Option<f64>,
    /// Gibbs sweeps.
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Sampler seed.
    #[arg(long)]
    seed: Option<u64>,
    /// `last-sweep` or `modal`.
    #[arg(long)]
    partition_rule: Option<String>,
    #[arg(long)]
    a0: Option<f64>,
    #[arg(long)]
    b0: Option<f64>,
    /// Gamma shape and rate for the concentration parameter.
    #[arg(long)]
    av: Option<f64>,
    #[arg(long)]
    bv: Option<f64>,
    #[arg(long)]
    ai: Option<f64>,
    #[arg(long)]
    bi: Option<f64>,
    /// Merge mined domains smaller than this into the nearest atom (0 disables).
    #[arg(long)]
    merge_floor: Option<usize>,
    /// Skip mining and treat the training set as one domain.
    #[arg(long)]
    single_domain: bool,
    /// Penalty of the final ridge fit.
    #[arg(long)]
    ridge_lambda: Option<f64>,
    /// Training fraction when no test file is given.
    #[arg(long)]
    split: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let mut set = |key: &str, value: Option<String>| match value {
            Some(v) => cfg.set(key, &v, None),
            None => Ok(()),
        };
        set("train", self.train.as_ref().map(|p| p.display().to_string()))?;
        set("test", self.test.as_ref().map(|p| p.display().to_string()))?;
        set("response", self.response.clone())?;
        set("alpha", text(&self.alpha))?;
        set("beta", text(&self.beta))?;
        set("mu", text(&self.mu))?;
        set("tau", text(&self.tau))?;
        set("q", text(&self.q))?;
        set("knn", text(&self.knn))?;
        set("jitter", text(&self.jitter))?;
        set("sweeps", text(&self.sweeps))?;
        set("burn-in", text(&self.burn_in))?;
        set("seed", text(&self.seed))?;
        set("partition-rule", self.partition_rule.clone())?;
        set("a0", text(&self.a0))?;
        set("b0", text(&self.b0))?;
        set("av", text(&self.av))?;
        set("bv", text(&self.bv))?;
        set("ai", text(&self.ai))?;
        set("bi", text(&self.bi))?;
        set("merge-floor", text(&self.merge_floor))?;
        if self.single_domain {
            set("single-domain", Some("true".into()))?;
        }
        set("ridge-lambda", text(&self.ridge_lambda))?;
        set("split", text(&self.split))?;
        set("split-seed", text(&self.split_seed))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn text<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(T::to_string)
}

fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid {what} entry '{v}'")))
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn predictions_csv(ev: &Evaluation) -> String {
    let mut out = String::from("row,prediction,prediction_z\n");
    for (i, (raw, z)) in ev.predictions.raw.iter().zip(ev.predictions.z.iter()).enumerate() {
        out.push_str(&format!("{},{raw},{z}\n", i + 1));
    }
    out
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let headers = reader.headers().map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let col = headers
        .iter()
        .position(|h| h.trim() == "domain")
        .ok_or_else(|| Error::Config(format!("{} has no 'domain' column", path.display())))?;
    let mut labels = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let v: usize = rec.get(col).unwrap_or("").trim().parse().map_err(|_| Error::BadCell {
            path: path.to_path_buf(),
            row: r + 1,
            column: "domain".into(),
            value: rec.get(col).unwrap_or("").to_string(),
        })?;
        if v == 0 {
            return Err(Error::Config("domain labels are 1-based".into()));
        }
        labels.push(v - 1);
    }
    Ok(canonical_labels(&labels).0)
}

fn cmd_mine(run: &RunArgs, out: Option<&Path>, trace: Option<&Path>) -> Result<()> {
    let cfg = run.resolve()?;
    let train_path = cfg.train.as_ref().ok_or_else(|| Error::Config("--train is required".into()))?;
    let train = load_csv(train_path, Some(&cfg.response))?;
    let scaler = fit_scaler(&train);
    let x = scaler.standardize_features(&train.features)?;
    let zy = scaler.standardize_response(train.response.as_ref().expect("training response"))?;
    let mined = mine_domains(&x, &zy, &cfg)?;
    if let (Some(path), Some(g)) = (trace, &mined.gibbs) {
        write_trace_csv(&g.trace, path)?;
    }
    let mut text = String::from("row,domain\n");
    for (i, l) in mined.labels.iter().enumerate() {
        text.push_str(&format!("{},{}\n", i + 1, l + 1));
    }
    match out {
        Some(path) => write_text(path, &text)?,
        None => print!("{text}"),
    }
    eprintln!("{} latent domains, sizes {:?}", mined.atoms.len(), mined.sizes());
    Ok(())
}

fn cmd_adapt(run: &RunArgs, labels: Option<&Path>, out: &Path, spectrum: Option<&Path>) -> Result<()> {
    let cfg = run.resolve()?;
    let inputs = load_inputs(&cfg)?;
    let scaler = fit_scaler(&inputs.train);
    let train_std = apply_scaler(&scaler, &inputs.train)?;
    let test_std = inputs.test.as_ref().map(|t| apply_scaler(&scaler, t)).transpose()?;
    let partition = match labels {
        Some(path) => read_labels(path)?,
        None => {
            let zy = scaler.standardize_response(inputs.train.response.as_ref().expect("training response"))?;
            mine_domains(&train_std.features, &zy, &cfg)?.labels
        }
    };
    let stack = build_joint_stack(&train_std, test_std.as_ref(), &partition, cfg.alpha)?;
    let fit = fit_transfer(&stack, &cfg.transfer(inputs.train.p()), &inputs.train.names)?;
    let json = serde_json::to_string_pretty(&fit.map).map_err(|e| Error::Bundle(e.to_string()))?;
    write_text(out, &(json + "\n"))?;
    if let Some(path) = spectrum {
        write_spectrum_csv(&fit, path)?;
    }
    eprintln!("selected eigenvalues {:?}", fit.map.eigenvalues);
    Ok(())
}

fn cmd_fit(run: &RunArgs, out: &Path) -> Result<()> {
    let cfg = run.resolve()?;
    let inputs = load_inputs(&cfg).map_err(|e| e.in_stage("load"))?;
    let fitted = fit_model(&inputs.train, inputs.test.as_ref(), &cfg)?;
    save_bundle(&fitted.bundle, out)?;
    eprintln!("latent domain sizes {:?}", fitted.bundle.partition.sizes);
    Ok(())
}

fn cmd_predict(bundle: &Path, test: &Path, out: Option<&Path>) -> Result<()> {
    let bundle = load_bundle(bundle)?;
    let Some(data) = load_target(test, &bundle.response_name)? else {
        eprintln!("test set is empty");
        return Ok(());
    };
    let ev = evaluate(&bundle, &data)?;
    let text = predictions_csv(&ev);
    match out {
        Some(path) => write_text(path, &text)?,
        None => print!("{text}"),
    }
    if let Some(r) = ev.rmse {
        eprintln!("rmse {r}");
    }
    Ok(())
}

fn cmd_run(run: &RunArgs, out: Option<&Path>) -> Result<()> {
    let cfg = run.resolve()?;
    let inputs = load_inputs(&cfg).map_err(|e| e.in_stage("load"))?;
    let result = run_on(&inputs.train, inputs.test.as_ref(), &cfg)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        save_bundle(&result.fitted.bundle, dir.join("bundle.json"))?;
        if let Some(ev) = &result.evaluation {
            write_text(&dir.join("predictions.csv"), &predictions_csv(ev))?;
        }
        if let Some(g) = &result.fitted.mined.gibbs {
            write_trace_csv(&g.trace, dir.join("trace.csv"))?;
        }
    }
    println!("latent domains: {:?}", result.fitted.bundle.partition.sizes);
    match result.evaluation.and_then(|e| e.rmse) {
        Some(r) => println!("rmse: {r}"),
        None => println!("rmse: n/a (no test truth)"),
    }
    Ok(())
}

fn cmd_bench(configs: &[PathBuf], out: &Path, repeats: usize, threads: Option<usize>) -> Result<()> {
    let cfgs = configs
        .iter()
        .map(|p| {
            let mut c = RunConfig::from_file(p)?;
            if c.name.is_none() {
                c.name = p.file_stem().map(|s| s.to_string_lossy().into_owned());
            }
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let opts = BenchOptions {
        repeats,
        out_dir: Some(out.to_path_buf()),
    };
    let rows = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| bench(&cfgs, &opts))?,
        None => bench(&cfgs, &opts)?,
    };
    let path = out.join("results.csv");
    write_bench_csv(&rows, &path)?;
    for r in &rows {
        let rmse = r.rmse.map_or("-".to_string(), |v| format!("{v:.4}"));
        let reference = r.reference_rmse.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!("{:10} {:5} seed {:5} rmse {rmse:>8} ref {reference:>7} {}", r.dataset, r.method, r.seed, r.status);
    }
    info!("wrote {}", path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    atoms: &str,
    sizes: &str,
    test_sizes: Option<&str>,
    shifts: Option<&str>,
    intercepts: Option<&str>,
    noise: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let spec = SynthSpec {
        atoms: atoms
            .split(';')
            .map(|a| parse_list("atom", a))
            .collect::<Result<_>>()?,
        intercepts: intercepts.map(|s| parse_list("intercept", s)).transpose()?.unwrap_or_default(),
        train_sizes: parse_list("size", sizes)?,
        test_sizes: test_sizes.map(|s| parse_list("test size", s)).transpose()?.unwrap_or_default(),
        shifts: shifts.map(|s| parse_list("shift", s)).transpose()?.unwrap_or_default(),
        noise,
        seed,
    };
    let s = generate(&spec)?;
    write_synth(&s, out)?;
    eprintln!(
        "wrote {} training and {} test rows to {}",
        s.train.n(),
        s.test.as_ref().map_or(0, |t| t.n()),
        out.display()
    );
    Ok(())
}

fn cmd_project(bundle: &Path, train: &Path, test: Option<&Path>, mode: &str, out: &Path) -> Result<()> {
    let mode: ProjectionMode = mode.parse()?;
    let bundle = load_bundle(bundle)?;
    let train = load_csv(train, Some(&bundle.response_name))?;
    let test = match test {
        Some(p) => load_target(p, &bundle.response_name)?,
        None => None,
    };
    let rows = emit_projection(&bundle, &train, test.as_ref(), mode)?;
    write_projection_csv(&rows, out)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Mine { run, out, trace } => cmd_mine(&run, out.as_deref(), trace.as_deref()),
        Command::Adapt {
            run,
            labels,
            out,
            spectrum,
        } => cmd_adapt(&run, labels.as_deref(), &out, spectrum.as_deref()),
        Command::Fit { run, out } => cmd_fit(&run, &out),
        Command::Predict { bundle, test, out } => cmd_predict(&bundle, &test, out.as_deref()),
        Command::Run { run, out } => cmd_run(&run, out.as_deref()),
        Command::Bench {
            configs,
            out,
            repeats,
            threads,
        } => cmd_bench(&configs, &out, repeats, threads),
        Command::Synth {
            atoms,
            sizes,
            test_sizes,
            shifts,
            intercepts,
            noise,
            seed,
            out,
        } => cmd_synth(
            &atoms,
            &sizes,
            test_sizes.as_deref(),
            shifts.as_deref(),
            intercepts.as_deref(),
            noise,
            seed,
            &out,
        ),
        Command::Project {
            bundle,
            train,
            test,
            mode,
            out,
        } => cmd_project(&bundle, &train, test.as_deref(), &mode, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
