use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use mdpde::experiment::{run_experiment, ExperimentConfig};
use mdpde::inference::{wald_test, InferenceReport};
use mdpde::json::{rows_to_matrix, ParamsJson};
use mdpde::sim::{contaminate, simulate_path, step_size};
use mdpde::{fit, DiffusionParams, Error, MdpdeConfig, Result, SamplePath};

/// Minimum density power divergence estimation for discretely observed diffusions.
#[derive(Parser, Debug)]
#[command(name = "mdpde", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment/model configuration (TOML, or JSON with a .json extension)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Sample size(s); comma separated for `experiment`
    #[arg(long, global = true, value_delimiter = ',')]
    n: Vec<usize>,
    /// Contamination fraction(s)
    #[arg(long, global = true, value_delimiter = ',')]
    eps: Vec<f64>,
    /// Tuning parameter(s)
    #[arg(long, global = true, value_delimiter = ',')]
    alpha: Vec<f64>,
    /// Replications per cell
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Base seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (simulate, fit, infer) or directory (experiment); stdout when omitted
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one (optionally contaminated) path and write it as CSV
    Simulate,
    /// Fit a path CSV and report estimates with plug-in inference as JSON
    Fit {
        /// Path CSV with header t,x1,..,xd
        path: PathBuf,
        /// Null drift vector for the Wald test, (vec(B) column-major, b); defaults to the configured truth
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        beta_null: Vec<f64>,
        /// Try several starting points and keep the best
        #[arg(long)]
        multistart: bool,
    },
    /// Run the Monte Carlo grid and write one CSV per sample size
    Experiment,
    /// Wald test of a saved fit against a null drift vector
    Infer {
        /// JSON written by `fit`
        fit_json: PathBuf,
        /// Null drift vector, (vec(B) column-major, b); defaults to the configured truth
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        beta_null: Vec<f64>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if !common.n.is_empty() {
        cfg.n_grid = common.n.clone();
    }
    if !common.eps.is_empty() {
        cfg.eps_grid = common.eps.clone();
    }
    if !common.alpha.is_empty() {
        cfg.alpha_grid = common.alpha.clone();
    }
    if let Some(r) = common.reps {
        cfg.reps = r;
    }
    if let Some(s) = common.seed {
        cfg.base_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn single<T: Copy>(values: &[T], fallback: T, name: &str) -> Result<T> {
    match values {
        [] => Ok(fallback),
        [v] => Ok(*v),
        _ => Err(Error::InvalidArgument(format!(
            "--{name} takes a single value here"
        ))),
    }
}

fn to_json(v: &impl serde::Serialize) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Parse(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    let cfg = load_config(common)?;
    let truth = cfg.truth()?;
    let out = common.out.as_deref();
    match cli.command {
        Command::Simulate => {
            let n = single(&common.n, cfg.n_grid[0], "n")?;
            let eps = single(&common.eps, 0.0, "eps")?;
            let h = step_size(n)?;
            let clean = simulate_path(
                &truth.drift,
                truth.sigma.as_sym(),
                &cfg.x0,
                n,
                h,
                cfg.base_seed,
            )?;
            let spec =
                mdpde::ContaminationSpec::new(eps, cfg.kappa, cfg.base_seed.wrapping_add(1))?;
            let path = contaminate(&clean, &spec);
            let mut buf = Vec::new();
            path.write_csv(&mut buf)?;
            emit(out, &String::from_utf8_lossy(&buf))
        }
        Command::Fit {
            path,
            beta_null,
            multistart,
        } => {
            let alpha = single(&common.alpha, 0.0, "alpha")?;
            let sample = SamplePath::read_csv(fs::File::open(&path)?)?;
            let fc = MdpdeConfig {
                multistart,
                ..MdpdeConfig::with_alpha(alpha)
            };
            let result = fit(&sample, &fc)?;
            let null = if beta_null.is_empty() {
                truth.beta()
            } else {
                beta_null
            };
            let report = InferenceReport::compute(&sample, &result.params, alpha, &null)?;
            let doc = json!({
                "n": sample.n(),
                "h": sample.h(),
                "alpha": alpha,
                "fit": result,
                "inference": report,
            });
            emit(out, &to_json(&doc)?)
        }
        Command::Experiment => {
            let mut cfg = cfg;
            if let Some(dir) = out {
                cfg.out_dir = dir.to_path_buf();
            }
            for file in run_experiment(&cfg)? {
                println!("{}", file.display());
            }
            Ok(())
        }
        Command::Infer {
            fit_json,
            beta_null,
        } => {
            let doc: Value = serde_json::from_str(&fs::read_to_string(&fit_json)?)
                .map_err(|e| Error::Parse(e.to_string()))?;
            let field = |ptr: &str| {
                doc.pointer(ptr)
                    .cloned()
                    .ok_or_else(|| Error::Parse(format!("fit JSON lacks {ptr}")))
            };
            let parse = |e: serde_json::Error| Error::Parse(e.to_string());
            let params: ParamsJson =
                serde_json::from_value(field("/fit/params")?).map_err(parse)?;
            let params = DiffusionParams::try_from(&params)?;
            let sigma_beta: Vec<Vec<f64>> =
                serde_json::from_value(field("/inference/sigma_beta")?).map_err(parse)?;
            let n: usize = serde_json::from_value(field("/n")?).map_err(parse)?;
            let h: f64 = serde_json::from_value(field("/h")?).map_err(parse)?;
            let null = if beta_null.is_empty() {
                truth.beta()
            } else {
                beta_null
            };
            let w = wald_test(&params.beta(), &null, &rows_to_matrix(&sigma_beta)?, n, h)?;
            let doc = json!({
                "wald_stat": w.stat,
                "wald_df": w.df,
                "wald_pvalue": w.pvalue,
            });
            emit(out, &to_json(&doc)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
