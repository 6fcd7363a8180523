//! Monte Carlo harness for the contamination study: seeded replications over
//! `(n, eps, alpha)` grids, aggregation and CSV/JSON output.
//!
//! Within one `(n, eps, replication)` triple every `alpha` is fitted on the
//! same simulated path, so columns of a table compare estimators on identical data.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit, MdpdeConfig};
use crate::json::rows_to_matrix;
use crate::linalg::SymMatrix;
use crate::objective::DiffusionParams;
use crate::sim::{
    contaminate, simulate_path, step_size, ContaminationSpec, DriftAffine, RNG_ALGORITHM,
};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "MDPDE_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_grid: Vec<usize>,
    pub eps_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub kappa: f64,
    pub reps: usize,
    pub base_seed: u64,
    #[serde(rename = "B_true")]
    pub drift_matrix_true: Vec<Vec<f64>>,
    pub b_true: Vec<f64>,
    pub sigma_true: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    pub out_dir: PathBuf,
    /// Enable the estimator's multistart search.
    pub multistart: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_grid: vec![100, 200, 500, 1000, 2000],
            eps_grid: vec![0.0, 0.05, 0.10, 0.20],
            alpha_grid: vec![0.0, 0.1, 0.3, 0.5],
            kappa: 5.0,
            reps: 200,
            base_seed: 20_240_601,
            drift_matrix_true: vec![vec![-0.6, -0.2], vec![0.1, -0.4]],
            b_true: vec![2.0, 1.0],
            sigma_true: vec![vec![1.0, 0.5], vec![0.5, 0.7]],
            x0: vec![0.0, 0.0],
            out_dir: PathBuf::from("results"),
            multistart: false,
        }
    }
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_grid.is_empty() || self.eps_grid.is_empty() || self.alpha_grid.is_empty() {
            return bad("grids must be nonempty");
        }
        if self.reps == 0 {
            return bad("reps must be >= 1");
        }
        if self.n_grid.iter().any(|&n| n < 5) {
            return bad("every n must be at least 5");
        }
        if self.eps_grid.iter().any(|e| !(0.0..1.0).contains(e)) {
            return bad("eps values must lie in [0, 1)");
        }
        if self
            .alpha_grid
            .iter()
            .any(|a| !(*a >= 0.0) || !a.is_finite())
        {
            return bad("alpha values must be >= 0");
        }
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return bad("kappa must be >= 0");
        }
        let truth = self.truth()?;
        if self.x0.len() != truth.dim() {
            return bad("x0 has the wrong dimension");
        }
        Ok(())
    }

    pub fn truth(&self) -> Result<DiffusionParams> {
        let drift = DriftAffine::new(
            rows_to_matrix(&self.drift_matrix_true)?,
            DVector::from_vec(self.b_true.clone()),
        )?;
        let sigma =
            crate::linalg::SpdMatrix::new(SymMatrix::new(rows_to_matrix(&self.sigma_true)?)?)?;
        DiffusionParams::new(drift, sigma)
    }

    fn eps_index(&self, eps: f64) -> Result<usize> {
        self.eps_grid
            .iter()
            .position(|&e| e == eps)
            .ok_or_else(|| Error::InvalidArgument(format!("eps {eps} is not in eps_grid")))
    }
}

/// Aggregated estimates for one `(n, eps, alpha)` cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub n: usize,
    pub eps: f64,
    pub alpha: f64,
    /// Means in table column order (see [`estimate_columns`]).
    pub mean: Vec<f64>,
    pub rmse: Vec<f64>,
    pub failure_count: usize,
}

/// Column names of a flattened estimate: `Bjk` row-wise, `bj`, then `Sjk` row-wise.
pub fn estimate_columns(d: usize) -> Vec<String> {
    let mut cols = Vec::new();
    for j in 1..=d {
        for k in 1..=d {
            cols.push(format!("B{j}{k}"));
        }
    }
    for j in 1..=d {
        cols.push(format!("b{j}"));
    }
    for j in 1..=d {
        for k in 1..=d {
            cols.push(format!("S{j}{k}"));
        }
    }
    cols
}

/// Flattens parameters in [`estimate_columns`] order.
pub fn flatten_estimate(p: &DiffusionParams) -> Vec<f64> {
    let d = p.dim();
    let mut out = Vec::with_capacity(2 * d * d + d);
    for j in 0..d {
        for k in 0..d {
            out.push(p.drift.matrix[(j, k)]);
        }
    }
    out.extend(p.drift.intercept.iter());
    let s = p.sigma.as_matrix();
    for j in 0..d {
        for k in 0..d {
            out.push(s[(j, k)]);
        }
    }
    out
}

/// CSV header of the per-n tables.
pub fn csv_header(d: usize) -> String {
    let cols = estimate_columns(d);
    let mut h = String::from("epsilon,alpha");
    for c in &cols {
        h.push(',');
        h.push_str(c);
    }
    for c in &cols {
        h.push_str(",rmse_");
        h.push_str(c);
    }
    h.push_str(",failure_count");
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `rep` in cell `(n, eps_index)`.
pub fn replication_seed(base_seed: u64, n: usize, eps_index: usize, rep: usize) -> u64 {
    [n as u64, eps_index as u64, rep as u64]
        .iter()
        .fold(splitmix64(base_seed), |acc, &v| {
            splitmix64(acc ^ splitmix64(v))
        })
}

/// Simulates one contaminated path and fits every requested `alpha` on it.
///
/// A failed or non-converged fit yields `None`.
pub fn run_replication(
    cfg: &ExperimentConfig,
    truth: &DiffusionParams,
    n: usize,
    eps_index: usize,
    rep: usize,
    alphas: &[f64],
) -> Result<Vec<Option<DiffusionParams>>> {
    let seed = replication_seed(cfg.base_seed, n, eps_index, rep);
    let h = step_size(n)?;
    let clean = match simulate_path(
        &truth.drift,
        truth.sigma.as_sym(),
        &cfg.x0,
        n,
        h,
        splitmix64(seed ^ 1),
    ) {
        Ok(p) => p,
        Err(e) if e.is_numerical() => return Ok(vec![None; alphas.len()]),
        Err(e) => return Err(e),
    };
    let spec = ContaminationSpec::new(cfg.eps_grid[eps_index], cfg.kappa, splitmix64(seed ^ 2))?;
    let path = contaminate(&clean, &spec);
    Ok(alphas
        .iter()
        .map(|&alpha| {
            let fc = MdpdeConfig {
                multistart: cfg.multistart,
                ..MdpdeConfig::with_alpha(alpha)
            };
            match fit(&path, &fc) {
                Ok(f) if f.converged => Some(f.params),
                _ => None,
            }
        })
        .collect())
}

fn summarize(
    n: usize,
    eps: f64,
    alpha: f64,
    truth: &[f64],
    fits: &[Option<Vec<f64>>],
) -> CellSummary {
    let k = truth.len();
    let ok: Vec<&Vec<f64>> = fits.iter().flatten().collect();
    let m = ok.len() as f64;
    let mut mean = vec![0.0; k];
    let mut sq = vec![0.0; k];
    for est in &ok {
        for j in 0..k {
            mean[j] += est[j];
            sq[j] += (est[j] - truth[j]).powi(2);
        }
    }
    CellSummary {
        n,
        eps,
        alpha,
        mean: mean.into_iter().map(|s| s / m).collect(),
        rmse: sq.into_iter().map(|s| (s / m).sqrt()).collect(),
        failure_count: fits.len() - ok.len(),
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let threads: usize = v.parse().map_err(|_| {
            Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer"))
        })?;
        builder = builder.num_threads(threads.max(1));
    }
    builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
}

/// Per-replication flattened estimates for every alpha, in replication order.
fn replicate(
    cfg: &ExperimentConfig,
    truth: &DiffusionParams,
    n: usize,
    eps_index: usize,
    alphas: &[f64],
) -> Result<Vec<Vec<Option<Vec<f64>>>>> {
    (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            run_replication(cfg, truth, n, eps_index, r, alphas).map(|v| {
                v.into_iter()
                    .map(|p| p.as_ref().map(flatten_estimate))
                    .collect()
            })
        })
        .collect()
}

/// Runs every replication of one cell.
pub fn run_cell(cfg: &ExperimentConfig, n: usize, eps: f64, alpha: f64) -> Result<CellSummary> {
    cfg.validate()?;
    let truth = cfg.truth()?;
    let eps_index = cfg.eps_index(eps)?;
    let reps = thread_pool()?.install(|| replicate(cfg, &truth, n, eps_index, &[alpha]))?;
    let fits: Vec<Option<Vec<f64>>> = reps.into_iter().map(|mut v| v.remove(0)).collect();
    Ok(summarize(n, eps, alpha, &flatten_estimate(&truth), &fits))
}

/// All cells for one sample size, ordered by `(eps, alpha)` ascending.
pub fn run_sample_size(cfg: &ExperimentConfig, n: usize) -> Result<Vec<CellSummary>> {
    cfg.validate()?;
    let truth = cfg.truth()?;
    let truth_flat = flatten_estimate(&truth);
    let mut alphas = cfg.alpha_grid.clone();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let mut eps_order: Vec<usize> = (0..cfg.eps_grid.len()).collect();
    eps_order.sort_by(|&a, &b| cfg.eps_grid[a].total_cmp(&cfg.eps_grid[b]));

    let pool = thread_pool()?;
    let mut out = Vec::new();
    for ei in eps_order {
        let reps = pool.install(|| replicate(cfg, &truth, n, ei, &alphas))?;
        for (ai, &alpha) in alphas.iter().enumerate() {
            let fits: Vec<Option<Vec<f64>>> = reps.iter().map(|r| r[ai].clone()).collect();
            out.push(summarize(n, cfg.eps_grid[ei], alpha, &truth_flat, &fits));
        }
    }
    Ok(out)
}

/// Renders one per-n table.
pub fn render_csv(d: usize, cells: &[CellSummary]) -> String {
    let mut s = csv_header(d);
    s.push('\n');
    for c in cells {
        s.push_str(&format!("{},{}", c.eps, c.alpha));
        for v in c.mean.iter().chain(&c.rmse) {
            s.push_str(&format!(",{v}"));
        }
        s.push_str(&format!(",{}\n", c.failure_count));
    }
    s
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    config: &'a ExperimentConfig,
    rng_algorithm: &'a str,
    code_version: &'a str,
    step_size_rule: &'a str,
    contamination_rule: &'a str,
    alpha_shares_paths: bool,
    failure_rule: &'a str,
    seed_rule: &'a str,
}

/// Writes `mdpde_all_n{n}.csv` for every `n` plus `run_metadata.json` into `out_dir`.
///
/// On an IO failure, files written by this call are removed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let d = cfg.truth()?.dim();
    let mut written = Vec::new();
    let result = (|| -> Result<()> {
        fs::create_dir_all(&cfg.out_dir)?;
        for &n in &cfg.n_grid {
            let cells = run_sample_size(cfg, n)?;
            let file = cfg.out_dir.join(format!("mdpde_all_n{n}.csv"));
            written.push(file.clone());
            fs::File::create(&file)?.write_all(render_csv(d, &cells).as_bytes())?;
        }
        let meta = RunMetadata {
            config: cfg,
            rng_algorithm: RNG_ALGORITHM,
            code_version: env!("CARGO_PKG_VERSION"),
            step_size_rule: "h = n^(-0.55)",
            contamination_rule: "round(eps * (n + 1)) observations chosen uniformly without replacement, t = 0 eligible; x0 as configured",
            alpha_shares_paths: true,
            failure_rule: "fits that error or do not reach the gradient tolerance are excluded from means and counted in failure_count",
            seed_rule: "splitmix64 chain over (base_seed, n, eps index, replication)",
        };
        let file = cfg.out_dir.join("run_metadata.json");
        written.push(file.clone());
        let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Parse(e.to_string()))?;
        fs::File::create(&file)?.write_all(json.as_bytes())?;
        Ok(())
    })();
    match result {
        Ok(()) => Ok(written),
        Err(e) => {
            for f in &written {
                let _ = fs::remove_file(f);
            }
            Err(e)
        }
    }
}

/// Mean estimate and truth as matrices, for quick checks.
pub fn mean_matrices(cell: &CellSummary, d: usize) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let b = DMatrix::from_row_slice(d, d, &cell.mean[..d * d]);
    let icpt = DVector::from_column_slice(&cell.mean[d * d..d * d + d]);
    let s = DMatrix::from_row_slice(d, d, &cell.mean[d * d + d..]);
    (b, icpt, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            n_grid: vec![100],
            eps_grid: vec![0.0, 0.1],
            alpha_grid: vec![0.3, 0.0],
            reps: 3,
            ..Default::default()
        }
    }

    #[test]
    fn header_is_stable() {
        assert_eq!(
            csv_header(2),
            "epsilon,alpha,B11,B12,B21,B22,b1,b2,S11,S12,S21,S22,\
             rmse_B11,rmse_B12,rmse_B21,rmse_B22,rmse_b1,rmse_b2,rmse_S11,rmse_S12,rmse_S21,rmse_S22,failure_count"
        );
    }

    #[test]
    fn seeds_are_distinct_and_pure() {
        let a = replication_seed(1, 100, 0, 0);
        assert_eq!(a, replication_seed(1, 100, 0, 0));
        assert_ne!(a, replication_seed(1, 100, 0, 1));
        assert_ne!(a, replication_seed(1, 100, 1, 0));
        assert_ne!(a, replication_seed(1, 200, 0, 0));
        assert_ne!(a, replication_seed(2, 100, 0, 0));
    }

    #[test]
    fn rows_sorted_and_cells_match() {
        let cfg = small();
        let cells = run_sample_size(&cfg, 100).unwrap();
        let keys: Vec<(f64, f64)> = cells.iter().map(|c| (c.eps, c.alpha)).collect();
        assert_eq!(keys, vec![(0.0, 0.0), (0.0, 0.3), (0.1, 0.0), (0.1, 0.3)]);
        for c in &cells {
            assert_eq!(c.mean[7], c.mean[8]);
        }
        let single = run_cell(&cfg, 100, 0.1, 0.3).unwrap();
        assert_eq!(single, cells[3]);
        assert!(run_cell(&cfg, 100, 0.07, 0.3).is_err());
    }

    #[test]
    fn config_validation_and_parsing() {
        let mut cfg = small();
        cfg.reps = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.sigma_true = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.eps_grid.clear();
        assert!(cfg.validate().is_err());

        let toml_text = "n_grid = [200]\nreps = 5\nalpha_grid = [0.0, 0.3]\n";
        let parsed: ExperimentConfig = toml::from_str(toml_text).unwrap();
        assert_eq!(parsed.n_grid, vec![200]);
        assert_eq!(parsed.kappa, 5.0);
        assert!(toml::from_str::<ExperimentConfig>("bogus = 1").is_err());
        let back: ExperimentConfig =
            serde_json::from_str(&serde_json::to_string(&parsed).unwrap()).unwrap();
        assert_eq!(back, parsed);
    }

    #[test]
    fn io_failure_cleans_up() {
        let dir = tempfile::tempdir().unwrap();
        // a regular file where the output directory should go
        let blocker = dir.path().join("out");
        fs::write(&blocker, b"x").unwrap();
        let cfg = ExperimentConfig {
            out_dir: blocker.clone(),
            ..small()
        };
        assert!(matches!(run_experiment(&cfg), Err(Error::Io(_))));
        assert_eq!(fs::read(&blocker).unwrap(), b"x");
    }
}
