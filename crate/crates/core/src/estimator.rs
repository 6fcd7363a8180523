//! Minimum density power divergence fit over `(beta, Sigma)`.
//!
//! The drift enters in raw coordinates; `Sigma` is optimized through its
//! log-Cholesky coordinates so every iterate stays positive definite. The
//! default start is the least-squares fit of the regression form
//! `dX / h = B X + b + noise`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::json::ParamsJson;
use crate::linalg::{log_chol_gradient, spd_from_log_chol, spd_to_log_chol, vech_len, SpdMatrix};
use crate::objective::{evaluate, DiffusionParams};
use crate::optim::{minimize, BfgsOptions, Termination};
use crate::sim::{DriftAffine, SamplePath};

pub use crate::optim::IterRecord;

/// Starting point for the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    Ols,
    User(DiffusionParams),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MdpdeConfig {
    pub alpha: f64,
    pub max_iters: usize,
    /// Max-norm gradient tolerance in optimizer coordinates.
    pub grad_tol: f64,
    pub step_tol: f64,
    pub init: Init,
    /// Also start from four perturbations of the initial point and keep the best.
    pub multistart: bool,
}

impl Default for MdpdeConfig {
    fn default() -> Self {
        MdpdeConfig {
            alpha: 0.0,
            max_iters: 500,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            init: Init::Ols,
            multistart: false,
        }
    }
}

impl MdpdeConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        MdpdeConfig {
            alpha,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.grad_tol > 0.0) || !(self.step_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    #[serde(serialize_with = "params_as_json")]
    pub params: DiffusionParams,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub termination: Termination,
    pub trace: Vec<IterRecord>,
}

fn params_as_json<S: Serializer>(
    p: &DiffusionParams,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    ParamsJson::from(p).serialize(s)
}

/// Least-squares drift and residual covariance of the regression form.
///
/// `Sigma` uses the maximum-likelihood normalization `1 / (n h)`, so this is
/// the exact `alpha = 0` optimum.
pub fn ols_init(path: &SamplePath) -> Result<DiffusionParams> {
    let d = path.dim();
    let n = path.n();
    if n < d + 2 {
        return Err(Error::Initialization(format!(
            "need at least {} increments for a {d}-dimensional regression, got {n}",
            d + 2
        )));
    }
    let h = path.h();
    let pts = path.points();
    let mut design = DMatrix::zeros(n, d + 1);
    let mut response = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            design[(i, j)] = pts[(i, j)];
            response[(i, j)] = (pts[(i + 1, j)] - pts[(i, j)]) / h;
        }
        design[(i, d)] = 1.0;
    }
    let qr = design.qr();
    let r = qr.r();
    let diag_max = r.diagonal().amax();
    if !(diag_max > 0.0) || r.diagonal().iter().any(|v| v.abs() <= 1e-10 * diag_max) {
        return Err(Error::Initialization(
            "regression design is rank deficient".into(),
        ));
    }
    let qty = qr.q().transpose() * &response;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Initialization("regression design is rank deficient".into()))?;
    let drift = DriftAffine::new(coef.rows(0, d).transpose(), coef.row(d).transpose())?;

    let resid = crate::objective::residuals(path, &drift)?;
    let cov = resid.transpose() * &resid / (n as f64 * h);
    let cov = (&cov + cov.transpose()) * 0.5;
    DiffusionParams::new(drift, floor_to_spd(cov)?)
}

/// Raises eigenvalues below `1e-8 * tr / d` to that floor when needed.
fn floor_to_spd(cov: DMatrix<f64>) -> Result<SpdMatrix> {
    let d = cov.nrows();
    let mean_ev = cov.trace() / d as f64;
    let floor = if mean_ev > 0.0 { 1e-8 * mean_ev } else { 1e-8 };
    let eig = SymmetricEigen::new(cov.clone());
    if eig.eigenvalues.min() >= floor {
        if let Ok(m) = SpdMatrix::from_matrix(&cov) {
            return Ok(m);
        }
    }
    let ev = eig.eigenvalues.map(|v| v.max(floor));
    let q = &eig.eigenvectors;
    let m = q * DMatrix::from_diagonal(&ev) * q.transpose();
    SpdMatrix::from_matrix(&((&m + m.transpose()) * 0.5))
}

/// Packs `(beta, log-Cholesky(Sigma))`.
fn pack(params: &DiffusionParams) -> DVector<f64> {
    let mut v = params.beta();
    v.extend(spd_to_log_chol(&params.sigma));
    DVector::from_vec(v)
}

fn unpack(x: &DVector<f64>, d: usize) -> Result<DiffusionParams> {
    let p = d * d + d;
    let drift = DriftAffine::from_beta(&x.as_slice()[..p], d)?;
    let sigma = spd_from_log_chol(&x.as_slice()[p..])?;
    DiffusionParams::new(drift, sigma)
}

/// Objective and gradient in optimizer coordinates.
fn transformed_objective(
    path: &SamplePath,
    x: &DVector<f64>,
    alpha: f64,
) -> Option<(f64, DVector<f64>)> {
    let d = path.dim();
    let params = unpack(x, d).ok()?;
    let ev = evaluate(path, &params, alpha, true).ok()?;
    let mut grad = ev.grad_beta;
    grad.extend(log_chol_gradient(
        &ev.grad_sigma,
        &x.as_slice()[d * d + d..],
        d,
    ));
    Some((ev.value, DVector::from_vec(grad)))
}

/// Starting points for the multistart option: the base point, `Sigma`
/// scaled by 1/4 and 4, and a zero drift matrix with mean-increment intercept.
fn multistart_points(path: &SamplePath, base: &DiffusionParams) -> Result<Vec<DiffusionParams>> {
    let d = path.dim();
    let mut starts = vec![base.clone()];
    for c in [0.25, 4.0] {
        starts.push(DiffusionParams::new(
            base.drift.clone(),
            base.sigma.scale(c)?,
        )?);
    }
    let pts = path.points();
    let mean_inc = (pts.row(path.n()) - pts.row(0)).transpose() / (path.n() as f64 * path.h());
    let flat = DriftAffine::new(DMatrix::zeros(d, d), mean_inc)?;
    starts.push(DiffusionParams::new(flat.clone(), base.sigma.clone())?);
    starts.push(DiffusionParams::new(flat, base.sigma.scale(0.25)?)?);
    Ok(starts)
}

fn fit_from(path: &SamplePath, cfg: &MdpdeConfig, start: &DiffusionParams) -> Result<FitResult> {
    let d = path.dim();
    let opts = BfgsOptions {
        max_iters: cfg.max_iters,
        grad_tol: cfg.grad_tol,
        step_tol: cfg.step_tol,
    };
    let res = minimize(
        |x| transformed_objective(path, x, cfg.alpha),
        pack(start),
        &opts,
    )
    .map_err(|_| Error::NumericalFailure {
        iteration: 0,
        message: "objective is not finite at the starting point".into(),
        trace: Vec::new(),
    })?;
    let params = unpack(&res.x, d).map_err(|e| Error::NumericalFailure {
        iteration: res.iterations,
        message: e.to_string(),
        trace: res.trace.clone(),
    })?;
    let grad_norm = res.grad_norm();
    Ok(FitResult {
        params,
        objective: res.value,
        iterations: res.iterations,
        converged: grad_norm <= cfg.grad_tol,
        grad_norm,
        termination: res.termination,
        trace: res.trace,
    })
}

/// Minimizes the averaged contrast from the configured starting point.
///
/// Non-convergence is reported through `converged = false`.
pub fn fit(path: &SamplePath, cfg: &MdpdeConfig) -> Result<FitResult> {
    cfg.validate()?;
    let start = match &cfg.init {
        Init::Ols => ols_init(path)?,
        Init::User(p) => {
            if p.dim() != path.dim() {
                return Err(Error::InvalidArgument(
                    "initial parameters do not match path dimension".into(),
                ));
            }
            p.clone()
        }
    };
    if !cfg.multistart {
        return fit_from(path, cfg, &start);
    }
    let mut best: Option<FitResult> = None;
    for s in multistart_points(path, &start)? {
        let Ok(r) = fit_from(path, cfg, &s) else {
            continue;
        };
        let better = match &best {
            None => true,
            Some(b) => (r.converged, -r.objective) > (b.converged, -b.objective),
        };
        if better {
            best = Some(r);
        }
    }
    best.ok_or_else(|| Error::NumericalFailure {
        iteration: 0,
        message: "every multistart run failed".into(),
        trace: Vec::new(),
    })
}

/// Number of free parameters `d^2 + d + d(d+1)/2`.
pub fn n_free_params(d: usize) -> usize {
    d * d + d + vech_len(d)
}
