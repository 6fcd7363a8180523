//! Closed-form asymptotic quantities for the fitted drift and diffusion
//! parameters, the drift Wald test, the population limit of the diffusion
//! contrast and tilted Gaussian moment identities.
//!
//! Index conventions: drift coordinates follow `beta = (vec(B), b)` with
//! column-stacked `vec`; diffusion coordinates follow the vech layout of
//! [`crate::linalg`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json::matrix_rows;
use crate::linalg::{
    basis_s, cholesky_lower, sym_sqrt, trace_product, vech_pairs, SpdMatrix, SymMatrix,
};
use crate::objective::DiffusionParams;
use crate::sim::SamplePath;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    #[serde(with = "matrix_rows")]
    pub b_hat: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub sigma_beta: DMatrix<f64>,
    pub wald_stat: f64,
    pub wald_df: usize,
    pub wald_pvalue: f64,
    #[serde(with = "matrix_rows")]
    pub xi: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub ell: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub cov_vech_sigma: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub joint_cov: DMatrix<f64>,
}

impl InferenceReport {
    /// Plug-in report at fitted parameters, testing `beta = beta_null`.
    pub fn compute(
        path: &SamplePath,
        fitted: &DiffusionParams,
        alpha: f64,
        beta_null: &[f64],
    ) -> Result<Self> {
        let d = fitted.dim();
        let b_hat = b_matrix_hat(path, fitted)?;
        let sigma_beta = sigma_beta(&b_hat, alpha, d)?;
        let wald = wald_test(&fitted.beta(), beta_null, &sigma_beta, path.n(), path.h())?;
        let (xi, ell) = xi_ell_matrices(&fitted.sigma, alpha)?;
        let cov_vs = cov_vech_sigma(&xi, &ell)?;
        let joint_cov = joint_covariance(&sigma_beta, &cov_vs);
        Ok(InferenceReport {
            b_hat,
            sigma_beta,
            wald_stat: wald.stat,
            wald_df: wald.df,
            wald_pvalue: wald.pvalue,
            xi,
            ell,
            cov_vech_sigma: cov_vs,
            joint_cov,
        })
    }
}

/// `(1/n) sum_i J_i' Sigma^-1 J_i` for arbitrary `d x p` drift Jacobians.
pub fn b_matrix_from_jacobians(
    jacobians: &[DMatrix<f64>],
    sigma: &SpdMatrix,
) -> Result<DMatrix<f64>> {
    let first = jacobians
        .first()
        .ok_or_else(|| Error::InvalidArgument("no Jacobians supplied".into()))?;
    let (d, p) = first.shape();
    if d != sigma.dim() || jacobians.iter().any(|j| j.shape() != (d, p)) {
        return Err(Error::InvalidArgument(
            "Jacobian shapes do not match sigma".into(),
        ));
    }
    let mut acc = DMatrix::zeros(p, p);
    for j in jacobians {
        acc += j.transpose() * sigma.solve(j);
    }
    acc /= jacobians.len() as f64;
    Ok((&acc + acc.transpose()) * 0.5)
}

/// Information matrix of the affine drift with the stationary measure
/// replaced by the empirical measure of `X_{t_0}, ..., X_{t_{n-1}}`.
pub fn b_matrix_hat(path: &SamplePath, params: &DiffusionParams) -> Result<DMatrix<f64>> {
    let d = params.dim();
    if path.dim() != d {
        return Err(Error::InvalidArgument(
            "path and parameter dimensions differ".into(),
        ));
    }
    // second moments of z = (x, 1)
    let n = path.n();
    let pts = path.points();
    let mut mom = DMatrix::<f64>::zeros(d + 1, d + 1);
    let mut z = vec![1.0; d + 1];
    for i in 0..n {
        for k in 0..d {
            z[k] = pts[(i, k)];
        }
        for a in 0..=d {
            for b in 0..=d {
                mom[(a, b)] += z[a] * z[b];
            }
        }
    }
    mom /= n as f64;
    let sinv = params.sigma.inverse();
    // column k*d + j of the Jacobian is z_k e_j
    let p = d * d + d;
    let mut out = DMatrix::zeros(p, p);
    for u in 0..p {
        let (ku, ju) = (u / d, u % d);
        for v in 0..p {
            let (kv, jv) = (v / d, v % d);
            out[(u, v)] = mom[(ku, kv)] * sinv[(ju, jv)];
        }
    }
    Ok(out)
}

/// `(1+a)^(d+2) / (1+2a)^(d/2+1)`, the efficiency loss of the drift estimator.
pub fn sigma_beta_factor(alpha: f64, d: usize) -> f64 {
    let d = d as f64;
    (1.0 + alpha).powf(d + 2.0) / (1.0 + 2.0 * alpha).powf(d / 2.0 + 1.0)
}

/// Asymptotic covariance of `sqrt(n h) (beta_hat - beta_0)`.
pub fn sigma_beta(b_hat: &DMatrix<f64>, alpha: f64, d: usize) -> Result<DMatrix<f64>> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be >= 0, got {alpha}"
        )));
    }
    let spd = SpdMatrix::from_matrix(b_hat)
        .map_err(|_| Error::Singular("drift information matrix is not positive definite".into()))?;
    Ok(spd.inverse() * sigma_beta_factor(alpha, d))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub stat: f64,
    pub df: usize,
    pub pvalue: f64,
}

/// Upper tail of the chi-square distribution with `df` degrees of freedom.
pub fn chi_square_sf(stat: f64, df: usize) -> f64 {
    if stat <= 0.0 {
        return 1.0;
    }
    statrs::function::gamma::gamma_ur(df as f64 / 2.0, stat / 2.0)
}

/// `n h (beta_hat - beta_null)' Sigma_beta^-1 (beta_hat - beta_null)` against chi-square(p).
pub fn wald_test(
    beta_hat: &[f64],
    beta_null: &[f64],
    sigma_beta_hat: &DMatrix<f64>,
    n: usize,
    h: f64,
) -> Result<WaldTest> {
    let p = beta_hat.len();
    if beta_null.len() != p || sigma_beta_hat.shape() != (p, p) {
        return Err(Error::InvalidArgument(format!(
            "Wald test needs vectors of length {p} and a {p}x{p} covariance"
        )));
    }
    let spd = SpdMatrix::from_matrix(sigma_beta_hat)
        .map_err(|_| Error::Singular("drift covariance is not positive definite".into()))?;
    let diff = DVector::from_iterator(p, beta_hat.iter().zip(beta_null).map(|(a, b)| a - b));
    let quad = diff.dot(&spd.solve_vec(&diff));
    let stat = (n as f64 * h * quad).max(0.0);
    Ok(WaldTest {
        stat,
        df: p,
        pvalue: chi_square_sf(stat, p),
    })
}

/// Score-variance (`xi`) and sensitivity (`ell`) matrices of the diffusion
/// estimator, indexed by vech pairs and built from `A_kl = Sigma_0^-1 S_kl`.
pub fn xi_ell_matrices(sigma0: &SpdMatrix, alpha: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "alpha must be >= 0, got {alpha}"
        )));
    }
    let d = sigma0.dim();
    let pairs = vech_pairs(d);
    let a_mats: Vec<DMatrix<f64>> = pairs
        .iter()
        .map(|&(r, c)| Ok(sigma0.solve(basis_s(r, c, d)?.as_matrix())))
        .collect::<Result<_>>()?;
    let traces: Vec<f64> = a_mats.iter().map(|a| a.trace()).collect();
    let df = d as f64;
    let xi_scale = (1.0 + alpha).powf(df + 2.0) * (1.0 + 2.0 * alpha).powf(-df / 2.0 - 2.0);
    let a2 = alpha * alpha;
    let m = pairs.len();
    let mut xi = DMatrix::zeros(m, m);
    let mut ell = DMatrix::zeros(m, m);
    for u in 0..m {
        for v in u..m {
            let tt = traces[u] * traces[v];
            let tp = trace_product(&a_mats[u], &a_mats[v])?;
            let x = xi_scale * (a2 * tt + 0.5 * tp) - 0.25 * a2 * tt;
            let l = a2 / (4.0 * (1.0 + alpha)) * tt + tp / (2.0 * (1.0 + alpha));
            xi[(u, v)] = x;
            xi[(v, u)] = x;
            ell[(u, v)] = l;
            ell[(v, u)] = l;
        }
    }
    Ok((xi, ell))
}

/// Sandwich `ell^-T xi ell^-1` by LU solves.
pub fn cov_vech_sigma(xi: &DMatrix<f64>, ell: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !ell.is_square() || xi.shape() != ell.shape() {
        return Err(Error::InvalidArgument(
            "xi and ell must be square and conformable".into(),
        ));
    }
    let singular = || Error::Singular("sensitivity matrix is singular".into());
    let lu_t = ell.transpose().lu();
    let y = lu_t.solve(xi).ok_or_else(singular)?;
    let out = lu_t.solve(&y.transpose()).ok_or_else(singular)?.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// Block-diagonal joint covariance of `(beta_hat, vech(Sigma_hat))`.
pub fn joint_covariance(sigma_beta: &DMatrix<f64>, cov_vs: &DMatrix<f64>) -> DMatrix<f64> {
    let p = sigma_beta.nrows();
    let q = cov_vs.nrows();
    let mut out = DMatrix::zeros(p + q, p + q);
    out.view_mut((0, 0), (p, p)).copy_from(sigma_beta);
    out.view_mut((p, p), (q, q)).copy_from(cov_vs);
    out
}

/// Population limit of the diffusion contrast at `sigma` when the data have
/// diffusion matrix `sigma0`.
pub fn psi_limit(sigma: &SpdMatrix, sigma0: &SpdMatrix, alpha: f64) -> Result<f64> {
    Ok(psi_parts(sigma, sigma0, alpha)?.value)
}

/// Gradient of [`psi_limit`] as a symmetric matrix `G` with `dPsi = tr(G dSigma)`.
pub fn psi_limit_gradient(
    sigma: &SpdMatrix,
    sigma0: &SpdMatrix,
    alpha: f64,
) -> Result<DMatrix<f64>> {
    Ok(psi_parts(sigma, sigma0, alpha)?.grad)
}

struct PsiParts {
    value: f64,
    grad: DMatrix<f64>,
}

fn psi_parts(sigma: &SpdMatrix, sigma0: &SpdMatrix, alpha: f64) -> Result<PsiParts> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "psi_limit needs alpha > 0, got {alpha}"
        )));
    }
    let d = sigma.dim();
    if sigma0.dim() != d {
        return Err(Error::InvalidArgument(
            "sigma and sigma0 dimensions differ".into(),
        ));
    }
    let root = sym_sqrt(sigma0)?.into_matrix();
    let sinv = sigma.inverse();
    let inner = DMatrix::identity(d, d) + &root * &sinv * &root * alpha;
    let inner = SpdMatrix::from_matrix(&inner)?;
    let det_pow = (-0.5 * alpha * sigma.log_det()).exp();
    let k = (-0.5 * inner.log_det()).exp();
    let c = (1.0 + alpha).powf(-(d as f64) / 2.0);
    let w = 1.0 + 1.0 / alpha;
    let value = c * det_pow - w * det_pow * k;
    let tilt = &sinv * &root * inner.solve(&(&root * &sinv));
    let grad =
        &sinv * (-0.5 * alpha * c * det_pow) + (&sinv - tilt) * (0.5 * alpha * w * det_pow * k);
    Ok(PsiParts {
        value,
        grad: (&grad + grad.transpose()) * 0.5,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TiltedMoments {
    /// `E[exp(-(a/2) Z'MZ)]`
    pub m0: f64,
    /// `E[Z'BZ exp(-(a/2) Z'MZ)]`
    pub m1: f64,
    /// `E[(Z'BZ)(Z'CZ) exp(-(a/2) Z'MZ)]`
    pub m2: f64,
}

/// Closed-form tilted moments of `Z ~ N(0, I)` via `Q = I + a M`.
pub fn tilted_gaussian_moments(
    m: &SymMatrix,
    b: &SymMatrix,
    c: &SymMatrix,
    alpha: f64,
) -> Result<TiltedMoments> {
    let d = m.dim();
    if b.dim() != d || c.dim() != d {
        return Err(Error::InvalidArgument(
            "moment matrices must share a dimension".into(),
        ));
    }
    let q = DMatrix::identity(d, d) + m.as_matrix() * alpha;
    cholesky_lower(&q).map_err(|_| Error::Domain("I + alpha M is not positive definite".into()))?;
    let q = SpdMatrix::from_matrix(&q)?;
    let m0 = (-0.5 * q.log_det()).exp();
    let bq = q.solve(b.as_matrix()).transpose();
    let cq = q.solve(c.as_matrix()).transpose();
    let tb = bq.trace();
    let tc = cq.trace();
    Ok(TiltedMoments {
        m0,
        m1: m0 * tb,
        m2: m0 * (tb * tc + 2.0 * trace_product(&bq, &cq)?),
    })
}
