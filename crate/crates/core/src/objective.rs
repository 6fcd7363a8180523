//! The density power divergence contrast for the Euler (local Gaussian)
//! transition density and its analytic gradient.
//!
//! For `alpha > 0` each increment contributes
//!
//! ```text
//! V_i = (1+a)^(-d/2) |S|^(-a/2) - (1 + 1/a) |S|^(-a/2) exp(-(a/2) Q_i),
//! Q_i = R_i' S^-1 R_i / h,   R_i = X_i - X_{i-1} - (B X_{i-1} + b) h,
//! ```
//!
//! and for `alpha = 0` the Gaussian quasi-likelihood term
//! `V_i = log|S| / 2 + Q_i / 2` (constants in `2 pi` and `h` dropped).
//! Everything is averaged over the `n` increments.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{vech_pairs, SpdMatrix};
use crate::sim::{DriftAffine, SamplePath};

/// Full parameter `theta = (beta, vech(Sigma))` with `beta = (vec(B), b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionParams {
    pub drift: DriftAffine,
    pub sigma: SpdMatrix,
}

impl DiffusionParams {
    pub fn new(drift: DriftAffine, sigma: SpdMatrix) -> Result<Self> {
        if drift.dim() != sigma.dim() {
            return Err(Error::InvalidArgument(format!(
                "drift has dimension {} but sigma is {}x{}",
                drift.dim(),
                sigma.dim(),
                sigma.dim()
            )));
        }
        Ok(DiffusionParams { drift, sigma })
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn beta(&self) -> Vec<f64> {
        self.drift.to_beta()
    }
}

/// Objective value with gradients in `beta` and in `vech(Sigma)` coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    pub grad_beta: Vec<f64>,
    pub grad_vech_sigma: Vec<f64>,
}

/// Raw evaluation: value, `beta` gradient and the symmetric matrix gradient
/// `G` with `dF = tr(G dSigma)`.
pub(crate) struct Evaluation {
    pub value: f64,
    pub grad_beta: Vec<f64>,
    pub grad_sigma: DMatrix<f64>,
}

fn check_inputs(path: &SamplePath, params: &DiffusionParams, alpha: f64) -> Result<()> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "alpha must be >= 0, got {alpha}"
        )));
    }
    if path.dim() != params.dim() {
        return Err(Error::InvalidArgument(format!(
            "path has dimension {} but parameters have {}",
            path.dim(),
            params.dim()
        )));
    }
    Ok(())
}

/// `R_i = X_i - X_{i-1} - (B X_{i-1} + b) h`, one row per increment.
pub fn residuals(path: &SamplePath, drift: &DriftAffine) -> Result<DMatrix<f64>> {
    let d = path.dim();
    if drift.dim() != d {
        return Err(Error::InvalidArgument(
            "drift and path dimensions differ".into(),
        ));
    }
    let h = path.h();
    let pts = path.points();
    let mut out = DMatrix::zeros(path.n(), d);
    let mut prev = vec![0.0; d];
    let mut a = vec![0.0; d];
    for i in 1..=path.n() {
        for j in 0..d {
            prev[j] = pts[(i - 1, j)];
        }
        drift.eval_into(&prev, &mut a);
        for j in 0..d {
            out[(i - 1, j)] = pts[(i, j)] - prev[j] - a[j] * h;
        }
    }
    Ok(out)
}

/// Per-increment contributions `V_i` (not averaged).
pub fn terms(path: &SamplePath, params: &DiffusionParams, alpha: f64) -> Result<Vec<f64>> {
    check_inputs(path, params, alpha)?;
    let mut out = Vec::with_capacity(path.n());
    walk(path, params, alpha, |v, _, _, _| out.push(v));
    Ok(out)
}

/// Visits every increment with `(V_i, weight, x_{i-1}, Sigma^-1 R_i)`, where
/// `weight` is the exponential factor (1 for `alpha = 0`).
fn walk<F: FnMut(f64, f64, &[f64], &[f64])>(
    path: &SamplePath,
    params: &DiffusionParams,
    alpha: f64,
    mut visit: F,
) {
    let d = path.dim();
    let h = path.h();
    let pts = path.points();
    let l = params.sigma.chol();
    let log_det = params.sigma.log_det();
    let (base, scale) = if alpha > 0.0 {
        let det_pow = (-0.5 * alpha * log_det).exp();
        (
            (1.0 + alpha).powf(-(d as f64) / 2.0) * det_pow,
            (1.0 + 1.0 / alpha) * det_pow,
        )
    } else {
        (0.5 * log_det, 0.0)
    };

    let mut x = vec![0.0; d];
    let mut a = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut u = vec![0.0; d];
    for i in 1..=path.n() {
        for j in 0..d {
            x[j] = pts[(i - 1, j)];
        }
        params.drift.eval_into(&x, &mut a);
        for j in 0..d {
            y[j] = pts[(i, j)] - x[j] - a[j] * h;
        }
        // forward solve L y = r in place
        for j in 0..d {
            let mut s = y[j];
            for k in 0..j {
                s -= l[(j, k)] * y[k];
            }
            y[j] = s / l[(j, j)];
        }
        let q = y.iter().map(|v| v * v).sum::<f64>() / h;
        // back solve L' u = y
        for j in (0..d).rev() {
            let mut s = y[j];
            for k in (j + 1)..d {
                s -= l[(k, j)] * u[k];
            }
            u[j] = s / l[(j, j)];
        }
        let (v, weight) = if alpha > 0.0 {
            let e = (-0.5 * alpha * q).exp();
            (base - scale * e, e)
        } else {
            (base + 0.5 * q, 1.0)
        };
        visit(v, weight, &x, &u);
    }
}

pub(crate) fn evaluate(
    path: &SamplePath,
    params: &DiffusionParams,
    alpha: f64,
    with_grad: bool,
) -> Result<Evaluation> {
    check_inputs(path, params, alpha)?;
    let d = path.dim();
    let n = path.n() as f64;
    let h = path.h();

    let mut value = 0.0;
    let mut wsum = 0.0;
    // sum of weight * u x' and weight * u, stacked as the beta gradient layout
    let mut wux = DMatrix::<f64>::zeros(d, d);
    let mut wu = DVector::<f64>::zeros(d);
    let mut wuu = DMatrix::<f64>::zeros(d, d);
    walk(path, params, alpha, |v, w, x, u| {
        value += v;
        if with_grad {
            wsum += w;
            for j in 0..d {
                let wuj = w * u[j];
                wu[j] += wuj;
                for k in 0..d {
                    wux[(j, k)] += wuj * x[k];
                    wuu[(j, k)] += wuj * u[k];
                }
            }
        }
    });
    value /= n;
    if !with_grad {
        return Ok(Evaluation {
            value,
            grad_beta: Vec::new(),
            grad_sigma: DMatrix::zeros(0, 0),
        });
    }

    let sigma_inv = params.sigma.inverse();
    let (beta_coef, grad_sigma) = if alpha > 0.0 {
        let det_pow = (-0.5 * alpha * params.sigma.log_det()).exp();
        let c = (1.0 + alpha).powf(-(d as f64) / 2.0);
        let w = 1.0 + 1.0 / alpha;
        let g = &sigma_inv * (-0.5 * alpha * c * det_pow * n)
            + (&sigma_inv * (0.5 * alpha * wsum) - &wuu * (0.5 * alpha / h)) * (w * det_pow);
        (-(1.0 + alpha) * det_pow, g / n)
    } else {
        let g = &sigma_inv * 0.5 - &wuu * (0.5 / (h * n));
        (-1.0, g)
    };

    let mut grad_beta = Vec::with_capacity(d * d + d);
    // vec(B) is column-major: entry (j, k) sits at k * d + j
    for k in 0..d {
        for j in 0..d {
            grad_beta.push(beta_coef * wux[(j, k)] / n);
        }
    }
    for j in 0..d {
        grad_beta.push(beta_coef * wu[j] / n);
    }
    Ok(Evaluation {
        value,
        grad_beta,
        grad_sigma,
    })
}

/// Converts a symmetric matrix gradient into `vech` coordinates, where an
/// off-diagonal coordinate moves both `sigma_rs` and `sigma_sr`.
pub(crate) fn matrix_grad_to_vech(g: &DMatrix<f64>) -> Vec<f64> {
    vech_pairs(g.nrows())
        .into_iter()
        .map(|(r, c)| {
            if r == c {
                g[(r, r)]
            } else {
                g[(r, c)] + g[(c, r)]
            }
        })
        .collect()
}

/// Averaged objective `(1/n) sum_i V_i` with both gradients.
pub fn objective(
    path: &SamplePath,
    params: &DiffusionParams,
    alpha: f64,
) -> Result<ObjectiveValue> {
    let ev = evaluate(path, params, alpha, true)?;
    Ok(ObjectiveValue {
        value: ev.value,
        grad_vech_sigma: matrix_grad_to_vech(&ev.grad_sigma),
        grad_beta: ev.grad_beta,
    })
}

/// Objective value only.
pub fn objective_value(path: &SamplePath, params: &DiffusionParams, alpha: f64) -> Result<f64> {
    Ok(evaluate(path, params, alpha, false)?.value)
}

pub fn gradient_beta(path: &SamplePath, params: &DiffusionParams, alpha: f64) -> Result<Vec<f64>> {
    Ok(evaluate(path, params, alpha, true)?.grad_beta)
}

pub fn gradient_vech_sigma(
    path: &SamplePath,
    params: &DiffusionParams,
    alpha: f64,
) -> Result<Vec<f64>> {
    Ok(matrix_grad_to_vech(
        &evaluate(path, params, alpha, true)?.grad_sigma,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{unvech, vech, SymMatrix, VechVector};
    use crate::sim::{simulate_path, step_size};
    use approx::assert_abs_diff_eq;

    fn true_params() -> DiffusionParams {
        DiffusionParams::new(
            DriftAffine::new(
                DMatrix::from_row_slice(2, 2, &[-0.6, -0.2, 0.1, -0.4]),
                DVector::from_vec(vec![2.0, 1.0]),
            )
            .unwrap(),
            SpdMatrix::from_row_slice(2, &[1.0, 0.5, 0.5, 0.7]).unwrap(),
        )
        .unwrap()
    }

    fn sample(n: usize, seed: u64) -> SamplePath {
        let p = true_params();
        simulate_path(
            &p.drift,
            p.sigma.as_sym(),
            &[0.0, 0.0],
            n,
            step_size(n).unwrap(),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn residual_examples() {
        let p = true_params();
        let path = simulate_path(&p.drift, &SymMatrix::zeros(2), &[0.5, -1.0], 30, 0.1, 0).unwrap();
        let r = residuals(&path, &p.drift).unwrap();
        assert!(r.iter().all(|&v| v.abs() < 1e-14));

        let path = sample(40, 1);
        let r = residuals(&path, &DriftAffine::zeros(2)).unwrap();
        for i in 0..40 {
            for j in 0..2 {
                assert_eq!(r[(i, j)], path.points()[(i + 1, j)] - path.points()[(i, j)]);
            }
        }

        let path =
            SamplePath::new(0.5, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0])).unwrap();
        let drift =
            DriftAffine::new(DMatrix::zeros(2, 2), DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let r = residuals(&path, &drift).unwrap();
        assert_eq!(r.row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.5]);
    }

    #[test]
    fn zero_residual_term() {
        let path =
            SamplePath::new(0.5, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0])).unwrap();
        let params = DiffusionParams::new(DriftAffine::zeros(2), SpdMatrix::identity(2)).unwrap();
        let v = objective(&path, &params, 1.0).unwrap();
        assert_abs_diff_eq!(v.value, -1.5, epsilon = 1e-15);
        assert!(v.grad_beta.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn huge_sigma_vanishes() {
        // Q_i -> 0 so the exponential tends to 1; the value decays through |S|^(-a/2)
        let path = sample(200, 4);
        let at = |c: f64, alpha: f64| {
            let mut params = true_params();
            params.sigma = params.sigma.scale(c).unwrap();
            objective_value(&path, &params, alpha).unwrap()
        };
        for alpha in [0.5, 1.0] {
            let v = at(1e8, alpha);
            assert!(v.abs() < 1e-3, "alpha {alpha}: {v}");
        }
        let mut prev = at(1e2, 0.1).abs();
        for c in [1e4, 1e8, 1e16, 1e32, 1e64] {
            let v = at(c, 0.1).abs();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn rejects_bad_alpha_and_dims() {
        let path = sample(20, 1);
        assert!(objective(&path, &true_params(), -0.1).is_err());
        assert!(objective(&path, &true_params(), f64::NAN).is_err());
        let p1 = DiffusionParams::new(DriftAffine::zeros(1), SpdMatrix::identity(1)).unwrap();
        assert!(objective(&path, &p1, 0.5).is_err());
    }

    #[test]
    fn term_lower_bound() {
        let path = sample(300, 2);
        let params = true_params();
        for alpha in [0.1, 0.3, 1.0] {
            let det_pow = params.sigma.det().powf(-alpha / 2.0);
            let lb = (1.0 + alpha).powf(-1.0) * det_pow - (1.0 + 1.0 / alpha) * det_pow;
            for v in terms(&path, &params, alpha).unwrap() {
                assert!(v >= lb - 1e-15);
            }
        }
    }

    #[test]
    fn resymmetrized_sigma_gives_identical_value() {
        let path = sample(100, 3);
        let params = true_params();
        let mirrored = params.sigma.as_matrix().transpose();
        let p2 = DiffusionParams::new(
            params.drift.clone(),
            SpdMatrix::from_matrix(&mirrored).unwrap(),
        )
        .unwrap();
        assert_eq!(
            objective_value(&path, &params, 0.3).unwrap(),
            objective_value(&path, &p2, 0.3).unwrap()
        );
    }

    /// Gaussian log-likelihood of the regression form, written independently.
    fn regression_nll(path: &SamplePath, params: &DiffusionParams) -> f64 {
        let h = path.h();
        let cov = params.sigma.as_matrix() / h;
        let inv = cov.clone().try_inverse().unwrap();
        let mut total = 0.0;
        for i in 1..=path.n() {
            let x = path.points().row(i - 1).transpose();
            let y = (path.points().row(i).transpose() - &x) / h;
            let e = y - (&params.drift.matrix * &x + &params.drift.intercept);
            total += 0.5 * cov.determinant().ln() + 0.5 * (e.transpose() * &inv * &e)[(0, 0)];
        }
        total / path.n() as f64
    }

    #[test]
    fn alpha_zero_matches_regression_likelihood_differences() {
        let path = sample(250, 5);
        let a = true_params();
        let mut b = true_params();
        b.drift.matrix[(0, 1)] += 0.3;
        b.drift.intercept[1] -= 0.2;
        b.sigma = SpdMatrix::from_row_slice(2, &[1.3, 0.2, 0.2, 0.5]).unwrap();
        let ours =
            objective_value(&path, &a, 0.0).unwrap() - objective_value(&path, &b, 0.0).unwrap();
        let theirs = regression_nll(&path, &a) - regression_nll(&path, &b);
        assert_abs_diff_eq!(ours, theirs, epsilon = 1e-10);
    }

    /// Univariate score in sigma^2 written out by hand.
    fn scalar_score(path: &SamplePath, beta: f64, intercept: f64, s2: f64, alpha: f64) -> f64 {
        let h = path.h();
        let mut total = 0.0;
        for i in 1..=path.n() {
            let x = path.points()[(i - 1, 0)];
            let r = path.points()[(i, 0)] - x - (beta * x + intercept) * h;
            let e = (-alpha * r * r / (2.0 * h * s2)).exp();
            let p = s2.powf(-alpha / 2.0);
            total += -alpha / 2.0 * (1.0 + alpha).powf(-0.5) * p / s2
                + (1.0 + 1.0 / alpha)
                    * p
                    * e
                    * (alpha / (2.0 * s2) - alpha * r * r / (2.0 * h * s2 * s2));
        }
        total / path.n() as f64
    }

    #[test]
    fn univariate_sigma_gradient_matches_scalar_formula() {
        let drift = DriftAffine::new(
            DMatrix::from_element(1, 1, -0.7),
            DVector::from_element(1, 0.4),
        )
        .unwrap();
        let sigma = SymMatrix::from_row_slice(1, &[0.8]).unwrap();
        let path = simulate_path(&drift, &sigma, &[0.0], 300, 0.05, 12).unwrap();
        for alpha in [0.05, 0.3, 1.2] {
            let params = DiffusionParams::new(
                DriftAffine::new(
                    DMatrix::from_element(1, 1, -0.5),
                    DVector::from_element(1, 0.3),
                )
                .unwrap(),
                SpdMatrix::from_row_slice(1, &[0.9]).unwrap(),
            )
            .unwrap();
            let g = gradient_vech_sigma(&path, &params, alpha).unwrap();
            let oracle = scalar_score(&path, -0.5, 0.3, 0.9, alpha);
            assert_abs_diff_eq!(g[0], oracle, epsilon = 1e-12 * oracle.abs().max(1.0));
        }
    }

    #[test]
    fn sigma_gradient_scale_equivariance() {
        // X -> cX with zero drift: F_c(c^2 S) = c^(-a d) F_1(S), so
        // grad_c(c^2 S) = c^(-a d - 2) grad_1(S).
        let base = sample(200, 9);
        let c = 1.7;
        let scaled = SamplePath::new(base.h(), base.points() * c).unwrap();
        let alpha = 0.4;
        let s = SpdMatrix::from_row_slice(2, &[1.2, 0.3, 0.3, 0.6]).unwrap();
        let p1 = DiffusionParams::new(DriftAffine::zeros(2), s.clone()).unwrap();
        let pc = DiffusionParams::new(DriftAffine::zeros(2), s.scale(c * c).unwrap()).unwrap();
        let g1 = gradient_vech_sigma(&base, &p1, alpha).unwrap();
        let gc = gradient_vech_sigma(&scaled, &pc, alpha).unwrap();
        let factor = c.powf(-alpha * 2.0 - 2.0);
        for (a, b) in gc.iter().zip(&g1) {
            assert_abs_diff_eq!(*a, factor * b, epsilon = 1e-8 * b.abs().max(1e-3));
        }
    }

    #[test]
    fn vech_gradient_uses_joint_offdiagonal_perturbation() {
        let path = sample(150, 6);
        let params = true_params();
        let alpha = 0.25;
        let g = gradient_vech_sigma(&path, &params, alpha).unwrap();
        let v0 = vech(params.sigma.as_sym());
        let step = 1e-6;
        for k in 0..3 {
            let shifted = |delta: f64| {
                let mut vals = v0.values().to_vec();
                vals[k] += delta;
                let s = SpdMatrix::new(unvech(&VechVector::new(2, vals).unwrap())).unwrap();
                objective_value(
                    &path,
                    &DiffusionParams::new(params.drift.clone(), s).unwrap(),
                    alpha,
                )
                .unwrap()
            };
            let fd = (shifted(step) - shifted(-step)) / (2.0 * step);
            assert_abs_diff_eq!(g[k], fd, epsilon = 1e-6 * fd.abs().max(1e-2));
        }
    }
}
