//! Gradient-based quasi-Newton minimization (BFGS, inverse-Hessian form) with
//! a backtracking Armijo line search.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Stopping rules.
#[derive(Clone, Copy, Debug)]
pub struct BfgsOptions {
    pub max_iters: usize,
    /// Target for the max-norm of the gradient.
    pub grad_tol: f64,
    /// Smallest accepted step, relative to `1 + |x|_inf`.
    pub step_tol: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub step_length: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    LineSearchFailed,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad: DVector<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub trace: Vec<IterRecord>,
}

impl BfgsResult {
    pub fn grad_norm(&self) -> f64 {
        self.grad.amax()
    }
}

/// The start point produced a non-finite objective or gradient.
#[derive(Clone, Debug)]
pub struct NonFiniteStart;

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
/// Relative objective noise level tolerated by the approximate Wolfe test.
const F_NOISE: f64 = 1e-12;

/// Minimizes `f`, which returns `None` outside its domain.
pub fn minimize<F>(
    mut f: F,
    x0: DVector<f64>,
    opts: &BfgsOptions,
) -> Result<BfgsResult, NonFiniteStart>
where
    F: FnMut(&DVector<f64>) -> Option<(f64, DVector<f64>)>,
{
    let dim = x0.len();
    let (mut fx, mut gx) = match f(&x0) {
        Some((v, g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => (v, g),
        _ => return Err(NonFiniteStart),
    };
    let mut x = x0;
    let mut hinv = DMatrix::<f64>::identity(dim, dim);
    let mut fresh = true;
    let mut trace = vec![IterRecord {
        iteration: 0,
        objective: fx,
        grad_norm: gx.amax(),
        step_length: 0.0,
    }];
    let mut iterations = 0;
    let termination = loop {
        if gx.amax() <= opts.grad_tol {
            break Termination::GradientTolerance;
        }
        if iterations >= opts.max_iters {
            break Termination::MaxIterations;
        }
        let mut dir = -(&hinv * &gx);
        let mut slope = gx.dot(&dir);
        if !(slope < 0.0) {
            hinv.fill_with_identity();
            fresh = true;
            dir = -gx.clone();
            slope = gx.dot(&dir);
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = &x + &dir * t;
            if let Some((ft, gt)) = f(&trial) {
                // near a minimum, objective differences drown in rounding; the
                // approximate Wolfe test falls back on the directional derivative
                let armijo = ft <= fx + ARMIJO_C1 * t * slope;
                let approx_wolfe = ft <= fx + F_NOISE * fx.abs()
                    && gt.dot(&dir) <= (2.0 * ARMIJO_C1 - 1.0) * slope
                    && gt.dot(&dir) >= 0.9 * slope;
                if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && (armijo || approx_wolfe) {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            if fresh {
                break Termination::LineSearchFailed;
            }
            // retry once along steepest descent before giving up
            hinv.fill_with_identity();
            fresh = true;
            continue;
        };

        iterations += 1;
        let s = &x_new - &x;
        let y = &g_new - &gx;
        let step_inf = s.amax();
        x = x_new;
        fx = f_new;
        gx = g_new;
        trace.push(IterRecord {
            iteration: iterations,
            objective: fx,
            grad_norm: gx.amax(),
            step_length: t,
        });

        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                // scale the initial inverse Hessian before the first update
                hinv *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }

        if gx.amax() <= opts.grad_tol {
            break Termination::GradientTolerance;
        }
        if step_inf <= opts.step_tol * (1.0 + x.amax()) {
            if fresh {
                break Termination::StepTolerance;
            }
            hinv.fill_with_identity();
            fresh = true;
        }
    };
    Ok(BfgsResult {
        x,
        value: fx,
        grad: gx,
        iterations,
        termination,
        trace,
    })
}
