//! Euler–Maruyama simulation of affine-drift diffusions, additive outlier
//! contamination and the path CSV format.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{sym_sqrt, SpdMatrix, SymMatrix};

/// Name of the generator recorded in run metadata.
pub const RNG_ALGORITHM: &str =
    "ChaCha20 (rand_chacha 0.9), normals by ziggurat (rand_distr StandardNormal)";

/// Exponent of the step-size schedule `h_n = n^(-0.55)`.
pub const STEP_EXPONENT: f64 = -0.55;

/// Affine drift `a(x) = B x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftAffine {
    pub matrix: DMatrix<f64>,
    pub intercept: DVector<f64>,
}

impl DriftAffine {
    pub fn new(matrix: DMatrix<f64>, intercept: DVector<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() != intercept.len() {
            return Err(Error::InvalidArgument(format!(
                "drift matrix {:?} and intercept of length {} are not conformable",
                matrix.shape(),
                intercept.len()
            )));
        }
        if matrix
            .iter()
            .chain(intercept.iter())
            .any(|x| !x.is_finite())
        {
            return Err(Error::InvalidArgument(
                "drift has non-finite entries".into(),
            ));
        }
        Ok(DriftAffine { matrix, intercept })
    }

    pub fn zeros(d: usize) -> Self {
        DriftAffine {
            matrix: DMatrix::zeros(d, d),
            intercept: DVector::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.intercept.len()
    }

    /// Number of drift parameters, `d^2 + d`.
    pub fn n_params(&self) -> usize {
        let d = self.dim();
        d * d + d
    }

    /// `beta = (vec(B), b)` with `vec` stacking columns.
    pub fn to_beta(&self) -> Vec<f64> {
        self.matrix
            .iter()
            .chain(self.intercept.iter())
            .copied()
            .collect()
    }

    pub fn from_beta(beta: &[f64], d: usize) -> Result<Self> {
        if beta.len() != d * d + d {
            return Err(Error::InvalidArgument(format!(
                "drift vector has length {}, expected {}",
                beta.len(),
                d * d + d
            )));
        }
        DriftAffine::new(
            DMatrix::from_column_slice(d, d, &beta[..d * d]),
            DVector::from_column_slice(&beta[d * d..]),
        )
    }

    /// Evaluates `B x + b` for a row slice `x`, writing into `out`.
    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate().take(self.dim()) {
            *o = x
                .iter()
                .enumerate()
                .fold(self.intercept[j], |acc, (k, xk)| {
                    acc + self.matrix[(j, k)] * xk
                });
        }
    }
}

/// Equally spaced observations `X_{t_0}, ..., X_{t_n}` stored row-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePath {
    h: f64,
    points: DMatrix<f64>,
}

impl SamplePath {
    pub fn new(h: f64, points: DMatrix<f64>) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {h}"
            )));
        }
        if points.nrows() < 2 || points.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "a path needs at least two observations of a non-empty state".into(),
            ));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("path has non-finite entries".into()));
        }
        Ok(SamplePath { h, points })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of increments.
    pub fn n(&self) -> usize {
        self.points.nrows() - 1
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    /// Row-major copy of the observations, `(n + 1) * d` values.
    pub fn to_row_major(&self) -> Vec<f64> {
        let (rows, d) = self.points.shape();
        let mut out = Vec::with_capacity(rows * d);
        for i in 0..rows {
            for j in 0..d {
                out.push(self.points[(i, j)]);
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim();
        let mut header = String::from("t");
        for j in 1..=d {
            header.push_str(&format!(",x{j}"));
        }
        writeln!(w, "{header}")?;
        for i in 0..self.points.nrows() {
            let mut line = format!("{:.16e}", i as f64 * self.h);
            for j in 0..d {
                line.push_str(&format!(",{:.16e}", self.points[(i, j)]));
            }
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the `t,x1,...,xd` format; the step size is taken from the time column.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(r);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Parse(e.to_string()))?
            .clone();
        if headers.len() < 2 || &headers[0] != "t" {
            return Err(Error::Parse("expected header t,x1,...,xd".into()));
        }
        let d = headers.len() - 1;
        let mut times = Vec::new();
        let mut data = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            if rec.len() != d + 1 {
                return Err(Error::Parse(format!(
                    "row {} has {} fields",
                    line + 1,
                    rec.len()
                )));
            }
            let mut vals = rec.iter().map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {e}", line + 1)))
            });
            times.push(vals.next().unwrap()?);
            for v in vals {
                data.push(v?);
            }
        }
        if times.len() < 2 {
            return Err(Error::Parse("path needs at least two rows".into()));
        }
        let h = times[1] - times[0];
        let span = times[times.len() - 1] - times[0];
        let expected = h * (times.len() - 1) as f64;
        if !(h > 0.0) || (span - expected).abs() > 1e-9 * span.abs().max(1.0) {
            return Err(Error::Parse("time column is not equally spaced".into()));
        }
        SamplePath::new(h, DMatrix::from_row_slice(times.len(), d, &data))
    }
}

/// Outlier contamination: a fraction `eps` of observations receive `+ kappa * Z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContaminationSpec {
    pub eps: f64,
    pub kappa: f64,
    pub rng_seed: u64,
}

impl ContaminationSpec {
    pub fn new(eps: f64, kappa: f64, rng_seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::InvalidArgument(format!(
                "eps must lie in [0, 1), got {eps}"
            )));
        }
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "kappa must be >= 0, got {kappa}"
            )));
        }
        Ok(ContaminationSpec {
            eps,
            kappa,
            rng_seed,
        })
    }
}

/// `h_n = n^(-0.55)`.
pub fn step_size(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("step_size needs n >= 1".into()));
    }
    Ok((n as f64).powf(STEP_EXPONENT))
}

/// Euler–Maruyama path of `dX = (B X + b) dt + Sigma^{1/2} dW`.
///
/// `sigma` must be SPD or exactly zero (deterministic path).
pub fn simulate_path(
    drift: &DriftAffine,
    sigma: &SymMatrix,
    x0: &[f64],
    n: usize,
    h: f64,
    seed: u64,
) -> Result<SamplePath> {
    let d = drift.dim();
    if sigma.dim() != d || x0.len() != d {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: drift {d}, sigma {}, x0 {}",
            sigma.dim(),
            x0.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("simulate_path needs n >= 1".into()));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive, got {h}"
        )));
    }
    let noise_scale = if sigma.as_matrix().iter().all(|&x| x == 0.0) {
        None
    } else {
        let spd = SpdMatrix::new(sigma.clone())?;
        Some(sym_sqrt(&spd)?.into_matrix() * h.sqrt())
    };

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut points = DMatrix::zeros(n + 1, d);
    let mut prev = x0.to_vec();
    let mut next = vec![0.0; d];
    let mut a = vec![0.0; d];
    let mut z = vec![0.0; d];
    for j in 0..d {
        points[(0, j)] = prev[j];
    }
    for i in 1..=n {
        drift.eval_into(&prev, &mut a);
        for j in 0..d {
            next[j] = prev[j] + a[j] * h;
        }
        if let Some(scale) = &noise_scale {
            for zj in z.iter_mut() {
                *zj = StandardNormal.sample(&mut rng);
            }
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += scale[(j, k)] * z[k];
                }
                next[j] += acc;
            }
        }
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::SimulationDiverged { step: i });
        }
        for j in 0..d {
            points[(i, j)] = next[j];
        }
        std::mem::swap(&mut prev, &mut next);
    }
    SamplePath::new(h, points)
}

/// Contaminates a path and also returns the selected row indices (ascending).
pub fn contaminate_with_indices(
    path: &SamplePath,
    spec: &ContaminationSpec,
) -> (SamplePath, Vec<usize>) {
    let rows = path.points.nrows();
    let count = (spec.eps * rows as f64).round() as usize;
    if count == 0 || spec.kappa == 0.0 {
        return (path.clone(), Vec::new());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.rng_seed);
    let mut chosen = rand::seq::index::sample(&mut rng, rows, count.min(rows)).into_vec();
    chosen.sort_unstable();
    let mut points = path.points.clone();
    for &i in &chosen {
        for j in 0..path.dim() {
            let z: f64 = StandardNormal.sample(&mut rng);
            points[(i, j)] += spec.kappa * z;
        }
    }
    (SamplePath { h: path.h, points }, chosen)
}

/// Adds `kappa * N(0, I)` shocks to `round(eps * (n + 1))` uniformly chosen observations.
///
/// The initial observation is eligible.
pub fn contaminate(path: &SamplePath, spec: &ContaminationSpec) -> SamplePath {
    contaminate_with_indices(path, spec).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn true_model() -> (DriftAffine, SymMatrix) {
        (
            DriftAffine::new(
                DMatrix::from_row_slice(2, 2, &[-0.6, -0.2, 0.1, -0.4]),
                DVector::from_vec(vec![2.0, 1.0]),
            )
            .unwrap(),
            SymMatrix::from_row_slice(2, &[1.0, 0.5, 0.5, 0.7]).unwrap(),
        )
    }

    #[test]
    fn step_size_examples() {
        assert_eq!(step_size(1).unwrap(), 1.0);
        let h = step_size(1024).unwrap();
        assert_abs_diff_eq!(h, (-0.55 * 1024f64.ln()).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(h, 0.022097, epsilon = 1e-6);
        assert_abs_diff_eq!(step_size(100).unwrap(), 0.07943, epsilon = 1e-5);
        assert!(step_size(0).is_err());
    }

    #[test]
    fn deterministic_constant_drift() {
        let drift =
            DriftAffine::new(DMatrix::zeros(2, 2), DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let p = simulate_path(&drift, &SymMatrix::zeros(2), &[0.0, 0.0], 10, 0.1, 7).unwrap();
        assert_abs_diff_eq!(p.points()[(10, 0)], 1.0, epsilon = 1e-12);
        assert_eq!(p.points()[(10, 1)], 0.0);

        let p = simulate_path(
            &DriftAffine::zeros(2),
            &SymMatrix::zeros(2),
            &[3.0, -2.0],
            25,
            0.1,
            7,
        )
        .unwrap();
        for i in 0..=25 {
            assert_eq!(p.points()[(i, 0)], 3.0);
            assert_eq!(p.points()[(i, 1)], -2.0);
        }
    }

    #[test]
    fn increments_centered() {
        let (drift, sigma) = true_model();
        let n = 1000;
        let h = step_size(n).unwrap();
        let p = simulate_path(&drift, &sigma, &[0.0, 0.0], n, h, 11).unwrap();
        let mut a = [0.0; 2];
        let mut sum = [0.0; 2];
        for i in 1..=n {
            let prev: Vec<f64> = p.points().row(i - 1).iter().copied().collect();
            drift.eval_into(&prev, &mut a);
            for j in 0..2 {
                sum[j] += p.points()[(i, j)] - prev[j] - a[j] * h;
            }
        }
        for j in 0..2 {
            let mean = sum[j] / n as f64;
            let bound = 4.0 * (sigma[(j, j)] * h / n as f64).sqrt();
            assert!(mean.abs() < bound, "coordinate {j}: {mean} vs {bound}");
        }
    }

    #[test]
    fn seeded_paths_are_reproducible() {
        let (drift, sigma) = true_model();
        let a = simulate_path(&drift, &sigma, &[0.0, 0.0], 200, 0.05, 99).unwrap();
        let b = simulate_path(&drift, &sigma, &[0.0, 0.0], 200, 0.05, 99).unwrap();
        let c = simulate_path(&drift, &sigma, &[0.0, 0.0], 200, 0.05, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn divergence_reports_step() {
        let drift =
            DriftAffine::new(DMatrix::from_element(1, 1, 1e300), DVector::zeros(1)).unwrap();
        let err = simulate_path(&drift, &SymMatrix::zeros(1), &[1.0], 10, 1.0, 0).unwrap_err();
        assert!(
            matches!(err, Error::SimulationDiverged { step: 2 }),
            "{err}"
        );
    }

    #[test]
    fn rejects_indefinite_sigma() {
        let sigma = SymMatrix::from_row_slice(2, &[1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(simulate_path(&DriftAffine::zeros(2), &sigma, &[0.0, 0.0], 5, 0.1, 0).is_err());
    }

    #[test]
    fn contamination_examples() {
        let (drift, sigma) = true_model();
        let p = simulate_path(&drift, &sigma, &[0.0, 0.0], 999, 0.02, 5).unwrap();
        assert_eq!(
            contaminate(&p, &ContaminationSpec::new(0.0, 5.0, 1).unwrap()),
            p
        );
        assert_eq!(
            contaminate(&p, &ContaminationSpec::new(0.1, 0.0, 1).unwrap()),
            p
        );

        let spec = ContaminationSpec::new(0.10, 5.0, 1).unwrap();
        let (c, idx) = contaminate_with_indices(&p, &spec);
        assert_eq!(idx.len(), 100);
        let differing: Vec<usize> = (0..1000)
            .filter(|&i| c.points().row(i) != p.points().row(i))
            .collect();
        assert_eq!(differing, idx);
        assert_eq!(c.h(), p.h());
        assert_eq!(c.n(), p.n());
        assert_eq!(contaminate(&p, &spec), c);
        assert!(ContaminationSpec::new(1.0, 5.0, 0).is_err());
        assert!(ContaminationSpec::new(0.1, -1.0, 0).is_err());
    }

    #[test]
    fn euler_global_error_is_first_order() {
        // dx = -x dt from x0 = 1: exact x(T) = exp(-T)
        let drift = DriftAffine::new(-DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        let t_end = 2.0;
        let err = |n: usize| {
            let h = t_end / n as f64;
            let p = simulate_path(&drift, &SymMatrix::zeros(2), &[1.0, 1.0], n, h, 0).unwrap();
            (p.points()[(n, 0)] - (-t_end).exp()).abs()
        };
        for n in [50usize, 100, 200] {
            let ratio = err(n) / err(2 * n);
            assert!((1.7..=2.3).contains(&ratio), "ratio {ratio} at n={n}");
        }
    }

    #[test]
    fn increment_covariance_matches_sigma() {
        let (_, sigma) = true_model();
        let n = 100_000;
        let h = 0.01;
        let p = simulate_path(&DriftAffine::zeros(2), &sigma, &[0.0, 0.0], n, h, 3).unwrap();
        let mut cov = DMatrix::<f64>::zeros(2, 2);
        for i in 1..=n {
            let dx = (p.points().row(i) - p.points().row(i - 1)).transpose() / h.sqrt();
            cov += &dx * dx.transpose();
        }
        cov /= n as f64;
        let rel = (cov - sigma.as_matrix()).norm() / sigma.as_matrix().norm();
        assert!(rel < 0.05, "relative error {rel}");
    }

    #[test]
    fn csv_roundtrip_is_lossless() {
        let (drift, sigma) = true_model();
        let p = simulate_path(&drift, &sigma, &[0.0, 0.0], 50, step_size(50).unwrap(), 8).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2\n"));
        let q = SamplePath::read_csv(buf.as_slice()).unwrap();
        assert_eq!(q.points(), p.points());
        assert_abs_diff_eq!(q.h(), p.h(), epsilon = 1e-15);
    }

    #[test]
    fn csv_rejects_bad_input() {
        assert!(SamplePath::read_csv("t,x1\n0,1\n".as_bytes()).is_err());
        assert!(SamplePath::read_csv("t,x1\n0,1\n1,2\n3,4\n".as_bytes()).is_err());
        assert!(SamplePath::read_csv("s,x1\n0,1\n1,2\n".as_bytes()).is_err());
        assert!(SamplePath::read_csv("t,x1\n0,1\n1,abc\n".as_bytes()).is_err());
    }
}
