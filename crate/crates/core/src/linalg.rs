//! Dense symmetric-matrix utilities: half-vectorization, the symmetric basis
//! matrices `S_kl`, SPD validation and the log-Cholesky parameterization.
//!
//! All indices are zero-based. The half-vectorization order is column-major
//! over the lower triangle: `(s11, s21, ..., sd1, s22, ..., sdd)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative pivot threshold for the positive-definiteness check.
pub const PD_PIVOT_TOL: f64 = 1e-12;

/// Number of distinct entries of a symmetric `d x d` matrix.
pub fn vech_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Flat position of entry `(row, col)` (either order) in the vech layout.
pub fn vech_index(row: usize, col: usize, d: usize) -> usize {
    let (r, c) = if row >= col { (row, col) } else { (col, row) };
    debug_assert!(r < d);
    c * d - c * c.saturating_sub(1) / 2 + (r - c)
}

/// `(row, col)` pairs with `row >= col` in vech order.
pub fn vech_pairs(d: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(vech_len(d));
    for c in 0..d {
        for r in c..d {
            out.push((r, c));
        }
    }
    out
}

/// Recovers `d` from a vech length, if it is a triangular number.
pub fn dim_from_vech_len(len: usize) -> Option<usize> {
    (0..=len).find(|&d| vech_len(d) == len).filter(|&d| d > 0)
}

/// A square matrix with exactly symmetric storage.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Accepts `m` only if it is square and exactly symmetric.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidArgument(format!(
                "matrix is {}x{}, expected square",
                m.nrows(),
                m.ncols()
            )));
        }
        let d = m.nrows();
        for j in 0..d {
            for i in (j + 1)..d {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::InvalidArgument(format!(
                        "matrix not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(SymMatrix(m))
    }

    /// Builds a symmetric matrix from the lower triangle of `m`, ignoring the upper part.
    pub fn from_lower(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidArgument("matrix must be square".into()));
        }
        let d = m.nrows();
        let mut out = m.clone();
        for j in 0..d {
            for i in (j + 1)..d {
                out[(j, i)] = m[(i, j)];
            }
        }
        Ok(SymMatrix(out))
    }

    pub fn from_row_slice(d: usize, data: &[f64]) -> Result<Self> {
        if data.len() != d * d {
            return Err(Error::InvalidArgument(format!(
                "expected {} entries, got {}",
                d * d,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(d, d, data))
    }

    pub fn zeros(d: usize) -> Self {
        SymMatrix(DMatrix::zeros(d, d))
    }

    pub fn identity(d: usize) -> Self {
        SymMatrix(DMatrix::identity(d, d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix(&self.0 * c)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Half-vectorized symmetric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct VechVector {
    dim: usize,
    values: Vec<f64>,
}

impl VechVector {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != vech_len(dim) {
            return Err(Error::InvalidArgument(format!(
                "vech of a {dim}x{dim} matrix has {} entries, got {}",
                vech_len(dim),
                values.len()
            )));
        }
        Ok(VechVector { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

pub fn vech(m: &SymMatrix) -> VechVector {
    let d = m.dim();
    let values = vech_pairs(d).into_iter().map(|(r, c)| m[(r, c)]).collect();
    VechVector { dim: d, values }
}

pub fn unvech(v: &VechVector) -> SymMatrix {
    let d = v.dim;
    let mut m = DMatrix::zeros(d, d);
    for (&x, (r, c)) in v.values.iter().zip(vech_pairs(d)) {
        m[(r, c)] = x;
        m[(c, r)] = x;
    }
    SymMatrix(m)
}

/// Symmetric basis matrix `S_kl`: `E_kk` on the diagonal, `E_kl + E_lk` off it.
pub fn basis_s(k: usize, l: usize, d: usize) -> Result<SymMatrix> {
    if k >= d || l >= d {
        return Err(Error::InvalidArgument(format!(
            "basis index ({k},{l}) out of range for dimension {d}"
        )));
    }
    let mut m = DMatrix::zeros(d, d);
    m[(k, l)] = 1.0;
    m[(l, k)] = 1.0;
    Ok(SymMatrix(m))
}

/// `tr(a b)` without forming the product.
pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if !a.is_square() || a.shape() != b.shape() {
        return Err(Error::InvalidArgument(format!(
            "trace_product needs conformable square matrices, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let d = a.nrows();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    Ok(acc)
}

/// Lower Cholesky factor of the lower triangle of `m`.
///
/// Fails unless every pivot exceeds `PD_PIVOT_TOL` times the largest diagonal entry.
pub fn cholesky_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    let max_diag = (0..d).map(|i| m[(i, i)]).fold(f64::NEG_INFINITY, f64::max);
    if !(max_diag > 0.0) || !max_diag.is_finite() {
        return Err(Error::Domain("matrix is not positive definite".into()));
    }
    let tol = PD_PIVOT_TOL * max_diag;
    let mut l = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > tol) {
            return Err(Error::Domain(format!(
                "matrix is not positive definite (pivot {j} = {pivot:e})"
            )));
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..d {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Symmetric positive definite matrix with its cached Cholesky factor.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdMatrix {
    base: SymMatrix,
    chol: DMatrix<f64>,
}

impl SpdMatrix {
    pub fn new(base: SymMatrix) -> Result<Self> {
        if !base.is_finite() {
            return Err(Error::Domain("matrix has non-finite entries".into()));
        }
        let chol = cholesky_lower(base.as_matrix())?;
        Ok(SpdMatrix { base, chol })
    }

    /// Validates a general matrix, reading only its lower triangle.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        Self::new(SymMatrix::from_lower(m)?)
    }

    pub fn from_row_slice(d: usize, data: &[f64]) -> Result<Self> {
        Self::new(SymMatrix::from_row_slice(d, data)?)
    }

    pub fn identity(d: usize) -> Self {
        SpdMatrix {
            base: SymMatrix::identity(d),
            chol: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.base
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        self.base.as_matrix()
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.diagonal().iter().map(|x| x.ln()).sum::<f64>()
    }

    pub fn det(&self) -> f64 {
        self.log_det().exp()
    }

    /// Solves `self * x = rhs` by two triangular solves.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self
            .chol
            .solve_lower_triangular(rhs)
            .expect("Cholesky factor has a positive diagonal");
        self.chol
            .tr_solve_lower_triangular(&y)
            .expect("Cholesky factor has a positive diagonal")
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let y = self
            .chol
            .solve_lower_triangular(rhs)
            .expect("Cholesky factor has a positive diagonal");
        self.chol
            .tr_solve_lower_triangular(&y)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// Explicit inverse, re-symmetrized.
    pub fn inverse(&self) -> DMatrix<f64> {
        let d = self.dim();
        let inv = self.solve(&DMatrix::identity(d, d));
        (&inv + inv.transpose()) * 0.5
    }

    pub fn scale(&self, c: f64) -> Result<SpdMatrix> {
        SpdMatrix::new(self.base.scale(c))
    }
}

/// Maps unconstrained coordinates to an SPD matrix `L L^T`.
///
/// `params` follows the vech layout of the lower-triangular `L`, with each
/// diagonal entry stored as its logarithm.
pub fn spd_from_log_chol(params: &[f64]) -> Result<SpdMatrix> {
    let d = dim_from_vech_len(params.len()).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "log-Cholesky vector length {} is not d(d+1)/2",
            params.len()
        ))
    })?;
    if params.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(
            "log-Cholesky parameters must be finite".into(),
        ));
    }
    let l = log_chol_factor(params, d);
    let sigma = SymMatrix::from_lower(&(&l * l.transpose()))?;
    SpdMatrix::new(sigma)
}

/// Lower-triangular factor encoded by log-Cholesky coordinates.
pub fn log_chol_factor(params: &[f64], d: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(d, d);
    for (&x, (r, c)) in params.iter().zip(vech_pairs(d)) {
        l[(r, c)] = if r == c { x.exp() } else { x };
    }
    l
}

/// Pulls a symmetric matrix gradient `G` (with `dF = tr(G dSigma)`) back to
/// log-Cholesky coordinates: `dF/dL = 2 G L`, diagonal stored as a logarithm.
pub fn log_chol_gradient(g: &DMatrix<f64>, theta: &[f64], d: usize) -> Vec<f64> {
    let l = log_chol_factor(theta, d);
    let gl = g * &l * 2.0;
    vech_pairs(d)
        .into_iter()
        .map(|(r, c)| {
            if r == c {
                gl[(r, r)] * l[(r, r)]
            } else {
                gl[(r, c)]
            }
        })
        .collect()
}

/// Inverse of [`spd_from_log_chol`].
pub fn spd_to_log_chol(m: &SpdMatrix) -> Vec<f64> {
    let l = m.chol();
    vech_pairs(m.dim())
        .into_iter()
        .map(|(r, c)| if r == c { l[(r, c)].ln() } else { l[(r, c)] })
        .collect()
}

/// Symmetric positive definite square root via eigendecomposition.
pub fn sym_sqrt(m: &SpdMatrix) -> Result<SymMatrix> {
    let eig = SymmetricEigen::new(m.as_matrix().clone());
    if eig.eigenvalues.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Domain(
            "square root needs strictly positive eigenvalues".into(),
        ));
    }
    let root = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|v| v.sqrt()),
    );
    let q = &eig.eigenvectors;
    let r = q * DMatrix::from_diagonal(&root) * q.transpose();
    SymMatrix::from_lower(&((&r + r.transpose()) * 0.5))
}
