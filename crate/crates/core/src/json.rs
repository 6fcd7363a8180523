//! JSON shapes shared by the CLI and the C API. Matrices are row-major nested arrays.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::objective::DiffusionParams;
use crate::sim::DriftAffine;

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_row_iterator(
        nrows,
        ncols,
        rows.iter().flatten().copied(),
    ))
}

/// `#[serde(with = "matrix_rows")]` for `DMatrix<f64>` fields.
pub mod matrix_rows {
    use super::*;

    pub fn serialize<S: Serializer>(
        m: &DMatrix<f64>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        matrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        rows_to_matrix(&rows).map_err(serde::de::Error::custom)
    }
}

/// Serialized form of [`DiffusionParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsJson {
    #[serde(rename = "B")]
    pub drift_matrix: Vec<Vec<f64>>,
    #[serde(rename = "b")]
    pub intercept: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

impl From<&DiffusionParams> for ParamsJson {
    fn from(p: &DiffusionParams) -> Self {
        ParamsJson {
            drift_matrix: matrix_to_rows(&p.drift.matrix),
            intercept: p.drift.intercept.iter().copied().collect(),
            sigma: matrix_to_rows(p.sigma.as_matrix()),
        }
    }
}

impl TryFrom<&ParamsJson> for DiffusionParams {
    type Error = Error;

    fn try_from(p: &ParamsJson) -> Result<Self> {
        let drift = DriftAffine::new(
            rows_to_matrix(&p.drift_matrix)?,
            DVector::from_vec(p.intercept.clone()),
        )?;
        let sigma = SpdMatrix::from_matrix(&rows_to_matrix(&p.sigma)?)?;
        DiffusionParams::new(drift, sigma)
    }
}
