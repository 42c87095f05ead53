//! Dense linear algebra on top of `nalgebra`: jittered Cholesky, triangular
//! solves and log-determinants. No routine here forms an explicit inverse.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Row/column dense matrix of `f64`.
pub type DenseMatrix = DMatrix<f64>;

/// Jitter values tried in order by [`cholesky_psd`].
pub const DEFAULT_JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

const SYMMETRY_RTOL: f64 = 1e-10;
const SINGULAR_DIAG: f64 = 1e-300;

/// Lower Cholesky factor together with the jitter that had to be added.
#[derive(Debug, Clone)]
pub struct CholFactor {
    pub lower: DenseMatrix,
    pub jitter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Solve `L Y = B`.
    Forward,
    /// Solve `Lᵀ Y = B`.
    Backward,
}

fn max_abs(a: &DenseMatrix) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Factorizes `a + j I` for the first `j` of `ladder` that succeeds.
pub fn cholesky_psd(a: &DenseMatrix, ladder: &[f64]) -> Result<CholFactor> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "cholesky of {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    let asym = max_abs(&(a - a.transpose()));
    if asym > SYMMETRY_RTOL * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    cholesky_unchecked(a, ladder)
}

/// Same as [`cholesky_psd`] without the symmetry check; reads the lower triangle.
pub(crate) fn cholesky_unchecked(a: &DenseMatrix, ladder: &[f64]) -> Result<CholFactor> {
    let n = a.nrows();
    let mut last = 0.0;
    for &jitter in ladder {
        last = jitter;
        let mut m = a.clone();
        if jitter > 0.0 {
            for i in 0..n {
                m[(i, i)] += jitter;
            }
        }
        if let Some(c) = Cholesky::new(m) {
            let lower = c.unpack();
            if lower.iter().all(|v| v.is_finite()) {
                return Ok(CholFactor { lower, jitter });
            }
        }
    }
    Err(Error::NotPositiveDefinite { jitter: last })
}

/// Triangular solve with a lower-triangular `l`.
pub fn tri_solve(l: &DenseMatrix, b: &DenseMatrix, side: Side) -> Result<DenseMatrix> {
    if l.nrows() != l.ncols() || l.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "tri_solve {}x{} against {}x{}",
            l.nrows(),
            l.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if let Some(index) = (0..l.nrows()).find(|&i| l[(i, i)].abs() < SINGULAR_DIAG) {
        return Err(Error::SingularTriangular { index });
    }
    let out = match side {
        Side::Forward => l.solve_lower_triangular(b),
        Side::Backward => l.tr_solve_lower_triangular(b),
    };
    out.ok_or(Error::SingularTriangular { index: 0 })
}

/// Solves `(L Lᵀ) x = b` for a vector right-hand side.
pub fn chol_solve_vec(l: &DenseMatrix, b: &DVector<f64>) -> Result<DVector<f64>> {
    let bm = DenseMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let y = tri_solve(l, &bm, Side::Forward)?;
    let x = tri_solve(l, &y, Side::Backward)?;
    Ok(DVector::from_column_slice(x.as_slice()))
}

/// Solves `(L Lᵀ) X = B`.
pub fn chol_solve(l: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let y = tri_solve(l, b, Side::Forward)?;
    tri_solve(l, &y, Side::Backward)
}

/// `log |L Lᵀ|`.
pub fn logdet_from_chol(l: &DenseMatrix) -> f64 {
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Stacks row slices into a matrix.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DenseMatrix> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch("ragged rows".into()));
    }
    Ok(DenseMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DenseMatrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}
