//! Nominal mappings from a higher-fidelity input space into a lower-fidelity one.

use crate::error::{Error, Result};
use crate::num::DenseMatrix;

/// Closed-form nominal map.
pub type MapFn = fn(&[f64]) -> Vec<f64>;

#[derive(Debug, Clone)]
pub enum NominalMapping {
    /// Named closed form, usable anywhere in the source space.
    Function {
        name: String,
        source_dim: usize,
        target_dim: usize,
        map: MapFn,
    },
    /// `z = x A + b` with `A` of shape `source_dim x target_dim`.
    Linear { a: DenseMatrix, b: Vec<f64> },
    /// Values known only at a declared set of points.
    Table {
        points: Vec<Vec<f64>>,
        values: Vec<Vec<f64>>,
    },
    /// `inner` conjugated by box scalings: source coordinates in `[0,1]`
    /// are mapped back to `source_bounds`, and the image is rescaled from
    /// `target_bounds` into `[0,1]`.
    Scaled {
        inner: Box<NominalMapping>,
        source_bounds: Vec<(f64, f64)>,
        target_bounds: Vec<(f64, f64)>,
    },
}

const TABLE_MATCH_RTOL: f64 = 1e-9;

fn same_point(p: &[f64], x: &[f64]) -> bool {
    p.iter()
        .zip(x)
        .all(|(a, b)| (a - b).abs() <= TABLE_MATCH_RTOL * a.abs().max(b.abs()).max(1.0))
}

impl NominalMapping {
    pub fn linear(a: DenseMatrix, b: Vec<f64>) -> Result<Self> {
        if a.ncols() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "linear map with {} output columns and offset of length {}",
                a.ncols(),
                b.len()
            )));
        }
        Ok(NominalMapping::Linear { a, b })
    }

    pub fn identity(dim: usize) -> Self {
        NominalMapping::Linear {
            a: DenseMatrix::identity(dim, dim),
            b: vec![0.0; dim],
        }
    }

    pub fn table(points: Vec<Vec<f64>>, values: Vec<Vec<f64>>) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::LengthMismatch(points.len(), values.len()));
        }
        if points.is_empty() {
            return Err(Error::MissingNominalValues("empty nominal table".into()));
        }
        let (ds, dt) = (points[0].len(), values[0].len());
        if points.iter().any(|p| p.len() != ds) || values.iter().any(|v| v.len() != dt) {
            return Err(Error::DimensionMismatch("ragged nominal table".into()));
        }
        Ok(NominalMapping::Table { points, values })
    }

    /// Wraps the map so it acts between unit-box scaled coordinates.
    pub fn scaled(self, source_bounds: Vec<(f64, f64)>, target_bounds: Vec<(f64, f64)>) -> Result<Self> {
        if source_bounds.len() != self.source_dim() || target_bounds.len() != self.target_dim() {
            return Err(Error::DimensionMismatch("bounds do not match nominal map".into()));
        }
        Ok(NominalMapping::Scaled {
            inner: Box::new(self),
            source_bounds,
            target_bounds,
        })
    }

    pub fn source_dim(&self) -> usize {
        match self {
            NominalMapping::Function { source_dim, .. } => *source_dim,
            NominalMapping::Linear { a, .. } => a.nrows(),
            NominalMapping::Table { points, .. } => points[0].len(),
            NominalMapping::Scaled { inner, .. } => inner.source_dim(),
        }
    }

    pub fn target_dim(&self) -> usize {
        match self {
            NominalMapping::Function { target_dim, .. } => *target_dim,
            NominalMapping::Linear { a, .. } => a.ncols(),
            NominalMapping::Table { values, .. } => values[0].len(),
            NominalMapping::Scaled { inner, .. } => inner.target_dim(),
        }
    }

    /// True when the map can be evaluated at arbitrary points.
    pub fn is_evaluable(&self) -> bool {
        match self {
            NominalMapping::Table { .. } => false,
            NominalMapping::Scaled { inner, .. } => inner.is_evaluable(),
            _ => true,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.source_dim() {
            return Err(Error::DimensionMismatch(format!(
                "nominal map expects {} inputs, got {}",
                self.source_dim(),
                x.len()
            )));
        }
        match self {
            NominalMapping::Function { map, .. } => Ok(map(x)),
            NominalMapping::Linear { a, b } => Ok((0..a.ncols())
                .map(|j| b[j] + (0..a.nrows()).map(|i| x[i] * a[(i, j)]).sum::<f64>())
                .collect()),
            NominalMapping::Table { points, values } => points
                .iter()
                .position(|p| same_point(p, x))
                .map(|i| values[i].clone())
                .ok_or_else(|| Error::MappingUnavailable(x.to_vec())),
            NominalMapping::Scaled {
                inner,
                source_bounds,
                target_bounds,
            } => {
                let raw: Vec<f64> = x
                    .iter()
                    .zip(source_bounds)
                    .map(|(v, (lo, hi))| lo + v * (hi - lo))
                    .collect();
                let z = inner.apply(&raw)?;
                Ok(z.iter()
                    .zip(target_bounds)
                    .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
                    .collect())
            }
        }
    }

    /// Maps every row of `x`.
    pub fn apply_rows(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = DenseMatrix::zeros(x.nrows(), self.target_dim());
        for i in 0..x.nrows() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let z = self.apply(&row)?;
            for (j, v) in z.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_and_table() {
        let m = NominalMapping::linear(DenseMatrix::from_row_slice(1, 1, &[2.0]), vec![-0.2]).unwrap();
        assert!((m.apply(&[0.1]).unwrap()[0]).abs() < 1e-15);
        let t = NominalMapping::table(vec![vec![0.5]], vec![vec![0.8, 0.1]]).unwrap();
        assert_eq!(t.apply(&[0.5]).unwrap(), vec![0.8, 0.1]);
        assert!(matches!(t.apply(&[0.4]), Err(Error::MappingUnavailable(_))));
        assert!(!t.is_evaluable());
    }

    #[test]
    fn scaled_wrapper() {
        let m = NominalMapping::linear(DenseMatrix::from_row_slice(1, 1, &[2.0]), vec![-0.2]).unwrap();
        let s = m.scaled(vec![(0.0, 1.0)], vec![(-0.2, 1.8)]).unwrap();
        assert!((s.apply(&[0.5]).unwrap()[0] - 0.5).abs() < 1e-15);
        let t = NominalMapping::table(vec![vec![3.0]], vec![vec![7.0]]).unwrap();
        let s = t.scaled(vec![(1.0, 11.0)], vec![(5.0, 9.0)]).unwrap();
        assert!((s.apply(&[0.2]).unwrap()[0] - 0.5).abs() < 1e-15);
        assert!(!s.is_evaluable());
    }
}
