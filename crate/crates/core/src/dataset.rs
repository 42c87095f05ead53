use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::num::DenseMatrix;

/// Inputs and outputs observed at one fidelity level.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityDataset {
    pub x: DenseMatrix,
    pub y: DVector<f64>,
    pub bounds: Vec<(f64, f64)>,
    /// 1 is the lowest fidelity.
    pub fidelity: usize,
}

impl FidelityDataset {
    pub fn new(x: DenseMatrix, y: Vec<f64>, bounds: Vec<(f64, f64)>, fidelity: usize) -> Result<Self> {
        let ds = Self {
            y: DVector::from_vec(y),
            x,
            bounds,
            fidelity,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.nrows() == 0 {
            return Err(Error::DegenerateData("dataset has no rows".into()));
        }
        if self.x.nrows() != self.y.len() {
            return Err(Error::LengthMismatch(self.x.nrows(), self.y.len()));
        }
        if self.x.ncols() != self.bounds.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} input columns but {} bounds",
                self.x.ncols(),
                self.bounds.len()
            )));
        }
        if self.x.iter().chain(self.y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!("fidelity {} data", self.fidelity)));
        }
        for i in 0..self.x.nrows() {
            for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
                let v = self.x[(i, j)];
                let tol = 1e-12 * (hi - lo).abs().max(1.0);
                if v < lo - tol || v > hi + tol {
                    return Err(Error::OutOfBounds {
                        point: self.x.row(i).iter().copied().collect(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            x: DenseMatrix::from_fn(idx.len(), self.dim(), |i, j| self.x[(idx[i], j)]),
            y: DVector::from_fn(idx.len(), |i, _| self.y[idx[i]]),
            bounds: self.bounds.clone(),
            fidelity: self.fidelity,
        }
    }
}

/// Affine transforms taking raw data to the scaled space used for training:
/// inputs to the unit box of each fidelity's bounds, outputs standardized by
/// the high-fidelity mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IoScaling {
    /// Bounds per fidelity, lowest fidelity first.
    pub input_bounds: Vec<Vec<(f64, f64)>>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl IoScaling {
    pub fn identity(input_bounds: Vec<Vec<(f64, f64)>>) -> Self {
        Self {
            input_bounds,
            y_mean: 0.0,
            y_std: 1.0,
        }
    }

    fn bounds(&self, fidelity: usize) -> Result<&[(f64, f64)]> {
        self.input_bounds
            .get(fidelity.wrapping_sub(1))
            .map(|b| b.as_slice())
            .ok_or_else(|| Error::DimensionMismatch(format!("no fidelity {fidelity}")))
    }

    pub fn scale_x(&self, fidelity: usize, x: &DenseMatrix) -> Result<DenseMatrix> {
        let b = self.bounds(fidelity)?;
        if x.ncols() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "fidelity {fidelity} has {} inputs, got {}",
                b.len(),
                x.ncols()
            )));
        }
        Ok(DenseMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - b[j].0) / (b[j].1 - b[j].0)))
    }

    pub fn unscale_x(&self, fidelity: usize, x: &DenseMatrix) -> Result<DenseMatrix> {
        let b = self.bounds(fidelity)?;
        if x.ncols() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "fidelity {fidelity} has {} inputs, got {}",
                b.len(),
                x.ncols()
            )));
        }
        Ok(DenseMatrix::from_fn(x.nrows(), x.ncols(), |i, j| b[j].0 + x[(i, j)] * (b[j].1 - b[j].0)))
    }

    pub fn scale_y(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }

    pub fn unscale_y(&self, y: f64) -> f64 {
        self.y_mean + y * self.y_std
    }

    pub fn unscale_var(&self, v: f64) -> f64 {
        v * self.y_std * self.y_std
    }
}

/// Scales every dataset; the last one is taken as the highest fidelity.
pub fn scale_io(datasets: &[FidelityDataset]) -> Result<(Vec<FidelityDataset>, IoScaling)> {
    let hf = datasets
        .last()
        .ok_or_else(|| Error::DegenerateData("no datasets".into()))?;
    let n = hf.y.len() as f64;
    let y_mean = hf.y.mean();
    let y_std = (hf.y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(y_std > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let scaling = IoScaling {
        input_bounds: datasets.iter().map(|d| d.bounds.clone()).collect(),
        y_mean,
        y_std,
    };
    let scaled = datasets
        .iter()
        .enumerate()
        .map(|(t, d)| {
            Ok(FidelityDataset {
                x: scaling.scale_x(t + 1, &d.x)?,
                y: d.y.map(|v| scaling.scale_y(v)),
                bounds: vec![(0.0, 1.0); d.dim()],
                fidelity: d.fidelity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((scaled, scaling))
}
