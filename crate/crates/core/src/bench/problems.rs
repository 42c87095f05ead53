//! Benchmark problems: closed-form evaluators, bounds and nominal mappings.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::nominal::NominalMapping;
use crate::num::DenseMatrix;

/// Guard keeping the Park HF term `x4 / x1²` finite.
pub const PARK_X1_FLOOR: f64 = 1e-8;

pub type Evaluator = fn(&[f64]) -> f64;

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub lf_bounds: Vec<(f64, f64)>,
    pub hf_bounds: Vec<(f64, f64)>,
    /// `None` means dataset-backed.
    pub lf: Option<Evaluator>,
    pub hf: Option<Evaluator>,
    /// Raw-coordinate map from the HF into the LF input space.
    pub nominal: NominalMapping,
    pub lf_train_size: usize,
    pub test_size: usize,
}

impl ProblemSpec {
    pub fn exact_lf_available(&self) -> bool {
        self.lf.is_some()
    }

    pub fn bounds(&self, fidelity: usize) -> Result<&[(f64, f64)]> {
        match fidelity {
            1 => Ok(&self.lf_bounds),
            2 => Ok(&self.hf_bounds),
            _ => Err(Error::DimensionMismatch(format!("problems have fidelities 1 and 2, got {fidelity}"))),
        }
    }
}

pub fn illustrative_lf(x: &[f64]) -> f64 {
    (15.0 * x[0]).cos()
}

pub fn illustrative_hf(x: &[f64]) -> f64 {
    x[0] * illustrative_lf(&[2.0 * x[0] - 0.2]).exp() - 1.0
}

fn illustrative_map(x: &[f64]) -> Vec<f64> {
    vec![2.0 * x[0] - 0.2]
}

pub fn park_hf(x: &[f64]) -> f64 {
    let x1 = x[0].max(PARK_X1_FLOOR);
    let (x2, x3, x4) = (x[1], x[2], x[3]);
    0.5 * x1 * ((1.0 + (x2 + x3 * x3) * x4 / (x1 * x1)).sqrt() - 1.0) + (x1 + 3.0 * x4) * (1.0 + x3.sin()).exp()
}

pub fn park_lf(x: &[f64]) -> f64 {
    (1.0 + x[0].sin() / 10.0) * park_hf(&[x[0], x[1], 0.5, 0.5]) - 2.0 * x[0] + x[1] * x[1] + 0.75
}

pub fn polar_hf(x: &[f64]) -> f64 {
    let (r, th, ph) = (x[0], x[1], x[2]);
    let (c_th, s_th) = ((FRAC_PI_2 * th).cos(), (FRAC_PI_2 * th).sin());
    3.5 * r * (FRAC_PI_2 * ph).cos()
        + 2.2 * r * s_th
        + 0.85 * (r * c_th - 2.0 * r * s_th).abs().powf(2.2)
        + 2.0 * (std::f64::consts::PI * ph).cos() / (1.0 + 3.0 * r * r + 10.0 * th * th)
}

pub fn polar_lf(x: &[f64]) -> f64 {
    3.0 * x[0] + 2.0 * x[1] + 0.7 * (x[0] - 1.7 * x[1]).abs().powf(2.35)
}

fn polar_map(x: &[f64]) -> Vec<f64> {
    let (r, th, ph) = (x[0], x[1], x[2]);
    vec![r * (FRAC_PI_2 * ph).cos(), r * (FRAC_PI_2 * th).sin()]
}

/// Solid cantilever beam, inputs `(F, L, d)`: von Mises stress at the root
/// with bending stress `6FL/d³`, shear `F/d²` and no axial stress.
pub fn beam_lf(x: &[f64]) -> f64 {
    let (f, l, d) = (x[0], x[1], x[2]);
    let bending = 6.0 * f * l / d.powi(3);
    let shear = f / (d * d);
    (bending * bending + 3.0 * shear * shear).sqrt()
}

/// Two-section wing and canard, HF inputs ordered
/// `(RC, TC1, TC2, β1, β2, α)` for the main wing then the canard, mapped to
/// the single-section `(RC, TC, β)` blocks of equal surface.
pub fn aero_map(x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(6);
    for block in x.chunks(6) {
        let (rc, tc1, tc2, b1, b2, a) = (block[0], block[1], block[2], block[3], block[4], block[5]);
        out.push(rc);
        out.push(tc1 + (1.0 - a) * tc2 + (a - 1.0) * rc);
        out.push(a * b1 + (1.0 - a) * b2);
    }
    out
}

fn select_columns(d_src: usize, cols: &[usize]) -> DenseMatrix {
    DenseMatrix::from_fn(d_src, cols.len(), |i, j| if cols[j] == i { 1.0 } else { 0.0 })
}

pub const PROBLEM_NAMES: [&str; 5] = ["illustrative", "park", "polar", "beam", "aero"];

/// Built-in problem by name. `beam` and `aero` have dataset-backed HF
/// levels and nominal default bounds that user CSV runs may override.
pub fn problem(name: &str) -> Result<ProblemSpec> {
    let unit = |d: usize| vec![(0.0, 1.0); d];
    let spec = match name {
        "illustrative" => ProblemSpec {
            name: name.into(),
            // Image of the HF domain under the nominal map.
            lf_bounds: vec![(-0.2, 1.8)],
            hf_bounds: unit(1),
            lf: Some(illustrative_lf),
            hf: Some(illustrative_hf),
            nominal: NominalMapping::Function {
                name: "2x-0.2".into(),
                source_dim: 1,
                target_dim: 1,
                map: illustrative_map,
            },
            lf_train_size: 30,
            test_size: 1000,
        },
        "park" => ProblemSpec {
            name: name.into(),
            lf_bounds: unit(2),
            hf_bounds: unit(4),
            lf: Some(park_lf),
            hf: Some(park_hf),
            nominal: NominalMapping::linear(select_columns(4, &[0, 1]), vec![0.0, 0.0])?,
            lf_train_size: 30,
            test_size: 1000,
        },
        "polar" => ProblemSpec {
            name: name.into(),
            lf_bounds: unit(2),
            hf_bounds: unit(3),
            lf: Some(polar_lf),
            hf: Some(polar_hf),
            nominal: NominalMapping::Function {
                name: "polar".into(),
                source_dim: 3,
                target_dim: 2,
                map: polar_map,
            },
            lf_train_size: 30,
            test_size: 1000,
        },
        "beam" => ProblemSpec {
            name: name.into(),
            // (F, L, d) for LF; HF appends the bore width and length.
            lf_bounds: vec![(1.0, 10.0), (1.0, 10.0), (0.5, 2.0)],
            hf_bounds: vec![(1.0, 10.0), (1.0, 10.0), (0.5, 2.0), (0.05, 0.25), (0.1, 0.9)],
            lf: Some(beam_lf),
            hf: None,
            nominal: NominalMapping::linear(select_columns(5, &[0, 1, 2]), vec![0.0; 3])?,
            lf_train_size: 30,
            test_size: 1000,
        },
        "aero" => {
            let block = [(0.5, 1.5), (0.2, 1.0), (0.2, 1.0), (0.0, 0.8), (0.0, 0.8), (0.2, 0.8)];
            let lf_block = [(0.5, 1.5), (-0.5, 1.5), (0.0, 0.8)];
            ProblemSpec {
                name: name.into(),
                lf_bounds: lf_block.iter().chain(&lf_block).copied().collect(),
                hf_bounds: block.iter().chain(&block).copied().collect(),
                lf: None,
                hf: None,
                nominal: NominalMapping::Function {
                    name: "equal-surface".into(),
                    source_dim: 12,
                    target_dim: 6,
                    map: |x| aero_map(x),
                },
                lf_train_size: 120,
                test_size: 250,
            }
        }
        other => return Err(Error::UnknownProblem(other.into())),
    };
    Ok(spec)
}

fn check_bounds(x: &[f64], bounds: &[(f64, f64)]) -> Result<()> {
    if x.len() != bounds.len() {
        return Err(Error::DimensionMismatch(format!("expected {} inputs, got {}", bounds.len(), x.len())));
    }
    let inside = x.iter().zip(bounds).all(|(&v, &(lo, hi))| {
        let tol = 1e-12 * (hi - lo).abs().max(1.0);
        v >= lo - tol && v <= hi + tol
    });
    if inside {
        Ok(())
    } else {
        Err(Error::OutOfBounds { point: x.to_vec() })
    }
}

/// Closed-form value of fidelity `t` (1 = LF, 2 = HF).
pub fn eval_problem(spec: &ProblemSpec, fidelity: usize, x: &[f64]) -> Result<f64> {
    check_bounds(x, spec.bounds(fidelity)?)?;
    let f = if fidelity == 1 { spec.lf } else { spec.hf };
    let f = f.ok_or_else(|| Error::DatasetBacked(spec.name.clone()))?;
    Ok(f(x))
}

pub fn eval_rows(spec: &ProblemSpec, fidelity: usize, x: &DenseMatrix) -> Result<Vec<f64>> {
    (0..x.nrows())
        .map(|i| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            eval_problem(spec, fidelity, &row)
        })
        .collect()
}

/// Nominal mapped value of an HF point.
pub fn nominal_map(spec: &ProblemSpec, x_hf: &[f64]) -> Result<Vec<f64>> {
    check_bounds(x_hf, &spec.hf_bounds)?;
    spec.nominal.apply(x_hf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        let ill = problem("illustrative").unwrap();
        assert_eq!(eval_problem(&ill, 1, &[0.0]).unwrap(), 1.0);
        assert_eq!(eval_problem(&ill, 2, &[0.0]).unwrap(), -1.0);
        assert!((eval_problem(&ill, 2, &[0.2]).unwrap() + 0.925_684).abs() < 1e-6);
        let park = problem("park").unwrap();
        assert!((eval_problem(&park, 2, &[1.0, 0.0, 0.0, 0.0]).unwrap() - std::f64::consts::E).abs() < 1e-6);
        let polar = problem("polar").unwrap();
        assert_eq!(eval_problem(&polar, 1, &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(beam_lf(&[0.0, 1.0, 1.0]), 0.0);
        assert!((beam_lf(&[1.0, 1.0, 1.0]) - 39f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn nominal_maps() {
        let ill = problem("illustrative").unwrap();
        assert!(nominal_map(&ill, &[0.1]).unwrap()[0].abs() < 1e-15);
        let polar = problem("polar").unwrap();
        let z = nominal_map(&polar, &[1.0, 1.0, 0.0]).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-15 && (z[1] - 1.0).abs() < 1e-15);
        let park = problem("park").unwrap();
        assert_eq!(nominal_map(&park, &[0.1, 0.2, 0.3, 0.4]).unwrap(), vec![0.1, 0.2]);
        let x = [1.1, 0.4, 0.9, 0.3, 0.6, 1.0, 0.8, 0.5, 0.7, 0.1, 0.2, 1.0];
        let z = aero_map(&x);
        assert_eq!(z[1], 0.4);
        assert_eq!(z[4], 0.5);
        assert_eq!(z[2], 0.3);
    }

    #[test]
    fn park_guard_near_limit() {
        let (x2, x3, x4) = (0.3, 0.6, 0.7);
        let limit = ((x2 + x3 * x3) * x4 as f64).sqrt() / 2.0 + 3.0 * x4 * (1.0 + f64::sin(x3)).exp();
        assert!((park_hf(&[1e-8, x2, x3, x4]) - limit).abs() <= 1e-3);
        assert!(park_hf(&[0.0, x2, x3, x4]).is_finite());
    }

    #[test]
    fn errors() {
        let ill = problem("illustrative").unwrap();
        assert!(matches!(eval_problem(&ill, 2, &[1.5]), Err(Error::OutOfBounds { .. })));
        let aero = problem("aero").unwrap();
        assert!(matches!(
            eval_problem(&aero, 2, &aero.hf_bounds.iter().map(|b| b.0).collect::<Vec<_>>()),
            Err(Error::DatasetBacked(_))
        ));
        assert!(matches!(problem("nope"), Err(Error::UnknownProblem(_))));
    }
}
