use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam optimizer state with bias-corrected moments.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AdamState {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// `true` maximizes the objective (moves along the gradient).
    pub ascent: bool,
    first: Vec<f64>,
    second: Vec<f64>,
    iteration: u64,
}

impl AdamState {
    pub fn new(n: usize, step_size: f64, beta1: f64, beta2: f64, ascent: bool) -> Self {
        Self {
            step_size,
            beta1,
            beta2,
            epsilon: 1e-8,
            ascent,
            first: vec![0.0; n],
            second: vec![0.0; n],
            iteration: 0,
        }
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    /// One Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::LengthMismatch(params.len(), grads.len()));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        self.iteration += 1;
        let t = self.iteration as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let sign = if self.ascent { 1.0 } else { -1.0 };
        for i in 0..params.len() {
            let g = grads[i];
            self.first[i] = self.beta1 * self.first[i] + (1.0 - self.beta1) * g;
            self.second[i] = self.beta2 * self.second[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first[i] / bc1;
            let v_hat = self.second[i] / bc2;
            params[i] += sign * self.step_size * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(state: &AdamState, params: &[f64], grads: &[f64]) -> Result<(Vec<f64>, AdamState)> {
    let mut s = state.clone();
    let mut p = params.to_vec();
    s.step(&mut p, grads)?;
    Ok((p, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_gradient_keeps_params() {
        let s = AdamState::new(3, 0.003, 0.9, 0.99, false);
        let (p, s2) = adam_step(&s, &[1.0, 2.0, 3.0], &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
        assert_eq!(s2.iteration(), 1);
    }

    #[test]
    fn first_step_moves_by_step_size() {
        let s = AdamState::new(1, 0.003, 0.9, 0.99, false);
        let (p, _) = adam_step(&s, &[0.5], &[1.0]).unwrap();
        // m̂ = 1, v̂ = 1, so the move is γ / (1 + ε).
        assert_abs_diff_eq!(p[0], 0.5 - 0.003 / (1.0 + 1e-8), epsilon = 1e-15);
        assert_abs_diff_eq!(p[0], 0.497, epsilon = 1e-10);
        let asc = AdamState::new(1, 0.003, 0.9, 0.99, true);
        let (p, _) = adam_step(&asc, &[0.5], &[1.0]).unwrap();
        assert_abs_diff_eq!(p[0], 0.503, epsilon = 1e-10);
    }

    #[test]
    fn rejects_nan() {
        let s = AdamState::new(2, 0.1, 0.9, 0.99, false);
        assert_eq!(adam_step(&s, &[0.0, 0.0], &[f64::NAN, 0.0]).unwrap_err(), Error::NonFiniteGradient);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut s = AdamState::new(2, 0.05, 0.9, 0.99, false);
        let mut p = vec![3.0, -2.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)];
            s.step(&mut p, &g).unwrap();
        }
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-3);
        assert_abs_diff_eq!(p[1], -0.5, epsilon = 1e-3);
    }
}
