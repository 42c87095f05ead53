use crate::num::{DenseMatrix, RngStream};

/// Latin hypercube design: each column holds exactly one point in each of
/// the `n` equal-width strata of its bound, jittered uniformly inside it.
pub fn lhs_sample(n: usize, bounds: &[(f64, f64)], rng: &mut RngStream) -> DenseMatrix {
    let mut x = DenseMatrix::zeros(n, bounds.len());
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        let perm = rng.permutation(n);
        let w = (hi - lo) / n as f64;
        for (i, &stratum) in perm.iter().enumerate() {
            // Keep the draw strictly inside its stratum under rounding.
            let v = lo + w * (stratum as f64 + rng.uniform());
            x[(i, j)] = v.clamp(lo + w * stratum as f64, (lo + w * (stratum + 1) as f64).min(hi));
        }
    }
    x
}

/// `n` independent uniform points in the box.
pub fn uniform_sample(n: usize, bounds: &[(f64, f64)], rng: &mut RngStream) -> DenseMatrix {
    let mut x = DenseMatrix::zeros(n, bounds.len());
    for i in 0..n {
        for (j, &(lo, hi)) in bounds.iter().enumerate() {
            x[(i, j)] = rng.uniform_range(lo, hi);
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles() {
        let x = lhs_sample(4, &[(0.0, 1.0), (0.0, 1.0)], &mut RngStream::new(0));
        for j in 0..2 {
            let mut s: Vec<usize> = x.column(j).iter().map(|v| (v * 4.0).floor() as usize).collect();
            s.sort();
            assert_eq!(s, vec![0, 1, 2, 3]);
        }
        let one = lhs_sample(1, &[(2.0, 3.0)], &mut RngStream::new(5));
        assert!((2.0..=3.0).contains(&one[(0, 0)]));
        assert_eq!(lhs_sample(7, &[(0.0, 1.0)], &mut RngStream::new(9)), lhs_sample(7, &[(0.0, 1.0)], &mut RngStream::new(9)));
    }
}
