//! Numerical building blocks shared by every model.

pub mod adam;
pub mod linalg;
pub mod prob;
pub mod rng;
pub mod tape;

pub use adam::{adam_step, AdamState};
pub use linalg::{
    chol_solve, chol_solve_vec, cholesky_psd, from_rows, to_rows, logdet_from_chol, tri_solve, CholFactor, DenseMatrix, Side, DEFAULT_JITTER_LADDER,
};
pub use prob::gauss_logpdf;
pub use rng::RngStream;
pub use tape::{Grads, Tape, Var};
