//! Dense matrices, the reverse-mode tape, and the few factorizations the
//! kernel and inducing-point code needs.

pub mod linalg;
mod matrix;
mod tape;

pub use linalg::{chol_inverse_sqrt, cholesky, cholesky_jittered, spd_solve};
pub use matrix::Matrix;
pub use tape::{Tape, Var};
