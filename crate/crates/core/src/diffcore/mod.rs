//! Dense linear algebra and reverse-mode differentiation.

pub mod decomp;
mod matrix;
mod tape;

pub use decomp::{
    cholesky, eig_symmetric, inverse, inverse_spd, inverse_sqrt_spd, log_abs_det, logdet_spd, logdet_triangular,
    principal_angles, solve_lower, solve_lower_transpose, solve_symmetric, Lu,
};
pub use matrix::Matrix;
pub use tape::{Gradients, Tape, Var};
