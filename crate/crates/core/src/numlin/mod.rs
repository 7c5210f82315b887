//! Dense linear algebra and random-number plumbing shared by every stage.

mod eigen;
mod matrix;
mod rng;

pub use eigen::{cholesky, spd_inverse, sym_eigen, sym_eigvals, SymEigen, CLAMP_TOL, SYMMETRY_TOL};
pub use matrix::{dot, frobenius_sq_masked, MaskedMatrix, Matrix};
pub use rng::{fill_standard_normal, mix_seed, standard_normal, streams, RngStream};
