//! Fixtures shared by the criterion benches.

use pcsig::numlin::{standard_normal, MaskedMatrix, Matrix, RngStream};
use pcsig::synthgen::{generate, SyntheticSpec};
use pcsig::vbpca::{fit, reconstruct, VbpcaConfig};
use pcsig::PosteriorReconstruction;

/// A grid-sized synthetic dataset.
pub fn dataset(n: usize, p: usize, w: usize) -> MaskedMatrix {
    generate(&SyntheticSpec::new(n, p, w, 42)).expect("valid spec")
}

/// Posterior reconstruction of `dataset(n, p, w)` at `q` components.
pub fn reconstruction(n: usize, p: usize, w: usize, q: usize) -> PosteriorReconstruction {
    let model = fit(&dataset(n, p, w), &VbpcaConfig::new(q, 42)).expect("fit");
    reconstruct(&model).expect("reconstruct")
}

/// A random symmetric positive semidefinite matrix of order `n`.
pub fn sym_matrix(n: usize) -> Matrix {
    let x = Matrix::from_vec(n, 2 * n, standard_normal(RngStream::new(42, 0), 2 * n * n)).expect("shape");
    x.gram_rows()
}
