//! Dense linear algebra, exact assignment and seeded randomness.

mod eig;
mod lap;
mod matrix;
mod rng;
pub mod spectrum;

pub use eig::{
    extreme_eigs_symmetric, jacobi_eigenvalues, second_largest_magnitude, POWER_MAX_ITERS,
    POWER_REL_TOL, SYMMETRY_TOL,
};
pub use lap::{solve_lap_max, Assignment};
pub use matrix::{dot, norm_sq, Matrix};
pub use rng::RngStream;
