//! Dense tensor arithmetic, seeded randomness, the differentiable-operator
//! contract, and the finite-difference gradient oracle.

pub mod dft1;
mod diffop;
pub mod mem;
mod rng;
mod tensor;

pub use diffop::{
    finite_difference_grad, max_rel_err, vjp_selftest, DiffOp, IdentityOp, ScaleOp, FD_STEP,
};
pub use rng::{sample_gaussian, Rng};
pub use tensor::Tensor;
