//! Dense f64 tensors, deterministic RNG streams, differentiable
//! primitives, and finite-difference gradient checking.

pub mod grad_check;
pub mod ops;
pub mod rng;
pub mod tensor;

pub use grad_check::{grad_check, GradCheckReport};
pub use ops::{
    logsumexp, matmul, matmul_backward, sigmoid, sigmoid_backward, softmax_into, tanh_backward,
    tanh_op,
};
pub use rng::{derive_seed, Rng};
pub use tensor::{param, GradPair, ParamRef, Tensor};
