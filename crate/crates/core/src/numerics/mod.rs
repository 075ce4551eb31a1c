//! Tensor algebra, reverse-mode differentiation, FFT and optimization.

pub mod fft;
pub mod gradcheck;
pub mod init;
pub mod ops;
mod optim;
mod param;
pub mod rng;
mod scalar;
mod tape;
mod tensor;

pub use fft::{irfft_time, rfft_time};
pub use init::{init_tensor, Fans, InitScheme};
pub use ops::{conv1d, dropout, gelu, layer_norm, masked_softmax_lastdim, matmul, relu};
pub use optim::{clip_grad_norm, Adam};
pub use param::{ParamId, ParamStore, Parameter};
pub use scalar::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{strides, ComplexTensor, Tensor};

#[cfg(test)]
mod tape_tests;
