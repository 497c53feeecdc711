//! Dense f64 tensors, a fixed set of differentiable operations, and a
//! tape-based reverse-mode gradient engine with a finite-difference checker.
//!
//! Design points:
//! - values are f64 and always finite; constructing NaN/Inf is an error
//! - tensors are immutable; cloning shares the buffer
//! - one tape records one forward pass; backward is a single reverse sweep
//! - all randomness flows through the counter-based [`RngStream`], so a
//!   fixed seed reproduces bit-identical results everywhere
//! - kernels are single-threaded with fixed reduction order

mod error;
mod gradcheck;
mod ops;
mod rng;
mod tape;
mod tensor;

#[cfg(any(test, feature = "testing"))]
pub mod testing;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckEntry, GradCheckReport};
pub use ops::conv::PadMode;
pub use rng::{RngStream, RNG_ALGORITHM};
pub use tape::{GradMap, Tape};
pub use tensor::{Param, Tensor};
