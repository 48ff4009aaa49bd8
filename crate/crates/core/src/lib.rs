//! CNN feature extraction in the Walsh-Hadamard transform domain.
//!
//! The library builds small image classifiers whose feature-extraction
//! stage runs either as ordinary spatial convolution or as the Hadamard
//! method: transform input and kernel with the 2-d WHT, multiply
//! element-wise, transform back. Everything needed to train and compare
//! the two on MNIST and CIFAR-10 lives here, along with the analytical
//! arithmetic-energy model that motivates the transform-domain route.

#![allow(clippy::needless_range_loop)]

pub mod datasets;
pub mod energy;
pub mod error;
pub mod layers;
pub mod models;
pub mod tensor;
pub mod training;
pub mod transforms;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Dtype, Scalar, Tape, Tensor};
