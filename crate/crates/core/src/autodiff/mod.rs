//! Tape-based reverse-mode differentiation over dense 2-d tensors.
//!
//! Every operation on a [`Tape`] evaluates eagerly and appends a record to the
//! tape. [`Tape::backward`] walks the records once, newest first, and returns
//! the gradient of a scalar loss with respect to every node that requires one.
//!
//! ```
//! use occseg::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.param(Tensor::new(vec![1, 3], vec![-1.0, 0.0, 2.0]).unwrap());
//! let y = tape.relu(x);
//! assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
//! ```
//!
//! Only bias addition broadcasts. Batch normalisation accepts its scale and
//! shift either as one row shared by all samples or as one row per sample,
//! which is how latent-conditioned normalisation is expressed.

mod gemm;
mod tape;
mod tensor;

pub use gemm::Scalar;
pub use tape::{BatchNormMode, Gradients, RunningStats, Tape, Var};
pub use tensor::Tensor;
