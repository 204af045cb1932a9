//! Dense reverse-mode differentiation for the handful of operations a
//! convolution + attention regression model needs.
//!
//! Values are double precision, row-major. A [`Tape`] records each forward
//! operation; [`Tape::backward`] walks it in reverse and accumulates
//! gradients for every recorded node.
//!
//! ```
//! use diffcore::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let a = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
//! let b = tape.leaf(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
//! let c = tape.matmul(a, b).unwrap();
//! assert_eq!(tape.value(c).data(), &[11.0]);
//! let grads = tape.backward(c).unwrap();
//! assert_eq!(grads.get(a).unwrap().data(), &[3.0, 4.0]);
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod adam;
mod error;
mod gradcheck;
pub mod rng;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use error::{DiffError, Result};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use tape::{Gradients, Padding, Tape, Var, WeightedKernel};
pub use tensor::Tensor;
