//! Dense tensors with tape-based reverse-mode automatic differentiation.
//!
//! Every differentiable operation needed by the iris network lives here:
//! convolution with circular horizontal padding, max pooling, maxout,
//! bilinear sampling (and the deformable gather built on it), dense layers,
//! softmax, L2 normalization and cross entropy.
//!
//! Values are recorded on a [`Tape`] as the forward pass runs. Calling
//! [`Tape::backward`] on a scalar result walks the tape once in reverse and
//! returns the gradients of every leaf that was flagged `requires_grad`.
//!
//! ```
//! use afinet_autograd::{Tape, Tensor};
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_vec(vec![3.0], &[1]).unwrap(), true);
//! let loss = x.mul(x).unwrap().sum();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
//! ```

mod error;
pub mod gradcheck;
pub mod ops;
mod scalar;
mod tape;
mod tensor;

pub use error::{AutogradError, Result};
pub use ops::sample::RowBoundary;
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
