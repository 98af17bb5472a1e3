//! Differentiable operations, exposed as methods on [`crate::Var`].

pub mod conv;
pub mod dense;
mod elementwise;
pub mod pool;
pub mod sample;
