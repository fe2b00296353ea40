//! Numerical core for a stochastic tensor method: a trust-free adaptive
//! regularization scheme that minimizes finite sums with a sampled third-order
//! Taylor model plus a quartic regularizer.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod concentration;
pub mod criticality;
pub mod driver;
pub mod error;
pub mod linalg;
pub mod model;
pub mod problems;
pub mod rng;
pub mod sampling;
pub mod subsolver;
pub mod tensor;

pub use criticality::CriticalityTriple;
pub use driver::{run, RunReport, StmConfig};
pub use error::{Error, Result};
pub use linalg::{SymEigen, SymMatrix};
pub use model::QuarticModel;
pub use problems::{DerivativeBundle, FiniteSum, Lipschitz, Order};
pub use sampling::{SamplePlan, Scheme, TailBound};
pub use tensor::{CubicForm, CubicMax, PowerOptions, SymTensor3};
