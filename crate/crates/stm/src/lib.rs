//! Experiment harness around `stm-core`: run specifications, output files,
//! the concentration lab and the invariant checks.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checks;
pub mod commands;
pub mod lab;
pub mod output;
pub mod spec;
