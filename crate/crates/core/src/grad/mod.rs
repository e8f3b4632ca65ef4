//! Reverse-mode derivatives for every op the models train through.
//!
//! Each op has an explicit backward rule in [`kernels`]; there is no general
//! graph autodiff. [`TapeNode`] wraps a single op application for op-level
//! checks, and [`fd_check`] compares any rule with central differences.

mod kernels;
mod tape;

pub use kernels::*;
pub use tape::{fd_check, fd_check_with, relative_error, GradSet, OpKind, Scalarize, TapeNode, FD_STEP};
