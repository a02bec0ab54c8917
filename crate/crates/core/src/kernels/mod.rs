//! Forward and backward kernels on flat row-major slices.
//!
//! Each kernel is a pure function; [`crate::graph::Graph`] records which kernel
//! produced a node and calls the matching backward routine.

pub mod conv;
pub mod dense;
pub mod resample;
pub mod scan;
pub mod warp;
