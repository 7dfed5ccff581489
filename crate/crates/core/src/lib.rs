//! Uncertainty-aware dynamic time warping.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod barycenter;
pub mod classify;
pub mod cli;
pub mod data;
pub mod dictionary;
pub mod error;
pub mod forecast;
pub mod grid;
pub mod numerics;
pub mod optim;
pub mod oracle;
pub mod sigma;
pub mod softdtw;
pub mod udtw;

pub use error::{Error, Result};
pub use grid::{Grid, TimeSeries};
