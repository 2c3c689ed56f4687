//! Word confidence and deletion estimation for recogniser output, with
//! data-selection schemes built on top of the estimates.

pub mod align;
pub mod birnn;
pub mod calibrate;
pub mod cli;
pub mod corpus;
mod error;
pub mod features;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod select;
pub mod simgen;

pub use error::{Error, Result};
