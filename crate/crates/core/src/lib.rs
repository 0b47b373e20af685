// NaN-rejecting guards are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod corpus;
pub mod cqt;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mfcc;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod remix;
pub mod rng;
pub mod salience;

pub use error::{Error, Result};
