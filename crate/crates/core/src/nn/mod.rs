//! Dense 4-D tensor network engine with reverse-mode gradients.
//!
//! Tensors are `[batch, channel, freq, time]`. Every layer preserves the
//! spatial shape, so graphs are checked on channel counts alone.

pub mod gradcheck;
mod graph;
pub mod ops;
mod params;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{Array4, LinalgScalar, ScalarOperand};
use num_traits::Float;

pub use graph::{GraphBuilder, Mode, ModelGraph, Node, NodeId, Op, Trace};
pub use params::{AdamConfig, Grads, ParamStore};

pub type Tensor4<T> = Array4<T>;

/// Scalar types the engine runs on: `f32` for training, `f64` for checks.
pub trait Real: Float + LinalgScalar + ScalarOperand + AddAssign + SubAssign + MulAssign + Sum + Debug + Send + Sync + 'static {
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
}
