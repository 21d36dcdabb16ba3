//! A small dense/convolutional tensor engine.
//!
//! Activations are `Tensor3` values in height × width × channels row-major
//! order. Layers are described by [`LayerSpec`] and carry no weights; the
//! weights live in a [`WeightStore`] keyed by `"<layer>.weight"` and
//! `"<layer>.bias"`. Every kernel is generic over [`Scalar`] so the same code
//! runs in `f32` for training/inference and in `f64` for gradient checks.

mod graph;
pub mod io;
mod layer;
mod ops;
mod store;
mod tensor;
mod train;

pub(crate) use graph::argmax as graph_argmax;
pub use graph::{backward, cross_entropy_loss, forward_path, predict, softmax, Activations};
pub use layer::{mac_count, param_count, LayerKind, LayerSpec, LayerStack, ParamRow};
pub use ops::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, depthwise_conv2d_backward,
    depthwise_conv2d_forward, maxpool_backward, maxpool_forward, pointwise_conv2d_backward,
    pointwise_conv2d_forward, relu, relu_backward, ConvGrads,
};
pub use store::{bias_key, weight_key, Block, GradientStore, WeightStore};
pub use tensor::{Shape, Tensor3};
pub use train::{fit, sgd_step, EpochStats, HyperParams};

use num_traits::Float;
use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

/// Floating point element type used by the engine.
pub trait Scalar: Float + Sum + AddAssign + Default + Debug + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
