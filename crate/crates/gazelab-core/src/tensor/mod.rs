//! Minimal dense-tensor computation engine with reverse-mode
//! differentiation.
//!
//! Everything is 64-bit floats in row-major order. A [`Graph`] is a
//! define-by-run tape rebuilt for every training step; [`Tensor`] is the
//! plain value type that flows in and out of it. The engine is
//! deliberately small: exactly the primitives the reconstruction and
//! gaze losses need, each with an exact analytic gradient.

mod adam;
mod graph;
mod params;

pub use adam::{adam_step, adam_update_single, AdamConfig, AdamState};
pub use graph::{Gradients, Graph, NodeId};
pub use params::ParamSet;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid argument: {msg}")]
    InvalidArg { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGrad(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

/// Dense row-major f64 array with shape metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            shape,
            data,
            requires_grad: false,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(vec![1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Repeat a [H,W] (or [1,H,W]) plane across `channels` channels.
    /// Region masks are stored single-channel; losses multiply them
    /// into multi-channel images, which this makes explicit instead of
    /// relying on broadcasting.
    pub fn tile_channels(&self, channels: usize) -> Tensor {
        let (h, w) = match self.shape.as_slice() {
            [h, w] => (*h, *w),
            [1, h, w] => (*h, *w),
            other => panic!("tile_channels expects a single plane, got {:?}", other),
        };
        let plane = &self.data[..h * w];
        let mut data = Vec::with_capacity(channels * h * w);
        for _ in 0..channels {
            data.extend_from_slice(plane);
        }
        Tensor::new(vec![channels, h, w], data)
    }
}
