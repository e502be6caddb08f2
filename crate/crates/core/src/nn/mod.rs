//! Minimal differentiable toolkit: layers with explicit forward/backward
//! passes, MSE loss, Adam, finite-difference checking and checkpoints.
//!
//! Layers cache what their backward pass needs during `forward`; a backward
//! call consumes that cache. Parameter gradients accumulate until
//! [`Layer::zero_grad`].

mod adam;
pub mod checkpoint;
mod conv;
pub mod gradcheck;
mod layers;
mod tensor;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use conv::{correlate, correlate_adjoint, correlate_weight_grad, same_padding, Conv2d, ConvGeometry, ConvTranspose2d};
pub use gradcheck::{gradient_check, GradReport};
pub use layers::{concat, mse_loss, sigmoid, split, Dense, GlobalAvgPool, PRelu, PowerNormalize, Relu, Sigmoid, PRELU_INIT};
pub use tensor::{Scalar, Tensor};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("backward called on {0} without a preceding forward")]
    NoForward(&'static str),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("gradient check failed at {coordinate}: analytic {analytic:e}, numeric {numeric:e}, relative error {rel_error:e}")]
    GradCheck { coordinate: String, analytic: f64, numeric: f64, rel_error: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A differentiable stage with single-input forward and backward passes.
pub trait Layer<T: Scalar>: Send {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError>;

    /// Consumes the forward cache, accumulates parameter gradients and
    /// returns the gradient with respect to the forward input.
    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError>;

    fn params(&self) -> Vec<&Tensor<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Vec::new()
    }

    fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Layers applied in order.
#[derive(Default)]
pub struct Sequential<T: Scalar> {
    pub layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Box<dyn Layer<T>>>) -> Self {
        Self { layers }
    }
}

impl<T: Scalar> Layer<T> for Sequential<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut h = x.clone();
        for l in &mut self.layers {
            h = l.forward(&h)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut g = grad_out.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// Kinds of layer the codec is assembled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LayerSpec {
    Conv2d { in_ch: usize, filters: usize, kernel: usize, stride: usize },
    ConvTranspose2d { in_ch: usize, filters: usize, kernel: usize, stride: usize },
    Dense { inputs: usize, units: usize },
    PRelu { channels: usize },
    Relu,
    Sigmoid,
    GlobalAvgPool,
    Concat,
    PowerNormalize,
}

impl LayerSpec {
    /// Learnable parameters this layer carries.
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv2d { in_ch, filters, kernel, .. } | LayerSpec::ConvTranspose2d { in_ch, filters, kernel, .. } => {
                in_ch * filters * kernel * kernel + filters
            }
            LayerSpec::Dense { inputs, units } => inputs * units + units,
            LayerSpec::PRelu { channels } => channels,
            _ => 0,
        }
    }
}

/// He-uniform initialization: `U(−√(6/fan_in), √(6/fan_in))`.
pub(crate) fn fan_in_uniform<T: Scalar, R: Rng + ?Sized>(count: usize, fan_in: usize, rng: &mut R) -> Vec<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    (0..count).map(|_| T::of(rng.random_range(-bound..bound))).collect()
}
