//! Surrogate encoder ensemble: forward features and vector-Jacobian products.

mod bridge;
mod toy;
pub mod wire;

use serde::{Deserialize, Serialize};

pub use bridge::{connect_bridge_encoder, BridgeClient, BridgeEncoder, BridgeScorer};
pub use toy::ToyEncoder;

use crate::error::{Error, Result};
use crate::image::{Image, ImageGrad};
use crate::linalg::Matrix;

/// Global (`d_g`) and token-level (`m × d`) features of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub global: Vec<f64>,
    pub local: Matrix,
}

impl FeatureBundle {
    /// Globals followed by row-major locals.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.global.clone();
        v.extend_from_slice(&self.local.data);
        v
    }

    pub fn unflatten(values: &[f64], shape: &EncoderShape) -> Result<Self> {
        let want = shape.global_dim + shape.tokens * shape.dim;
        if values.len() != want {
            return Err(Error::shape(format!(
                "feature vector of {} values, expected {want}",
                values.len()
            )));
        }
        Ok(Self {
            global: values[..shape.global_dim].to_vec(),
            local: Matrix::from_vec(shape.tokens, shape.dim, values[shape.global_dim..].to_vec()),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.global.iter().chain(&self.local.data).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderShape {
    pub height: usize,
    pub width: usize,
    /// `m`.
    pub tokens: usize,
    /// `d`.
    pub dim: usize,
    /// `d_g`.
    pub global_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    ToyLinear,
    ToyConv,
    Bridged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    #[serde(default)]
    pub height: usize,
    #[serde(default)]
    pub width: usize,
    #[serde(default = "default_grid")]
    pub grid_rows: usize,
    #[serde(default = "default_grid")]
    pub grid_cols: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_global_dim")]
    pub global_dim: usize,
    #[serde(default)]
    pub seed: u64,
    /// Elementwise tanh on the tokens.
    #[serde(default)]
    pub tanh: bool,
    /// `host:port` for bridged encoders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

fn default_grid() -> usize {
    4
}

fn default_dim() -> usize {
    16
}

fn default_global_dim() -> usize {
    32
}

impl EncoderSpec {
    pub fn toy(kind: EncoderKind, height: usize, width: usize, seed: u64) -> Self {
        Self {
            kind,
            height,
            width,
            grid_rows: default_grid(),
            grid_cols: default_grid(),
            dim: default_dim(),
            global_dim: default_global_dim(),
            seed,
            tanh: false,
            endpoint: None,
        }
    }
}

/// A differentiable image encoder. Implementations are immutable after
/// construction; `encode` is a pure function of the input.
pub trait Encoder: Send + Sync {
    fn shape(&self) -> EncoderShape;

    fn encode(&self, img: &Image) -> Result<FeatureBundle>;

    /// `Jᵀ · cot` at `img`.
    fn encode_vjp(&self, img: &Image, cot: &FeatureBundle) -> Result<ImageGrad>;
}

pub fn make_toy_encoder(spec: &EncoderSpec) -> Result<ToyEncoder> {
    ToyEncoder::new(spec)
}

/// Builds any encoder kind; bridged specs connect to their endpoint.
pub fn build_encoder(spec: &EncoderSpec) -> Result<Box<dyn Encoder>> {
    match spec.kind {
        EncoderKind::ToyLinear | EncoderKind::ToyConv => Ok(Box::new(ToyEncoder::new(spec)?)),
        EncoderKind::Bridged => {
            let endpoint = spec
                .endpoint
                .as_deref()
                .ok_or_else(|| Error::Config("bridged encoder needs an endpoint".into()))?;
            Ok(Box::new(connect_bridge_encoder(endpoint)?))
        }
    }
}
