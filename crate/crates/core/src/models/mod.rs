//! Trainable networks: a configurable UNet with sphere-aware padding and a
//! Graph UNet that wraps the UNet in point-set kernel layers.

mod graph;
mod padding;
mod params;
mod unet;

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::sphere::GridSpec;
use crate::tensor::Tensor;
use crate::Result;

pub use graph::{nearest_neighbors, GraphUnet, GraphUnetConfig};
pub use padding::{pad2d, PaddingScheme, XPadding, YPadding};
pub use params::{Init, Param, ParamSet};
pub use unet::{Unet, UnetConfig};

/// A differentiable model with named parameters.
pub trait Network {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn in_channels(&self) -> usize;
    fn out_channels(&self) -> usize;

    /// Records the forward pass of a `[B, C_in, H, W]` value on `tape`.
    fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var>;

    /// Indices of the first and last layer parameters, the ones tied to the
    /// input and output channel counts.
    fn boundary_params(&self) -> Vec<usize>;

    /// Enables or disables the encoder-decoder skip connections.
    fn set_skips(&mut self, _enabled: bool) {}

    /// Redraws the weights that read skip connections.
    fn reinit_skip_path(&mut self, _seed: u64) {}
}

/// Anything mapping an assembled input batch to an output batch, trainable
/// or not (analytic oracles implement this directly).
pub trait Operator {
    fn apply(&self, input: &Tensor) -> Result<Tensor>;
}

/// Forward pass without keeping the tape.
pub fn infer<N: Network + ?Sized>(net: &N, input: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let y = net.forward(&mut tape, x)?;
    Ok(tape.value(y).clone())
}

/// Exact number of trainable scalars.
pub fn count_parameters<N: Network + ?Sized>(net: &N) -> usize {
    net.params().count()
}

/// Architecture choice of an experiment.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum ModelConfig {
    Unet(UnetConfig),
    GraphUnet(GraphUnetConfig),
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Unet(c) => c.validate(),
            ModelConfig::GraphUnet(c) => c.validate(),
        }
    }

    pub fn in_channels(&self) -> usize {
        match self {
            ModelConfig::Unet(c) => c.in_channels,
            ModelConfig::GraphUnet(c) => c.in_channels,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            ModelConfig::Unet(c) => c.out_channels,
            ModelConfig::GraphUnet(c) => c.out_channels,
        }
    }

    /// Copy with the channel counts replaced.
    pub fn with_channels(&self, in_channels: usize, out_channels: usize) -> ModelConfig {
        let mut out = self.clone();
        match &mut out {
            ModelConfig::Unet(c) => {
                c.in_channels = in_channels;
                c.out_channels = out_channels;
            }
            ModelConfig::GraphUnet(c) => {
                c.in_channels = in_channels;
                c.out_channels = out_channels;
            }
        }
        out
    }

    pub fn build(&self, grid: &GridSpec, seed: u64) -> Result<Model> {
        match self {
            ModelConfig::Unet(c) => {
                c.check_grid(grid.n_lat(), grid.n_lon())?;
                Ok(Model::Unet(Unet::new(c.clone(), seed)?))
            }
            ModelConfig::GraphUnet(c) => {
                Ok(Model::GraphUnet(GraphUnet::new(c.clone(), grid, seed)?))
            }
        }
    }
}

/// A built network of either architecture.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Unet(Unet),
    GraphUnet(GraphUnet),
}

macro_rules! dispatch {
    ($self:ident, $net:ident => $body:expr) => {
        match $self {
            Model::Unet($net) => $body,
            Model::GraphUnet($net) => $body,
        }
    };
}

impl Network for Model {
    fn params(&self) -> &ParamSet {
        dispatch!(self, n => n.params())
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        dispatch!(self, n => n.params_mut())
    }

    fn in_channels(&self) -> usize {
        dispatch!(self, n => n.in_channels())
    }

    fn out_channels(&self) -> usize {
        dispatch!(self, n => n.out_channels())
    }

    fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        dispatch!(self, n => n.forward(tape, input))
    }

    fn boundary_params(&self) -> Vec<usize> {
        dispatch!(self, n => n.boundary_params())
    }

    fn set_skips(&mut self, enabled: bool) {
        dispatch!(self, n => n.set_skips(enabled))
    }

    fn reinit_skip_path(&mut self, seed: u64) {
        dispatch!(self, n => n.reinit_skip_path(seed))
    }
}

impl Operator for Unet {
    fn apply(&self, input: &Tensor) -> Result<Tensor> {
        infer(self, input)
    }
}

impl Operator for GraphUnet {
    fn apply(&self, input: &Tensor) -> Result<Tensor> {
        infer(self, input)
    }
}

impl Operator for Model {
    fn apply(&self, input: &Tensor) -> Result<Tensor> {
        infer(self, input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_doubling_quadruples_conv_weights() {
        let small = UnetConfig::new(4, 64, 147, 73);
        let large = UnetConfig::new(4, 128, 147, 73);
        let ratio = large.conv_weight_count() as f64 / small.conv_weight_count() as f64;
        assert!((ratio - 4.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn model_dispatch() {
        let grid = GridSpec::equiangular(4, 8).unwrap();
        let cfg = ModelConfig::Unet(UnetConfig::new(2, 2, 3, 1));
        let m = cfg.build(&grid, 0).unwrap();
        assert_eq!(
            count_parameters(&m),
            UnetConfig::new(2, 2, 3, 1).parameter_count()
        );
        assert_eq!(
            m.apply(&Tensor::zeros(&[1, 3, 4, 8])).unwrap().shape(),
            &[1, 1, 4, 8]
        );
        let cfg = cfg.with_channels(5, 2);
        assert_eq!((cfg.in_channels(), cfg.out_channels()), (5, 2));
        assert!(cfg.build(&GridSpec::equiangular(3, 8).unwrap(), 0).is_err());
    }
}
