use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::params::{Init, ParamSet};
use super::{Network, PaddingScheme};
use crate::autodiff::{Tape, Var};
use crate::rng::seeded;
use crate::tensor::Tensor;
use crate::{CoreError, Result};

#[cfg(feature = "serde")]
fn default_width() -> usize {
    64
}

#[cfg(feature = "serde")]
fn default_true() -> bool {
    true
}

/// Shape of a [`Unet`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UnetConfig {
    /// Number of encoder stages, `2..=5`.
    pub n_blocks: usize,
    /// Channels after the stem; doubled at every downsampling.
    #[cfg_attr(feature = "serde", serde(default = "default_width"))]
    pub base_width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub padding: PaddingScheme,
    /// Whether decoder stages see the encoder skip connections.
    #[cfg_attr(feature = "serde", serde(default = "default_true"))]
    pub skips: bool,
}

impl UnetConfig {
    pub fn new(
        n_blocks: usize,
        base_width: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        UnetConfig {
            n_blocks,
            base_width,
            in_channels,
            out_channels,
            padding: PaddingScheme::default(),
            skips: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=5).contains(&self.n_blocks) {
            return Err(CoreError::InvalidConfig(format!(
                "n_blocks must be in 2..=5, got {}",
                self.n_blocks
            )));
        }
        if self.base_width == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(CoreError::InvalidConfig(
                "UNet widths and channel counts must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Spatial dimensions must be multiples of this.
    pub fn factor(&self) -> usize {
        1 << (self.n_blocks - 1)
    }

    pub fn check_grid(&self, h: usize, w: usize) -> Result<()> {
        let f = self.factor();
        if h % f != 0 || w % f != 0 {
            return Err(CoreError::Divisibility {
                factor: f,
                blocks: self.n_blocks,
                h,
                w,
            });
        }
        Ok(())
    }

    fn width(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    /// Closed-form trainable-parameter count of the topology.
    pub fn parameter_count(&self) -> usize {
        let block = |ci: usize, co: usize| 9 * ci * co + co + 2 * co;
        let mut total = block(self.in_channels, self.base_width);
        for i in 0..self.n_blocks {
            let c = self.width(i);
            total += 2 * block(c, c);
            if i + 1 < self.n_blocks {
                let next = self.width(i + 1);
                total += 4 * c * next + next; // downsampling conv
                total += 4 * next * c + c; // upsampling transposed conv
                total += block(2 * c, c) + block(c, c);
            }
        }
        total + self.base_width * self.out_channels + self.out_channels
    }

    /// Number of convolution weights, biases and norm parameters excluded.
    pub fn conv_weight_count(&self) -> usize {
        let mut total = 9 * self.in_channels * self.base_width;
        for i in 0..self.n_blocks {
            let c = self.width(i);
            total += 2 * 9 * c * c;
            if i + 1 < self.n_blocks {
                let next = self.width(i + 1);
                total += 8 * c * next + 9 * 2 * c * c + 9 * c * c;
            }
        }
        total + self.base_width * self.out_channels
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Conv {
    weight: usize,
    bias: usize,
    kernel: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct ConvBlock {
    conv: Conv,
    gamma: usize,
    beta: usize,
    groups: usize,
}

/// Largest of 8, 4, 2, 1 dividing `channels`.
fn group_count(channels: usize) -> usize {
    [8, 4, 2, 1]
        .into_iter()
        .find(|g| channels % g == 0)
        .unwrap_or(1)
}

struct Builder<'a, R: Rng> {
    params: &'a mut ParamSet,
    rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn conv(&mut self, name: &str, ci: usize, co: usize, kernel: usize) -> Conv {
        let init = Init::fan_in(ci * kernel * kernel);
        let weight = self.params.add(
            format!("{name}.weight"),
            &[co, ci, kernel, kernel],
            init,
            self.rng,
        );
        let bias = self
            .params
            .add(format!("{name}.bias"), &[co], init, self.rng);
        Conv {
            weight,
            bias,
            kernel,
        }
    }

    fn block(&mut self, name: &str, ci: usize, co: usize) -> ConvBlock {
        let conv = self.conv(&format!("{name}.conv"), ci, co, 3);
        let gamma = self.params.add(
            format!("{name}.norm.gamma"),
            &[co],
            Init::Constant(1.0),
            self.rng,
        );
        let beta = self.params.add(
            format!("{name}.norm.beta"),
            &[co],
            Init::Constant(0.0),
            self.rng,
        );
        ConvBlock {
            conv,
            gamma,
            beta,
            groups: group_count(co),
        }
    }

    fn transposed(&mut self, name: &str, ci: usize, co: usize) -> Conv {
        let init = Init::fan_in(co * 4);
        let weight = self
            .params
            .add(format!("{name}.weight"), &[ci, co, 2, 2], init, self.rng);
        let bias = self
            .params
            .add(format!("{name}.bias"), &[co], init, self.rng);
        Conv {
            weight,
            bias,
            kernel: 2,
        }
    }
}

/// Parameter indices of a UNet inside some [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct UnetLayout {
    cfg: UnetConfig,
    stem: ConvBlock,
    encoder: Vec<[ConvBlock; 2]>,
    down: Vec<Conv>,
    up: Vec<Conv>,
    decoder: Vec<[ConvBlock; 2]>,
    head: Conv,
}

impl UnetLayout {
    /// Appends the UNet parameters to `params`, names prefixed by `prefix`.
    pub(crate) fn build<R: Rng>(
        cfg: UnetConfig,
        params: &mut ParamSet,
        rng: &mut R,
        prefix: &str,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut b = Builder { params, rng };
        let n = cfg.n_blocks;
        let stem = b.block(&format!("{prefix}stem"), cfg.in_channels, cfg.base_width);
        let mut encoder = Vec::with_capacity(n);
        let mut down = Vec::with_capacity(n - 1);
        for i in 0..n {
            let c = cfg.width(i);
            encoder.push([
                b.block(&format!("{prefix}enc{i}.block0"), c, c),
                b.block(&format!("{prefix}enc{i}.block1"), c, c),
            ]);
            if i + 1 < n {
                down.push(b.conv(&format!("{prefix}down{i}"), c, cfg.width(i + 1), 2));
            }
        }
        let mut up = Vec::with_capacity(n - 1);
        let mut decoder = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            let c = cfg.width(i);
            up.push(b.transposed(&format!("{prefix}up{i}"), cfg.width(i + 1), c));
            decoder.push([
                b.block(&format!("{prefix}dec{i}.block0"), 2 * c, c),
                b.block(&format!("{prefix}dec{i}.block1"), c, c),
            ]);
        }
        let head = b.conv(
            &format!("{prefix}head"),
            cfg.base_width,
            cfg.out_channels,
            1,
        );
        Ok(UnetLayout {
            cfg,
            stem,
            encoder,
            down,
            up,
            decoder,
            head,
        })
    }

    pub(crate) fn config(&self) -> &UnetConfig {
        &self.cfg
    }

    fn conv(
        &self,
        p: &ParamSet,
        tape: &mut Tape,
        x: Var,
        conv: &Conv,
        stride: usize,
    ) -> Result<Var> {
        let w = tape.param(conv.weight, p.value(conv.weight));
        let b = tape.param(conv.bias, p.value(conv.bias));
        let input = if conv.kernel == 3 {
            tape.pad(x, self.cfg.padding, 1, 1)?
        } else {
            x
        };
        tape.conv2d(input, w, Some(b), stride)
    }

    fn block(&self, p: &ParamSet, tape: &mut Tape, x: Var, block: &ConvBlock) -> Result<Var> {
        let y = self.conv(p, tape, x, &block.conv, 1)?;
        let g = tape.param(block.gamma, p.value(block.gamma));
        let bt = tape.param(block.beta, p.value(block.beta));
        let y = tape.group_norm(y, g, bt, block.groups)?;
        Ok(tape.gelu(y))
    }

    /// Redraws the decoder weights that read the skip connections.
    pub(crate) fn reinit_skip_weights<R: Rng + ?Sized>(&self, p: &mut ParamSet, rng: &mut R) {
        for (i, stage) in self.decoder.iter().enumerate() {
            let c = self.cfg.width(i);
            let index = stage[0].conv.weight;
            let fresh = p.get(index).init.sample(&[c, c, 3, 3], rng);
            let w = p.value_mut(index);
            for o in 0..c {
                let dst = &mut w.data_mut()[(o * 2 * c + c) * 9..(o * 2 * c + 2 * c) * 9];
                dst.copy_from_slice(&fresh.data()[o * c * 9..(o + 1) * c * 9]);
            }
        }
    }

    pub(crate) fn boundary_params(&self) -> [usize; 4] {
        [
            self.stem.conv.weight,
            self.stem.conv.bias,
            self.head.weight,
            self.head.bias,
        ]
    }

    pub(crate) fn set_skips(&mut self, enabled: bool) {
        self.cfg.skips = enabled;
    }

    /// Forward pass on a `[B, C_in, H, W]` tape value.
    pub(crate) fn forward(&self, p: &ParamSet, tape: &mut Tape, input: Var) -> Result<Var> {
        let shape = tape.value(input).shape().to_vec();
        if shape.len() != 4 || shape[1] != self.cfg.in_channels {
            return Err(CoreError::shape(
                "UNet input",
                &[0, self.cfg.in_channels, 0, 0],
                &shape,
            ));
        }
        self.cfg.check_grid(shape[2], shape[3])?;
        let n = self.cfg.n_blocks;
        let mut x = self.block(p, tape, input, &self.stem)?;
        let mut skips = Vec::with_capacity(n - 1);
        for i in 0..n {
            for blk in &self.encoder[i] {
                x = self.block(p, tape, x, blk)?;
            }
            if i + 1 < n {
                skips.push(x);
                x = self.conv(p, tape, x, &self.down[i], 2)?;
            }
        }
        for i in (0..n - 1).rev() {
            let up = &self.up[i];
            let w = tape.param(up.weight, p.value(up.weight));
            let b = tape.param(up.bias, p.value(up.bias));
            x = tape.conv_transpose2(x, w, Some(b))?;
            let skip = if self.cfg.skips {
                skips[i]
            } else {
                let zeros = Tensor::zeros(tape.value(skips[i]).shape());
                tape.constant(zeros)
            };
            x = tape.concat_channels(&[x, skip])?;
            for blk in &self.decoder[i] {
                x = self.block(p, tape, x, blk)?;
            }
        }
        self.conv(p, tape, x, &self.head, 1)
    }
}

/// Encoder-decoder convolutional network with skip connections.
///
/// Stem: 3x3 conv to `base_width`, then group norm and GELU. Each encoder
/// stage runs two such blocks at width `base_width * 2^i`; stages are
/// separated by 2x2 stride-2 convolutions that double the width. The
/// decoder mirrors this with 2x2 stride-2 transposed convolutions, channel
/// concatenation of the matching encoder output and two blocks. A 1x1 conv
/// maps back to `out_channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Unet {
    params: ParamSet,
    layout: UnetLayout,
}

impl Unet {
    pub fn new(cfg: UnetConfig, seed: u64) -> Result<Self> {
        let mut params = ParamSet::new();
        let layout = UnetLayout::build(cfg, &mut params, &mut seeded(seed), "")?;
        Ok(Unet { params, layout })
    }

    pub fn config(&self) -> &UnetConfig {
        self.layout.config()
    }

    pub fn skips(&self) -> bool {
        self.layout.cfg.skips
    }

    /// Redraws the decoder weights that read the skip connections, after
    /// training with the skips removed.
    pub fn reinit_skip_weights<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.layout.reinit_skip_weights(&mut self.params, rng);
    }
}

impl Network for Unet {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn in_channels(&self) -> usize {
        self.layout.cfg.in_channels
    }

    fn out_channels(&self) -> usize {
        self.layout.cfg.out_channels
    }

    fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        self.layout.forward(&self.params, tape, input)
    }

    fn boundary_params(&self) -> Vec<usize> {
        self.layout.boundary_params().to_vec()
    }

    fn set_skips(&mut self, enabled: bool) {
        self.layout.set_skips(enabled);
    }

    fn reinit_skip_path(&mut self, seed: u64) {
        self.reinit_skip_weights(&mut seeded(seed));
    }
}
