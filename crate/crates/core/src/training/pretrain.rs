use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use super::{
    choose, loss_weights, optimize, predict_var, train, training_windows, OptimConfig, TaskConfig,
    TrainData, TrainReport,
};
use crate::autodiff::{Tape, Var};
use crate::dataset::InputAssembler;
use crate::forecast::Formulation;
use crate::models::Network;
use crate::objectives::LossConfig;
use crate::perturb::gaussian_perturb;
use crate::rng::derive_seed;
use crate::sphere::time::Timestamp;
use crate::tensor::Tensor;
use crate::{math, CoreError, Result};

/// Self-supervised or supervised warm-up before the main training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PretrainObjective {
    #[default]
    Supervised,
    Autoencoder,
    MaskedAutoencoder,
    DenoisingAutoencoder,
}

impl PretrainObjective {
    pub const ALL: [PretrainObjective; 4] = [
        PretrainObjective::Supervised,
        PretrainObjective::Autoencoder,
        PretrainObjective::MaskedAutoencoder,
        PretrainObjective::DenoisingAutoencoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PretrainObjective::Supervised => "supervised",
            PretrainObjective::Autoencoder => "autoencoder",
            PretrainObjective::MaskedAutoencoder => "masked_autoencoder",
            PretrainObjective::DenoisingAutoencoder => "denoising_autoencoder",
        }
    }

    /// Whether skip connections stay active while pretraining by default.
    /// A plain autoencoder with skips could copy its input through the
    /// shallowest skip, so they are removed for it.
    pub fn default_skips(self) -> bool {
        self != PretrainObjective::Autoencoder
    }
}

impl fmt::Display for PretrainObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PretrainObjective {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| CoreError::UnknownKind {
                what: "pretraining objective",
                name: s.into(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PretrainConfig {
    pub objective: PretrainObjective,
    /// Fraction of channels hidden per sample by the masked objective.
    pub mask_ratio: f64,
    /// Standard deviation of the denoising corruption.
    pub dae_noise_std: f64,
    /// Skip connections during pretraining; `None` uses the objective's
    /// default. Removed skips are restored and redrawn afterwards.
    pub skips: Option<bool>,
    /// Epochs of pretraining; `None` uses the optimizer's epoch count.
    pub epochs: Option<usize>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            objective: PretrainObjective::Supervised,
            mask_ratio: 0.5,
            dae_noise_std: 0.1,
            skips: None,
            epochs: None,
        }
    }
}

impl PretrainConfig {
    pub fn new(objective: PretrainObjective) -> Self {
        PretrainConfig {
            objective,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(CoreError::InvalidConfig(alloc::format!(
                "mask_ratio must lie in (0, 1), got {}",
                self.mask_ratio
            )));
        }
        if !(self.dae_noise_std >= 0.0 && self.dae_noise_std.is_finite()) {
            return Err(CoreError::InvalidConfig(
                "dae_noise_std must be >= 0".into(),
            ));
        }
        if self.objective == PretrainObjective::Autoencoder && self.skips == Some(true) {
            return Err(CoreError::InvalidConfig(
                "the autoencoder objective requires skip connections removed".into(),
            ));
        }
        if self.epochs == Some(0) {
            return Err(CoreError::InvalidConfig(
                "pretraining epochs must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn skips(&self) -> bool {
        self.skips.unwrap_or(self.objective.default_skips())
    }

    /// Channels masked per sample: `floor(mask_ratio * channels)`.
    pub fn masked_count(&self, channels: usize) -> Result<usize> {
        let count = math::floor(self.mask_ratio * channels as f64) as usize;
        if count == 0 {
            return Err(CoreError::NoMaskedChannels {
                ratio: self.mask_ratio,
                channels,
            });
        }
        Ok(count)
    }
}

/// A corrupted batch of input steps with its reconstruction target.
#[derive(Debug, Clone, PartialEq)]
pub struct Corruption {
    /// Dynamic input steps, each `[B, C, H, W]`.
    pub inputs: Vec<Tensor>,
    /// The clean last input state.
    pub target: Tensor,
    /// `mask[b][c]` marks the channels hidden from sample `b`.
    pub mask: Option<Vec<Vec<bool>>>,
}

/// Builds the reconstruction task of a self-supervised objective from clean
/// input steps. The target is always the clean most recent state.
pub fn corrupt<R: Rng + ?Sized>(
    cfg: &PretrainConfig,
    inputs: &[Tensor],
    rng: &mut R,
) -> Result<Corruption> {
    let target = inputs
        .last()
        .ok_or_else(|| CoreError::InvalidConfig("no input steps to reconstruct".into()))?
        .clone();
    match cfg.objective {
        PretrainObjective::Supervised => Err(CoreError::InvalidConfig(
            "the supervised objective has no reconstruction target".into(),
        )),
        PretrainObjective::Autoencoder => Ok(Corruption {
            inputs: inputs.to_vec(),
            target,
            mask: None,
        }),
        PretrainObjective::DenoisingAutoencoder => Ok(Corruption {
            inputs: inputs
                .iter()
                .map(|x| gaussian_perturb(x, cfg.dae_noise_std, rng))
                .collect(),
            target,
            mask: None,
        }),
        PretrainObjective::MaskedAutoencoder => {
            let shape = target.shape();
            let (b, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
            let count = cfg.masked_count(c)?;
            let mask: Vec<Vec<bool>> = (0..b).map(|_| choose(rng, count, c)).collect();
            let inputs = inputs
                .iter()
                .map(|x| {
                    let mut x = x.clone();
                    for (i, block) in x.data_mut().chunks_mut(plane).enumerate() {
                        if mask[i / c][i % c] {
                            block.fill(0.0);
                        }
                    }
                    x
                })
                .collect();
            Ok(Corruption {
                inputs,
                target,
                mask: Some(mask),
            })
        }
    }
}

/// Records the reconstruction loss of `corruption`, restricted to the
/// masked channels when there is a mask.
pub fn reconstruction_loss<N: Network + ?Sized>(
    tape: &mut Tape,
    net: &N,
    assembler: &InputAssembler,
    corruption: &Corruption,
    last_times: &[Timestamp],
    loss: &LossConfig,
    weights: &[f64],
) -> Result<Var> {
    let window: Vec<Var> = corruption
        .inputs
        .iter()
        .map(|x| tape.constant(x.clone()))
        .collect();
    let pred = predict_var(
        tape,
        net,
        assembler,
        &window,
        last_times,
        Formulation::Direct,
    )?;
    let w = loss_weights(loss, weights);
    match &corruption.mask {
        Some(mask) => tape.masked_loss(pred, &corruption.target, loss, w, mask),
        None => tape.loss(pred, &corruption.target, loss, w),
    }
}

/// Pretrains `net` on `data.train`. The supervised objective is exactly
/// [`train`]; the others reconstruct the last input state with the direct
/// formulation. Skips removed for pretraining are re-enabled with freshly
/// drawn weights before returning.
pub fn pretrain<N: Network + ?Sized>(
    net: &mut N,
    data: &TrainData<'_>,
    task: &TaskConfig,
    cfg: &PretrainConfig,
    optim: &OptimConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    optim.validate()?;
    task.loss.validate()?;
    let epochs = cfg.epochs.unwrap_or(optim.epochs);
    if cfg.objective == PretrainObjective::Supervised {
        let optim = OptimConfig {
            epochs,
            ..optim.clone()
        };
        return train(net, data, task, &optim);
    }
    if cfg.objective == PretrainObjective::MaskedAutoencoder {
        cfg.masked_count(data.series.n_channels())?;
    }
    let windows = training_windows(
        data.train.clone(),
        data.assembler.n_steps(),
        task.stride_steps,
    )?;
    let weights = data.series.grid.quadrature_weights()?;
    let skips = cfg.skips();
    net.set_skips(skips);
    log::info!(
        "pretraining with {} objective, skips {}",
        cfg.objective,
        if skips { "on" } else { "off" }
    );
    let report = optimize(
        net,
        data.series,
        &windows,
        0,
        1,
        optim,
        epochs,
        |tape, net, batch, _, rng| {
            let corruption = corrupt(cfg, &batch.inputs, rng)?;
            reconstruction_loss(
                tape,
                net,
                data.assembler,
                &corruption,
                &batch.last_times,
                &task.loss,
                &weights,
            )
        },
        |_, _| Ok(()),
    );
    if !skips {
        net.set_skips(true);
        net.reinit_skip_path(derive_seed(optim.seed, 0x5c1b));
    }
    report
}
