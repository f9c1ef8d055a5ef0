use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::{
    loss_weights, optimize, predict_var, training_windows, Batch, OptimConfig, TaskConfig,
    TrainData, TrainReport,
};
use crate::autodiff::{Tape, Var};
use crate::dataset::InputAssembler;
use crate::models::Network;
use crate::{CoreError, Result};

/// Which rollout steps contribute to the fine-tuning loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Supervision {
    /// Only the final state; gradients still flow through earlier steps.
    #[default]
    LastStep,
    /// Every step, discounted by `gamma^(i-1)`.
    Intermediate,
}

impl Supervision {
    pub fn name(self) -> &'static str {
        match self {
            Supervision::LastStep => "last_step",
            Supervision::Intermediate => "intermediate",
        }
    }
}

impl fmt::Display for Supervision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Supervision {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        [Supervision::LastStep, Supervision::Intermediate]
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| CoreError::UnknownKind {
                what: "supervision mode",
                name: s.into(),
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FinetuneConfig {
    /// Rollout length of each sequential stage.
    pub stages: Vec<usize>,
    pub supervision: Supervision,
    pub gamma: f64,
    /// Feed convex mixes of prediction and truth back as inputs (only with
    /// intermediate supervision).
    pub scheduled_sampling: bool,
    /// Epochs per stage; `None` splits the optimizer's epochs evenly.
    pub epochs_per_stage: Option<usize>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            stages: alloc::vec![2, 3, 4],
            supervision: Supervision::LastStep,
            gamma: 0.9,
            scheduled_sampling: false,
            epochs_per_stage: None,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() || self.stages.contains(&0) {
            return Err(CoreError::InvalidConfig(
                "fine-tuning stages must be non-empty and positive".into(),
            ));
        }
        if self.stages.windows(2).any(|w| w[1] < w[0]) {
            return Err(CoreError::InvalidConfig(
                "fine-tuning stage lengths must be nondecreasing".into(),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(CoreError::InvalidConfig(alloc::format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if self.epochs_per_stage == Some(0) {
            return Err(CoreError::InvalidConfig(
                "epochs per stage must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn stage_epochs(&self, total: usize) -> usize {
        self.epochs_per_stage
            .unwrap_or((total / self.stages.len()).max(1))
    }

    /// Whether scheduled sampling is in effect.
    pub fn samples(&self) -> bool {
        self.scheduled_sampling && self.supervision == Supervision::Intermediate
    }
}

/// `[1, gamma, gamma^2, ...]` for `k` steps.
pub fn discount_weights(k: usize, gamma: f64) -> Vec<f64> {
    let mut w = 1.0;
    (0..k)
        .map(|_| {
            let out = w;
            w *= gamma;
            out
        })
        .collect()
}

/// Prediction weight of scheduled sampling at each of `epochs` epochs:
/// `1/E, 2/E, ..., 1`.
pub fn sampling_weights(epochs: usize) -> Vec<f64> {
    (1..=epochs).map(|e| e as f64 / epochs as f64).collect()
}

/// Settings of one multi-step loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct MultistepLoss<'a> {
    pub task: &'a TaskConfig,
    pub supervision: Supervision,
    pub gamma: f64,
    /// Prediction weight when feeding steps back; `None` feeds predictions.
    pub sampling: Option<f64>,
    pub stride_seconds: i64,
    pub weights: &'a [f64],
}

/// Records a differentiable rollout of `batch.targets.len()` steps and its
/// supervised loss.
pub(crate) fn multistep_loss<N: Network + ?Sized>(
    tape: &mut Tape,
    net: &N,
    assembler: &InputAssembler,
    batch: &Batch,
    cfg: &MultistepLoss<'_>,
) -> Result<Var> {
    let k = batch.targets.len();
    let loss_cfg = &cfg.task.loss;
    let w = loss_weights(loss_cfg, cfg.weights);
    let mut window: Vec<Var> = batch
        .inputs
        .iter()
        .map(|x| tape.constant(x.clone()))
        .collect();
    let mut total: Option<Var> = None;
    let discounts = discount_weights(k, cfg.gamma);
    for (i, target) in batch.targets.iter().enumerate() {
        let offset = cfg
            .stride_seconds
            .checked_mul(i as i64)
            .ok_or(CoreError::TimestampOverflow)?;
        let times = batch
            .last_times
            .iter()
            .map(|t| t.checked_add(offset).ok_or(CoreError::TimestampOverflow))
            .collect::<Result<Vec<_>>>()?;
        let pred = predict_var(tape, net, assembler, &window, &times, cfg.task.formulation)?;
        let supervised = cfg.supervision == Supervision::Intermediate || i + 1 == k;
        if supervised {
            let li = tape.loss(pred, target, loss_cfg, w)?;
            let li = tape.scale(
                li,
                if cfg.supervision == Supervision::Intermediate {
                    discounts[i]
                } else {
                    1.0
                },
            );
            total = Some(match total {
                Some(t) => tape.add(t, li)?,
                None => li,
            });
        }
        if i + 1 < k {
            let next = match cfg.sampling {
                Some(alpha) => {
                    let p = tape.scale(pred, alpha);
                    let truth = tape.constant(target.scale(1.0 - alpha));
                    tape.add(p, truth)?
                }
                None => pred,
            };
            window.remove(0);
            window.push(next);
        }
    }
    Ok(total.expect("at least one supervised step"))
}

/// Loss history of each fine-tuning stage.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FinetuneReport {
    /// `(rollout steps, report)` per stage.
    pub stages: Vec<(usize, TrainReport)>,
}

/// Sequential multi-step fine-tuning. Each stage trains on rollouts of its
/// length with a fresh optimizer state and a restarted cosine schedule.
pub fn finetune_multistep<N: Network + ?Sized>(
    net: &mut N,
    data: &TrainData<'_>,
    task: &TaskConfig,
    cfg: &FinetuneConfig,
    optim: &OptimConfig,
) -> Result<FinetuneReport> {
    cfg.validate()?;
    optim.validate()?;
    task.loss.validate()?;
    let stride_seconds = data
        .series
        .dt_seconds()
        .checked_mul(task.stride_steps as i64)
        .ok_or(CoreError::TimestampOverflow)?;
    let weights = data.series.grid.quadrature_weights()?;
    let epochs = cfg.stage_epochs(optim.epochs);
    let schedule = sampling_weights(epochs);
    let mut report = FinetuneReport::default();
    for (s, &k) in cfg.stages.iter().enumerate() {
        let windows = training_windows(
            data.train.clone(),
            data.assembler.n_steps(),
            k * task.stride_steps,
        )?;
        log::info!(
            "fine-tuning stage {s}: {k}-step rollouts, {} windows",
            windows.len()
        );
        let stage_optim = OptimConfig {
            seed: crate::rng::derive_seed(optim.seed, s as u64 + 1),
            ..optim.clone()
        };
        let r = optimize(
            net,
            data.series,
            &windows,
            k,
            task.stride_steps,
            &stage_optim,
            epochs,
            |tape, net, batch, epoch, _| {
                let spec = MultistepLoss {
                    task,
                    supervision: cfg.supervision,
                    gamma: cfg.gamma,
                    sampling: cfg.samples().then(|| schedule[epoch]),
                    stride_seconds,
                    weights: &weights,
                };
                multistep_loss(tape, net, data.assembler, &batch, &spec)
            },
            |_, _| Ok(()),
        )?;
        report.stages.push((k, r));
    }
    Ok(report)
}
