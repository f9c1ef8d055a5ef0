//! Optimization: single-step training, pretraining objectives, multi-step
//! fine-tuning and partial checkpoint loading.

mod checkpoint;
mod finetune;
mod optim;
mod pretrain;

use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::dataset::{windows_in, InputAssembler, SampleWindow, WeatherSeries};
use crate::forecast::{step_var, Formulation};
use crate::models::Network;
use crate::objectives::{LossConfig, LossKind};
use crate::perturb::{perturb, NoiseConfig};
use crate::rng::{derive_seed, seeded, SeededRng};
use crate::sphere::time::Timestamp;
use crate::tensor::Tensor;
use crate::{CoreError, Result};

pub use checkpoint::{load_partial_checkpoint, Checkpoint, LoadReport};
pub use finetune::{
    discount_weights, finetune_multistep, sampling_weights, FinetuneConfig, FinetuneReport,
    MultistepLoss, Supervision,
};
pub use optim::{cosine_lr, AdamW, OptimConfig};
pub use pretrain::{
    corrupt, pretrain, reconstruction_loss, Corruption, PretrainConfig, PretrainObjective,
};

/// What a single-step model is trained to do.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub formulation: Formulation,
    pub loss: LossConfig,
    /// Perturbation of the dynamic input steps during training only.
    pub noise: NoiseConfig,
    /// Dataset steps between the last input and the target.
    pub stride_steps: usize,
}

impl TaskConfig {
    pub fn new(formulation: Formulation, loss: LossConfig) -> Self {
        TaskConfig {
            formulation,
            loss,
            noise: NoiseConfig::default(),
            stride_steps: 1,
        }
    }
}

/// A normalized series with the assembler and the time ranges to use.
#[derive(Debug, Clone)]
pub struct TrainData<'a> {
    pub series: &'a WeatherSeries,
    pub assembler: &'a InputAssembler,
    pub train: Range<usize>,
    pub val: Range<usize>,
}

/// Losses recorded while optimizing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Training loss of every optimizer step.
    pub loss_history: Vec<f64>,
    pub steps_per_epoch: usize,
    /// Validation loss (configured kind) after each epoch.
    pub val_loss: Vec<f64>,
    /// Validation mean squared error after each epoch.
    pub val_mse: Vec<f64>,
}

impl TrainReport {
    /// Mean training loss of every epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        if self.steps_per_epoch == 0 {
            return Vec::new();
        }
        self.loss_history
            .chunks(self.steps_per_epoch)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }
}

/// Input steps, their last valid times and the targets of a batch of
/// windows; every tensor is `[B, C, H, W]`.
#[derive(Debug, Clone)]
pub(crate) struct Batch {
    pub inputs: Vec<Tensor>,
    pub last_times: Vec<Timestamp>,
    /// Targets one, two, ... strides after the last input.
    pub targets: Vec<Tensor>,
}

impl Batch {
    pub(crate) fn gather(
        series: &WeatherSeries,
        windows: &[SampleWindow],
        n_targets: usize,
        stride: usize,
    ) -> Batch {
        let n = windows[0].n_inputs;
        let inputs = (0..n)
            .map(|k| series.batch(&windows.iter().map(|w| w.start + k).collect::<Vec<_>>()))
            .collect();
        let targets = (1..=n_targets)
            .map(|k| {
                series.batch(
                    &windows
                        .iter()
                        .map(|w| w.last_input() + k * stride)
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        Batch {
            inputs,
            last_times: windows
                .iter()
                .map(|w| series.timestamps[w.last_input()])
                .collect(),
            targets,
        }
    }

    pub(crate) fn perturbed(mut self, noise: &NoiseConfig, rng: &mut SeededRng) -> Result<Batch> {
        for x in &mut self.inputs {
            *x = perturb(x, noise, rng)?;
        }
        Ok(self)
    }
}

pub(crate) fn loss_weights<'a>(cfg: &LossConfig, weights: &'a [f64]) -> Option<&'a [f64]> {
    cfg.kind.is_geometric().then_some(weights)
}

/// Records input assembly and one prediction step; returns the prediction.
pub(crate) fn predict_var<N: Network + ?Sized>(
    tape: &mut Tape,
    net: &N,
    assembler: &InputAssembler,
    window: &[Var],
    last_times: &[Timestamp],
    formulation: Formulation,
) -> Result<Var> {
    let batch = tape.value(window[0]).shape()[0];
    let mut parts = window.to_vec();
    if let Some(extras) = assembler.extras(batch, last_times)? {
        parts.push(tape.constant(extras));
    }
    let input = tape.concat_channels(&parts)?;
    let last = *window.last().expect("non-empty window");
    step_var(tape, net, input, last, formulation)
}

/// Windows of `range` for `n` inputs and targets up to `reach` steps ahead.
pub(crate) fn training_windows(
    range: Range<usize>,
    n: usize,
    reach: usize,
) -> Result<Vec<SampleWindow>> {
    windows_in(range, n, reach)
}

/// Shuffled batches of one epoch.
pub(crate) fn epoch_batches(
    windows: &[SampleWindow],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Vec<Vec<SampleWindow>> {
    let mut order = windows.to_vec();
    order.shuffle(&mut seeded(derive_seed(seed, epoch as u64)));
    order
        .chunks(batch_size)
        .map(<[SampleWindow]>::to_vec)
        .collect()
}

pub(crate) fn check_finite(loss: f64, step: usize, history: &[f64]) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(CoreError::Divergence {
            step,
            loss,
            last_finite: history.iter().rev().copied().find(|v| v.is_finite()),
        })
    }
}

/// Validation loss and MSE of one-step predictions over `range`.
pub fn validate<N: Network + ?Sized>(
    net: &N,
    data: &TrainData<'_>,
    task: &TaskConfig,
    batch_size: usize,
) -> Result<Option<(f64, f64)>> {
    let n = data.assembler.n_steps();
    let Ok(windows) = training_windows(data.val.clone(), n, task.stride_steps) else {
        return Ok(None);
    };
    let weights = data.series.grid.quadrature_weights()?;
    let mse_cfg = LossConfig::new(LossKind::Mse);
    let mut loss_sum = 0.0;
    let mut mse_sum = 0.0;
    for chunk in windows.chunks(batch_size.max(1)) {
        let batch = Batch::gather(data.series, chunk, 1, task.stride_steps);
        let mut tape = Tape::new();
        let window: Vec<Var> = batch
            .inputs
            .iter()
            .map(|x| tape.constant(x.clone()))
            .collect();
        let pred = predict_var(
            &mut tape,
            net,
            data.assembler,
            &window,
            &batch.last_times,
            task.formulation,
        )?;
        let p = tape.value(pred);
        let share = chunk.len() as f64;
        loss_sum += share
            * crate::objectives::loss(
                p,
                &batch.targets[0],
                &task.loss,
                loss_weights(&task.loss, &weights),
            )?;
        mse_sum += share * crate::objectives::loss(p, &batch.targets[0], &mse_cfg, None)?;
    }
    let total = windows.len() as f64;
    Ok(Some((loss_sum / total, mse_sum / total)))
}

/// Shared optimization loop: AdamW with a fresh cosine schedule over
/// `epochs * steps_per_epoch` steps. `batch_loss` records the loss of one
/// batch given the zero-based epoch; `after_epoch` runs once per epoch.
#[allow(clippy::too_many_arguments)]
pub(crate) fn optimize<N, L, E>(
    net: &mut N,
    series: &WeatherSeries,
    windows: &[SampleWindow],
    n_targets: usize,
    stride: usize,
    optim: &OptimConfig,
    epochs: usize,
    mut batch_loss: L,
    mut after_epoch: E,
) -> Result<TrainReport>
where
    N: Network + ?Sized,
    L: FnMut(&mut Tape, &N, Batch, usize, &mut SeededRng) -> Result<Var>,
    E: FnMut(&N, &mut TrainReport) -> Result<()>,
{
    let steps_per_epoch = windows.len().div_ceil(optim.batch_size);
    let total = steps_per_epoch * epochs;
    let mut opt = AdamW::new(net.params(), optim.weight_decay);
    let mut rng = seeded(derive_seed(optim.seed, u64::MAX));
    let mut report = TrainReport {
        steps_per_epoch,
        ..Default::default()
    };
    for epoch in 0..epochs {
        for chunk in epoch_batches(windows, optim.batch_size, optim.seed, epoch) {
            let batch = Batch::gather(series, &chunk, n_targets, stride);
            let step = report.loss_history.len();
            let mut tape = Tape::new();
            let loss = match batch_loss(&mut tape, net, batch, epoch, &mut rng) {
                Ok(l) => l,
                Err(CoreError::NonFinite(_)) => {
                    return Err(CoreError::Divergence {
                        step,
                        loss: f64::NAN,
                        last_finite: report.loss_history.last().copied(),
                    })
                }
                Err(e) => return Err(e),
            };
            let value = tape.value(loss).item();
            check_finite(value, step, &report.loss_history)?;
            let grads = tape.backward(loss);
            opt.step(net.params_mut(), &grads, cosine_lr(step, total, optim.lr)?);
            report.loss_history.push(value);
        }
        after_epoch(net, &mut report)?;
        if let Some(last) = report.epoch_means().last() {
            log::debug!("epoch {epoch}: mean loss {last:.6}");
        }
    }
    Ok(report)
}

/// Single-step supervised training with AdamW and a cosine schedule over
/// all optimizer steps. The loss history has `epochs * steps_per_epoch`
/// entries.
pub fn train<N: Network + ?Sized>(
    net: &mut N,
    data: &TrainData<'_>,
    task: &TaskConfig,
    optim: &OptimConfig,
) -> Result<TrainReport> {
    optim.validate()?;
    task.loss.validate()?;
    task.noise.validate()?;
    let windows = training_windows(
        data.train.clone(),
        data.assembler.n_steps(),
        task.stride_steps,
    )?;
    let weights = data.series.grid.quadrature_weights()?;
    optimize(
        net,
        data.series,
        &windows,
        1,
        task.stride_steps,
        optim,
        optim.epochs,
        |tape, net, batch, _, rng| {
            let batch = batch.perturbed(&task.noise, rng)?;
            let window: Vec<Var> = batch
                .inputs
                .iter()
                .map(|x| tape.constant(x.clone()))
                .collect();
            let pred = predict_var(
                tape,
                net,
                data.assembler,
                &window,
                &batch.last_times,
                task.formulation,
            )?;
            tape.loss(
                pred,
                &batch.targets[0],
                &task.loss,
                loss_weights(&task.loss, &weights),
            )
        },
        |net, report| {
            if let Some((vl, vm)) = validate(net, data, task, optim.batch_size)? {
                log::info!("val loss {vl:.6}, val mse {vm:.6}");
                report.val_loss.push(vl);
                report.val_mse.push(vm);
            }
            Ok(())
        },
    )
}

/// Uniform draw used to pick masked channels.
pub(crate) fn choose<R: Rng + ?Sized>(rng: &mut R, count: usize, total: usize) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(rng);
    let mut mask = alloc::vec![false; total];
    for &i in &idx[..count] {
        mask[i] = true;
    }
    mask
}
