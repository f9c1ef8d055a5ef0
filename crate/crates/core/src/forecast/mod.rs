//! Direct and residual one-step prediction, autoregressive rollout and
//! horizon-wise evaluation.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;
use core::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::dataset::{InputAssembler, WeatherSeries};
use crate::models::{Network, Operator};
use crate::objectives::{metric_acc, metric_rmse, MetricReport};
use crate::sphere::time::Timestamp;
use crate::tensor::Tensor;
use crate::{CoreError, Result};

/// What the network output means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Formulation {
    /// The output is the next state.
    Direct,
    /// The output is added to the newest input state.
    Delta,
}

impl Formulation {
    pub fn name(self) -> &'static str {
        match self {
            Formulation::Direct => "direct",
            Formulation::Delta => "delta",
        }
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Formulation {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Formulation::Direct),
            "delta" => Ok(Formulation::Delta),
            _ => Err(CoreError::UnknownKind {
                what: "formulation",
                name: s.into(),
            }),
        }
    }
}

/// Next state from an assembled input batch and the newest state in it.
pub fn step<O: Operator + ?Sized>(
    model: &O,
    input: &Tensor,
    last_state: &Tensor,
    formulation: Formulation,
) -> Result<Tensor> {
    let out = model.apply(input)?;
    if out.shape() != last_state.shape() {
        return Err(CoreError::shape(
            "model output",
            last_state.shape(),
            out.shape(),
        ));
    }
    match formulation {
        Formulation::Direct => Ok(out),
        Formulation::Delta => last_state.add(&out),
    }
}

/// [`step`] recorded on a tape, for training through rollouts.
pub fn step_var<N: Network + ?Sized>(
    tape: &mut Tape,
    net: &N,
    input: Var,
    last_state: Var,
    formulation: Formulation,
) -> Result<Var> {
    let out = net.forward(tape, input)?;
    if tape.value(out).shape() != tape.value(last_state).shape() {
        return Err(CoreError::shape(
            "model output",
            tape.value(last_state).shape(),
            tape.value(out).shape(),
        ));
    }
    match formulation {
        Formulation::Direct => Ok(out),
        Formulation::Delta => tape.add(last_state, out),
    }
}

/// Predicted states of one autoregressive rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// `[C, H, W]` per step, step 1 first.
    pub states: Vec<Tensor>,
    /// Valid time of every state.
    pub timestamps: Vec<Timestamp>,
}

impl RolloutResult {
    /// Metrics of every step against `targets` (same length as `states`).
    pub fn score(
        &self,
        targets: &[Tensor],
        weights: &[f64],
        channels: &[String],
    ) -> Result<Vec<MetricReport>> {
        if targets.len() != self.states.len() {
            return Err(CoreError::shape(
                "rollout targets",
                &[self.states.len()],
                &[targets.len()],
            ));
        }
        self.states
            .iter()
            .zip(targets)
            .enumerate()
            .map(|(j, (p, y))| {
                Ok(MetricReport::new(
                    j + 1,
                    channels.to_vec(),
                    metric_acc(p, y, weights)?,
                    metric_rmse(p, y, weights)?,
                ))
            })
            .collect()
    }
}

/// Fixed ingredients of a rollout.
#[derive(Debug, Clone, Copy)]
pub struct RolloutPlan<'a> {
    pub assembler: &'a InputAssembler,
    pub formulation: Formulation,
    /// Time advanced by one model call.
    pub stride_seconds: i64,
}

/// Rolls `model` forward `steps` times from `history` (`n` states of
/// shape `[C, H, W]`, oldest first, the newest valid at `last_time`).
///
/// Every step re-assembles the input: the window drops its oldest state
/// and appends the prediction, the zenith channel is recomputed for the
/// newest state's time and static channels are re-attached unchanged.
pub fn rollout<O: Operator + ?Sized>(
    model: &O,
    plan: RolloutPlan<'_>,
    history: &[Tensor],
    last_time: Timestamp,
    steps: usize,
) -> Result<RolloutResult> {
    rollout_inspected(model, plan, history, last_time, steps, &mut |_, _| {})
}

/// [`rollout`] that shows every assembled input to `inspect` first.
pub fn rollout_inspected<O: Operator + ?Sized>(
    model: &O,
    plan: RolloutPlan<'_>,
    history: &[Tensor],
    last_time: Timestamp,
    steps: usize,
    inspect: &mut dyn FnMut(usize, &Tensor),
) -> Result<RolloutResult> {
    let asm = plan.assembler;
    if steps == 0 {
        return Err(CoreError::InvalidConfig(
            "rollout needs at least one step".into(),
        ));
    }
    if history.len() != asm.n_steps() {
        return Err(CoreError::shape(
            "rollout history",
            &[asm.n_steps()],
            &[history.len()],
        ));
    }
    let mut window: Vec<Tensor> = history
        .iter()
        .map(|s| {
            let mut shape = alloc::vec![1];
            shape.extend_from_slice(s.shape());
            s.clone().reshape(&shape)
        })
        .collect::<Result<_>>()?;
    let mut time = last_time;
    let mut states = Vec::with_capacity(steps);
    let mut timestamps = Vec::with_capacity(steps);
    for j in 0..steps {
        let input = asm.assemble(&window, &[time])?;
        inspect(j, &input);
        let last = window.last().expect("non-empty window");
        let next = step(model, &input, last, plan.formulation)?;
        time = time
            .checked_add(plan.stride_seconds)
            .ok_or(CoreError::TimestampOverflow)?;
        states.push(next.index_first(0));
        timestamps.push(time);
        window.remove(0);
        window.push(next);
    }
    Ok(RolloutResult { states, timestamps })
}

/// Evaluation settings over a series.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonEval {
    /// Rollout lengths (in model steps) to score.
    pub horizons: Vec<usize>,
    /// Dataset steps advanced by one model call.
    pub stride_steps: usize,
    /// Time indices initial conditions and targets must lie in.
    pub range: Range<usize>,
    /// Upper bound on initial conditions, taken evenly spaced.
    pub max_initial_conditions: Option<usize>,
}

/// Scores rollouts from every initial condition in `eval.range` at each
/// horizon and averages over initial conditions.
pub fn evaluate_horizons<O: Operator + ?Sized>(
    model: &O,
    series: &WeatherSeries,
    assembler: &InputAssembler,
    formulation: Formulation,
    eval: &HorizonEval,
) -> Result<Vec<MetricReport>> {
    let longest = eval.horizons.iter().copied().max().unwrap_or(0);
    if longest == 0 || eval.stride_steps == 0 {
        return Err(CoreError::InvalidConfig(
            "horizons and stride must be positive".into(),
        ));
    }
    let n = assembler.n_steps();
    let reach = n - 1 + longest * eval.stride_steps;
    if eval.range.end > series.n_times() || eval.range.len() <= reach {
        return Err(CoreError::EmptySplit(alloc::format!(
            "evaluation range {:?} cannot hold a rollout of {longest} steps",
            eval.range
        )));
    }
    let mut starts: Vec<usize> = (eval.range.start..eval.range.end - reach).collect();
    if let Some(limit) = eval.max_initial_conditions {
        if limit > 0 && starts.len() > limit {
            let stride = starts.len() as f64 / limit as f64;
            starts = (0..limit)
                .map(|i| starts[(i as f64 * stride) as usize])
                .collect();
        }
    }
    let weights = series.grid.quadrature_weights()?;
    let plan = RolloutPlan {
        assembler,
        formulation,
        stride_seconds: series.dt_seconds() * eval.stride_steps as i64,
    };
    let mut per_horizon: Vec<Vec<MetricReport>> = alloc::vec![Vec::new(); eval.horizons.len()];
    for &s in &starts {
        let history: Vec<Tensor> = (s..s + n).map(|t| series.frame(t)).collect();
        let last = s + n - 1;
        let result = rollout(model, plan, &history, series.timestamps[last], longest)?;
        for (hi, &h) in eval.horizons.iter().enumerate() {
            let target = series.frame(last + h * eval.stride_steps);
            let pred = &result.states[h - 1];
            per_horizon[hi].push(MetricReport::new(
                h,
                series.schema.names.clone(),
                metric_acc(pred, &target, &weights)?,
                metric_rmse(pred, &target, &weights)?,
            ));
        }
    }
    Ok(per_horizon
        .iter()
        .map(|r| MetricReport::average(r).expect("at least one initial condition"))
        .collect())
}
