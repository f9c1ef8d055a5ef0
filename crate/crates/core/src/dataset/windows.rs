use alloc::vec::Vec;
use core::ops::Range;

use crate::{CoreError, Result};

/// `n_inputs` consecutive input steps followed by a target `horizon` steps
/// after the last input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleWindow {
    pub start: usize,
    pub n_inputs: usize,
    pub horizon: usize,
}

impl SampleWindow {
    pub fn inputs(&self) -> Range<usize> {
        self.start..self.start + self.n_inputs
    }

    pub fn last_input(&self) -> usize {
        self.start + self.n_inputs - 1
    }

    pub fn target(&self) -> usize {
        self.last_input() + self.horizon
    }

    /// Target of autoregressive step `k` (1-based) for a model that advances
    /// `horizon` dataset steps per call.
    pub fn rollout_target(&self, k: usize) -> usize {
        self.last_input() + k * self.horizon
    }
}

/// Every valid window over a series of `n_times` steps, in time order.
///
/// There are `n_times - (n_inputs - 1) - horizon` of them.
pub fn make_windows(n_times: usize, n_inputs: usize, horizon: usize) -> Result<Vec<SampleWindow>> {
    windows_in(0..n_times, n_inputs, horizon)
}

/// Windows whose inputs and target all fall inside `range`.
pub fn windows_in(
    range: Range<usize>,
    n_inputs: usize,
    horizon: usize,
) -> Result<Vec<SampleWindow>> {
    if n_inputs == 0 || horizon == 0 {
        return Err(CoreError::InvalidConfig(
            "windows need at least one input step and a positive horizon".into(),
        ));
    }
    let needed = n_inputs - 1 + horizon + 1;
    if range.len() < needed {
        return Err(CoreError::InsufficientLength {
            needed,
            available: range.len(),
        });
    }
    Ok((range.start..=range.end - needed)
        .map(|start| SampleWindow {
            start,
            n_inputs,
            horizon,
        })
        .collect())
}
