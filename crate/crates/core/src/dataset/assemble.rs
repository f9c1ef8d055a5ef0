use alloc::vec::Vec;

use crate::math;
use crate::sphere::time::Timestamp;
use crate::sphere::{solar_zenith_cos, GridSpec, StaticChannelSet, STD_EPSILON};
use crate::tensor::Tensor;
use crate::{CoreError, Result};

/// Which non-predicted channels are appended to the stacked dynamic steps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExtrasConfig {
    /// Cosine of the solar zenith angle at the last input step.
    pub zenith: bool,
    /// Unit-sphere `x, y, z` of every grid point.
    pub coords: bool,
    /// Standardized constant masks; empty for none.
    pub masks: StaticChannelSet,
}

impl ExtrasConfig {
    pub fn count(&self) -> usize {
        usize::from(self.zenith) + if self.coords { 3 } else { 0 } + self.masks.len()
    }
}

/// Stacks `n` dynamic steps (oldest first) and appends the extras once.
///
/// Channel layout of the result:
/// `[step_0 (C) | ... | step_{n-1} (C) | zenith? | coords_xyz? | masks]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputAssembler {
    grid: GridSpec,
    channels: usize,
    n_steps: usize,
    zenith: bool,
    zenith_mean: f64,
    zenith_std: f64,
    /// Coordinates then masks, each `H x W`.
    statics: Vec<f64>,
    n_statics: usize,
}

impl InputAssembler {
    pub fn new(
        grid: GridSpec,
        channels: usize,
        n_steps: usize,
        extras: &ExtrasConfig,
    ) -> Result<Self> {
        if channels == 0 || n_steps == 0 {
            return Err(CoreError::InvalidConfig(
                "assembler needs channels and input steps".into(),
            ));
        }
        let hw = grid.points();
        let mut set = if extras.coords {
            StaticChannelSet::coordinates(&grid)
        } else {
            StaticChannelSet::default()
        };
        set.extend(extras.masks.clone());
        let mut statics = Vec::with_capacity(set.len() * hw);
        for f in &set.fields {
            if f.data.len() != hw {
                return Err(CoreError::ShapeMismatch {
                    context: alloc::format!("static field `{}`", f.name),
                    expected: alloc::vec![grid.n_lat(), grid.n_lon()],
                    found: alloc::vec![f.data.len()],
                });
            }
            statics.extend_from_slice(&f.data);
        }
        Ok(InputAssembler {
            grid,
            channels,
            n_steps,
            zenith: extras.zenith,
            zenith_mean: 0.0,
            zenith_std: 1.0,
            statics,
            n_statics: set.len(),
        })
    }

    /// Standardizes the zenith channel with the given stats.
    pub fn with_zenith_stats(mut self, mean: f64, std: f64) -> Self {
        self.zenith_mean = mean;
        self.zenith_std = std.max(STD_EPSILON);
        self
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Predicted channels `C`.
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn uses_zenith(&self) -> bool {
        self.zenith
    }

    pub fn n_extras(&self) -> usize {
        usize::from(self.zenith) + self.n_statics
    }

    /// `n * C + extras`.
    pub fn input_channels(&self) -> usize {
        self.n_steps * self.channels + self.n_extras()
    }

    /// `[B, E, H, W]` extras for a batch whose last input steps are at
    /// `last_times`; `None` when no extras are configured.
    pub fn extras(&self, batch: usize, last_times: &[Timestamp]) -> Result<Option<Tensor>> {
        let e = self.n_extras();
        if e == 0 {
            return Ok(None);
        }
        if self.zenith {
            if last_times.is_empty() {
                return Err(CoreError::MissingTimestamp);
            }
            if last_times.len() != batch {
                return Err(CoreError::shape(
                    "zenith timestamps",
                    &[batch],
                    &[last_times.len()],
                ));
            }
        }
        let hw = self.grid.points();
        let mut data = Vec::with_capacity(batch * e * hw);
        for b in 0..batch {
            if self.zenith {
                let z = solar_zenith_cos(&self.grid, last_times[b]);
                data.extend(
                    z.data()
                        .iter()
                        .map(|v| (v - self.zenith_mean) / self.zenith_std),
                );
            }
            data.extend_from_slice(&self.statics);
        }
        Tensor::from_vec(&[batch, e, self.grid.n_lat(), self.grid.n_lon()], data).map(Some)
    }

    /// Stacks `steps` (each `[B, C, H, W]`, oldest first) and the extras
    /// into `[B, C_in, H, W]`.
    pub fn assemble(&self, steps: &[Tensor], last_times: &[Timestamp]) -> Result<Tensor> {
        if steps.len() != self.n_steps {
            return Err(CoreError::shape(
                "input steps",
                &[self.n_steps],
                &[steps.len()],
            ));
        }
        let batch = steps[0].shape().first().copied().unwrap_or(0);
        let expected = [batch, self.channels, self.grid.n_lat(), self.grid.n_lon()];
        for s in steps {
            s.ensure_shape("input step", &expected)?;
        }
        let extras = self.extras(batch, last_times)?;
        let mut parts: Vec<&Tensor> = steps.iter().collect();
        if let Some(x) = &extras {
            parts.push(x);
        }
        Tensor::concat_channels(&parts)
    }
}

/// Mean and (guarded) std of the zenith channel over `times` and the grid.
pub fn zenith_stats(grid: &GridSpec, times: &[Timestamp]) -> (f64, f64) {
    if times.is_empty() {
        return (0.0, 1.0);
    }
    let mut sum = 0.0;
    let mut sq = 0.0;
    for &t in times {
        for v in solar_zenith_cos(grid, t).data() {
            sum += v;
            sq += v * v;
        }
    }
    let n = (times.len() * grid.points()) as f64;
    let mean = sum / n;
    let std = math::sqrt((sq / n - mean * mean).max(0.0)).max(STD_EPSILON);
    (mean, std)
}
