//! Time-indexed multi-channel fields, normalization, sample windows, input
//! assembly and synthetic stand-in datasets.

mod assemble;
mod synthetic;
mod windows;

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use crate::math;
use crate::sphere::time::Timestamp;
use crate::sphere::{GridSpec, STD_EPSILON};
use crate::tensor::Tensor;
use crate::{CoreError, Result};

pub use assemble::{zenith_stats, ExtrasConfig, InputAssembler};
pub use synthetic::{generate_synthetic, SyntheticKind, SyntheticRecipe};
pub use windows::{make_windows, windows_in, SampleWindow};

/// Ordered channel names with normalization stats.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChannelSchema {
    pub names: Vec<String>,
    /// Pressure level per channel; `None` for surface variables.
    pub levels: Vec<Option<f64>>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelSchema {
    /// Schema with identity stats.
    pub fn new(names: Vec<String>) -> Self {
        let c = names.len();
        ChannelSchema {
            names,
            levels: alloc::vec![None; c],
            mean: alloc::vec![0.0; c],
            std: alloc::vec![1.0; c],
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.names.len();
        if c == 0 {
            return Err(CoreError::InvalidConfig(
                "schema needs at least one channel".into(),
            ));
        }
        if self.levels.len() != c || self.mean.len() != c || self.std.len() != c {
            return Err(CoreError::InvalidConfig(
                "schema vectors differ in length".into(),
            ));
        }
        for (i, n) in self.names.iter().enumerate() {
            if self.names[..i].contains(n) {
                return Err(CoreError::InvalidConfig(alloc::format!(
                    "duplicate channel name `{n}`"
                )));
            }
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(CoreError::InvalidConfig(
                "channel std must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// `T x C x H x W` fields on a uniform time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherSeries {
    pub grid: GridSpec,
    pub schema: ChannelSchema,
    pub timestamps: Vec<Timestamp>,
    pub data: Vec<f64>,
}

impl WeatherSeries {
    pub fn new(
        grid: GridSpec,
        schema: ChannelSchema,
        timestamps: Vec<Timestamp>,
        data: Vec<f64>,
    ) -> Result<Self> {
        schema.validate()?;
        let frame = schema.len() * grid.points();
        if data.len() != timestamps.len() * frame {
            return Err(CoreError::ShapeMismatch {
                context: "series data".into(),
                expected: alloc::vec![timestamps.len(), schema.len(), grid.n_lat(), grid.n_lon()],
                found: alloc::vec![data.len()],
            });
        }
        if timestamps.windows(2).any(|p| p[1] <= p[0]) {
            return Err(CoreError::InvalidConfig(
                "timestamps must be strictly increasing".into(),
            ));
        }
        if timestamps.len() > 2 {
            let dt = timestamps[1] - timestamps[0];
            if timestamps.windows(2).any(|p| p[1] - p[0] != dt) {
                return Err(CoreError::InvalidConfig(
                    "timestamps must be uniformly spaced".into(),
                ));
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("series data".into()));
        }
        Ok(WeatherSeries {
            grid,
            schema,
            timestamps,
            data,
        })
    }

    pub fn n_times(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_channels(&self) -> usize {
        self.schema.len()
    }

    pub fn dims(&self) -> [usize; 4] {
        [
            self.n_times(),
            self.n_channels(),
            self.grid.n_lat(),
            self.grid.n_lon(),
        ]
    }

    /// Spacing of the time axis in seconds (0 for a single frame).
    pub fn dt_seconds(&self) -> i64 {
        if self.timestamps.len() < 2 {
            0
        } else {
            self.timestamps[1] - self.timestamps[0]
        }
    }

    fn frame_len(&self) -> usize {
        self.n_channels() * self.grid.points()
    }

    pub fn frame_slice(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    /// Frame `t` as a `[C, H, W]` tensor.
    pub fn frame(&self, t: usize) -> Tensor {
        Tensor::from_vec(
            &[self.n_channels(), self.grid.n_lat(), self.grid.n_lon()],
            self.frame_slice(t).to_vec(),
        )
        .expect("frame shape matches")
    }

    /// Frames `indices` stacked as `[B, C, H, W]`.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let n = self.frame_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &t in indices {
            data.extend_from_slice(self.frame_slice(t));
        }
        Tensor::from_vec(
            &[
                indices.len(),
                self.n_channels(),
                self.grid.n_lat(),
                self.grid.n_lon(),
            ],
            data,
        )
        .expect("batch shape matches")
    }

    /// Copy with every channel standardized by `stats`; the stats are
    /// recorded in the schema.
    pub fn normalized(&self, stats: &NormalizationStats) -> Result<WeatherSeries> {
        self.check_stats(stats)?;
        let hw = self.grid.points();
        let c = self.n_channels();
        let mut out = self.clone();
        for (k, v) in out.data.iter_mut().enumerate() {
            let ci = (k / hw) % c;
            *v = (*v - stats.mean[ci]) / stats.std[ci];
        }
        out.schema.mean = stats.mean.clone();
        out.schema.std = stats.std.clone();
        Ok(out)
    }

    /// Inverse of [`WeatherSeries::normalized`].
    pub fn denormalized(&self, stats: &NormalizationStats) -> Result<WeatherSeries> {
        self.check_stats(stats)?;
        let hw = self.grid.points();
        let c = self.n_channels();
        let mut out = self.clone();
        for (k, v) in out.data.iter_mut().enumerate() {
            let ci = (k / hw) % c;
            *v = *v * stats.std[ci] + stats.mean[ci];
        }
        Ok(out)
    }

    fn check_stats(&self, stats: &NormalizationStats) -> Result<()> {
        let c = self.n_channels();
        if stats.mean.len() != c || stats.std.len() != c {
            return Err(CoreError::shape(
                "normalization stats",
                &[c],
                &[stats.mean.len()],
            ));
        }
        Ok(())
    }

    pub fn stats(&self) -> NormalizationStats {
        NormalizationStats {
            mean: self.schema.mean.clone(),
            std: self.schema.std.clone(),
        }
    }
}

/// Per-channel mean and std over all times in `split`, lat and lon.
pub fn compute_normalization(
    series: &WeatherSeries,
    split: Range<usize>,
) -> Result<NormalizationStats> {
    if split.is_empty() || split.end > series.n_times() {
        return Err(CoreError::EmptySplit(alloc::format!(
            "normalization split {split:?} of {} steps",
            series.n_times()
        )));
    }
    let c = series.n_channels();
    let hw = series.grid.points();
    let count = (split.len() * hw) as f64;
    let mut mean = alloc::vec![0.0; c];
    let mut std = alloc::vec![0.0; c];
    for t in split.clone() {
        let frame = series.frame_slice(t);
        for ci in 0..c {
            mean[ci] += frame[ci * hw..(ci + 1) * hw].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    for t in split {
        let frame = series.frame_slice(t);
        for ci in 0..c {
            std[ci] += frame[ci * hw..(ci + 1) * hw]
                .iter()
                .map(|v| (v - mean[ci]) * (v - mean[ci]))
                .sum::<f64>();
        }
    }
    for (ci, s) in std.iter_mut().enumerate() {
        *s = math::sqrt(*s / count);
        if *s < STD_EPSILON {
            log::warn!(
                "channel `{}` is constant over the split; std guarded to {STD_EPSILON}",
                series.schema.names[ci]
            );
            *s = STD_EPSILON;
        }
    }
    Ok(NormalizationStats { mean, std })
}

/// Contiguous train/val/test blocks along time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    /// Splits `n_times` steps by fractions; the test block takes the rest.
    pub fn by_fraction(n_times: usize, train: f64, val: f64) -> Result<Splits> {
        if !(train > 0.0 && val >= 0.0 && train + val < 1.0) {
            return Err(CoreError::InvalidConfig(
                "split fractions must satisfy train > 0, val >= 0, train + val < 1".into(),
            ));
        }
        let n_train = math::floor(n_times as f64 * train) as usize;
        let n_val = math::floor(n_times as f64 * val) as usize;
        let splits = Splits {
            train: 0..n_train,
            val: n_train..n_train + n_val,
            test: n_train + n_val..n_times,
        };
        if splits.train.is_empty() || splits.test.is_empty() {
            return Err(CoreError::EmptySplit(alloc::format!(
                "{n_times} steps cannot be split"
            )));
        }
        Ok(splits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn series(values: Vec<f64>, t: usize, c: usize) -> WeatherSeries {
        let grid = GridSpec::equiangular(2, 2).unwrap();
        let names = (0..c).map(|i| alloc::format!("c{i}")).collect();
        let ts = (0..t as i64).map(|i| i * 3600).collect();
        WeatherSeries::new(grid, ChannelSchema::new(names), ts, values).unwrap()
    }

    #[test]
    fn constant_channel_is_guarded() {
        let s = series(vec![5.0; 8], 2, 1);
        let st = compute_normalization(&s, 0..2).unwrap();
        assert_eq!(st.mean, vec![5.0]);
        assert_eq!(st.std, vec![STD_EPSILON]);
    }

    #[test]
    fn normalization_identity_and_round_trip() {
        let values: Vec<f64> = (0..48).map(|i| f64::from(i * i % 17) * 3.1 - 7.0).collect();
        let s = series(values, 6, 2);
        let st = compute_normalization(&s, 0..6).unwrap();
        let n = s.normalized(&st).unwrap();
        let st2 = compute_normalization(&n, 0..6).unwrap();
        for c in 0..2 {
            assert!(st2.mean[c].abs() < 1e-6);
            assert!((st2.std[c] - 1.0).abs() < 1e-4);
        }
        let back = n.denormalized(&st).unwrap();
        for (a, b) in back.data.iter().zip(&s.data) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn empty_split_errors() {
        let s = series(vec![1.0; 8], 2, 1);
        assert!(matches!(
            compute_normalization(&s, 1..1),
            Err(CoreError::EmptySplit(_))
        ));
    }

    #[test]
    fn series_validation() {
        let grid = GridSpec::equiangular(2, 2).unwrap();
        let schema = ChannelSchema::new(vec!["a".into()]);
        assert!(
            WeatherSeries::new(grid.clone(), schema.clone(), vec![0, 10, 30], vec![0.0; 12])
                .is_err()
        );
        assert!(
            WeatherSeries::new(grid.clone(), schema.clone(), vec![0, 10], vec![0.0; 7]).is_err()
        );
        let dup = ChannelSchema::new(vec!["a".into(), "a".into()]);
        assert!(WeatherSeries::new(grid, dup, vec![0], vec![0.0; 8]).is_err());
    }

    #[test]
    fn fraction_splits_cover_the_series() {
        let s = Splits::by_fraction(20, 0.6, 0.2).unwrap();
        assert_eq!((s.train, s.val, s.test), (0..12, 12..16, 16..20));
        assert!(Splits::by_fraction(20, 0.9, 0.2).is_err());
    }
}
