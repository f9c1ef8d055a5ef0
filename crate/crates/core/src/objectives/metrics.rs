use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::bchw;
use crate::math;
use crate::tensor::Tensor;
use crate::{CoreError, Result};

/// Per-channel values and their mean over the defined channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMetric {
    /// `None` marks a channel where the metric is undefined.
    pub per_channel: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

impl ChannelMetric {
    fn from_values(per_channel: Vec<Option<f64>>) -> Self {
        let defined: Vec<f64> = per_channel.iter().flatten().copied().collect();
        let mean = if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        };
        ChannelMetric { per_channel, mean }
    }
}

fn check(pred: &Tensor, target: &Tensor, weights: &[f64]) -> Result<(usize, usize, usize)> {
    if pred.shape() != target.shape() {
        return Err(CoreError::shape("metric", target.shape(), pred.shape()));
    }
    let (b, c, h, w) = bchw(pred)?;
    if b != 1 {
        return Err(CoreError::shape("metric field", &[c, h, w], pred.shape()));
    }
    if weights.len() != h {
        return Err(CoreError::shape(
            "quadrature weights",
            &[h],
            &[weights.len()],
        ));
    }
    Ok((c, h, w))
}

/// `(1/(H W)) sum_h w(h) sum_w a * b` for one channel slice.
fn weighted_inner(a: &[f64], b: &[f64], weights: &[f64], w: usize) -> f64 {
    let hw = a.len() as f64;
    let mut acc = 0.0;
    for (hi, &wt) in weights.iter().enumerate() {
        let row: f64 = a[hi * w..(hi + 1) * w]
            .iter()
            .zip(&b[hi * w..(hi + 1) * w])
            .map(|(x, y)| x * y)
            .sum();
        acc += wt * row;
    }
    acc / hw
}

/// Latitude-weighted anomaly correlation, channel by channel.
///
/// Inputs are taken as anomalies already (normalized fields); see
/// [`subtract_climatology`] for the optional climatology correction.
pub fn metric_acc(pred: &Tensor, target: &Tensor, weights: &[f64]) -> Result<ChannelMetric> {
    let (c, h, w) = check(pred, target, weights)?;
    let hw = h * w;
    let values = (0..c)
        .map(|ci| {
            let p = &pred.data()[ci * hw..(ci + 1) * hw];
            let y = &target.data()[ci * hw..(ci + 1) * hw];
            let num = weighted_inner(p, y, weights, w);
            let den = math::sqrt(weighted_inner(p, p, weights, w))
                * math::sqrt(weighted_inner(y, y, weights, w));
            if den > 0.0 && den.is_finite() {
                Some((num / den).clamp(-1.0, 1.0))
            } else {
                log::warn!("ACC undefined for channel {ci}: zero weighted norm");
                None
            }
        })
        .collect();
    Ok(ChannelMetric::from_values(values))
}

/// Latitude-weighted RMSE per channel, averaged over channels afterwards.
pub fn metric_rmse(pred: &Tensor, target: &Tensor, weights: &[f64]) -> Result<ChannelMetric> {
    let (c, h, w) = check(pred, target, weights)?;
    let hw = h * w;
    let values = (0..c)
        .map(|ci| {
            let p = &pred.data()[ci * hw..(ci + 1) * hw];
            let y = &target.data()[ci * hw..(ci + 1) * hw];
            let d: Vec<f64> = p.iter().zip(y).map(|(a, b)| a - b).collect();
            Some(math::sqrt(weighted_inner(&d, &d, weights, w).max(0.0)))
        })
        .collect();
    Ok(ChannelMetric::from_values(values))
}

/// Subtracts a per-channel climatology value from a `[C, H, W]` field.
pub fn subtract_climatology(field: &Tensor, climatology: &[f64]) -> Result<Tensor> {
    let (_, c, h, w) = bchw(field)?;
    if climatology.len() != c {
        return Err(CoreError::shape("climatology", &[c], &[climatology.len()]));
    }
    let mut out = field.clone();
    for (k, v) in out.data_mut().iter_mut().enumerate() {
        *v -= climatology[(k / (h * w)) % c];
    }
    Ok(out)
}

/// Metrics of one rollout horizon, per channel and channel-averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub horizon_steps: usize,
    pub channels: Vec<String>,
    pub acc: Vec<Option<f64>>,
    pub rmse: Vec<f64>,
    pub acc_mean: Option<f64>,
    pub rmse_mean: f64,
}

/// One CSV row of a metric table; `channel == "MEAN"` for aggregates.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricRow {
    pub run_id: String,
    pub horizon_steps: usize,
    pub channel: String,
    pub acc: Option<f64>,
    pub rmse: f64,
}

impl MetricReport {
    pub const AGGREGATE: &'static str = "MEAN";

    pub fn new(
        horizon_steps: usize,
        channels: Vec<String>,
        acc: ChannelMetric,
        rmse: ChannelMetric,
    ) -> Self {
        MetricReport {
            horizon_steps,
            channels,
            acc: acc.per_channel,
            rmse: rmse
                .per_channel
                .into_iter()
                .map(|v| v.unwrap_or(f64::NAN))
                .collect(),
            acc_mean: acc.mean,
            rmse_mean: rmse.mean.unwrap_or(f64::NAN),
        }
    }

    /// Averages reports of the same horizon (one per initial condition).
    /// Undefined ACC entries are skipped per channel.
    pub fn average(reports: &[MetricReport]) -> Option<MetricReport> {
        let first = reports.first()?;
        let c = first.channels.len();
        let n = reports.len() as f64;
        let mut acc = Vec::with_capacity(c);
        let mut rmse = Vec::with_capacity(c);
        for ci in 0..c {
            let defined: Vec<f64> = reports.iter().filter_map(|r| r.acc[ci]).collect();
            acc.push(if defined.is_empty() {
                None
            } else {
                Some(defined.iter().sum::<f64>() / defined.len() as f64)
            });
            rmse.push(reports.iter().map(|r| r.rmse[ci]).sum::<f64>() / n);
        }
        let acc_metric = ChannelMetric::from_values(acc);
        let rmse_metric = ChannelMetric::from_values(rmse.into_iter().map(Some).collect());
        Some(MetricReport::new(
            first.horizon_steps,
            first.channels.clone(),
            acc_metric,
            rmse_metric,
        ))
    }

    /// Per-channel rows followed by the aggregate row.
    pub fn rows(&self, run_id: &str) -> Vec<MetricRow> {
        let mut rows: Vec<MetricRow> = self
            .channels
            .iter()
            .enumerate()
            .map(|(ci, name)| MetricRow {
                run_id: run_id.to_string(),
                horizon_steps: self.horizon_steps,
                channel: name.clone(),
                acc: self.acc[ci],
                rmse: self.rmse[ci],
            })
            .collect();
        rows.push(MetricRow {
            run_id: run_id.to_string(),
            horizon_steps: self.horizon_steps,
            channel: Self::AGGREGATE.to_string(),
            acc: self.acc_mean,
            rmse: self.rmse_mean,
        });
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn field(v: Vec<f64>, c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(&[c, h, w], v).unwrap()
    }

    #[test]
    fn acc_anchors() {
        let y = field((0..16).map(|i| f64::from(i) - 7.3).collect(), 2, 2, 4);
        let wts = [0.8, 1.2];
        let same = metric_acc(&y, &y, &wts).unwrap();
        assert!(same
            .per_channel
            .iter()
            .all(|v| (v.unwrap() - 1.0).abs() < 1e-9));
        let neg = y.scale(-1.0);
        let anti = metric_acc(&neg, &y, &wts).unwrap();
        assert!((anti.mean.unwrap() + 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_channel_is_excluded() {
        let mut p = field(vec![1.0; 8], 2, 2, 2);
        for v in &mut p.data_mut()[..4] {
            *v = 0.0;
        }
        let m = metric_acc(&p, &field(vec![1.0; 8], 2, 2, 2), &[1.0, 1.0]).unwrap();
        assert_eq!(m.per_channel[0], None);
        assert_eq!(m.mean, Some(1.0));
    }

    #[test]
    fn rmse_of_constant_offset() {
        let y = field((0..12).map(f64::from).collect(), 1, 3, 4);
        let p = y.map(|v| v + 0.7);
        let w = crate::sphere::quadrature_weights(&[60.0, 0.0, -60.0]).unwrap();
        let r = metric_rmse(&p, &y, &w).unwrap();
        assert!((r.mean.unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(metric_rmse(&y, &y, &w).unwrap().mean, Some(0.0));
    }

    #[test]
    fn report_rows_have_aggregate() {
        let y = field(vec![1.0, 2.0, 3.0, 4.0], 2, 1, 2);
        let w = [1.0];
        let rep = MetricReport::new(
            3,
            vec!["a".into(), "b".into()],
            metric_acc(&y, &y, &w).unwrap(),
            metric_rmse(&y, &y, &w).unwrap(),
        );
        let rows = rep.rows("r");
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].channel, "MEAN");
    }

    #[test]
    fn climatology_hook() {
        let y = field(vec![1.0, 2.0, 3.0, 5.0], 2, 1, 2);
        let a = subtract_climatology(&y, &[1.5, 4.0]).unwrap();
        assert_eq!(a.data(), &[-0.5, 0.5, -1.0, 1.0]);
    }
}
