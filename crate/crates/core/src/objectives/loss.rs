use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::bchw;
use crate::tensor::Tensor;
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LossKind {
    Mse,
    L1,
    Huber,
    GeoMse,
    GeoL1,
    L1L2,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Mse,
        LossKind::L1,
        LossKind::Huber,
        LossKind::GeoMse,
        LossKind::GeoL1,
        LossKind::L1L2,
    ];

    pub fn is_geometric(self) -> bool {
        matches!(self, LossKind::GeoMse | LossKind::GeoL1)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::L1 => "l1",
            LossKind::Huber => "huber",
            LossKind::GeoMse => "geo_mse",
            LossKind::GeoL1 => "geo_l1",
            LossKind::L1L2 => "l1_l2",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CoreError::UnknownKind {
                what: "loss kind",
                name: s.into(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct LossConfig {
    pub kind: LossKind,
    /// Huber threshold in normalized units.
    #[cfg_attr(feature = "serde", serde(default = "default_huber_delta"))]
    pub huber_delta: f64,
    /// Weight of the L1 term in `l1_l2`; the squared term gets the rest.
    #[cfg_attr(feature = "serde", serde(default = "default_l1_weight"))]
    pub l1_weight: f64,
}

#[cfg(feature = "serde")]
fn default_huber_delta() -> f64 {
    1.0
}

#[cfg(feature = "serde")]
fn default_l1_weight() -> f64 {
    0.05
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        LossConfig {
            kind,
            huber_delta: 1.0,
            l1_weight: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.huber_delta > 0.0 && self.huber_delta.is_finite()) {
            return Err(CoreError::InvalidConfig(
                "huber_delta must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.l1_weight) {
            return Err(CoreError::InvalidConfig(
                "l1_weight must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Per-element penalty and its derivative with respect to the error.
#[derive(Clone, Copy)]
enum Penalty {
    Squared,
    Absolute,
    Huber(f64),
}

impl Penalty {
    #[inline]
    fn eval(self, e: f64) -> (f64, f64) {
        match self {
            Penalty::Squared => (e * e, 2.0 * e),
            Penalty::Absolute => (e.abs(), sign(e)),
            Penalty::Huber(delta) => {
                if e.abs() <= delta {
                    (0.5 * e * e, e)
                } else {
                    (delta * (e.abs() - 0.5 * delta), delta * sign(e))
                }
            }
        }
    }
}

#[inline]
fn sign(e: f64) -> f64 {
    if e > 0.0 {
        1.0
    } else if e < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Which `(b, c)` slices count; `None` means all of them.
type ChannelSelection<'a> = Option<&'a [Vec<bool>]>;

fn check_inputs(
    pred: &Tensor,
    target: &Tensor,
    weights: Option<&[f64]>,
    geometric: bool,
) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(CoreError::shape("loss", target.shape(), pred.shape()));
    }
    let (_, _, h, _) = bchw(pred)?;
    if !pred.is_finite() {
        return Err(CoreError::NonFinite("loss prediction".into()));
    }
    if !target.is_finite() {
        return Err(CoreError::NonFinite("loss target".into()));
    }
    match weights {
        Some(w) if w.len() != h => Err(CoreError::shape("quadrature weights", &[h], &[w.len()])),
        None if geometric => Err(CoreError::InvalidConfig(
            "geometric loss requires quadrature weights".into(),
        )),
        _ => Ok(()),
    }
}

/// Mean of `row_weight * penalty(e)` over selected elements, averaged over
/// the batch, plus its gradient with respect to `pred`.
fn reduce(
    pred: &Tensor,
    target: &Tensor,
    penalty: Penalty,
    row_weights: Option<&[f64]>,
    selection: ChannelSelection<'_>,
) -> Result<(f64, Tensor)> {
    let (b, c, h, w) = bchw(pred)?;
    let mut grad = Tensor::zeros(pred.shape());
    let p = pred.data();
    let t = target.data();
    let g = grad.data_mut();
    let mut total = 0.0;
    for bi in 0..b {
        let count = match selection {
            Some(sel) => sel[bi].iter().filter(|&&m| m).count(),
            None => c,
        };
        if count == 0 {
            return Err(CoreError::InvalidConfig("loss selects no channel".into()));
        }
        let norm = 1.0 / (b as f64 * (count * h * w) as f64);
        let mut sample = 0.0;
        for ci in 0..c {
            if let Some(sel) = selection {
                if !sel[bi][ci] {
                    continue;
                }
            }
            for hi in 0..h {
                let rw = row_weights.map_or(1.0, |r| r[hi]);
                let base = ((bi * c + ci) * h + hi) * w;
                let mut row = 0.0;
                for k in base..base + w {
                    let (v, d) = penalty.eval(p[k] - t[k]);
                    row += v;
                    g[k] = rw * d * norm;
                }
                sample += rw * row;
            }
        }
        total += sample * norm;
    }
    Ok((total, grad))
}

fn evaluate(
    pred: &Tensor,
    target: &Tensor,
    cfg: &LossConfig,
    weights: Option<&[f64]>,
    selection: ChannelSelection<'_>,
) -> Result<(f64, Tensor)> {
    cfg.validate()?;
    check_inputs(pred, target, weights, cfg.kind.is_geometric())?;
    match cfg.kind {
        LossKind::Mse => reduce(pred, target, Penalty::Squared, None, selection),
        LossKind::L1 => reduce(pred, target, Penalty::Absolute, None, selection),
        LossKind::Huber => reduce(
            pred,
            target,
            Penalty::Huber(cfg.huber_delta),
            None,
            selection,
        ),
        LossKind::GeoMse => reduce(pred, target, Penalty::Squared, weights, selection),
        LossKind::GeoL1 => reduce(pred, target, Penalty::Absolute, weights, selection),
        LossKind::L1L2 => {
            let (l1, g1) = reduce(pred, target, Penalty::Absolute, None, selection)?;
            let (l2, g2) = reduce(pred, target, Penalty::Squared, None, selection)?;
            let a = cfg.l1_weight;
            let grad = g1.zip_map(&g2, |x, y| a * x + (1.0 - a) * y)?;
            Ok((a * l1 + (1.0 - a) * l2, grad))
        }
    }
}

/// Scalar loss of `pred` against `target`.
pub fn loss(
    pred: &Tensor,
    target: &Tensor,
    cfg: &LossConfig,
    weights: Option<&[f64]>,
) -> Result<f64> {
    evaluate(pred, target, cfg, weights, None).map(|(v, _)| v)
}

/// Loss and its gradient with respect to `pred`.
pub fn loss_and_grad(
    pred: &Tensor,
    target: &Tensor,
    cfg: &LossConfig,
    weights: Option<&[f64]>,
) -> Result<(f64, Tensor)> {
    evaluate(pred, target, cfg, weights, None)
}

/// Loss restricted to the channels flagged in `mask[b][c]`, averaged over
/// the selected channels of each sample. Unselected channels get exactly
/// zero gradient.
pub fn masked_loss_and_grad(
    pred: &Tensor,
    target: &Tensor,
    cfg: &LossConfig,
    weights: Option<&[f64]>,
    mask: &[Vec<bool>],
) -> Result<(f64, Tensor)> {
    let (b, c, _, _) = bchw(pred)?;
    if mask.len() != b || mask.iter().any(|m| m.len() != c) {
        return Err(CoreError::shape("channel mask", &[b, c], &[mask.len()]));
    }
    evaluate(pred, target, cfg, weights, Some(mask))
}
