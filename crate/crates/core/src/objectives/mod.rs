//! Training losses and evaluation metrics.
//!
//! Tensors are `[B, C, H, W]` (a rank-3 `[C, H, W]` field counts as a batch
//! of one). Losses average over `C`, `H`, `W` and then over the batch. The
//! geometric variants multiply every row `h` by its quadrature weight
//! `w(h)` before averaging.

mod loss;
mod metrics;

pub use loss::{loss, loss_and_grad, masked_loss_and_grad, LossConfig, LossKind};
pub use metrics::{
    metric_acc, metric_rmse, subtract_climatology, ChannelMetric, MetricReport, MetricRow,
};

use crate::tensor::Tensor;
use crate::{CoreError, Result};

/// `(B, C, H, W)` of a rank-3 or rank-4 tensor.
pub(crate) fn bchw(t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((1, c, h, w)),
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(CoreError::shape(
            "field tensor (rank 3 or 4)",
            &[0, 0, 0, 0],
            t.shape(),
        )),
    }
}
