//! Reverse-mode differentiation over a recorded tape of tensor operations.
//!
//! A [`Tape`] records every value produced during a forward pass together
//! with the operation that produced it. [`Tape::backward`] walks the record
//! in reverse and accumulates gradients. Operations only ever refer to
//! earlier entries, so the record is already in topological order.

mod kernels;

use alloc::vec;
use alloc::vec::Vec;

use crate::models::PaddingScheme;
use crate::objectives::{loss_and_grad, masked_loss_and_grad, LossConfig};
use crate::tensor::Tensor;
use crate::{CoreError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
    },
    ConvTranspose2 {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Pad {
        input: Var,
        map: Vec<Option<usize>>,
        plane: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    /// Elementwise product; the second operand may have batch size 1.
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Gelu(Var),
    GroupNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat(Vec<Var>),
    Slice {
        input: Var,
        start: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Gather {
        input: Var,
        index: Vec<usize>,
    },
    GroupMean {
        input: Var,
        k: usize,
    },
    GridToPoints(Var),
    PointsToGrid(Var),
    Loss {
        input: Var,
        grad: Tensor,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Option<Var>>,
}

/// Gradients of one scalar with respect to every recorded value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<Option<Var>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of parameter `index`, if the parameter took part.
    pub fn param(&self, index: usize) -> Option<&Tensor> {
        self.params
            .get(index)
            .copied()
            .flatten()
            .and_then(|v| self.get(v))
    }
}

fn batch_broadcast(a: &Tensor, b: &Tensor, context: &str) -> Result<bool> {
    if a.shape() == b.shape() {
        Ok(false)
    } else if b.shape().first() == Some(&1) && a.shape().get(1..) == b.shape().get(1..) {
        Ok(true)
    } else {
        Err(CoreError::shape(context, a.shape(), b.shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input that is not trained.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Parameter `index`, recorded once per tape and reused afterwards.
    pub fn param(&mut self, index: usize, value: &Tensor) -> Var {
        if let Some(Some(v)) = self.params.get(index) {
            return *v;
        }
        let v = self.push(value.clone(), Op::Param);
        if self.params.len() <= index {
            self.params.resize(index + 1, None);
        }
        self.params[index] = Some(v);
        v
    }

    /// Cross-correlation without padding; `weight` is `[Co, Ci, K, K]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        if x.ndim() != 4 || w.ndim() != 4 || x.shape()[1] != w.shape()[1] {
            return Err(CoreError::shape(
                "conv2d input",
                &[0, w.shape()[1], 0, 0],
                x.shape(),
            ));
        }
        if x.shape()[2] < w.shape()[2] || x.shape()[3] < w.shape()[3] || stride == 0 {
            return Err(CoreError::shape("conv2d spatial", w.shape(), x.shape()));
        }
        let out = kernels::conv2d(x, w, bias.map(|b| self.value(b)), stride);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
            },
        ))
    }

    /// 2x2 stride-2 transposed convolution; `weight` is `[Ci, Co, 2, 2]`.
    pub fn conv_transpose2(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        if x.ndim() != 4 || w.shape() != [x.shape()[1], w.shape()[1], 2, 2] {
            return Err(CoreError::shape(
                "transposed conv",
                &[x.shape()[1], 0, 2, 2],
                w.shape(),
            ));
        }
        let out = kernels::conv_transpose2(x, w, bias.map(|b| self.value(b)));
        Ok(self.push(
            out,
            Op::ConvTranspose2 {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Pads the last two axes by `(py, px)` per side.
    pub fn pad(&mut self, input: Var, scheme: PaddingScheme, py: usize, px: usize) -> Result<Var> {
        let x = self.value(input);
        let nd = x.ndim();
        let (h, w) = (x.shape()[nd - 2], x.shape()[nd - 1]);
        scheme.check(h, w, py, px)?;
        let map = kernels::pad_map(&scheme, h, w, py, px);
        let planes = x.len() / (h * w);
        let plane_out = map.len();
        let mut out = vec![0.0; planes * plane_out];
        for p in 0..planes {
            let src = &x.data()[p * h * w..(p + 1) * h * w];
            for (d, m) in out[p * plane_out..(p + 1) * plane_out].iter_mut().zip(&map) {
                if let Some(i) = m {
                    *d = src[*i];
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape[nd - 2] = h + 2 * py;
        shape[nd - 1] = w + 2 * px;
        let out = Tensor::from_vec(&shape, out)?;
        Ok(self.push(
            out,
            Op::Pad {
                input,
                map,
                plane: h * w,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product; `b` may have batch size 1 and is then shared
    /// across the batch of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let out = if batch_broadcast(x, y, "mul")? {
            let n = y.len();
            let data = x
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| v * y.data()[i % n])
                .collect();
            Tensor::from_vec(x.shape(), data)?
        } else {
            x.zip_map(y, |p, q| p * q)?
        };
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(kernels::gelu);
        self.push(out, Op::Gelu(a))
    }

    /// Group normalization of `[B, C, H, W]` with per-channel affine
    /// parameters.
    pub fn group_norm(&mut self, input: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let x = self.value(input);
        if x.ndim() != 4 || groups == 0 || x.shape()[1] % groups != 0 {
            return Err(CoreError::shape(
                "group norm",
                &[0, groups, 0, 0],
                x.shape(),
            ));
        }
        let c = x.shape()[1];
        let hw = x.shape()[2] * x.shape()[3];
        let (xhat, inv_std) = kernels::group_norm_stats(x, groups);
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let data = xhat
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let ci = (i / hw) % c;
                v * g[ci] + bt[ci]
            })
            .collect();
        let out = Tensor::from_vec(x.shape(), data)?;
        Ok(self.push(
            out,
            Op::GroupNorm {
                input,
                gamma,
                beta,
                groups,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|v| self.value(*v)).collect();
        let out = Tensor::concat_channels(&values)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(input);
        if x.ndim() < 2 || start + len > x.shape()[1] {
            return Err(CoreError::shape(
                "channel slice",
                &[0, start + len],
                x.shape(),
            ));
        }
        let out = x.slice_channels(start, len);
        Ok(self.push(out, Op::Slice { input, start }))
    }

    /// Pointwise affine map of `[B, N, F]` features with `[O, F]` weights.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        if x.ndim() != 3 || w.ndim() != 2 || x.shape()[2] != w.shape()[1] {
            return Err(CoreError::shape("linear", &[0, 0, w.shape()[1]], x.shape()));
        }
        let (b, n, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let o = w.shape()[0];
        let mut out = vec![0.0; b * n * o];
        let bias_v = bias.map(|v| self.value(v).data());
        for (row, dst) in x.data().chunks(f).zip(out.chunks_mut(o)) {
            for (k, d) in dst.iter_mut().enumerate() {
                let wr = &w.data()[k * f..(k + 1) * f];
                *d = row.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>()
                    + bias_v.map_or(0.0, |bv| bv[k]);
            }
        }
        let out = Tensor::from_vec(&[b, n, o], out)?;
        Ok(self.push(
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Rows `index` of the point axis of `[B, N, F]`.
    pub fn gather_points(&mut self, input: Var, index: &[usize]) -> Result<Var> {
        let x = self.value(input);
        let (b, n, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if index.iter().any(|&i| i >= n) {
            return Err(CoreError::shape("gather", &[n], &[index.len()]));
        }
        let mut out = Vec::with_capacity(b * index.len() * f);
        for bi in 0..b {
            for &i in index {
                out.extend_from_slice(&x.data()[(bi * n + i) * f..(bi * n + i + 1) * f]);
            }
        }
        let out = Tensor::from_vec(&[b, index.len(), f], out)?;
        Ok(self.push(
            out,
            Op::Gather {
                input,
                index: index.to_vec(),
            },
        ))
    }

    /// Means over consecutive groups of `k` points: `[B, M k, F] -> [B, M, F]`.
    pub fn group_mean(&mut self, input: Var, k: usize) -> Result<Var> {
        let x = self.value(input);
        let (b, n, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if k == 0 || n % k != 0 {
            return Err(CoreError::shape("group mean", &[k], &[n]));
        }
        let m = n / k;
        let mut out = vec![0.0; b * m * f];
        for (gi, dst) in out.chunks_mut(f).enumerate() {
            for j in 0..k {
                let src = &x.data()[(gi * k + j) * f..(gi * k + j + 1) * f];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s / k as f64;
                }
            }
        }
        let out = Tensor::from_vec(&[b, m, f], out)?;
        Ok(self.push(out, Op::GroupMean { input, k }))
    }

    /// `[B, C, H, W] -> [B, H W, C]`.
    pub fn grid_to_points(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        if x.ndim() != 4 {
            return Err(CoreError::shape("grid to points", &[0, 0, 0, 0], x.shape()));
        }
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let out = transpose_last(x.data(), b, c, h * w);
        let out = Tensor::from_vec(&[b, h * w, c], out)?;
        Ok(self.push(out, Op::GridToPoints(input)))
    }

    /// `[B, H W, C] -> [B, C, H, W]`.
    pub fn points_to_grid(&mut self, input: Var, h: usize, w: usize) -> Result<Var> {
        let x = self.value(input);
        if x.ndim() != 3 || x.shape()[1] != h * w {
            return Err(CoreError::shape(
                "points to grid",
                &[0, h * w, 0],
                x.shape(),
            ));
        }
        let (b, c) = (x.shape()[0], x.shape()[2]);
        let out = transpose_last(x.data(), b, h * w, c);
        let out = Tensor::from_vec(&[b, c, h, w], out)?;
        Ok(self.push(out, Op::PointsToGrid(input)))
    }

    /// Scalar training loss of `pred` against a fixed `target`.
    pub fn loss(
        &mut self,
        pred: Var,
        target: &Tensor,
        cfg: &LossConfig,
        weights: Option<&[f64]>,
    ) -> Result<Var> {
        let (v, grad) = loss_and_grad(self.value(pred), target, cfg, weights)?;
        Ok(self.push(Tensor::scalar(v), Op::Loss { input: pred, grad }))
    }

    /// Like [`Tape::loss`], restricted to the channels selected in `mask`.
    pub fn masked_loss(
        &mut self,
        pred: Var,
        target: &Tensor,
        cfg: &LossConfig,
        weights: Option<&[f64]>,
        mask: &[Vec<bool>],
    ) -> Result<Var> {
        let (v, grad) = masked_loss_and_grad(self.value(pred), target, cfg, weights, mask)?;
        Ok(self.push(Tensor::scalar(v), Op::Loss { input: pred, grad }))
    }

    /// Gradients of the scalar `output` with respect to every recorded value.
    pub fn backward(&self, output: Var) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[output.0] = Some(Tensor::full(self.value(output).shape(), 1.0));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients {
            grads,
            params: self.params.clone(),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &self.nodes[i].op {
            Op::Leaf | Op::Param => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
            } => {
                let (dx, dw, db) =
                    kernels::conv2d_backward(self.value(*input), self.value(*weight), g, *stride);
                acc(*input, dx);
                acc(*weight, dw);
                if let Some(b) = bias {
                    acc(*b, db);
                }
            }
            Op::ConvTranspose2 {
                input,
                weight,
                bias,
            } => {
                let (dx, dw, db) =
                    kernels::conv_transpose2_backward(self.value(*input), self.value(*weight), g);
                acc(*input, dx);
                acc(*weight, dw);
                if let Some(b) = bias {
                    acc(*b, db);
                }
            }
            Op::Pad { input, map, plane } => {
                let x = self.value(*input);
                let mut dx = vec![0.0; x.len()];
                for (p, gp) in g.data().chunks(map.len()).enumerate() {
                    for (gv, m) in gp.iter().zip(map) {
                        if let Some(j) = m {
                            dx[p * plane + j] += gv;
                        }
                    }
                }
                acc(*input, Tensor::from_vec(x.shape(), dx).expect("pad grad"));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if x.shape() == y.shape() {
                    acc(*a, g.zip_map(y, |p, q| p * q).expect("mul grad"));
                    acc(*b, g.zip_map(x, |p, q| p * q).expect("mul grad"));
                } else {
                    let n = y.len();
                    let da = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(k, v)| v * y.data()[k % n])
                        .collect();
                    let mut db = vec![0.0; n];
                    for (k, (gv, xv)) in g.data().iter().zip(x.data()).enumerate() {
                        db[k % n] += gv * xv;
                    }
                    acc(*a, Tensor::from_vec(x.shape(), da).expect("mul grad"));
                    acc(*b, Tensor::from_vec(y.shape(), db).expect("mul grad"));
                }
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::Sum(a) => acc(*a, Tensor::full(self.value(*a).shape(), g.item())),
            Op::Gelu(a) => {
                let d = g
                    .zip_map(self.value(*a), |gv, x| gv * kernels::gelu_grad(x))
                    .expect("gelu grad");
                acc(*a, d);
            }
            Op::GroupNorm {
                input,
                gamma,
                beta,
                groups,
                xhat,
                inv_std,
            } => {
                let x = self.value(*input);
                let s = x.shape();
                let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
                let gam = self.value(*gamma).data();
                let per = (c / groups) * hw;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; x.len()];
                for (k, (gv, xh)) in g.data().iter().zip(xhat).enumerate() {
                    let ci = (k / hw) % c;
                    dgamma[ci] += gv * xh;
                    dbeta[ci] += gv;
                }
                for bi in 0..b {
                    for gi in 0..*groups {
                        let off = (bi * c + gi * (c / groups)) * hw;
                        let mut sum = 0.0;
                        let mut dot = 0.0;
                        for k in off..off + per {
                            let dxh = g.data()[k] * gam[(k / hw) % c];
                            sum += dxh;
                            dot += dxh * xhat[k];
                        }
                        let is = inv_std[bi * groups + gi];
                        let nf = per as f64;
                        for k in off..off + per {
                            let dxh = g.data()[k] * gam[(k / hw) % c];
                            dx[k] = is * (dxh - sum / nf - xhat[k] * dot / nf);
                        }
                    }
                }
                acc(*input, Tensor::from_vec(s, dx).expect("group norm grad"));
                acc(*gamma, Tensor::from_vec(&[c], dgamma).expect("gamma grad"));
                acc(*beta, Tensor::from_vec(&[c], dbeta).expect("beta grad"));
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let len = self.value(*p).shape()[1];
                    acc(*p, g.slice_channels(start, len));
                    start += len;
                }
            }
            Op::Slice { input, start } => {
                let x = self.value(*input);
                let (b, c) = (x.shape()[0], x.shape()[1]);
                let len = g.shape()[1];
                let spatial = x.len() / (b * c);
                let mut dx = vec![0.0; x.len()];
                for bi in 0..b {
                    let src = &g.data()[bi * len * spatial..(bi + 1) * len * spatial];
                    let off = (bi * c + start) * spatial;
                    dx[off..off + len * spatial].copy_from_slice(src);
                }
                acc(*input, Tensor::from_vec(x.shape(), dx).expect("slice grad"));
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (f, o) = (w.shape()[1], w.shape()[0]);
                let mut dx = vec![0.0; x.len()];
                let mut dw = vec![0.0; w.len()];
                let mut db = vec![0.0; o];
                for ((row, grow), dxrow) in x
                    .data()
                    .chunks(f)
                    .zip(g.data().chunks(o))
                    .zip(dx.chunks_mut(f))
                {
                    for (k, gv) in grow.iter().enumerate() {
                        db[k] += gv;
                        let wr = &w.data()[k * f..(k + 1) * f];
                        let dwr = &mut dw[k * f..(k + 1) * f];
                        for j in 0..f {
                            dwr[j] += gv * row[j];
                            dxrow[j] += gv * wr[j];
                        }
                    }
                }
                acc(
                    *input,
                    Tensor::from_vec(x.shape(), dx).expect("linear grad"),
                );
                acc(
                    *weight,
                    Tensor::from_vec(w.shape(), dw).expect("linear grad"),
                );
                if let Some(bv) = bias {
                    acc(*bv, Tensor::from_vec(&[o], db).expect("linear grad"));
                }
            }
            Op::Gather { input, index } => {
                let x = self.value(*input);
                let (b, n, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let m = index.len();
                let mut dx = vec![0.0; x.len()];
                for bi in 0..b {
                    for (r, &src) in index.iter().enumerate() {
                        let gr = &g.data()[(bi * m + r) * f..(bi * m + r + 1) * f];
                        for (d, gv) in dx[(bi * n + src) * f..(bi * n + src + 1) * f]
                            .iter_mut()
                            .zip(gr)
                        {
                            *d += gv;
                        }
                    }
                }
                acc(
                    *input,
                    Tensor::from_vec(x.shape(), dx).expect("gather grad"),
                );
            }
            Op::GroupMean { input, k } => {
                let x = self.value(*input);
                let f = x.shape()[2];
                let mut dx = vec![0.0; x.len()];
                for (gi, gr) in g.data().chunks(f).enumerate() {
                    for j in 0..*k {
                        for (d, gv) in dx[(gi * k + j) * f..(gi * k + j + 1) * f]
                            .iter_mut()
                            .zip(gr)
                        {
                            *d = gv / *k as f64;
                        }
                    }
                }
                acc(
                    *input,
                    Tensor::from_vec(x.shape(), dx).expect("group mean grad"),
                );
            }
            Op::GridToPoints(input) => {
                let x = self.value(*input);
                let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
                let dx = transpose_last(g.data(), b, h * w, c);
                acc(*input, Tensor::from_vec(x.shape(), dx).expect("grid grad"));
            }
            Op::PointsToGrid(input) => {
                let x = self.value(*input);
                let (b, n, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let dx = transpose_last(g.data(), b, c, n);
                acc(
                    *input,
                    Tensor::from_vec(x.shape(), dx).expect("points grad"),
                );
            }
            Op::Loss { input, grad } => acc(*input, grad.scale(g.item())),
        }
    }
}

/// Swaps the last two axes of a `[B, R, C]` buffer.
fn transpose_last(data: &[f64], b: usize, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for bi in 0..b {
        let src = &data[bi * rows * cols..(bi + 1) * rows * cols];
        let dst = &mut out[bi * rows * cols..(bi + 1) * rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                dst[c * rows + r] = src[r * cols + c];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{XPadding, YPadding};
    use crate::objectives::LossKind;
    use crate::rng::seeded;
    use rand::Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = seeded(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Compares the tape gradient of every input against central
    /// differences of `f`.
    fn check(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) {
        let scalar = |vals: &[Tensor]| {
            let mut t = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|v| t.constant(v.clone())).collect();
            let out = f(&mut t, &vars);
            (t, vars, out)
        };
        let (tape, vars, out) = scalar(inputs);
        let grads = tape.backward(out);
        let eps = 1e-6;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads
                .get(vars[k])
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(input.shape()));
            for j in 0..input.len() {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[j] += eps;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[j] -= eps;
                let (tp, _, op) = scalar(&plus);
                let (tm, _, om) = scalar(&minus);
                let fd = (tp.value(op).item() - tm.value(om).item()) / (2.0 * eps);
                let an = analytic.data()[j];
                assert!(
                    (fd - an).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "input {k} element {j}: fd {fd} analytic {an}"
                );
            }
        }
    }

    fn mse(t: &mut Tape, v: Var) -> Var {
        let target = Tensor::zeros(t.value(v).shape());
        t.loss(v, &target, &LossConfig::new(LossKind::Mse), None)
            .unwrap()
    }

    #[test]
    fn conv_gradients() {
        for stride in [1, 2] {
            let x = random(&[2, 2, 5, 6], 1);
            let w = random(&[3, 2, 3, 3], 2);
            let b = random(&[3], 3);
            check(&[x, w, b], |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), stride).unwrap();
                mse(t, y)
            });
        }
    }

    #[test]
    fn transposed_conv_gradients() {
        check(
            &[
                random(&[1, 2, 2, 3], 4),
                random(&[2, 3, 2, 2], 5),
                random(&[3], 6),
            ],
            |t, v| {
                let y = t.conv_transpose2(v[0], v[1], Some(v[2])).unwrap();
                mse(t, y)
            },
        );
    }

    #[test]
    fn pad_gradients() {
        for scheme in [
            PaddingScheme::new(XPadding::Circular, YPadding::Reflect),
            PaddingScheme::new(XPadding::Zero, YPadding::Zero),
        ] {
            check(&[random(&[1, 2, 3, 4], 7)], |t, v| {
                let y = t.pad(v[0], scheme, 1, 2).unwrap();
                let s = t.scale(y, 1.5);
                mse(t, s)
            });
        }
    }

    #[test]
    fn elementwise_gradients() {
        check(
            &[
                random(&[2, 3, 2], 8),
                random(&[2, 3, 2], 9),
                random(&[1, 3, 2], 10),
            ],
            |t, v| {
                let a = t.add(v[0], v[1]).unwrap();
                let s = t.sub(a, v[1]).unwrap();
                let m = t.mul(s, v[1]).unwrap();
                let g = t.gelu(m);
                let b = t.mul(g, v[2]).unwrap();
                let total = t.sum(b);
                let l = mse(t, b);
                let half = t.scale(total, 0.5);
                t.add(l, half).unwrap()
            },
        );
    }

    #[test]
    fn group_norm_gradients() {
        check(
            &[
                random(&[2, 4, 2, 3], 11),
                random(&[4], 12),
                random(&[4], 13),
            ],
            |t, v| {
                let y = t.group_norm(v[0], v[1], v[2], 2).unwrap();
                let w = t.constant(random(&[2, 4, 2, 3], 14));
                let z = t.mul(y, w).unwrap();
                mse(t, z)
            },
        );
    }

    #[test]
    fn channel_gradients() {
        check(&[random(&[2, 2, 3], 15), random(&[2, 3, 3], 16)], |t, v| {
            let c = t.concat_channels(&[v[0], v[1]]).unwrap();
            let s = t.slice_channels(c, 1, 3).unwrap();
            let w = t.constant(random(&[2, 3, 3], 17));
            let z = t.mul(s, w).unwrap();
            mse(t, z)
        });
    }

    #[test]
    fn point_gradients() {
        check(
            &[
                random(&[2, 3, 2, 2], 18),
                random(&[5, 3], 19),
                random(&[5], 20),
            ],
            |t, v| {
                let p = t.grid_to_points(v[0]).unwrap();
                let l = t.linear(p, v[1], Some(v[2])).unwrap();
                let g = t.gather_points(l, &[0, 3, 3, 1, 2, 0]).unwrap();
                let m = t.group_mean(g, 3).unwrap();
                let w = t.constant(random(&[2, 2, 5], 21));
                let z = t.mul(m, w).unwrap();
                let back = t.linear(z, v[1], None);
                assert!(back.is_err());
                let q = t.points_to_grid(l, 2, 2).unwrap();
                let lq = mse(t, q);
                let lz = mse(t, z);
                t.add(lq, lz).unwrap()
            },
        );
    }

    #[test]
    fn params_are_recorded_once() {
        let mut t = Tape::new();
        let w = Tensor::full(&[1, 1, 2], 3.0);
        let a = t.param(4, &w);
        let b = t.param(4, &w);
        assert_eq!(a, b);
        let y = t.mul(a, b).unwrap();
        let l = mse(&mut t, y);
        let g = t.backward(l);
        // d/dw mean(w^4) = 4 w^3 / 2
        assert_eq!(g.param(4).unwrap().data(), &[54.0, 54.0]);
        assert!(g.param(0).is_none());
    }
}
