//! Forward and backward kernels of the tape operations.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::models::PaddingScheme;
use crate::tensor::Tensor;

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    (s[0], s[1], s[2], s[3])
}

/// Valid (unpadded) cross-correlation of `[B, Ci, H, W]` with
/// `[Co, Ci, K, K]`.
pub(super) fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize) -> Tensor {
    let (b, ci, h, wd) = dims4(x);
    let (co, _, kh, kw) = dims4(w);
    let ho = (h - kh) / stride + 1;
    let wo = (wd - kw) / stride + 1;
    let mut out = vec![0.0; b * co * ho * wo];
    let xd = x.data();
    let wdat = w.data();
    for bi in 0..b {
        for o in 0..co {
            let dst = &mut out[(bi * co + o) * ho * wo..(bi * co + o + 1) * ho * wo];
            if let Some(bias) = bias {
                dst.iter_mut().for_each(|v| *v = bias.data()[o]);
            }
            for c in 0..ci {
                let src = &xd[(bi * ci + c) * h * wd..(bi * ci + c + 1) * h * wd];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wdat[((o * ci + c) * kh + ky) * kw + kx];
                        for oy in 0..ho {
                            let row = &src[(oy * stride + ky) * wd..];
                            let drow = &mut dst[oy * wo..(oy + 1) * wo];
                            if stride == 1 {
                                for (d, s) in drow.iter_mut().zip(&row[kx..kx + wo]) {
                                    *d += wv * s;
                                }
                            } else {
                                for (ox, d) in drow.iter_mut().enumerate() {
                                    *d += wv * row[ox * stride + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[b, co, ho, wo], out).expect("conv output shape")
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub(super) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    g: &Tensor,
    stride: usize,
) -> (Tensor, Tensor, Tensor) {
    let (b, ci, h, wd) = dims4(x);
    let (co, _, kh, kw) = dims4(w);
    let (_, _, ho, wo) = dims4(g);
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; co];
    let xd = x.data();
    let wdat = w.data();
    let gd = g.data();
    for bi in 0..b {
        for o in 0..co {
            let gsl = &gd[(bi * co + o) * ho * wo..(bi * co + o + 1) * ho * wo];
            db[o] += gsl.iter().sum::<f64>();
            for c in 0..ci {
                let base = (bi * ci + c) * h * wd;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let widx = ((o * ci + c) * kh + ky) * kw + kx;
                        let wv = wdat[widx];
                        let mut acc = 0.0;
                        for oy in 0..ho {
                            let grow = &gsl[oy * wo..(oy + 1) * wo];
                            let off = base + (oy * stride + ky) * wd + kx;
                            if stride == 1 {
                                let xrow = &xd[off..off + wo];
                                let dxrow = &mut dx[off..off + wo];
                                for ((gv, xv), dv) in grow.iter().zip(xrow).zip(dxrow.iter_mut()) {
                                    acc += gv * xv;
                                    *dv += gv * wv;
                                }
                            } else {
                                for (ox, gv) in grow.iter().enumerate() {
                                    acc += gv * xd[off + ox * stride];
                                    dx[off + ox * stride] += gv * wv;
                                }
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (
        Tensor::from_vec(x.shape(), dx).expect("dx"),
        Tensor::from_vec(w.shape(), dw).expect("dw"),
        Tensor::from_vec(&[co], db).expect("db"),
    )
}

/// Transposed convolution with a 2x2 kernel and stride 2; weight layout
/// `[Ci, Co, 2, 2]`.
pub(super) fn conv_transpose2(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Tensor {
    let (b, ci, h, wd) = dims4(x);
    let co = w.shape()[1];
    let (ho, wo) = (2 * h, 2 * wd);
    let mut out = vec![0.0; b * co * ho * wo];
    for bi in 0..b {
        for o in 0..co {
            let dst = &mut out[(bi * co + o) * ho * wo..(bi * co + o + 1) * ho * wo];
            if let Some(bias) = bias {
                dst.iter_mut().for_each(|v| *v = bias.data()[o]);
            }
            for c in 0..ci {
                let src = &x.data()[(bi * ci + c) * h * wd..(bi * ci + c + 1) * h * wd];
                let k = &w.data()[(c * co + o) * 4..(c * co + o) * 4 + 4];
                for y in 0..h {
                    for xx in 0..wd {
                        let v = src[y * wd + xx];
                        let top = (2 * y) * wo + 2 * xx;
                        dst[top] += v * k[0];
                        dst[top + 1] += v * k[1];
                        dst[top + wo] += v * k[2];
                        dst[top + wo + 1] += v * k[3];
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[b, co, ho, wo], out).expect("transposed conv output shape")
}

pub(super) fn conv_transpose2_backward(
    x: &Tensor,
    w: &Tensor,
    g: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (b, ci, h, wd) = dims4(x);
    let co = w.shape()[1];
    let (ho, wo) = (2 * h, 2 * wd);
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; co];
    for bi in 0..b {
        for o in 0..co {
            let gsl = &g.data()[(bi * co + o) * ho * wo..(bi * co + o + 1) * ho * wo];
            db[o] += gsl.iter().sum::<f64>();
            for c in 0..ci {
                let xoff = (bi * ci + c) * h * wd;
                let kidx = (c * co + o) * 4;
                let k = &w.data()[kidx..kidx + 4];
                let mut acc = [0.0; 4];
                for y in 0..h {
                    for xx in 0..wd {
                        let top = (2 * y) * wo + 2 * xx;
                        let gs = [gsl[top], gsl[top + 1], gsl[top + wo], gsl[top + wo + 1]];
                        let v = x.data()[xoff + y * wd + xx];
                        let mut s = 0.0;
                        for q in 0..4 {
                            acc[q] += gs[q] * v;
                            s += gs[q] * k[q];
                        }
                        dx[xoff + y * wd + xx] += s;
                    }
                }
                for q in 0..4 {
                    dw[kidx + q] += acc[q];
                }
            }
        }
    }
    (
        Tensor::from_vec(x.shape(), dx).expect("dx"),
        Tensor::from_vec(w.shape(), dw).expect("dw"),
        Tensor::from_vec(&[co], db).expect("db"),
    )
}

/// Source flat index (within one plane) of every padded position.
pub(super) fn pad_map(
    scheme: &PaddingScheme,
    h: usize,
    w: usize,
    py: usize,
    px: usize,
) -> Vec<Option<usize>> {
    let (ho, wo) = (h + 2 * py, w + 2 * px);
    let mut map = Vec::with_capacity(ho * wo);
    for y in 0..ho {
        let sy = scheme.source_y(y, h, py);
        for x in 0..wo {
            map.push(match (sy, scheme.source_x(x, w, px)) {
                (Some(sy), Some(sx)) => Some(sy * w + sx),
                _ => None,
            });
        }
    }
    map
}

pub(super) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + math::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

pub(super) fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + math::erf(x * core::f64::consts::FRAC_1_SQRT_2));
    let pdf = math::exp(-0.5 * x * x) / math::sqrt(2.0 * math::PI);
    cdf + x * pdf
}

pub(super) const GROUP_NORM_EPS: f64 = 1e-5;

/// Group normalization statistics: normalized values and `1/std` per
/// `(batch, group)`.
pub(super) fn group_norm_stats(x: &Tensor, groups: usize) -> (Vec<f64>, Vec<f64>) {
    let (b, c, h, w) = dims4(x);
    let per = (c / groups) * h * w;
    let mut xhat = vec![0.0; x.len()];
    let mut inv = vec![0.0; b * groups];
    for bi in 0..b {
        for g in 0..groups {
            let off = (bi * c + g * (c / groups)) * h * w;
            let s = &x.data()[off..off + per];
            let mean = s.iter().sum::<f64>() / per as f64;
            let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per as f64;
            let is = 1.0 / math::sqrt(var + GROUP_NORM_EPS);
            inv[bi * groups + g] = is;
            for (d, v) in xhat[off..off + per].iter_mut().zip(s) {
                *d = (v - mean) * is;
            }
        }
    }
    (xhat, inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::from_vec(&[1, 1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let y = conv2d(&x, &w, None, 1);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn transpose_spreads_each_pixel() {
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv_transpose2(&x, &w, None);
        assert_eq!(y.data(), &[1.0, 2.0, 2.0, 4.0, 3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
        let e = 1e-6;
        let fd = (gelu(0.3 + e) - gelu(0.3 - e)) / (2.0 * e);
        assert!((fd - gelu_grad(0.3)).abs() < 1e-8);
    }
}
