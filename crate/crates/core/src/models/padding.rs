use core::fmt;
use core::str::FromStr;

use crate::tensor::Tensor;
use crate::{CoreError, Result};

/// Longitudinal padding mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum XPadding {
    Zero,
    /// Wraps around the longitude seam.
    #[default]
    Circular,
}

/// Latitudinal padding mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum YPadding {
    #[default]
    Zero,
    /// Mirrors about the boundary row, excluding it.
    Reflect,
}

macro_rules! named_enum {
    ($ty:ident, $what:literal, $($variant:ident => $name:literal),+) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self {
                    $($ty::$variant => $name),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = CoreError;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err(CoreError::UnknownKind { what: $what, name: s.into() }),
                }
            }
        }
    };
}

named_enum!(XPadding, "x padding mode", Zero => "zero", Circular => "circular");
named_enum!(YPadding, "y padding mode", Zero => "zero", Reflect => "reflect");

/// Padding applied to every spatial convolution of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PaddingScheme {
    pub x_mode: XPadding,
    pub y_mode: YPadding,
}

impl PaddingScheme {
    pub fn new(x_mode: XPadding, y_mode: YPadding) -> Self {
        PaddingScheme { x_mode, y_mode }
    }

    pub fn zeros() -> Self {
        PaddingScheme::new(XPadding::Zero, YPadding::Zero)
    }

    /// Source column of padded column `i` (`0 <= i < w + 2 px`).
    #[inline]
    pub(crate) fn source_x(&self, i: usize, w: usize, px: usize) -> Option<usize> {
        let j = i as isize - px as isize;
        match self.x_mode {
            XPadding::Circular => Some(j.rem_euclid(w as isize) as usize),
            XPadding::Zero => (0..w as isize).contains(&j).then_some(j as usize),
        }
    }

    /// Source row of padded row `i` (`0 <= i < h + 2 py`).
    #[inline]
    pub(crate) fn source_y(&self, i: usize, h: usize, py: usize) -> Option<usize> {
        let j = i as isize - py as isize;
        let h = h as isize;
        match self.y_mode {
            YPadding::Zero => (0..h).contains(&j).then_some(j as usize),
            YPadding::Reflect => {
                let r = if j < 0 {
                    -j
                } else if j >= h {
                    2 * (h - 1) - j
                } else {
                    j
                };
                Some(r as usize)
            }
        }
    }

    pub(crate) fn check(&self, h: usize, w: usize, py: usize, px: usize) -> Result<()> {
        if py >= h || px >= w {
            return Err(CoreError::PaddingTooLarge { py, px, h, w });
        }
        Ok(())
    }
}

/// Pads the last two axes of `field` by `(py, px)` on each side.
pub fn pad2d(field: &Tensor, scheme: PaddingScheme, pad: (usize, usize)) -> Result<Tensor> {
    let (py, px) = pad;
    let nd = field.ndim();
    if nd < 2 {
        return Err(CoreError::shape("pad2d", &[1, 1], field.shape()));
    }
    let h = field.shape()[nd - 2];
    let w = field.shape()[nd - 1];
    scheme.check(h, w, py, px)?;
    let (ho, wo) = (h + 2 * py, w + 2 * px);
    let planes = field.len() / (h * w);
    let mut out = alloc::vec![0.0; planes * ho * wo];
    for p in 0..planes {
        let src = &field.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..ho {
            let Some(sy) = scheme.source_y(y, h, py) else {
                continue;
            };
            for x in 0..wo {
                if let Some(sx) = scheme.source_x(x, w, px) {
                    dst[y * wo + x] = src[sy * w + sx];
                }
            }
        }
    }
    let mut shape = field.shape().to_vec();
    shape[nd - 2] = ho;
    shape[nd - 1] = wo;
    Tensor::from_vec(&shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn circular_wraps_columns() {
        let t = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let s = PaddingScheme::new(XPadding::Circular, YPadding::Zero);
        let p = pad2d(&t, s, (0, 1)).unwrap();
        assert_eq!(p.data(), &[3.0, 1.0, 2.0, 3.0, 1.0]);
    }

    #[test]
    fn reflect_mirrors_rows() {
        let t = Tensor::from_vec(&[3, 1], vec![0.0, 1.0, 2.0]).unwrap();
        let s = PaddingScheme::new(XPadding::Zero, YPadding::Reflect);
        let p = pad2d(&t, s, (1, 0)).unwrap();
        assert_eq!(p.data(), &[1.0, 0.0, 1.0, 2.0, 1.0]);
    }

    #[test]
    fn zero_border() {
        let t = Tensor::full(&[2, 2], 1.0);
        let p = pad2d(&t, PaddingScheme::zeros(), (1, 1)).unwrap();
        assert_eq!(p.shape(), &[4, 4]);
        assert_eq!(p.sum(), 4.0);
        assert_eq!(p.data()[0], 0.0);
        assert_eq!(p.data()[5], 1.0);
    }

    #[test]
    fn oversized_padding_errors() {
        let t = Tensor::full(&[2, 3], 1.0);
        assert!(matches!(
            pad2d(&t, PaddingScheme::default(), (2, 1)),
            Err(CoreError::PaddingTooLarge { .. })
        ));
        assert!(pad2d(&t, PaddingScheme::default(), (1, 3)).is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        assert_eq!("circular".parse::<XPadding>().unwrap(), XPadding::Circular);
        assert_eq!(YPadding::Reflect.to_string(), "reflect");
        assert!("mirror".parse::<YPadding>().is_err());
    }
}
