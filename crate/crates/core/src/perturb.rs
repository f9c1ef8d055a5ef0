//! Training-time input noise: i.i.d. Gaussian and gradient-lattice Perlin.
//!
//! The Perlin lattice is periodic along longitude (node column `cells_lon`
//! is node column 0) and open along latitude. Each 2D slice of a field gets
//! its own lattice, seeded from the caller's generator.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::math;
use crate::rng::seeded;
use crate::tensor::Tensor;
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NoiseKind {
    None,
    Gaussian,
    Perlin,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Perlin => "perlin",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseKind::None),
            "gaussian" => Ok(NoiseKind::Gaussian),
            "perlin" => Ok(NoiseKind::Perlin),
            _ => Err(CoreError::UnknownKind {
                what: "noise kind",
                name: s.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    /// Standard deviation (gaussian) or single-octave peak (perlin).
    pub amplitude: f64,
    /// Base lattice cells along (lat, lon).
    pub lattice: (usize, usize),
    pub octaves: u32,
    pub persistence: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            kind: NoiseKind::None,
            amplitude: 0.1,
            lattice: (8, 16),
            octaves: 3,
            persistence: 0.5,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(CoreError::InvalidConfig(
                "noise amplitude must be >= 0".into(),
            ));
        }
        if self.kind == NoiseKind::Perlin {
            if self.octaves < 1 {
                return Err(CoreError::InvalidConfig(
                    "perlin octaves must be >= 1".into(),
                ));
            }
            if !(self.persistence > 0.0 && self.persistence <= 1.0) {
                return Err(CoreError::InvalidConfig(
                    "perlin persistence must lie in (0, 1]".into(),
                ));
            }
            if self.lattice.0 < 2 || self.lattice.1 < 2 {
                return Err(CoreError::LatticeTooCoarse {
                    lat: self.lattice.0,
                    lon: self.lattice.1,
                });
            }
        }
        Ok(())
    }
}

/// `field + eps`, `eps ~ N(0, amplitude^2)` per element.
pub fn gaussian_perturb<R: Rng + ?Sized>(field: &Tensor, amplitude: f64, rng: &mut R) -> Tensor {
    if amplitude == 0.0 {
        return field.clone();
    }
    let normal = Normal::new(0.0, amplitude).expect("amplitude is finite and non-negative");
    let mut out = field.clone();
    for v in out.data_mut() {
        *v += normal.sample(rng);
    }
    out
}

/// Classic Perlin gradient lattice with unit gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct PerlinLattice {
    cells_lat: usize,
    cells_lon: usize,
    /// `(cells_lat + 1) x cells_lon` unit gradients; longitude wraps.
    gradients: Vec<(f64, f64)>,
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

impl PerlinLattice {
    pub fn new<R: Rng + ?Sized>(cells_lat: usize, cells_lon: usize, rng: &mut R) -> Result<Self> {
        if cells_lat < 2 || cells_lon < 2 {
            return Err(CoreError::LatticeTooCoarse {
                lat: cells_lat,
                lon: cells_lon,
            });
        }
        let gradients = (0..(cells_lat + 1) * cells_lon)
            .map(|_| {
                let a = rng.random::<f64>() * 2.0 * math::PI;
                (math::cos(a), math::sin(a))
            })
            .collect();
        Ok(PerlinLattice {
            cells_lat,
            cells_lon,
            gradients,
        })
    }

    fn gradient(&self, row: usize, col: usize) -> (f64, f64) {
        self.gradients[row.min(self.cells_lat) * self.cells_lon + col % self.cells_lon]
    }

    /// Noise at lattice coordinates `y in [0, cells_lat]`, any `x`
    /// (taken modulo `cells_lon`).
    pub fn sample(&self, y: f64, x: f64) -> f64 {
        let period = self.cells_lon as f64;
        let x = x - math::floor(x / period) * period;
        let y = y.clamp(0.0, self.cells_lat as f64);
        let iy = (math::floor(y) as usize).min(self.cells_lat - 1);
        let ix = (math::floor(x) as usize).min(self.cells_lon - 1);
        let fy = y - iy as f64;
        let fx = x - ix as f64;
        let dot = |row: usize, col: usize, dy: f64, dx: f64| {
            let (gy, gx) = self.gradient(row, col);
            gy * dy + gx * dx
        };
        let n00 = dot(iy, ix, fy, fx);
        let n01 = dot(iy, ix + 1, fy, fx - 1.0);
        let n10 = dot(iy + 1, ix, fy - 1.0, fx);
        let n11 = dot(iy + 1, ix + 1, fy - 1.0, fx - 1.0);
        let u = fade(fx);
        let v = fade(fy);
        let top = n00 + u * (n01 - n00);
        let bottom = n10 + u * (n11 - n10);
        top + v * (bottom - top)
    }

    pub fn cells(&self) -> (usize, usize) {
        (self.cells_lat, self.cells_lon)
    }
}

/// Peak magnitude of 2D Perlin noise with unit gradients.
const PERLIN_PEAK: f64 = core::f64::consts::FRAC_1_SQRT_2;

/// Multi-octave Perlin noise sampled on an `h x w` grid.
///
/// Grid point `(i, j)` maps to lattice coordinates
/// `(i * cells_lat / h, j * cells_lon / w)` at the base octave; octave `o`
/// doubles the lattice `o` times and is weighted by `persistence^o`. The
/// sum is scaled so a single octave peaks at `amplitude`.
pub fn perlin_field(h: usize, w: usize, cfg: &NoiseConfig, seed: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (cl, cw) = cfg.lattice;
    if cl < 2 || cw < 2 {
        return Err(CoreError::LatticeTooCoarse { lat: cl, lon: cw });
    }
    let mut rng = seeded(seed);
    let mut out = alloc::vec![0.0; h * w];
    let mut weight = 1.0;
    for o in 0..cfg.octaves {
        let f = 1usize << o;
        let lattice = PerlinLattice::new(cl * f, cw * f, &mut rng)?;
        let sy = (cl * f) as f64 / h as f64;
        let sx = (cw * f) as f64 / w as f64;
        for i in 0..h {
            for j in 0..w {
                out[i * w + j] += weight * lattice.sample(i as f64 * sy, j as f64 * sx);
            }
        }
        weight *= cfg.persistence;
    }
    let scale = cfg.amplitude / PERLIN_PEAK;
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

/// Adds an independent Perlin field to every trailing `H x W` slice.
pub fn perlin_perturb<R: Rng + ?Sized>(
    field: &Tensor,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Result<Tensor> {
    cfg.validate()?;
    let shape = field.shape();
    if shape.len() < 2 {
        return Err(CoreError::shape("perlin field", &[0, 0], shape));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let mut out = field.clone();
    for slice in out.data_mut().chunks_mut(h * w) {
        let noise = perlin_field(h, w, cfg, rng.random())?;
        for (v, n) in slice.iter_mut().zip(noise) {
            *v += n;
        }
    }
    Ok(out)
}

/// Applies the configured noise, or returns the input for `none`.
pub fn perturb<R: Rng + ?Sized>(field: &Tensor, cfg: &NoiseConfig, rng: &mut R) -> Result<Tensor> {
    match cfg.kind {
        NoiseKind::None => Ok(field.clone()),
        NoiseKind::Gaussian => {
            cfg.validate()?;
            Ok(gaussian_perturb(field, cfg.amplitude, rng))
        }
        NoiseKind::Perlin => perlin_perturb(field, cfg, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn perlin_cfg() -> NoiseConfig {
        NoiseConfig {
            kind: NoiseKind::Perlin,
            amplitude: 1.0,
            lattice: (4, 8),
            octaves: 1,
            persistence: 0.5,
            seed: 0,
        }
    }

    #[test]
    fn gaussian_zero_amplitude_is_identity() {
        let x = Tensor::from_vec(&[2, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(gaussian_perturb(&x, 0.0, &mut seeded(1)), x);
    }

    #[test]
    fn gaussian_sample_std() {
        let x = Tensor::zeros(&[100_000]);
        let y = gaussian_perturb(&x, 0.1, &mut seeded(42));
        let n = y.len() as f64;
        let m = y.sum() / n;
        let s = (y.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
        assert!((0.095..=0.105).contains(&s), "std {s}");
        assert_eq!(y, gaussian_perturb(&x, 0.1, &mut seeded(42)));
    }

    #[test]
    fn perlin_vanishes_on_nodes_and_wraps() {
        let lat = PerlinLattice::new(4, 8, &mut seeded(5)).unwrap();
        for r in 0..=4 {
            for c in 0..=8 {
                assert!(lat.sample(r as f64, c as f64).abs() <= 1e-9);
            }
        }
        for k in 0..20 {
            let y = k as f64 * 0.2;
            assert!((lat.sample(y, 0.0) - lat.sample(y, 8.0)).abs() <= 1e-9);
            assert!((lat.sample(y, 8.0 - 1e-12) - lat.sample(y, 0.0)).abs() <= 1e-9);
        }
    }

    #[test]
    fn coarse_lattice_is_rejected() {
        assert!(matches!(
            PerlinLattice::new(1, 8, &mut seeded(0)),
            Err(CoreError::LatticeTooCoarse { .. })
        ));
        let mut cfg = perlin_cfg();
        cfg.lattice = (8, 1);
        assert!(perlin_perturb(&Tensor::zeros(&[1, 8, 16]), &cfg, &mut seeded(0)).is_err());
    }

    #[test]
    fn single_octave_peak_is_bounded_by_amplitude() {
        let f = perlin_field(32, 64, &perlin_cfg(), 3).unwrap();
        assert!(f.iter().all(|v| v.abs() <= 1.0 + 1e-12));
        assert!(f.iter().any(|v| v.abs() > 0.2));
    }

    #[test]
    fn perlin_is_reproducible_and_per_channel() {
        let x = Tensor::zeros(&[2, 8, 16]);
        let a = perlin_perturb(&x, &perlin_cfg(), &mut seeded(11)).unwrap();
        let b = perlin_perturb(&x, &perlin_cfg(), &mut seeded(11)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.data()[..128], a.data()[128..]);
    }

    #[test]
    fn perlin_golden_values() {
        let cfg = NoiseConfig {
            octaves: 3,
            ..perlin_cfg()
        };
        let f = perlin_field(8, 16, &cfg, 2024).unwrap();
        // frozen regression values; second differences stay small
        let golden = [GOLDEN_0, GOLDEN_1, GOLDEN_2];
        for (k, g) in [(9usize, golden[0]), (37, golden[1]), (101, golden[2])] {
            assert!((f[k] - g).abs() < 1e-12, "index {k}: {:?}", f[k]);
        }
        let mut max_second = 0.0f64;
        for i in 0..8 {
            for j in 0..16 {
                let d = f[i * 16 + (j + 1) % 16] - 2.0 * f[i * 16 + j] + f[i * 16 + (j + 15) % 16];
                max_second = max_second.max(d.abs());
            }
        }
        assert!(max_second < 3.0, "second difference {max_second}");
    }

    const GOLDEN_0: f64 = -0.33690297904797295;
    const GOLDEN_1: f64 = 0.15428900620593297;
    const GOLDEN_2: f64 = -0.291904704273497;
}
