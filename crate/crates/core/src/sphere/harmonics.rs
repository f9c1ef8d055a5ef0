use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::GridSpec;
use crate::math;

#[derive(Debug, Clone, PartialEq)]
struct Mode {
    zonal: u32,
    meridional: u32,
    amplitude: f64,
    lon_phase: f64,
    lat_phase: f64,
}

/// Smooth random function on the sphere built from a few low-order
/// zonal/meridional modes.
///
/// Zonal wavenumber `m` is tapered by `cos(lat)^m` so the function is
/// single-valued at the poles. It can be evaluated at any `(lat, lon)`,
/// which makes exact rotations of the field cheap to generate.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomHarmonicField {
    modes: Vec<Mode>,
}

impl RandomHarmonicField {
    /// Draws amplitudes `N(0, 1) / (1 + m + l)` for `m, l <= max_wavenumber`.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, max_wavenumber: u32) -> Self {
        let mut modes = Vec::new();
        for zonal in 0..=max_wavenumber {
            for meridional in 0..=max_wavenumber {
                let z: f64 = StandardNormal.sample(rng);
                modes.push(Mode {
                    zonal,
                    meridional,
                    amplitude: z / f64::from(1 + zonal + meridional),
                    lon_phase: rng.random::<f64>() * 2.0 * math::PI,
                    lat_phase: rng.random::<f64>() * 2.0 * math::PI,
                });
            }
        }
        RandomHarmonicField { modes }
    }

    pub fn eval(&self, lat_deg: f64, lon_deg: f64) -> f64 {
        let lat = math::to_radians(lat_deg);
        let lon = math::to_radians(lon_deg);
        let cl = math::cos(lat);
        self.modes
            .iter()
            .map(|m| {
                m.amplitude
                    * math::powi(cl, m.zonal as i32)
                    * math::cos(f64::from(m.meridional) * lat + m.lat_phase)
                    * math::cos(f64::from(m.zonal) * lon + m.lon_phase)
            })
            .sum()
    }

    /// Row-major `H x W` samples with the longitudes offset by `lon_shift_deg`.
    pub fn render(&self, grid: &GridSpec, lon_shift_deg: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(grid.points());
        for &lat in grid.lats() {
            for &lon in grid.lons() {
                out.push(self.eval(lat, lon - lon_shift_deg));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn pole_value_is_longitude_independent() {
        let f = RandomHarmonicField::sample(&mut seeded(3), 4);
        let a = f.eval(90.0, 0.0);
        for lon in [45.0, 133.0, 270.0] {
            assert!((f.eval(90.0, lon) - a).abs() < 1e-12);
        }
    }

    #[test]
    fn shifted_render_matches_rolled_columns() {
        let g = GridSpec::equiangular(4, 8).unwrap();
        let f = RandomHarmonicField::sample(&mut seeded(1), 3);
        let base = f.render(&g, 0.0);
        let shifted = f.render(&g, g.lon_spacing());
        for i in 0..4 {
            for j in 0..8 {
                let src = base[i * 8 + (j + 7) % 8];
                assert!((shifted[i * 8 + j] - src).abs() < 1e-12);
            }
        }
    }
}
