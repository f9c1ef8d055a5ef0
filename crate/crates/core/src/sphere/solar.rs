//! Cosine of the solar zenith angle from day-of-year declination and
//! UTC-plus-longitude hour angle (NOAA Fourier-series approximations).

use alloc::vec::Vec;

use super::time::{days_in_year, CivilTime, Timestamp};
use super::GridSpec;
use crate::math::{self, PI};
use crate::tensor::Tensor;

/// Sun position parameters that are shared by every grid point at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolarGeometry {
    /// Solar declination in radians.
    pub declination: f64,
    /// Equation of time in minutes.
    pub equation_of_time: f64,
    /// UTC hours since midnight.
    pub utc_hours: f64,
}

impl SolarGeometry {
    pub fn at(ts: Timestamp) -> Self {
        let civil = CivilTime::from_timestamp(ts);
        let hours = civil.hours();
        let year_len = f64::from(days_in_year(civil.year));
        // fractional year in radians
        let g =
            2.0 * PI / year_len * (f64::from(civil.day_of_year()) - 1.0 + (hours - 12.0) / 24.0);
        let (c1, s1) = (math::cos(g), math::sin(g));
        let (c2, s2) = (math::cos(2.0 * g), math::sin(2.0 * g));
        let (c3, s3) = (math::cos(3.0 * g), math::sin(3.0 * g));
        let declination = 0.006918 - 0.399912 * c1 + 0.070257 * s1 - 0.006758 * c2 + 0.000907 * s2
            - 0.002697 * c3
            + 0.00148 * s3;
        let equation_of_time =
            229.18 * (0.000075 + 0.001868 * c1 - 0.032077 * s1 - 0.014615 * c2 - 0.040849 * s2);
        SolarGeometry {
            declination,
            equation_of_time,
            utc_hours: hours,
        }
    }

    /// Hour angle in degrees at longitude `lon_deg` (east positive).
    pub fn hour_angle_deg(&self, lon_deg: f64) -> f64 {
        hour_angle_deg(self.utc_hours, lon_deg, self.equation_of_time)
    }
}

/// Hour angle in degrees: zero at local solar noon, negative in the morning.
pub fn hour_angle_deg(utc_hours: f64, lon_deg: f64, equation_of_time_min: f64) -> f64 {
    let true_solar_minutes = utc_hours * 60.0 + equation_of_time_min + 4.0 * lon_deg;
    true_solar_minutes / 4.0 - 180.0
}

/// `sin(lat) sin(decl) + cos(lat) cos(decl) cos(h)`, clipped to `[-1, 1]`.
pub fn cos_zenith(lat_deg: f64, declination: f64, hour_angle_deg: f64) -> f64 {
    let lat = math::to_radians(lat_deg);
    let h = math::to_radians(hour_angle_deg);
    let v = math::sin(lat) * math::sin(declination)
        + math::cos(lat) * math::cos(declination) * math::cos(h);
    v.clamp(-1.0, 1.0)
}

/// `[1, H, W]` field of the cosine of the solar zenith angle at `ts`.
pub fn solar_zenith_cos(grid: &GridSpec, ts: Timestamp) -> Tensor {
    let sun = SolarGeometry::at(ts);
    let hour_angles: Vec<f64> = grid
        .lons()
        .iter()
        .map(|&lon| sun.hour_angle_deg(lon))
        .collect();
    let mut data = Vec::with_capacity(grid.points());
    for &lat in grid.lats() {
        for &h in &hour_angles {
            data.push(cos_zenith(lat, sun.declination, h));
        }
    }
    Tensor::from_vec(&[1, grid.n_lat(), grid.n_lon()], data).expect("shape matches by construction")
}
