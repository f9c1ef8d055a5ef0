//! Lat-lon grid geometry on the sphere.
//!
//! Latitudes run north to south in degrees, longitudes run east from 0.
//! The latitude quadrature `w(i) = cos(lat_i) / mean_j cos(lat_j)` is the
//! single source of every "geometric" (latitude-weighted) quantity.

mod harmonics;
mod masks;
mod solar;
pub mod time;

use alloc::vec::Vec;

use crate::math;
use crate::tensor::Tensor;
use crate::{CoreError, Result};

pub use harmonics::RandomHarmonicField;
pub use masks::{load_constant_masks, MaskSource, StaticChannelSet, StaticField, STD_EPSILON};
pub use solar::{cos_zenith, hour_angle_deg, solar_zenith_cos, SolarGeometry};

/// Geometry of a regular lat-lon grid.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSpec {
    lats: Vec<f64>,
    lons: Vec<f64>,
}

impl GridSpec {
    /// Validates explicit coordinate vectors.
    pub fn new(lats: Vec<f64>, lons: Vec<f64>) -> Result<Self> {
        if lats.is_empty() || lons.is_empty() {
            return Err(CoreError::InvalidGrid(
                "grid needs at least one row and column".into(),
            ));
        }
        if lats.iter().chain(&lons).any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidGrid("non-finite coordinate".into()));
        }
        if lats.iter().any(|&l| !(-90.0..=90.0).contains(&l)) {
            return Err(CoreError::InvalidGrid("latitude outside [-90, 90]".into()));
        }
        if lats.windows(2).any(|p| p[1] >= p[0]) {
            return Err(CoreError::InvalidGrid(
                "latitudes must be strictly decreasing (north to south)".into(),
            ));
        }
        let w = lons.len();
        let spacing = 360.0 / w as f64;
        for (j, &lon) in lons.iter().enumerate() {
            if !(0.0..360.0).contains(&lon) {
                return Err(CoreError::InvalidGrid("longitude outside [0, 360)".into()));
            }
            let expected = lons[0] + j as f64 * spacing;
            if (lon - expected).abs() > 1e-9 * 360.0 {
                return Err(CoreError::InvalidGrid(alloc::format!(
                    "longitudes must be equally spaced by {spacing} degrees"
                )));
            }
        }
        Ok(GridSpec { lats, lons })
    }

    /// Cell-centred equiangular grid: no pole rows, longitudes from 0.
    pub fn equiangular(n_lat: usize, n_lon: usize) -> Result<Self> {
        let dlat = 180.0 / n_lat as f64;
        let lats = (0..n_lat).map(|i| 90.0 - (i as f64 + 0.5) * dlat).collect();
        Self::new(lats, Self::regular_lons(n_lon))
    }

    /// Equiangular grid whose first and last rows sit on the poles, the
    /// layout of 0.25 degree reanalysis data (721 rows).
    pub fn with_poles(n_lat: usize, n_lon: usize) -> Result<Self> {
        if n_lat < 2 {
            return Err(CoreError::InvalidGrid(
                "a pole-to-pole grid needs two rows".into(),
            ));
        }
        let dlat = 180.0 / (n_lat - 1) as f64;
        let lats = (0..n_lat).map(|i| 90.0 - i as f64 * dlat).collect();
        Self::new(lats, Self::regular_lons(n_lon))
    }

    fn regular_lons(n_lon: usize) -> Vec<f64> {
        let dlon = 360.0 / n_lon as f64;
        (0..n_lon).map(|j| j as f64 * dlon).collect()
    }

    pub fn n_lat(&self) -> usize {
        self.lats.len()
    }

    pub fn n_lon(&self) -> usize {
        self.lons.len()
    }

    pub fn lats(&self) -> &[f64] {
        &self.lats
    }

    pub fn lons(&self) -> &[f64] {
        &self.lons
    }

    pub fn lon_spacing(&self) -> f64 {
        360.0 / self.n_lon() as f64
    }

    pub fn points(&self) -> usize {
        self.n_lat() * self.n_lon()
    }

    /// Latitude quadrature weights normalised to unit mean.
    pub fn quadrature_weights(&self) -> Result<Vec<f64>> {
        quadrature_weights(&self.lats)
    }

    /// `[3, H, W]` unit-sphere coordinates `(x, y, z)`.
    pub fn sphere_coordinates(&self) -> Tensor {
        let (h, w) = (self.n_lat(), self.n_lon());
        let mut data = alloc::vec![0.0; 3 * h * w];
        for (i, &lat) in self.lats.iter().enumerate() {
            for (j, &lon) in self.lons.iter().enumerate() {
                let [x, y, z] = unit_vector(lat, lon);
                data[i * w + j] = x;
                data[h * w + i * w + j] = y;
                data[2 * h * w + i * w + j] = z;
            }
        }
        Tensor::from_vec(&[3, h, w], data).expect("shape matches by construction")
    }

    /// Flattened `(x, y, z)` per grid point, row-major over `(lat, lon)`.
    pub fn point_coordinates(&self) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(self.points());
        for &lat in &self.lats {
            for &lon in &self.lons {
                out.push(unit_vector(lat, lon));
            }
        }
        out
    }

    /// Every `factor`-th row and column, keeping the first of each.
    pub fn subsample(&self, factor: usize) -> Result<GridSpec> {
        if factor == 0 || self.n_lon() % factor != 0 {
            return Err(CoreError::InvalidGrid(alloc::format!(
                "cannot subsample {} longitudes by {factor}",
                self.n_lon()
            )));
        }
        GridSpec::new(
            self.lats.iter().step_by(factor).copied().collect(),
            self.lons.iter().step_by(factor).copied().collect(),
        )
    }
}

/// `w(i) = cos(lat_i) / ((1/H) * sum_j cos(lat_j))` for latitudes in degrees.
pub fn quadrature_weights(lats_deg: &[f64]) -> Result<Vec<f64>> {
    if lats_deg.is_empty() {
        return Err(CoreError::InvalidGrid("no latitude rows".into()));
    }
    let cosines: Vec<f64> = lats_deg
        .iter()
        .map(|&l| {
            // cos(±90°) is ~6e-17 in floating point; pole rows weigh exactly zero
            if l.abs() == 90.0 {
                0.0
            } else {
                math::cos(math::to_radians(l))
            }
        })
        .collect();
    let mean = cosines.iter().sum::<f64>() / cosines.len() as f64;
    if mean <= 0.0 {
        return Err(CoreError::DegenerateQuadrature);
    }
    Ok(cosines.into_iter().map(|c| c / mean).collect())
}

/// Unit vector for a `(lat, lon)` pair in degrees.
pub fn unit_vector(lat_deg: f64, lon_deg: f64) -> [f64; 3] {
    let lat = math::to_radians(lat_deg);
    let lon = math::to_radians(lon_deg);
    let (cl, sl) = (math::cos(lat), math::sin(lat));
    [cl * math::cos(lon), cl * math::sin(lon), sl]
}
