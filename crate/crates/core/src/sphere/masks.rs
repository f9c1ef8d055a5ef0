//! Static per-location channels: unit-sphere coordinates and the constant
//! masks (topography, soil type, land-sea).

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use super::{GridSpec, RandomHarmonicField};
use crate::rng::substream;
use crate::{CoreError, Result};

/// Floor applied to standard deviations before dividing by them.
pub const STD_EPSILON: f64 = 1e-8;

/// One standardized `H x W` static field and the stats that produced it.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StaticField {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub data: Vec<f64>,
}

impl StaticField {
    /// Standardizes `raw` by its own mean and (epsilon-guarded) std.
    pub fn standardized(name: &str, raw: &[f64]) -> Self {
        let n = raw.len() as f64;
        let mean = raw.iter().sum::<f64>() / n;
        let var = raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let mut std = crate::math::sqrt(var);
        if std < STD_EPSILON {
            log::warn!("static field `{name}` has zero variance; std guarded to {STD_EPSILON}");
            std = STD_EPSILON;
        }
        StaticField {
            name: name.to_string(),
            mean,
            std,
            data: raw.iter().map(|v| (v - mean) / std).collect(),
        }
    }

    /// Stored as-is with identity stats (used for the coordinate channels).
    pub fn raw(name: &str, data: Vec<f64>) -> Self {
        StaticField {
            name: name.to_string(),
            mean: 0.0,
            std: 1.0,
            data,
        }
    }
}

/// Named static channels of one grid.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StaticChannelSet {
    pub fields: Vec<StaticField>,
}

impl StaticChannelSet {
    /// `coords_x`, `coords_y`, `coords_z` for `grid`.
    pub fn coordinates(grid: &GridSpec) -> Self {
        let c = grid.sphere_coordinates();
        let hw = grid.points();
        let fields = ["coords_x", "coords_y", "coords_z"]
            .iter()
            .enumerate()
            .map(|(k, name)| StaticField::raw(name, c.data()[k * hw..(k + 1) * hw].to_vec()))
            .collect();
        StaticChannelSet { fields }
    }

    pub fn get(&self, name: &str) -> Option<&StaticField> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn extend(&mut self, other: StaticChannelSet) {
        self.fields.extend(other.fields);
    }
}

/// Where constant masks come from.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskSource {
    /// Raw `H x W` fields, for example read from a static container.
    Fields(Vec<(String, Vec<f64>)>),
    /// Deterministic synthetic topography, soil type and land-sea mask.
    Synthetic { seed: u64 },
}

/// Standardized constant masks for `grid`.
pub fn load_constant_masks(grid: &GridSpec, source: &MaskSource) -> Result<StaticChannelSet> {
    let hw = grid.points();
    let raw = match source {
        MaskSource::Fields(fields) => {
            for (name, data) in fields {
                if data.len() != hw {
                    return Err(CoreError::ShapeMismatch {
                        context: alloc::format!("constant mask `{name}`"),
                        expected: alloc::vec![grid.n_lat(), grid.n_lon()],
                        found: alloc::vec![data.len()],
                    });
                }
            }
            fields.clone()
        }
        MaskSource::Synthetic { seed } => synthetic_masks(grid, *seed),
    };
    Ok(StaticChannelSet {
        fields: raw
            .iter()
            .map(|(name, data)| StaticField::standardized(name, data))
            .collect(),
    })
}

fn synthetic_masks(grid: &GridSpec, seed: u64) -> Vec<(String, Vec<f64>)> {
    let mut rng = substream(seed, 0x7075);
    let relief = RandomHarmonicField::sample(&mut rng, 5).render(grid, 0.0);
    let topography: Vec<f64> = relief.iter().map(|v| v.max(0.0) * 1000.0).collect();
    let land_sea: Vec<f64> = relief
        .iter()
        .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
        .collect();
    let soil_field = RandomHarmonicField::sample(&mut rng, 3).render(grid, 0.0);
    let classes = 1 + rng.random_range(4..8u32);
    let soil_type: Vec<f64> = soil_field
        .iter()
        .zip(&land_sea)
        .map(|(&s, &land)| {
            if land == 0.0 {
                0.0
            } else {
                let u = 0.5 + 0.5 * libm::tanh(s);
                (1.0 + libm::floor(u * f64::from(classes - 1))).min(f64::from(classes - 1))
            }
        })
        .collect();
    alloc::vec![
        ("topography".to_string(), topography),
        ("soil_type".to_string(), soil_type),
        ("land_sea".to_string(), land_sea),
    ]
}
