//! Array container on disk: a directory with `manifest.json` and
//! `data.f32`, the raw little-endian `f32` values in C order.
//!
//! Dynamic series are stored as `[T, C, H, W]` with ISO-8601 UTC timestamps;
//! static fields (constant masks) as `[C, H, W]` with `kind = "static"`.
//! Reading a container and writing it back reproduces both files byte for
//! byte.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use gridcast_core::dataset::{ChannelSchema, WeatherSeries};
use gridcast_core::sphere::time::Timestamp;
use gridcast_core::sphere::GridSpec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const DATA: &str = "data.f32";
const FORMAT: &str = "gridcast-array";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainerKind {
    Dynamic,
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub kind: ContainerKind,
    /// `[T, C, H, W]` for dynamic containers, `[C, H, W]` for static ones.
    pub dims: Vec<usize>,
    pub channels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<Option<f64>>>,
    pub lats: Vec<f64>,
    pub lons: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub timestamps: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
}

impl Manifest {
    fn values(&self) -> usize {
        self.dims.iter().product()
    }

    fn frame_len(&self) -> usize {
        self.dims[1..].iter().product()
    }
}

pub fn format_timestamp(ts: Timestamp) -> Result<String> {
    DateTime::<Utc>::from_timestamp(ts, 0)
        .map(|d| d.to_rfc3339_opts(SecondsFormat::Secs, true))
        .ok_or_else(|| Error::Config(format!("timestamp {ts} is out of range")))
}

pub fn parse_timestamp(s: &str) -> Option<Timestamp> {
    DateTime::parse_from_rfc3339(s).ok().map(|d| d.timestamp())
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    let path = dir.join(MANIFEST);
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn write_values(dir: &Path, values: &[f64]) -> Result<()> {
    let path = dir.join(DATA);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BufWriter::new(file);
    for &v in values {
        out.write_all(&(v as f32).to_le_bytes())
            .map_err(|e| Error::io(&path, e))?;
    }
    out.flush().map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(Error::format(
            &path,
            format!("unsupported container {} v{}", m.format, m.version),
        ));
    }
    let rank = match m.kind {
        ContainerKind::Dynamic => 4,
        ContainerKind::Static => 3,
    };
    let bad = |msg: String| Err(Error::format(&path, msg));
    if m.dims.len() != rank {
        return bad(format!(
            "{:?} container needs {rank} dims, found {:?}",
            m.kind, m.dims
        ));
    }
    let (c, h, w) = (m.dims[rank - 3], m.dims[rank - 2], m.dims[rank - 1]);
    if m.channels.len() != c || m.lats.len() != h || m.lons.len() != w {
        return bad("dims disagree with channel or coordinate lists".into());
    }
    if m.kind == ContainerKind::Dynamic && m.timestamps.len() != m.dims[0] {
        return bad("timestamp count disagrees with dims".into());
    }
    Ok(m)
}

fn read_values(dir: &Path, expected: usize) -> Result<Vec<f64>> {
    let path = dir.join(DATA);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
    if len != expected as u64 * 4 {
        return Err(Error::format(
            &path,
            format!("expected {} bytes, found {len}", expected * 4),
        ));
    }
    let mut bytes = Vec::with_capacity(expected * 4);
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(&path, e))?;
    Ok(decode(&bytes))
}

fn decode(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect()
}

/// Writes `series` (values rounded to `f32`) into `dir`, creating it.
pub fn write_series(dir: &Path, series: &WeatherSeries) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let [t, c, h, w] = series.dims();
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        kind: ContainerKind::Dynamic,
        dims: vec![t, c, h, w],
        channels: series.schema.names.clone(),
        levels: series
            .schema
            .levels
            .iter()
            .any(Option::is_some)
            .then(|| series.schema.levels.clone()),
        lats: series.grid.lats().to_vec(),
        lons: series.grid.lons().to_vec(),
        timestamps: series
            .timestamps
            .iter()
            .map(|&ts| format_timestamp(ts))
            .collect::<Result<_>>()?,
        normalization: Some(Normalization {
            mean: series.schema.mean.clone(),
            std: series.schema.std.clone(),
        }),
    };
    write_manifest(dir, &manifest)?;
    write_values(dir, &series.data)
}

fn grid_of(dir: &Path, m: &Manifest) -> Result<GridSpec> {
    GridSpec::new(m.lats.clone(), m.lons.clone())
        .map_err(|e| Error::format(dir.join(MANIFEST), e.to_string()))
}

/// Reads a dynamic container.
pub fn read_series(dir: &Path) -> Result<WeatherSeries> {
    let m = read_manifest(dir)?;
    let path = dir.join(MANIFEST);
    if m.kind != ContainerKind::Dynamic {
        return Err(Error::format(&path, "expected a dynamic container"));
    }
    let grid = grid_of(dir, &m)?;
    let c = m.channels.len();
    let mut schema = ChannelSchema::new(m.channels.clone());
    if let Some(levels) = &m.levels {
        schema.levels = levels.clone();
    }
    if let Some(n) = &m.normalization {
        schema.mean = n.mean.clone();
        schema.std = n.std.clone();
    }
    if schema.levels.len() != c || schema.mean.len() != c {
        return Err(Error::format(
            &path,
            "per-channel lists disagree with the channel count",
        ));
    }
    let timestamps = m
        .timestamps
        .iter()
        .map(|s| {
            parse_timestamp(s).ok_or_else(|| Error::format(&path, format!("bad timestamp `{s}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let data = read_values(dir, m.values())?;
    Ok(WeatherSeries::new(grid, schema, timestamps, data)?)
}

/// Reads the `[C, H, W]` frame at time index `t` without loading the rest.
pub fn read_frame(dir: &Path, t: usize) -> Result<Vec<f64>> {
    let m = read_manifest(dir)?;
    if m.kind != ContainerKind::Dynamic || t >= m.dims[0] {
        return Err(Error::format(dir.join(MANIFEST), format!("no frame {t}")));
    }
    let n = m.frame_len();
    let path = dir.join(DATA);
    let mut file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    file.seek(SeekFrom::Start((t * n * 4) as u64))
        .map_err(|e| Error::io(&path, e))?;
    let mut bytes = vec![0u8; n * 4];
    file.read_exact(&mut bytes)
        .map_err(|e| Error::io(&path, e))?;
    Ok(decode(&bytes))
}

/// Writes named `H x W` static fields (for example constant masks).
pub fn write_static(dir: &Path, grid: &GridSpec, fields: &[(String, Vec<f64>)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if let Some((name, _)) = fields.iter().find(|(_, d)| d.len() != grid.points()) {
        return Err(Error::Config(format!(
            "static field `{name}` does not match the grid"
        )));
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        kind: ContainerKind::Static,
        dims: vec![fields.len(), grid.n_lat(), grid.n_lon()],
        channels: fields.iter().map(|(n, _)| n.clone()).collect(),
        levels: None,
        lats: grid.lats().to_vec(),
        lons: grid.lons().to_vec(),
        timestamps: Vec::new(),
        normalization: None,
    };
    write_manifest(dir, &manifest)?;
    let values: Vec<f64> = fields.iter().flat_map(|(_, d)| d.iter().copied()).collect();
    write_values(dir, &values)
}

/// Reads a static container into its grid and named fields.
pub fn read_static(dir: &Path) -> Result<(GridSpec, Vec<(String, Vec<f64>)>)> {
    let m = read_manifest(dir)?;
    if m.kind != ContainerKind::Static {
        return Err(Error::format(
            dir.join(MANIFEST),
            "expected kind = \"static\"",
        ));
    }
    let grid = grid_of(dir, &m)?;
    let data = read_values(dir, m.values())?;
    let fields = m
        .channels
        .iter()
        .zip(data.chunks(grid.points()))
        .map(|(n, d)| (n.clone(), d.to_vec()))
        .collect();
    Ok((grid, fields))
}
