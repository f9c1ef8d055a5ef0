use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = CoreError> = core::result::Result<T, E>;

/// Every failure the numerical core can report.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("quadrature weights undefined: cosine sum over latitudes is zero")]
    DegenerateQuadrature,
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("empty split: {0}")]
    EmptySplit(String),
    #[error("series too short: {needed} steps needed, {available} available")]
    InsufficientLength { needed: usize, available: usize },
    #[error("unknown {what} `{name}`")]
    UnknownKind { what: &'static str, name: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("timestamp required for the zenith channel but none was given")]
    MissingTimestamp,
    #[error("timestamp arithmetic overflow")]
    TimestampOverflow,
    #[error("padding ({py}, {px}) too large for a {h}x{w} field")]
    PaddingTooLarge {
        py: usize,
        px: usize,
        h: usize,
        w: usize,
    },
    #[error("grid {h}x{w} is not divisible by {factor} (required by {blocks} UNet blocks)")]
    Divisibility {
        factor: usize,
        blocks: usize,
        h: usize,
        w: usize,
    },
    #[error("neighborhood size {k} exceeds the {available} available points")]
    NeighborhoodTooLarge { k: usize, available: usize },
    #[error("point set is missing coordinates: {0}")]
    MissingCoordinates(String),
    #[error("perlin lattice needs at least 2 cells per axis, got {lat}x{lon}")]
    LatticeTooCoarse { lat: usize, lon: usize },
    #[error("mask ratio {ratio} selects no channel out of {channels}")]
    NoMaskedChannels { ratio: f64, channels: usize },
    #[error("training diverged at step {step}: loss {loss} (last finite loss {last_finite:?})")]
    Divergence {
        step: usize,
        loss: f64,
        last_finite: Option<f64>,
    },
    #[error("checkpoint shares no loadable parameter with the model")]
    NothingLoaded,
}

impl CoreError {
    pub(crate) fn shape(context: &str, expected: &[usize], found: &[usize]) -> Self {
        CoreError::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }
}
