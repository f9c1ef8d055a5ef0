//! Declarative experiment configuration (TOML).
//!
//! Unknown keys are rejected everywhere. The keys that change the physics of
//! an experiment (`formulation`, `loss.kind` and every `extras` field) have no
//! defaults and must be written out. Any key can be overridden from the
//! environment: `GRIDCAST__OPTIM__LR=0.01` sets `optim.lr`.

use std::path::{Path, PathBuf};

use gridcast_core::dataset::{SyntheticKind, SyntheticRecipe};
use gridcast_core::forecast::Formulation;
use gridcast_core::models::{GraphUnetConfig, ModelConfig, PaddingScheme, UnetConfig};
use gridcast_core::objectives::LossConfig;
use gridcast_core::perturb::NoiseConfig;
use gridcast_core::sphere::GridSpec;
use gridcast_core::training::{FinetuneConfig, OptimConfig, PretrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container;
use crate::error::{Error, Result};

/// Prefix of environment overrides; path segments are joined by `__`.
pub const ENV_PREFIX: &str = "GRIDCAST__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n_lat: usize,
    pub n_lon: usize,
    pub n_times: usize,
    pub n_channels: usize,
    #[serde(default)]
    pub seed: u64,
    /// Eastward rotation per step; one grid column when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_deg_per_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_wavenumber: Option<u32>,
    #[serde(default = "default_dt_seconds")]
    pub dt_seconds: i64,
}

fn default_dt_seconds() -> i64 {
    6 * 3600
}

impl SyntheticSpec {
    pub fn recipe(&self) -> Result<SyntheticRecipe> {
        let grid = GridSpec::equiangular(self.n_lat, self.n_lon)?;
        let mut r = SyntheticRecipe::new(self.kind, grid, self.n_times, self.n_channels, self.seed);
        r.dt_seconds = self.dt_seconds;
        if let Some(s) = self.shift_deg_per_step {
            r.shift_deg_per_step = s;
        }
        if let Some(n) = self.noise_scale {
            r.noise_scale = n;
        }
        if let Some(k) = self.max_wavenumber {
            r.max_wavenumber = k;
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// Directory of a dynamic array container.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Dataset steps between a model's input and its prediction.
    #[serde(default = "default_one")]
    pub stride_steps: usize,
}

fn default_train_fraction() -> f64 {
    0.7
}

fn default_val_fraction() -> f64 {
    0.15
}

fn default_one() -> usize {
    1
}

fn default_true() -> bool {
    true
}

/// Grid and channel names of the configured dataset, read without loading
/// the data.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetShape {
    pub grid: GridSpec,
    pub n_times: usize,
    pub channels: usize,
}

impl DatasetSpec {
    pub fn shape(&self) -> Result<DatasetShape> {
        match (&self.path, &self.synthetic) {
            (Some(path), None) => {
                let m = container::read_manifest(path)?;
                if m.kind != container::ContainerKind::Dynamic {
                    return Err(Error::Config(format!(
                        "{} is not a dynamic container",
                        path.display()
                    )));
                }
                Ok(DatasetShape {
                    grid: GridSpec::new(m.lats, m.lons)?,
                    n_times: m.dims[0],
                    channels: m.dims[1],
                })
            }
            (None, Some(s)) => Ok(DatasetShape {
                grid: GridSpec::equiangular(s.n_lat, s.n_lon)?,
                n_times: s.n_times,
                channels: s.n_channels,
            }),
            _ => Err(Error::Config(
                "dataset needs exactly one of `path` or `synthetic`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Unet,
    GraphUnet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default = "default_blocks")]
    pub n_blocks: usize,
    #[serde(default = "default_width")]
    pub base_width: usize,
    #[serde(default)]
    pub padding: PaddingScheme,
    #[serde(default = "default_true")]
    pub skips: bool,
    /// Graph UNet only: channels of the latent grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_channels: Option<usize>,
    /// Graph UNet only: neighbors per point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Graph UNet only: hidden width of the kernel network.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_width: Option<usize>,
}

fn default_blocks() -> usize {
    3
}

fn default_width() -> usize {
    16
}

impl ModelSpec {
    pub fn build_config(&self, in_channels: usize, out_channels: usize) -> Result<ModelConfig> {
        let unet = |cin, cout| UnetConfig {
            padding: self.padding,
            skips: self.skips,
            ..UnetConfig::new(self.n_blocks, self.base_width, cin, cout)
        };
        match self.kind {
            ModelKind::Unet => {
                if self.latent_channels.is_some() || self.k.is_some() || self.kernel_width.is_some()
                {
                    return Err(Error::Config(
                        "latent_channels, k and kernel_width only apply to kind = \"graph_unet\""
                            .into(),
                    ));
                }
                Ok(ModelConfig::Unet(unet(in_channels, out_channels)))
            }
            ModelKind::GraphUnet => {
                let d = self.latent_channels.unwrap_or(16);
                let mut cfg = GraphUnetConfig::new(in_channels, out_channels, unet(d, d));
                if let Some(k) = self.k {
                    cfg.k = k;
                }
                if let Some(w) = self.kernel_width {
                    cfg.kernel_width = w;
                }
                Ok(ModelConfig::GraphUnet(cfg))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtrasSpec {
    pub n_input_steps: usize,
    pub zenith: bool,
    pub coords: bool,
    pub masks: bool,
    /// Static container with the masks; synthetic masks when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSpec {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for OptimSpec {
    fn default() -> Self {
        let d = OptimConfig::default();
        OptimSpec {
            lr: d.lr,
            weight_decay: d.weight_decay,
            epochs: d.epochs,
            batch_size: d.batch_size,
        }
    }
}

impl OptimSpec {
    pub fn with_seed(&self, seed: u64) -> OptimConfig {
        OptimConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitCheckpoint {
    pub path: PathBuf,
    #[serde(default)]
    pub reinit_heads: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    /// Upper bound on evaluated initial conditions from the test split.
    pub max_initial_conditions: Option<usize>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            max_initial_conditions: Some(16),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_id: String,
    /// Free-form label of the varied setting (set by matrix sweeps).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Rollout lengths (model steps) to evaluate.
    pub horizons: Vec<usize>,
    pub formulation: Formulation,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub extras: ExtrasSpec,
    pub loss: LossConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub optim: OptimSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finetune: Option<FinetuneConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<InitCheckpoint>,
    #[serde(default)]
    pub evaluation: EvalSpec,
}

/// Environment overrides `(dotted key, raw value)` taken from `vars`.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<(String, String)> {
    vars.into_iter()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            Some((
                rest.split("__")
                    .map(str::to_lowercase)
                    .collect::<Vec<_>>()
                    .join("."),
                v,
            ))
        })
        .collect()
}

/// A raw override string as a TOML value; bare words become strings.
pub fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `key` (dotted) in `root`, creating intermediate tables.
pub fn set_key(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::Config(format!("empty key `{key}`")))?;
    let mut node = root;
    for p in parts {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{key}`: `{p}` is not inside a table")))?;
        node = table
            .entry(p)
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::Config(format!("`{key}` does not name a table entry")))?
        .insert(last.to_string(), value);
    Ok(())
}

/// Whether dotted `key` is present in `root`.
pub fn has_key(root: &toml::Value, key: &str) -> bool {
    key.split('.')
        .try_fold(root, |node, p| node.get(p))
        .is_some()
}

impl ExperimentConfig {
    /// Parses, applies overrides and validates.
    pub fn from_toml_str(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut value: toml::Value =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        for (k, v) in overrides {
            set_key(&mut value, k, parse_value(v))?;
        }
        Self::from_value(value)
    }

    pub fn from_value(value: toml::Value) -> Result<Self> {
        let cfg: ExperimentConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes relative data paths relative to `base`.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = &mut self.dataset.path {
            fix(p);
        }
        if let Some(p) = &mut self.extras.masks_path {
            fix(p);
        }
        if let Some(c) = &mut self.init_checkpoint {
            fix(&mut c.path);
        }
    }

    pub fn to_value(&self) -> toml::Value {
        toml::Value::try_from(self).expect("config serializes to TOML")
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// Input channels of the model: stacked steps plus extras.
    pub fn input_channels(&self, shape: &DatasetShape, n_masks: usize) -> usize {
        let e = &self.extras;
        e.n_input_steps * shape.channels
            + usize::from(e.zenith)
            + if e.coords { 3 } else { 0 }
            + n_masks
    }

    pub fn model_config(&self, shape: &DatasetShape, n_masks: usize) -> Result<ModelConfig> {
        self.model
            .build_config(self.input_channels(shape, n_masks), shape.channels)
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.run_id.is_empty()
            || self.run_id.contains(['/', '\\'])
            || self.run_id.starts_with('.')
        {
            return bad(format!(
                "run_id `{}` is not a valid directory name",
                self.run_id
            ));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return bad("horizons must be a non-empty list of positive step counts".into());
        }
        let d = &self.dataset;
        if !(d.train_fraction > 0.0
            && d.val_fraction >= 0.0
            && d.train_fraction + d.val_fraction < 1.0)
        {
            return bad(
                "dataset fractions must satisfy 0 < train, 0 <= val, train + val < 1".into(),
            );
        }
        if d.stride_steps == 0 {
            return bad("dataset.stride_steps must be at least 1".into());
        }
        if self.extras.n_input_steps == 0 {
            return bad("extras.n_input_steps must be at least 1".into());
        }
        if !self.extras.masks && self.extras.masks_path.is_some() {
            return bad("extras.masks_path is set but extras.masks is false".into());
        }
        self.loss.validate()?;
        self.noise.validate()?;
        self.optim.with_seed(self.seed).validate()?;
        if let Some(p) = &self.pretrain {
            p.validate()?;
        }
        if let Some(f) = &self.finetune {
            f.validate()?;
        }
        let shape = d.shape()?;
        if let Some(s) = &d.synthetic {
            s.recipe()?;
        }
        // Synthetic masks always come as three fields.
        let n_masks = match (&self.extras.masks, &self.extras.masks_path) {
            (false, _) => 0,
            (true, None) => 3,
            (true, Some(path)) => {
                let m = container::read_manifest(path)?;
                if m.kind != container::ContainerKind::Static
                    || m.lats != shape.grid.lats()
                    || m.lons != shape.grid.lons()
                {
                    return bad(format!(
                        "{} is not a static container on the dataset grid",
                        path.display()
                    ));
                }
                m.channels.len()
            }
        };
        let model = self.model_config(&shape, n_masks)?;
        model.validate()?;
        if let ModelConfig::Unet(u) = &model {
            u.check_grid(shape.grid.n_lat(), shape.grid.n_lon())?;
        }
        if let ModelConfig::GraphUnet(g) = &model {
            g.core.check_grid(shape.grid.n_lat(), shape.grid.n_lon())?;
        }
        let splits = self.splits(shape.n_times)?;
        let n = self.extras.n_input_steps;
        let stride = d.stride_steps;
        let longest_stage = self
            .finetune
            .as_ref()
            .and_then(|f| f.stages.iter().max().copied())
            .unwrap_or(1);
        let need_train = n + longest_stage * stride;
        if splits.train.len() < need_train {
            return bad(format!(
                "train split has {} steps, needs {need_train} for the longest rollout",
                splits.train.len()
            ));
        }
        let longest = *self.horizons.iter().max().expect("non-empty");
        if splits.test.len() < n + longest * stride {
            return bad(format!(
                "test split has {} steps, needs {} for horizon {longest}",
                splits.test.len(),
                n + longest * stride
            ));
        }
        Ok(())
    }

    pub fn splits(&self, n_times: usize) -> Result<gridcast_core::dataset::Splits> {
        Ok(gridcast_core::dataset::Splits::by_fraction(
            n_times,
            self.dataset.train_fraction,
            self.dataset.val_fraction,
        )?)
    }

    /// Canonical JSON of every field that affects results (everything but
    /// `run_id` and `label`), with sorted keys.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes to JSON");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("run_id");
            obj.remove("label");
        }
        v.to_string()
    }

    /// Hex SHA-256 of [`ExperimentConfig::canonical_json`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn display_label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.run_id)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
run_id = "mini"
seed = 1
horizons = [1, 2]
formulation = "delta"

[dataset.synthetic]
kind = "solid_rotation_advection"
n_lat = 4
n_lon = 8
n_times = 40
n_channels = 2

[model]
kind = "unet"
n_blocks = 2
base_width = 4

[extras]
n_input_steps = 1
zenith = true
coords = false
masks = false

[loss]
kind = "geo_mse"

[optim]
epochs = 1
"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.optim.lr, 1e-3);
        assert_eq!(cfg.dataset.stride_steps, 1);
        let shape = cfg.dataset.shape().unwrap();
        assert_eq!(cfg.input_channels(&shape, 0), 3);
    }

    #[test]
    fn physics_keys_are_required() {
        for key in [
            "formulation = \"delta\"\n",
            "zenith = true\n",
            "kind = \"geo_mse\"\n",
        ] {
            let text = MINIMAL.replacen(key, "", 1);
            let err = ExperimentConfig::from_toml_str(&text, &[]).unwrap_err();
            assert!(err.to_string().contains("missing field"), "{err}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("epochs = 1", "epochs = 1\nmomentum = 0.9");
        assert!(ExperimentConfig::from_toml_str(&text, &[]).is_err());
        let text = MINIMAL.replace(
            "base_width = 4",
            "base_width = 4\npadding = { x_mode = \"wrap\" }",
        );
        assert!(ExperimentConfig::from_toml_str(&text, &[]).is_err());
    }

    #[test]
    fn overrides_from_environment() {
        let vars = vec![
            ("GRIDCAST__OPTIM__LR".to_string(), "0.01".to_string()),
            ("GRIDCAST__FORMULATION".to_string(), "direct".to_string()),
            (
                "GRIDCAST__MODEL__PADDING__X_MODE".to_string(),
                "zero".to_string(),
            ),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let o = env_overrides(vars);
        assert_eq!(o.len(), 3);
        let cfg = ExperimentConfig::from_toml_str(MINIMAL, &o).unwrap();
        assert_eq!(cfg.optim.lr, 0.01);
        assert_eq!(cfg.formulation, Formulation::Direct);
        assert_eq!(
            cfg.model.padding.x_mode,
            gridcast_core::models::XPadding::Zero
        );
    }

    #[test]
    fn hash_tracks_meaningful_fields_only() {
        let a = ExperimentConfig::from_toml_str(MINIMAL, &[]).unwrap();
        let mut b = a.clone();
        b.run_id = "other".into();
        b.label = Some("x".into());
        assert_eq!(a.hash(), b.hash());
        b.optim.lr = 2e-3;
        assert_ne!(a.hash(), b.hash());
        let round = ExperimentConfig::from_toml_str(&a.to_toml_string(), &[]).unwrap();
        assert_eq!(round, a);
        assert_eq!(round.hash(), a.hash());
    }

    #[test]
    fn validation_before_work() {
        let bad_grid = MINIMAL.replace("n_lon = 8", "n_lon = 9");
        assert!(ExperimentConfig::from_toml_str(&bad_grid, &[]).is_err());
        let short = MINIMAL.replace("n_times = 40", "n_times = 6");
        assert!(ExperimentConfig::from_toml_str(&short, &[]).is_err());
        let graph_keys = MINIMAL.replace("base_width = 4", "base_width = 4\nk = 3");
        assert!(ExperimentConfig::from_toml_str(&graph_keys, &[]).is_err());
    }
}
