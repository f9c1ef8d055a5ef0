//! One-axis sweeps: the same base configuration run once per value of a
//! single key.

use std::path::Path;
use std::str::FromStr;

use crate::config::{has_key, parse_value, set_key, ExperimentConfig};
use crate::error::{Error, Result};
use crate::run::{run_experiment, RunSummary};

/// A key and the values it takes, written `key=v1,v2,...` on the command
/// line. Values are TOML literals; bare words are strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<toml::Value>,
}

/// Splits on commas outside brackets and quotes.
fn split_top_level(s: &str) -> Vec<&str> {
    let (mut depth, mut quoted, mut start) = (0i32, false, 0);
    let mut parts = Vec::new();
    for (i, ch) in s.char_indices() {
        match ch {
            '"' => quoted = !quoted,
            '[' | '{' if !quoted => depth += 1,
            ']' | '}' if !quoted => depth -= 1,
            ',' if !quoted && depth == 0 => {
                parts.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(s[start..].trim());
    parts
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (key, values) = s
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("axis `{s}` must look like key=v1,v2")))?;
        let values: Vec<toml::Value> = split_top_level(values)
            .into_iter()
            .filter(|v| !v.is_empty())
            .map(parse_value)
            .collect();
        if key.trim().is_empty() || values.is_empty() {
            return Err(Error::Usage(format!(
                "axis `{s}` needs a key and at least one value"
            )));
        }
        Ok(Axis {
            key: key.trim().to_string(),
            values,
        })
    }
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// The full dotted path `key` refers to in `base`. A key present as
/// written wins; otherwise it may be given relative to one top-level table
/// (`padding.x_mode` for `model.padding.x_mode`), provided exactly one such
/// placement yields a valid configuration.
pub fn resolve_key(base: &toml::Value, key: &str, probe: &toml::Value) -> Result<String> {
    if has_key(base, key) {
        return Ok(key.to_string());
    }
    let mut candidates = vec![key.to_string()];
    if let Some(t) = base.as_table() {
        candidates.extend(
            t.iter()
                .filter(|(_, v)| v.is_table())
                .map(|(name, _)| format!("{name}.{key}")),
        );
    }
    let existing: Vec<&String> = candidates.iter().filter(|c| has_key(base, c)).collect();
    if let [one] = existing.as_slice() {
        return Ok((*one).clone());
    }
    let valid: Vec<&String> = candidates
        .iter()
        .filter(|c| {
            let mut v = base.clone();
            set_key(&mut v, c, probe.clone()).is_ok() && ExperimentConfig::from_value(v).is_ok()
        })
        .collect();
    match valid.as_slice() {
        [one] => Ok((*one).clone()),
        [] => Err(Error::Config(format!(
            "`{key}` is not a configuration key (or `{}` is not a valid value)",
            value_text(probe)
        ))),
        many => Err(Error::Config(format!("`{key}` is ambiguous: {many:?}"))),
    }
}

/// One validated configuration per axis value; nothing runs if any value
/// is invalid.
pub fn expand(base: &toml::Value, axis: &Axis) -> Result<Vec<ExperimentConfig>> {
    let base_cfg = ExperimentConfig::from_value(base.clone())?;
    let key = resolve_key(base, &axis.key, &axis.values[0])?;
    axis.values
        .iter()
        .map(|value| {
            let mut v = base.clone();
            set_key(&mut v, &key, value.clone())?;
            let text = value_text(value);
            let leaf = key.rsplit('.').next().expect("non-empty key");
            set_key(
                &mut v,
                "run_id",
                toml::Value::String(slug(&format!("{}__{leaf}-{text}", base_cfg.run_id))),
            )?;
            set_key(
                &mut v,
                "label",
                toml::Value::String(format!("{}={text}", axis.key)),
            )?;
            ExperimentConfig::from_value(v)
                .map_err(|e| Error::Config(format!("{}={text}: {e}", axis.key)))
        })
        .collect()
}

/// Expands the axis, then runs every configuration in order.
pub fn run_matrix(
    base: &toml::Value,
    axis: &Axis,
    root: &Path,
    force: bool,
) -> Result<Vec<RunSummary>> {
    let configs = expand(base, axis)?;
    configs
        .iter()
        .map(|c| run_experiment(c, root, force))
        .collect()
}
