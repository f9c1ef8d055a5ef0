use alloc::string::String;
use alloc::vec::Vec;

use crate::models::Network;
use crate::rng::seeded;
use crate::tensor::Tensor;
use crate::{CoreError, Result};

/// Named parameter tensors of a saved network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_network<N: Network + ?Sized>(net: &N) -> Self {
        Checkpoint {
            entries: net
                .params()
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// Outcome of [`load_partial_checkpoint`], by parameter name.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LoadReport {
    /// Model parameters copied from the checkpoint.
    pub loaded: Vec<String>,
    /// Model parameters left at or redrawn from their initializer.
    pub reinitialized: Vec<String>,
    /// Checkpoint entries that were not used.
    pub skipped: Vec<String>,
}

impl LoadReport {
    /// Plain-text listing, one section per outcome.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (title, names) in [
            ("loaded", &self.loaded),
            ("reinitialized", &self.reinitialized),
            ("skipped", &self.skipped),
        ] {
            out.push_str(&alloc::format!("{title} ({}):\n", names.len()));
            for n in names {
                out.push_str("  ");
                out.push_str(n);
                out.push('\n');
            }
        }
        out
    }
}

/// Copies every checkpoint tensor whose name and shape match a model
/// parameter. The first and last layers are redrawn when `reinit_heads` is
/// set; any parameter whose shape differs is redrawn as well. The model is
/// left untouched when nothing could be loaded.
pub fn load_partial_checkpoint<N: Network + ?Sized>(
    net: &mut N,
    checkpoint: &Checkpoint,
    reinit_heads: bool,
    seed: u64,
) -> Result<LoadReport> {
    let heads = net.boundary_params();
    let mut params = net.params().clone();
    let mut rng = seeded(seed);
    let mut report = LoadReport::default();
    let mut used = alloc::vec![false; checkpoint.entries.len()];
    for i in 0..params.len() {
        let name = params.get(i).name.clone();
        let found = checkpoint.entries.iter().position(|(n, _)| *n == name);
        let head = reinit_heads && heads.contains(&i);
        match found {
            Some(j) if !head && checkpoint.entries[j].1.shape() == params.value(i).shape() => {
                *params.value_mut(i) = checkpoint.entries[j].1.clone();
                used[j] = true;
                report.loaded.push(name);
            }
            _ => {
                params.reinit(i, &mut rng);
                report.reinitialized.push(name);
            }
        }
    }
    report.skipped = checkpoint
        .entries
        .iter()
        .zip(&used)
        .filter(|(_, &u)| !u)
        .map(|((n, _), _)| n.clone())
        .collect();
    if report.loaded.is_empty() {
        return Err(CoreError::NothingLoaded);
    }
    *net.params_mut() = params;
    log::info!(
        "checkpoint: {} loaded, {} reinitialized, {} skipped",
        report.loaded.len(),
        report.reinitialized.len(),
        report.skipped.len()
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Unet, UnetConfig};

    #[test]
    fn identical_architecture_loads_everything() {
        let src = Unet::new(UnetConfig::new(2, 4, 3, 2), 1).unwrap();
        let mut dst = Unet::new(UnetConfig::new(2, 4, 3, 2), 2).unwrap();
        let r =
            load_partial_checkpoint(&mut dst, &Checkpoint::from_network(&src), false, 0).unwrap();
        assert_eq!(r.loaded.len(), src.params().len());
        assert!(r.skipped.is_empty() && r.reinitialized.is_empty());
        assert_eq!(dst.params(), src.params());
    }

    #[test]
    fn different_inputs_reinitialize_the_stem() {
        let src = Unet::new(UnetConfig::new(2, 4, 3, 2), 1).unwrap();
        let mut dst = Unet::new(UnetConfig::new(2, 4, 5, 2), 2).unwrap();
        let r =
            load_partial_checkpoint(&mut dst, &Checkpoint::from_network(&src), false, 0).unwrap();
        assert_eq!(r.reinitialized, ["stem.conv.weight"]);
        assert_eq!(r.skipped, ["stem.conv.weight"]);
        let i = dst.params().index_of("enc0.block0.conv.weight").unwrap();
        assert_eq!(dst.params().value(i), src.params().value(i));
    }

    #[test]
    fn heads_are_redrawn_on_request() {
        let src = Unet::new(UnetConfig::new(2, 4, 3, 2), 1).unwrap();
        let mut dst = src.clone();
        let r =
            load_partial_checkpoint(&mut dst, &Checkpoint::from_network(&src), true, 9).unwrap();
        assert_eq!(r.reinitialized.len(), 4);
        assert!(r.reinitialized.iter().any(|n| n == "head.weight"));
    }

    #[test]
    fn unrelated_checkpoint_leaves_model_untouched() {
        let mut dst = Unet::new(UnetConfig::new(2, 4, 3, 2), 2).unwrap();
        let before = dst.clone();
        let ckpt = Checkpoint {
            entries: alloc::vec![("other".into(), Tensor::zeros(&[1]))],
        };
        assert!(matches!(
            load_partial_checkpoint(&mut dst, &ckpt, false, 0),
            Err(CoreError::NothingLoaded)
        ));
        assert_eq!(dst, before);
    }
}
