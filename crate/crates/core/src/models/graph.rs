//! UNet core between graph kernel-integration layers, so the model reads
//! and writes arbitrary point sets on the sphere.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::params::{Init, ParamSet};
use super::unet::{UnetConfig, UnetLayout};
use super::Network;
use crate::autodiff::{Tape, Var};
use crate::rng::seeded;
use crate::sphere::GridSpec;
use crate::tensor::Tensor;
use crate::{CoreError, Result};

fn default_k() -> usize {
    4
}

fn default_kernel_width() -> usize {
    64
}

/// Shape of a [`GraphUnet`]. The latent width is the core's channel count.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GraphUnetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// UNet on the latent grid; its input and output channels must agree.
    pub core: UnetConfig,
    /// Neighbors aggregated per target point.
    #[cfg_attr(feature = "serde", serde(default = "default_k"))]
    pub k: usize,
    /// Hidden width of the kernel network.
    #[cfg_attr(feature = "serde", serde(default = "default_kernel_width"))]
    pub kernel_width: usize,
}

impl GraphUnetConfig {
    pub fn new(in_channels: usize, out_channels: usize, core: UnetConfig) -> Self {
        GraphUnetConfig {
            in_channels,
            out_channels,
            core,
            k: default_k(),
            kernel_width: default_kernel_width(),
        }
    }

    pub fn latent_width(&self) -> usize {
        self.core.in_channels
    }

    pub fn validate(&self) -> Result<()> {
        self.core.validate()?;
        if self.core.in_channels != self.core.out_channels {
            return Err(CoreError::InvalidConfig(
                "graph UNet core must keep its channel count".into(),
            ));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.k == 0 || self.kernel_width == 0
        {
            return Err(CoreError::InvalidConfig(
                "graph UNet sizes must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Closed-form trainable-parameter count.
    pub fn parameter_count(&self) -> usize {
        let d = self.latent_width();
        let dense = |i: usize, o: usize| i * o + o;
        let kernel = dense(9, self.kernel_width) + dense(self.kernel_width, d);
        let layer = dense(d, d) + kernel;
        dense(self.in_channels, d)
            + 4 * layer
            + 2 * dense(d, d)
            + self.core.parameter_count()
            + dense(d, self.out_channels)
    }
}

/// `k` nearest sources of every target by chordal distance, flattened
/// target-major. Ties are broken by source coordinates, so the result does
/// not depend on the order of `sources`.
pub fn nearest_neighbors(
    sources: &[[f64; 3]],
    targets: &[[f64; 3]],
    k: usize,
) -> Result<Vec<usize>> {
    if k == 0 || k > sources.len() {
        return Err(CoreError::NeighborhoodTooLarge {
            k,
            available: sources.len(),
        });
    }
    let mut out = Vec::with_capacity(targets.len() * k);
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(sources.len());
    for t in targets {
        order.clear();
        order.extend(sources.iter().enumerate().map(|(i, s)| {
            let d: f64 = (0..3).map(|a| (s[a] - t[a]) * (s[a] - t[a])).sum();
            (d, i)
        }));
        let key = |&(d, i): &(f64, usize)| (d, sources[i]);
        order.sort_by(|a, b| {
            let (da, ca) = key(a);
            let (db, cb) = key(b);
            da.total_cmp(&db)
                .then(ca[0].total_cmp(&cb[0]))
                .then(ca[1].total_cmp(&cb[1]))
                .then(ca[2].total_cmp(&cb[2]))
        });
        out.extend(order[..k].iter().map(|&(_, i)| i));
    }
    Ok(out)
}

/// Neighbor lists of a target set plus the kernel inputs of every pair.
#[derive(Debug, Clone, PartialEq)]
struct Neighborhood {
    index: Vec<usize>,
    /// `[1, M k, 9]`: source xyz, target xyz, target minus source.
    pair_features: Tensor,
    k: usize,
}

impl Neighborhood {
    fn new(sources: &[[f64; 3]], targets: &[[f64; 3]], k: usize) -> Result<Self> {
        if sources.is_empty() || targets.is_empty() {
            return Err(CoreError::MissingCoordinates("empty point set".into()));
        }
        if sources
            .iter()
            .chain(targets)
            .any(|p| p.iter().any(|v| !v.is_finite()))
        {
            return Err(CoreError::MissingCoordinates(
                "non-finite coordinate".into(),
            ));
        }
        let index = nearest_neighbors(sources, targets, k)?;
        let mut feats = Vec::with_capacity(index.len() * 9);
        for (j, &src) in index.iter().enumerate() {
            let s = sources[src];
            let t = targets[j / k];
            feats.extend_from_slice(&s);
            feats.extend_from_slice(&t);
            feats.extend((0..3).map(|a| t[a] - s[a]));
        }
        let pair_features = Tensor::from_vec(&[1, index.len(), 9], feats)?;
        Ok(Neighborhood {
            index,
            pair_features,
            k,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    weight: usize,
    bias: usize,
}

impl Dense {
    fn build<R: Rng>(params: &mut ParamSet, rng: &mut R, name: &str, i: usize, o: usize) -> Self {
        let init = Init::fan_in(i);
        Dense {
            weight: params.add(format!("{name}.weight"), &[o, i], init, rng),
            bias: params.add(format!("{name}.bias"), &[o], init, rng),
        }
    }

    fn apply(&self, p: &ParamSet, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.weight, p.value(self.weight));
        let b = tape.param(self.bias, p.value(self.bias));
        tape.linear(x, w, Some(b))
    }
}

/// One kernel-integration layer:
/// `out(t) = gelu(mean_{s in N(t)} kappa(s, t) * (A f(s)) [+ W f(t)])`.
#[derive(Debug, Clone, PartialEq)]
struct GnoLayer {
    lift: Dense,
    kernel_hidden: Dense,
    kernel_out: Dense,
    pointwise: Option<Dense>,
}

impl GnoLayer {
    fn build<R: Rng>(
        params: &mut ParamSet,
        rng: &mut R,
        name: &str,
        d: usize,
        hidden: usize,
        pointwise: bool,
    ) -> Self {
        GnoLayer {
            lift: Dense::build(params, rng, &format!("{name}.lift"), d, d),
            kernel_hidden: Dense::build(params, rng, &format!("{name}.kernel0"), 9, hidden),
            kernel_out: Dense::build(params, rng, &format!("{name}.kernel1"), hidden, d),
            pointwise: pointwise
                .then(|| Dense::build(params, rng, &format!("{name}.pointwise"), d, d)),
        }
    }

    fn apply(
        &self,
        p: &ParamSet,
        tape: &mut Tape,
        src: Var,
        nb: &Neighborhood,
        tgt: Option<Var>,
    ) -> Result<Var> {
        let lifted = self.lift.apply(p, tape, src)?;
        let gathered = tape.gather_points(lifted, &nb.index)?;
        let pairs = tape.constant(nb.pair_features.clone());
        let h = self.kernel_hidden.apply(p, tape, pairs)?;
        let h = tape.gelu(h);
        let kernel = self.kernel_out.apply(p, tape, h)?;
        let weighted = tape.mul(gathered, kernel)?;
        let mut out = tape.group_mean(weighted, nb.k)?;
        if let (Some(w), Some(t)) = (&self.pointwise, tgt) {
            let local = w.apply(p, tape, t)?;
            out = tape.add(out, local)?;
        }
        Ok(tape.gelu(out))
    }
}

/// Graph encoder, UNet core on a latent grid, graph decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphUnet {
    cfg: GraphUnetConfig,
    params: ParamSet,
    latent: GridSpec,
    input_grid: GridSpec,
    query_grid: GridSpec,
    lift: Dense,
    encoder: [GnoLayer; 2],
    core: UnetLayout,
    decoder: [GnoLayer; 2],
    project: Dense,
    to_latent: Neighborhood,
    within_latent: Neighborhood,
    to_query: Neighborhood,
}

impl GraphUnet {
    /// Model whose input, latent and query point sets are all `grid`.
    pub fn new(cfg: GraphUnetConfig, grid: &GridSpec, seed: u64) -> Result<Self> {
        cfg.validate()?;
        cfg.core.check_grid(grid.n_lat(), grid.n_lon())?;
        let mut rng = seeded(seed);
        let mut params = ParamSet::new();
        let d = cfg.latent_width();
        let hw = cfg.kernel_width;
        let lift = Dense::build(&mut params, &mut rng, "lift", cfg.in_channels, d);
        let encoder = [
            GnoLayer::build(&mut params, &mut rng, "gno_enc0", d, hw, false),
            GnoLayer::build(&mut params, &mut rng, "gno_enc1", d, hw, true),
        ];
        let core = UnetLayout::build(cfg.core.clone(), &mut params, &mut rng, "core.")?;
        let decoder = [
            GnoLayer::build(&mut params, &mut rng, "gno_dec0", d, hw, true),
            GnoLayer::build(&mut params, &mut rng, "gno_dec1", d, hw, false),
        ];
        let project = Dense::build(&mut params, &mut rng, "project", d, cfg.out_channels);
        let pts = grid.point_coordinates();
        let nb = Neighborhood::new(&pts, &pts, cfg.k)?;
        Ok(GraphUnet {
            cfg,
            params,
            latent: grid.clone(),
            input_grid: grid.clone(),
            query_grid: grid.clone(),
            lift,
            encoder,
            core,
            decoder,
            project,
            to_latent: nb.clone(),
            within_latent: nb.clone(),
            to_query: nb,
        })
    }

    pub fn config(&self) -> &GraphUnetConfig {
        &self.cfg
    }

    pub fn latent_grid(&self) -> &GridSpec {
        &self.latent
    }

    /// Same parameters, reading inputs on `grid`.
    pub fn with_input_grid(&self, grid: &GridSpec) -> Result<Self> {
        let mut out = self.clone();
        out.to_latent = Neighborhood::new(
            &grid.point_coordinates(),
            &self.latent.point_coordinates(),
            self.cfg.k,
        )?;
        out.input_grid = grid.clone();
        Ok(out)
    }

    /// Same parameters, producing outputs on `grid`.
    pub fn with_query_grid(&self, grid: &GridSpec) -> Result<Self> {
        let mut out = self.clone();
        out.to_query = Neighborhood::new(
            &self.latent.point_coordinates(),
            &grid.point_coordinates(),
            self.cfg.k,
        )?;
        out.query_grid = grid.clone();
        Ok(out)
    }

    fn encode(&self, tape: &mut Tape, feats: Var, nb: &Neighborhood) -> Result<Var> {
        let p = &self.params;
        let x = self.lift.apply(p, tape, feats)?;
        let x = self.encoder[0].apply(p, tape, x, nb, None)?;
        let x = self.encoder[1].apply(p, tape, x, &self.within_latent, Some(x))?;
        tape.points_to_grid(x, self.latent.n_lat(), self.latent.n_lon())
    }

    /// Latent grid features `[B, d, H, W]` from point features `[B, N, C_in]`
    /// located at `coords`.
    pub fn encode_points(&self, tape: &mut Tape, feats: Var, coords: &[[f64; 3]]) -> Result<Var> {
        let shape = tape.value(feats).shape().to_vec();
        if shape.len() != 3 || shape[2] != self.cfg.in_channels {
            return Err(CoreError::shape(
                "graph encoder input",
                &[0, coords.len(), self.cfg.in_channels],
                &shape,
            ));
        }
        if shape[1] != coords.len() {
            return Err(CoreError::MissingCoordinates(format!(
                "{} points but {} coordinates",
                shape[1],
                coords.len()
            )));
        }
        let nb = Neighborhood::new(coords, &self.latent.point_coordinates(), self.cfg.k)?;
        self.encode(tape, feats, &nb)
    }
}

impl Network for GraphUnet {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn in_channels(&self) -> usize {
        self.cfg.in_channels
    }

    fn out_channels(&self) -> usize {
        self.cfg.out_channels
    }

    /// `[B, C_in, H_in, W_in]` on the input grid to `[B, C, H_q, W_q]` on
    /// the query grid.
    fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let shape = tape.value(input).shape().to_vec();
        let expected = [
            shape.first().copied().unwrap_or(0),
            self.cfg.in_channels,
            self.input_grid.n_lat(),
            self.input_grid.n_lon(),
        ];
        tape.value(input)
            .ensure_shape("graph UNet input", &expected)?;
        let p = &self.params;
        let pts = tape.grid_to_points(input)?;
        let latent = self.encode(tape, pts, &self.to_latent)?;
        let latent = self.core.forward(p, tape, latent)?;
        let x = tape.grid_to_points(latent)?;
        let x = self.decoder[0].apply(p, tape, x, &self.within_latent, Some(x))?;
        let x = self.decoder[1].apply(p, tape, x, &self.to_query, None)?;
        let y = self.project.apply(p, tape, x)?;
        tape.points_to_grid(y, self.query_grid.n_lat(), self.query_grid.n_lon())
    }

    fn boundary_params(&self) -> Vec<usize> {
        alloc::vec![
            self.lift.weight,
            self.lift.bias,
            self.project.weight,
            self.project.bias
        ]
    }

    fn set_skips(&mut self, enabled: bool) {
        self.core.set_skips(enabled);
    }

    fn reinit_skip_path(&mut self, seed: u64) {
        self.core
            .reinit_skip_weights(&mut self.params, &mut seeded(seed));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::infer;
    use rand::seq::SliceRandom;

    fn small() -> (GraphUnetConfig, GridSpec) {
        let mut cfg = GraphUnetConfig::new(2, 3, UnetConfig::new(2, 4, 4, 4));
        cfg.kernel_width = 8;
        (cfg, GridSpec::equiangular(6, 8).unwrap())
    }

    #[test]
    fn shape_and_count() {
        let (cfg, grid) = small();
        let net = GraphUnet::new(cfg.clone(), &grid, 1).unwrap();
        assert_eq!(net.params().count(), cfg.parameter_count());
        let y = infer(&net, &Tensor::full(&[2, 2, 6, 8], 0.3)).unwrap();
        assert_eq!(y.shape(), &[2, 3, 6, 8]);
    }

    #[test]
    fn neighbor_search() {
        let pts = [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [-1.0, 0.0, 0.0],
        ];
        let nn = nearest_neighbors(&pts, &[[0.9, 0.1, 0.0]], 2).unwrap();
        assert_eq!(nn, [0, 1]);
        assert!(matches!(
            nearest_neighbors(&pts, &pts, 5),
            Err(CoreError::NeighborhoodTooLarge { k: 5, available: 4 })
        ));
    }

    #[test]
    fn encoder_ignores_point_order() {
        let (cfg, grid) = small();
        let net = GraphUnet::new(cfg, &grid, 2).unwrap();
        let coords = grid.point_coordinates();
        let n = coords.len();
        let mut rng = seeded(3);
        let feats: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let pc: Vec<[f64; 3]> = perm.iter().map(|&i| coords[i]).collect();
        let pf: Vec<f64> = perm
            .iter()
            .flat_map(|&i| feats[2 * i..2 * i + 2].to_vec())
            .collect();
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_vec(&[1, n, 2], feats).unwrap());
        let b = t.constant(Tensor::from_vec(&[1, n, 2], pf).unwrap());
        let ea = net.encode_points(&mut t, a, &coords).unwrap();
        let eb = net.encode_points(&mut t, b, &pc).unwrap();
        assert!(t.value(ea).max_abs_diff(t.value(eb)) < 1e-12);
        assert!(net.encode_points(&mut t, a, &coords[1..]).is_err());
    }

    #[test]
    fn subsampled_query_agrees_with_full_grid() {
        let (cfg, grid) = small();
        let net = GraphUnet::new(cfg, &grid, 4).unwrap();
        let x = Tensor::from_vec(
            &[1, 2, 6, 8],
            (0..96).map(|i| libm::sin(f64::from(i) * 0.1)).collect(),
        )
        .unwrap();
        let full = infer(&net, &x).unwrap();
        let coarse_grid = grid.subsample(2).unwrap();
        let coarse = infer(&net.with_query_grid(&coarse_grid).unwrap(), &x).unwrap();
        assert_eq!(coarse.shape(), &[1, 3, 3, 4]);
        for c in 0..3 {
            for i in 0..3 {
                for j in 0..4 {
                    let a = coarse.data()[(c * 3 + i) * 4 + j];
                    let b = full.data()[(c * 6 + 2 * i) * 8 + 2 * j];
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn gradients_reach_every_parameter() {
        let (cfg, grid) = small();
        let net = GraphUnet::new(cfg, &grid, 5).unwrap();
        let mut t = Tape::new();
        let x = t.constant(Tensor::full(&[1, 2, 6, 8], 0.5));
        let y = net.forward(&mut t, x).unwrap();
        let target = Tensor::full(t.value(y).shape(), 1.0);
        let l = t
            .loss(
                y,
                &target,
                &crate::objectives::LossConfig::new(crate::objectives::LossKind::Mse),
                None,
            )
            .unwrap();
        let g = t.backward(l);
        for i in 0..net.params().len() {
            assert!(g.param(i).is_some(), "{}", net.params().get(i).name);
        }
    }
}
