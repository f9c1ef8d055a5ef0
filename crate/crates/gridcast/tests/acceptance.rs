//! Acceptance suite: one check per criterion, each printing a PASS or FAIL
//! line. Runs as a plain binary so the lines are always visible; pass a
//! substring to run only matching criteria.

use std::time::Instant;

use gridcast::config::ExperimentConfig;
use gridcast::run::{run_experiment, RunDir};
use gridcast_core::autodiff::Tape;
use gridcast_core::dataset::{
    compute_normalization, generate_synthetic, ExtrasConfig, InputAssembler, Splits, SyntheticKind,
    SyntheticRecipe, WeatherSeries,
};
use gridcast_core::forecast::{
    evaluate_horizons, rollout, rollout_inspected, step, Formulation, HorizonEval, RolloutPlan,
};
use gridcast_core::models::{
    infer, Model, ModelConfig, Network, PaddingScheme, Unet, UnetConfig, XPadding, YPadding,
};
use gridcast_core::objectives::{
    loss, loss_and_grad, masked_loss_and_grad, metric_acc, metric_rmse, LossConfig, LossKind,
};
use gridcast_core::perturb::{
    gaussian_perturb, perlin_field, NoiseConfig, NoiseKind, PerlinLattice,
};
use gridcast_core::rng::seeded;
use gridcast_core::sphere::{
    load_constant_masks, quadrature_weights, solar_zenith_cos, GridSpec, MaskSource,
};
use gridcast_core::training::{corrupt, reconstruction_loss};
use gridcast_core::training::{
    discount_weights, finetune_multistep, sampling_weights, train, FinetuneConfig, OptimConfig,
    PretrainConfig, PretrainObjective, TaskConfig, TrainData,
};
use gridcast_core::Tensor;
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn random_grid(rng: &mut impl Rng, h: usize, w: usize) -> GridSpec {
    let mut lats: Vec<f64> = (0..h).map(|_| rng.random_range(-89.0..89.0)).collect();
    lats.sort_by(|a, b| b.total_cmp(a));
    lats.dedup();
    while lats.len() < h {
        lats.push(lats.last().unwrap() - 0.5);
    }
    GridSpec::new(lats, (0..w).map(|j| j as f64 * 360.0 / w as f64).collect()).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

// ---------------------------------------------------------------- 1

/// Element-by-element loss definitions, written independently of the
/// library's reduction code.
fn oracle_loss(kind: LossKind, p: &Tensor, y: &Tensor, w: &[f64]) -> f64 {
    let s = p.shape();
    let (b, c, h, wd) = (s[0], s[1], s[2], s[3]);
    let n = (b * c * h * wd) as f64;
    let mut sq = 0.0;
    let mut ab = 0.0;
    let mut hub = 0.0;
    let mut gsq = 0.0;
    let mut gab = 0.0;
    for bi in 0..b {
        for ci in 0..c {
            for hi in 0..h {
                for wi in 0..wd {
                    let k = ((bi * c + ci) * h + hi) * wd + wi;
                    let e = p.data()[k] - y.data()[k];
                    sq += e * e;
                    ab += e.abs();
                    hub += if e.abs() <= 1.0 {
                        0.5 * e * e
                    } else {
                        e.abs() - 0.5
                    };
                    gsq += w[hi] * e * e;
                    gab += w[hi] * e.abs();
                }
            }
        }
    }
    match kind {
        LossKind::Mse => sq / n,
        LossKind::L1 => ab / n,
        LossKind::Huber => hub / n,
        LossKind::GeoMse => gsq / n,
        LossKind::GeoL1 => gab / n,
        LossKind::L1L2 => 0.05 * ab / n + 0.95 * sq / n,
    }
}

fn oracle_metrics(p: &Tensor, y: &Tensor, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let s = p.shape();
    let (c, h, wd) = (s[1], s[2], s[3]);
    let mut acc = Vec::new();
    let mut rmse = Vec::new();
    for ci in 0..c {
        let (mut py, mut pp, mut yy, mut ee) = (0.0, 0.0, 0.0, 0.0);
        for hi in 0..h {
            for wi in 0..wd {
                let k = (ci * h + hi) * wd + wi;
                let (a, b) = (p.data()[k], y.data()[k]);
                py += w[hi] * a * b;
                pp += w[hi] * a * a;
                yy += w[hi] * b * b;
                ee += w[hi] * (a - b) * (a - b);
            }
        }
        acc.push(py / (pp * yy).sqrt());
        rmse.push((ee / (h * wd) as f64).sqrt());
    }
    (acc, rmse)
}

fn c01_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(101);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let shape = [
            rng.random_range(1..=2),
            rng.random_range(1..=4),
            rng.random_range(1..=6),
            rng.random_range(1..=8),
        ];
        let grid = random_grid(&mut rng, shape[2], shape[3]);
        let w = grid.quadrature_weights().map_err(|e| e.to_string())?;
        let p = random_tensor(&mut rng, &shape);
        let y = random_tensor(&mut rng, &shape);
        for kind in LossKind::ALL {
            let v = loss(&p, &y, &LossConfig::new(kind), Some(&w)).map_err(|e| e.to_string())?;
            let o = oracle_loss(kind, &p, &y, &w);
            worst = worst.max(rel_err(v, o));
            ensure(rel_err(v, o) <= 1e-6, || {
                format!("{kind} on {shape:?}: {v} vs oracle {o}")
            })?;
        }
        let p1 = p
            .index_first(0)
            .reshape(&[1, shape[1], shape[2], shape[3]])
            .unwrap();
        let y1 = y
            .index_first(0)
            .reshape(&[1, shape[1], shape[2], shape[3]])
            .unwrap();
        let (acc_o, rmse_o) = oracle_metrics(&p1, &y1, &w);
        let acc = metric_acc(&p1, &y1, &w).map_err(|e| e.to_string())?;
        let rmse = metric_rmse(&p1, &y1, &w).map_err(|e| e.to_string())?;
        for ci in 0..shape[1] {
            let (a, r) = (acc.per_channel[ci].unwrap(), rmse.per_channel[ci].unwrap());
            worst = worst.max(rel_err(a, acc_o[ci])).max(rel_err(r, rmse_o[ci]));
            ensure(rel_err(a, acc_o[ci]) <= 1e-6, || {
                format!("acc channel {ci}: {a} vs {}", acc_o[ci])
            })?;
            ensure(rel_err(r, rmse_o[ci]) <= 1e-6, || {
                format!("rmse channel {ci}: {r} vs {}", rmse_o[ci])
            })?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "50 tensors, 6 losses + 2 metrics, worst rel err {worst:.1e}, {secs:.2} s"
    ))
}

// ---------------------------------------------------------------- 2

fn c02_quadrature() -> Outcome {
    let mut rng = seeded(202);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let h = rng.random_range(1..=40);
        let grid = random_grid(&mut rng, h, 4);
        let w = grid.quadrature_weights().map_err(|e| e.to_string())?;
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        worst = worst.max((mean - 1.0).abs());
    }
    ensure(worst <= 1e-12, || format!("mean weight off by {worst:e}"))?;
    let w = quadrature_weights(&[45.0, 0.0, -45.0]).map_err(|e| e.to_string())?;
    let expected = [0.87868, 1.24264, 0.87868];
    for (a, b) in w.iter().zip(expected) {
        ensure((a - b).abs() <= 1e-5, || format!("[45,0,-45] gives {w:?}"))?;
    }
    Ok(format!(
        "20 grids, max |mean - 1| = {worst:.1e}; [45,0,-45] -> {w:.5?}"
    ))
}

// ---------------------------------------------------------------- 3

fn c03_gradients() -> Outcome {
    let mut rng = seeded(303);
    let shape = [2, 2, 4, 5];
    let grid = GridSpec::equiangular(4, 5).unwrap();
    let w = grid.quadrature_weights().unwrap();
    let y = random_tensor(&mut rng, &shape);
    // errors with |e| in [0.2, 0.8] or [1.2, 1.8]: away from the kinks at 0
    // and at the Huber threshold
    let p = Tensor::from_vec(
        &shape,
        y.data()
            .iter()
            .map(|&t| {
                let mag = if rng.random_bool(0.5) {
                    rng.random_range(0.2..0.8)
                } else {
                    rng.random_range(1.2..1.8)
                };
                t + if rng.random_bool(0.5) { mag } else { -mag }
            })
            .collect(),
    )
    .unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for kind in LossKind::ALL {
        let cfg = LossConfig::new(kind);
        let (_, grad) = loss_and_grad(&p, &y, &cfg, Some(&w)).map_err(|e| e.to_string())?;
        for k in 0..p.len() {
            let mut plus = p.clone();
            plus.data_mut()[k] += h;
            let mut minus = p.clone();
            minus.data_mut()[k] -= h;
            let fd = (loss(&plus, &y, &cfg, Some(&w)).unwrap()
                - loss(&minus, &y, &cfg, Some(&w)).unwrap())
                / (2.0 * h);
            let g = grad.data()[k];
            let err = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(err);
            ensure(err <= 1e-4, || {
                format!("{kind} element {k}: analytic {g} vs fd {fd}")
            })?;
        }
    }
    Ok(format!(
        "6 losses x {} elements, worst rel err {worst:.1e}",
        p.len()
    ))
}

// ---------------------------------------------------------------- 4

fn c04_equivariance() -> Outcome {
    let mut rng = seeded(404);
    let x = random_tensor(&mut rng, &[1, 3, 16, 32]);
    let shift = 8;
    let violation = |padding: PaddingScheme| -> Result<f64, String> {
        let mut cfg = UnetConfig::new(4, 4, 3, 2);
        cfg.padding = padding;
        cfg.check_grid(16, 32).map_err(|e| e.to_string())?;
        let net = Unet::new(cfg, 5).map_err(|e| e.to_string())?;
        let a = infer(&net, &x.roll_last(shift)).map_err(|e| e.to_string())?;
        let b = infer(&net, &x).map_err(|e| e.to_string())?.roll_last(shift);
        Ok(a.max_abs_diff(&b))
    };
    let circular = violation(PaddingScheme::new(XPadding::Circular, YPadding::Zero))?;
    let zero = violation(PaddingScheme::new(XPadding::Zero, YPadding::Zero))?;
    ensure(circular <= 1e-5, || {
        format!("circular padding breaks equivariance by {circular:e}")
    })?;
    ensure(zero >= 1e-2, || {
        format!("zero padding only violates by {zero:e}")
    })?;
    Ok(format!(
        "shift {shift}: circular {circular:.1e}, zero {zero:.2e}"
    ))
}

// ---------------------------------------------------------------- shared

struct Prepared {
    series: WeatherSeries,
    splits: Splits,
    assembler: InputAssembler,
}

fn prepare(
    kind: SyntheticKind,
    seed: u64,
    n_times: usize,
    configure: impl FnOnce(&mut SyntheticRecipe),
) -> Prepared {
    let grid = GridSpec::equiangular(8, 16).unwrap();
    let mut recipe = SyntheticRecipe::new(kind, grid.clone(), n_times, 2, seed);
    configure(&mut recipe);
    let raw = generate_synthetic(&recipe).unwrap();
    let splits = Splits::by_fraction(n_times, 0.7, 0.15).unwrap();
    let stats = compute_normalization(&raw, splits.train.clone()).unwrap();
    let series = raw.normalized(&stats).unwrap();
    let assembler = InputAssembler::new(grid, 2, 1, &ExtrasConfig::default()).unwrap();
    Prepared {
        series,
        splits,
        assembler,
    }
}

impl Prepared {
    fn data(&self) -> TrainData<'_> {
        TrainData {
            series: &self.series,
            assembler: &self.assembler,
            train: self.splits.train.clone(),
            val: self.splits.val.clone(),
        }
    }
}

fn small_unet(seed: u64) -> Model {
    let mut cfg = UnetConfig::new(2, 8, 2, 2);
    cfg.padding = PaddingScheme::new(XPadding::Circular, YPadding::Zero);
    ModelConfig::Unet(cfg)
        .build(&GridSpec::equiangular(8, 16).unwrap(), seed)
        .unwrap()
}

// ---------------------------------------------------------------- 5

fn c05_formulation() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut lines = Vec::new();
    let mut max_steps = 0;
    for seed in 0..5u64 {
        let prep = prepare(SyntheticKind::PersistencePlusNoise, 500 + seed, 80, |_| {});
        let optim = OptimConfig {
            lr: 2e-3,
            weight_decay: 0.0,
            epochs: 12,
            batch_size: 8,
            seed,
        };
        let mut mse = [0.0; 2];
        for (i, f) in [Formulation::Direct, Formulation::Delta]
            .into_iter()
            .enumerate()
        {
            let mut model = small_unet(seed);
            let task = TaskConfig::new(f, LossConfig::new(LossKind::GeoMse));
            let r = train(&mut model, &prep.data(), &task, &optim).map_err(|e| e.to_string())?;
            max_steps = max_steps.max(r.loss_history.len());
            mse[i] = *r.val_mse.last().unwrap();
        }
        wins += usize::from(mse[1] <= mse[0]);
        lines.push(format!("{:.3}/{:.3}", mse[1], mse[0]));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(max_steps <= 500, || format!("{max_steps} optimizer steps"))?;
    ensure(secs <= 300.0, || format!("took {secs:.0} s"))?;
    let detail = format!(
        "delta/direct val MSE per seed {}; {max_steps} steps, {secs:.0} s",
        lines.join(" ")
    );
    ensure(wins >= 4, || format!("delta wins {wins}/5: {detail}"))?;
    Ok(format!("delta wins {wins}/5: {detail}"))
}

// ---------------------------------------------------------------- 6

fn rollout_rmse(
    model: &Model,
    prep: &Prepared,
    formulation: Formulation,
    horizon: usize,
) -> Result<f64, String> {
    let eval = HorizonEval {
        horizons: vec![horizon],
        stride_steps: 1,
        range: prep.splits.test.clone(),
        max_initial_conditions: None,
    };
    let r = evaluate_horizons(model, &prep.series, &prep.assembler, formulation, &eval)
        .map_err(|e| e.to_string())?;
    Ok(r[0].rmse_mean)
}

fn c06_finetune() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut lines = Vec::new();
    let f = Formulation::Delta;
    for seed in 0..5u64 {
        let prep = prepare(
            SyntheticKind::SolidRotationAdvection,
            600 + seed,
            80,
            |_| {},
        );
        let task = TaskConfig::new(f, LossConfig::new(LossKind::GeoMse));
        let mut model = small_unet(seed);
        let optim = OptimConfig {
            lr: 3e-3,
            weight_decay: 0.0,
            epochs: 10,
            batch_size: 8,
            seed,
        };
        train(&mut model, &prep.data(), &task, &optim).map_err(|e| e.to_string())?;
        let before = rollout_rmse(&model, &prep, f, 4)?;
        let ft = FinetuneConfig {
            stages: vec![2, 3, 4],
            ..FinetuneConfig::default()
        };
        let optim = OptimConfig {
            lr: 1e-3,
            epochs: 9,
            ..optim
        };
        finetune_multistep(&mut model, &prep.data(), &task, &ft, &optim)
            .map_err(|e| e.to_string())?;
        let after = rollout_rmse(&model, &prep, f, 4)?;
        wins += usize::from(after < before);
        lines.push(format!("{before:.4}->{after:.4}"));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs <= 600.0, || format!("took {secs:.0} s"))?;
    let detail = format!("4-step RMSE {}; {secs:.0} s", lines.join(" "));
    ensure(wins >= 4, || format!("improved in {wins}/5: {detail}"))?;
    Ok(format!("improved in {wins}/5: {detail}"))
}

// ---------------------------------------------------------------- 7

fn c07_weights() -> Outcome {
    let d = discount_weights(3, 0.9);
    ensure(d == [1.0, 0.9, 0.81], || format!("discounts {d:?}"))?;
    let s = sampling_weights(10);
    let expected = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
    ensure(s == expected, || format!("sampling weights {s:?}"))?;
    Ok(format!("discounts {d:?}; sampling {s:?}"))
}

// ---------------------------------------------------------------- 8

fn c08_masked_autoencoder() -> Outcome {
    let grid = GridSpec::equiangular(4, 8).unwrap();
    let assembler = InputAssembler::new(grid.clone(), 8, 1, &ExtrasConfig::default()).unwrap();
    let cfg = PretrainConfig::new(PretrainObjective::MaskedAutoencoder);
    ensure(cfg.masked_count(8).ok() == Some(4), || {
        "floor(0.5 * 8) != 4".into()
    })?;
    ensure(cfg.masked_count(7).ok() == Some(3), || {
        "floor(0.5 * 7) != 3".into()
    })?;
    let mut model_cfg = UnetConfig::new(2, 4, 8, 8);
    model_cfg.skips = false;
    let model = ModelConfig::Unet(model_cfg).build(&grid, 3).unwrap();
    let mut rng = seeded(808);
    let inputs = vec![random_tensor(&mut rng, &[3, 8, 4, 8])];
    let c = corrupt(&cfg, &inputs, &mut rng).map_err(|e| e.to_string())?;
    let mask = c.mask.clone().ok_or("no mask drawn")?;
    for m in &mask {
        ensure(m.iter().filter(|&&b| b).count() == 4, || {
            format!("mask {m:?}")
        })?;
    }
    let input = assembler
        .assemble(&c.inputs, &[0, 0, 0])
        .map_err(|e| e.to_string())?;
    let pred = infer(&model, &input).map_err(|e| e.to_string())?;
    let mse = LossConfig::new(LossKind::Mse);
    let (value, g) =
        masked_loss_and_grad(&pred, &c.target, &mse, None, &mask).map_err(|e| e.to_string())?;
    let mut tape = Tape::new();
    let l = reconstruction_loss(&mut tape, &model, &assembler, &c, &[0, 0, 0], &mse, &[])
        .map_err(|e| e.to_string())?;
    let taped = tape.value(l).item();
    ensure(
        (taped - value).abs() <= 1e-12 * value.abs().max(1.0),
        || format!("training loss {taped} vs {value}"),
    )?;
    let hw = 32;
    let mut masked_norm = 0.0;
    for (bi, m) in mask.iter().enumerate() {
        for (ci, &masked) in m.iter().enumerate() {
            let slice = &g.data()[(bi * 8 + ci) * hw..(bi * 8 + ci + 1) * hw];
            if masked {
                masked_norm += slice.iter().map(|v| v * v).sum::<f64>();
            } else {
                ensure(slice.iter().all(|&v| v == 0.0), || {
                    format!("sample {bi} channel {ci} has gradient")
                })?;
            }
        }
    }
    ensure(masked_norm > 0.0, || {
        "masked channels got no gradient".into()
    })?;
    Ok("4 of 8 channels masked per sample; unmasked output gradient exactly 0".into())
}

// ---------------------------------------------------------------- 9

fn c09_rollout() -> Outcome {
    let grid = GridSpec::equiangular(8, 16).unwrap();
    let recipe = SyntheticRecipe::new(SyntheticKind::DiffusiveWaves, grid.clone(), 12, 3, 9);
    let series = generate_synthetic(&recipe).unwrap();
    let masks = load_constant_masks(&grid, &MaskSource::Synthetic { seed: 9 }).unwrap();
    let mut checked = 0;
    for n in [1, 2] {
        for (zenith, coords, with_masks) in (0..8).map(|b| (b & 1 != 0, b & 2 != 0, b & 4 != 0)) {
            let extras = ExtrasConfig {
                zenith,
                coords,
                masks: if with_masks {
                    masks.clone()
                } else {
                    Default::default()
                },
            };
            let asm = InputAssembler::new(grid.clone(), 3, n, &extras).unwrap();
            let model = ModelConfig::Unet(UnetConfig::new(2, 4, asm.input_channels(), 3))
                .build(&grid, 17)
                .map_err(|e| e.to_string())?;
            for f in [Formulation::Direct, Formulation::Delta] {
                let plan = RolloutPlan {
                    assembler: &asm,
                    formulation: f,
                    stride_seconds: series.dt_seconds(),
                };
                let history: Vec<Tensor> = (0..n).map(|t| series.frame(t)).collect();
                let t0 = series.timestamps[n - 1];
                let one = rollout(&model, plan, &history, t0, 1).map_err(|e| e.to_string())?;
                let batched: Vec<Tensor> = history
                    .iter()
                    .map(|s| s.clone().reshape(&[1, 3, 8, 16]).unwrap())
                    .collect();
                let input = asm.assemble(&batched, &[t0]).unwrap();
                let direct = step(&model, &input, batched.last().unwrap(), f)
                    .unwrap()
                    .index_first(0);
                ensure(one.states[0] == direct, || {
                    format!("K=1 rollout differs from one step (n={n}, {f})")
                })?;

                let mut zenith_err: f64 = 0.0;
                let mut inspect = |j: usize, x: &Tensor| {
                    if zenith {
                        let z = x.slice_channels(n * 3, 1);
                        let expected = solar_zenith_cos(&grid, t0 + j as i64 * series.dt_seconds());
                        zenith_err = zenith_err
                            .max(z.max_abs_diff(&expected.reshape(&[1, 1, 8, 16]).unwrap()));
                    }
                };
                let r = rollout_inspected(&model, plan, &history, t0, 5, &mut inspect)
                    .map_err(|e| e.to_string())?;
                ensure(zenith_err <= 1e-9, || {
                    format!("zenith channel off by {zenith_err:e}")
                })?;
                ensure(r.states.iter().all(|s| s.shape() == [3, 8, 16]), || {
                    "state channel count drifted".into()
                })?;
                checked += 1;
            }
        }
    }
    Ok(format!(
        "{checked} extras/steps/formulation configurations, K=1 bit-exact, zenith within 1e-9"
    ))
}

// ---------------------------------------------------------------- 10

fn c10_perlin() -> Outcome {
    let cfg = NoiseConfig {
        kind: NoiseKind::Perlin,
        octaves: 1,
        lattice: (4, 8),
        amplitude: 0.3,
        ..NoiseConfig::default()
    };
    let (h, w) = (16, 32);
    let field = perlin_field(h, w, &cfg, 10).map_err(|e| e.to_string())?;
    let mut at_nodes: f64 = 0.0;
    for i in (0..h).step_by(h / 4) {
        for j in (0..w).step_by(w / 8) {
            at_nodes = at_nodes.max(field[i * w + j].abs());
        }
    }
    ensure(at_nodes <= 1e-9, || {
        format!("single octave is {at_nodes:e} at a lattice node")
    })?;
    let lattice = PerlinLattice::new(4, 8, &mut seeded(11)).unwrap();
    let mut seam: f64 = 0.0;
    let mut rng = seeded(12);
    for _ in 0..200 {
        let y = rng.random_range(0.0..4.0);
        let d = 1e-12;
        seam = seam.max((lattice.sample(y, 8.0 - d) - lattice.sample(y, d)).abs());
        seam = seam.max((lattice.sample(y, 8.0) - lattice.sample(y, 0.0)).abs());
    }
    ensure(seam <= 1e-9, || format!("seam discontinuity {seam:e}"))?;
    let x = random_tensor(&mut rng, &[2, 3, 4, 8]);
    ensure(gaussian_perturb(&x, 0.0, &mut rng) == x, || {
        "amplitude 0 changed the field".into()
    })?;
    Ok(format!(
        "node max {at_nodes:.1e}, seam max {seam:.1e}, gaussian amplitude 0 is identity"
    ))
}

// ---------------------------------------------------------------- 11

fn c11_width_scaling() -> Outcome {
    let mut lines = Vec::new();
    for (n, base, cin, cout) in [(4, 64, 147, 73), (3, 16, 8, 4)] {
        let a = UnetConfig::new(n, base, cin, cout);
        let b = UnetConfig::new(n, 2 * base, cin, cout);
        let ratio = b.conv_weight_count() as f64 / a.conv_weight_count() as f64;
        ensure((ratio - 4.0).abs() <= 0.2, || {
            format!("base {base}: ratio {ratio}")
        })?;
        lines.push(format!("base {base}->{}: x{ratio:.3}", 2 * base));
    }
    // the closed form agrees with the built network
    let cfg = UnetConfig::new(3, 16, 8, 4);
    let net = Unet::new(cfg.clone(), 1).unwrap();
    let counted: usize = net
        .params()
        .iter()
        .filter(|p| p.value.ndim() == 4)
        .map(|p| p.value.len())
        .sum();
    ensure(counted == cfg.conv_weight_count(), || {
        format!("{counted} vs {}", cfg.conv_weight_count())
    })?;
    // reported next to the published 47,152,969 for the 4-block UNet; the
    // published head configuration is unknown, so this is informational
    let full = UnetConfig::new(4, 64, 147, 73).parameter_count();
    lines.push(format!("full-scale 4-block UNet: {full} parameters (published 47152969)"));
    Ok(lines.join(", "))
}

// ---------------------------------------------------------------- 12

fn c12_acc() -> Outcome {
    let mut rng = seeded(1212);
    let w = GridSpec::equiangular(6, 12)
        .unwrap()
        .quadrature_weights()
        .unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let y = random_tensor(&mut rng, &[1, 3, 6, 12]);
        let p = random_tensor(&mut rng, &[1, 3, 6, 12]);
        let same = metric_acc(&y, &y, &w).unwrap();
        let neg = metric_acc(&y.scale(-1.0), &y, &w).unwrap();
        let base = metric_acc(&p, &y, &w).unwrap();
        let alpha = rng.random_range(0.01..100.0);
        let scaled = metric_acc(&p.scale(alpha), &y, &w).unwrap();
        for c in 0..3 {
            worst = worst
                .max((same.per_channel[c].unwrap() - 1.0).abs())
                .max((neg.per_channel[c].unwrap() + 1.0).abs())
                .max((scaled.per_channel[c].unwrap() - base.per_channel[c].unwrap()).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("anchor error {worst:e}"))?;
    Ok(format!("max anchor error {worst:.1e}"))
}

// ---------------------------------------------------------------- 13

const E2E: &str = r#"
run_id = "determinism"
seed = 13
horizons = [1, 2, 4]
formulation = "delta"

[dataset.synthetic]
kind = "solid_rotation_advection"
n_lat = 8
n_lon = 16
n_times = 60
n_channels = 2

[model]
kind = "unet"
n_blocks = 2
base_width = 4

[extras]
n_input_steps = 2
zenith = true
coords = true
masks = true

[loss]
kind = "geo_mse"

[noise]
kind = "perlin"
amplitude = 0.05

[optim]
epochs = 2
batch_size = 8

[pretrain]
objective = "denoising_autoencoder"
epochs = 1

[finetune]
stages = [2]
supervision = "intermediate"
scheduled_sampling = true
"#;

fn c13_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ExperimentConfig::from_toml_str(E2E, &[]).map_err(|e| e.to_string())?;
    run_experiment(&cfg, tmp.path(), false).map_err(|e| e.to_string())?;
    let first = RunDir::open(tmp.path(), &cfg.run_id)
        .unwrap()
        .read_results()
        .map_err(|e| e.to_string())?;
    run_experiment(&cfg, tmp.path(), true).map_err(|e| e.to_string())?;
    let second = RunDir::open(tmp.path(), &cfg.run_id)
        .unwrap()
        .read_results()
        .map_err(|e| e.to_string())?;
    ensure(first.len() == second.len() && !first.is_empty(), || {
        "row counts differ".into()
    })?;
    let mut worst: f64 = 0.0;
    for (a, b) in first.iter().zip(&second) {
        ensure(
            (&a.metric, a.horizon_steps, &a.channel) == (&b.metric, b.horizon_steps, &b.channel),
            || "row keys differ".into(),
        )?;
        worst = worst.max((a.value - b.value).abs());
    }
    ensure(worst <= 1e-6, || format!("metrics differ by {worst:e}"))?;
    Ok(format!(
        "{} metric rows, max difference {worst:e}",
        first.len()
    ))
}

// ---------------------------------------------------------------- driver

fn main() {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("loss and metric oracles", c01_oracles),
        ("quadrature invariant", c02_quadrature),
        ("loss gradient checks", c03_gradients),
        ("padding equivariance", c04_equivariance),
        ("delta vs direct formulation", c05_formulation),
        ("multi-step fine-tuning", c06_finetune),
        ("supervision weights", c07_weights),
        ("masked autoencoder contract", c08_masked_autoencoder),
        ("rollout bookkeeping", c09_rollout),
        ("perlin properties", c10_perlin),
        ("width scaling", c11_width_scaling),
        ("ACC anchors", c12_acc),
        ("end-to-end determinism", c13_determinism),
    ];
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = format!("criterion {:02} {name}", i + 1);
        if !filters.is_empty() && !filters.iter().any(|f| id.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id} ({secs:.1} s): {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
