//! Cross-module flows: data generation, assembly, models, training and
//! evaluation used together.

use gridcast_core::dataset::{
    compute_normalization, generate_synthetic, ExtrasConfig, InputAssembler, Splits, SyntheticKind,
    SyntheticRecipe,
};
use gridcast_core::forecast::{evaluate_horizons, Formulation, HorizonEval};
use gridcast_core::models::{
    infer, GraphUnet, GraphUnetConfig, ModelConfig, Network, Operator, UnetConfig,
};
use gridcast_core::objectives::{LossConfig, LossKind};
use gridcast_core::sphere::GridSpec;
use gridcast_core::training::{
    load_partial_checkpoint, train, Checkpoint, OptimConfig, TaskConfig, TrainData,
};
use gridcast_core::{Result, Tensor};

/// Exact one-step propagator of solid rotation: the newest state rolled
/// by `shift` columns.
struct Rotate {
    channels: usize,
    shift: isize,
}

impl Operator for Rotate {
    fn apply(&self, input: &Tensor) -> Result<Tensor> {
        Ok(input.slice_channels(0, self.channels).roll_last(self.shift))
    }
}

#[test]
fn analytic_propagator_scores_perfectly() {
    let grid = GridSpec::equiangular(6, 12).unwrap();
    let series = generate_synthetic(&SyntheticRecipe::new(
        SyntheticKind::SolidRotationAdvection,
        grid.clone(),
        30,
        2,
        4,
    ))
    .unwrap();
    let shift = [1isize, -1]
        .into_iter()
        .find(|&s| series.frame(1).max_abs_diff(&series.frame(0).roll_last(s)) < 1e-12)
        .expect("one column per step");
    let extras = ExtrasConfig {
        zenith: true,
        ..Default::default()
    };
    let asm = InputAssembler::new(grid, 2, 1, &extras).unwrap();
    let eval = HorizonEval {
        horizons: vec![1, 5, 12],
        stride_steps: 1,
        range: 10..30,
        max_initial_conditions: None,
    };
    let reports = evaluate_horizons(
        &Rotate { channels: 2, shift },
        &series,
        &asm,
        Formulation::Direct,
        &eval,
    )
    .unwrap();
    for r in &reports {
        assert!(
            r.rmse_mean < 1e-12,
            "horizon {}: {}",
            r.horizon_steps,
            r.rmse_mean
        );
        assert!((r.acc_mean.unwrap() - 1.0).abs() < 1e-12);
    }
    let wrong = Rotate {
        channels: 2,
        shift: -shift,
    };
    let bad = evaluate_horizons(&wrong, &series, &asm, Formulation::Direct, &eval).unwrap();
    assert!(bad[1].rmse_mean > 0.1);
    // a full revolution brings both directions back together
    assert!(bad[2].rmse_mean < 1e-12);
}

#[test]
fn graph_unet_trains_and_changes_resolution() {
    let grid = GridSpec::equiangular(8, 16).unwrap();
    let raw = generate_synthetic(&SyntheticRecipe::new(
        SyntheticKind::DiffusiveWaves,
        grid.clone(),
        40,
        2,
        8,
    ))
    .unwrap();
    let splits = Splits::by_fraction(40, 0.7, 0.15).unwrap();
    let series = raw
        .normalized(&compute_normalization(&raw, splits.train.clone()).unwrap())
        .unwrap();
    let asm = InputAssembler::new(grid.clone(), 2, 1, &ExtrasConfig::default()).unwrap();
    let mut cfg = GraphUnetConfig::new(2, 2, UnetConfig::new(2, 4, 4, 4));
    cfg.k = 4;
    let mut net = GraphUnet::new(cfg, &grid, 2).unwrap();
    let data = TrainData {
        series: &series,
        assembler: &asm,
        train: splits.train.clone(),
        val: splits.val.clone(),
    };
    let task = TaskConfig::new(Formulation::Delta, LossConfig::new(LossKind::GeoMse));
    let optim = OptimConfig {
        lr: 3e-3,
        epochs: 4,
        batch_size: 4,
        ..OptimConfig::default()
    };
    let report = train(&mut net, &data, &task, &optim).unwrap();
    let means = report.epoch_means();
    assert!(means.last().unwrap() < &means[0], "{means:?}");

    let coarse = grid.subsample(2).unwrap();
    let moved = net.with_query_grid(&coarse).unwrap();
    let y = infer(&moved, &series.frame(0).reshape(&[1, 2, 8, 16]).unwrap()).unwrap();
    assert_eq!(y.shape(), &[1, 2, 4, 8]);
    assert_eq!(moved.params(), net.params());
}

#[test]
fn checkpoint_moves_between_input_configurations() {
    let grid = GridSpec::equiangular(4, 8).unwrap();
    let small = ModelConfig::Unet(UnetConfig::new(2, 4, 3, 2))
        .build(&grid, 1)
        .unwrap();
    let mut wide = ModelConfig::Unet(UnetConfig::new(2, 4, 7, 2))
        .build(&grid, 2)
        .unwrap();
    let ckpt = Checkpoint::from_network(&small);
    let report = load_partial_checkpoint(&mut wide, &ckpt, false, 3).unwrap();
    assert_eq!(report.reinitialized, ["stem.conv.weight"]);
    assert_eq!(report.loaded.len() + 1, wide.params().len());
    let idx = wide.params().index_of("head.weight").unwrap();
    assert_eq!(wide.params().value(idx), small.params().value(idx));
}
