//! Experiment execution: data preparation, the pretrain / train / fine-tune
//! / evaluate stages and the run directory they write into.
//!
//! Run directory layout:
//!
//! ```text
//! <root>/<run_id>/
//!   config.toml            effective configuration
//!   config.canonical.json  hashed serialization
//!   config.sha256
//!   status                 running | complete | failed[category]: message
//!   checkpoints/<stage>.ckpt, checkpoints/latest
//!   loss_history.csv       stage, step, loss
//!   validation.csv         stage, epoch, val_loss, val_mse
//!   load_report.txt        when an initial checkpoint was loaded
//!   metrics.csv            run_id, horizon_steps, channel, acc, rmse
//!   results.csv            long-format rows used by `compare`
//!   summary.json
//! ```

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use gridcast_core::dataset::{
    compute_normalization, generate_synthetic, zenith_stats, ExtrasConfig, InputAssembler,
    NormalizationStats, Splits, WeatherSeries,
};
use gridcast_core::forecast::{evaluate_horizons, rollout, HorizonEval, RolloutPlan};
use gridcast_core::models::{count_parameters, Model, ModelConfig};
use gridcast_core::objectives::MetricReport;
use gridcast_core::rng::derive_seed;
use gridcast_core::sphere::{load_constant_masks, MaskSource, StaticChannelSet};
use gridcast_core::training::{
    finetune_multistep, load_partial_checkpoint, pretrain, train, Checkpoint, FinetuneConfig,
    OptimConfig, TaskConfig, TrainData, TrainReport,
};
use gridcast_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::{checkpoint, container};

/// Long-format result row: one metric value of one channel at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub label: String,
    pub horizon_steps: usize,
    pub metric: String,
    pub channel: String,
    pub value: f64,
}

pub fn result_rows(run_id: &str, label: &str, reports: &[MetricReport]) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for r in reports {
        for m in r.rows(run_id) {
            let mut push = |metric: &str, value: f64| {
                rows.push(ResultRow {
                    run_id: run_id.to_string(),
                    label: label.to_string(),
                    horizon_steps: m.horizon_steps,
                    metric: metric.to_string(),
                    channel: m.channel.clone(),
                    value,
                })
            };
            if let Some(acc) = m.acc {
                push("acc", acc);
            }
            push("rmse", m.rmse);
        }
    }
    rows
}

/// Normalized data, assembler and model configuration of an experiment.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cfg: ExperimentConfig,
    pub series: WeatherSeries,
    /// Stats of the raw training split used for normalization.
    pub stats: NormalizationStats,
    pub splits: Splits,
    pub assembler: InputAssembler,
    pub model_config: ModelConfig,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig) -> Result<Prepared> {
        cfg.validate()?;
        let raw = match (&cfg.dataset.path, &cfg.dataset.synthetic) {
            (Some(p), _) => container::read_series(p)?,
            (None, Some(s)) => generate_synthetic(&s.recipe()?)?,
            (None, None) => unreachable!("validated"),
        };
        let splits = cfg.splits(raw.n_times())?;
        let stats = compute_normalization(&raw, splits.train.clone())?;
        let series = raw.normalized(&stats)?;
        let masks = match (&cfg.extras.masks, &cfg.extras.masks_path) {
            (false, _) => StaticChannelSet::default(),
            (true, None) => {
                load_constant_masks(&series.grid, &MaskSource::Synthetic { seed: cfg.seed })?
            }
            (true, Some(p)) => load_constant_masks(
                &series.grid,
                &MaskSource::Fields(container::read_static(p)?.1),
            )?,
        };
        let n_masks = masks.len();
        let extras = ExtrasConfig {
            zenith: cfg.extras.zenith,
            coords: cfg.extras.coords,
            masks,
        };
        let (zm, zs) = zenith_stats(&series.grid, &series.timestamps[splits.train.clone()]);
        let assembler = InputAssembler::new(
            series.grid.clone(),
            series.n_channels(),
            cfg.extras.n_input_steps,
            &extras,
        )?
        .with_zenith_stats(zm, zs);
        let shape = cfg.dataset.shape()?;
        let model_config = cfg.model_config(&shape, n_masks)?;
        Ok(Prepared {
            cfg: cfg.clone(),
            series,
            stats,
            splits,
            assembler,
            model_config,
        })
    }

    pub fn data(&self) -> TrainData<'_> {
        TrainData {
            series: &self.series,
            assembler: &self.assembler,
            train: self.splits.train.clone(),
            val: self.splits.val.clone(),
        }
    }

    pub fn task(&self) -> TaskConfig {
        TaskConfig {
            formulation: self.cfg.formulation,
            loss: self.cfg.loss,
            noise: self.cfg.noise,
            stride_steps: self.cfg.dataset.stride_steps,
        }
    }

    pub fn build_model(&self) -> Result<Model> {
        Ok(self
            .model_config
            .build(&self.series.grid, derive_seed(self.cfg.seed, 1))?)
    }

    /// Optimizer settings of stage `stage`, each with its own seed.
    pub fn optim(&self, stage: u64) -> OptimConfig {
        self.cfg
            .optim
            .with_seed(derive_seed(self.cfg.seed, 100 + stage))
    }

    pub fn evaluate(&self, model: &Model) -> Result<Vec<MetricReport>> {
        let eval = HorizonEval {
            horizons: self.cfg.horizons.clone(),
            stride_steps: self.cfg.dataset.stride_steps,
            range: self.splits.test.clone(),
            max_initial_conditions: self.cfg.evaluation.max_initial_conditions,
        };
        Ok(evaluate_horizons(
            model,
            &self.series,
            &self.assembler,
            self.cfg.formulation,
            &eval,
        )?)
    }

    /// Autoregressive forecast of `steps` model steps from the initial
    /// condition whose last input is time index `last`, in physical units.
    pub fn forecast(&self, model: &Model, last: usize, steps: usize) -> Result<WeatherSeries> {
        let n = self.assembler.n_steps();
        if last + 1 < n || last >= self.series.n_times() {
            return Err(Error::Usage(format!(
                "time index {last} cannot end an input window of {n} steps"
            )));
        }
        let stride = self.series.dt_seconds() * self.cfg.dataset.stride_steps as i64;
        let plan = RolloutPlan {
            assembler: &self.assembler,
            formulation: self.cfg.formulation,
            stride_seconds: stride,
        };
        let history: Vec<Tensor> = (last + 1 - n..=last)
            .map(|t| self.series.frame(t))
            .collect();
        let r = rollout(model, plan, &history, self.series.timestamps[last], steps)?;
        let data = r
            .states
            .iter()
            .flat_map(|s| s.data().iter().copied())
            .collect();
        let out = WeatherSeries::new(
            self.series.grid.clone(),
            self.series.schema.clone(),
            r.timestamps,
            data,
        )?;
        Ok(out.denormalized(&self.stats)?)
    }
}

/// One experiment's output directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    /// Creates `<root>/<run_id>`, refusing an existing one unless `force`.
    pub fn create(root: &Path, run_id: &str, force: bool) -> Result<RunDir> {
        let path = root.join(run_id);
        if path.exists() {
            if !force {
                return Err(Error::RunExists(path));
            }
            fs::remove_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        }
        fs::create_dir_all(path.join("checkpoints")).map_err(|e| Error::io(&path, e))?;
        Ok(RunDir { path })
    }

    pub fn open(root: &Path, run_id: &str) -> Result<RunDir> {
        let path = root.join(run_id);
        if !path.join("config.toml").is_file() {
            return Err(Error::Usage(format!(
                "{} is not a run directory",
                path.display()
            )));
        }
        Ok(RunDir { path })
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path.join(name);
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))
    }

    pub fn write_config(&self, cfg: &ExperimentConfig) -> Result<()> {
        self.write("config.toml", cfg.to_toml_string())?;
        self.write("config.canonical.json", cfg.canonical_json() + "\n")?;
        self.write("config.sha256", cfg.hash() + "\n")
    }

    pub fn set_status(&self, status: &str) -> Result<()> {
        self.write("status", format!("{status}\n"))
    }

    pub fn status(&self) -> Option<String> {
        fs::read_to_string(self.path.join("status"))
            .ok()
            .map(|s| s.trim().to_string())
    }

    pub fn checkpoint_path(&self, stage: &str) -> PathBuf {
        self.path.join("checkpoints").join(format!("{stage}.ckpt"))
    }

    pub fn save_checkpoint(&self, stage: &str, net: &Model, cfg: &ExperimentConfig) -> Result<()> {
        let meta = serde_json::json!({
            "stage": stage,
            "run_id": cfg.run_id,
            "config_sha256": cfg.hash(),
            "parameters": count_parameters(net),
        });
        checkpoint::save(
            &self.checkpoint_path(stage),
            &Checkpoint::from_network(net),
            meta,
        )?;
        self.write("checkpoints/latest", format!("{stage}\n"))
    }

    pub fn latest_checkpoint(&self) -> Result<PathBuf> {
        let p = self.path.join("checkpoints/latest");
        let stage = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(self.checkpoint_path(stage.trim()))
    }

    fn append_csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<()> {
        let p = self.path.join(name);
        let fresh = !p.exists();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&p)
            .map_err(|e| Error::io(&p, e))?;
        let mut w = csv::WriterBuilder::new()
            .has_headers(fresh)
            .from_writer(file);
        for r in rows {
            w.serialize(r)
                .map_err(|e| Error::format(&p, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&p, e))
    }

    pub fn record_training(&self, stage: &str, report: &TrainReport) -> Result<()> {
        #[derive(Serialize)]
        struct Loss<'a> {
            stage: &'a str,
            step: usize,
            loss: f64,
        }
        #[derive(Serialize)]
        struct Val<'a> {
            stage: &'a str,
            epoch: usize,
            val_loss: f64,
            val_mse: f64,
        }
        let losses: Vec<Loss> = report
            .loss_history
            .iter()
            .enumerate()
            .map(|(step, &loss)| Loss { stage, step, loss })
            .collect();
        self.append_csv("loss_history.csv", &losses)?;
        let vals: Vec<Val> = report
            .val_loss
            .iter()
            .zip(&report.val_mse)
            .enumerate()
            .map(|(epoch, (&val_loss, &val_mse))| Val {
                stage,
                epoch,
                val_loss,
                val_mse,
            })
            .collect();
        if !vals.is_empty() {
            self.append_csv("validation.csv", &vals)?;
        }
        Ok(())
    }

    pub fn write_metrics(&self, cfg: &ExperimentConfig, reports: &[MetricReport]) -> Result<()> {
        for name in ["metrics.csv", "results.csv"] {
            let p = self.path.join(name);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        let rows: Vec<_> = reports.iter().flat_map(|r| r.rows(&cfg.run_id)).collect();
        self.append_csv("metrics.csv", &rows)?;
        self.append_csv(
            "results.csv",
            &result_rows(&cfg.run_id, cfg.display_label(), reports),
        )
    }

    pub fn read_results(&self) -> Result<Vec<ResultRow>> {
        read_results(&self.path.join("results.csv"))
    }
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let expected = [
        "run_id",
        "label",
        "horizon_steps",
        "metric",
        "channel",
        "value",
    ];
    let headers = r
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != expected {
        let found: Vec<&str> = headers.iter().collect();
        return Err(Error::Schema(format!(
            "{}: columns {found:?} differ from {expected:?}",
            path.display()
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

/// Stages of a run, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    pub pretrain: bool,
    pub train: bool,
    pub finetune: bool,
    pub evaluate: bool,
}

impl Stages {
    pub const ALL: Stages = Stages {
        pretrain: true,
        train: true,
        finetune: true,
        evaluate: true,
    };
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub config_sha256: String,
    pub parameters: usize,
    pub reports: Vec<MetricReport>,
}

/// Loads `path` into `model`, requiring every parameter to match.
pub fn restore(model: &mut Model, path: &Path) -> Result<()> {
    let (ckpt, _) = checkpoint::load(path)?;
    let report = load_partial_checkpoint(model, &ckpt, false, 0)?;
    if !report.reinitialized.is_empty() {
        return Err(Error::Schema(format!(
            "{} does not match the configured model: {:?}",
            path.display(),
            report.reinitialized
        )));
    }
    Ok(())
}

fn execute(
    run: &RunDir,
    prep: &Prepared,
    model: &mut Model,
    stages: Stages,
) -> Result<Vec<MetricReport>> {
    let cfg = &prep.cfg;
    let data = prep.data();
    let task = prep.task();
    if stages.pretrain {
        if let Some(p) = &cfg.pretrain {
            let report = pretrain(model, &data, &task, p, &prep.optim(0))?;
            run.record_training("pretrain", &report)?;
            run.save_checkpoint("pretrain", model, cfg)?;
        }
    }
    if stages.train {
        let report = train(model, &data, &task, &prep.optim(1))?;
        run.record_training("train", &report)?;
        run.save_checkpoint("train", model, cfg)?;
    }
    if stages.finetune {
        if let Some(f) = &cfg.finetune {
            for (i, &k) in f.stages.iter().enumerate() {
                let one = FinetuneConfig {
                    stages: vec![k],
                    epochs_per_stage: Some(f.stage_epochs(cfg.optim.epochs)),
                    ..f.clone()
                };
                let stage = format!("finetune_{i}_{k}step");
                let report =
                    finetune_multistep(model, &data, &task, &one, &prep.optim(2 + i as u64))?;
                run.record_training(&stage, &report.stages[0].1)?;
                run.save_checkpoint(&stage, model, cfg)?;
            }
        }
    }
    let mut reports = Vec::new();
    if stages.evaluate {
        reports = prep.evaluate(model)?;
        run.write_metrics(cfg, &reports)?;
    }
    Ok(reports)
}

fn write_summary(
    run: &RunDir,
    prep: &Prepared,
    model: &Model,
    reports: &[MetricReport],
) -> Result<()> {
    let horizons: Vec<_> = reports
        .iter()
        .map(|r| serde_json::json!({"horizon_steps": r.horizon_steps, "acc": r.acc_mean, "rmse": r.rmse_mean}))
        .collect();
    let summary = serde_json::json!({
        "run_id": prep.cfg.run_id,
        "label": prep.cfg.display_label(),
        "config_sha256": prep.cfg.hash(),
        "parameters": count_parameters(model),
        "status": run.status(),
        "horizons": horizons,
    });
    run.write(
        "summary.json",
        serde_json::to_string_pretty(&summary).expect("json") + "\n",
    )
}

/// Runs `stages` of `cfg` in `run`, starting from `model`. Failures are
/// recorded in the status file before being returned.
pub fn run_stages(
    run: &RunDir,
    prep: &Prepared,
    mut model: Model,
    stages: Stages,
) -> Result<(Model, Vec<MetricReport>)> {
    run.set_status("running")?;
    match execute(run, prep, &mut model, stages) {
        Ok(reports) => {
            run.set_status("complete")?;
            write_summary(run, prep, &model, &reports)?;
            Ok((model, reports))
        }
        Err(e) => {
            run.set_status(&format!("failed[{}]: {e}", e.category()))?;
            Err(e)
        }
    }
}

/// Initial model: fresh, or partially loaded from `init_checkpoint`.
pub fn initial_model(run: &RunDir, prep: &Prepared) -> Result<Model> {
    let mut model = prep.build_model()?;
    if let Some(init) = &prep.cfg.init_checkpoint {
        let (ckpt, _) = checkpoint::load(&init.path)?;
        let report = load_partial_checkpoint(
            &mut model,
            &ckpt,
            init.reinit_heads,
            derive_seed(prep.cfg.seed, 7),
        )?;
        run.write("load_report.txt", report.render())?;
    }
    Ok(model)
}

/// Full experiment: pretrain (optional), train, fine-tune (optional) and
/// evaluate, with every artifact under `<root>/<run_id>`.
pub fn run_experiment(cfg: &ExperimentConfig, root: &Path, force: bool) -> Result<RunSummary> {
    cfg.validate()?;
    let run = RunDir::create(root, &cfg.run_id, force)?;
    run.write_config(cfg)?;
    let prep = Prepared::new(cfg)?;
    let model = initial_model(&run, &prep)?;
    log::info!(
        "run {}: {} parameters",
        cfg.run_id,
        count_parameters(&model)
    );
    let (model, reports) = run_stages(&run, &prep, model, Stages::ALL)?;
    Ok(RunSummary {
        dir: run.path.clone(),
        config_sha256: cfg.hash(),
        parameters: count_parameters(&model),
        reports,
    })
}
