use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridcast::compare::{compare, plot_panels, CompareOptions};
use gridcast::config::{env_overrides, ExperimentConfig};
use gridcast::matrix::{run_matrix, Axis};
use gridcast::run::{self, initial_model, restore, run_stages, Prepared, RunDir, Stages};
use gridcast::{container, Error, Result};
use gridcast_core::dataset::generate_synthetic;

#[derive(Parser)]
#[command(
    name = "gridcast",
    version,
    about = "Data-driven global weather forecasting experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured run id.
    #[arg(long)]
    run_id: Option<String>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces an existing run directory.
    #[arg(long)]
    force: bool,
    /// Root of the run directories.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Writes the configured synthetic dataset as a container.
    GenerateData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Destination container directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Runs the pretraining stage (when configured) into a new run.
    Pretrain(Common),
    /// Runs pretraining (when configured) and supervised training into a new run.
    Train(Common),
    /// Fine-tunes the latest checkpoint of an existing run.
    Finetune(Common),
    /// Evaluates the latest checkpoint of an existing run.
    Evaluate(Common),
    /// Autoregressive forecast from the latest checkpoint of a run.
    Rollout {
        #[command(flatten)]
        common: Common,
        /// Number of model steps.
        #[arg(long)]
        steps: usize,
        /// Time index of the last input state; defaults to the first valid test index.
        #[arg(long)]
        start: Option<usize>,
        /// Destination container directory; defaults to `<run>/rollout`.
        #[arg(long)]
        dest: Option<PathBuf>,
    },
    /// Full experiment: pretrain, train, fine-tune and evaluate.
    Run(Common),
    /// One run per value of a configuration key.
    Matrix {
        #[command(flatten)]
        common: Common,
        /// `key=v1,v2,...`
        #[arg(long)]
        axis: Axis,
    },
    /// Merges finished runs into one table and figures.
    Compare {
        /// Run directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Run id or label used as the reference for marginal bars.
        #[arg(long = "default")]
        default_run: Option<String>,
        /// Horizon (model steps) of the marginal bars.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// ACC and RMSE panels of finished runs.
    Plot {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Destination SVG.
        #[arg(long)]
        out: PathBuf,
    },
}

fn overrides(run_id: Option<&str>, seed: Option<u64>) -> Vec<(String, String)> {
    let mut o = env_overrides(std::env::vars());
    if let Some(id) = run_id {
        o.push(("run_id".into(), format!("\"{id}\"")));
    }
    if let Some(s) = seed {
        o.push(("seed".into(), s.to_string()));
    }
    o
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    ExperimentConfig::from_path(
        &common.config,
        &overrides(common.run_id.as_deref(), common.seed),
    )
}

/// New run directory executing `stages` from a fresh (or initialized) model.
fn fresh(common: &Common, stages: Stages) -> Result<PathBuf> {
    let cfg = load(common)?;
    let run = RunDir::create(&common.out, &cfg.run_id, common.force)?;
    run.write_config(&cfg)?;
    let prep = Prepared::new(&cfg)?;
    let model = initial_model(&run, &prep)?;
    run_stages(&run, &prep, model, stages)?;
    Ok(run.path)
}

/// Existing run directory continued from its latest checkpoint.
fn resume(common: &Common, stages: Stages) -> Result<PathBuf> {
    let cfg = load(common)?;
    let run = RunDir::open(&common.out, &cfg.run_id)?;
    let prep = Prepared::new(&cfg)?;
    let mut model = prep.build_model()?;
    restore(&mut model, &run.latest_checkpoint()?)?;
    run_stages(&run, &prep, model, stages)?;
    Ok(run.path)
}

fn only(f: impl FnOnce(&mut Stages)) -> Stages {
    let mut s = Stages {
        pretrain: false,
        train: false,
        finetune: false,
        evaluate: false,
    };
    f(&mut s);
    s
}

fn announce(path: &Path) {
    println!("{}", path.display());
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenerateData {
            config,
            seed,
            out,
            force,
        } => {
            let cfg = ExperimentConfig::from_path(&config, &overrides(None, seed))?;
            let spec = cfg.dataset.synthetic.as_ref().ok_or_else(|| {
                Error::Usage("generate-data needs a [dataset.synthetic] recipe".into())
            })?;
            if out.exists() {
                if !force {
                    return Err(Error::RunExists(out));
                }
                std::fs::remove_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            }
            container::write_series(&out, &generate_synthetic(&spec.recipe()?)?)?;
            announce(&out);
        }
        Command::Pretrain(c) => announce(&fresh(&c, only(|s| s.pretrain = true))?),
        Command::Train(c) => announce(&fresh(
            &c,
            only(|s| {
                s.pretrain = true;
                s.train = true;
            }),
        )?),
        Command::Finetune(c) => announce(&resume(&c, only(|s| s.finetune = true))?),
        Command::Evaluate(c) => announce(&resume(&c, only(|s| s.evaluate = true))?),
        Command::Rollout {
            common,
            steps,
            start,
            dest,
        } => {
            let cfg = load(&common)?;
            let run = RunDir::open(&common.out, &cfg.run_id)?;
            let prep = Prepared::new(&cfg)?;
            let mut model = prep.build_model()?;
            restore(&mut model, &run.latest_checkpoint()?)?;
            let n = prep.assembler.n_steps();
            let last = start.unwrap_or(prep.splits.test.start.max(n - 1));
            let forecast = prep.forecast(&model, last, steps)?;
            let dest = dest.unwrap_or_else(|| run.path.join("rollout"));
            if dest.exists() {
                std::fs::remove_dir_all(&dest).map_err(|e| Error::io(&dest, e))?;
            }
            container::write_series(&dest, &forecast)?;
            announce(&dest);
        }
        Command::Run(c) => announce(&run::run_experiment(&load(&c)?, &c.out, c.force)?.dir),
        Command::Matrix { common, axis } => {
            let base = load(&common)?.to_value();
            for s in run_matrix(&base, &axis, &common.out, common.force)? {
                announce(&s.dir);
            }
        }
        Command::Compare {
            runs,
            out,
            default_run,
            horizon,
        } => {
            let c = compare(
                &runs,
                &out,
                &CompareOptions {
                    default_run,
                    horizon,
                },
            )?;
            for f in c.files {
                announce(&f);
            }
        }
        Command::Plot { runs, out } => {
            let mut rows = Vec::new();
            for r in &runs {
                rows.extend(run::read_results(&r.join("results.csv"))?);
            }
            plot_panels(&out, &rows)?;
            announce(&out);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {message}", e.category());
            ExitCode::FAILURE
        }
    }
}
