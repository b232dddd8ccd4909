use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use octa_core::folds::make_folds;
use octa_core::synth::synth_dataset;
use octa_core::{Fov, Mode, OctaSample, SegTask, TaskName};
use octa_seg::config::RunConfig;
use octa_seg::cv::{reported_baselines_tsv, run_cv};
use octa_seg::dataset::{load_dataset_with, write_dataset, LoadOptions};
use octa_seg::model::AdapterCheckpoint;
use octa_seg::service::{export, router, Engine};
use octa_seg::train::{by_id, evaluate, train_fold, LabelPrompter};

#[derive(Parser)]
#[command(name = "octa", about = "Promptable OCTA segmentation: training, evaluation and serving")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
    Both,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root (`<root>/<fov>/projections/...`).
    #[arg(long, conflicts_with = "synth")]
    data: Option<PathBuf>,
    /// Use `n` in-memory synthetic samples instead of a dataset.
    #[arg(long)]
    synth: Option<usize>,
    #[arg(long, default_value = "3M")]
    fov: Fov,
    #[arg(long)]
    task: Option<TaskName>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Require every image to match the nominal side of its field of view.
    #[arg(long)]
    strict_fov: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Fine-tune adapters on one fold and save the best checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Score a checkpoint on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        prompts: Switch,
    },
    /// k-fold cross-validation; writes results.tsv/results.json.
    Cv {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "both")]
        prompts: Switch,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Write a synthetic dataset in the on-disk layout.
    Synth {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 128)]
        side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "3M")]
        fov: Fov,
        #[arg(long, default_value = "synth")]
        out: PathBuf,
    },
    /// Register an adapter checkpoint in a serving directory.
    ServeExport {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long, default_value = "serving")]
        out: PathBuf,
    },
    /// Run the HTTP service over a serving directory.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Print published comparison numbers (not produced by this tool).
    Baselines,
}

fn load_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if common.task.is_some() || common.mode.is_some() {
        let name = common.task.unwrap_or(cfg.train.task.name());
        let mode = common.mode.unwrap_or(cfg.train.task.mode());
        cfg.train.task = SegTask::new(name, mode)?;
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.cv.fold_seed = seed;
        cfg.cv.eval_seed = seed;
    }
    Ok(cfg)
}

fn load_samples(common: &Common, cfg: &RunConfig) -> anyhow::Result<Vec<OctaSample>> {
    match (&common.data, common.synth) {
        (Some(root), _) => Ok(load_dataset_with(
            root,
            common.fov,
            LoadOptions {
                strict_fov_side: common.strict_fov,
            },
        )?),
        (None, Some(n)) => {
            let mut samples = synth_dataset(n, cfg.train.model.input_side, cfg.train.seed);
            for s in &mut samples {
                s.fov = common.fov;
            }
            Ok(samples)
        }
        (None, None) => bail!("pass --data <dir> or --synth <n>"),
    }
}

fn settings(switch: Switch) -> Vec<bool> {
    match switch {
        Switch::On => vec![true],
        Switch::Off => vec![false],
        Switch::Both => vec![false, true],
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Train { common, fold } => {
            let cfg = load_config(&common)?;
            let samples = load_samples(&common, &cfg)?;
            let ids: Vec<String> = samples.iter().map(|s| s.sample_id.clone()).collect();
            let folds = make_folds(&ids, cfg.cv.k, cfg.cv.fold_seed)?;
            let split = folds.get(fold).with_context(|| format!("fold {fold} out of range (k = {})", cfg.cv.k))?;
            let lookup = by_id(&samples);
            let pick = |ids: &[String]| ids.iter().map(|id| (*lookup[id.as_str()]).clone()).collect::<Vec<_>>();
            let outcome = train_fold(&pick(&split.train_ids), &pick(&split.val_ids), &cfg.train)?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join("adapter.safetensors");
            outcome.checkpoint.save(&path)?;
            write_json(&common.out.join("history.json"), &outcome.history)?;
            for h in &outcome.history {
                println!("epoch {:>3}  loss {:.4}  val dice {:?}  lr {:.2e}", h.epoch, h.train_loss, h.val_dice, h.lr);
            }
            println!("best epoch {:?}; adapter written to {}", outcome.best_epoch, path.display());
        }
        Command::Eval {
            common,
            checkpoint,
            base,
            prompts,
        } => {
            let mut cfg = load_config(&common)?;
            let samples = load_samples(&common, &cfg)?;
            let ckpt = AdapterCheckpoint::load(&checkpoint)?;
            if let Some(task) = ckpt.meta.task {
                if common.task.is_none() && common.mode.is_none() {
                    cfg.train.task = task;
                }
            }
            let model = ckpt.build_model(base.as_deref())?;
            std::fs::create_dir_all(&common.out)?;
            for on in settings(prompts) {
                let summary = evaluate(&model, &samples, &cfg.train, on, cfg.cv.eval_seed, &mut LabelPrompter)?;
                println!(
                    "{} prompts={}  dice {:.4} ± {:.4}  jaccard {:.4} ± {:.4}  (n = {})",
                    cfg.train.task,
                    if on { "on" } else { "off" },
                    summary.dice_mean,
                    summary.dice_std,
                    summary.jaccard_mean,
                    summary.jaccard_std,
                    summary.n
                );
                let name = format!("eval_prompts_{}.json", if on { "on" } else { "off" });
                write_json(&common.out.join(name), &summary)?;
            }
        }
        Command::Cv { common, prompts, k } => {
            let mut cfg = load_config(&common)?;
            if let Some(k) = k {
                cfg.cv.k = k;
            }
            cfg.cv.prompt_settings = settings(prompts);
            let samples = load_samples(&common, &cfg)?;
            let report = run_cv(&samples, &cfg.train, &cfg.cv, Some(&common.out))?;
            print!("{}", report.table.to_tsv());
            for f in report.folds.iter().filter(|f| f.error.is_some()) {
                eprintln!("fold {} failed: {}", f.fold, f.error.as_deref().unwrap_or_default());
            }
        }
        Command::Synth {
            n,
            side,
            seed,
            fov,
            out,
        } => {
            let mut samples = synth_dataset(n, side, seed);
            for s in &mut samples {
                s.fov = fov;
            }
            write_dataset(&out, &samples)?;
            println!("wrote {n} samples to {}", out.join(fov.as_str()).display());
        }
        Command::ServeExport { checkpoint, base, out } => {
            let ckpt = AdapterCheckpoint::load(&checkpoint)?;
            let entry = export(&out, &ckpt, base.as_deref())?;
            println!("registered {} as {} in {}", entry.task, entry.file, out.display());
        }
        Command::Serve { config, dir, port } => {
            let mut cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            }
            .service;
            if dir.is_some() {
                cfg.checkpoint_dir = dir;
            }
            if let Some(port) = port {
                cfg.port = port;
            }
            let engine = Arc::new(Engine::from_config(&cfg)?);
            for t in engine.tasks() {
                println!("loaded {}:{} from {}", t.task, t.mode, t.checkpoint);
            }
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(("0.0.0.0", cfg.port)).await?;
                println!("listening on {}", listener.local_addr()?);
                axum::serve(listener, router(engine)).await?;
                anyhow::Ok(())
            })?;
        }
        Command::Baselines => print!("{}", reported_baselines_tsv()),
    }
    Ok(())
}
