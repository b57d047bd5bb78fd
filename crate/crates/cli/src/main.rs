use std::path::PathBuf;
use std::sync::OnceLock;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use chanest_cli::config::{ExperimentConfig, Profile};
use chanest_cli::pipeline::{self, ModelRef};
use chanest_core::enhance::AeMode;

#[derive(Parser)]
#[command(name = "chanest", version, about = "OFDM channel-estimation workbench", after_long_help = config_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config overlaid on the profile defaults (see `chanest help <verb>`)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides `master_seed`)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sample counts and epoch budget: desk or full
    #[arg(long, global = true)]
    profile: Option<Profile>,
    /// Worker threads; 1 gives a single-threaded run
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Run directory (overrides `out_dir`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate training, test, Doppler-sweep and statistics sets
    Generate(Common),
    /// Train the autoencoder on 2-channel LS inputs
    TrainAe {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "pilot")]
        mode: AeMode,
    },
    /// Append the autoencoder feature plane to the datasets of a mode
    Enhance {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "pilot")]
        mode: AeMode,
    },
    /// Train one estimator, e.g. `--model reesnet-enhanced`
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: ModelRef,
        /// Training replicate; added to the model name as `.rN`
        #[arg(long)]
        replicate: Option<usize>,
        /// Train on this dataset file instead of the run's training set
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// MSE versus SNR on the paired test set
    EvalSnr {
        #[command(flatten)]
        common: Common,
        /// Comma-separated models (default `eval.models`); LS and MMSE are always included
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
    },
    /// MSE versus Doppler shift at the sweep SNR
    EvalDoppler {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
    },
    /// Parameter and MAC counts of every architecture
    Report(Common),
}

fn config_help() -> &'static str {
    static TEXT: OnceLock<String> = OnceLock::new();
    TEXT.get_or_init(|| {
        format!(
            "Configuration keys (desk defaults; `--profile full` raises sample counts and epochs):\n\n{}",
            ExperimentConfig::for_profile(Profile::Desk).to_toml()
        )
    })
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    if let Some(n) = c.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring worker pool")?;
    }
    let text = match &c.config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
        None => String::new(),
    };
    let mut cfg = ExperimentConfig::from_toml(&text, c.profile)?;
    if let Some(s) = c.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate(c) => pipeline::generate(&load(&c)?),
        Command::TrainAe { common, mode } => {
            let s = pipeline::train_ae(&load(&common)?, mode)?;
            println!(
                "ae-{mode}: kept epoch {}, test reconstruction MSE {:.4e} (untrained {:.4e})",
                s.report.kept_epoch, s.test_mse, s.untrained_test_mse
            );
            Ok(())
        }
        Command::Enhance { common, mode } => pipeline::enhance(&load(&common)?, mode),
        Command::Train { common, model, replicate, data } => {
            let cfg = load(&common)?;
            let m = ModelRef::new(model.id, replicate.unwrap_or(model.replicate));
            let s = pipeline::train_model(&cfg, &m, data.as_deref())?;
            match s.best_val_loss {
                Some(v) => println!("{m}: kept epoch {}, validation loss {v:.4e}", s.report.kept_epoch),
                None => println!("{m}: trained {} epochs", s.report.epochs.len()),
            }
            Ok(())
        }
        Command::EvalSnr { common, models } => {
            let cfg = load(&common)?;
            let rows = pipeline::eval_snr(&cfg, &pipeline::resolve_models(&cfg, models.as_deref())?)?;
            print!("{}", pipeline::snr_csv(&rows));
            Ok(())
        }
        Command::EvalDoppler { common, models } => {
            let cfg = load(&common)?;
            let rows = pipeline::eval_doppler(&cfg, &pipeline::resolve_models(&cfg, models.as_deref())?)?;
            print!("{}", pipeline::doppler_csv(&rows));
            Ok(())
        }
        Command::Report(c) => {
            print!("{}", pipeline::report(&load(&c)?)?);
            Ok(())
        }
    }
}
