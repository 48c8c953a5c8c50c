//! `dualdebias`: estimate covariance bundles, plan erasures, edit layer
//! weights, evaluate bias metrics, generate synthetic data and run the toy
//! model pipeline. Exit codes: 0 success, 1 internal error, 2 invalid input
//! or config.

mod commands;
mod config;
mod records;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualdebias::Result;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "dualdebias",
    version,
    about = "Dual debiasing of linear layers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a setting with a dotted key, e.g. `--set plan.out=plan`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory of this verb.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a covariance bundle from sample files.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        shards: Option<usize>,
    },
    /// Plan an erasure from a bundle and print the variance totals.
    Plan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Edit the planned layers' weights.
    Edit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Fit the bias model and compute performance gaps from record files.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Generate synthetic Gaussian, layer or corpus data.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kind: Option<String>,
    },
    /// Toy language model: train, extract, edit-pipeline.
    Toylm {
        #[command(subcommand)]
        action: ToylmAction,
    },
    /// Per-direction variance report of a plan.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        plan: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ToylmAction {
    Train {
        #[command(flatten)]
        common: Common,
    },
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        layer: Option<usize>,
    },
    EditPipeline {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut c = config::load(common.config.as_deref(), &common.sets)?;
    if let Some(s) = common.seed {
        c.seed = s;
    }
    Ok(c)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Estimate { common, shards } => {
            let mut c = load(&common)?;
            set(&mut c.estimate.shards, shards);
            set(&mut c.estimate.out, common.out.map(Some));
            commands::estimate(&c)
        }
        Command::Plan {
            common,
            bundle,
            threshold,
        } => {
            let mut c = load(&common)?;
            set(&mut c.threshold_t, threshold);
            set(&mut c.plan.bundle, bundle.map(Some));
            set(&mut c.plan.out, common.out.map(Some));
            commands::plan(&c)
        }
        Command::Edit { common, threshold } => {
            let mut c = load(&common)?;
            set(&mut c.threshold_t, threshold);
            set(&mut c.edit.out, common.out.map(Some));
            commands::edit(&c)
        }
        Command::Eval { common } => {
            let mut c = load(&common)?;
            set(&mut c.eval.out, common.out.map(Some));
            commands::eval(&c)
        }
        Command::Synth { common, kind } => {
            let mut c = load(&common)?;
            set(&mut c.synth.kind, kind);
            set(&mut c.synth.out, common.out.map(Some));
            commands::synth(&c)
        }
        Command::Toylm { action } => match action {
            ToylmAction::Train { common } => {
                let mut c = load(&common)?;
                set(&mut c.toylm.out, common.out.map(Some));
                commands::toylm_train(&c)
            }
            ToylmAction::Extract {
                common,
                model,
                layer,
            } => {
                let mut c = load(&common)?;
                set(&mut c.toylm.model, model.map(Some));
                set(&mut c.toylm.layer, layer);
                set(&mut c.toylm.out, common.out.map(Some));
                commands::toylm_extract(&c)
            }
            ToylmAction::EditPipeline { common } => {
                let mut c = load(&common)?;
                set(&mut c.toylm.out, common.out.map(Some));
                commands::toylm_edit_pipeline(&c)
            }
        },
        Command::Report { common, plan } => {
            let mut c = load(&common)?;
            set(&mut c.report.plan, plan.map(Some));
            set(&mut c.report.out, common.out.map(Some));
            commands::report(&c)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
