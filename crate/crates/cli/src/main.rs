//! `trajgpt`: generate synthetic cohorts, pretrain, evaluate, forecast,
//! trace risk, export embeddings, run ablations and time the kernels.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use commands::Ctx;
use config::InferenceMode;
use trajgpt::odebridge::GapMode;
use trajgpt::{Error, Precision};

#[derive(Parser, Debug)]
#[command(name = "trajgpt", version, about = "Selective recurrent attention for irregular event sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (for `generate`, the dataset directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Model checkpoint [default: <out>/model.ckpt].
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,

    /// Floating-point width; loading refuses a checkpoint of the other width.
    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,

    /// Predictor exported by `forecast` [default: time].
    #[arg(long, global = true, value_enum)]
    inference: Option<InferenceMode>,

    /// How the carried state decays across a forecast gap [default: history].
    #[arg(long = "gap-mode", global = true, value_enum)]
    gap_mode: Option<GapArg>,

    /// Recall cutoffs, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    k: Option<Vec<usize>>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Sample a cohort from the generator spec and split it.
    Generate,
    /// Train a model on the training split.
    Pretrain,
    /// Top-K recall of both inference modes on the test split.
    Evaluate,
    /// Export per-patient forecasts.
    Forecast,
    /// Risk trajectories of one code.
    Risk,
    /// Pooled sequence embeddings.
    Embed,
    /// Train and compare the ablation variants.
    Ablate,
    /// Wall-time scaling report.
    Bench,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GapArg {
    History,
    Full,
}

/// 1: contract violation, 2: IO or format problem, 3: numeric failure.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Contract(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let path = cli.config.clone().ok_or_else(|| Error::Contract("--config <path> is required".into()))?;
    let mut loaded = config::Loaded::read(&path)?;
    let precision = cli.precision.map(|p| match p {
        PrecisionArg::F32 => Precision::Single,
        PrecisionArg::F64 => Precision::Double,
    });
    {
        let c = &mut loaded.config;
        if let Some(s) = cli.seed {
            c.seed = Some(s);
        }
        if let Some(p) = precision {
            c.model.precision = Some(p);
        }
        if let Some(g) = cli.gap_mode {
            c.eval.gap_mode = Some(match g {
                GapArg::History => GapMode::HistoryOnly,
                GapArg::Full => GapMode::Full,
            });
        }
        if let Some(i) = cli.inference {
            c.eval.inference = Some(i);
        }
        if let Some(p) = &cli.checkpoint {
            c.checkpoint = Some(std::path::absolute(p).map_err(|e| Error::Io { path: p.clone(), source: e })?);
        }
        if let Some(k) = &cli.k {
            c.eval.ks = Some(k.clone());
        }
    }
    loaded.rehash();
    let inference = loaded.config.eval.inference.unwrap_or(InferenceMode::Time);
    let ctx = Ctx { loaded, inference, out_override: cli.out.clone() };
    match cli.command {
        Command::Generate => commands::generate(&ctx),
        Command::Pretrain => commands::pretrain(&ctx),
        Command::Evaluate => commands::evaluate_cmd(&ctx, precision),
        Command::Forecast => commands::forecast_cmd(&ctx, precision),
        Command::Risk => commands::risk_cmd(&ctx, precision),
        Command::Embed => commands::embed_cmd(&ctx, precision),
        Command::Ablate => commands::ablate(&ctx),
        Command::Bench => commands::bench(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
