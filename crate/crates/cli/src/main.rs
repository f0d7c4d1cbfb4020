use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use patchfield::attack::{Ablation, Mode};
use patchfield_cli::{eval_transfer_dir, run_experiment, synth, CliError, RunOptions};

#[derive(Parser)]
#[command(
    name = "patchfield",
    version,
    about = "Adversarial patch experiments against vision encoders"
)]
struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full method.
    Attack(RunArgs),
    /// Run with one component removed.
    Ablate {
        #[arg(long, value_enum)]
        variant: Variant,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Report feature-space transfer of a finished run to held-out encoders.
    EvalTransfer {
        /// Output directory of an `attack` or `ablate` run.
        #[arg(long)]
        result: PathBuf,
        /// JSON array of encoder specs.
        #[arg(long)]
        heldout: PathBuf,
    },
    /// Write a synthetic desk scene and a matching config.
    MakeDesk {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 96)]
        size: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replace an existing output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Digital,
    Physical,
}

#[derive(Clone, Copy, ValueEnum)]
#[allow(clippy::enum_variant_names)]
enum Variant {
    NoSvd,
    NoMaskUpdate,
    NoPatchCrop,
}

impl RunArgs {
    fn options(&self, ablation: Ablation) -> RunOptions {
        RunOptions {
            seed: self.seed,
            mode: self.mode.map(|m| match m {
                ModeArg::Digital => Mode::Digital,
                ModeArg::Physical => Mode::Physical,
            }),
            ablation,
            out: self.out.clone(),
            force: self.force,
        }
    }
}

/// Writes to stdout; a closed pipe is not an error.
fn print_json<T: serde::Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Attack(args) => {
            let report = run_experiment(&args.config, &args.options(Ablation::Full))?;
            print_json(&report.summary);
        }
        Command::Ablate { variant, run } => {
            let ablation = match variant {
                Variant::NoSvd => Ablation::NoSvd,
                Variant::NoMaskUpdate => Ablation::NoMaskUpdate,
                Variant::NoPatchCrop => Ablation::NoPatchCrop,
            };
            let report = run_experiment(&run.config, &run.options(ablation))?;
            print_json(&report.summary);
        }
        Command::EvalTransfer { result, heldout } => print_json(&eval_transfer_dir(&result, &heldout)?),
        Command::MakeDesk { out, seed, size } => {
            synth::write_desk(&out, seed, size)?;
            let _ = writeln!(std::io::stdout(), "{}", out.join("config.json").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("patchfield: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
