//! `sainet` command-line driver.
//!
//! Exit codes: 0 success, 1 usage (bad arguments or configuration),
//! 2 data error, 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sainet::config::RunConfig;
use sainet::metrics::Scope;
use sainet::pipeline::{cmd_datagen, cmd_eval, cmd_infer, cmd_maskbank, cmd_train, Split};
use sainet::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "sainet", version, about = "Stereo-aware inpainting behind objects")]
struct Cli {
    /// Run configuration (TOML). Defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the run seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Single worker thread; outputs are bitwise reproducible.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScopeArg {
    Full,
    Synthesis,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Harvest context/synthesis mask pairs from the dataset.
    Maskbank,
    /// Generate a training (or test) set from the dataset and mask bank.
    Datagen {
        /// Square context with a centred square hole instead of bank masks.
        #[arg(long)]
        square_masks: bool,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
    },
    /// Train the network, checkpointing after every epoch.
    Train {
        /// Continue from this checkpoint.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// Inpaint sample directories with a trained checkpoint.
    Infer {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        input: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        output: Option<PathBuf>,
    },
    /// Score a checkpoint on the test set.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        scope: Option<ScopeArg>,
    },
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn threads_from_env() -> Result<Option<usize>, String> {
    match std::env::var("SAINET_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(format!("SAINET_THREADS must be a positive integer, got {v:?}")),
        },
        Err(_) => Ok(None),
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig, String> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| e.to_string())?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.deterministic |= cli.deterministic;
    match &cli.command {
        Command::Datagen { square_masks, .. } => cfg.datagen.square_masks |= *square_masks,
        Command::Train { resume } => {
            if resume.is_some() {
                cfg.train.resume_from = resume.clone();
            }
        }
        Command::Infer { checkpoint, input, output } => {
            if checkpoint.is_some() {
                cfg.paths.checkpoint = checkpoint.clone();
            }
            if let Some(i) = input {
                cfg.paths.infer_input = i.clone();
            }
            if let Some(o) = output {
                cfg.paths.infer_output = o.clone();
            }
        }
        Command::Eval { checkpoint, scope } => {
            if checkpoint.is_some() {
                cfg.paths.checkpoint = checkpoint.clone();
            }
            match scope {
                Some(ScopeArg::Full) => cfg.eval.scope = Scope::Full,
                Some(ScopeArg::Synthesis) => cfg.eval.scope = Scope::Synthesis,
                None => {}
            }
        }
        Command::Maskbank => {}
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &RunConfig) -> sainet::Result<()> {
    match &cli.command {
        Command::Maskbank => {
            let bank = cmd_maskbank(cfg)?;
            println!("{} mask pairs written to {}", bank.len(), cfg.paths.mask_bank.display());
        }
        Command::Datagen { split, .. } => {
            let (split, dir) = match split {
                SplitArg::Train => (Split::Train, &cfg.paths.training_set),
                SplitArg::Test => (Split::Test, &cfg.paths.test_set),
            };
            let manifest = cmd_datagen(cfg, split)?;
            println!("{} samples written to {}", manifest.entries.len(), dir.display());
        }
        Command::Train { .. } => {
            let summary = cmd_train(cfg)?;
            for (epoch, mean) in &summary.epoch_means {
                println!("epoch {epoch}: mean total loss {mean}");
            }
            if let Some(p) = &summary.last_checkpoint {
                println!("checkpoint: {}", p.display());
            }
        }
        Command::Infer { .. } => {
            let written = cmd_infer(cfg)?;
            println!("{} images written to {}", written.len(), cfg.paths.infer_output.display());
        }
        Command::Eval { .. } => {
            let report = cmd_eval(cfg)?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp_secs().init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let env_threads = match threads_from_env() {
        Ok(t) => t,
        Err(msg) => return usage(msg),
    };
    let cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(msg) => return usage(msg),
    };
    sainet::par::init_threads(cfg.effective_threads(env_threads));
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
