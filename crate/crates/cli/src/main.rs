//! Command-line harness: reproducible corpus synthesis, training,
//! evaluation, ablations, sweeps, and cluster-assignment heatmaps, all
//! driven by one JSON config with flag overrides.

mod commands;
mod config;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    /// Bad command line: exit code 1.
    Usage(String),
    /// Bad or inconsistent configuration: exit code 1.
    Config(String),
    /// Failure while doing the work: exit code 2.
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) | CliError::Config(_) => ExitCode::from(1),
            CliError::Runtime(_) => ExitCode::from(2),
        }
    }
}

const USAGE: &str = "\
fstc — few-shot text classification experiments

USAGE:
    fstc <COMMAND> --config PATH [OPTIONS]

COMMANDS:
    synth      generate a synthetic multi-source corpus (JSONL + split manifest)
    train      train a model and write checkpoints plus a training log
    eval       meta-test a checkpoint (per-source accuracy CSV)
    heatmap    per-source soft-assignment heatmap over level-1 clusters
    ablate     train/evaluate protonet, protonet+htc, and the full model
    sweep      tree-structure sweep and/or N-way sweep

OPTIONS:
    --config PATH        JSON run configuration (required)
    --seed INT           override the corpus seed and the training seed
    --out DIR            output directory (overrides out_dir in the config)
    --checkpoint PATH    checkpoint to evaluate or resume from
    --override K=V       edit a config field by dotted path (repeatable)
    --resume             continue training from checkpoint_last.json
    -h, --help           show this help
";

struct Args {
    command: String,
    config: PathBuf,
    seed: Option<u64>,
    out: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    overrides: Vec<String>,
    resume: bool,
}

fn parse_args() -> Result<Option<Args>, CliError> {
    let mut argv = std::env::args().skip(1);
    let command = match argv.next() {
        None => return Err(CliError::Usage(format!("missing command\n\n{USAGE}"))),
        Some(c) if c == "-h" || c == "--help" => return Ok(None),
        Some(c) => c,
    };
    if !["synth", "train", "eval", "heatmap", "ablate", "sweep"].contains(&command.as_str()) {
        return Err(CliError::Usage(format!(
            "unknown command `{command}`\n\n{USAGE}"
        )));
    }

    let mut config = None;
    let mut seed = None;
    let mut out = None;
    let mut checkpoint = None;
    let mut overrides = Vec::new();
    let mut resume = false;

    while let Some(flag) = argv.next() {
        let value_for = |flag: &str, argv: &mut dyn Iterator<Item = String>| {
            argv.next()
                .ok_or_else(|| CliError::Usage(format!("{flag} needs a value")))
        };
        match flag.as_str() {
            "--config" => config = Some(PathBuf::from(value_for("--config", &mut argv)?)),
            "--seed" => {
                let raw = value_for("--seed", &mut argv)?;
                seed = Some(raw.parse::<u64>().map_err(|_| {
                    CliError::Usage(format!("--seed must be an unsigned integer, got `{raw}`"))
                })?);
            }
            "--out" => out = Some(PathBuf::from(value_for("--out", &mut argv)?)),
            "--checkpoint" => {
                checkpoint = Some(PathBuf::from(value_for("--checkpoint", &mut argv)?))
            }
            "--override" => overrides.push(value_for("--override", &mut argv)?),
            "--resume" => resume = true,
            "-h" | "--help" => return Ok(None),
            other => {
                return Err(CliError::Usage(format!(
                    "unknown option `{other}`\n\n{USAGE}"
                )))
            }
        }
    }

    let config =
        config.ok_or_else(|| CliError::Usage(format!("--config PATH is required\n\n{USAGE}")))?;
    if resume && command != "train" {
        return Err(CliError::Usage("--resume only applies to train".into()));
    }
    Ok(Some(Args {
        command,
        config,
        seed,
        out,
        checkpoint,
        overrides,
        resume,
    }))
}

fn run() -> Result<(), CliError> {
    let args = match parse_args()? {
        Some(args) => args,
        None => {
            print!("{USAGE}");
            return Ok(());
        }
    };

    let (run_config, resolved) = config::load_config(&args.config, &args.overrides)?;
    let out_dir = args
        .out
        .clone()
        .or_else(|| run_config.out_dir.clone())
        .ok_or_else(|| {
            CliError::Config(
                "missing output directory: set out_dir in the config or pass --out".into(),
            )
        })?;
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;

    let ctx = commands::Ctx {
        command: args.command.clone(),
        config: run_config,
        resolved,
        config_path: args.config,
        overrides: args.overrides,
        out_dir,
        seed: args.seed,
        checkpoint: args.checkpoint,
        resume: args.resume,
    };

    match args.command.as_str() {
        "synth" => commands::cmd_synth(&ctx),
        "train" => commands::cmd_train(&ctx),
        "eval" => commands::cmd_eval(&ctx),
        "heatmap" => commands::cmd_heatmap(&ctx),
        "ablate" => commands::cmd_ablate(&ctx),
        "sweep" => commands::cmd_sweep(&ctx),
        _ => unreachable!("validated above"),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}
