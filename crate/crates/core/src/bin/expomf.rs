use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use expomf::cli::{run, Command, RunConfig, Settings};
use expomf::error::Result;

#[derive(Clone, Copy, ValueEnum)]
enum Cmd {
    Ingest,
    Train,
    Evaluate,
    Synth,
    Recover,
}

/// Exposure matrix factorization for implicit feedback.
///
/// Settings resolve from built-in defaults, then the config file, then the
/// flags below (`--set` last).
#[derive(Parser)]
#[command(version)]
struct Args {
    command: Cmd,
    /// Flat `key = value` settings file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override any setting, e.g. `--set k=50` or `--set grid.k=10,50`.
    #[arg(short, long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    threads: Option<String>,
}

fn resolve(args: Args) -> Result<RunConfig> {
    let command = match args.command {
        Cmd::Ingest => Command::Ingest,
        Cmd::Train => Command::Train,
        Cmd::Evaluate => Command::Evaluate,
        Cmd::Synth => Command::Synth,
        Cmd::Recover => Command::Recover,
    };
    let named = [
        ("input", args.input),
        ("data", args.data),
        ("out", args.out),
        ("checkpoint", args.checkpoint),
        ("variant", args.variant),
        ("seed", args.seed),
        ("threads", args.threads),
    ];
    let mut overrides: Vec<(String, String)> = named
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
        .collect();
    for raw in &args.set {
        overrides.push(Settings::parse_override(raw)?);
    }
    let settings = Settings::resolve(args.config.as_deref(), &overrides)?;
    Ok(RunConfig::new(command, settings))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = resolve(args).and_then(|config| run(&config, &mut std::io::stdout().lock()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
