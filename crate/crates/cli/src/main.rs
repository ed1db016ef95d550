use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use snaklat::Error;

mod commands;
mod config;

use config::StudyConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Command {
    Solve,
    Snake,
    Asym,
    Isola,
    Cusp,
    Simulate,
    Reduced,
    VerifyAsym,
}

/// Continuation studies of localized lattice patterns.
#[derive(Parser, Debug)]
#[command(name = "snaklat", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Study configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed; overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::InvalidGrid(_) | Error::PatternExceedsDomain { .. } | Error::InvalidArgument(_) | Error::Json(_))
}

fn run(cli: &Cli, cfg: &StudyConfig) -> snaklat::Result<Vec<PathBuf>> {
    match cli.command {
        Command::Solve => commands::solve(cfg),
        Command::Snake => commands::snake_cmd(cfg),
        Command::Asym => commands::asym(cfg),
        Command::Isola => commands::isola(cfg),
        Command::Cusp => commands::cusp(cfg),
        Command::Simulate => commands::simulate(cfg),
        Command::Reduced => commands::reduced(cfg),
        Command::VerifyAsym => commands::verify_asym(cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = match StudyConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(out) = &cli.out {
        cfg.output.directory = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let t0 = Instant::now();
    let result = run(&cli, &cfg);
    let (code, status, files) = match &result {
        Ok(files) => (0, "ok".to_string(), files.clone()),
        Err(e) => {
            eprintln!("error: {e}");
            (if is_config_error(e) { 2 } else { 1 }, e.to_string(), Vec::new())
        }
    };
    let manifest = serde_json::json!({
        "command": format!("{:?}", cli.command),
        "config": cfg,
        "versions": { "snaklat": env!("CARGO_PKG_VERSION"), "snaklat-core": snaklat::VERSION },
        "wall_time_s": t0.elapsed().as_secs_f64(),
        "status": status,
        "exit_code": code,
        "outputs": files,
    });
    if code != 2 {
        if let Err(e) = commands::write_manifest(&cfg.output.directory, &manifest) {
            eprintln!("error: writing manifest: {e}");
            return ExitCode::from(1);
        }
    }
    ExitCode::from(code)
}
