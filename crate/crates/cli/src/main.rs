use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use nlhom_cli::{parse_config, run, CliError, Threads};

/// Run one nlhom experiment from a TOML configuration.
#[derive(Parser)]
#[command(name = "nlhom", version)]
struct Args {
    /// configuration file
    #[arg(long)]
    config: PathBuf,
    /// output directory (overrides `output`)
    #[arg(long)]
    output: Option<PathBuf>,
    /// overrides `seed`
    #[arg(long)]
    seed: Option<u64>,
    /// worker count (overrides `threads`)
    #[arg(long)]
    threads: Option<usize>,
    /// fixed-order reductions
    #[arg(long)]
    deterministic: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let code = match go(&args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("nlhom: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn go(args: &Args) -> Result<i32, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let mut cfg = parse_config(&text)?;
    if let Some(o) = &args.output {
        cfg.output = o.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    match args.threads {
        Some(0) => return Err(CliError::Config("--threads must be positive".into())),
        Some(n) => cfg.threads = Threads::Count(n),
        None => {}
    }
    cfg.deterministic |= args.deterministic;
    let summary = run(&cfg)?;
    if let Some(e) = &summary.error {
        eprintln!("nlhom: {e}");
    }
    if let Some(out) = &summary.outcome {
        for i in out.invariants.iter().filter(|i| !i.passed) {
            eprintln!("nlhom: invariant `{}` violated {}", i.name, i.detail);
        }
    }
    Ok(summary.status)
}
