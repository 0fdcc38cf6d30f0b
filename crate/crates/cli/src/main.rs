//! `cfinception`: keyword generation, verification, inference, evaluation,
//! trend analysis and reporting from the command line.
//!
//! Exit codes: 0 success, 1 fatal error, 2 partial failure (some images or
//! samples failed), 64 usage error.

mod commands;
mod plot;
mod settings;

use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use cfinception::gateway::GatewayError;
use cfinception::runner::RunError;
use clap::{Args, Parser, Subcommand};

use commands::{EXIT_FATAL, EXIT_OK, EXIT_USAGE};
use settings::{Settings, UsageError};

#[derive(Parser)]
#[command(name = "cfinception", version, about = "Counterfactual keyword prompting for vision-language models")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` settings file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Print the resolved settings and planned backend calls, then exit.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Override any setting. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// `mock` (fixture file) or `live` (HTTP endpoints).
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Response fixture file for mock backends.
    #[arg(long, global = true, value_name = "PATH")]
    fixtures: Option<String>,
    /// Parent directory of run directories.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,
    #[arg(long, global = true)]
    run_id: Option<String>,
    #[arg(long, global = true)]
    parallelism: Option<String>,
    /// Verification preset: `main` or `appendix`.
    #[arg(long, global = true)]
    profile: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Continue an existing run directory.
    #[arg(long, global = true)]
    resume: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate factual and counterfactual keywords for every image in a directory.
    Keywords {
        image_dir: PathBuf,
        /// Number of counterfactual sets per image.
        #[arg(long)]
        iterations: Option<String>,
    },
    /// Score and filter the keywords of a `keywords` run.
    Verify {
        run_dir: PathBuf,
        /// `both`, `visual` or `linguistic`.
        #[arg(long)]
        stages: Option<String>,
    },
    /// Answer one question about one image with counterfactual keywords.
    Infer {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        question: String,
        /// Also answer without keywords.
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        max_tokens: Option<String>,
    },
    /// Run a benchmark under several conditions and write a comparison report.
    Eval {
        benchmark: PathBuf,
        /// pope_adversarial, mmvp, llava_wild or mmhal.
        #[arg(long)]
        kind: Option<String>,
        /// Comma-separated: baseline, inception, vv_only, lv_only, mixed_factual:<fraction>[:<seed>].
        #[arg(long)]
        conditions: Option<String>,
        /// per_question or per_pair.
        #[arg(long)]
        mmvp_mode: Option<String>,
        #[arg(long)]
        max_tokens: Option<String>,
    },
    /// Per-iteration similarity and contradiction means of a run's scored candidates.
    Trend {
        run_dir: PathBuf,
        /// Also write an SVG chart of the aggregate trend.
        #[arg(long, value_name = "PATH")]
        plot: Option<PathBuf>,
    },
    /// Rebuild and print the comparison report of a finished run.
    Report { run_dir: PathBuf },
}

fn flag_overrides(cli: &Cli) -> Result<Vec<(String, String)>, UsageError> {
    let c = &cli.common;
    let mut flags: Vec<(String, String)> = Vec::new();
    let mut put = |key: &str, v: &Option<String>| {
        if let Some(v) = v {
            flags.push((key.to_string(), v.clone()));
        }
    };
    put("backend", &c.backend);
    put("fixtures", &c.fixtures);
    put("out", &c.out);
    put("run_id", &c.run_id);
    put("parallelism", &c.parallelism);
    put("profile", &c.profile);
    put("seed", &c.seed);
    match &cli.command {
        Command::Keywords { iterations, .. } => put("iterations", iterations),
        Command::Verify { stages, .. } => put("stages", stages),
        Command::Infer { max_tokens, .. } => put("max_tokens", max_tokens),
        Command::Eval { kind, conditions, mmvp_mode, max_tokens, .. } => {
            put("kind", kind);
            put("conditions", conditions);
            put("mmvp_mode", mmvp_mode);
            put("max_tokens", max_tokens);
        }
        Command::Trend { .. } | Command::Report { .. } => {}
    }
    if c.resume {
        flags.push(("resume".into(), "true".into()));
    }
    // `--set` comes last so it overrides the dedicated flags
    for pair in &c.set {
        let (key, value) =
            pair.split_once('=').ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        flags.push((key.to_string(), value.to_string()));
    }
    Ok(flags)
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let flags = flag_overrides(&cli)?;
    let settings = Settings::resolve(cli.common.config.as_deref(), std::env::vars(), &flags)?;
    let dry_run = cli.common.dry_run;
    match &cli.command {
        Command::Keywords { image_dir, .. } => commands::keywords(&settings, image_dir, dry_run),
        Command::Verify { run_dir, .. } => commands::verify(&settings, run_dir, dry_run),
        Command::Infer { image, question, baseline, .. } => {
            commands::infer_one(&settings, image, question, *baseline, dry_run)
        }
        Command::Eval { benchmark, .. } => commands::eval(&settings, benchmark, dry_run),
        Command::Trend { run_dir, plot } => commands::trend(run_dir, plot.as_deref(), dry_run),
        Command::Report { run_dir } => commands::report(run_dir, dry_run),
    }
}

/// Usage errors include invalid settings caught by the core validators.
fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.downcast_ref::<UsageError>().is_some()
        || matches!(
            err.downcast_ref::<RunError>(),
            Some(RunError::Config(_) | RunError::Gateway(GatewayError::InvalidConfig(_)))
        )
        || matches!(err.downcast_ref::<GatewayError>(), Some(GatewayError::InvalidConfig(_)));
    if usage {
        EXIT_USAGE
    } else {
        EXIT_FATAL
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
