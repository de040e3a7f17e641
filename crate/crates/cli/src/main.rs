//! `posrank` — pipeline driver.
//!
//! One JSON config drives every stage; each subcommand reads its upstream
//! artifacts from the config's workdir, verifies their embedded config hash
//! (unless `--force`), and rewrites its outputs atomically. Exit codes:
//! 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use posrank::config::ExperimentConfig;
use posrank::Error;

#[derive(Parser)]
#[command(name = "posrank", version, about = "Positional term-weight retrieval experiments")]
struct Cli {
    /// Experiment config (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: available cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override the config's master seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Skip config-hash chain checks
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the positional index from the configured documents
    Index,
    /// Fit the cluster model and write the representation store
    Cluster,
    /// Train the configured model variant
    Train,
    /// Score the configured topics into a run file
    Run,
    /// Evaluate the run file against the configured qrels
    Eval,
    /// Export the fitted centroids as CSV
    ExportClusters,
    /// Generate the configured synthetic bundle
    Synth,
    /// Print the effective config and its hash
    Config {
        /// Print the built-in defaults instead
        #[arg(long)]
        defaults: bool,
    },
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn fail(code: i32, msg: &str) -> ! {
    eprintln!(
        "{}",
        serde_json::json!({ "code": code, "error": msg })
    );
    std::process::exit(code);
}

fn load_config(cli: &Cli) -> posrank::Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let config = ExperimentConfig::from_json(&text)?.effective(cli.seed);
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> posrank::Result<Option<serde_json::Value>> {
    if let Command::Config { defaults: true } = cli.command {
        print!("{}", ExperimentConfig::default().to_json());
        return Ok(None);
    }
    let config = load_config(cli)?;
    let ctx = commands::Ctx {
        config,
        force: cli.force,
    };
    let report = match cli.command {
        Command::Index => commands::index(&ctx)?,
        Command::Cluster => commands::cluster(&ctx)?,
        Command::Train => commands::train(&ctx)?,
        Command::Run => commands::run(&ctx)?,
        Command::Eval => commands::eval(&ctx)?,
        Command::ExportClusters => commands::export_clusters(&ctx)?,
        Command::Synth => commands::synth(&ctx)?,
        Command::Config { .. } => {
            // Effective config with stage seeds materialized, plus its hash
            // on stderr so stdout stays a valid config document.
            print!("{}", ctx.config.to_json());
            eprintln!("config_hash: {}", ctx.config.config_hash());
            return Ok(None);
        }
    };
    Ok(Some(report))
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                fail(1, &e.to_string().replace('\n', " "));
            }
            // --help / --version
            print!("{e}");
            std::process::exit(0);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            fail(1, "--threads must be >= 1");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            fail(1, &format!("thread pool: {e}"));
        }
    }
    match run(&cli) {
        Ok(Some(report)) => println!("{report}"),
        Ok(None) => {}
        Err(err) => fail(exit_code(&err), &err.to_string()),
    }
}
