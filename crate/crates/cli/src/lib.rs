//! Command-line harness over the simulator library: loads one experiment
//! config, dispatches a subcommand, and always leaves a machine-parsable
//! `summary.json` in the output directory. Exit status is nonzero exactly
//! when a suite assertion failed (or the invocation itself errored).

use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

pub mod commands;
pub mod config;

use commands::Outcome;
use config::ExperimentConfig;

/// Environment variable overriding the output directory.
pub const OUT_ENV: &str = "TILESEC_OUT";

#[derive(Debug, Parser)]
#[command(name = "tilesec", about = "Tile-granular memory-protection simulator")]
pub struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Random seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding `TILESEC_OUT` and the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Restrict report files to one format.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Fuzz version-pattern derivation against the trace oracle, per row.
    Patterns,
    /// Run the built-in injection campaign or replay an adversary script.
    Attack,
    /// Simulate every benchmark under every enabled scheme.
    Compare {
        /// Run the widening study instead of the benchmark suite.
        #[arg(long)]
        widen: bool,
    },
    /// Print the default experiment config.
    DumpConfig,
}

/// Runs one invocation end to end; the return value is the process exit
/// code (0 pass, 1 suite failure, 2 operational error).
pub fn run(cli: Cli) -> i32 {
    if matches!(cli.cmd, Cmd::DumpConfig) {
        commands::cmd_dump_config();
        return 0;
    }

    // A broken config still produces a summary: fall back to defaults for
    // output-path resolution and carry the error into the result.
    let (mut cfg, cfg_err) = match &cli.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(c) => (c, None),
            Err(e) => (ExperimentConfig::default(), Some(e)),
        },
        None => (ExperimentConfig::default(), None),
    };
    if let Some(f) = cli.format {
        cfg.formats = vec![match f {
            Format::Csv => "csv".into(),
            Format::Json => "json".into(),
        }];
    }
    let seed = cli.seed.unwrap_or(cfg.seed);
    let out = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("reports"));
    if let Err(e) = fs::create_dir_all(&out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return 2;
    }

    let command = match &cli.cmd {
        Cmd::Patterns => "patterns",
        Cmd::Attack => "attack",
        Cmd::Compare { widen: false } => "compare",
        Cmd::Compare { widen: true } => "compare --widen",
        Cmd::DumpConfig => unreachable!("handled above"),
    };
    let result = match cfg_err {
        Some(e) => Err(e.into()),
        None => match cli.cmd {
            Cmd::Patterns => commands::cmd_patterns(&cfg, seed, &out),
            Cmd::Attack => commands::cmd_attack(&cfg, seed, &out),
            Cmd::Compare { widen } => commands::cmd_compare(&cfg, seed, &out, widen),
            Cmd::DumpConfig => unreachable!("handled above"),
        },
    };

    let (code, summary) = match result {
        Ok(Outcome { ok, payload }) => (
            if ok { 0 } else { 1 },
            json!({"command": command, "seed": seed, "ok": ok, "result": payload}),
        ),
        Err(e) => {
            eprintln!("error: {e}");
            (
                2,
                json!({"command": command, "seed": seed, "ok": false, "error": e.to_string()}),
            )
        }
    };
    let path = out.join("summary.json");
    if let Err(e) = fs::write(&path, serde_json::to_string_pretty(&summary).unwrap()) {
        eprintln!("error: cannot write {}: {e}", path.display());
        return 2;
    }
    println!("summary: {}", path.display());
    code
}
