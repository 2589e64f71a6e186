//! `tembo` — scenario runner, evaluation, and export front-end.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage/config error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tembo_sim::{evaluate_tracking, run_scenario, write_artifacts, ScenarioConfig, SimError};

#[derive(Parser)]
#[command(
    name = "tembo",
    version,
    about = "Deterministic elephant-herding tracker and flight-control simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trajectory, track, command, ground-truth,
    /// and report artifacts.
    Run(RunArgs),
    /// Compare a track stream against a ground-truth stream.
    Evaluate(EvaluateArgs),
    /// Dump the detection tile geometry for a scenario's grid.
    ExportTiles(ExportTilesArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML; defaults to the built-in nominal scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of simulated frames.
    #[arg(long)]
    frames: Option<u64>,
    /// Output directory for all artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Track stream (tracks.jsonl) to score.
    tracks: PathBuf,
    /// Ground-truth stream (gt.jsonl) to score against.
    gt: PathBuf,
}

#[derive(Args)]
struct ExportTilesArgs {
    /// Scenario TOML; defaults to the built-in nominal scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Evaluate(args) => evaluate(args),
        Command::ExportTiles(args) => export_tiles(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Config and usage problems exit 2; runtime failures exit 1.
fn exit_code(e: &SimError) -> u8 {
    match e {
        SimError::Config(_) | SimError::Parse(_) => 2,
        _ => 1,
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ScenarioConfig, SimError> {
    match path {
        Some(p) => ScenarioConfig::load(p),
        None => Ok(ScenarioConfig::default()),
    }
}

fn run(args: RunArgs) -> Result<(), SimError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(frames) = args.frames {
        cfg.frames = frames;
    }
    let artifacts = run_scenario(&cfg)?;
    write_artifacts(&artifacts, &args.out)?;
    let report = serde_json::to_string_pretty(&artifacts.report)
        .map_err(|e| SimError::Config(format!("report serialization: {e}")))?;
    println!("{report}");
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<(), SimError> {
    let read = |p: &PathBuf| {
        std::fs::read_to_string(p)
            .map_err(|e| SimError::Config(format!("cannot read {}: {e}", p.display())))
    };
    let metrics = evaluate_tracking(&read(&args.tracks)?, &read(&args.gt)?)?;
    let out = serde_json::to_string_pretty(&metrics)
        .map_err(|e| SimError::Config(format!("metrics serialization: {e}")))?;
    println!("{out}");
    Ok(())
}

fn export_tiles(args: ExportTilesArgs) -> Result<(), SimError> {
    let cfg = load_config(&args.config)?;
    let p = &cfg.pipeline;
    let grid = tembo_core::scheduler::make_tiles(
        p.frame_w,
        p.frame_h,
        p.grid_cols,
        p.grid_rows,
        p.grid_overlap,
    )?;
    let tiles: Vec<serde_json::Value> = grid
        .tiles
        .iter()
        .enumerate()
        .map(|(i, t)| {
            serde_json::json!({
                "index": i,
                "x": t.rect.x_tl,
                "y": t.rect.y_tl,
                "width": t.rect.width(),
                "height": t.rect.height(),
            })
        })
        .collect();
    let doc = serde_json::json!({
        "frame_width": p.frame_w,
        "frame_height": p.frame_h,
        "cols": p.grid_cols,
        "rows": p.grid_rows,
        "overlap": p.grid_overlap,
        "tiles": tiles,
    });
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| SimError::Config(format!("tile serialization: {e}")))?;
    match args.out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}
