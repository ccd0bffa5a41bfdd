use std::path::PathBuf;
use std::process::ExitCode;

use capctl::commands;
use capctl::CliError;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "capctl", version, about = "Train, evaluate and run the point-cloud pose network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network; writes checkpoints and manifest.json into --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset; prints a JSON report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Add per-distance-bucket reports.
        #[arg(long)]
        buckets: bool,
        /// Body-model container (built-in model when omitted).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict poses for a directory of PTC1 frames; writes a MOT1 file.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the built-in procedural body model to a container file.
    MakeModel {
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert an SMPL .npz file into a body-model container.
    ConvertModel {
        #[arg(long)]
        npz: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, out } => {
            let m = commands::train(&config, &out)?;
            println!("{}", serde_json::json!({
                "status": m.status,
                "epochs": m.epochs.len(),
                "checkpoints": m.checkpoints,
                "final_loss": m.epochs.last().map(|e| e.loss_total),
            }));
        }
        Command::Eval { ckpt, data, buckets, model, out } => {
            let report = commands::eval(&ckpt, &data, buckets, model.as_deref())?;
            let text = serde_json::to_string_pretty(&report.to_json()).expect("report serializes");
            if let Some(path) = out {
                std::fs::write(&path, &text).map_err(|e| CliError::io(&path, e))?;
            }
            println!("{text}");
        }
        Command::Infer { ckpt, frames, out, model } => {
            let n = commands::infer(&ckpt, &frames, &out, model.as_deref())?;
            println!("wrote {n} frames to {}", out.display());
        }
        Command::Synth { config, out } => {
            let s = commands::synth(&config, &out)?;
            println!("frames {}  points min {} mean {:.1} max {}", s.frames, s.min_points, s.mean_points, s.max_points);
            for (bucket, (n, mean)) in &s.buckets {
                println!("  {bucket:>7}: {n:>5} frames, mean {mean:.1} points");
            }
        }
        Command::MakeModel { out } => {
            commands::make_model(&out)?;
            println!("wrote {}", out.display());
        }
        Command::ConvertModel { npz, out } => {
            let m = commands::convert_model(&npz, &out)?;
            println!("wrote {} ({} vertices)", out.display(), m.num_vertices());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
