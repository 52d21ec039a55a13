use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sgdf::pipeline::{run_hsv, run_period, run_retrieve, run_roi_stats, run_synth, RunConfig};

/// Single-grid dark-field imaging: synthesis, retrieval and reporting.
#[derive(Parser)]
#[command(name = "sgdf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic grid-only / sample-and-grid pair with ground truth.
    Synth(RunConfig),
    /// Retrieve transmission, direction and scattering-angle maps.
    Retrieve(RunConfig),
    /// Re-render the HSV image of a result bundle (`--output <bundle>`).
    Hsv(RunConfig),
    /// Mean and spread inside named rectangles of a result bundle.
    RoiStats(RunConfig),
    /// Estimate the grid period of a grid-only image.
    Period(RunConfig),
}

fn run(cli: Cli) -> sgdf::Result<()> {
    match cli.command {
        Command::Synth(c) => {
            let out = run_synth(&c.resolve()?)?;
            println!("wrote {}", out.display());
        }
        Command::Retrieve(c) => {
            let s = run_retrieve(&c.resolve()?)?;
            println!(
                "period {:.4} px ({}), kernel size {} ({})",
                s.parameters.period,
                s.parameters.period_source.as_str(),
                s.parameters.kernel_size,
                s.parameters.kernel_source.as_str()
            );
            for d in &s.frame_dirs {
                println!("wrote {}", d.display());
            }
        }
        Command::Hsv(c) => {
            let m = run_hsv(&c.resolve()?)?;
            println!("max_rms={m:e}");
        }
        Command::RoiStats(c) => print!("{}", run_roi_stats(&c.resolve()?)?),
        Command::Period(c) => {
            let (p, (px, py)) = run_period(&c.resolve()?)?;
            println!("period={p:.6}\nperiod_x={px:.6}\nperiod_y={py:.6}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
