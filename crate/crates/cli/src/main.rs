use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use safeland::world::Criterion;
use safeland_cli::{
    cmd_batch, cmd_replay, cmd_run, outcome_exit_code, CliError, Overrides, RunConfig, EXIT_OK, EXIT_USAGE,
};

#[derive(Parser)]
#[command(name = "safeland", version, about = "Safe-landing-zone detection and crowd landing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one landing mission.
    Run(Common),
    /// Simulate missions with consecutive seeds and summarize them.
    Batch {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        runs: u64,
    },
    /// Run the perception chain over annotated heads and camera poses.
    Replay {
        #[command(flatten)]
        common: Common,
        /// HEADS v1 annotation file.
        #[arg(long)]
        annotations: PathBuf,
        /// POSE v1 camera pose file.
        #[arg(long)]
        poses: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_criterion)]
    criterion: Option<Criterion>,
    /// Write per-frame PPM/PGM renders.
    #[arg(long)]
    render: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    frac_moving: Option<f64>,
    /// Fixed actor count.
    #[arg(long)]
    actors: Option<usize>,
}

fn parse_criterion(s: &str) -> Result<Criterion, String> {
    s.parse().map_err(|e: safeland::Error| e.to_string())
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        cfg.apply(&Overrides {
            seed: self.seed,
            criterion: self.criterion,
            render: self.render,
            out_dir: self.out.clone(),
            frac_moving: self.frac_moving,
            actors: self.actors,
        });
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Cmd::Run(common) => {
            let out = cmd_run(&common.load()?)?;
            println!("outcome {} after {} frames", out.outcome, out.frames);
            Ok(outcome_exit_code(out.outcome))
        }
        Cmd::Batch { common, runs } => {
            let report = cmd_batch(&common.load()?, runs)?;
            println!(
                "{} missions, success rate {:.3}, warning {:.3}, danger {:.3}",
                report.missions, report.success_rate, report.warning_avg, report.danger_avg
            );
            Ok(EXIT_OK)
        }
        Cmd::Replay {
            common,
            annotations,
            poses,
        } => {
            let report = cmd_replay(&common.load()?, &annotations, &poses)?;
            println!("{} frames replayed", report.frames);
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { EXIT_OK as u8 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("safeland: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
