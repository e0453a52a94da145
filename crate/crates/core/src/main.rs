use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use weaktm::config::PipelineConfig;
use weaktm::io::to_json;
use weaktm::pipeline;
use weaktm::Result;

#[derive(Parser)]
#[command(name = "weaktm", version, about = "Transition-manifold reaction coordinates for the banana potential")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides as `--key value` or `--key=value` (e.g. `--n-steps 1e6`).
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate (or load the cached) long trajectory.
    Simulate(Common),
    /// Ulam operator and leading spectrum.
    Spectrum(Common),
    /// Mean embedding of uniform starts and the MEP anchors.
    Embed(Common),
    /// Strong and weak reducibility scores in the density metric.
    Reducibility(Common),
    /// Effective operators of the ideal and naive coordinates.
    RcCompare(Common),
    /// Finite-chain check of the eigenvalue bounds.
    Oracle(Common),
    /// All stages and the acceptance summary.
    Full(Common),
    /// Print the resolved configuration.
    Config(Common),
}

fn run(cmd: Command) -> Result<bool> {
    let (Command::Simulate(c)
    | Command::Spectrum(c)
    | Command::Embed(c)
    | Command::Reducibility(c)
    | Command::RcCompare(c)
    | Command::Oracle(c)
    | Command::Full(c)
    | Command::Config(c)) = &cmd;
    let cfg = PipelineConfig::load(c.config.as_deref(), &c.overrides)?;
    let out = match cmd {
        Command::Simulate(_) => to_json(&pipeline::cmd_simulate(&cfg)?)?,
        Command::Spectrum(_) => to_json(&pipeline::cmd_spectrum(&cfg)?)?,
        Command::Embed(_) => to_json(&pipeline::cmd_embed(&cfg)?)?,
        Command::Reducibility(_) => to_json(&pipeline::cmd_reducibility(&cfg)?)?,
        Command::RcCompare(_) => to_json(&pipeline::cmd_rc_compare(&cfg)?)?,
        Command::Oracle(_) => to_json(&pipeline::cmd_oracle(&cfg)?)?,
        Command::Config(_) => to_json(&cfg)?,
        Command::Full(_) => {
            let run = pipeline::full_run(&cfg)?;
            for c in &run.report.criteria {
                println!("[{}] {:>10} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.id, c.name, c.detail);
            }
            for (stage, secs) in &run.timings {
                eprintln!("{stage}: {secs:.1}s");
            }
            return Ok(run.report.all_pass);
        }
    };
    print!("{out}");
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
