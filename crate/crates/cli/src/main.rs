use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tdscha_core::UnitSystem;
use tdscha_sim::summary::summarize_csv;
use tdscha_sim::{execute, Command, Overrides};

#[derive(Parser)]
#[command(
    name = "tdscha-sim",
    version,
    about = "TD-SCHA relaxations, dynamics and parameter scans"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Sub {
    /// Equilibrium SCHA relaxation
    Relax(RunArgs),
    /// Driven or free TD-SCHA trajectory
    Dynamics(RunArgs),
    /// Field, temperature or (x0, V0) sweep
    Scan(RunArgs),
    /// One-mode quench model against its closed form
    Minimal(RunArgs),
    /// Build and export the toy model
    ToyBuild(RunArgs),
    /// Digest a trajectory CSV
    Summarize {
        trajectory: PathBuf,
        /// Double-well minimum, Å·√amu
        #[arg(long)]
        x0: f64,
        #[arg(long, default_value = "FE")]
        focus: String,
        #[arg(long)]
        ir: Option<String>,
        #[arg(long, default_value = "physical")]
        units: String,
        /// Minimum duration of a transition, fs
        #[arg(long, default_value_t = tdscha_sim::run::TRANSITION_HOLD_FS)]
        hold: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TDSCHA_SIM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (command, args) = match cli.command {
        Sub::Relax(a) => (Command::Relax, a),
        Sub::Dynamics(a) => (Command::Dynamics, a),
        Sub::Scan(a) => (Command::Scan, a),
        Sub::Minimal(a) => (Command::Minimal, a),
        Sub::ToyBuild(a) => (Command::ToyBuild, a),
        Sub::Summarize {
            trajectory,
            x0,
            focus,
            ir,
            units,
            hold,
        } => {
            let Some(u) = UnitSystem::preset(&units) else {
                eprintln!("unknown units preset `{units}`");
                return ExitCode::from(1);
            };
            let l = u.length_in_angstrom_sqrt_amu();
            return match summarize_csv(&trajectory, &focus, ir.as_deref(), x0 / l, u.fs(hold)) {
                Ok(s) => {
                    println!("{}", serde_json::to_string_pretty(&s).expect("summary serializes"));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            };
        }
    };
    let overrides = Overrides {
        out_dir: args.out_dir,
        workers: args.workers,
        seed: args.seed,
    };
    ExitCode::from(execute(command, &args.config, &overrides) as u8)
}
