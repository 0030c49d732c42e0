use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use matchnet::BaselineKind;
use matchnet_cli::commands::{self, SweepOptions};
use matchnet_cli::config::{ConfigFile, Overrides, Preset};
use matchnet_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "matchnet", version, about = "Learned two-sided matching mechanisms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample preference profiles into a profile file.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one network; writes model.ckpt and train_log.csv.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value = "run")]
        out_dir: PathBuf,
    },
    /// Evaluate a mechanism label or checkpoint on a profile file.
    Eval {
        mechanism: String,
        profiles: PathBuf,
        /// Append the row to this CSV file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train one network per lambda and write frontier.csv and frontier.svg.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<Preset>,
        /// Comma-separated list, e.g. 0,0.5,1.
        #[arg(long, default_value = "0,0.3,0.5,0.8,1")]
        lambdas: String,
        #[arg(long, default_value = "sweep")]
        out_dir: PathBuf,
        /// Lambdas trained concurrently.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Load existing per-lambda checkpoints instead of retraining.
        #[arg(long)]
        reuse: bool,
    },
    /// Write wda, fda or rsd matchings for each profile in sidecar format.
    Baseline {
        mechanism: String,
        profiles: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for rsd draws; MATCH_SEED takes precedence.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// FOSD audit and blocking pairs; exits 0 iff no gain exceeds the tolerance.
    Audit {
        mechanism: String,
        profiles: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
    },
    /// Birkhoff-von Neumann components of each profile's marginals.
    Decompose {
        mechanism: String,
        profiles: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn config_file(path: Option<&Path>) -> CliResult<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn run(cli: Cli) -> CliResult<()> {
    let mut stdout = std::io::stdout().lock();
    let env = Overrides::from_env();
    match cli.command {
        Command::Gen { config, count, out } => {
            commands::cmd_gen(&config_file(config.as_deref())?, &env, count, &out, &mut stdout)?;
        }
        Command::Train {
            config,
            preset,
            lambda,
            out_dir,
        } => {
            let ov = Overrides { preset, lambda, ..env };
            commands::cmd_train(&config_file(config.as_deref())?, &ov, &out_dir, &mut stdout)?;
        }
        Command::Eval {
            mechanism,
            profiles,
            csv,
        } => {
            commands::cmd_eval(&mechanism, &profiles, csv.as_deref(), &mut stdout)?;
        }
        Command::Sweep {
            config,
            preset,
            lambdas,
            out_dir,
            parallel,
            reuse,
        } => {
            let ov = Overrides { preset, ..env };
            let lambdas = commands::parse_lambdas(&lambdas)?;
            let opts = SweepOptions {
                lambdas: &lambdas,
                out_dir: &out_dir,
                parallel,
                reuse,
            };
            let outcome = commands::cmd_sweep(&config_file(config.as_deref())?, &ov, &opts, &mut stdout)?;
            writeln!(stdout, "wrote {} and {}", outcome.csv_path.display(), outcome.svg_path.display())?;
            if let Some((lambda, msg)) = outcome.failures.first() {
                return Err(CliError::Usage(format!(
                    "{} lambda run(s) failed, first at {lambda}: {msg}",
                    outcome.failures.len()
                )));
            }
        }
        Command::Baseline {
            mechanism,
            profiles,
            out,
            seed,
        } => {
            let kind = BaselineKind::from_label(&mechanism)
                .ok_or_else(|| CliError::Usage(format!("unknown baseline `{mechanism}` (wda, fda, rsd)")))?;
            let seed = match &env.env_seed {
                Some(raw) => raw
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("MATCH_SEED=`{raw}` is not an unsigned integer")))?,
                None => seed,
            };
            let mut w = output(out.as_deref())?;
            commands::cmd_baseline(kind, &profiles, seed, &mut w)?;
            w.flush()?;
        }
        Command::Audit {
            mechanism,
            profiles,
            tolerance,
        } => {
            commands::cmd_audit(&mechanism, &profiles, tolerance, &mut stdout)?;
        }
        Command::Decompose {
            mechanism,
            profiles,
            out,
        } => {
            let mut w = output(out.as_deref())?;
            commands::cmd_decompose(&mechanism, &profiles, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
