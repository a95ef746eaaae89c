//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checks::{criteria_for, Suite, SuiteOptions};
use crate::compare::compare;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::pipeline::run;

#[derive(Debug, Parser)]
#[command(name = "cgnsda", version, about = "Online smoothing experiments for conditional Gaussian systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run {
        config: PathBuf,
        /// Output directory; overrides `out_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run several online lag policies on the same trajectory.
    Compare {
        config: PathBuf,
        /// Policies such as `fixed:20`, `adaptive:100:0.05:3:entropy` or `full`.
        #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
        policies: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the acceptance checks of an experiment: dyad, linear2d, lda, kl, em-dyad or all.
    Check {
        experiment: String,
        #[arg(long, hide = true)]
        fault: Option<String>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(format!("{}-seed{}", cfg.experiment.name(), cfg.seed)))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let cfg = load(&config, seed)?;
            let dir = out_dir(&cfg, out);
            let report = run(&cfg, &dir)?;
            println!("wrote {}", report.out_dir.display());
            Ok(())
        }
        Command::Compare { config, policies, out, seed } => {
            let cfg = load(&config, seed)?;
            let dir = out_dir(&cfg, out);
            let rows = compare(&cfg, &policies, &dir)?;
            for r in rows {
                println!(
                    "{:<32} nrmse {:.4}  peak {:>6} entries {:>10} B  gain {:.4}  {:.3} s",
                    r.policy, r.nrmse, r.peak_entries, r.peak_bytes, r.gain_total, r.wall_time_s
                );
            }
            println!("wrote {}", dir.display());
            Ok(())
        }
        Command::Check { experiment, fault } => {
            let ids = criteria_for(&experiment)
                .ok_or_else(|| CliError::Config(format!("unknown experiment {experiment:?} for check")))?;
            let opts = match fault.as_deref() {
                None => SuiteOptions::default(),
                Some("skip-tensor-update") => SuiteOptions { break_tensor_update: true },
                Some(other) => return Err(CliError::Config(format!("unknown fault {other:?}"))),
            };
            let reports = Suite::new(opts).run_all(&ids);
            for r in &reports {
                println!("{}", r.line());
            }
            let failed: Vec<String> = reports.iter().filter(|r| !r.passed).map(|r| r.id.to_string()).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Check(format!("criteria {} failed", failed.join(", "))))
            }
        }
    }
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
