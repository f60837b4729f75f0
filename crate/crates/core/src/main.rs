use chdbc::config::CliConfig;
use chdbc::{checks, harness, Error, Result};
use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "chdbc",
    version,
    about = "Phase-field solver on the unit square with wall dynamics: \
             run simulations, measure mesh convergence, self-check the operators"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file; keys are documented in the README.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. --set N=64. Repeatable; wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation: stream the diagnostics series, write snapshots.
    Run(Common),
    /// Run the mesh-doubling Cauchy study and write its CSV report.
    Converge(Common),
    /// Exercise the operator and derivative self-checks on N = 4 and 8.
    CheckOps,
}

/// Exit code for a failed self-check run; module errors keep their own codes.
const CHECK_FAILURE_EXIT: u8 = 5;

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(common: &Common) -> Result<CliConfig> {
    let overrides = common
        .set
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{s}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    CliConfig::load(common.config.as_deref(), &overrides)
}

/// Refuse to clobber a previous result unless asked to.
fn guard_overwrite(path: &Path, overwrite: bool) -> Result<()> {
    if path.exists() && !overwrite {
        return Err(Error::Config(format!(
            "{} already exists; set overwrite = true (or --set overwrite=true) to replace it",
            path.display()
        )));
    }
    Ok(())
}

fn dispatch() -> Result<ExitCode> {
    match Cli::parse().cmd {
        Cmd::Run(c) => {
            let cfg = load(&c)?;
            print!("{}", cfg.echo());
            println!();
            let rc = cfg.run_config()?;
            guard_overwrite(&rc.out_dir.join("series.csv"), cfg.overwrite)?;
            let out = harness::run_simulation(&rc)?;
            let last = out.steps.last();
            println!("steps completed = {}", out.steps.len());
            println!("initial energy = {:.16e}", out.initial_energy);
            if let Some(rec) = last {
                println!("final energy = {:.16e}", rec.energy);
                let drift = rec
                    .mass_bulk_drift
                    .abs()
                    .max(rec.mass_bottom_drift.abs())
                    .max(rec.mass_top_drift.abs());
                println!("largest final mass drift = {:.3e}", drift);
            }
            if let Some(r) = out.max_scheme_residual {
                println!("max scheme residual = {:.3e}", r);
            }
            println!("series = {}", out.series_path.display());
            println!("snapshot files = {}", out.snapshots.len());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Converge(c) => {
            let cfg = load(&c)?;
            print!("{}", cfg.echo());
            println!();
            let report_path = cfg.out.join("convergence.csv");
            guard_overwrite(&report_path, cfg.overwrite)?;
            let report = harness::convergence_study(&cfg.grids, &cfg.solver_config())?;
            let csv = report.to_csv();
            fs::create_dir_all(&cfg.out)?;
            fs::write(&report_path, &csv)?;
            print!("{csv}");
            println!("report = {}", report_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::CheckOps => {
            let outcomes = checks::run_all(&[4, 8]);
            let mut failed = 0;
            for o in &outcomes {
                let verdict = if o.passed() { "PASS" } else { "FAIL" };
                failed += usize::from(!o.passed());
                println!(
                    "{verdict} {} (N={}): max {:.3e}, tol {:.1e}",
                    o.name, o.n, o.max_err, o.tol
                );
            }
            println!(
                "check-ops: {}/{} passed",
                outcomes.len() - failed,
                outcomes.len()
            );
            Ok(if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(CHECK_FAILURE_EXIT)
            })
        }
    }
}
