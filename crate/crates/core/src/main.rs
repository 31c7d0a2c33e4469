//! Command-line driver: reproducible runs, combinatorial verification,
//! identity checks, Gevrey fits of snapshots, and parameter sweeps.
//!
//! Exit codes: 0 success, 1 property failure, 2 usage or configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use landau::experiment::{
    check_identity, fit_gevrey_snapshot, load_config, run_experiment, sweep, verify_combinatorics,
};
use landau::multiindex::MultiIndex;
use landau::Error;

#[derive(Parser)]
#[command(
    name = "landau",
    about = "Deterministic spectral laboratory for the spatially homogeneous Landau equation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment and write CSV/JSON artifacts.
    Run {
        /// Path to the TOML config.
        config: PathBuf,
    },
    /// Brute-force verification of the multi-index identities and bounds.
    VerifyCombinatorics {
        /// Highest |mu| to sweep.
        #[arg(long, default_value_t = 20)]
        max_order: usize,
        /// Exponent sigma of the |mu|^{sigma-1} bound (must exceed 1).
        #[arg(long, default_value_t = 2.0)]
        sigma: f64,
    },
    /// Check the energy-identity decomposition on a fresh scenario run.
    CheckIdentity {
        config: PathBuf,
        /// Multi-index, e.g. "2,0"; repeatable. Defaults to the config list.
        #[arg(long)]
        mu: Vec<String>,
        /// Relative mismatch threshold for the exit code.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Fit the Fourier-decay regularity witness of a snapshot file.
    FitGevrey {
        snapshot: PathBuf,
        /// Shell window "lo,hi"; defaults to [N/8, 3N/8].
        #[arg(long)]
        window: Option<String>,
    },
    /// Run the config once per value of a swept parameter.
    Sweep {
        config: PathBuf,
        /// Sweep spec like "gamma=0,0.5,1" (keys: gamma, cfl, t_end, n).
        #[arg(long)]
        param: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config { .. }
                | Error::Scenario(_)
                | Error::Snapshot(_)
                | Error::Io(_)
                | Error::Domain(_) => 2,
                _ => 1,
            })
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let summary = run_experiment(&cfg)?;
            println!(
                "run complete: {} steps, artifacts in {}",
                summary.steps_taken, cfg.output.directory
            );
            let checks = [
                ("mass_conservation", summary.pass_mass_conservation),
                ("entropy_monotone", summary.pass_entropy_monotone),
                ("ellipticity_positive", summary.pass_ellipticity_positive),
                ("sigma_drift", summary.pass_sigma_drift),
                ("gevrey_constant", summary.pass_gevrey_constant),
                ("qk_bounded", summary.pass_qk_bounded),
            ];
            for (name, passed) in checks {
                println!("{} {name}", if passed { "PASS" } else { "FAIL" });
            }
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            Ok(checks.iter().all(|(_, p)| *p) && !summary.incomplete)
        }
        Command::VerifyCombinatorics { max_order, sigma } => {
            let (ok, lines) = verify_combinatorics(max_order, sigma);
            for line in lines {
                println!("{line}");
            }
            Ok(ok)
        }
        Command::CheckIdentity { config, mu, tol } => {
            let cfg = load_config(&config)?;
            let mu_list: Vec<MultiIndex> = if mu.is_empty() {
                cfg.identity_mu()?
            } else {
                mu.iter()
                    .map(|s| parse_mu(s, cfg.grid.d))
                    .collect::<Result<_, _>>()?
            };
            let reports = check_identity(&cfg, &mu_list)?;
            let mut ok = true;
            for r in &reports {
                let status = if r.mismatch <= tol { "PASS" } else { "FAIL" };
                println!(
                    "{status} mu={} lhs={:.6e} sum={:.6e} mismatch={:.3e} coercivity_violation={:.3e}",
                    r.mu,
                    r.lhs_fd,
                    r.term_i + r.term_ii + r.term_iii + r.term_iv,
                    r.mismatch,
                    r.coercivity_violation
                );
                if r.dt_warning {
                    eprintln!(
                        "warning: mu={} finite difference dt-share estimate {:.2e}",
                        r.mu, r.fd_share_estimate
                    );
                }
                ok &= r.mismatch <= tol;
            }
            Ok(ok)
        }
        Command::FitGevrey { snapshot, window } => {
            let window = match window {
                Some(w) => {
                    let parts: Vec<&str> = w.split(',').collect();
                    if parts.len() != 2 {
                        return Err(Error::Config {
                            path: "--window".to_string(),
                            message: "expected lo,hi".to_string(),
                        });
                    }
                    let lo = parts[0].trim().parse().map_err(|e| Error::Config {
                        path: "--window".to_string(),
                        message: format!("{e}"),
                    })?;
                    let hi = parts[1].trim().parse().map_err(|e| Error::Config {
                        path: "--window".to_string(),
                        message: format!("{e}"),
                    })?;
                    Some((lo, hi))
                }
                None => None,
            };
            let fit = fit_gevrey_snapshot(&snapshot, window)?;
            println!(
                "sigma_hat={:.6} c_hat={:.6} residual={:.3e} window=[{},{}]",
                fit.sigma_hat, fit.c_hat, fit.residual, fit.window.0, fit.window.1
            );
            Ok(true)
        }
        Command::Sweep { config, param } => {
            let cfg = load_config(&config)?;
            let (key, values) = parse_sweep(&param)?;
            let entries = sweep(&cfg, &key, &values)?;
            let mut ok = true;
            for e in &entries {
                let passed = e.summary.pass_mass_conservation
                    && e.summary.pass_entropy_monotone
                    && !e.summary.incomplete;
                println!(
                    "{} {key}={} -> {}",
                    if passed { "PASS" } else { "FAIL" },
                    e.value,
                    e.directory
                );
                ok &= passed;
            }
            Ok(ok)
        }
    }
}

fn parse_mu(s: &str, d: usize) -> Result<MultiIndex, Error> {
    let comps: Result<Vec<u32>, _> = s.split(',').map(|p| p.trim().parse()).collect();
    let comps = comps.map_err(|e| Error::Config {
        path: "--mu".to_string(),
        message: format!("bad multi-index `{s}`: {e}"),
    })?;
    MultiIndex::new(d, &comps)
}

fn parse_sweep(spec: &str) -> Result<(String, Vec<f64>), Error> {
    let (key, rest) = spec.split_once('=').ok_or_else(|| Error::Config {
        path: "--param".to_string(),
        message: "expected key=v1,v2,...".to_string(),
    })?;
    let values: Result<Vec<f64>, _> = rest.split(',').map(|v| v.trim().parse()).collect();
    let values = values.map_err(|e| Error::Config {
        path: "--param".to_string(),
        message: format!("{e}"),
    })?;
    if values.is_empty() {
        return Err(Error::Config {
            path: "--param".to_string(),
            message: "no values".to_string(),
        });
    }
    Ok((key.to_string(), values))
}
