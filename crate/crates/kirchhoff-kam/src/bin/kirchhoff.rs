//! Command-line front end: solve / reduce / measure / stability / verify.
//!
//! Exit codes: 0 success, 2 configuration error, 3 excluded frequency,
//! 4 divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kirchhoff_kam::config::{
    blocks_from_file, run_pipeline, run_verify, BlocksFile, RunConfig,
};
use kirchhoff_kam::error::Error;
use kirchhoff_kam::measure::{fit_power_law, sample_exclusions, stats_csv, MeasureConfig};

#[derive(Parser)]
#[command(
    name = "kirchhoff",
    about = "Spectral solver for quasi-periodic solutions of the forced Kirchhoff equation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline (zero mode + Newton iteration, then the enabled stages).
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Forcing field JSON; overrides the config's forcing_path.
        #[arg(long)]
        forcing: Option<PathBuf>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Regularize and block-diagonalize the linearized operator at the solved
    /// state, writing blocks.json and the convergence table.
    Reduce {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        forcing: Option<PathBuf>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Monte Carlo measure estimation of excluded frequencies.
    Measure {
        #[arg(long)]
        config: PathBuf,
        /// Final blocks JSON (from `reduce`); pure dispersion when absent.
        #[arg(long)]
        blocks: Option<PathBuf>,
        /// Comma-separated gamma values.
        #[arg(long, value_delimiter = ',')]
        gammas: Vec<f64>,
        #[arg(long, default_value = "measure.csv")]
        out: PathBuf,
    },
    /// Integrate the linearized flows for a finished run directory.
    Stability {
        /// Run directory produced by `solve`.
        #[arg(long)]
        solution: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        t_max_periods: f64,
        #[arg(long, default_value_t = 3.0)]
        s: f64,
    },
    /// Run the invariant self-test suite.
    Verify,
}

fn classify(err: &Error) -> u8 {
    match err {
        Error::NearResonant { .. } | Error::NonResonance { .. } => 3,
        Error::Divergence { .. } => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    // honor the thread-count override before rayon spins up
    if let Ok(n) = std::env::var("KIRCHHOFF_THREADS") {
        if let Ok(n) = n.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(classify(&e))
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Solve { config, forcing, out } => {
            let mut cfg = RunConfig::from_path(&config)?;
            if let Some(f) = forcing {
                cfg.forcing_path = Some(f.to_string_lossy().into_owned());
            }
            let summary = run_pipeline(&cfg, &out)?;
            if let Some(solve) = summary.stages.get("solve") {
                println!(
                    "solve: status={} steps={} residual={}",
                    solve.get("status").and_then(|v| v.as_str()).unwrap_or("?"),
                    solve.get("steps").and_then(|v| v.as_u64()).unwrap_or(0),
                    solve
                        .get("final_residual_s0")
                        .and_then(|v| v.as_f64())
                        .map(|v| format!("{v:.3e}"))
                        .unwrap_or_else(|| "?".into()),
                );
            }
            println!("artifacts written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Reduce { config, forcing, out } => {
            let mut cfg = RunConfig::from_path(&config)?;
            if let Some(f) = forcing {
                cfg.forcing_path = Some(f.to_string_lossy().into_owned());
            }
            cfg.stages = Some(vec!["solve".into(), "reduce".into()]);
            let summary = run_pipeline(&cfg, &out)?;
            if let Some(red) = summary.stages.get("reduce") {
                println!(
                    "reduce: m={} kam_steps={} remainder={}",
                    red.get("m").and_then(|v| v.as_f64()).unwrap_or(f64::NAN),
                    red.get("kam_steps").and_then(|v| v.as_u64()).unwrap_or(0),
                    red.get("final_remainder_d_s0")
                        .and_then(|v| v.as_f64())
                        .map(|v| format!("{v:.3e}"))
                        .unwrap_or_else(|| "?".into()),
                );
            }
            println!("artifacts written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Measure { config, blocks, gammas, out } => {
            let cfg = RunConfig::from_path(&config)?;
            let ctx = cfg.context()?;
            let (d, m) = match blocks {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)?;
                    let bf: BlocksFile = serde_json::from_str(&text)?;
                    (blocks_from_file(&bf), bf.m)
                }
                None => (kirchhoff_kam::toeplitz::BlockDiagonal::dispersion(1.0, ctx.j_max), 1.0),
            };
            let boxes: Vec<(f64, f64)> = match &cfg.omega_box {
                Some(b) => b.iter().map(|p| (p[0], p[1])).collect(),
                None => ctx.omega.iter().map(|w| (w - 0.25, w + 0.25)).collect(),
            };
            let mut mcfg = MeasureConfig::defaults(ctx.nu, ctx.l_max, ctx.j_max);
            if let Some(n) = cfg.measure_samples {
                mcfg.samples = n;
            }
            mcfg.seed = cfg.seed.unwrap_or(0);
            let gammas = if gammas.is_empty() { vec![0.1, 0.05, 0.025] } else { gammas };
            let mut stats = Vec::new();
            for g in &gammas {
                let st = sample_exclusions(&d, m, &boxes, *g, &mcfg)?;
                println!(
                    "gamma={:<9} excluded={:.4} ci=[{:.4}, {:.4}]",
                    format!("{g:.4}"),
                    st.excluded_fraction,
                    st.ci_low,
                    st.ci_high
                );
                stats.push(st);
            }
            if gammas.len() >= 2 {
                let fr: Vec<f64> = stats.iter().map(|s| s.excluded_fraction).collect();
                println!("fitted exponent: {:.3}", fit_power_law(&gammas, &fr));
            }
            std::fs::write(&out, stats_csv(&stats))?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Stability { solution, t_max_periods, s } => {
            let cfg = RunConfig::from_path(&solution.join("config.json"))?;
            let mut cfg = cfg;
            cfg.stages = Some(vec!["solve".into(), "reduce".into(), "stability".into()]);
            cfg.t_max_periods = Some(t_max_periods);
            cfg.stability_s = Some(s);
            let summary = run_pipeline(&cfg, &solution)?;
            if let Some(st) = summary.stages.get("stability") {
                println!(
                    "stability: reduced drift={} original amplification={}",
                    st.get("reduced_norm_drift")
                        .and_then(|v| v.as_f64())
                        .map(|v| format!("{v:.3e}"))
                        .unwrap_or_else(|| "?".into()),
                    st.get("original_amplification")
                        .and_then(|v| v.as_f64())
                        .map(|v| format!("{v:.3}"))
                        .unwrap_or_else(|| "?".into()),
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify => {
            let checks = run_verify();
            let mut all = true;
            for c in &checks {
                println!(
                    "{:<32} {:>12.3e} <= {:>9.1e}  {}",
                    c.name,
                    c.value,
                    c.threshold,
                    if c.pass { "PASS" } else { "FAIL" }
                );
                all &= c.pass;
            }
            if all {
                println!("verify: all {} checks passed", checks.len());
                Ok(ExitCode::SUCCESS)
            } else {
                Err(Error::Config("invariant suite failed".into()))
            }
        }
    }
}
