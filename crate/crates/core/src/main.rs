use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use drea::feasibility::{feasibility_report, FeasibilityReport, ReportOptions};
use drea::harness::config::builtin;
use drea::harness::emit;
use drea::harness::{load_config, run_monte_carlo, run_trial, EstimatorKind, McResult, Scenario, ScenarioConfig};
use drea::{Error, Result};

#[derive(Parser)]
#[command(name = "drea", version, about = "Distributed robust estimation for coupled networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo simulation and write CSV, metadata and SVG.
    Simulate {
        /// JSON config path or `builtin:paper` / `builtin:paper-uncertain`.
        config: String,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// drea, centralized or ekf.
        #[arg(long)]
        estimator: Option<String>,
    },
    /// Print the feasibility report.
    Check {
        config: String,
        /// Emit only JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run several estimators on one scenario and write a joint CSV.
    Compare {
        config: String,
        #[arg(long, value_delimiter = ',', default_value = "drea,ekf")]
        estimators: Vec<String>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the built-in four-node scenarios.
    ReplicatePaper {
        /// Use the perturbed-truth variant and compare against the augmented EKF.
        #[arg(long)]
        uncertain: bool,
        /// 1000 trials instead of 200.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn prepare(mut cfg: ScenarioConfig, trials: Option<usize>, seed: Option<u64>) -> Result<Scenario> {
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.build()
}

fn report(sc: &Scenario) -> Result<FeasibilityReport> {
    let opts = ReportOptions {
        beta: sc.config.tuner.beta,
        ..ReportOptions::default()
    };
    feasibility_report(&sc.model, &sc.x0, &opts)
}

fn gate(sc: &Scenario) -> Result<()> {
    if sc.config.allow_infeasible {
        return Ok(());
    }
    let r = report(sc)?;
    if !r.pass() {
        return Err(Error::Validation(
            "feasibility check failed; run `check` for details or set allow_infeasible".into(),
        ));
    }
    Ok(())
}

fn print_table(r: &FeasibilityReport) {
    let b = &r.bounds;
    println!("{:<28}{:>14}", "quantity", "value");
    for (name, v) in [
        ("kF1", b.k_f1),
        ("kF2", b.k_f2),
        ("kG", b.k_g),
        ("kE1", b.k_e1),
        ("kE2", b.k_e2),
        ("kH", b.k_h),
        ("kw1", b.k_w1),
        ("kw2", b.k_w2),
        ("kv1", b.k_v1),
        ("kv2", b.k_v2),
    ] {
        println!("{name:<28}{v:>14.6}");
    }
    let mark = |p: bool| if p { "pass" } else { "fail" };
    println!(
        "{:<28}{:>14}  worst cond {:.3e}",
        "nonsingular F",
        mark(r.nonsingular_f.pass),
        r.nonsingular_f.worst_condition
    );
    for o in &r.observability {
        println!(
            "{:<28}{:>14}  min eig {:.3e}",
            format!("observability node {}", o.node + 1),
            mark(o.pass),
            o.min_eigenvalue
        );
    }
    println!(
        "{:<28}{:>14}  {:.4} < {:.4}",
        "coupling stability",
        mark(r.thm2.pass),
        r.thm2.lhs,
        r.thm2.rhs
    );
    println!(
        "{:<28}{:>14}  {:.4} < {:.4}",
        "steady-state contraction",
        mark(r.thm3.pass),
        r.thm3.lhs,
        r.thm3.rhs
    );
}

fn write_outputs(dir: &Path, stem: &str, results: &[McResult]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in results {
        let base = format!("{stem}_{}", r.metadata.estimator);
        emit::write_csv(&dir.join(format!("{base}.csv")), r)?;
        emit::write_metadata(&dir.join(format!("{base}.json")), r)?;
    }
    emit::write_svg(&dir.join(format!("{stem}_mse.svg")), &emit::mse_svg(results))
}

fn print_summary(r: &McResult) {
    let last = r.mse.len() - 1;
    for i in 0..r.nodes {
        println!(
            "{:<12} node {}: final MSE {:.4e} ({:.2} dB)",
            r.metadata.estimator,
            i + 1,
            r.mse[last][i],
            r.mse_db(last, i)
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Simulate {
            config,
            trials,
            seed,
            out,
            estimator,
        } => {
            let sc = prepare(load_config(&config)?, trials, seed)?;
            gate(&sc)?;
            let kind = match estimator {
                Some(e) => EstimatorKind::parse(&e)?,
                None => sc.config.estimator,
            };
            let r = run_monte_carlo(&sc, kind)?;
            write_outputs(&out, &sc.config.name, std::slice::from_ref(&r))?;
            print_summary(&r);
        }
        Command::Check { config, json } => {
            let sc = load_config(&config)?.build()?;
            let r = report(&sc)?;
            let text = serde_json::to_string_pretty(&r).map_err(|e| Error::Validation(e.to_string()))?;
            println!("{text}");
            if !json {
                print_table(&r);
            }
        }
        Command::Compare {
            config,
            estimators,
            trials,
            seed,
            out,
        } => {
            let sc = prepare(load_config(&config)?, trials, seed)?;
            gate(&sc)?;
            let results = estimators
                .iter()
                .map(|e| run_monte_carlo(&sc, EstimatorKind::parse(e)?))
                .collect::<Result<Vec<_>>>()?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            emit::write_compare_csv(&out.join(format!("{}_compare.csv", sc.config.name)), &results)?;
            write_outputs(&out, &sc.config.name, &results)?;
            results.iter().for_each(print_summary);
        }
        Command::ReplicatePaper { uncertain, full, out } => {
            let name = if uncertain { "paper-uncertain" } else { "paper" };
            let sc = prepare(builtin(name)?, Some(if full { 1000 } else { 200 }), None)?;
            gate(&sc)?;
            let mut results = vec![run_monte_carlo(&sc, EstimatorKind::Drea)?];
            if uncertain {
                results.push(run_monte_carlo(&sc, EstimatorKind::Ekf)?);
            }
            write_outputs(&out, name, &results)?;
            let trace = run_trial(&sc, EstimatorKind::Drea, 0, true)?;
            emit::write_svg(&out.join(format!("{name}_states.svg")), &emit::states_svg(&trace))?;
            results.iter().for_each(print_summary);
            if uncertain {
                let d = results[0].time_averaged_range(50, 100);
                let e = results[1].time_averaged_range(50, 100);
                let wins = d.iter().zip(&e).filter(|(a, b)| a < b).count();
                println!("drea better than ekf in {wins}/{} paired trials (steps 50-100)", d.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
