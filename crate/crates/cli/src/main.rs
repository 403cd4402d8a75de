//! Command-line driver: runs bundled or user scenarios, writes CSV traces
//! and reports, and exposes the reference solver and graph spectra.

mod output;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use distalloc::analysis::{consensus_error, mismatch};
use distalloc::config::load_graph;
use distalloc::linalg::norm;
use distalloc::oracle::perturbation_check;
use distalloc::{kkt_check, simulate, validate, SimulateOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scenario::Loaded;

/// Exit status when the scenario fails validation.
const EXIT_INVALID: u8 = 2;
/// Exit status when the final state is not certified optimal.
const EXIT_UNCERTIFIED: u8 = 3;

#[derive(Parser)]
#[command(name = "distalloc", version, about = "Distributed resource allocation over balanced digraphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (`.toml` may be omitted).
    config: PathBuf,
    /// Override a config entry, e.g. `gains.k1=7`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Certification tolerance; defaults to the scenario's.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write traj.csv, series.csv and summary.txt.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Simulate and compare the final state with the reference optimum.
    Compare {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Solve each resource segment centrally.
    Oracle {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Also test the optimum against random feasible perturbations.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check gains, step size and initial state.
    Validate {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Print λ̂₂ and ‖L‖ for the `[graph]` section of a file.
    Spectra { graph: PathBuf },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Run { scenario, out } => run(&scenario, &out),
        Command::Compare { scenario } => compare(&scenario),
        Command::Oracle { scenario, seed } => oracle(&scenario, seed),
        Command::Validate { scenario } => check(&scenario),
        Command::Spectra { graph } => spectra(&graph),
    }
}

/// Prints violations; true when there were none.
fn report_violations(loaded: &Loaded) -> bool {
    let violations = validate(&loaded.scenario);
    for v in &violations {
        eprintln!("validation: {v}");
    }
    violations.is_empty()
}

fn run(args: &ScenarioArgs, out: &std::path::Path) -> Result<u8> {
    let loaded = Loaded::from_args(args)?;
    if !report_violations(&loaded) {
        return Ok(EXIT_INVALID);
    }
    let traj = simulate(&loaded.scenario, SimulateOptions::default())?;
    let segments = loaded.segment_equilibria();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    output::write_atomic(&out.join("traj.csv"), &output::trajectory_csv(&traj))?;
    output::write_atomic(&out.join("series.csv"), &output::series_csv(&loaded, &traj, &segments)?)?;
    let summary = output::summary(&loaded, &traj, &segments)?;
    output::write_atomic(&out.join("summary.txt"), &summary.text)?;
    print!("{}", summary.text);
    Ok(if summary.certified { 0 } else { EXIT_UNCERTIFIED })
}

fn compare(args: &ScenarioArgs) -> Result<u8> {
    let loaded = Loaded::from_args(args)?;
    if !report_violations(&loaded) {
        return Ok(EXIT_INVALID);
    }
    let traj = simulate(&loaded.scenario, SimulateOptions::default())?;
    let last = traj.last().context("empty trajectory")?;
    let d = traj.resources.last().context("empty trajectory")?;
    let problem = loaded.scenario.problem.with_resources(d.clone())?;
    let sol = scenario::reference(&problem)?;
    let mut worst: f64 = 0.0;
    for i in 0..problem.agent_count() {
        let dev = last.x.row(i).iter().zip(sol.x_star.row(i)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(dev);
        println!("agent {}: |x - x*| = {}", i + 1, output::num(dev));
    }
    println!("max deviation: {}", output::num(worst));
    println!("mismatch norm: {}", output::num(norm(&mismatch(&last.x, d))));
    println!("consensus error: {}", output::num(consensus_error(&last.mu)));
    match output::final_segment_rate(&traj, &loaded.segment_equilibria()) {
        Ok(r) => println!("empirical rate: {} (r^2 {})", output::num(r.slope), output::num(r.r_squared)),
        Err(e) => println!("empirical rate: unavailable ({e})"),
    }
    let report = kkt_check(&problem, &last.x, &last.mu, loaded.tolerance)?;
    Ok(if report.certified { 0 } else { EXIT_UNCERTIFIED })
}

fn oracle(args: &ScenarioArgs, seed: Option<u64>) -> Result<u8> {
    let loaded = Loaded::from_args(args)?;
    let agents = loaded.scenario.problem.agent_count();
    let mut certified = true;
    for (t, d) in loaded.scenario.resource_segments() {
        let problem = loaded.scenario.problem.with_resources(d)?;
        let sol = scenario::reference(&problem)?;
        println!("segment from t = {t}:");
        for i in 0..agents {
            println!("  x*_{} = {}", i + 1, output::row(sol.x_star.row(i)));
        }
        println!("  mu* = {}", output::row(&sol.mu_star));
        println!("  iterations = {}, dual gap = {}", sol.iterations, output::num(sol.dual_gap_estimate));
        if sol.resource_clamped {
            println!("  total resource clamped to the attainable range");
        }
        let report = kkt_check(&problem, &sol.x_star, &sol.mu_matrix(agents), loaded.tolerance)?;
        println!("  kkt residual = {}, certified = {}", output::num(report.worst()), report.certified);
        certified &= report.certified;
        if let Some(seed) = seed {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = perturbation_check(&problem, &sol.x_star, 100, 0.1, &mut rng)?;
            println!(
                "  perturbations: {} of {} feasible, smallest cost increase {}",
                p.feasible,
                p.trials,
                output::num(p.min_increase)
            );
        }
    }
    Ok(if certified { 0 } else { EXIT_UNCERTIFIED })
}

fn check(args: &ScenarioArgs) -> Result<u8> {
    let loaded = Loaded::from_args(args)?;
    let sc = &loaded.scenario;
    let g = sc.gains;
    println!("gains: k1 = {}, k2 = {}, k3 = {}", g.k1, g.k2, g.k3);
    if let Some(b) = sc.gain_bounds() {
        println!("bounds: k1 > {}, k2 > {} at k1 = {}", b.k1_min, b.k2_min(g.k1), g.k1);
    }
    if let Some(limit) = distalloc::model::linear_step_limit(sc) {
        println!("step: h = {}, linearised limit {}", sc.integrator.step, limit);
    }
    if report_violations(&loaded) {
        println!("ok");
        Ok(0)
    } else {
        Ok(EXIT_INVALID)
    }
}

fn spectra(path: &std::path::Path) -> Result<u8> {
    let graph = load_graph(path)?.build::<f64>()?;
    println!("nodes: {}", graph.node_count());
    println!("weight balanced: {}", graph.is_weight_balanced(1e-12));
    println!("strongly connected: {}", graph.is_strongly_connected());
    let spec = graph.spectral_data()?;
    println!("lambda2_hat: {}", output::num(spec.lambda2_hat));
    println!("laplacian_norm: {}", output::num(spec.laplacian_norm));
    Ok(0)
}
