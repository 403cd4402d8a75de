use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use distalloc::oracle::OracleError;
use distalloc::{solve, solve_separable_bisection, Equilibrium, Matrix, OracleSolution, Problem, Scenario, ScenarioConfig};

use crate::ScenarioArgs;

const REFERENCE_TOL: f64 = 1e-10;

pub struct Loaded {
    pub config: ScenarioConfig,
    pub scenario: Scenario<f64>,
    pub tolerance: f64,
}

/// One resource segment with its reference equilibrium, when the solver
/// found one.
pub struct Segment {
    pub resources: Matrix<f64>,
    pub problem: Problem<f64>,
    pub equilibrium: Option<Equilibrium<f64>>,
}

/// `path`, `path.toml`, or `path/scenario.toml`, whichever exists first.
fn resolve(path: &Path) -> Result<PathBuf> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    let with_ext = path.with_extension("toml");
    if with_ext.is_file() {
        return Ok(with_ext);
    }
    let nested = path.join("scenario.toml");
    if nested.is_file() {
        return Ok(nested);
    }
    bail!("no scenario file at {}", path.display())
}

impl Loaded {
    pub fn from_args(args: &ScenarioArgs) -> Result<Self> {
        let path = resolve(&args.config)?;
        let config = ScenarioConfig::load(&path, &args.overrides).with_context(|| format!("loading {}", path.display()))?;
        let scenario = config.build()?;
        let tolerance = args.tol.unwrap_or_else(|| config.tolerance());
        Ok(Self { config, scenario, tolerance })
    }

    pub fn segment_equilibria(&self) -> Vec<Segment> {
        self.scenario
            .resource_segments()
            .into_iter()
            .filter_map(|(_, d)| {
                let problem = self.scenario.problem.with_resources(d.clone()).ok()?;
                let equilibrium = reference(&problem).ok().map(|s| Equilibrium::new(s.x_star, s.mu_star, &d));
                Some(Segment { resources: d, problem, equilibrium })
            })
            .collect()
    }
}

/// Bisection when the costs are separable on boxes, dual ascent otherwise.
pub fn reference(problem: &Problem<f64>) -> Result<OracleSolution<f64>, OracleError> {
    match solve_separable_bisection(problem, REFERENCE_TOL) {
        Err(OracleError::NotSeparable(_)) => solve(problem, REFERENCE_TOL),
        other => other,
    }
}
