//! TOML scenario files.
//!
//! ```toml
//! name = "ring"
//! algorithm = "nonsmooth"      # or "smooth"
//! tolerance = 1e-5             # certification tolerance, optional
//!
//! [graph]
//! nodes = 3
//! edges = [[1, 2, 1.0], [2, 3, 1.0], [3, 1, 1.0]]   # from, to, weight
//!
//! [gains]
//! k1 = 9.0
//! k2 = 326.0
//! k3 = 5.0
//!
//! [integrator]
//! h = 1e-3
//! T = 60.0
//! record_every = 100
//!
//! [agents.1]
//! cost = "dispatch 0.5 3 2 30"   # alpha beta gamma c
//! set = "box 20 40"              # lower.. upper..
//! d = [45.0]
//! x0 = [30.0]                    # optional, default P(d)
//! mu0 = [0.0]                    # optional
//! eta0 = [0.0]                   # optional
//!
//! [[events]]
//! time = 20.0
//! agent = 1
//! d = [10.0]
//! ```
//!
//! Cost strings: `dispatch a b g c`, `example2:f1` … `example2:f4`, or
//! `quadratic Q.. b..` with `Q` row-major (`n² + n` numbers).
//! Set strings: `box lo.. hi..`, `ball c.. r`, `free`.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::{CostFunction, DispatchCost, Example2Cost, QuadraticCost};
use crate::graph::Digraph;
use crate::linalg::Matrix;
use crate::model::{Algorithm, Gains, IntegratorSettings, Problem, ResourceEvent, Scenario};
use crate::scalar::Scalar;
use crate::sets::ConvexSet;

pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("bad override `{0}`: expected key.path=value")]
    Override(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmName {
    #[default]
    Nonsmooth,
    Smooth,
}

impl From<AlgorithmName> for Algorithm {
    fn from(a: AlgorithmName) -> Self {
        match a {
            AlgorithmName::Nonsmooth => Algorithm::Nonsmooth,
            AlgorithmName::Smooth => Algorithm::Smooth,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub nodes: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl GraphConfig {
    pub fn build<T: Scalar>(&self) -> Result<Digraph<T>, ConfigError> {
        let edges: Vec<(usize, usize, T)> = self.edges.iter().map(|&(a, b, w)| (a, b, T::lit(w))).collect();
        Digraph::from_edges(self.nodes, &edges).map_err(|e| ConfigError::Invalid(format!("graph: {e}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsConfig {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub h: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

fn default_record_every() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub cost: String,
    pub set: String,
    pub d: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta0: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventConfig {
    pub time: f64,
    /// 1-indexed.
    pub agent: usize,
    pub d: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub algorithm: AlgorithmName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    pub graph: GraphConfig,
    pub gains: GainsConfig,
    pub integrator: IntegratorConfig,
    pub agents: BTreeMap<String, AgentConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventConfig>,
}

fn numbers(words: &[&str], what: &str) -> Result<Vec<f64>, ConfigError> {
    words
        .iter()
        .map(|w| w.parse::<f64>().map_err(|_| ConfigError::Invalid(format!("{what}: `{w}` is not a number"))))
        .collect()
}

/// Parses a cost description for dimension `n`.
pub fn parse_cost<T: Scalar>(spec: &str, n: usize) -> Result<Arc<dyn CostFunction<T>>, ConfigError> {
    let words: Vec<&str> = spec.split_whitespace().collect();
    let bad = |msg: String| ConfigError::Invalid(format!("cost `{spec}`: {msg}"));
    match words.first().copied() {
        Some("dispatch") => {
            let v = numbers(&words[1..], "dispatch")?;
            if v.len() != 4 || n != 1 {
                return Err(bad("expected `dispatch alpha beta gamma c` on a scalar resource".into()));
            }
            let f = DispatchCost::new(T::lit(v[0]), T::lit(v[1]), T::lit(v[2]), T::lit(v[3])).map_err(|e| bad(e.to_string()))?;
            Ok(Arc::new(f))
        }
        Some("quadratic") => {
            let v = numbers(&words[1..], "quadratic")?;
            if v.len() != n * n + n {
                return Err(bad(format!("expected {} numbers (Q row-major, then b)", n * n + n)));
            }
            let q = Matrix::from_fn(n, n, |i, j| T::lit(v[i * n + j]));
            let b = v[n * n..].iter().map(|x| T::lit(*x)).collect();
            Ok(Arc::new(QuadraticCost::new(q, b).map_err(|e| bad(e.to_string()))?))
        }
        Some(w) if words.len() == 1 && w.starts_with("example2:f") => {
            let f = w["example2:f".len()..]
                .parse::<usize>()
                .ok()
                .and_then(Example2Cost::from_index)
                .ok_or_else(|| bad("expected example2:f1 .. example2:f4".into()))?;
            if n != 2 {
                return Err(bad("example2 costs are two-dimensional".into()));
            }
            Ok(Arc::new(f))
        }
        _ => Err(bad("unknown cost family".into())),
    }
}

/// Parses a set description for dimension `n`.
pub fn parse_set<T: Scalar>(spec: &str, n: usize) -> Result<ConvexSet<T>, ConfigError> {
    let words: Vec<&str> = spec.split_whitespace().collect();
    let bad = |msg: String| ConfigError::Invalid(format!("set `{spec}`: {msg}"));
    let lit = |v: &[f64]| v.iter().map(|x| T::lit(*x)).collect::<Vec<T>>();
    match words.first().copied() {
        Some("free") if words.len() == 1 => Ok(ConvexSet::WholeSpace(n)),
        Some("box") => {
            let v = numbers(&words[1..], "box")?;
            if v.len() != 2 * n {
                return Err(bad(format!("expected {} numbers", 2 * n)));
            }
            ConvexSet::boxed(lit(&v[..n]), lit(&v[n..])).map_err(|e| bad(e.to_string()))
        }
        Some("ball") => {
            let v = numbers(&words[1..], "ball")?;
            if v.len() != n + 1 {
                return Err(bad(format!("expected {} numbers", n + 1)));
            }
            ConvexSet::ball(lit(&v[..n]), T::lit(v[n])).map_err(|e| bad(e.to_string()))
        }
        _ => Err(bad("unknown set kind".into())),
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads `path`, applies `key.path=value` overrides, then parses.
    pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance.unwrap_or(DEFAULT_TOLERANCE)
    }

    pub fn dim(&self) -> usize {
        self.agents.values().next().map_or(0, |a| a.d.len())
    }

    /// Agents in index order; keys must be exactly `1..=N`.
    pub fn ordered_agents(&self) -> Result<Vec<&AgentConfig>, ConfigError> {
        let mut keyed = Vec::with_capacity(self.agents.len());
        for (k, a) in &self.agents {
            let i: usize = k.parse().map_err(|_| ConfigError::Invalid(format!("agent key `{k}` is not an index")))?;
            keyed.push((i, a));
        }
        keyed.sort_by_key(|(i, _)| *i);
        for (pos, (i, _)) in keyed.iter().enumerate() {
            if *i != pos + 1 {
                return Err(ConfigError::Invalid(format!("agents must be numbered 1..{}", keyed.len())));
            }
        }
        Ok(keyed.into_iter().map(|(_, a)| a).collect())
    }

    pub fn build<T: Scalar>(&self) -> Result<Scenario<T>, ConfigError> {
        let agents = self.ordered_agents()?;
        let n = self.dim();
        if agents.is_empty() || n == 0 {
            return Err(ConfigError::Invalid("no agents".into()));
        }
        let row = |v: &[f64], what: &str, i: usize| -> Result<Vec<T>, ConfigError> {
            if v.len() != n {
                return Err(ConfigError::Invalid(format!("agent {i}: {what} has length {} (expected {n})", v.len())));
            }
            Ok(v.iter().map(|x| T::lit(*x)).collect())
        };
        let mut costs = Vec::new();
        let mut sets = Vec::new();
        let mut d = Vec::new();
        for (i, a) in agents.iter().enumerate() {
            costs.push(parse_cost::<T>(&a.cost, n)?);
            sets.push(parse_set::<T>(&a.set, n)?);
            d.push(row(&a.d, "d", i + 1)?);
        }
        let problem = Problem::new(costs, sets, Matrix::from_rows(&d)).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let graph = self.graph.build()?;
        let gains = Gains { k1: T::lit(self.gains.k1), k2: T::lit(self.gains.k2), k3: T::lit(self.gains.k3) };
        let integrator = IntegratorSettings {
            step: T::lit(self.integrator.h),
            horizon: T::lit(self.integrator.horizon),
            record_every: self.integrator.record_every,
        };
        let mut sc = Scenario::new(problem, graph, gains, self.algorithm.into(), integrator);
        let initial = |pick: fn(&AgentConfig) -> &Option<Vec<f64>>, what: &str, base: &Matrix<T>| {
            let mut m = base.clone();
            for (i, a) in agents.iter().enumerate() {
                if let Some(v) = pick(a) {
                    m.row_mut(i).copy_from_slice(&row(v, what, i + 1)?);
                }
            }
            Ok::<_, ConfigError>(m)
        };
        sc.x0 = initial(|a| &a.x0, "x0", &sc.x0)?;
        sc.mu0 = initial(|a| &a.mu0, "mu0", &sc.mu0)?;
        sc.eta0 = initial(|a| &a.eta0, "eta0", &sc.eta0)?;
        let mut events = Vec::new();
        for (k, e) in self.events.iter().enumerate() {
            if e.agent == 0 || e.agent > agents.len() {
                return Err(ConfigError::Invalid(format!("event {}: agent {} out of range", k + 1, e.agent)));
            }
            events.push(ResourceEvent { time: T::lit(e.time), agent: e.agent - 1, resource: row(&e.d, "event d", e.agent)? });
        }
        Ok(sc.with_events(events))
    }
}

/// Sets `a.b.c = value` inside `table`, creating intermediate tables.
/// The value is read as a TOML literal, or as a bare string if it is not one.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| ConfigError::Override(assignment.into()))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::Override(assignment.into()));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").ok_or_else(|| ConfigError::Override(assignment.into()))?,
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| ConfigError::Override(assignment.into()))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Reads only the `[graph]` section of a file.
pub fn load_graph(path: &std::path::Path) -> Result<GraphConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    let graph = table.remove("graph").ok_or_else(|| ConfigError::Invalid("missing [graph] section".into()))?;
    graph.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
name = "pair"
[graph]
nodes = 2
edges = [[1, 2, 1], [2, 1, 1.0]]
[gains]
k1 = 3.0
k2 = 20.0
k3 = 1.0
[integrator]
h = 0.001
T = 1.0
[agents.1]
cost = "dispatch 0 1 1 0"
set = "box 0 10"
d = [2.0]
[agents.2]
cost = "quadratic 1 0"
set = "free"
d = [3.0]
x0 = [1.0]
[[events]]
time = 0.5
agent = 2
d = [1.0]
"#;

    #[test]
    fn parse_and_build() {
        let c = ScenarioConfig::from_toml_str(SMALL).unwrap();
        assert_eq!(c.integrator.record_every, 100);
        assert_eq!(c.algorithm, AlgorithmName::Nonsmooth);
        let sc = c.build::<f64>().unwrap();
        assert_eq!(sc.problem.agent_count(), 2);
        assert_eq!(sc.x0, Matrix::from_rows(&[[2.0], [1.0]]));
        assert_eq!(sc.events[0].agent, 1);
        assert_eq!(sc.graph.weight(0, 1), 1.0);
    }

    #[test]
    fn round_trip() {
        let c = ScenarioConfig::from_toml_str(SMALL).unwrap();
        let again = ScenarioConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = SMALL.replace("k3 = 1.0", "k3 = 1.0\nk4 = 2.0");
        assert!(matches!(ScenarioConfig::from_toml_str(&text), Err(ConfigError::Parse(_))));
        let text = SMALL.replace("x0 = [1.0]", "x1 = [1.0]");
        assert!(ScenarioConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn overrides() {
        let mut t: toml::Table = SMALL.parse().unwrap();
        apply_override(&mut t, "gains.k1=7").unwrap();
        apply_override(&mut t, "agents.1.d=[4.5]").unwrap();
        apply_override(&mut t, "algorithm=smooth").unwrap();
        let c: ScenarioConfig = t.try_into().unwrap();
        assert_eq!(c.gains.k1, 7.0);
        assert_eq!(c.agents["1"].d, vec![4.5]);
        assert_eq!(c.algorithm, AlgorithmName::Smooth);
        let mut t: toml::Table = SMALL.parse().unwrap();
        assert!(apply_override(&mut t, "gains.k1").is_err());
        assert!(apply_override(&mut t, "name.x=1").is_err());
    }

    #[test]
    fn descriptions() {
        assert!(parse_cost::<f64>("dispatch 1 2 3", 1).is_err());
        assert!(parse_cost::<f64>("dispatch 1 2 0 3", 1).is_err());
        assert!(parse_cost::<f64>("example2:f5", 2).is_err());
        assert!(parse_cost::<f64>("example2:f2", 2).unwrap().gradient_lipschitz().is_some());
        assert!(parse_cost::<f64>("quadratic 1 0 0 -1 0 0", 2).is_err());
        assert!(matches!(parse_set::<f64>("ball 0 0 2", 2).unwrap(), ConvexSet::Ball { .. }));
        assert!(parse_set::<f64>("box 1 0", 1).is_err());
        assert!(parse_set::<f64>("sphere 1", 1).is_err());
    }

    #[test]
    fn agent_numbering() {
        let text = SMALL.replace("[agents.2]", "[agents.3]");
        let c = ScenarioConfig::from_toml_str(&text).unwrap();
        assert!(matches!(c.build::<f64>(), Err(ConfigError::Invalid(_))));
    }
}
