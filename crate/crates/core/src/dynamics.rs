//! Per-agent vector fields, the fixed-step integrator and event handling.
//!
//! Agents interact only through [`NeighborMessage`], which carries `μⱼ` and
//! the aggregate `sⱼ = ηⱼ − xⱼ + dⱼ`. The per-agent right-hand sides take
//! their neighbours' messages and nothing else.

use thiserror::Error;

use crate::analysis::consensus_error;
use crate::costs::{CostError, CostFunction};
use crate::graph::Digraph;
use crate::linalg::Matrix;
use crate::model::{validate, Algorithm, Gains, Problem, Scenario, Violation};
use crate::scalar::Scalar;
use crate::sets::{ConvexSet, SetError, ACTIVE_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("agent {agent} left its constraint set (distance {distance})")]
    InfeasibleState { agent: usize, distance: f64 },
    #[error("agent {agent}: smooth dynamics need a differentiable cost")]
    NotSmooth { agent: usize },
    #[error("scenario failed validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    ValidationFailed(Vec<Violation>),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Set(#[from] SetError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState<T> {
    pub t: T,
    pub x: Matrix<T>,
    pub mu: Matrix<T>,
    pub eta: Matrix<T>,
}

impl<T: Scalar> NetworkState<T> {
    pub fn agent<'a>(&'a self, i: usize, d: &'a Matrix<T>) -> AgentLocal<'a, T> {
        AgentLocal { x: self.x.row(i), mu: self.mu.row(i), eta: self.eta.row(i), d: d.row(i) }
    }

    /// Max-norm distance between two states over all of `(x, μ, η)`.
    pub fn max_deviation(&self, other: &Self) -> T {
        self.x.sub(&other.x).max_abs().max(self.mu.sub(&other.mu).max_abs()).max(self.eta.sub(&other.eta).max_abs())
    }
}

/// Private view of one agent's variables.
#[derive(Clone, Copy, Debug)]
pub struct AgentLocal<'a, T> {
    pub x: &'a [T],
    pub mu: &'a [T],
    pub eta: &'a [T],
    pub d: &'a [T],
}

impl<T: Scalar> AgentLocal<'_, T> {
    /// `sᵢ = ηᵢ − xᵢ + dᵢ`
    fn aggregate(&self) -> Vec<T> {
        self.eta.iter().zip(self.x).zip(self.d).map(|((e, x), d)| *e - *x + *d).collect()
    }
}

/// What an agent broadcasts: its multiplier estimate and the aggregate
/// `ηⱼ − xⱼ + dⱼ`. The decision, resource and auxiliary state are not
/// recoverable from it.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborMessage<T> {
    mu: Vec<T>,
    aggregate: Vec<T>,
}

impl<T: Scalar> NeighborMessage<T> {
    pub fn compose(local: &AgentLocal<'_, T>) -> Self {
        Self { mu: local.mu.to_vec(), aggregate: local.aggregate() }
    }

    pub fn mu(&self) -> &[T] {
        &self.mu
    }

    pub fn aggregate(&self) -> &[T] {
        &self.aggregate
    }
}

/// A message received over an edge of weight `a_ij`.
#[derive(Clone, Copy, Debug)]
pub struct Incoming<'a, T> {
    pub weight: T,
    pub message: &'a NeighborMessage<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentRates<T> {
    pub dx: Vec<T>,
    pub dmu: Vec<T>,
    pub deta: Vec<T>,
}

/// `μ̇ᵢ = k₁ sᵢ − k₂ Σ a_ij(μᵢ − μⱼ)`, `η̇ᵢ = −k₃ Σ a_ij(sᵢ − sⱼ)`.
/// Neighbour sums run in the order given.
fn coupling_rates<T: Scalar>(local: &AgentLocal<'_, T>, msgs: &[Incoming<'_, T>], gains: &Gains<T>) -> (Vec<T>, Vec<T>) {
    let s = local.aggregate();
    let n = s.len();
    let mut mu_lap = vec![T::zero(); n];
    let mut s_lap = vec![T::zero(); n];
    for m in msgs {
        for k in 0..n {
            mu_lap[k] = mu_lap[k] + m.weight * (local.mu[k] - m.message.mu[k]);
            s_lap[k] = s_lap[k] + m.weight * (s[k] - m.message.aggregate[k]);
        }
    }
    let dmu = (0..n).map(|k| gains.k1 * s[k] - gains.k2 * mu_lap[k]).collect();
    let deta = (0..n).map(|k| -gains.k3 * s_lap[k]).collect();
    (dmu, deta)
}

/// Unprojected drift `−g(xᵢ) + μᵢ` with `g` the subgradient selection.
fn descent_direction<T: Scalar>(local: &AgentLocal<'_, T>, cost: &dyn CostFunction<T>) -> Result<Vec<T>, CostError> {
    let g = cost.subgradient(local.x)?;
    Ok(g.iter().zip(local.mu).map(|(g, m)| *m - *g).collect())
}

fn check_feasible<T: Scalar>(agent: usize, x: &[T], set: &ConvexSet<T>) -> Result<(), DynamicsError> {
    let dist = set.distance(x)?;
    if dist > T::lit(ACTIVE_TOL) {
        return Err(DynamicsError::InfeasibleState { agent: agent + 1, distance: dist.as_f64() });
    }
    Ok(())
}

/// Right-hand side of the projected dynamics for one agent:
/// `ẋᵢ = Π_Ωᵢ(xᵢ, −g + μᵢ)` plus the coupling terms.
pub fn agent_rhs_nonsmooth<T: Scalar>(
    local: &AgentLocal<'_, T>,
    msgs: &[Incoming<'_, T>],
    gains: &Gains<T>,
    cost: &dyn CostFunction<T>,
    set: &ConvexSet<T>,
) -> Result<AgentRates<T>, DynamicsError> {
    let dir = descent_direction(local, cost)?;
    let dx = set.diff_project(local.x, &dir).map_err(|e| match e {
        SetError::PointOutsideSet(distance) => DynamicsError::InfeasibleState { agent: 0, distance },
        e => e.into(),
    })?;
    let (dmu, deta) = coupling_rates(local, msgs, gains);
    Ok(AgentRates { dx, dmu, deta })
}

/// Right-hand side without constraints: `ẋᵢ = −∇fᵢ(xᵢ) + μᵢ`.
pub fn agent_rhs_smooth<T: Scalar>(
    local: &AgentLocal<'_, T>,
    msgs: &[Incoming<'_, T>],
    gains: &Gains<T>,
    cost: &dyn CostFunction<T>,
) -> Result<AgentRates<T>, DynamicsError> {
    let grad = cost.gradient(local.x)?.ok_or(DynamicsError::NotSmooth { agent: 0 })?;
    let dx = grad.iter().zip(local.mu).map(|(g, m)| *m - *g).collect();
    let (dmu, deta) = coupling_rates(local, msgs, gains);
    Ok(AgentRates { dx, dmu, deta })
}

fn with_agent(e: DynamicsError, i: usize) -> DynamicsError {
    match e {
        DynamicsError::InfeasibleState { distance, .. } => DynamicsError::InfeasibleState { agent: i + 1, distance },
        DynamicsError::NotSmooth { .. } => DynamicsError::NotSmooth { agent: i + 1 },
        e => e,
    }
}

/// Network-level view of the dynamics for a fixed problem, graph and gains.
#[derive(Clone, Copy, Debug)]
pub struct Dynamics<'a, T: Scalar> {
    pub graph: &'a Digraph<T>,
    pub problem: &'a Problem<T>,
    pub gains: Gains<T>,
    pub algorithm: Algorithm,
}

/// Time derivatives of every agent, stacked.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkRates<T> {
    pub dx: Matrix<T>,
    pub dmu: Matrix<T>,
    pub deta: Matrix<T>,
}

impl<T: Scalar> NetworkRates<T> {
    pub fn max_abs(&self) -> T {
        self.dx.max_abs().max(self.dmu.max_abs()).max(self.deta.max_abs())
    }
}

impl<'a, T: Scalar> Dynamics<'a, T> {
    pub fn new(sc: &'a Scenario<T>) -> Self {
        Self { graph: &sc.graph, problem: &sc.problem, gains: sc.gains, algorithm: sc.algorithm }
    }

    pub fn messages(&self, state: &NetworkState<T>, d: &Matrix<T>) -> Vec<NeighborMessage<T>> {
        (0..self.problem.agent_count()).map(|i| NeighborMessage::compose(&state.agent(i, d))).collect()
    }

    fn inbox<'m>(&self, i: usize, messages: &'m [NeighborMessage<T>]) -> Vec<Incoming<'m, T>> {
        self.graph.in_neighbors(i).map(|(j, weight)| Incoming { weight, message: &messages[j] }).collect()
    }

    /// Evaluates the configured vector field at `state`.
    pub fn rates(&self, state: &NetworkState<T>, d: &Matrix<T>) -> Result<NetworkRates<T>, DynamicsError> {
        let messages = self.messages(state, d);
        let (agents, n) = (self.problem.agent_count(), self.problem.dim());
        let mut out = NetworkRates { dx: Matrix::zeros(agents, n), dmu: Matrix::zeros(agents, n), deta: Matrix::zeros(agents, n) };
        for i in 0..agents {
            let local = state.agent(i, d);
            let inbox = self.inbox(i, &messages);
            let r = match self.algorithm {
                Algorithm::Nonsmooth => {
                    agent_rhs_nonsmooth(&local, &inbox, &self.gains, self.problem.cost(i), self.problem.set(i))
                }
                Algorithm::Smooth => agent_rhs_smooth(&local, &inbox, &self.gains, self.problem.cost(i)),
            }
            .map_err(|e| with_agent(e, i))?;
            out.dx.row_mut(i).copy_from_slice(&r.dx);
            out.dmu.row_mut(i).copy_from_slice(&r.dmu);
            out.deta.row_mut(i).copy_from_slice(&r.deta);
        }
        Ok(out)
    }

    /// Advances `state` by `h` under resources `d`.
    ///
    /// Nonsmooth: `x⁺ = P_Ω(x + h(−g + μ))` with explicit Euler on `μ, η`.
    /// Smooth: classical four-stage Runge–Kutta on the full field.
    pub fn step(&self, state: &NetworkState<T>, d: &Matrix<T>, h: T) -> Result<NetworkState<T>, DynamicsError> {
        if h == T::zero() {
            return Ok(state.clone());
        }
        match self.algorithm {
            Algorithm::Nonsmooth => self.projected_euler(state, d, h),
            Algorithm::Smooth => self.rk4(state, d, h),
        }
    }

    fn projected_euler(&self, state: &NetworkState<T>, d: &Matrix<T>, h: T) -> Result<NetworkState<T>, DynamicsError> {
        let messages = self.messages(state, d);
        let mut next = state.clone();
        next.t = state.t + h;
        for i in 0..self.problem.agent_count() {
            let local = state.agent(i, d);
            let set = self.problem.set(i);
            check_feasible(i, local.x, set)?;
            let dir = descent_direction(&local, self.problem.cost(i))?;
            let trial: Vec<T> = local.x.iter().zip(&dir).map(|(x, v)| *x + h * *v).collect();
            next.x.row_mut(i).copy_from_slice(&set.project(&trial)?);
            let (dmu, deta) = coupling_rates(&local, &self.inbox(i, &messages), &self.gains);
            for k in 0..dmu.len() {
                next.mu.row_mut(i)[k] = local.mu[k] + h * dmu[k];
                next.eta.row_mut(i)[k] = local.eta[k] + h * deta[k];
            }
        }
        Ok(next)
    }

    fn rk4(&self, state: &NetworkState<T>, d: &Matrix<T>, h: T) -> Result<NetworkState<T>, DynamicsError> {
        let shift = |s: &NetworkState<T>, r: &NetworkRates<T>, c: T| NetworkState {
            t: s.t + c,
            x: combine(&s.x, &[(c, &r.dx)]),
            mu: combine(&s.mu, &[(c, &r.dmu)]),
            eta: combine(&s.eta, &[(c, &r.deta)]),
        };
        let half = h / T::lit(2.0);
        let r1 = self.rates(state, d)?;
        let r2 = self.rates(&shift(state, &r1, half), d)?;
        let r3 = self.rates(&shift(state, &r2, half), d)?;
        let r4 = self.rates(&shift(state, &r3, h), d)?;
        let (w1, w2) = (h / T::lit(6.0), h / T::lit(3.0));
        Ok(NetworkState {
            t: state.t + h,
            x: combine(&state.x, &[(w1, &r1.dx), (w2, &r2.dx), (w2, &r3.dx), (w1, &r4.dx)]),
            mu: combine(&state.mu, &[(w1, &r1.dmu), (w2, &r2.dmu), (w2, &r3.dmu), (w1, &r4.dmu)]),
            eta: combine(&state.eta, &[(w1, &r1.deta), (w2, &r2.deta), (w2, &r3.deta), (w1, &r4.deta)]),
        })
    }
}

fn combine<T: Scalar>(base: &Matrix<T>, terms: &[(T, &Matrix<T>)]) -> Matrix<T> {
    Matrix::from_fn(base.rows(), base.cols(), |i, j| {
        terms.iter().fold(base[(i, j)], |acc, (c, m)| acc + *c * m[(i, j)])
    })
}

/// Recorded simulation output.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub states: Vec<NetworkState<T>>,
    /// Resources in effect at each sample.
    pub resources: Vec<Matrix<T>>,
    /// `Σ xᵢ − Σ dᵢ` per sample.
    pub mismatch: Vec<Vec<T>>,
    pub consensus_error: Vec<T>,
    pub cost: Vec<T>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = T> + '_ {
        self.states.iter().map(|s| s.t)
    }

    pub fn last(&self) -> Option<&NetworkState<T>> {
        self.states.last()
    }

    /// Index of the last sample with `t ≤ time`.
    pub fn index_at(&self, time: T) -> Option<usize> {
        self.states.iter().rposition(|s| s.t <= time)
    }

    fn record(&mut self, state: &NetworkState<T>, d: &Matrix<T>, problem: &Problem<T>) {
        let sx = state.x.column_sums();
        let sd = d.column_sums();
        self.mismatch.push(sx.iter().zip(&sd).map(|(a, b)| *a - *b).collect());
        self.consensus_error.push(consensus_error(&state.mu));
        self.cost.push(problem.total_cost(&state.x));
        self.states.push(state.clone());
        self.resources.push(d.clone());
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SimulateOptions {
    /// Integrate even when validation reports violations.
    pub force: bool,
}

/// Integrates the scenario from `t = 0` to `T`.
///
/// Each event takes effect at the first step time `≥ event.time`; recording
/// happens after events at that time are applied. The final step is always
/// recorded.
pub fn simulate<T: Scalar>(sc: &Scenario<T>, opts: SimulateOptions) -> Result<Trajectory<T>, DynamicsError> {
    if !opts.force {
        let violations = validate(sc);
        if !violations.is_empty() {
            return Err(DynamicsError::ValidationFailed(violations));
        }
    }
    let dynamics = Dynamics::new(sc);
    let h = sc.integrator.step;
    let steps = sc.integrator.step_count();
    let every = sc.integrator.record_every.max(1);
    let mut events = sc.events.clone();
    events.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap_or(std::cmp::Ordering::Equal));
    let mut pending = events.into_iter().peekable();
    let slack = h * T::lit(1e-9);

    let mut d = sc.problem.resources().clone();
    let mut state = NetworkState { t: T::zero(), x: sc.x0.clone(), mu: sc.mu0.clone(), eta: sc.eta0.clone() };
    let mut traj = Trajectory { states: Vec::new(), resources: Vec::new(), mismatch: Vec::new(), consensus_error: Vec::new(), cost: Vec::new() };
    for k in 0..=steps {
        let t = T::from_usize(k).unwrap_or_else(T::nan) * h;
        state.t = t;
        while let Some(e) = pending.next_if(|e| e.time <= t + slack) {
            d.row_mut(e.agent).copy_from_slice(&e.resource);
        }
        if k % every == 0 || k == steps {
            traj.record(&state, &d, &sc.problem);
        }
        if k < steps {
            state = dynamics.step(&state, &d, h)?;
        }
    }
    Ok(traj)
}
