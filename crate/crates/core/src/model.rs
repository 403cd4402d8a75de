//! Problem data, gains, scenarios and their validation.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::costs::CostFunction;
use crate::graph::{Digraph, GraphError, SpectralData};
use crate::linalg::{norm_inf, Matrix};
use crate::scalar::Scalar;
use crate::sets::ConvexSet;

/// Tolerance for `x(0) ∈ Ω` and `Σ ηᵢ(0) = 0`.
pub const INITIAL_TOL: f64 = 1e-9;
/// Fraction of the explicit-Euler stability limit `2/(k₂‖L‖)` accepted for `h`.
pub const STEP_SAFETY: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("problem needs at least one agent")]
    NoAgents,
    #[error("agent {agent}: {what} has dimension {got}, expected {expected}")]
    Dimension { agent: usize, what: &'static str, expected: usize, got: usize },
    #[error("agent {agent} out of range")]
    AgentOutOfRange { agent: usize },
}

/// Resource allocation problem `min Σ fᵢ(xᵢ)` s.t. `Σ xᵢ = Σ dᵢ`, `xᵢ ∈ Ωᵢ`.
#[derive(Clone, Debug)]
pub struct Problem<T: Scalar> {
    costs: Vec<Arc<dyn CostFunction<T>>>,
    sets: Vec<ConvexSet<T>>,
    resources: Matrix<T>,
}

impl<T: Scalar> Problem<T> {
    pub fn new(
        costs: Vec<Arc<dyn CostFunction<T>>>,
        sets: Vec<ConvexSet<T>>,
        resources: Matrix<T>,
    ) -> Result<Self, ModelError> {
        let agents = costs.len();
        if agents == 0 {
            return Err(ModelError::NoAgents);
        }
        let n = resources.cols();
        if sets.len() != agents {
            return Err(ModelError::Dimension { agent: sets.len() + 1, what: "set list", expected: agents, got: sets.len() });
        }
        if resources.rows() != agents {
            return Err(ModelError::Dimension { agent: 0, what: "resource rows", expected: agents, got: resources.rows() });
        }
        for (i, (f, s)) in costs.iter().zip(&sets).enumerate() {
            if f.dim() != n {
                return Err(ModelError::Dimension { agent: i + 1, what: "cost", expected: n, got: f.dim() });
            }
            if s.dim() != n {
                return Err(ModelError::Dimension { agent: i + 1, what: "set", expected: n, got: s.dim() });
            }
        }
        Ok(Self { costs, sets, resources })
    }

    pub fn agent_count(&self) -> usize {
        self.costs.len()
    }

    /// Resource dimension `n`.
    pub fn dim(&self) -> usize {
        self.resources.cols()
    }

    pub fn cost(&self, i: usize) -> &dyn CostFunction<T> {
        self.costs[i].as_ref()
    }

    pub fn costs(&self) -> &[Arc<dyn CostFunction<T>>] {
        &self.costs
    }

    pub fn set(&self, i: usize) -> &ConvexSet<T> {
        &self.sets[i]
    }

    pub fn sets(&self) -> &[ConvexSet<T>] {
        &self.sets
    }

    pub fn resources(&self) -> &Matrix<T> {
        &self.resources
    }

    pub fn total_resource(&self) -> Vec<T> {
        self.resources.column_sums()
    }

    /// Same problem with a different resource assignment.
    pub fn with_resources(&self, resources: Matrix<T>) -> Result<Self, ModelError> {
        Self::new(self.costs.clone(), self.sets.clone(), resources)
    }

    /// Network strong-convexity modulus `min ωᵢ`.
    pub fn omega(&self) -> T {
        self.costs.iter().map(|f| f.strong_convexity()).fold(T::infinity(), T::min)
    }

    /// Network gradient Lipschitz constant `max θᵢ`, if every cost has one.
    pub fn theta(&self) -> Option<T> {
        self.costs.iter().map(|f| f.gradient_lipschitz()).try_fold(T::zero(), |m, t| t.map(|t| m.max(t)))
    }

    pub fn total_cost(&self, x: &Matrix<T>) -> T {
        self.costs.iter().enumerate().map(|(i, f)| f.value(x.row(i)).unwrap_or(T::nan())).sum()
    }

    /// Strict interior feasibility `Σ lower < Σ d < Σ upper` per coordinate.
    /// `None` when some set is neither a box nor the whole space.
    pub fn slater_holds(&self) -> Option<bool> {
        let n = self.dim();
        let mut lo = vec![T::zero(); n];
        let mut hi = vec![T::zero(); n];
        for s in &self.sets {
            match s {
                ConvexSet::Box { lower, upper } => {
                    for k in 0..n {
                        lo[k] = lo[k] + lower[k];
                        hi[k] = hi[k] + upper[k];
                    }
                }
                ConvexSet::WholeSpace(_) => {
                    lo.iter_mut().for_each(|v| *v = T::neg_infinity());
                    hi.iter_mut().for_each(|v| *v = T::infinity());
                }
                _ => return None,
            }
        }
        let total = self.total_resource();
        Some((0..n).all(|k| lo[k] < total[k] && total[k] < hi[k]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gains<T> {
    pub k1: T,
    pub k2: T,
    pub k3: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    /// Projected subgradient dynamics with local constraint sets.
    Nonsmooth,
    /// Gradient dynamics for smooth costs without local constraints.
    Smooth,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Nonsmooth => "nonsmooth",
            Self::Smooth => "smooth",
        })
    }
}

/// Lower bounds on `k₁` and, given `k₁`, on `k₂`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainBounds<T> {
    pub k1_min: T,
    lambda2_hat: T,
    pub note: &'static str,
}

impl<T: Scalar> GainBounds<T> {
    /// `k₁² / λ̂₂²`
    pub fn k2_min(&self, k1: T) -> T {
        k1 * k1 / (self.lambda2_hat * self.lambda2_hat)
    }

    pub fn k1_ok(&self, k1: T) -> bool {
        k1 > self.k1_min
    }

    pub fn k2_ok(&self, k1: T, k2: T) -> bool {
        k2 > self.k2_min(k1)
    }
}

/// `k₁ > ‖L‖²/(λ̂₂ ω)`, `k₂ > k₁²/λ̂₂²`, `k₃ > 0`.
pub fn min_gains_nonsmooth<T: Scalar>(spec: &SpectralData<T>, omega: T) -> GainBounds<T> {
    let l2 = spec.laplacian_norm * spec.laplacian_norm;
    GainBounds {
        k1_min: l2 / (spec.lambda2_hat * omega),
        lambda2_hat: spec.lambda2_hat,
        note: "k1 > |L|^2/(lambda2 omega), k2 > k1^2/lambda2^2, k3 > 0",
    }
}

/// `k₁ > max{‖L‖²(ω+1)/(λ̂₂ω²) + θ²/(2ω), 1}`, `k₂ > k₁²/λ̂₂²`, `k₃ > 0`.
pub fn min_gains_smooth<T: Scalar>(spec: &SpectralData<T>, omega: T, theta: T) -> GainBounds<T> {
    let l2 = spec.laplacian_norm * spec.laplacian_norm;
    let coupling = l2 * (omega + T::one()) / (spec.lambda2_hat * omega * omega);
    let smooth = theta * theta / (T::lit(2.0) * omega);
    GainBounds {
        k1_min: (coupling + smooth).max(T::one()),
        lambda2_hat: spec.lambda2_hat,
        note: "k1 > max(|L|^2(omega+1)/(lambda2 omega^2) + theta^2/(2 omega), 1), k2 > k1^2/lambda2^2, k3 > 0",
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorSettings<T> {
    pub step: T,
    pub horizon: T,
    pub record_every: usize,
}

impl<T: Scalar> Default for IntegratorSettings<T> {
    fn default() -> Self {
        Self { step: T::lit(1e-3), horizon: T::lit(10.0), record_every: 100 }
    }
}

impl<T: Scalar> IntegratorSettings<T> {
    pub fn step_count(&self) -> usize {
        if self.horizon <= T::zero() {
            return 0;
        }
        (self.horizon / self.step).round().to_usize().unwrap_or(0)
    }
}

/// Change of agent `agent`'s resource to `resource` at `time`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResourceEvent<T> {
    pub time: T,
    /// 0-indexed agent.
    pub agent: usize,
    pub resource: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct Scenario<T: Scalar> {
    pub problem: Problem<T>,
    pub graph: Digraph<T>,
    pub gains: Gains<T>,
    pub algorithm: Algorithm,
    pub integrator: IntegratorSettings<T>,
    pub events: Vec<ResourceEvent<T>>,
    pub x0: Matrix<T>,
    pub mu0: Matrix<T>,
    pub eta0: Matrix<T>,
}

impl<T: Scalar> Scenario<T> {
    /// Defaults `xᵢ(0) = P_Ωᵢ(dᵢ)`, `μᵢ(0) = 0`, `ηᵢ(0) = 0`.
    pub fn new(
        problem: Problem<T>,
        graph: Digraph<T>,
        gains: Gains<T>,
        algorithm: Algorithm,
        integrator: IntegratorSettings<T>,
    ) -> Self {
        let (agents, n) = (problem.agent_count(), problem.dim());
        let mut x0 = Matrix::zeros(agents, n);
        for i in 0..agents {
            let p = problem.set(i).project(problem.resources().row(i)).unwrap_or_else(|_| vec![T::zero(); n]);
            x0.row_mut(i).copy_from_slice(&p);
        }
        Self {
            problem,
            graph,
            gains,
            algorithm,
            integrator,
            events: Vec::new(),
            x0,
            mu0: Matrix::zeros(agents, n),
            eta0: Matrix::zeros(agents, n),
        }
    }

    pub fn with_events(mut self, events: Vec<ResourceEvent<T>>) -> Self {
        self.events = events;
        self
    }

    pub fn with_x0(mut self, x0: Matrix<T>) -> Self {
        self.x0 = x0;
        self
    }

    pub fn with_mu0(mut self, mu0: Matrix<T>) -> Self {
        self.mu0 = mu0;
        self
    }

    pub fn with_eta0(mut self, eta0: Matrix<T>) -> Self {
        self.eta0 = eta0;
        self
    }

    /// Gain bounds for the configured algorithm, when they can be computed.
    pub fn gain_bounds(&self) -> Option<GainBounds<T>> {
        let spec = self.graph.spectral_data().ok()?;
        let omega = self.problem.omega();
        match self.algorithm {
            Algorithm::Nonsmooth => Some(min_gains_nonsmooth(&spec, omega)),
            Algorithm::Smooth => Some(min_gains_smooth(&spec, omega, self.problem.theta()?)),
        }
    }

    /// Resource assignments in effect on each segment between events, with
    /// the segment start times (first entry at `t = 0`).
    pub fn resource_segments(&self) -> Vec<(T, Matrix<T>)> {
        let mut events = self.events.clone();
        events.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap_or(std::cmp::Ordering::Equal));
        let mut d = self.problem.resources().clone();
        let mut out = vec![(T::zero(), d.clone())];
        for e in events {
            if e.agent < d.rows() && e.resource.len() == d.cols() {
                d.row_mut(e.agent).copy_from_slice(&e.resource);
            }
            match out.last_mut() {
                Some(last) if last.0 == e.time => last.1 = d.clone(),
                _ => out.push((e.time, d.clone())),
            }
        }
        out
    }
}

/// A reason a scenario does not meet the convergence hypotheses.
#[derive(Clone, Debug, PartialEq, Error)]
pub enum Violation {
    #[error("graph: {0}")]
    Graph(GraphError),
    #[error("graph has {graph} nodes but the problem has {agents} agents")]
    SizeMismatch { graph: usize, agents: usize },
    #[error("gain {name} = {value} must be positive")]
    NonPositiveGain { name: &'static str, value: f64 },
    #[error("k1 = {k1} is not above the bound {bound} ({algorithm} algorithm)")]
    K1BelowBound { k1: f64, bound: f64, algorithm: Algorithm },
    #[error("k2 = {k2} is not above the bound {bound} = k1^2/lambda2^2")]
    K2BelowBound { k2: f64, bound: f64 },
    #[error("smooth algorithm needs Lipschitz gradients, but agent {agent}'s cost has none")]
    SmoothNeedsLipschitz { agent: usize },
    #[error("smooth algorithm has no projection, but agent {agent} has a constraint set")]
    SmoothWithConstraints { agent: usize },
    #[error("x0 of agent {agent} lies outside its set (distance {distance})")]
    InfeasibleStart { agent: usize, distance: f64 },
    #[error("sum of eta(0) is not zero (max component {0})")]
    EtaSumNonzero(f64),
    #[error("initial state has the wrong shape: {0}")]
    InitialShape(&'static str),
    #[error("Slater condition fails for the box sets (segment starting at t = {time})")]
    SlaterFails { time: f64 },
    #[error("step h = {step} exceeds the stability limit {limit} = 1/(k2 |L|)")]
    StepTooLarge { step: f64, limit: f64 },
    #[error("step h = {step} exceeds the linearised stability limit {limit}")]
    StepUnstable { step: f64, limit: f64 },
    #[error("integrator settings invalid: {0}")]
    Integrator(&'static str),
    #[error("event {index}: {reason}")]
    BadEvent { index: usize, reason: &'static str },
}

/// Largest explicit-Euler step, scaled by [`STEP_SAFETY`], for which the
/// dynamics linearised with each agent's curvature fixed at `ωᵢ` and at its
/// curvature proxy are stable. Neutral modes are ignored.
///
/// Per coordinate the linearisation is
/// `[[−C, I, 0], [−k₁I, −k₂L, k₁I], [k₃L, 0, −k₃L]]` with `C` diagonal; an
/// eigenvalue `a + bi` with `a < 0` admits `h < −2a/(a² + b²)`.
pub fn linear_step_limit<T: Scalar>(sc: &Scenario<T>) -> Option<T> {
    let agents = sc.problem.agent_count();
    let l = sc.graph.laplacian();
    let g = sc.gains;
    let (k1, k2, k3) = (g.k1.as_f64(), g.k2.as_f64(), g.k3.as_f64());
    let curvatures = [
        (0..agents).map(|i| sc.problem.cost(i).strong_convexity().as_f64()).collect::<Vec<_>>(),
        (0..agents).map(|i| sc.problem.cost(i).curvature_proxy().as_f64()).collect::<Vec<_>>(),
    ];
    let mut best = f64::INFINITY;
    for c in &curvatures {
        let j = nalgebra::DMatrix::<f64>::from_fn(3 * agents, 3 * agents, |r, col| {
            let (bi, i, bj, jj) = (r / agents, r % agents, col / agents, col % agents);
            let eye = if i == jj { 1.0 } else { 0.0 };
            let lij = l[(i, jj)].as_f64();
            match (bi, bj) {
                (0, 0) => -c[i] * eye,
                (0, 1) => eye,
                (1, 0) => -k1 * eye,
                (1, 1) => -k2 * lij,
                (1, 2) => k1 * eye,
                (2, 0) => k3 * lij,
                (2, 2) => -k3 * lij,
                _ => 0.0,
            }
        });
        for ev in j.complex_eigenvalues().iter() {
            let scale = 1e-10 * (1.0 + ev.norm());
            if ev.re < -scale {
                best = best.min(-2.0 * ev.re / ev.norm_sqr());
            }
        }
    }
    best.is_finite().then(|| T::lit(STEP_SAFETY * best))
}

/// Everything standing between the scenario and the convergence guarantees.
pub fn validate<T: Scalar>(sc: &Scenario<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    let p = &sc.problem;
    let (agents, n) = (p.agent_count(), p.dim());
    let f = |v: T| v.as_f64();

    if sc.graph.node_count() != agents {
        out.push(Violation::SizeMismatch { graph: sc.graph.node_count(), agents });
    }
    let spec = sc.graph.spectral_data();
    if let Err(e) = &spec {
        out.push(Violation::Graph(e.clone()));
    }

    let g = sc.gains;
    for (name, value) in [("k1", g.k1), ("k2", g.k2), ("k3", g.k3)] {
        if !(value > T::zero()) {
            out.push(Violation::NonPositiveGain { name, value: f(value) });
        }
    }

    if sc.algorithm == Algorithm::Smooth {
        for i in 0..agents {
            if p.cost(i).gradient_lipschitz().is_none() || !p.cost(i).is_smooth() {
                out.push(Violation::SmoothNeedsLipschitz { agent: i + 1 });
            }
            if !p.set(i).is_whole_space() {
                out.push(Violation::SmoothWithConstraints { agent: i + 1 });
            }
        }
    }

    if let Ok(spec) = &spec {
        if let Some(bounds) = sc.gain_bounds() {
            if !bounds.k1_ok(g.k1) {
                out.push(Violation::K1BelowBound { k1: f(g.k1), bound: f(bounds.k1_min), algorithm: sc.algorithm });
            }
            if !bounds.k2_ok(g.k1, g.k2) {
                out.push(Violation::K2BelowBound { k2: f(g.k2), bound: f(bounds.k2_min(g.k1)) });
            }
        }
        if g.k2 > T::zero() {
            let limit = T::lit(2.0 * STEP_SAFETY) / (g.k2 * spec.laplacian_norm);
            if sc.integrator.step >= limit {
                out.push(Violation::StepTooLarge { step: f(sc.integrator.step), limit: f(limit) });
            }
        }
        if agents == spec.node_count() && g.k1 > T::zero() && g.k2 > T::zero() && g.k3 > T::zero() {
            if let Some(limit) = linear_step_limit(sc) {
                if sc.integrator.step >= limit {
                    out.push(Violation::StepUnstable { step: f(sc.integrator.step), limit: f(limit) });
                }
            }
        }
    }

    let it = &sc.integrator;
    if !(it.step > T::zero()) {
        out.push(Violation::Integrator("step h must be positive"));
    }
    if !(it.horizon >= T::zero()) {
        out.push(Violation::Integrator("horizon T must be nonnegative"));
    }
    if it.record_every == 0 {
        out.push(Violation::Integrator("record_every must be at least 1"));
    }

    let shape_ok = |m: &Matrix<T>| m.rows() == agents && m.cols() == n;
    if !shape_ok(&sc.x0) {
        out.push(Violation::InitialShape("x0"));
    } else {
        for i in 0..agents {
            if let Ok(dist) = p.set(i).distance(sc.x0.row(i)) {
                if dist > T::lit(INITIAL_TOL) {
                    out.push(Violation::InfeasibleStart { agent: i + 1, distance: f(dist) });
                }
            }
        }
    }
    if !shape_ok(&sc.mu0) {
        out.push(Violation::InitialShape("mu0"));
    }
    if !shape_ok(&sc.eta0) {
        out.push(Violation::InitialShape("eta0"));
    } else {
        let s = norm_inf(&sc.eta0.column_sums());
        if s > T::lit(INITIAL_TOL) {
            out.push(Violation::EtaSumNonzero(f(s)));
        }
    }

    for (index, e) in sc.events.iter().enumerate() {
        if e.agent >= agents {
            out.push(Violation::BadEvent { index: index + 1, reason: "agent out of range" });
        }
        if e.resource.len() != n {
            out.push(Violation::BadEvent { index: index + 1, reason: "resource has the wrong dimension" });
        }
        if !(e.time >= T::zero() && e.time <= it.horizon) {
            out.push(Violation::BadEvent { index: index + 1, reason: "time outside [0, T]" });
        }
    }

    for (time, d) in sc.resource_segments() {
        if let Ok(seg) = p.with_resources(d) {
            if seg.slater_holds() == Some(false) {
                out.push(Violation::SlaterFails { time: f(time) });
            }
        }
    }
    out
}
