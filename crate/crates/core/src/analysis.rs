//! Optimality certificates, trajectory diagnostics, Lyapunov functions and
//! rate estimation.

use thiserror::Error;

use crate::costs::{interval_distance, CostError};
use crate::dynamics::{NetworkState, Trajectory};
use crate::graph::SpectralData;
use crate::linalg::{self, Matrix};
use crate::model::{Gains, Problem};
use crate::scalar::Scalar;
use crate::sets::{ConvexSet, SetError, ACTIVE_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("agent {agent} is outside its constraint set (distance {distance})")]
    InfeasiblePoint { agent: usize, distance: f64 },
    #[error("dimension mismatch in {0}")]
    DimensionMismatch(&'static str),
    #[error("gain too small: (omega+1)/omega * k1 = {0} must exceed 1")]
    GainTooSmall(f64),
    #[error("trajectory is not converging: {0}")]
    NotConverging(String),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Set(#[from] SetError),
}

/// `max_{i,j} ‖μᵢ − μⱼ‖` over the rows of `mu`.
pub fn consensus_error<T: Scalar>(mu: &Matrix<T>) -> T {
    let mut worst = T::zero();
    for i in 0..mu.rows() {
        for j in i + 1..mu.rows() {
            worst = worst.max(linalg::distance(mu.row(i), mu.row(j)));
        }
    }
    worst
}

/// `Σ xᵢ − Σ dᵢ`.
pub fn mismatch<T: Scalar>(x: &Matrix<T>, d: &Matrix<T>) -> Vec<T> {
    x.column_sums().iter().zip(d.column_sums()).map(|(a, b)| *a - b).collect()
}

/// Per-sample mismatch against the resources in effect at that sample.
pub fn mismatch_series<T: Scalar>(traj: &Trajectory<T>) -> Vec<Vec<T>> {
    traj.states.iter().zip(&traj.resources).map(|(s, d)| mismatch(&s.x, d)).collect()
}

/// `max_{i,j} ‖gᵢ(xᵢ) − gⱼ(xⱼ)‖` for the subgradient selections.
pub fn gradient_spread<T: Scalar>(problem: &Problem<T>, x: &Matrix<T>) -> Result<T, AnalysisError> {
    let grads = (0..problem.agent_count())
        .map(|i| problem.cost(i).subgradient(x.row(i)))
        .collect::<Result<Vec<_>, _>>()?;
    let g = Matrix::from_rows(&grads);
    Ok(consensus_error(&g))
}

#[derive(Clone, Debug, PartialEq)]
pub struct KktReport<T> {
    /// Stationarity residual per agent against the mean multiplier.
    pub stationarity: Vec<T>,
    /// Stationarity residual per agent against its own multiplier.
    pub stationarity_local: Vec<T>,
    pub mismatch: Vec<T>,
    pub consensus_error: T,
    pub mean_mu: Vec<T>,
    pub tolerance: T,
    pub certified: bool,
}

impl<T: Scalar> KktReport<T> {
    pub fn max_stationarity(&self) -> T {
        self.stationarity.iter().copied().fold(T::zero(), T::max)
    }

    pub fn mismatch_norm(&self) -> T {
        linalg::norm(&self.mismatch)
    }

    /// Largest of the quantities the certificate compares with the tolerance.
    pub fn worst(&self) -> T {
        self.max_stationarity().max(self.mismatch_norm()).max(self.consensus_error)
    }
}

/// Distance from `m` to `∂f(x) + N_Ω(x)`, treating bounds within `active`
/// of `x` as binding.
pub fn stationarity_residual<T: Scalar>(
    cost: &dyn crate::costs::CostFunction<T>,
    set: &ConvexSet<T>,
    x: &[T],
    m: &[T],
    active: T,
) -> Result<T, AnalysisError> {
    match set {
        ConvexSet::WholeSpace(_) => Ok(cost.subdifferential_residual(x, m)?),
        ConvexSet::Box { lower, upper } => {
            let intervals = match cost.separable_subdifferential(x)? {
                Some(iv) => iv,
                None => cost.subgradient(x)?.into_iter().map(|g| (g, g)).collect(),
            };
            let mut sq = T::zero();
            for k in 0..x.len() {
                let (lo, hi) = intervals[k];
                let at_low = x[k] - lower[k] <= active;
                let at_high = upper[k] - x[k] <= active;
                let r = match (at_low, at_high) {
                    (true, true) => T::zero(),
                    (true, false) => (m[k] - hi).max(T::zero()),
                    (false, true) => (lo - m[k]).max(T::zero()),
                    (false, false) => interval_distance(m[k], lo, hi),
                };
                sq = sq + r * r;
            }
            Ok(sq.sqrt())
        }
        _ => {
            let g = cost.subgradient(x)?;
            let z: Vec<T> = m.iter().zip(&g).map(|(a, b)| *a - *b).collect();
            Ok(set.normal_cone_distance(x, &z)?)
        }
    }
}

/// Checks `0 ∈ ∂fᵢ(xᵢ) − μ̄ + N_Ωᵢ(xᵢ)` for every agent and `Σ xᵢ = Σ dᵢ`.
///
/// Bounds within `max(tol, 1e-9)` count as active.
pub fn kkt_check<T: Scalar>(problem: &Problem<T>, x: &Matrix<T>, mu: &Matrix<T>, tol: T) -> Result<KktReport<T>, AnalysisError> {
    let (agents, n) = (problem.agent_count(), problem.dim());
    if x.rows() != agents || x.cols() != n || mu.rows() != agents || mu.cols() != n {
        return Err(AnalysisError::DimensionMismatch("kkt_check"));
    }
    let active = tol.max(T::lit(ACTIVE_TOL));
    let mean = {
        let s = mu.column_sums();
        let count = T::from_usize(agents).unwrap_or_else(T::one);
        s.into_iter().map(|v| v / count).collect::<Vec<_>>()
    };
    let mut stationarity = Vec::with_capacity(agents);
    let mut local = Vec::with_capacity(agents);
    for i in 0..agents {
        let set = problem.set(i);
        let dist = set.distance(x.row(i))?;
        if dist > active {
            return Err(AnalysisError::InfeasiblePoint { agent: i + 1, distance: dist.as_f64() });
        }
        stationarity.push(stationarity_residual(problem.cost(i), set, x.row(i), &mean, active)?);
        local.push(stationarity_residual(problem.cost(i), set, x.row(i), mu.row(i), active)?);
    }
    let mut report = KktReport {
        stationarity,
        stationarity_local: local,
        mismatch: mismatch(x, problem.resources()),
        consensus_error: consensus_error(mu),
        mean_mu: mean,
        tolerance: tol,
        certified: false,
    };
    report.certified = report.worst() <= tol;
    Ok(report)
}

/// Equilibrium of the network dynamics for resources `d`:
/// `x*`, replicated `μ*`, and `η* = x* − d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Equilibrium<T> {
    pub x: Matrix<T>,
    pub mu: Vec<T>,
    pub eta: Matrix<T>,
}

impl<T: Scalar> Equilibrium<T> {
    pub fn new(x: Matrix<T>, mu: Vec<T>, d: &Matrix<T>) -> Self {
        let eta = x.sub(d);
        Self { x, mu, eta }
    }

    pub fn mu_matrix(&self) -> Matrix<T> {
        Matrix::from_fn(self.x.rows(), self.x.cols(), |_, k| self.mu[k])
    }

    pub fn as_state(&self, t: T) -> NetworkState<T> {
        NetworkState { t, x: self.x.clone(), mu: self.mu_matrix(), eta: self.eta.clone() }
    }

    /// Euclidean norm of `(x, μ, η) − equilibrium`.
    pub fn error(&self, state: &NetworkState<T>) -> T {
        let (ex, em, ee) = (state.x.sub(&self.x).norm(), state.mu.sub(&self.mu_matrix()).norm(), state.eta.sub(&self.eta).norm());
        (ex * ex + em * em + ee * ee).sqrt()
    }
}

/// Squared norms of the `r` and `R` components of `basisᵀ·m`, summed over
/// the columns of `m`, plus the `r` components themselves.
struct Split<T> {
    first: Vec<T>,
    first_sq: T,
    rest_sq: T,
}

fn split<T: Scalar>(basis: &Matrix<T>, m: &Matrix<T>) -> Split<T> {
    let c = basis.transpose().matmul(m);
    let first = c.row(0).to_vec();
    let first_sq = linalg::dot(&first, &first);
    let rest_sq = c.iter_rows().skip(1).map(|r| linalg::dot(r, r)).sum();
    Split { first, first_sq, rest_sq }
}

fn deviations<T: Scalar>(
    state: &NetworkState<T>,
    eq: &Equilibrium<T>,
    spec: &SpectralData<T>,
) -> Result<(Split<T>, Split<T>, Split<T>), AnalysisError> {
    let shape = (eq.x.rows(), eq.x.cols());
    let ok = |m: &Matrix<T>| (m.rows(), m.cols()) == shape;
    if !ok(&state.x) || !ok(&state.mu) || !ok(&state.eta) || spec.node_count() != shape.0 || eq.mu.len() != shape.1 {
        return Err(AnalysisError::DimensionMismatch("lyapunov"));
    }
    let basis = spec.basis();
    Ok((
        split(&basis, &state.x.sub(&eq.x)),
        split(&basis, &state.mu.sub(&eq.mu_matrix())),
        split(&basis, &state.eta.sub(&eq.eta)),
    ))
}

/// `k₁/2 ‖ε‖² + ½‖ξ‖² + 1/(2k₃) ‖ζ₂‖²` in the coordinates
/// `(ε, ξ, ζ) = [r R]ᵀ(x − x*, μ − μ*, η − η*)`.
pub fn lyapunov_v1<T: Scalar>(
    state: &NetworkState<T>,
    eq: &Equilibrium<T>,
    spec: &SpectralData<T>,
    gains: &Gains<T>,
) -> Result<T, AnalysisError> {
    let (e, x, z) = deviations(state, eq, spec)?;
    let half = T::lit(0.5);
    Ok(half * gains.k1 * (e.first_sq + e.rest_sq) + half * (x.first_sq + x.rest_sq) + half / gains.k3 * z.rest_sq)
}

/// With `c = (ω+1)/ω`:
/// `½(c k₁ − 1)‖ε₁‖² + 1/(2ω)‖ξ₁‖² + c/2 (‖ε₂‖² + ‖ξ₂‖² + ‖ζ₂‖²) + ½‖ε₁ − ξ₁‖²`.
pub fn lyapunov_v2<T: Scalar>(
    state: &NetworkState<T>,
    eq: &Equilibrium<T>,
    spec: &SpectralData<T>,
    gains: &Gains<T>,
    omega: T,
) -> Result<T, AnalysisError> {
    let c = (omega + T::one()) / omega;
    if c * gains.k1 <= T::one() {
        return Err(AnalysisError::GainTooSmall((c * gains.k1).as_f64()));
    }
    let (e, x, z) = deviations(state, eq, spec)?;
    let half = T::lit(0.5);
    let cross: T = e.first.iter().zip(&x.first).map(|(a, b)| (*a - *b) * (*a - *b)).sum();
    Ok(half * (c * gains.k1 - T::one()) * e.first_sq
        + half / omega * x.first_sq
        + half * c * (e.rest_sq + x.rest_sq + z.rest_sq)
        + half * cross)
}

/// `ψ` for [`lyapunov_v2`]: the stacked `(ε, ξ, ζ₂)` deviation, as a norm.
pub fn psi_norm<T: Scalar>(state: &NetworkState<T>, eq: &Equilibrium<T>, spec: &SpectralData<T>) -> Result<T, AnalysisError> {
    let (e, x, z) = deviations(state, eq, spec)?;
    Ok((e.first_sq + e.rest_sq + x.first_sq + x.rest_sq + z.rest_sq).sqrt())
}

/// Smallest and largest eigenvalues of the matrix `Φ` with `V₂ = ½ψᵀΦψ`.
///
/// `Φ` has eigenvalue `c` on every block except the `(ε₁, ξ₁)` pair, which
/// contributes the eigenvalues of `[[c k₁, −1], [−1, c]]`.
pub fn phi_extremes<T: Scalar>(gains: &Gains<T>, omega: T) -> (T, T) {
    let c = (omega + T::one()) / omega;
    let two = T::lit(2.0);
    let mean = (c * gains.k1 + c) / two;
    let half_gap = (c * gains.k1 - c) / two;
    let rad = (half_gap * half_gap + T::one()).sqrt();
    ((mean - rad).min(c), (mean + rad).max(c))
}

/// Guaranteed rate `ρ/μ_max` for the smooth algorithm, with
/// `ρ = min{ρ₁, ρ₂, ρ₃, ½}`. `None` when `ρ ≤ 0`.
pub fn theoretical_rate<T: Scalar>(spec: &SpectralData<T>, gains: &Gains<T>, omega: T, theta: T) -> Option<T> {
    let (l2, lam) = (spec.laplacian_norm * spec.laplacian_norm, spec.lambda2_hat);
    let c = (omega + T::one()) / omega;
    let rho1 = gains.k1 * omega - l2 * c / lam - theta * theta / T::lit(2.0);
    let rho2 = c * (gains.k2 * lam - gains.k1 * gains.k1 / lam);
    let rho3 = lam * c / T::lit(2.0);
    let rho = rho1.min(rho2).min(rho3).min(T::lit(0.5));
    if rho <= T::zero() {
        return None;
    }
    let (_, mu_max) = phi_extremes(gains, omega);
    Some(rho / mu_max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateEstimate<T> {
    /// Fitted slope of `log‖state − equilibrium‖` against time.
    pub slope: T,
    pub r_squared: T,
    pub theory_rate: Option<T>,
    /// Time span of the samples used in the fit.
    pub window: (T, T),
    pub points: usize,
}

/// `(t, ‖state(t) − equilibrium‖)` for every sample.
pub fn error_series<T: Scalar>(states: &[NetworkState<T>], eq: &Equilibrium<T>) -> Vec<(T, T)> {
    states.iter().map(|s| (s.t, eq.error(s))).collect()
}

/// Least-squares fit of `log e(t)` over the samples with
/// `e ∈ [1e-8, e(0)/10]`, taken from the first entry to the last in range.
pub fn estimate_rate_series<T: Scalar>(series: &[(T, T)]) -> Result<RateEstimate<T>, AnalysisError> {
    let (e0, e_end) = match (series.first(), series.last()) {
        (Some(a), Some(b)) => (a.1, b.1),
        _ => return Err(AnalysisError::NotConverging("empty trajectory".into())),
    };
    if !(e_end < e0) {
        return Err(AnalysisError::NotConverging(format!("final error {e_end} is not below initial error {e0}")));
    }
    let (floor, ceiling) = (T::lit(1e-8), e0 / T::lit(10.0));
    let window: Vec<(f64, f64)> = series
        .iter()
        .filter(|(_, e)| *e >= floor && *e <= ceiling)
        .map(|(t, e)| (t.as_f64(), e.as_f64().ln()))
        .collect();
    if window.len() < 3 {
        return Err(AnalysisError::NotConverging(format!("only {} samples in the fit window", window.len())));
    }
    let count = window.len() as f64;
    let mt = window.iter().map(|p| p.0).sum::<f64>() / count;
    let my = window.iter().map(|p| p.1).sum::<f64>() / count;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for (t, y) in &window {
        stt += (t - mt) * (t - mt);
        sty += (t - mt) * (y - my);
        syy += (y - my) * (y - my);
    }
    if stt == 0.0 {
        return Err(AnalysisError::NotConverging("fit window has zero length".into()));
    }
    let slope = sty / stt;
    let r2 = if syy == 0.0 { 1.0 } else { (sty * sty / (stt * syy)).clamp(0.0, 1.0) };
    Ok(RateEstimate {
        slope: T::lit(slope),
        r_squared: T::lit(r2),
        theory_rate: None,
        window: (T::lit(window[0].0), T::lit(window[window.len() - 1].0)),
        points: window.len(),
    })
}

pub fn estimate_rate<T: Scalar>(traj: &Trajectory<T>, eq: &Equilibrium<T>) -> Result<RateEstimate<T>, AnalysisError> {
    estimate_rate_series(&error_series(&traj.states, eq))
}

/// Some `t₀` in `[start, end]` with a sample at `2t₀` whose log error is at
/// least `drop` below the error at `t₀`.
pub fn log_drop_witness<T: Scalar>(series: &[(T, T)], window: (T, T), drop: T) -> Option<T> {
    for (i, &(t0, e0)) in series.iter().enumerate() {
        if t0 < window.0 || t0 > window.1 || t0 <= T::zero() || e0 <= T::zero() {
            continue;
        }
        let target = t0 + t0;
        let tol = (series.get(i + 1).map(|s| s.0).unwrap_or(t0) - t0).abs() * T::lit(1e-6);
        let later = series[i..].iter().find(|(t, _)| (*t - target).abs() <= tol.max(T::epsilon() * target));
        if let Some(&(_, e1)) = later {
            if e1 <= T::zero() || e1.ln() <= e0.ln() - drop {
                return Some(t0);
            }
        }
    }
    None
}
