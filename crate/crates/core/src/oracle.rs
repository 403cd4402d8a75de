//! Centralised reference solvers for the allocation problem.
//!
//! [`solve`] runs dual ascent with an inner projected-subgradient solve per
//! agent. [`solve_separable_bisection`] handles coordinate-separable costs on
//! boxes by bisecting on each multiplier coordinate. Neither touches the
//! network dynamics.

use rand::Rng;
use thiserror::Error;

use crate::costs::{CostError, CostFunction};
use crate::linalg::{self, Matrix};
use crate::model::Problem;
use crate::scalar::Scalar;
use crate::sets::{ConvexSet, SetError};

const MAX_OUTER: usize = 200_000;
const MAX_INNER: usize = 200_000;
const BISECTION_ROUNDS: usize = 200;
/// Largest magnitude explored when bracketing an unbounded 1-D search.
const BRACKET_CAP: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("problem is infeasible: {0}")]
    InfeasibleProblem(String),
    #[error("no convergence after {iterations} iterations (mismatch {mismatch})")]
    MaxIterations { iterations: usize, mismatch: f64 },
    #[error("bisection needs separable costs on boxes: {0}")]
    NotSeparable(String),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Set(#[from] SetError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution<T> {
    pub x_star: Matrix<T>,
    /// Common multiplier.
    pub mu_star: Vec<T>,
    pub dual_gap_estimate: T,
    pub iterations: usize,
    /// Set when the total resource lies outside the reachable range and was
    /// replaced by the nearest attainable total (bisection only).
    pub resource_clamped: bool,
}

impl<T: Scalar> OracleSolution<T> {
    /// The multiplier replicated across `agents` rows.
    pub fn mu_matrix(&self, agents: usize) -> Matrix<T> {
        Matrix::from_fn(agents, self.mu_star.len(), |_, k| self.mu_star[k])
    }
}

/// `argmin_{x ∈ Ω} f(x) − μᵀx` by projected subgradient steps, warm
/// started at `x`. The step starts at `1/curvature` and halves whenever
/// consecutive moves point against each other.
fn inner_argmin<T: Scalar>(
    f: &dyn CostFunction<T>,
    set: &ConvexSet<T>,
    mu: &[T],
    x: &mut Vec<T>,
    tol: T,
) -> Result<usize, OracleError> {
    let omega = f.strong_convexity().max(T::epsilon());
    let mut alpha = T::one() / f.curvature_proxy().max(T::epsilon());
    *x = set.project(x)?;
    let mut prev: Option<Vec<T>> = None;
    for it in 1..=MAX_INNER {
        let g = f.subgradient(x)?;
        let trial: Vec<T> = x.iter().zip(&g).zip(mu).map(|((x, g), m)| *x - alpha * (*g - *m)).collect();
        let next = set.project(&trial)?;
        let delta = linalg::sub(&next, x);
        let size = linalg::norm(&delta);
        let oscillating = prev.as_ref().is_some_and(|p| linalg::dot(p, &delta) < T::zero());
        if size <= tol * (alpha * omega).min(T::one()) || (oscillating && size <= tol) {
            *x = next;
            return Ok(it);
        }
        if oscillating {
            alpha = alpha / T::lit(2.0);
            prev = None;
            continue;
        }
        *x = next;
        prev = Some(delta);
    }
    Err(OracleError::MaxIterations { iterations: MAX_INNER, mismatch: f64::NAN })
}

/// Dual ascent `μ ← μ − s(Σ xᵢ(μ) − Σ dᵢ)` with `s = ω/N`, the inverse
/// Lipschitz constant of the dual gradient. Stops when the mismatch norm is
/// at most `tol`.
pub fn solve<T: Scalar>(problem: &Problem<T>, tol: T) -> Result<OracleSolution<T>, OracleError> {
    if problem.slater_holds() == Some(false) {
        return Err(OracleError::InfeasibleProblem("total resource is not strictly inside the capacity range".into()));
    }
    let (agents, n) = (problem.agent_count(), problem.dim());
    let count = T::from_usize(agents).unwrap_or_else(T::one);
    let step = problem.omega() / count;
    let inner_tol = tol / (T::lit(10.0) * count);
    let total = problem.total_resource();
    let mut mu = vec![T::zero(); n];
    let mut xs: Vec<Vec<T>> = problem.resources().iter_rows().map(|r| r.to_vec()).collect();
    let mut gap = vec![T::zero(); n];
    for outer in 1..=MAX_OUTER {
        for (i, x) in xs.iter_mut().enumerate() {
            inner_argmin(problem.cost(i), problem.set(i), &mu, x, inner_tol)?;
        }
        for k in 0..n {
            gap[k] = xs.iter().map(|x| x[k]).sum::<T>() - total[k];
        }
        if linalg::norm(&gap) <= tol {
            return Ok(OracleSolution {
                x_star: Matrix::from_rows(&xs),
                dual_gap_estimate: linalg::dot(&mu, &gap).abs(),
                mu_star: mu,
                iterations: outer,
                resource_clamped: false,
            });
        }
        for k in 0..n {
            mu[k] = mu[k] - step * gap[k];
        }
    }
    Err(OracleError::MaxIterations { iterations: MAX_OUTER, mismatch: linalg::norm(&gap).as_f64() })
}

/// One coordinate of one agent: bounds and the subdifferential interval of
/// the cost in that coordinate.
struct Coordinate<'a, T: Scalar> {
    cost: &'a dyn CostFunction<T>,
    lower: T,
    upper: T,
    dim: usize,
    k: usize,
}

impl<T: Scalar> Coordinate<'_, T> {
    fn interval(&self, t: T) -> Result<(T, T), OracleError> {
        let mut x = vec![T::zero(); self.dim];
        x[self.k] = t;
        let iv = self.cost.separable_subdifferential(&x)?.ok_or_else(|| OracleError::NotSeparable("cost".into()))?;
        Ok(iv[self.k])
    }

    /// `argmin_{t ∈ [lower, upper]} φ(t) − m t`, located where the
    /// subdifferential interval first reaches `m`.
    fn argmin(&self, m: T) -> Result<T, OracleError> {
        let cap = T::lit(BRACKET_CAP);
        let (mut lo, mut hi) = (self.lower.max(-cap), self.upper.min(cap));
        if self.interval(lo)?.1 >= m {
            return Ok(lo);
        }
        if self.interval(hi)?.0 <= m {
            return Ok(hi);
        }
        for _ in 0..BISECTION_ROUNDS {
            let mid = lo + (hi - lo) / T::lit(2.0);
            if mid <= lo || mid >= hi {
                break;
            }
            let (a, b) = self.interval(mid)?;
            if b < m {
                lo = mid;
            } else if a > m {
                hi = mid;
            } else {
                return Ok(mid);
            }
        }
        Ok(lo + (hi - lo) / T::lit(2.0))
    }
}

fn bisect_monotone<T: Scalar>(
    mut below: T,
    mut above: T,
    mut holds: impl FnMut(T) -> Result<bool, OracleError>,
    rounds: &mut usize,
) -> Result<T, OracleError> {
    for _ in 0..BISECTION_ROUNDS {
        let mid = below + (above - below) / T::lit(2.0);
        if mid <= below || mid >= above {
            break;
        }
        *rounds += 1;
        if holds(mid)? {
            above = mid;
        } else {
            below = mid;
        }
    }
    Ok(below + (above - below) / T::lit(2.0))
}

/// Per coordinate, bisection on the multiplier for `Σ xᵢ(μ) = Σ dᵢ`.
///
/// When the set of multipliers that clear the coordinate is an interval the
/// midpoint is reported. Totals outside the reachable range are clamped to
/// it and the boundary multiplier is reported.
pub fn solve_separable_bisection<T: Scalar>(problem: &Problem<T>, tol: T) -> Result<OracleSolution<T>, OracleError> {
    let (agents, n) = (problem.agent_count(), problem.dim());
    let mut bounds = Vec::with_capacity(agents);
    for i in 0..agents {
        let (lower, upper) = match problem.set(i) {
            ConvexSet::Box { lower, upper } => (lower.clone(), upper.clone()),
            ConvexSet::WholeSpace(_) => (vec![T::neg_infinity(); n], vec![T::infinity(); n]),
            other => return Err(OracleError::NotSeparable(format!("agent {} has set {other:?}", i + 1))),
        };
        let probe = problem.set(i).project(problem.resources().row(i))?;
        if problem.cost(i).separable_subdifferential(&probe)?.is_none() {
            return Err(OracleError::NotSeparable(format!("agent {} cost is not coordinate-separable", i + 1)));
        }
        bounds.push((lower, upper));
    }
    let total = problem.total_resource();
    let slack = tol * T::lit(1e-3);
    let cap = T::lit(BRACKET_CAP);
    let mut x_star = Matrix::zeros(agents, n);
    let mut mu_star = vec![T::zero(); n];
    let mut rounds = 0;
    let mut clamped = false;
    for k in 0..n {
        let coords: Vec<Coordinate<'_, T>> = (0..agents)
            .map(|i| Coordinate { cost: problem.cost(i), lower: bounds[i].0[k], upper: bounds[i].1[k], dim: n, k })
            .collect();
        let supply = |m: T| -> Result<T, OracleError> {
            let mut s = T::zero();
            for c in &coords {
                s = s + c.argmin(m)?;
            }
            Ok(s)
        };
        let reach_lo: T = coords.iter().map(|c| c.lower.max(-cap)).sum();
        let reach_hi: T = coords.iter().map(|c| c.upper.min(cap)).sum();
        let demand = total[k].max(reach_lo).min(reach_hi);
        clamped |= demand != total[k];

        let mut lo = -T::one();
        let mut hi = T::one();
        while supply(lo)? >= demand - slack && lo > -cap {
            lo = lo * T::lit(2.0);
        }
        while supply(hi)? <= demand + slack && hi < cap {
            hi = hi * T::lit(2.0);
        }
        let first = bisect_monotone(lo, hi, |m| Ok(supply(m)? >= demand - slack), &mut rounds)?;
        let last = bisect_monotone(lo, hi, |m| Ok(supply(m)? > demand + slack), &mut rounds)?;
        let m = if total[k] >= reach_hi {
            first
        } else if total[k] <= reach_lo {
            last
        } else {
            first + (last - first) / T::lit(2.0)
        };
        mu_star[k] = m;
        for (i, c) in coords.iter().enumerate() {
            x_star[(i, k)] = c.argmin(m)?;
        }
    }
    let gap: Vec<T> = x_star.column_sums().iter().zip(&total).map(|(a, b)| *a - *b).collect();
    Ok(OracleSolution {
        dual_gap_estimate: linalg::dot(&mu_star, &gap).abs(),
        x_star,
        mu_star,
        iterations: rounds,
        resource_clamped: clamped,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationReport<T> {
    pub trials: usize,
    /// Trials that found a feasible move.
    pub feasible: usize,
    /// Smallest observed `Σf(x* + δ) − Σf(x*)`.
    pub min_increase: T,
}

/// Compares the objective at `x_star` with random feasible moves of norm at
/// most `radius` that preserve `Σ xᵢ`. Each move shifts mass between two
/// agents in one coordinate, halved until both stay feasible.
pub fn perturbation_check<T: Scalar, R: Rng + ?Sized>(
    problem: &Problem<T>,
    x_star: &Matrix<T>,
    trials: usize,
    radius: T,
    rng: &mut R,
) -> Result<PerturbationReport<T>, OracleError> {
    let (agents, n) = (problem.agent_count(), problem.dim());
    let base = problem.total_cost(x_star);
    let mut report = PerturbationReport { trials, feasible: 0, min_increase: T::infinity() };
    if agents < 2 {
        return Ok(report);
    }
    for _ in 0..trials {
        let mut x = x_star.clone();
        let mut moved = false;
        for _ in 0..3 {
            let i = rng.gen_range(0..agents);
            let j = (i + rng.gen_range(1..agents)) % agents;
            let k = rng.gen_range(0..n);
            let sign = if rng.gen_bool(0.5) { T::one() } else { -T::one() };
            let mut t = sign * radius * T::lit(rng.gen_range(0.05..1.0)) / T::lit(3.0 * 2f64.sqrt());
            for _ in 0..50 {
                let mut xi = x.row(i).to_vec();
                let mut xj = x.row(j).to_vec();
                xi[k] = xi[k] + t;
                xj[k] = xj[k] - t;
                if problem.set(i).contains(&xi, T::zero())? && problem.set(j).contains(&xj, T::zero())? {
                    x.row_mut(i).copy_from_slice(&xi);
                    x.row_mut(j).copy_from_slice(&xj);
                    moved = true;
                    break;
                }
                t = t / T::lit(2.0);
            }
        }
        if moved {
            report.feasible += 1;
            report.min_increase = report.min_increase.min(problem.total_cost(&x) - base);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::QuadraticCost;
    use std::sync::Arc;

    fn scalar(fs: Vec<Arc<dyn CostFunction<f64>>>, sets: Vec<ConvexSet<f64>>, d: &[f64]) -> Problem<f64> {
        Problem::new(fs, sets, Matrix::from_fn(d.len(), 1, |i, _| d[i])).unwrap()
    }

    fn sq(b: f64) -> Arc<dyn CostFunction<f64>> {
        // (x − b)² = x² − 2bx + b²; the constant does not matter here
        Arc::new(QuadraticCost::diagonal(vec![1.0], vec![-2.0 * b]).unwrap())
    }

    #[test]
    fn hand_instance() {
        let p = scalar(vec![sq(0.0), sq(1.0)], vec![ConvexSet::WholeSpace(1); 2], &[1.0, 1.0]);
        let a = solve(&p, 1e-11).unwrap();
        let b = solve_separable_bisection(&p, 1e-11).unwrap();
        for s in [&a, &b] {
            assert!((s.x_star[(0, 0)] - 0.5).abs() < 1e-8, "{s:?}");
            assert!((s.x_star[(1, 0)] - 1.5).abs() < 1e-8);
            assert!((s.mu_star[0] - 1.0).abs() < 1e-8);
        }
    }

    /// With the second cost centred at 2 the unconstrained minimisers
    /// already clear the resource, so the multiplier is 0.
    #[test]
    fn hand_instance_shifted() {
        let p = scalar(vec![sq(0.0), sq(2.0)], vec![ConvexSet::WholeSpace(1); 2], &[1.0, 1.0]);
        let s = solve(&p, 1e-11).unwrap();
        assert!(s.x_star[(0, 0)].abs() < 1e-9 && (s.x_star[(1, 0)] - 2.0).abs() < 1e-9);
        assert!(s.mu_star[0].abs() < 1e-9);
    }

    #[test]
    fn symmetric_instance_splits_evenly() {
        let sets = vec![ConvexSet::interval(-10.0, 10.0).unwrap(); 4];
        let p = scalar(vec![sq(1.0), sq(1.0), sq(1.0), sq(1.0)], sets, &[3.0, -1.0, 0.5, 2.5]);
        let s = solve(&p, 1e-10).unwrap();
        for i in 0..4 {
            assert!((s.x_star[(i, 0)] - 1.25).abs() < 1e-9);
        }
    }

    #[test]
    fn clamped_box() {
        let p = scalar(vec![sq(0.0)], vec![ConvexSet::interval(0.0, 1.0).unwrap()], &[5.0]);
        assert!(matches!(solve(&p, 1e-8), Err(OracleError::InfeasibleProblem(_))));
        let s = solve_separable_bisection(&p, 1e-8).unwrap();
        assert!((s.x_star[(0, 0)] - 1.0).abs() < 1e-9);
        assert!(s.mu_star[0] >= 2.0 - 1e-9);
        assert!(s.resource_clamped);
    }

    /// `|x|`, which has no strong convexity; only bisection handles it.
    #[derive(Debug)]
    struct Abs;

    impl CostFunction<f64> for Abs {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, x: &[f64]) -> Result<f64, CostError> {
            Ok(x[0].abs())
        }
        fn subgradient(&self, x: &[f64]) -> Result<Vec<f64>, CostError> {
            Ok(vec![if x[0] > 0.0 { 1.0 } else if x[0] < 0.0 { -1.0 } else { 0.0 }])
        }
        fn is_smooth(&self) -> bool {
            false
        }
        fn strong_convexity(&self) -> f64 {
            0.0
        }
        fn gradient_lipschitz(&self) -> Option<f64> {
            None
        }
        fn separable_subdifferential(&self, x: &[f64]) -> Result<Option<Vec<(f64, f64)>>, CostError> {
            let iv = if x[0] > 0.0 { (1.0, 1.0) } else if x[0] < 0.0 { (-1.0, -1.0) } else { (-1.0, 1.0) };
            Ok(Some(vec![iv]))
        }
    }

    #[test]
    fn kink_optimum() {
        let p = scalar(vec![Arc::new(Abs)], vec![ConvexSet::WholeSpace(1)], &[0.0]);
        let s = solve_separable_bisection(&p, 1e-9).unwrap();
        assert_eq!(s.x_star[(0, 0)], 0.0);
        assert!(s.mu_star[0].abs() <= 1.0);
    }

    #[test]
    fn ball_set_goes_through_dual_ascent() {
        let f: Arc<dyn CostFunction<f64>> = Arc::new(QuadraticCost::diagonal(vec![1.0, 1.0], vec![0.0, 0.0]).unwrap());
        let sets = vec![ConvexSet::ball(vec![0.0, 0.0], 1.0).unwrap(), ConvexSet::WholeSpace(2)];
        let p = Problem::new(vec![f.clone(), f], sets, Matrix::from_rows(&[[2.0, 0.0], [2.0, 0.0]])).unwrap();
        assert!(matches!(solve_separable_bisection(&p, 1e-8), Err(OracleError::NotSeparable(_))));
        let s = solve(&p, 1e-9).unwrap();
        // agent 1 saturates its ball at (1, 0); agent 2 takes the rest
        assert!((s.x_star[(0, 0)] - 1.0).abs() < 1e-6);
        assert!((s.x_star[(1, 0)] - 3.0).abs() < 1e-6);
        assert!((s.mu_star[0] - 6.0).abs() < 1e-5);
    }
}
