//! Local cost functions with subgradient selections and convexity constants.

use std::fmt;

use thiserror::Error;

use crate::linalg::{self, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("dimension mismatch: cost has dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cost is not strongly convex: {0}")]
    NotStronglyConvex(String),
    #[error("invalid cost parameters: {0}")]
    InvalidParameters(String),
}

/// Convex local cost `fᵢ : Rⁿ → R`.
pub trait CostFunction<T: Scalar>: fmt::Debug + Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[T]) -> Result<T, CostError>;

    /// A fixed selection from `∂f(x)`.
    fn subgradient(&self, x: &[T]) -> Result<Vec<T>, CostError>;

    /// Whether `f` is differentiable everywhere.
    fn is_smooth(&self) -> bool;

    fn gradient(&self, x: &[T]) -> Result<Option<Vec<T>>, CostError> {
        if self.is_smooth() {
            self.subgradient(x).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Strong-convexity modulus `ω`.
    fn strong_convexity(&self) -> T;

    /// Lipschitz constant `θ` of the gradient, when one exists.
    fn gradient_lipschitz(&self) -> Option<T>;

    /// Curvature scale for step sizing; `θ` when known.
    fn curvature_proxy(&self) -> T {
        self.gradient_lipschitz().unwrap_or_else(|| self.strong_convexity())
    }

    /// For coordinate-separable costs, `∂f(x)` as a product of intervals
    /// `[left derivative, right derivative]`.
    fn separable_subdifferential(&self, _x: &[T]) -> Result<Option<Vec<(T, T)>>, CostError> {
        Ok(None)
    }

    /// Euclidean distance from `target` to `∂f(x)`.
    ///
    /// Exact for smooth and separable costs; otherwise measured against the
    /// selection, which bounds the true distance from above.
    fn subdifferential_residual(&self, x: &[T], target: &[T]) -> Result<T, CostError> {
        check_dim(self.dim(), target)?;
        if let Some(intervals) = self.separable_subdifferential(x)? {
            let sq: T = intervals
                .iter()
                .zip(target)
                .map(|((lo, hi), t)| {
                    let d = interval_distance(*t, *lo, *hi);
                    d * d
                })
                .sum();
            return Ok(sq.sqrt());
        }
        Ok(linalg::distance(&self.subgradient(x)?, target))
    }
}

pub(crate) fn check_dim<T>(expected: usize, x: &[T]) -> Result<(), CostError> {
    if x.len() == expected {
        Ok(())
    } else {
        Err(CostError::DimensionMismatch { expected, got: x.len() })
    }
}

pub(crate) fn interval_distance<T: Scalar>(t: T, lo: T, hi: T) -> T {
    if t < lo {
        lo - t
    } else if t > hi {
        t - hi
    } else {
        T::zero()
    }
}

/// Sign with `sgn(0) = 0`.
fn sgn0<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Generation cost `γp² + β|p − c| + α` on a scalar output `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct DispatchCost<T> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
    pub c: T,
}

impl<T: Scalar> DispatchCost<T> {
    pub fn new(alpha: T, beta: T, gamma: T, c: T) -> Result<Self, CostError> {
        if !(gamma > T::zero()) {
            return Err(CostError::NotStronglyConvex(format!("gamma = {gamma} must be positive")));
        }
        if !(beta >= T::zero()) {
            return Err(CostError::InvalidParameters(format!("beta = {beta} must be nonnegative")));
        }
        Ok(Self { alpha, beta, gamma, c })
    }
}

impl<T: Scalar> CostFunction<T> for DispatchCost<T> {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, x: &[T]) -> Result<T, CostError> {
        check_dim(1, x)?;
        let p = x[0];
        Ok(self.gamma * p * p + self.beta * (p - self.c).abs() + self.alpha)
    }

    fn subgradient(&self, x: &[T]) -> Result<Vec<T>, CostError> {
        check_dim(1, x)?;
        let p = x[0];
        Ok(vec![T::lit(2.0) * self.gamma * p + self.beta * sgn0(p - self.c)])
    }

    fn is_smooth(&self) -> bool {
        self.beta == T::zero()
    }

    fn strong_convexity(&self) -> T {
        T::lit(2.0) * self.gamma
    }

    fn gradient_lipschitz(&self) -> Option<T> {
        self.is_smooth().then(|| T::lit(2.0) * self.gamma)
    }

    fn curvature_proxy(&self) -> T {
        T::lit(2.0) * self.gamma
    }

    fn separable_subdifferential(&self, x: &[T]) -> Result<Option<Vec<(T, T)>>, CostError> {
        check_dim(1, x)?;
        let p = x[0];
        let smooth = T::lit(2.0) * self.gamma * p;
        let iv = if p > self.c {
            (smooth + self.beta, smooth + self.beta)
        } else if p < self.c {
            (smooth - self.beta, smooth - self.beta)
        } else {
            (smooth - self.beta, smooth + self.beta)
        };
        Ok(Some(vec![iv]))
    }
}

/// `xᵀQx + bᵀx` with `Q + Qᵀ` positive definite.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticCost<T> {
    q: Matrix<T>,
    b: Vec<T>,
    omega: T,
    theta: T,
    diagonal: bool,
}

impl<T: Scalar> QuadraticCost<T> {
    pub fn new(q: Matrix<T>, b: Vec<T>) -> Result<Self, CostError> {
        let n = b.len();
        if q.rows() != n || q.cols() != n {
            return Err(CostError::DimensionMismatch { expected: n, got: q.rows() });
        }
        let hess = Matrix::from_fn(n, n, |i, j| q[(i, j)] + q[(j, i)]);
        let ev = linalg::symmetric_eigenvalues(&hess);
        let (lo, hi) = (ev[0], ev[n - 1]);
        if !(lo > 0.0) {
            return Err(CostError::NotStronglyConvex(format!("smallest Hessian eigenvalue {lo}")));
        }
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || q[(i, j)] == T::zero()));
        Ok(Self { q, b, omega: T::lit(lo), theta: T::lit(hi), diagonal })
    }

    /// Separable `Σ q_k x_k² + b_k x_k`.
    pub fn diagonal(q: Vec<T>, b: Vec<T>) -> Result<Self, CostError> {
        let n = q.len();
        let m = Matrix::from_fn(n, n, |i, j| if i == j { q[i] } else { T::zero() });
        Self::new(m, b)
    }

    pub fn q(&self) -> &Matrix<T> {
        &self.q
    }

    pub fn b(&self) -> &[T] {
        &self.b
    }
}

impl<T: Scalar> CostFunction<T> for QuadraticCost<T> {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &[T]) -> Result<T, CostError> {
        check_dim(self.dim(), x)?;
        let n = self.dim();
        let quad: T = (0..n).map(|i| (0..n).map(|j| x[i] * self.q[(i, j)] * x[j]).sum::<T>()).sum();
        Ok(quad + linalg::dot(&self.b, x))
    }

    fn subgradient(&self, x: &[T]) -> Result<Vec<T>, CostError> {
        check_dim(self.dim(), x)?;
        let n = self.dim();
        Ok((0..n)
            .map(|i| (0..n).map(|j| (self.q[(i, j)] + self.q[(j, i)]) * x[j]).sum::<T>() + self.b[i])
            .collect())
    }

    fn is_smooth(&self) -> bool {
        true
    }

    fn strong_convexity(&self) -> T {
        self.omega
    }

    fn gradient_lipschitz(&self) -> Option<T> {
        Some(self.theta)
    }

    fn separable_subdifferential(&self, x: &[T]) -> Result<Option<Vec<(T, T)>>, CostError> {
        if !self.diagonal {
            return Ok(None);
        }
        Ok(Some(self.subgradient(x)?.into_iter().map(|g| (g, g)).collect()))
    }
}

/// The four smooth two-dimensional costs of the exponential-convergence
/// benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Example2Cost {
    /// `‖x‖²`
    F1,
    /// `Σₖ xₖ²/(20xₖ² + 1) + ‖x‖²`
    F2,
    /// `‖x − (2, 3)‖²`
    F3,
    /// `Σₖ ln(e^{−0.05xₖ} + e^{0.05xₖ}) + ‖x‖²`
    F4,
}

const F4_RATE: f64 = 0.05;

impl Example2Cost {
    pub fn from_index(i: usize) -> Option<Self> {
        [Self::F1, Self::F2, Self::F3, Self::F4].get(i.checked_sub(1)?).copied()
    }

    pub fn index(self) -> usize {
        self as usize + 1
    }

    fn term<T: Scalar>(self, k: usize, x: T) -> T {
        let two = T::lit(2.0);
        match self {
            Self::F1 => x * x,
            Self::F2 => x * x / (T::lit(20.0) * x * x + T::one()) + x * x,
            Self::F3 => {
                let c = T::lit([2.0, 3.0][k]);
                (x - c) * (x - c)
            }
            Self::F4 => {
                // ln(2 cosh(ax)) without overflow
                let ax = (T::lit(F4_RATE) * x).abs();
                ax + (T::one() + (-two * ax).exp()).ln() + x * x
            }
        }
    }

    fn derivative<T: Scalar>(self, k: usize, x: T) -> T {
        let two = T::lit(2.0);
        match self {
            Self::F1 => two * x,
            Self::F2 => {
                let den = T::lit(20.0) * x * x + T::one();
                two * x / (den * den) + two * x
            }
            Self::F3 => two * (x - T::lit([2.0, 3.0][k])),
            Self::F4 => {
                let a = T::lit(F4_RATE);
                a * (a * x).tanh() + two * x
            }
        }
    }
}

impl<T: Scalar> CostFunction<T> for Example2Cost {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &[T]) -> Result<T, CostError> {
        check_dim(2, x)?;
        Ok(x.iter().enumerate().map(|(k, v)| self.term(k, *v)).sum())
    }

    fn subgradient(&self, x: &[T]) -> Result<Vec<T>, CostError> {
        check_dim(2, x)?;
        Ok(x.iter().enumerate().map(|(k, v)| self.derivative(k, *v)).collect())
    }

    fn is_smooth(&self) -> bool {
        true
    }

    /// Closed-form curvature bounds: the rational term of `F2` has second
    /// derivative `2(1 − 60x²)/(20x² + 1)³ ∈ [−1/2, 2]`, the log-cosh term of
    /// `F4` has `a² sech²(ax) ∈ (0, a²]`.
    fn strong_convexity(&self) -> T {
        T::lit(match self {
            Self::F2 => 1.5,
            _ => 2.0,
        })
    }

    fn gradient_lipschitz(&self) -> Option<T> {
        Some(T::lit(match self {
            Self::F2 => 4.0,
            Self::F4 => 2.0 + F4_RATE * F4_RATE,
            _ => 2.0,
        }))
    }

    fn separable_subdifferential(&self, x: &[T]) -> Result<Option<Vec<(T, T)>>, CostError> {
        Ok(Some(self.subgradient(x)?.into_iter().map(|g| (g, g)).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const TABLE: [[f64; 4]; 6] = [
        [0.5, 3.0, 2.0, 30.0],
        [1.5, 4.0, 1.0, 28.0],
        [3.0, 5.0, 0.5, 45.0],
        [1.0, 2.0, 1.5, 35.0],
        [2.5, 3.5, 1.0, 40.0],
        [2.0, 4.5, 1.5, 35.0],
    ];

    fn gen1() -> DispatchCost<f64> {
        DispatchCost::new(0.5, 3.0, 2.0, 30.0).unwrap()
    }

    fn central_difference(f: &dyn CostFunction<f64>, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                let mut up = x.to_vec();
                let mut dn = x.to_vec();
                up[k] += h;
                dn[k] -= h;
                (f.value(&up).unwrap() - f.value(&dn).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn dispatch_value_and_selection() {
        let f = gen1();
        assert_eq!(f.value(&[30.0]).unwrap(), 1800.5);
        assert_eq!(f.subgradient(&[30.0]).unwrap(), vec![120.0]);
        assert_eq!(f.subgradient(&[35.0]).unwrap(), vec![143.0]);
        assert_abs_diff_eq!(central_difference(&f, &[35.0], 1e-4)[0], 143.0, epsilon = 1e-6);
        // one-sided differences at the kink bracket the selection
        let h = 1e-6;
        let left = (f.value(&[30.0]).unwrap() - f.value(&[30.0 - h]).unwrap()) / h;
        let right = (f.value(&[30.0 + h]).unwrap() - f.value(&[30.0]).unwrap()) / h;
        assert_abs_diff_eq!(left, 117.0, epsilon = 1e-4);
        assert_abs_diff_eq!(right, 123.0, epsilon = 1e-4);
        assert_eq!(f.separable_subdifferential(&[30.0]).unwrap(), Some(vec![(117.0, 123.0)]));
    }

    #[test]
    fn dispatch_residual() {
        let f = gen1();
        assert_eq!(f.subdifferential_residual(&[30.0], &[119.0]).unwrap(), 0.0);
        assert_eq!(f.subdifferential_residual(&[30.0], &[125.0]).unwrap(), 2.0);
        assert_eq!(f.subdifferential_residual(&[1.0, 2.0], &[0.0]), Err(CostError::DimensionMismatch { expected: 1, got: 2 }));
    }

    #[test]
    fn example2_values() {
        assert_eq!(Example2Cost::F1.value(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(Example2Cost::F3.value(&[2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(Example2Cost::F1.subgradient(&[1.0, 2.0]).unwrap(), vec![2.0, 4.0]);
        assert_eq!(Example2Cost::F1.subdifferential_residual(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 0.0);
        assert_eq!(Example2Cost::from_index(4), Some(Example2Cost::F4));
        assert_eq!(Example2Cost::from_index(0), None);
    }

    #[test]
    fn table_strong_convexity() {
        let omega = TABLE
            .iter()
            .map(|r| DispatchCost::new(r[0], r[1], r[2], r[3]).unwrap().strong_convexity())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(omega, 1.0);
        for r in TABLE {
            assert_eq!(DispatchCost::new(r[0], r[1], r[2], r[3]).unwrap().strong_convexity(), 2.0 * r[2]);
        }
    }

    #[test]
    fn nonconvex_parameters_rejected() {
        assert!(DispatchCost::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(QuadraticCost::diagonal(vec![1.0, -0.1], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn quadratic_constants() {
        let q = QuadraticCost::new(Matrix::from_rows(&[[2.0, 0.5], [0.5, 1.0]]), vec![1.0, -1.0]).unwrap();
        // Hessian [[4,1],[1,2]]: eigenvalues 3 ± √2
        assert_abs_diff_eq!(q.strong_convexity(), 3.0 - 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(q.gradient_lipschitz().unwrap(), 3.0 + 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(q.separable_subdifferential(&[0.0, 0.0]).unwrap(), None);
    }

    /// Dense sampling of second differences lands inside the closed-form
    /// `[ω, θ]` of each benchmark cost.
    #[test]
    fn example2_constants_bracket_sampled_curvature() {
        for f in [Example2Cost::F1, Example2Cost::F2, Example2Cost::F3, Example2Cost::F4] {
            let omega: f64 = f.strong_convexity();
            let theta: f64 = f.gradient_lipschitz().unwrap();
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for s in 0..4001 {
                let x = -10.0 + 0.005 * f64::from(s);
                let h = 1e-4;
                let g = |v: f64| <Example2Cost as CostFunction<f64>>::subgradient(&f, &[v, v]).unwrap()[0];
                let curv = (g(x + h) - g(x - h)) / (2.0 * h);
                lo = lo.min(curv);
                hi = hi.max(curv);
            }
            assert!(lo >= omega - 1e-6 && hi <= theta + 1e-6, "{f:?}: [{lo}, {hi}]");
            // and the bounds are tight to within the sampling grid
            assert!(lo - omega < 1e-2 && theta - hi < 1e-2, "{f:?}: [{lo}, {hi}]");
        }
    }

    fn all_costs() -> Vec<Box<dyn CostFunction<f64>>> {
        let mut v: Vec<Box<dyn CostFunction<f64>>> = TABLE
            .iter()
            .map(|r| Box::new(DispatchCost::new(r[0], r[1], r[2], r[3]).unwrap()) as Box<dyn CostFunction<f64>>)
            .collect();
        for f in [Example2Cost::F1, Example2Cost::F2, Example2Cost::F3, Example2Cost::F4] {
            v.push(Box::new(f));
        }
        v.push(Box::new(QuadraticCost::new(Matrix::from_rows(&[[2.0, 0.5], [0.5, 1.0]]), vec![1.0, -1.0]).unwrap()));
        v
    }

    proptest! {
        #[test]
        fn convexity_invariants(u in prop::collection::vec(-50.0..50.0f64, 2), v in prop::collection::vec(-50.0..50.0f64, 2)) {
            for f in all_costs() {
                let n = f.dim();
                let (a, b) = (&u[..n], &v[..n]);
                let (ga, gb) = (f.subgradient(a).unwrap(), f.subgradient(b).unwrap());
                let (fa, fb) = (f.value(a).unwrap(), f.value(b).unwrap());
                let scale = 1e-9 * (1.0 + fa.abs() + fb.abs());
                prop_assert!(fb >= fa + linalg::dot(&ga, &linalg::sub(b, a)) - scale);
                let diff = linalg::sub(a, b);
                let mono = linalg::dot(&diff, &linalg::sub(&ga, &gb));
                prop_assert!(mono >= f.strong_convexity() * linalg::dot(&diff, &diff) - 1e-9 * (1.0 + mono.abs()));
                if let Some(theta) = f.gradient_lipschitz() {
                    prop_assert!(linalg::distance(&ga, &gb) <= theta * linalg::norm(&diff) * (1.0 + 1e-12) + 1e-12);
                }
                if let Some(iv) = f.separable_subdifferential(a).unwrap() {
                    for (g, (lo, hi)) in ga.iter().zip(iv) {
                        prop_assert!(lo <= *g && *g <= hi);
                    }
                }
            }
        }

        #[test]
        fn smooth_gradients_match_differences(u in prop::collection::vec(-20.0..20.0f64, 2)) {
            for f in all_costs().into_iter().filter(|f| f.is_smooth()) {
                let x = &u[..f.dim()];
                let g = f.gradient(x).unwrap().unwrap();
                let fd = central_difference(f.as_ref(), x, 1e-5);
                prop_assert!(linalg::distance(&g, &fd) <= 1e-5 * (1.0 + linalg::norm(&g)));
            }
        }
    }
}
