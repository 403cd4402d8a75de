//! Local constraint sets: projection, membership and the differentiated
//! projection `Π_Ω(u, v) = P_{T_Ω(u)}(v)`.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::linalg::{self, distance, dot, norm};
use crate::scalar::Scalar;

/// A bound or the sphere counts as active within this distance.
pub const ACTIVE_TOL: f64 = 1e-9;
/// Step of the one-sided difference used for sets without a normal-cone oracle.
pub const FD_STEP: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SetError {
    #[error("dimension mismatch: set has dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point lies outside the set (distance {0})")]
    PointOutsideSet(f64),
    #[error("box lower bound exceeds upper bound in coordinate {0}")]
    InvalidBox(usize),
    #[error("ball radius must be positive")]
    InvalidBall,
}

pub type Projector<T> = Arc<dyn Fn(&[T]) -> Vec<T> + Send + Sync>;

/// Closed convex subset of `Rⁿ`.
#[derive(Clone)]
pub enum ConvexSet<T> {
    Box { lower: Vec<T>, upper: Vec<T> },
    Ball { center: Vec<T>, radius: T },
    WholeSpace(usize),
    /// Caller-supplied Euclidean projector.
    External { dim: usize, projector: Projector<T> },
}

impl<T: fmt::Debug> fmt::Debug for ConvexSet<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Box { lower, upper } => f.debug_struct("Box").field("lower", lower).field("upper", upper).finish(),
            Self::Ball { center, radius } => {
                f.debug_struct("Ball").field("center", center).field("radius", radius).finish()
            }
            Self::WholeSpace(n) => f.debug_tuple("WholeSpace").field(n).finish(),
            Self::External { dim, .. } => f.debug_struct("External").field("dim", dim).finish_non_exhaustive(),
        }
    }
}

impl<T: Scalar> ConvexSet<T> {
    pub fn boxed(lower: Vec<T>, upper: Vec<T>) -> Result<Self, SetError> {
        if lower.len() != upper.len() {
            return Err(SetError::DimensionMismatch { expected: lower.len(), got: upper.len() });
        }
        if let Some(k) = lower.iter().zip(&upper).position(|(l, u)| !(l <= u)) {
            return Err(SetError::InvalidBox(k));
        }
        Ok(Self::Box { lower, upper })
    }

    /// One-dimensional interval `[lower, upper]`.
    pub fn interval(lower: T, upper: T) -> Result<Self, SetError> {
        Self::boxed(vec![lower], vec![upper])
    }

    pub fn ball(center: Vec<T>, radius: T) -> Result<Self, SetError> {
        if !(radius > T::zero()) || !radius.is_finite() {
            return Err(SetError::InvalidBall);
        }
        Ok(Self::Ball { center, radius })
    }

    pub fn external(dim: usize, projector: impl Fn(&[T]) -> Vec<T> + Send + Sync + 'static) -> Self {
        Self::External { dim, projector: Arc::new(projector) }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Box { lower, .. } => lower.len(),
            Self::Ball { center, .. } => center.len(),
            Self::WholeSpace(n) => *n,
            Self::External { dim, .. } => *dim,
        }
    }

    pub fn is_whole_space(&self) -> bool {
        matches!(self, Self::WholeSpace(_))
    }

    fn check_dim(&self, u: &[T]) -> Result<(), SetError> {
        if u.len() == self.dim() {
            Ok(())
        } else {
            Err(SetError::DimensionMismatch { expected: self.dim(), got: u.len() })
        }
    }

    pub fn project(&self, u: &[T]) -> Result<Vec<T>, SetError> {
        self.check_dim(u)?;
        Ok(match self {
            Self::Box { lower, upper } => {
                u.iter().zip(lower.iter().zip(upper)).map(|(x, (l, h))| x.max(*l).min(*h)).collect()
            }
            Self::Ball { center, radius } => {
                let dist = distance(u, center);
                if dist <= *radius {
                    u.to_vec()
                } else {
                    let s = *radius / dist;
                    center.iter().zip(u).map(|(c, x)| *c + s * (*x - *c)).collect()
                }
            }
            Self::WholeSpace(_) => u.to_vec(),
            Self::External { projector, dim } => {
                let p = projector(u);
                if p.len() != *dim {
                    return Err(SetError::DimensionMismatch { expected: *dim, got: p.len() });
                }
                p
            }
        })
    }

    pub fn distance(&self, u: &[T]) -> Result<T, SetError> {
        Ok(distance(u, &self.project(u)?))
    }

    pub fn contains(&self, u: &[T], tol: T) -> Result<bool, SetError> {
        Ok(self.distance(u)? <= tol)
    }

    /// Projection of the velocity `v` onto the tangent cone at `u ∈ Ω`.
    pub fn diff_project(&self, u: &[T], v: &[T]) -> Result<Vec<T>, SetError> {
        self.check_dim(v)?;
        let tol = T::lit(ACTIVE_TOL);
        let gap = self.distance(u)?;
        if gap > tol {
            return Err(SetError::PointOutsideSet(gap.as_f64()));
        }
        Ok(match self {
            Self::Box { lower, upper } => u
                .iter()
                .zip(v)
                .zip(lower.iter().zip(upper))
                .map(|((x, vk), (l, h))| {
                    let blocked = (*x - *l <= tol && *vk < T::zero()) || (*h - *x <= tol && *vk > T::zero());
                    if blocked {
                        T::zero()
                    } else {
                        *vk
                    }
                })
                .collect(),
            Self::Ball { center, radius } => {
                let offset = linalg::sub(u, center);
                let dist = norm(&offset);
                if dist < *radius - tol || dist == T::zero() {
                    return Ok(v.to_vec());
                }
                let normal: Vec<T> = offset.iter().map(|o| *o / dist).collect();
                let outward = dot(v, &normal);
                if outward <= T::zero() {
                    v.to_vec()
                } else {
                    linalg::axpy(v, -outward, &normal)
                }
            }
            Self::WholeSpace(_) => v.to_vec(),
            Self::External { .. } => self.diff_project_fd(u, v, T::lit(FD_STEP))?,
        })
    }

    /// `(P(u + εv) − u)/ε`, the one-sided difference form of `Π_Ω(u, v)`.
    pub fn diff_project_fd(&self, u: &[T], v: &[T], eps: T) -> Result<Vec<T>, SetError> {
        let p = self.project(&linalg::axpy(u, eps, v))?;
        Ok(p.iter().zip(u).map(|(a, b)| (*a - *b) / eps).collect())
    }

    /// Distance from `z` to the normal cone at `u`, via the Moreau split
    /// `z = P_N(z) + P_T(z)`.
    pub fn normal_cone_distance(&self, u: &[T], z: &[T]) -> Result<T, SetError> {
        Ok(norm(&self.diff_project(u, z)?))
    }

    /// Per-coordinate `(lower active, upper active)` flags for product sets.
    pub fn active_bounds(&self, u: &[T]) -> Option<Vec<(bool, bool)>> {
        let tol = T::lit(ACTIVE_TOL);
        match self {
            Self::Box { lower, upper } => Some(
                u.iter().zip(lower.iter().zip(upper)).map(|(x, (l, h))| (*x - *l <= tol, *h - *x <= tol)).collect(),
            ),
            Self::WholeSpace(n) => Some(vec![(false, false); *n]),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit_ball() -> ConvexSet<f64> {
        ConvexSet::ball(vec![0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn membership() {
        let b = ConvexSet::interval(20.0, 40.0).unwrap();
        assert!(b.contains(&[30.0], 0.0).unwrap());
        assert!(!b.contains(&[45.0], 1e-9).unwrap());
        assert!(unit_ball().contains(&[1.0, 0.0], 1e-12).unwrap());
        assert_eq!(b.contains(&[1.0, 2.0], 0.0), Err(SetError::DimensionMismatch { expected: 1, got: 2 }));
    }

    #[test]
    fn projection_examples() {
        let b = ConvexSet::interval(20.0, 40.0).unwrap();
        assert_eq!(b.project(&[45.0]).unwrap(), vec![40.0]);
        let p = unit_ball().project(&[3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(p[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.8, epsilon = 1e-15);
        assert_eq!(b.project(&[33.0]).unwrap(), vec![33.0]);
    }

    #[test]
    fn differentiated_projection_cases() {
        let b = ConvexSet::interval(20.0, 40.0).unwrap();
        assert_eq!(b.diff_project(&[30.0], &[-3.0]).unwrap(), vec![-3.0]);
        assert_eq!(b.diff_project(&[20.0], &[-3.0]).unwrap(), vec![0.0]);
        assert_eq!(b.diff_project(&[20.0], &[3.0]).unwrap(), vec![3.0]);
        let d = unit_ball().diff_project(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(d[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 1.0, epsilon = 1e-15);
        // independent check through the limit definition
        let fd = unit_ball().diff_project_fd(&[1.0, 0.0], &[1.0, 1.0], 1e-7).unwrap();
        assert!(linalg::distance(&d, &fd) < 1e-5);
    }

    #[test]
    fn outside_point_rejected() {
        let b = ConvexSet::interval(20.0, 40.0).unwrap();
        assert!(matches!(b.diff_project(&[41.0], &[1.0]), Err(SetError::PointOutsideSet(_))));
    }

    #[test]
    fn degenerate_box_pins_coordinate() {
        let b = ConvexSet::boxed(vec![1.0, 0.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(b.project(&[5.0, 1.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(b.diff_project(&[1.0, 1.0], &[2.0, -2.0]).unwrap(), vec![0.0, -2.0]);
        assert_eq!(b.diff_project(&[1.0, 1.0], &[-2.0, 0.5]).unwrap(), vec![0.0, 0.5]);
    }

    #[test]
    fn invalid_constructions() {
        assert_eq!(ConvexSet::interval(2.0, 1.0).unwrap_err(), SetError::InvalidBox(0));
        assert_eq!(ConvexSet::ball(vec![0.0], 0.0).unwrap_err(), SetError::InvalidBall);
    }

    #[test]
    fn external_falls_back_to_difference_quotient() {
        // nonnegative orthant through a user projector
        let s = ConvexSet::external(2, |u: &[f64]| u.iter().map(|x| x.max(0.0)).collect());
        let d = s.diff_project(&[0.0, 1.0], &[-1.0, -1.0]).unwrap();
        assert_abs_diff_eq!(d[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(d[1], -1.0, epsilon = 1e-6);
    }

    fn sets() -> impl Strategy<Value = ConvexSet<f64>> {
        prop_oneof![
            prop::collection::vec((-5.0..5.0f64, 0.0..4.0f64), 1..4).prop_map(|v| {
                let lower: Vec<f64> = v.iter().map(|(l, _)| *l).collect();
                let upper = v.iter().map(|(l, w)| l + w).collect();
                ConvexSet::boxed(lower, upper).unwrap()
            }),
            (prop::collection::vec(-3.0..3.0f64, 1..4), 0.5..3.0f64)
                .prop_map(|(c, r)| ConvexSet::ball(c, r).unwrap()),
        ]
    }

    fn set_and_points() -> impl Strategy<Value = (ConvexSet<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        sets().prop_flat_map(|s| {
            let n = s.dim();
            let pt = prop::collection::vec(-10.0..10.0f64, n);
            let vel = prop::collection::vec(-1.0..1.0f64, n);
            (Just(s), pt.clone(), pt, vel)
        })
    }

    proptest! {
        #[test]
        fn projection_invariants((s, u, w, v) in set_and_points()) {
            let pu = s.project(&u).unwrap();
            let pw = s.project(&w).unwrap();
            prop_assert!(linalg::distance(&s.project(&pu).unwrap(), &pu) <= 1e-12);
            prop_assert!(linalg::distance(&pu, &pw) <= linalg::distance(&u, &w) + 1e-12);
            // variational inequality against another feasible point
            let resid = linalg::sub(&u, &pu);
            let dir = linalg::sub(&pw, &pu);
            prop_assert!(dot(&resid, &dir) <= 1e-10);
            // differentiated projection matches the limit definition at a
            // boundary point (pu) and an interior/boundary point (pw)
            for base in [&pu, &pw] {
                let d = s.diff_project(base, &v).unwrap();
                let fd = s.diff_project_fd(base, &v, 1e-7).unwrap();
                prop_assert!(linalg::distance(&d, &fd) <= 1e-5, "{:?} vs {:?}", d, fd);
            }
        }

        #[test]
        fn interior_identity((s, u, _w, v) in set_and_points()) {
            // pull the projected point strictly inside
            let p = s.project(&u).unwrap();
            let inner = match &s {
                ConvexSet::Box { lower, upper } => lower.iter().zip(upper).map(|(l, h)| 0.5 * (l + h)).collect(),
                ConvexSet::Ball { center, .. } => center.iter().zip(&p).map(|(c, x)| c + 0.5 * (x - c)).collect::<Vec<_>>(),
                _ => unreachable!(),
            };
            let strictly_inside = match &s {
                ConvexSet::Box { lower, upper } => lower.iter().zip(upper).all(|(l, h)| h - l > 1e-6),
                _ => true,
            };
            if strictly_inside {
                prop_assert_eq!(s.diff_project(&inner, &v).unwrap(), v);
            }
        }
    }
}
