//! Weighted communication digraphs and their Laplacian spectra.
//!
//! Convention: `a_ij > 0` means agent `i` receives from agent `j`, so the
//! Laplacian is `L = D_in − A` with `D_in = diag(Σⱼ a_ij)`.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::{self, Matrix};
use crate::scalar::Scalar;

/// Default tolerance for the in/out degree balance test.
pub const BALANCE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("node index {0} out of range 1..={1}")]
    NodeOutOfRange(usize, usize),
    #[error("self loop at node {0}")]
    SelfLoop(usize),
    #[error("edge weight {0} is negative or not finite")]
    BadWeight(f64),
    #[error("adjacency matrix must be square with zero diagonal and nonnegative entries")]
    BadAdjacency,
    #[error("graph is not weight-balanced (node {node}: in-degree {d_in}, out-degree {d_out})")]
    NotBalanced { node: usize, d_in: f64, d_out: f64 },
    #[error("graph is not strongly connected")]
    NotStronglyConnected,
    #[error("spectral data needs at least two nodes")]
    TooFewNodes,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Digraph<T> {
    weights: Matrix<T>,
}

impl<T: Scalar> Digraph<T> {
    pub fn from_adjacency(weights: Matrix<T>) -> Result<Self, GraphError> {
        let n = weights.rows();
        if n == 0 {
            return Err(GraphError::Empty);
        }
        if weights.cols() != n {
            return Err(GraphError::BadAdjacency);
        }
        for i in 0..n {
            for j in 0..n {
                let w = weights[(i, j)];
                if !w.is_finite() || w < T::zero() || (i == j && w != T::zero()) {
                    return Err(GraphError::BadAdjacency);
                }
            }
        }
        Ok(Self { weights })
    }

    /// Builds a graph from `(from, to, weight)` triples with 1-indexed nodes.
    /// Repeated edges accumulate.
    pub fn from_edges(nodes: usize, edges: &[(usize, usize, T)]) -> Result<Self, GraphError> {
        if nodes == 0 {
            return Err(GraphError::Empty);
        }
        let mut a = Matrix::zeros(nodes, nodes);
        for &(from, to, w) in edges {
            for v in [from, to] {
                if v == 0 || v > nodes {
                    return Err(GraphError::NodeOutOfRange(v, nodes));
                }
            }
            if from == to {
                return Err(GraphError::SelfLoop(from));
            }
            if !w.is_finite() || w < T::zero() {
                return Err(GraphError::BadWeight(w.as_f64()));
            }
            a[(to - 1, from - 1)] = a[(to - 1, from - 1)] + w;
        }
        Ok(Self { weights: a })
    }

    /// Directed ring `1 → 2 → … → N → 1` with a common weight.
    pub fn directed_ring(nodes: usize, weight: T) -> Result<Self, GraphError> {
        let edges: Vec<_> = (1..=nodes).map(|i| (i, i % nodes + 1, weight)).collect();
        if nodes == 1 {
            return Self::from_edges(1, &[]);
        }
        Self::from_edges(nodes, &edges)
    }

    pub fn node_count(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix<T> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> T {
        self.weights[(i, j)]
    }

    /// Positive-weight in-neighbours of `i` (0-indexed) in ascending order.
    pub fn in_neighbors(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        self.weights.row(i).iter().enumerate().filter(|(_, w)| **w > T::zero()).map(|(j, w)| (j, *w))
    }

    /// Edge list as 1-indexed `(from, to, weight)` triples, sorted.
    pub fn edges(&self) -> Vec<(usize, usize, T)> {
        let n = self.node_count();
        let mut out = Vec::new();
        for from in 0..n {
            for to in 0..n {
                let w = self.weights[(to, from)];
                if w > T::zero() {
                    out.push((from + 1, to + 1, w));
                }
            }
        }
        out
    }

    pub fn in_degree(&self, i: usize) -> T {
        self.weights.row(i).iter().copied().sum()
    }

    pub fn out_degree(&self, i: usize) -> T {
        (0..self.node_count()).map(|j| self.weights[(j, i)]).sum()
    }

    pub fn laplacian(&self) -> Matrix<T> {
        let n = self.node_count();
        Matrix::from_fn(n, n, |i, j| if i == j { self.in_degree(i) } else { -self.weights[(i, j)] })
    }

    pub fn is_weight_balanced(&self, tol: T) -> bool {
        self.balance_violation(tol).is_none()
    }

    fn balance_violation(&self, tol: T) -> Option<GraphError> {
        (0..self.node_count()).find_map(|i| {
            let (d_in, d_out) = (self.in_degree(i), self.out_degree(i));
            ((d_in - d_out).abs() > tol).then(|| GraphError::NotBalanced {
                node: i + 1,
                d_in: d_in.as_f64(),
                d_out: d_out.as_f64(),
            })
        })
    }

    pub fn is_strongly_connected(&self) -> bool {
        let n = self.node_count();
        let reach = |forward: bool| {
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([0usize]);
            seen[0] = true;
            while let Some(u) = queue.pop_front() {
                for v in 0..n {
                    // Information flows j -> i when a_ij > 0.
                    let w = if forward { self.weights[(v, u)] } else { self.weights[(u, v)] };
                    if w > T::zero() && !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }

    /// Reorders nodes so that new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.node_count();
        assert_eq!(perm.len(), n);
        Self { weights: Matrix::from_fn(n, n, |i, j| self.weights[(perm[i], perm[j])]) }
    }

    pub fn spectral_data(&self) -> Result<SpectralData<T>, GraphError> {
        if let Some(e) = self.balance_violation(T::lit(BALANCE_TOL)) {
            return Err(e);
        }
        if !self.is_strongly_connected() {
            return Err(GraphError::NotStronglyConnected);
        }
        let n = self.node_count();
        if n < 2 {
            return Err(GraphError::TooFewNodes);
        }
        let laplacian = self.laplacian();
        let eig = linalg::symmetric_eigenvalues(&laplacian);
        let sv = linalg::singular_values(&laplacian);
        let (r, r_complement) = orthogonal_basis::<T>(n);
        Ok(SpectralData {
            laplacian,
            lambda2_hat: T::lit(eig[1]),
            laplacian_norm: T::lit(sv[0]),
            r,
            r_complement,
        })
    }
}

/// Spectral quantities of a balanced, strongly connected digraph.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralData<T> {
    pub laplacian: Matrix<T>,
    /// Second-smallest eigenvalue of `(L + Lᵀ)/2`.
    pub lambda2_hat: T,
    /// Largest singular value of `L`.
    pub laplacian_norm: T,
    /// `1/√N · 1`
    pub r: Vec<T>,
    /// `N × (N−1)` orthonormal completion of `r`.
    pub r_complement: Matrix<T>,
}

impl<T: Scalar> SpectralData<T> {
    pub fn node_count(&self) -> usize {
        self.r.len()
    }

    /// The orthogonal matrix `[r R]`.
    pub fn basis(&self) -> Matrix<T> {
        let n = self.node_count();
        Matrix::from_fn(n, n, |i, j| if j == 0 { self.r[i] } else { self.r_complement[(i, j - 1)] })
    }
}

/// `[r R]` from a Householder QR of `[1, e_1, …, e_{N−1}]`, with column signs
/// fixed so the result is reproducible and the first column is `+r`.
fn orthogonal_basis<T: Scalar>(n: usize) -> (Vec<T>, Matrix<T>) {
    let seed = DMatrix::from_fn(n, n, |i, j| match j {
        0 => 1.0,
        _ => f64::from(u8::from(i == j - 1)),
    });
    let mut q = seed.qr().q();
    for j in 0..n {
        // Pivot sign: first column against 1, others against their seed e_{j-1}.
        let pivot = if j == 0 { q[(0, 0)] } else { q[(j - 1, j)] };
        if pivot < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let inv = 1.0 / (n as f64).sqrt();
    let r = vec![T::lit(inv); n];
    let rest = q.columns(1, n - 1).into_owned();
    (r, Matrix::from_nalgebra(&rest))
}
