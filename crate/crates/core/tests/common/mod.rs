#![allow(dead_code)]

use std::sync::Arc;

use distalloc::costs::CostFunction;
use distalloc::*;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn scenario_path(name: &str) -> String {
    format!("{}/../../scenarios/{name}.toml", env!("CARGO_MANIFEST_DIR"))
}

pub fn load(name: &str) -> Scenario<f64> {
    let text = std::fs::read_to_string(scenario_path(name)).unwrap();
    ScenarioConfig::from_toml_str(&text).unwrap().build().unwrap()
}

/// Generator data: alpha, beta, gamma, c, demand, pmin, pmax.
pub const TABLE: [[f64; 7]; 6] = [
    [0.5, 3.0, 2.0, 30.0, 45.0, 20.0, 40.0],
    [1.5, 4.0, 1.0, 28.0, 40.0, 25.0, 35.0],
    [3.0, 5.0, 0.5, 45.0, 25.0, 35.0, 50.0],
    [1.0, 2.0, 1.5, 35.0, 35.0, 25.0, 45.0],
    [2.5, 3.5, 1.0, 40.0, 30.0, 30.0, 47.0],
    [2.0, 4.5, 1.5, 35.0, 40.0, 28.0, 42.0],
];

/// Minimiser of `γp² + β|p − c| − μp` on `[lo, hi]`.
fn dispatch_response(row: &[f64; 7], mu: f64) -> f64 {
    let (beta, gamma, c, lo, hi) = (row[1], row[2], row[3], row[5], row[6]);
    let p = if (mu - beta) / (2.0 * gamma) > c {
        (mu - beta) / (2.0 * gamma)
    } else if (mu + beta) / (2.0 * gamma) < c {
        (mu + beta) / (2.0 * gamma)
    } else {
        c
    };
    p.clamp(lo, hi)
}

/// Dispatch optimum of the generator table for total demand `total` by
/// bisection on the price.
pub fn dispatch_optimum(total: f64) -> Vec<f64> {
    let supply = |mu: f64| TABLE.iter().map(|r| dispatch_response(r, mu)).sum::<f64>();
    let (mut lo, mut hi) = (-1e4, 1e4);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if supply(mid) < total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    TABLE.iter().map(|r| dispatch_response(r, 0.5 * (lo + hi))).collect()
}

/// Derivative of coordinate `k` of the four smooth benchmark costs.
pub fn example2_derivative(f: usize, k: usize, x: f64) -> f64 {
    match f {
        1 => 2.0 * x,
        2 => 2.0 * x / (20.0 * x * x + 1.0).powi(2) + 2.0 * x,
        3 => 2.0 * (x - [2.0, 3.0][k]),
        _ => 0.05 * (0.05 * x).tanh() + 2.0 * x,
    }
}

fn bisect(mut lo: f64, mut hi: f64, increasing: impl Fn(f64) -> f64, target: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if increasing(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Optimum of the smooth benchmark with resources `d`, coordinate by
/// coordinate: every cost is separable and strictly convex.
pub fn example2_optimum(d: &[[f64; 2]; 4]) -> ([[f64; 2]; 4], [f64; 2]) {
    let mut x = [[0.0; 2]; 4];
    let mut mu = [0.0; 2];
    for k in 0..2 {
        let total: f64 = d.iter().map(|r| r[k]).sum();
        let response = |f: usize, m: f64| bisect(-1e3, 1e3, |t| example2_derivative(f, k, t), m);
        let m = bisect(-1e3, 1e3, |m| (1..=4).map(|f| response(f, m)).sum(), total);
        mu[k] = m;
        for f in 1..=4 {
            x[f - 1][k] = response(f, m);
        }
    }
    (x, mu)
}

/// Weight-balanced strongly connected digraph: a Hamiltonian cycle plus a
/// few random weighted cycles.
pub fn random_balanced_graph<R: Rng>(n: usize, rng: &mut R) -> Digraph<f64> {
    let mut order: Vec<usize> = (1..=n).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    let w = rng.gen_range(0.5..2.0);
    for k in 0..n {
        edges.push((order[k], order[(k + 1) % n], w));
    }
    for _ in 0..rng.gen_range(0..=3) {
        let len = rng.gen_range(2..=n);
        let mut nodes: Vec<usize> = (1..=n).collect();
        nodes.shuffle(rng);
        nodes.truncate(len);
        let w = rng.gen_range(0.2..1.5);
        for k in 0..len {
            edges.push((nodes[k], nodes[(k + 1) % len], w));
        }
    }
    Digraph::from_edges(n, &edges).unwrap()
}

/// Random balanced graph with `‖L‖/λ̂₂ ≤ max_ratio`, scaled so that `λ̂₂ = 1`.
pub fn conditioned_graph<R: Rng>(n: usize, max_ratio: f64, rng: &mut R) -> Digraph<f64> {
    loop {
        let g = random_balanced_graph(n, rng);
        let spec = g.spectral_data().unwrap();
        if spec.laplacian_norm <= max_ratio * spec.lambda2_hat {
            return normalized(&g);
        }
    }
}

/// `xᵀQx + bᵀx` with `Q + Qᵀ` having eigenvalues in `[lo, hi]`.
pub fn random_quadratic<R: Rng>(n: usize, lo: f64, hi: f64, rng: &mut R) -> QuadraticCost<f64> {
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    if n == 1 {
        return QuadraticCost::diagonal(vec![0.5 * rng.gen_range(lo..hi)], b).unwrap();
    }
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let (c, s) = (angle.cos(), angle.sin());
    let (e1, e2) = (rng.gen_range(lo..hi), rng.gen_range(lo..hi));
    // H = U diag(e) Uᵀ, Q = H/2
    let h = [[c * c * e1 + s * s * e2, c * s * (e1 - e2)], [c * s * (e1 - e2), s * s * e1 + c * c * e2]];
    QuadraticCost::new(Matrix::from_fn(2, 2, |i, j| 0.5 * h[i][j]), b).unwrap()
}

pub fn random_diagonal_quadratic<R: Rng>(n: usize, rng: &mut R) -> QuadraticCost<f64> {
    let q = (0..n).map(|_| rng.gen_range(0.5..3.0)).collect();
    let b = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    QuadraticCost::diagonal(q, b).unwrap()
}

/// Boxes and resources with the total strictly inside the capacity range.
pub fn random_boxes<R: Rng>(agents: usize, n: usize, rng: &mut R) -> (Vec<ConvexSet<f64>>, Matrix<f64>) {
    let mut sets = Vec::new();
    let mut lows = Matrix::zeros(agents, n);
    let mut highs = Matrix::zeros(agents, n);
    for i in 0..agents {
        let lo: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..0.5)).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.gen_range(0.5..3.0)).collect();
        lows.row_mut(i).copy_from_slice(&lo);
        highs.row_mut(i).copy_from_slice(&hi);
        sets.push(ConvexSet::boxed(lo, hi).unwrap());
    }
    let d = Matrix::from_fn(agents, n, |i, k| {
        let t = rng.gen_range(0.15..0.85);
        lows[(i, k)] + t * (highs[(i, k)] - lows[(i, k)]) + rng.gen_range(-0.05..0.05)
    });
    (sets, d)
}

/// Gains a fixed factor above the bounds.
pub fn gains_above_bounds(sc: &Scenario<f64>, factor: f64, k3: f64) -> Gains<f64> {
    let b = sc.gain_bounds().unwrap();
    let k1 = factor * b.k1_min.max(0.1);
    Gains { k1, k2: factor * b.k2_min(k1), k3 }
}

/// `fraction` of the smaller of `1/(k₂‖L‖)` and the linearised limit.
pub fn safe_step(sc: &Scenario<f64>, fraction: f64) -> f64 {
    let spec = sc.graph.spectral_data().unwrap();
    let linear = distalloc::model::linear_step_limit(sc).unwrap_or(f64::INFINITY);
    fraction * (1.0 / (sc.gains.k2 * spec.laplacian_norm)).min(linear)
}

/// The same graph with weights scaled so that `λ̂₂ = 1`.
pub fn normalized(g: &Digraph<f64>) -> Digraph<f64> {
    let s = 1.0 / g.spectral_data().unwrap().lambda2_hat;
    let w = g.weights();
    Digraph::from_adjacency(Matrix::from_fn(w.rows(), w.cols(), |i, j| s * w[(i, j)])).unwrap()
}

pub fn arc<F: CostFunction<f64> + 'static>(f: F) -> Arc<dyn CostFunction<f64>> {
    Arc::new(f)
}

/// Random smooth unconstrained instance with valid gains.
pub fn random_smooth_instance<R: Rng>(rng: &mut R) -> (Scenario<f64>, Vec<QuadraticCost<f64>>) {
    let agents = rng.gen_range(3..=5);
    let n = rng.gen_range(1..=2);
    let graph = conditioned_graph(agents, 4.0, rng);
    let quads: Vec<_> = (0..agents).map(|_| random_quadratic(n, 1.0, 4.0, rng)).collect();
    let costs: Vec<_> = quads.iter().cloned().map(arc).collect();
    let d = Matrix::from_fn(agents, n, |_, _| rng.gen_range(-2.0..2.0));
    let problem = Problem::new(costs, vec![ConvexSet::WholeSpace(n); agents], d).unwrap();
    let x0 = Matrix::from_fn(agents, n, |_, _| rng.gen_range(-3.0..3.0));
    let mut sc = Scenario::new(problem, graph, Gains { k1: 1.0, k2: 1.0, k3: 1.0 }, Algorithm::Smooth, IntegratorSettings::default())
        .with_x0(x0);
    sc.gains = gains_above_bounds(&sc, 1.2, rng.gen_range(1.0..5.0));
    sc.integrator.step = safe_step(&sc, 0.5);
    (sc, quads)
}

/// Closed-form optimum of an unconstrained quadratic instance:
/// `Hᵢxᵢ + bᵢ = μ`, `Σxᵢ = Σdᵢ`.
pub fn quadratic_optimum(hessians: &[nalgebra::DMatrix<f64>], linear: &[nalgebra::DVector<f64>], total: &nalgebra::DVector<f64>) -> (Vec<nalgebra::DVector<f64>>, nalgebra::DVector<f64>) {
    let n = total.len();
    let mut sum_inv = nalgebra::DMatrix::zeros(n, n);
    let mut offset = nalgebra::DVector::zeros(n);
    for (h, b) in hessians.iter().zip(linear) {
        let inv = h.clone().try_inverse().unwrap();
        offset += &inv * b;
        sum_inv += inv;
    }
    let mu = sum_inv.try_inverse().unwrap() * (total + offset);
    let xs = hessians.iter().zip(linear).map(|(h, b)| h.clone().try_inverse().unwrap() * (&mu - b)).collect();
    (xs, mu)
}

/// Hessian `Q + Qᵀ` and linear term of a quadratic cost.
pub fn quadratic_parts(f: &QuadraticCost<f64>) -> (nalgebra::DMatrix<f64>, nalgebra::DVector<f64>) {
    let q = f.q();
    let n = q.rows();
    (nalgebra::DMatrix::from_fn(n, n, |i, j| q[(i, j)] + q[(j, i)]), nalgebra::DVector::from_column_slice(f.b()))
}
