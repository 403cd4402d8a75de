//! Distributed continuous-time resource allocation over weight-balanced
//! digraphs.
//!
//! Agents minimise `Σ fᵢ(xᵢ)` subject to `Σ xᵢ = Σ dᵢ` and `xᵢ ∈ Ωᵢ`, each
//! seeing only its own cost, set and resource plus what its in-neighbours
//! broadcast. The crate provides the graph and set primitives, cost
//! families, the network vector fields with a fixed-step integrator,
//! optimality diagnostics and centralised reference solvers.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the `*F64`
//! aliases below fix the common choice.

pub mod analysis;
pub mod config;
pub mod costs;
pub mod dynamics;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod scalar;
pub mod sets;

pub use analysis::{kkt_check, Equilibrium, KktReport, RateEstimate};
pub use config::ScenarioConfig;
pub use costs::{CostFunction, DispatchCost, Example2Cost, QuadraticCost};
pub use dynamics::{simulate, Dynamics, NetworkState, SimulateOptions, Trajectory};
pub use graph::{Digraph, SpectralData};
pub use linalg::Matrix;
pub use model::{validate, Algorithm, Gains, IntegratorSettings, Problem, ResourceEvent, Scenario, Violation};
pub use oracle::{solve, solve_separable_bisection, OracleSolution};
pub use scalar::Scalar;
pub use sets::ConvexSet;

pub type MatrixF64 = Matrix<f64>;
pub type DigraphF64 = Digraph<f64>;
pub type ConvexSetF64 = ConvexSet<f64>;
pub type ProblemF64 = Problem<f64>;
pub type ScenarioF64 = Scenario<f64>;
pub type TrajectoryF64 = Trajectory<f64>;
pub type OracleSolutionF64 = OracleSolution<f64>;

pub type DigraphF32 = Digraph<f32>;
pub type ProblemF32 = Problem<f32>;
pub type ScenarioF32 = Scenario<f32>;
