//! Fixtures shared by the benchmarks.

use nalgebra::{DMatrix, DVector};
use tvsdp::lqr::LtiPair;
use tvsdp::plants::Plant;
use tvsdp::{NlSystem, SymMat};

/// Chain of `n` integrators with input on the last state, discretized with
/// unit step. Stabilizable for every `n`, and ill-conditioned as `n` grows.
pub fn integrator_chain(n: usize) -> LtiPair {
    let a = DMatrix::from_fn(n, n, |i, j| if i == j || j == i + 1 { 1.0 } else { 0.0 });
    let b = DMatrix::from_fn(n, 1, |i, _| if i + 1 == n { 1.0 } else { 0.0 });
    LtiPair::unweighted(a, b).expect("well-formed pair")
}

/// Shipped plant with its default weights and canonical initial state.
pub fn plant(kind: &str) -> (Plant, NlSystem, DVector<f64>) {
    let plant: Plant = match kind {
        "smib" => Plant::Smib(Default::default()),
        "jet" => Plant::Jet(Default::default()),
        "pendulum" => Plant::Pendulum(Default::default()),
        other => panic!("no fixture for {other}"),
    };
    let (q, r): (SymMat, SymMat) = plant.default_weights().expect("weights");
    let sys = plant.system(q, r).expect("system");
    let x0 = plant.canonical_x0().expect("canonical initial state");
    (plant, sys, x0)
}
