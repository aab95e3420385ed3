//! Online SDP-based control of nonlinear systems in state-dependent
//! linear form, with LQR baselines and offline feasibility certificates.

use openblas_src as _;

pub mod error;
pub mod feasibility;
pub mod lqr;
pub mod matcore;
pub mod online;
pub mod plants;
pub mod scalar;
pub mod scenario;
pub mod sdp;

pub use error::{Error, Result};
pub use matcore::SymMat;
pub use online::{NlSystem, OnlineRun, StepCertificate, StepStatus};
pub use plants::Plant;
pub use scenario::{run_scenario, RunReport, Scenario, ScenarioConfig};
pub use sdp::{SdpProblem, SdpSolution, SolveStatus, SolverOpts};
