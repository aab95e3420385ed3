//! Scalar systems `x⁺ = a(x)x + b(x)u` with unit weights: pointwise LQ
//! certificates, the uniform cost bound and a certified simulator.

use std::fmt;
use std::sync::Arc;

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lqr::LqProgram;
use crate::matcore::SymMat;
use crate::sdp::SolverOpts;

/// Default number of grid points used to bound `|a|` and `|b|`.
pub const DEFAULT_GRID: usize = 10_001;

/// `|x|` below which the state counts as the origin.
pub const EQUILIBRIUM_TOL: f64 = 1e-12;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct ScalarSystem {
    a: ScalarFn,
    b: ScalarFn,
    domain: (f64, f64),
    b_lower: f64,
    a_upper: f64,
}

impl fmt::Debug for ScalarSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarSystem")
            .field("domain", &self.domain)
            .field("b_lower", &self.b_lower)
            .field("a_upper", &self.a_upper)
            .finish_non_exhaustive()
    }
}

fn grid(domain: (f64, f64), points: usize) -> impl Iterator<Item = f64> {
    let (lo, hi) = domain;
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(move |i| if i + 1 == points { hi } else { lo + step * i as f64 })
}

impl ScalarSystem {
    /// Builds the system on the interval `domain`, bounding `|a|` from above
    /// and `|b|` from below on a uniform grid of `grid_points`.
    pub fn new(
        a: impl Fn(f64) -> f64 + Send + Sync + 'static,
        b: impl Fn(f64) -> f64 + Send + Sync + 'static,
        domain: (f64, f64),
        grid_points: usize,
    ) -> Result<Self> {
        let (lo, hi) = domain;
        if !(lo <= 0.0 && 0.0 <= hi && lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "domain [{lo}, {hi}] must be a bounded interval containing 0"
            )));
        }
        if grid_points < 2 {
            return Err(Error::InvalidInput("grid needs at least two points".into()));
        }
        let mut a_upper = 0.0f64;
        let mut b_lower = f64::INFINITY;
        let mut argmin = 0.0;
        for x in grid(domain, grid_points) {
            let (av, bv) = (a(x), b(x));
            if !av.is_finite() || !bv.is_finite() {
                return Err(Error::InvalidInput(format!("a or b is not finite at x = {x}")));
            }
            a_upper = a_upper.max(av.abs());
            if bv.abs() < b_lower {
                b_lower = bv.abs();
                argmin = x;
            }
        }
        if b_lower <= 0.0 {
            return Err(Error::Uncontrollable { x: argmin });
        }
        Ok(Self {
            a: Arc::new(a),
            b: Arc::new(b),
            domain,
            b_lower,
            a_upper,
        })
    }

    pub fn a(&self, x: f64) -> f64 {
        (self.a)(x)
    }

    pub fn b(&self, x: f64) -> f64 {
        (self.b)(x)
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    /// Grid lower bound on `|b|` over the domain.
    pub fn b_lower(&self) -> f64 {
        self.b_lower
    }

    /// Grid upper bound on `|a|` over the domain.
    pub fn a_upper(&self) -> f64 {
        self.a_upper
    }

    /// Radius of the largest ball around 0 inside the domain.
    pub fn r_bar(&self) -> f64 {
        (-self.domain.0).min(self.domain.1)
    }
}

/// Optimal `(k, p, ℓ, γ)` at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarCert {
    pub x: f64,
    pub k: f64,
    pub p: f64,
    pub ell: f64,
    pub gamma: f64,
}

/// Closed-form solution from the scalar Riccati root.
pub fn analytic_solution(sys: &ScalarSystem, x: f64) -> Result<ScalarCert> {
    let (a, b) = (sys.a(x), sys.b(x));
    if b == 0.0 {
        return Err(Error::Uncontrollable { x });
    }
    let c = a * a + b * b - 1.0;
    let p_r = (c + (c * c + 4.0 * b * b).sqrt()) / (2.0 * b * b);
    let k = -b * p_r * a / (1.0 + b * b * p_r);
    let acl = a + b * k;
    let p = 1.0 / (1.0 - acl * acl);
    Ok(ScalarCert {
        x,
        k,
        p,
        ell: p * k * k,
        gamma: p_r,
    })
}

/// Solution of the pointwise LQ program through the SDP backend.
pub fn sdp_solution(sys: &ScalarSystem, x: f64, opts: &SolverOpts) -> Result<ScalarCert> {
    let (a, b) = (sys.a(x), sys.b(x));
    if b == 0.0 {
        return Err(Error::Uncontrollable { x });
    }
    let one = SymMat::identity(1);
    let prog = LqProgram::new(
        &nalgebra::DMatrix::from_element(1, 1, a),
        &nalgebra::DMatrix::from_element(1, 1, b),
        &one,
        &one,
    )?;
    let sol = prog.solve(opts)?;
    if !sol.is_optimal() {
        return Err(Error::Solve { status: sol.status });
    }
    let p = sol.sym(&prog.p)?.get(0, 0);
    let y = sol.rect(&prog.y)?[(0, 0)];
    Ok(ScalarCert {
        x,
        k: y / p,
        p,
        ell: sol.sym(&prog.l)?.get(0, 0),
        gamma: sol.scalar(&prog.gamma)?,
    })
}

/// Uniform bound `1 + L²/b̲²` on the pointwise optimal cost.
pub fn gamma_bar(sys: &ScalarSystem) -> f64 {
    1.0 + (sys.a_upper / sys.b_lower).powi(2)
}

/// Radius `r̄/√γ̄` of the certified ball of initial states.
pub fn roa_delta(sys: &ScalarSystem) -> f64 {
    sys.r_bar() / gamma_bar(sys).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalarTrajectory {
    pub states: Vec<f64>,
    pub inputs: Vec<f64>,
    pub certs: Vec<ScalarCert>,
    /// Running maximum of `p` along the trajectory.
    pub p_tilde: Vec<f64>,
    /// `V_t(x_t) = x_t² / p̃_t`.
    pub v: Vec<f64>,
    pub gamma_bar: f64,
    pub delta: f64,
    pub r_bar: f64,
    /// Whether `|x0| ≤ δ`, so that the checks below are guaranteed.
    pub inside_roa: bool,
    /// Failed checks; only possible when `inside_roa` is false.
    pub violations: Vec<String>,
}

/// Closed-loop simulation with `u_t = k(x_t) x_t`, checking at every step
/// the Lyapunov decay `V_{t+1}(x_{t+1}) ≤ (1 − γ̄⁻¹) V_t(x_t)`, the envelope
/// `x_t² ≤ γ̄(1 − γ̄⁻¹)ᵗ x_0²`, `1 ≤ p̃ ≤ γ̄` and `|x_t| ≤ r̄`.
///
/// A failed check for `|x0| ≤ δ` is a [`Error::TheoremViolation`]; outside
/// that ball it is only recorded. Stops once `|x_t| < 1e-12`.
pub fn simulate(
    sys: &ScalarSystem,
    x0: f64,
    steps: usize,
    use_sdp: bool,
    opts: &SolverOpts,
) -> Result<ScalarTrajectory> {
    let gb = gamma_bar(sys);
    let delta = roa_delta(sys);
    let r_bar = sys.r_bar();
    let inside_roa = x0.abs() <= delta;
    if !inside_roa {
        warn!("x0 = {x0} lies outside the certified ball of radius {delta}");
    }
    // solver output is only feasible up to its tolerance
    let tol = if use_sdp { 1e-6 } else { 1e-9 };
    let rate = 1.0 - 1.0 / gb;

    let mut out = ScalarTrajectory {
        states: vec![x0],
        inputs: Vec::new(),
        certs: Vec::new(),
        p_tilde: Vec::new(),
        v: Vec::new(),
        gamma_bar: gb,
        delta,
        r_bar,
        inside_roa,
        violations: Vec::new(),
    };
    let fail = |out: &mut ScalarTrajectory, msg: String| -> Result<()> {
        if inside_roa {
            Err(Error::TheoremViolation(msg))
        } else {
            out.violations.push(msg);
            Ok(())
        }
    };

    let mut x = x0;
    for t in 0..=steps {
        if x.abs() < EQUILIBRIUM_TOL {
            break;
        }
        let cert = if use_sdp {
            sdp_solution(sys, x, opts)?
        } else {
            analytic_solution(sys, x)?
        };
        let pt = match out.p_tilde.last() {
            Some(prev) => cert.p.max(*prev),
            None => cert.p,
        };
        let v = x * x / pt;

        if !(1.0 - tol <= pt && pt <= gb * (1.0 + tol)) {
            fail(&mut out, format!("t = {t}: p_tilde = {pt} outside [1, {gb}]"))?;
        }
        if x.abs() > r_bar * (1.0 + tol) {
            fail(&mut out, format!("t = {t}: |x| = {} exceeds r_bar = {r_bar}", x.abs()))?;
        }
        let envelope = gb * rate.powi(t as i32) * x0 * x0;
        if x * x > envelope * (1.0 + tol) {
            fail(&mut out, format!("t = {t}: x^2 = {} above envelope {envelope}", x * x))?;
        }
        if let Some(&prev) = out.v.last() {
            if v > rate * prev * (1.0 + tol) {
                fail(&mut out, format!("t = {t}: V = {v} not below {}", rate * prev))?;
            }
        }

        out.certs.push(cert);
        out.p_tilde.push(pt);
        out.v.push(v);
        if t == steps {
            break;
        }
        let u = cert.k * x;
        x = sys.a(x) * x + sys.b(x) * u;
        out.inputs.push(u);
        out.states.push(x);
    }
    Ok(out)
}
