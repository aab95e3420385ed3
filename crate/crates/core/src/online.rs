//! Online control by one SDP per time step, with a time-varying quadratic
//! Lyapunov function `V_t(x) = xᵀP_t⁻¹x` certified along the trajectory.

use std::fmt;
use std::sync::Arc;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility;
use crate::lqr::{LqProgram, LtiPair};
use crate::matcore::SymMat;
use crate::sdp::{self, Assignment, Lmi, MatExpr, ScalarExpr, SolveStatus, SolverOpts};

/// `‖x‖` below which the state counts as the origin.
pub const EQUILIBRIUM_TOL: f64 = 1e-12;

/// Relative tolerance used when checking certificate inequalities that the
/// solver only meets up to its own accuracy.
pub const CHECK_TOL: f64 = 1e-6;

pub type MatFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// `x⁺ = A(x)x + B(x)u` with quadratic weights.
#[derive(Clone)]
pub struct NlSystem {
    n: usize,
    m: usize,
    a_of: MatFn,
    b_of: MatFn,
    q: SymMat,
    r: SymMat,
}

impl fmt::Debug for NlSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NlSystem")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("q", &self.q)
            .field("r", &self.r)
            .finish_non_exhaustive()
    }
}

impl NlSystem {
    /// System with identity weights.
    pub fn new(
        n: usize,
        m: usize,
        a_of: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        b_of: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidInput("state and input dimensions must be positive".into()));
        }
        Ok(Self {
            n,
            m,
            a_of: Arc::new(a_of),
            b_of: Arc::new(b_of),
            q: SymMat::identity(n),
            r: SymMat::identity(m),
        })
    }

    /// Constant matrices `(A, B)`.
    pub fn lti(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let (n, m) = (a.nrows(), b.ncols());
        if a.ncols() != n || b.nrows() != n {
            return Err(Error::dims("NlSystem::lti", format!("{n}x{n} and {n}xm"), format!("{}x{} and {}x{}", a.nrows(), a.ncols(), b.nrows(), m)));
        }
        Self::new(n, m, move |_| a.clone(), move |_| b.clone())
    }

    pub fn with_weights(mut self, q: SymMat, r: SymMat) -> Result<Self> {
        if q.dim() != self.n || r.dim() != self.m {
            return Err(Error::dims("NlSystem weights", format!("{} and {}", self.n, self.m), format!("{} and {}", q.dim(), r.dim())));
        }
        if q.min_eig() <= 0.0 || r.min_eig() <= 0.0 {
            return Err(Error::InvalidInput("Q and R must be positive definite".into()));
        }
        self.q = q;
        self.r = r;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn q(&self) -> &SymMat {
        &self.q
    }

    pub fn r(&self) -> &SymMat {
        &self.r
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::dims("state", self.n, x.len()));
        }
        Ok(())
    }

    pub fn a(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        let a = (self.a_of)(x);
        if a.shape() != (self.n, self.n) {
            return Err(Error::dims("A(x)", format!("{0}x{0}", self.n), format!("{}x{}", a.nrows(), a.ncols())));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("A(x) is not finite at x = {x}")));
        }
        Ok(a)
    }

    pub fn b(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        let b = (self.b_of)(x);
        if b.shape() != (self.n, self.m) {
            return Err(Error::dims("B(x)", format!("{}x{}", self.n, self.m), format!("{}x{}", b.nrows(), b.ncols())));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("B(x) is not finite at x = {x}")));
        }
        Ok(b)
    }

    /// `A(x)x + B(x)u`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.m {
            return Err(Error::dims("input", self.m, u.len()));
        }
        Ok(self.a(x)? * x + self.b(x)? * u)
    }

    /// Frozen pair `(A(x), B(x))` with the system weights.
    pub fn pair_at(&self, x: &DVector<f64>) -> Result<LtiPair> {
        LtiPair::new(self.a(x)?, self.b(x)?, self.q.clone(), self.r.clone())
    }
}

/// Optimal `(Y, P, L, γ)` at one state together with what it certifies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepCertificate {
    pub t: usize,
    pub x: DVector<f64>,
    pub y: DMatrix<f64>,
    pub p: SymMat,
    pub l: SymMat,
    pub gamma: f64,
    /// `K = YP⁻¹`.
    pub k: DMatrix<f64>,
    /// `V_t(x_t) = x_tᵀP⁻¹x_t`.
    pub v: f64,
}

impl StepCertificate {
    pub(crate) fn from_parts(t: usize, x: &DVector<f64>, y: DMatrix<f64>, p: SymMat, l: SymMat, gamma: f64) -> Result<Self> {
        let k = p.spd_solve(&y.transpose())?.transpose();
        let v = p.inv_quad_form(x)?;
        Ok(Self {
            t,
            x: x.clone(),
            y,
            p,
            l,
            gamma,
            k,
            v,
        })
    }

    /// `V_t(z) = zᵀP_t⁻¹z`.
    pub fn lyapunov(&self, z: &DVector<f64>) -> Result<f64> {
        self.p.inv_quad_form(z)
    }

    pub fn input(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.k * x
    }

    /// `A_clᵀP⁻¹A_cl − P⁻¹` for the closed loop at `x`.
    pub fn decrease_operator(&self, sys: &NlSystem, x: &DVector<f64>) -> Result<SymMat> {
        let acl = sys.a(x)? + sys.b(x)? * &self.k;
        let pinv = self.p.spd_inverse()?;
        SymMat::new(acl.transpose() * pinv.matrix() * &acl - pinv.matrix())
    }

    /// Whether `P − I` is nonsingular with margin `1e-8·(1 + ‖P‖)`.
    pub fn nonsingular(&self) -> bool {
        self.nonsingular_margin() > 1e-8 * (1.0 + self.p.spectral_norm())
    }

    /// `λ_min(P − I)`.
    pub fn nonsingular_margin(&self) -> f64 {
        self.p.min_eig() - 1.0
    }
}

/// The per-step program and its variable handles.
pub struct StepProgram {
    pub(crate) lq: LqProgram,
}

impl StepProgram {
    /// Program at `x` without coupling or cost bound (the first step).
    pub fn initial(sys: &NlSystem, x: &DVector<f64>) -> Result<Self> {
        let lq = LqProgram::new(&sys.a(x)?, &sys.b(x)?, &sys.q, &sys.r)?;
        Ok(Self { lq })
    }

    /// Full program at `x` coupled to the previous `P` and bounded by `γ̄`.
    ///
    /// The coupling `[xᵀP_prev⁻¹x, xᵀ; x, P] ⪰ 0` is imposed in the
    /// congruent form `[1, zᵀ; z, P] ⪰ 0`, `z = x/√(xᵀP_prev⁻¹x)`, which
    /// keeps the block well scaled for small states. It is dropped at `x = 0`
    /// where it reduces to `P ⪰ 0`.
    pub fn coupled(sys: &NlSystem, x: &DVector<f64>, p_prev: &SymMat, gamma_bar: f64) -> Result<Self> {
        if p_prev.dim() != sys.n {
            return Err(Error::dims("previous P", sys.n, p_prev.dim()));
        }
        if !(gamma_bar > 0.0 && gamma_bar.is_finite()) {
            return Err(Error::InvalidInput(format!("gamma_bar must be positive, got {gamma_bar}")));
        }
        let mut lq = LqProgram::new(&sys.a(x)?, &sys.b(x)?, &sys.q, &sys.r)?;
        let s = p_prev.inv_quad_form(x)?;
        if s > 0.0 {
            let z = x / s.sqrt();
            let n = sys.n;
            let mut coupling = Lmi::new("coupling", &[1, n]);
            coupling
                .set(0, 0, MatExpr::constant(DMatrix::from_element(1, 1, 1.0)))
                .set(0, 1, MatExpr::constant(DMatrix::from_row_slice(1, n, z.as_slice())))
                .set(1, 1, MatExpr::var(&lq.p));
            lq.problem.add_lmi(coupling)?;
        }
        lq.problem.add_linear_ge(
            "gamma_bar",
            ScalarExpr::constant(gamma_bar).add_scalar(&lq.gamma, -1.0),
        )?;
        Ok(Self { lq })
    }

    pub fn problem(&self) -> &sdp::SdpProblem {
        &self.lq.problem
    }

    /// Values for the program's variables, for re-verification.
    pub fn assignment(&self, y: &DMatrix<f64>, p: &SymMat, l: &SymMat, gamma: f64) -> Assignment {
        Assignment::new()
            .with_rect(&self.lq.y, y)
            .with_sym(&self.lq.p, p)
            .with_sym(&self.lq.l, l)
            .with_scalar(&self.lq.gamma, gamma)
    }

    /// Solves and rechecks the optimum with [`sdp::verify`] at
    /// `10·feas_tol`; a failed recheck is reported as `NumericalFailure`.
    pub fn solve(&self, t: usize, x: &DVector<f64>, opts: &SolverOpts) -> Result<StepCertificate> {
        let sol = self.lq.solve(opts)?;
        if !sol.is_optimal() {
            return Err(Error::Solve { status: sol.status });
        }
        let violations = sdp::verify(&self.lq.problem, &sol.assignment, 10.0 * opts.feas_tol)?;
        if let Some(v) = violations.first() {
            debug!("step {t}: `{}` fails recheck ({:e})", v.constraint, v.residual);
            return Err(Error::Solve {
                status: SolveStatus::NumericalFailure,
            });
        }
        StepCertificate::from_parts(
            t,
            x,
            sol.rect(&self.lq.y)?,
            sol.sym(&self.lq.p)?,
            sol.sym(&self.lq.l)?,
            sol.scalar(&self.lq.gamma)?,
        )
    }
}

/// First step: the LQ program at `x0`. Requires `(A(x0), B(x0))` stabilizable.
pub fn solve_initial(sys: &NlSystem, x0: &DVector<f64>, opts: &SolverOpts) -> Result<StepCertificate> {
    sys.pair_at(x0)?.check_stabilizable()?;
    StepProgram::initial(sys, x0)?.solve(0, x0, opts)
}

/// `γ̄ = (λ_max(P)/λ_min(P))·γ` from the first certificate.
pub fn gamma_bar_heuristic(cert0: &StepCertificate) -> f64 {
    cert0.p.max_eig() / cert0.p.min_eig() * cert0.gamma
}

/// Coupled step at `x` given the previous `P`.
pub fn solve_step(
    sys: &NlSystem,
    t: usize,
    x: &DVector<f64>,
    p_prev: &SymMat,
    gamma_bar: f64,
    opts: &SolverOpts,
) -> Result<StepCertificate> {
    StepProgram::coupled(sys, x, p_prev, gamma_bar)?.solve(t, x, opts)
}

/// Lyapunov conditions between two consecutive certificates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionReport {
    /// `γ̄⁻¹‖x‖² ≤ V_t(x_t) ≤ ‖x‖²`.
    pub sandwich: bool,
    /// `V_{t-1}(x_t) < V_{t-1}(x_{t-1})`.
    pub decrease: bool,
    /// `V_t(x_t) ≤ V_{t-1}(x_t)`.
    pub cross_step: bool,
    /// `V_{t-1}(x_t) ≤ (1 − γ̄⁻¹)V_{t-1}(x_{t-1})`; withheld unless the
    /// previous `P − I` is nonsingular.
    pub geometric: Option<bool>,
    /// `λ_min(P_{t-1} − I)`.
    pub nonsingular_margin: f64,
}

impl ConditionReport {
    pub fn asymptotic(&self) -> bool {
        self.sandwich && self.decrease && self.cross_step
    }
}

/// Evaluates the Lyapunov conditions for the transition
/// `(x_prev, cert_prev) → (x_now, cert_now)`.
pub fn check_conditions(cert_prev: &StepCertificate, cert_now: &StepCertificate, gamma_bar: f64) -> Result<ConditionReport> {
    let (x_prev, x_now) = (&cert_prev.x, &cert_now.x);
    let nx = x_now.norm_squared();
    let v_now = cert_now.v;
    let v_prev_prev = cert_prev.v;
    let v_prev_now = cert_prev.lyapunov(x_now)?;
    let slack = |a: f64| CHECK_TOL * (a.abs() + f64::MIN_POSITIVE);

    let sandwich = nx / gamma_bar <= v_now + slack(v_now) && v_now <= nx + slack(nx);
    let decrease = if x_prev.norm() < EQUILIBRIUM_TOL {
        v_prev_now <= v_prev_prev
    } else {
        v_prev_now < v_prev_prev
    };
    let cross_step = v_now <= v_prev_now + slack(v_prev_now);
    let geometric = cert_prev
        .nonsingular()
        .then(|| v_prev_now <= (1.0 - 1.0 / gamma_bar) * v_prev_prev + slack(v_prev_prev));
    Ok(ConditionReport {
        sandwich,
        decrease,
        cross_step,
        geometric,
        nonsingular_margin: cert_prev.nonsingular_margin(),
    })
}

/// Bounds every optimal step solution satisfies. With unit weights they read
/// `I ⪯ P ⪯ γ̄I`, `tr L ≤ γ̄ − n`, `‖Y‖² ≤ γ̄(γ̄ − n)`; general weights scale
/// them by `λ_min(Q)` and `λ_min(R)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolutionBounds {
    pub p_lower: bool,
    pub p_upper: bool,
    pub trace_l: bool,
    pub y_norm: bool,
    /// `λ_max(A_clᵀP⁻¹A_cl − P⁻¹) < 0`.
    pub decrease_negative: bool,
    /// `A_clᵀP⁻¹A_cl − P⁻¹ ⪯ −λ_min(P⁻¹)P⁻¹`; only asserted when `P − I`
    /// is nonsingular.
    pub decrease_geometric: Option<bool>,
}

impl SolutionBounds {
    pub fn all(&self) -> bool {
        self.p_lower
            && self.p_upper
            && self.trace_l
            && self.y_norm
            && self.decrease_negative
            && self.decrease_geometric.unwrap_or(true)
    }
}

pub fn check_bounds(sys: &NlSystem, cert: &StepCertificate, gamma_bar: f64) -> Result<SolutionBounds> {
    let qmin = sys.q.min_eig();
    let rmin = sys.r.min_eig();
    let p_max = gamma_bar / qmin;
    let l_max = (gamma_bar - sys.q.trace()) / rmin;
    let tol = |a: f64| CHECK_TOL * (1.0 + a.abs());

    let eigs = cert.p.eigenvalues();
    let (pmin, pmax) = (eigs[0], eigs[eigs.len() - 1]);
    let y_norm2 = crate::matcore::spectral_norm(&cert.y).powi(2);
    let lcl = cert.decrease_operator(sys, &cert.x)?;
    let pinv = cert.p.spd_inverse()?;
    let geo = cert.nonsingular().then(|| {
        let gap = &lcl + &pinv.scale(pinv.min_eig());
        gap.max_eig() <= CHECK_TOL * pinv.spectral_norm()
    });
    Ok(SolutionBounds {
        p_lower: pmin >= 1.0 - tol(1.0),
        p_upper: pmax <= p_max + tol(p_max),
        trace_l: cert.l.trace() <= l_max + tol(l_max),
        y_norm: y_norm2 <= p_max * l_max.max(0.0) + tol(p_max * l_max.max(0.0)),
        decrease_negative: lcl.max_eig() < 0.0,
        decrease_geometric: geo,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    /// Optimal solution of the step program.
    Certified,
    /// Step program failed; the scaled previous solution was verified instead.
    InfeasibleFallback,
    /// No certificate; the previous gain is held.
    Failed,
    /// `‖x_t‖ < 1e-12`; `u_t = 0`.
    Equilibrium,
}

impl fmt::Display for StepStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StepStatus::Certified => "certified",
            StepStatus::InfeasibleFallback => "infeasible_fallback",
            StepStatus::Failed => "failed",
            StepStatus::Equilibrium => "equilibrium",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub t: usize,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub status: StepStatus,
    /// Backend status when the step program did not solve.
    pub solve_status: Option<SolveStatus>,
    pub cert: Option<StepCertificate>,
    /// Conditions against the previous certified step.
    pub conditions: Option<ConditionReport>,
    /// Envelope `‖x_t‖² ≤ γ̄(1 − γ̄⁻¹)ᵗ‖x_0‖²`; only asserted while every
    /// `P − I` so far was nonsingular.
    pub envelope: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OnlineRun {
    pub steps: Vec<StepRecord>,
    /// Final state after the last step.
    pub x_final: DVector<f64>,
    /// `None` for the uncoupled variant.
    pub gamma_bar: Option<f64>,
}

impl OnlineRun {
    pub fn states(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.steps.iter().map(|s| &s.x).chain(std::iter::once(&self.x_final))
    }

    pub fn count(&self, status: StepStatus) -> usize {
        self.steps.iter().filter(|s| s.status == status).count()
    }

    pub fn certs(&self) -> impl Iterator<Item = &StepCertificate> {
        self.steps.iter().filter_map(|s| s.cert.as_ref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Coupled,
    Uncoupled,
}

/// Runs the coupled controller for `steps` steps from `x0`. `γ̄` defaults to
/// [`gamma_bar_heuristic`] of the first certificate.
///
/// Only a non-stabilizable pair at `x0` or malformed input is an error;
/// every later failure is recorded in the step status.
pub fn run_online(
    sys: &NlSystem,
    x0: &DVector<f64>,
    steps: usize,
    gamma_bar: Option<f64>,
    opts: &SolverOpts,
) -> Result<OnlineRun> {
    drive(sys, x0, steps, gamma_bar, opts, Mode::Coupled)
}

/// Re-solves the uncoupled LQ program at every state.
pub fn run_uncoupled(sys: &NlSystem, x0: &DVector<f64>, steps: usize, opts: &SolverOpts) -> Result<OnlineRun> {
    drive(sys, x0, steps, None, opts, Mode::Uncoupled)
}

fn drive(
    sys: &NlSystem,
    x0: &DVector<f64>,
    steps: usize,
    gamma_bar: Option<f64>,
    opts: &SolverOpts,
    mode: Mode,
) -> Result<OnlineRun> {
    sys.check_state(x0)?;
    if let Some(g) = gamma_bar {
        if !(g >= 1.0 && g.is_finite()) {
            return Err(Error::InvalidInput(format!("gamma_bar must be at least 1, got {g}")));
        }
    }
    let mut gb = gamma_bar;
    let mut records: Vec<StepRecord> = Vec::with_capacity(steps);
    let mut last: Option<StepCertificate> = None;
    let mut geometric_so_far = true;
    let mut x = x0.clone();

    for t in 0..steps {
        if x.norm() < EQUILIBRIUM_TOL {
            records.push(StepRecord {
                t,
                x: x.clone(),
                u: DVector::zeros(sys.m),
                status: StepStatus::Equilibrium,
                solve_status: None,
                cert: None,
                conditions: None,
                envelope: envelope(gb, geometric_so_far, t, &x, x0),
            });
            continue;
        }

        let attempt = match (&last, mode) {
            (Some(prev), Mode::Coupled) => solve_step(sys, t, &x, &prev.p, gb.expect("set at first certificate"), opts),
            (None, _) if t == 0 => solve_initial(sys, &x, opts),
            _ => StepProgram::initial(sys, &x).and_then(|p| p.solve(t, &x, opts)),
        };

        let (status, solve_status, cert) = match attempt {
            Ok(cert) => (StepStatus::Certified, None, Some(cert)),
            Err(Error::Solve { status }) => {
                let fallback = match (&last, gb, mode) {
                    (Some(prev), Some(g), Mode::Coupled) => feasibility::try_fallback(sys, prev, t, &x, g, opts)?,
                    _ => None,
                };
                match fallback {
                    Some(c) => (StepStatus::InfeasibleFallback, Some(status), Some(c)),
                    None => {
                        warn!("step {t}: {status:?} and no verified fallback");
                        (StepStatus::Failed, Some(status), None)
                    }
                }
            }
            Err(e @ Error::NotStabilizable { .. }) if t == 0 => return Err(e),
            Err(e @ (Error::DimensionMismatch { .. } | Error::InvalidInput(_))) => return Err(e),
            Err(e) => {
                warn!("step {t}: {e}");
                (StepStatus::Failed, None, None)
            }
        };

        if mode == Mode::Coupled && gb.is_none() {
            if let Some(c) = &cert {
                let g = gamma_bar_heuristic(c);
                debug!("gamma_bar from first certificate: {g}");
                gb = Some(g);
            }
        }

        let conditions = match (&last, &cert, gb) {
            (Some(prev), Some(now), Some(g)) if mode == Mode::Coupled => Some(check_conditions(prev, now, g)?),
            _ => None,
        };
        if let Some(c) = &cert {
            geometric_so_far &= c.nonsingular();
        }

        // a failed step holds the last gain
        let u = match (&cert, &last) {
            (Some(c), _) => c.input(&x),
            (None, Some(prev)) => prev.input(&x),
            (None, None) => DVector::zeros(sys.m),
        };
        let x_next = sys.step(&x, &u)?;
        records.push(StepRecord {
            t,
            x: x.clone(),
            u,
            status,
            solve_status,
            envelope: envelope(gb, geometric_so_far, t, &x, x0),
            conditions,
            cert: cert.clone(),
        });
        if let Some(c) = cert {
            last = Some(c);
        }
        x = x_next;
    }

    Ok(OnlineRun {
        steps: records,
        x_final: x,
        gamma_bar: if mode == Mode::Coupled { gb } else { None },
    })
}

fn envelope(gb: Option<f64>, geometric: bool, t: usize, x: &DVector<f64>, x0: &DVector<f64>) -> Option<bool> {
    let g = gb?;
    if !geometric {
        return None;
    }
    let bound = g * (1.0 - 1.0 / g).powi(t as i32) * x0.norm_squared();
    Some(x.norm_squared() <= bound * (1.0 + CHECK_TOL))
}
