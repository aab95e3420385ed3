//! Recursive feasibility of the online program: the one-step scaled
//! fallback and offline robust certificates with an ellipsoidal region of
//! initial states.

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{spectral_norm, SymMat};
use crate::online::{NlSystem, StepCertificate, StepProgram};
use crate::sdp::{self, Lmi, MatExpr, ScalarExpr, SdpProblem, SolveStatus, SolverOpts, Violation};

/// Inflation applied to sampled uncertainty bounds.
pub const DELTA_INFLATION: f64 = 1.05;

/// Lower bound imposed on the Petersen multipliers.
pub const EPS_MIN: f64 = 1e-9;

/// Deviation of the closed-loop data between two consecutive states.
#[derive(Debug, Clone, Serialize)]
pub struct CouplingTerms {
    /// `[A(x_prev), B(x_prev)]`.
    pub z: DMatrix<f64>,
    /// `[A(x_now), B(x_now)] − Z`.
    pub r_dev: DMatrix<f64>,
    /// `[P; Y] P⁻¹ [P; Y]ᵀ`.
    pub m: SymMat,
    /// `Z M Zᵀ − P`.
    pub theta: SymMat,
    /// `R M Rᵀ + Z M Rᵀ + R M Zᵀ`.
    pub psi: SymMat,
}

fn stacked(sys: &NlSystem, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let (n, m) = (sys.n(), sys.m());
    let mut z = DMatrix::zeros(n, n + m);
    z.view_mut((0, 0), (n, n)).copy_from(&sys.a(x)?);
    z.view_mut((0, n), (n, m)).copy_from(&sys.b(x)?);
    Ok(z)
}

pub fn coupling_terms(sys: &NlSystem, cert_prev: &StepCertificate, x_now: &DVector<f64>) -> Result<CouplingTerms> {
    let (n, m) = (sys.n(), sys.m());
    if cert_prev.p.dim() != n || cert_prev.y.shape() != (m, n) {
        return Err(Error::dims("coupling_terms certificate", format!("P {n}x{n}, Y {m}x{n}"), format!("P {0}x{0}, Y {1}x{2}", cert_prev.p.dim(), cert_prev.y.nrows(), cert_prev.y.ncols())));
    }
    let z = stacked(sys, &cert_prev.x)?;
    let r_dev = stacked(sys, x_now)? - &z;
    let mut py = DMatrix::zeros(n + m, n);
    py.view_mut((0, 0), (n, n)).copy_from(cert_prev.p.matrix());
    py.view_mut((n, 0), (m, n)).copy_from(&cert_prev.y);
    let m_mat = SymMat::new(&py * cert_prev.p.spd_solve(&py.transpose())?)?;
    let mm = m_mat.matrix();
    let theta = SymMat::new(&z * mm * z.transpose() - cert_prev.p.matrix())?;
    let cross = &z * mm * r_dev.transpose();
    let psi = SymMat::new(&r_dev * mm * r_dev.transpose() + &cross + cross.transpose())?;
    Ok(CouplingTerms {
        z,
        r_dev,
        m: m_mat,
        theta,
        psi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Condition1 {
    pub holds: bool,
    /// `λ_min((1 − γ_prev/γ̄)I − Ψ)`.
    pub margin: f64,
}

/// Tests `Ψ ⪯ (1 − γ_prev/γ̄)I`.
pub fn check_condition1(ct: &CouplingTerms, gamma_prev: f64, gamma_bar: f64) -> Condition1 {
    let n = ct.psi.dim();
    let slack = SymMat::identity(n).scale(1.0 - gamma_prev / gamma_bar);
    let margin = (&slack - &ct.psi).min_eig();
    Condition1 {
        holds: margin >= 0.0,
        margin,
    }
}

/// Previous solution scaled by `η = γ̄/γ_prev`.
#[derive(Debug, Clone, Serialize)]
pub struct Candidate {
    pub eta: f64,
    pub y: DMatrix<f64>,
    pub p: SymMat,
    pub l: SymMat,
    pub gamma: f64,
}

pub fn scaled_fallback(cert_prev: &StepCertificate, gamma_bar: f64) -> Candidate {
    let eta = gamma_bar / cert_prev.gamma;
    Candidate {
        eta,
        y: &cert_prev.y * eta,
        p: cert_prev.p.scale(eta),
        l: cert_prev.l.scale(eta),
        gamma: cert_prev.gamma * eta,
    }
}

/// Checks `cand` against the full step program at `x` with [`sdp::verify`].
pub fn verify_candidate(
    sys: &NlSystem,
    x: &DVector<f64>,
    p_prev: &SymMat,
    gamma_bar: f64,
    cand: &Candidate,
    tol: f64,
) -> Result<Vec<Violation>> {
    let prog = StepProgram::coupled(sys, x, p_prev, gamma_bar)?;
    let values = prog.assignment(&cand.y, &cand.p, &cand.l, cand.gamma);
    sdp::verify(prog.problem(), &values, tol)
}

/// The scaled fallback at step `t`, if the one-step condition holds and the
/// candidate verifies at `10·feas_tol`.
pub fn try_fallback(
    sys: &NlSystem,
    prev: &StepCertificate,
    t: usize,
    x: &DVector<f64>,
    gamma_bar: f64,
    opts: &SolverOpts,
) -> Result<Option<StepCertificate>> {
    let ct = coupling_terms(sys, prev, x)?;
    let cond = check_condition1(&ct, prev.gamma, gamma_bar);
    if !cond.holds {
        debug!("step {t}: one-step condition fails with margin {:e}", cond.margin);
        return Ok(None);
    }
    let cand = scaled_fallback(prev, gamma_bar);
    let violations = verify_candidate(sys, x, &prev.p, gamma_bar, &cand, 10.0 * opts.feas_tol)?;
    if let Some(v) = violations.first() {
        debug!("step {t}: scaled candidate fails `{}` ({:e})", v.constraint, v.residual);
        return Ok(None);
    }
    StepCertificate::from_parts(t, x, cand.y, cand.p, cand.l, cand.gamma).map(Some)
}

/// A region of the state space.
pub trait Domain: Send + Sync {
    fn dim(&self) -> usize;

    fn contains(&self, x: &DVector<f64>) -> bool;

    /// Points covering the region, boundary included.
    fn samples(&self, count: usize) -> Vec<DVector<f64>>;

    /// Points on the boundary.
    fn boundary(&self, count: usize) -> Vec<DVector<f64>>;

    /// Largest `α` with `{x : xᵀP⁻¹x ≤ α}` inside the region. The default
    /// takes the minimum of `xᵀP⁻¹x` over boundary samples, which is exact
    /// up to sampling for regions star-shaped about the origin.
    fn ellipsoid_level(&self, p: &SymMat) -> Result<f64> {
        let mut best = f64::INFINITY;
        for b in self.boundary(20_000) {
            best = best.min(p.inv_quad_form(&b)?);
        }
        Ok(best)
    }
}

/// Axis-aligned box `lo ≤ x ≤ hi` containing the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::dims("BoxDomain bounds", lo.len(), hi.len()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && *l <= 0.0 && 0.0 <= *h && l < h)) {
            return Err(Error::InvalidInput("box must be bounded and contain the origin".into()));
        }
        Ok(Self { lo, hi })
    }

    /// `|x_i| ≤ half[i]`.
    pub fn symmetric(half: &[f64]) -> Result<Self> {
        Self::new(half.iter().map(|h| -h).collect(), half.to_vec())
    }

    fn axis(&self, i: usize, k: usize) -> impl Iterator<Item = f64> + '_ {
        let (l, h) = (self.lo[i], self.hi[i]);
        (0..k).map(move |j| l + (h - l) * j as f64 / (k - 1) as f64)
    }

    fn grid(&self, per_axis: &[usize]) -> Vec<DVector<f64>> {
        let n = self.lo.len();
        let mut out = vec![DVector::zeros(n)];
        for (i, &k) in per_axis.iter().enumerate() {
            let vals: Vec<f64> = self.axis(i, k).collect();
            out = out
                .into_iter()
                .flat_map(|p| {
                    vals.iter().map(move |&v| {
                        let mut q = p.clone();
                        q[i] = v;
                        q
                    })
                })
                .collect();
        }
        out
    }
}

impl Domain for BoxDomain {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| l <= v && v <= h)
    }

    fn samples(&self, count: usize) -> Vec<DVector<f64>> {
        let n = self.dim();
        let k = ((count as f64).powf(1.0 / n as f64).floor() as usize).max(2);
        self.grid(&vec![k; n])
    }

    fn boundary(&self, count: usize) -> Vec<DVector<f64>> {
        let n = self.dim();
        if n == 1 {
            return vec![DVector::from_element(1, self.lo[0]), DVector::from_element(1, self.hi[0])];
        }
        let faces = 2 * n;
        let k = (((count / faces).max(1) as f64).powf(1.0 / (n - 1) as f64).floor() as usize).max(2);
        let mut out = Vec::new();
        for i in 0..n {
            let mut per_axis = vec![k; n];
            per_axis[i] = 2;
            // the two-point axis is exactly {lo_i, hi_i}
            out.extend(self.grid(&per_axis));
        }
        out
    }

    /// Exact: the ellipsoid's extent along axis `i` is `√(α P_ii)`.
    fn ellipsoid_level(&self, p: &SymMat) -> Result<f64> {
        if p.dim() != self.dim() {
            return Err(Error::dims("ellipsoid_level", self.dim(), p.dim()));
        }
        Ok((0..self.dim())
            .map(|i| {
                let r = (-self.lo[i]).min(self.hi[i]);
                r * r / p.get(i, i)
            })
            .fold(f64::INFINITY, f64::min))
    }
}

/// Structure of the sampled uncertainty bound `ÂÂᵀ ⪯ ΔΔᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaShape {
    /// `Δ = σI`, `σ` the largest sampled spectral norm.
    Isotropic,
    /// `Δ = diag(√d_i)` over nonzero rows, `d_i` the largest sampled row sum
    /// `Σ_j |(ÂÂᵀ)_ij|`. Much tighter when only some rows of `Â` vary.
    #[default]
    RowDiagonal,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaEstimate {
    pub delta: DMatrix<f64>,
    pub delta_b: DMatrix<f64>,
    /// Largest sampled `‖Â(x)‖₂` and `‖B̂(x)‖₂`, before inflation.
    pub sigma_a: f64,
    pub sigma_b: f64,
}

fn bound_matrix(devs: &[DMatrix<f64>], n: usize, shape: DeltaShape) -> (DMatrix<f64>, f64) {
    let sigma = devs.iter().map(spectral_norm).fold(0.0, f64::max);
    let delta = match shape {
        DeltaShape::Isotropic => DMatrix::identity(n, n) * (DELTA_INFLATION * sigma),
        DeltaShape::RowDiagonal => {
            let mut d = vec![0.0f64; n];
            for dev in devs {
                let g = dev * dev.transpose();
                for (i, di) in d.iter_mut().enumerate() {
                    *di = di.max(g.row(i).iter().map(|v| v.abs()).sum());
                }
            }
            let rows: Vec<usize> = (0..n).filter(|&i| d[i] > 0.0).collect();
            if rows.is_empty() {
                DMatrix::zeros(n, 1)
            } else {
                let mut delta = DMatrix::zeros(n, rows.len());
                for (c, &i) in rows.iter().enumerate() {
                    delta[(i, c)] = DELTA_INFLATION * d[i].sqrt();
                }
                delta
            }
        }
    };
    (delta, sigma)
}

/// Bounds `A(x) − Ā` and `B(x) − B̄` over samples of `domain`.
pub fn estimate_delta(
    sys: &NlSystem,
    domain: &dyn Domain,
    a_bar: &DMatrix<f64>,
    b_bar: &DMatrix<f64>,
    samples: usize,
    shape: DeltaShape,
) -> Result<DeltaEstimate> {
    if domain.dim() != sys.n() {
        return Err(Error::dims("estimate_delta domain", sys.n(), domain.dim()));
    }
    let mut da = Vec::new();
    let mut db = Vec::new();
    for x in domain.samples(samples) {
        let a = sys.a(&x).map_err(|_| Error::DomainTooLarge(format!("A is not finite at {x}")))? - a_bar;
        let b = sys.b(&x).map_err(|_| Error::DomainTooLarge(format!("B is not finite at {x}")))? - b_bar;
        if a.amax() > 1e12 || b.amax() > 1e12 {
            return Err(Error::DomainTooLarge(format!("deviation exceeds 1e12 at {x}")));
        }
        da.push(a);
        db.push(b);
    }
    let (delta, sigma_a) = bound_matrix(&da, sys.n(), shape);
    let (delta_b, sigma_b) = bound_matrix(&db, sys.n(), shape);
    Ok(DeltaEstimate {
        delta,
        delta_b,
        sigma_a,
        sigma_b,
    })
}

/// Offline certificate: a constant `(P, Y)` robustly feasible over the domain.
#[derive(Debug, Clone, Serialize)]
pub struct OfflineCert {
    pub eps1: f64,
    /// Multiplier of the input uncertainty; `None` for constant `B`.
    pub eps2: Option<f64>,
    pub p: SymMat,
    pub y: DMatrix<f64>,
    pub delta: DMatrix<f64>,
    pub delta_b: Option<DMatrix<f64>>,
    pub a_bar: DMatrix<f64>,
    pub b_bar: DMatrix<f64>,
    /// `multiplier·(tr(QP) + tr(R·YP⁻¹Yᵀ))`.
    pub gamma_bar: f64,
    /// Level of the largest ellipsoid `xᵀP⁻¹x ≤ α` inside the domain.
    pub alpha: f64,
}

/// `(Y, P, L, γ)` with `L = YP⁻¹Yᵀ` and `γ = tr(QP) + tr(RL)`.
#[derive(Debug, Clone)]
pub struct ConstantSolution {
    pub y: DMatrix<f64>,
    pub p: SymMat,
    pub l: SymMat,
    pub gamma: f64,
}

impl OfflineCert {
    pub fn gain(&self) -> Result<DMatrix<f64>> {
        Ok(self.p.spd_solve(&self.y.transpose())?.transpose())
    }

    pub fn constant_solution(&self, q: &SymMat, r: &SymMat) -> Result<ConstantSolution> {
        let l = SymMat::new(&self.y * self.p.spd_solve(&self.y.transpose())?)?;
        let gamma = (q.matrix() * self.p.matrix()).trace() + (r.matrix() * l.matrix()).trace();
        Ok(ConstantSolution {
            y: self.y.clone(),
            p: self.p.clone(),
            l,
            gamma,
        })
    }

    /// Whether `xᵀP⁻¹x ≤ α`.
    pub fn contains(&self, x: &DVector<f64>) -> Result<bool> {
        Ok(self.p.inv_quad_form(x)? <= self.alpha)
    }

    /// Uniform sample from the ellipsoid `xᵀP⁻¹x ≤ α`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let n = self.p.dim();
        let chol = self
            .p
            .matrix()
            .clone()
            .cholesky()
            .ok_or(Error::SingularBlock { min_eig: self.p.min_eig() })?;
        let mut v = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let norm = v.norm();
        if norm == 0.0 {
            return Ok(DVector::zeros(n));
        }
        let radius: f64 = rng.random::<f64>().powf(1.0 / n as f64);
        v *= radius * self.alpha.sqrt() / norm;
        Ok(chol.l() * v)
    }
}

/// Result of an offline synthesis; infeasibility is an outcome, not an error.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum OfflineOutcome {
    Certified(Box<OfflineCert>),
    NoCertificate { status: SolveStatus },
}

impl OfflineOutcome {
    pub fn cert(&self) -> Option<&OfflineCert> {
        match self {
            OfflineOutcome::Certified(c) => Some(c),
            OfflineOutcome::NoCertificate { .. } => None,
        }
    }
}

/// Inputs shared by both offline programs.
#[derive(Debug, Clone)]
pub struct OfflineSpec<'a> {
    pub a_bar: &'a DMatrix<f64>,
    pub b_bar: &'a DMatrix<f64>,
    pub delta: &'a DMatrix<f64>,
    /// Bound on `B(x) − B̄`; `None` when `B` is constant.
    pub delta_b: Option<&'a DMatrix<f64>>,
    pub q: &'a SymMat,
    pub r: &'a SymMat,
    pub gamma_bar_multiplier: f64,
}

struct OfflineVars {
    problem: SdpProblem,
    p: sdp::SymVar,
    y: sdp::RectVar,
    eps1: sdp::ScalarVar,
    eps2: Option<sdp::ScalarVar>,
}

/// Robust LMI in `(ε₁[, ε₂], P, Y)`:
/// `[P − I − ε₁ΔΔᵀ − ε₂Δ_BΔ_Bᵀ, ĀP + B̄Y, (0), 0; ·, P, (Yᵀ), P; (·, ·, ε₂I, 0); 0, P, (0), ε₁I] ⪰ 0`,
/// the parenthesized blocks present only with input uncertainty.
fn offline_program(spec: &OfflineSpec) -> Result<OfflineVars> {
    let n = spec.a_bar.nrows();
    let m = spec.b_bar.ncols();
    if spec.a_bar.ncols() != n || spec.b_bar.nrows() != n || spec.delta.nrows() != n {
        return Err(Error::dims("offline program", n, format!("A {}x{}, B {}x{}, Delta {}x{}", spec.a_bar.nrows(), spec.a_bar.ncols(), spec.b_bar.nrows(), m, spec.delta.nrows(), spec.delta.ncols())));
    }
    if let Some(db) = spec.delta_b {
        if db.nrows() != n {
            return Err(Error::dims("offline Delta_B rows", n, db.nrows()));
        }
    }
    let mut problem = SdpProblem::new();
    let p = problem.sym_var("P", n);
    let y = problem.rect_var("Y", m, n);
    let eps1 = problem.scalar_var("eps1");
    let eps2 = spec.delta_b.map(|_| problem.scalar_var("eps2"));
    let id = DMatrix::identity(n, n);

    let dd = spec.delta * spec.delta.transpose();
    let mut top = MatExpr::var(&p).add_const(&-&id).add_scaled(&eps1, &-dd);
    if let (Some(e2), Some(db)) = (&eps2, spec.delta_b) {
        top = top.add_scaled(e2, &-(db * db.transpose()));
    }
    let sizes: Vec<usize> = if eps2.is_some() { vec![n, n, m, n] } else { vec![n, n, n] };
    let last = sizes.len() - 1;
    let mut lmi = Lmi::new("robust decrease", &sizes);
    lmi.set(0, 0, top)
        .set(0, 1, MatExpr::zeros(n, n).add_left(spec.a_bar, &p).add_left(spec.b_bar, &y))
        .set(1, 1, MatExpr::var(&p))
        .set(1, last, MatExpr::var(&p))
        .set(last, last, MatExpr::zeros(n, n).add_scaled(&eps1, &id));
    if let Some(e2) = &eps2 {
        lmi.set(1, 2, MatExpr::var_t(&y))
            .set(2, 2, MatExpr::zeros(m, m).add_scaled(e2, &DMatrix::identity(m, m)));
    }
    problem.add_lmi(lmi)?;
    problem.add_linear_ge("eps1 > 0", ScalarExpr::constant(-EPS_MIN).add_scalar(&eps1, 1.0))?;
    if let Some(e2) = &eps2 {
        problem.add_linear_ge("eps2 > 0", ScalarExpr::constant(-EPS_MIN).add_scalar(e2, 1.0))?;
    }
    problem.set_objective(ScalarExpr::zero().add_trace(&id, &p));
    Ok(OfflineVars {
        problem,
        p,
        y,
        eps1,
        eps2,
    })
}

/// Solves the robust LMI and derives `γ̄` and the ellipsoid level `α`.
pub fn certify_offline(spec: &OfflineSpec, domain: &dyn Domain, opts: &SolverOpts) -> Result<OfflineOutcome> {
    if !(spec.gamma_bar_multiplier >= 1.0) {
        return Err(Error::InvalidInput(format!("gamma_bar multiplier must be at least 1, got {}", spec.gamma_bar_multiplier)));
    }
    if domain.dim() != spec.a_bar.nrows() {
        return Err(Error::dims("offline domain", spec.a_bar.nrows(), domain.dim()));
    }
    let vars = offline_program(spec)?;
    let sol = sdp::solve(&vars.problem, opts)?;
    if !sol.is_optimal() {
        return Ok(OfflineOutcome::NoCertificate { status: sol.status });
    }
    let p = sol.sym(&vars.p)?;
    let y = sol.rect(&vars.y)?;
    let l = SymMat::new(&y * p.spd_solve(&y.transpose())?)?;
    let gamma_bar = spec.gamma_bar_multiplier
        * ((spec.q.matrix() * p.matrix()).trace() + (spec.r.matrix() * l.matrix()).trace());
    let alpha = domain.ellipsoid_level(&p)?;
    Ok(OfflineOutcome::Certified(Box::new(OfflineCert {
        eps1: sol.scalar(&vars.eps1)?,
        eps2: vars.eps2.as_ref().map(|e| sol.scalar(e)).transpose()?,
        p,
        y,
        delta: spec.delta.clone(),
        delta_b: spec.delta_b.cloned(),
        a_bar: spec.a_bar.clone(),
        b_bar: spec.b_bar.clone(),
        gamma_bar,
        alpha,
    })))
}

/// Offline certificate for constant `B`.
pub fn solve_offline(
    a_bar: &DMatrix<f64>,
    b: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    domain: &dyn Domain,
    opts: &SolverOpts,
) -> Result<OfflineOutcome> {
    let (n, m) = (a_bar.nrows(), b.ncols());
    let (q, r) = (SymMat::identity(n), SymMat::identity(m));
    certify_offline(
        &OfflineSpec {
            a_bar,
            b_bar: b,
            delta,
            delta_b: None,
            q: &q,
            r: &r,
            gamma_bar_multiplier: 1.0,
        },
        domain,
        opts,
    )
}

/// Offline certificate for state-dependent `B`.
pub fn solve_offline_bx(
    a_bar: &DMatrix<f64>,
    b_bar: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    delta_b: &DMatrix<f64>,
    domain: &dyn Domain,
    opts: &SolverOpts,
) -> Result<OfflineOutcome> {
    let (n, m) = (a_bar.nrows(), b_bar.ncols());
    let (q, r) = (SymMat::identity(n), SymMat::identity(m));
    certify_offline(
        &OfflineSpec {
            a_bar,
            b_bar,
            delta,
            delta_b: Some(delta_b),
            q: &q,
            r: &r,
            gamma_bar_multiplier: 1.0,
        },
        domain,
        opts,
    )
}

/// Residual of the robust LMI at a certificate, rebuilt independently.
pub fn verify_offline(cert: &OfflineCert, tol: f64) -> Result<Vec<Violation>> {
    let (n, m) = (cert.a_bar.nrows(), cert.b_bar.ncols());
    let (q, r) = (SymMat::identity(n), SymMat::identity(m));
    let spec = OfflineSpec {
        a_bar: &cert.a_bar,
        b_bar: &cert.b_bar,
        delta: &cert.delta,
        delta_b: cert.delta_b.as_ref(),
        q: &q,
        r: &r,
        gamma_bar_multiplier: 1.0,
    };
    let vars = offline_program(&spec)?;
    let mut values = sdp::Assignment::new()
        .with_sym(&vars.p, &cert.p)
        .with_rect(&vars.y, &cert.y)
        .with_scalar(&vars.eps1, cert.eps1);
    if let (Some(v), Some(e)) = (&vars.eps2, cert.eps2) {
        values = values.with_scalar(v, e);
    }
    sdp::verify(&vars.problem, &values, tol)
}
