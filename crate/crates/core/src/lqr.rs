//! Discrete-time LQR for a fixed pair `(A, B)`, by Riccati iteration and by
//! semidefinite programming over the closed-loop Gramian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{spectral_norm, spectral_radius, SymMat};
use crate::sdp::{
    self, Lmi, MatExpr, RectVar, ScalarExpr, ScalarVar, SdpProblem, SdpSolution, SolveStatus,
    SolverOpts, SymVar,
};

/// Rank tolerance of the PBH stabilizability test.
pub const PBH_RANK_TOL: f64 = 1e-8;

/// Margin by which a closed loop must be strictly Schur.
pub const SCHUR_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LtiPair {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: SymMat,
    pub r: SymMat,
}

impl LtiPair {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, q: SymMat, r: SymMat) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::dims("LtiPair A", "square, n >= 1", format!("{}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::dims("LtiPair B", format!("{n}xm, m >= 1"), format!("{}x{}", b.nrows(), b.ncols())));
        }
        if q.dim() != n {
            return Err(Error::dims("LtiPair Q", n, q.dim()));
        }
        if r.dim() != b.ncols() {
            return Err(Error::dims("LtiPair R", b.ncols(), r.dim()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("A and B must be finite".into()));
        }
        if q.min_eig() <= 0.0 || r.min_eig() <= 0.0 {
            return Err(Error::InvalidInput("Q and R must be positive definite".into()));
        }
        Ok(Self { a, b, q, r })
    }

    /// Pair with identity weights.
    pub fn unweighted(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let (n, m) = (a.nrows(), b.ncols());
        Self::new(a, b, SymMat::identity(n), SymMat::identity(m.max(1)))
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// PBH test on every eigenvalue with `|λ| ≥ 1`: `[A − λI, B]` must have
    /// full row rank. Complex eigenvalues use the real `2n` embedding.
    pub fn check_stabilizable(&self) -> Result<()> {
        let n = self.n();
        let m = self.m();
        let scale = 1.0 + spectral_norm(&self.a) + spectral_norm(&self.b);
        for lambda in self.a.complex_eigenvalues().iter() {
            if lambda.norm() < 1.0 - PBH_RANK_TOL {
                continue;
            }
            let (re, im) = (lambda.re, lambda.im);
            let mut h = DMatrix::zeros(2 * n, 2 * (n + m));
            let shifted = &self.a - DMatrix::identity(n, n) * re;
            let imag = DMatrix::identity(n, n) * im;
            // [A − λI, B] acting on real and imaginary parts
            h.view_mut((0, 0), (n, n)).copy_from(&shifted);
            h.view_mut((0, n), (n, n)).copy_from(&imag);
            h.view_mut((n, 0), (n, n)).copy_from(&(-&imag));
            h.view_mut((n, n), (n, n)).copy_from(&shifted);
            h.view_mut((0, 2 * n), (n, m)).copy_from(&self.b);
            h.view_mut((n, 2 * n + m), (n, m)).copy_from(&self.b);
            let sv = h.singular_values();
            let rank = sv.iter().filter(|s| **s > PBH_RANK_TOL * scale).count();
            if rank < 2 * n {
                return Err(Error::NotStabilizable {
                    modulus: lambda.norm(),
                });
            }
        }
        Ok(())
    }

    pub fn is_stabilizable(&self) -> bool {
        self.check_stabilizable().is_ok()
    }

    /// Residual `AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA + Q − P`.
    pub fn riccati_residual(&self, p: &SymMat) -> Result<SymMat> {
        let next = self.riccati_map(p)?;
        Ok(&next - p)
    }

    fn riccati_map(&self, p: &SymMat) -> Result<SymMat> {
        let (a, b) = (&self.a, &self.b);
        let pm = p.matrix();
        let at_p = a.transpose() * pm;
        let gain_den = SymMat::new(self.r.matrix() + b.transpose() * pm * b)?;
        let bt_pa = b.transpose() * pm * a;
        let correction = (&at_p * b) * gain_den.spd_solve(&bt_pa)?;
        SymMat::new(at_p * a - correction + self.q.matrix())
    }
}

/// LQR gain and the objects certifying it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LqrResult {
    pub k: DMatrix<f64>,
    /// Riccati solution; only the Riccati route produces it.
    pub p_r: Option<SymMat>,
    /// Closed-loop Gramian `Σ (A+BK)ⁱ((A+BK)ᵀ)ⁱ`.
    pub p: SymMat,
    pub l: SymMat,
    pub gamma: f64,
}

impl LqrResult {
    pub fn closed_loop(&self, pair: &LtiPair) -> DMatrix<f64> {
        &pair.a + &pair.b * &self.k
    }
}

/// Riccati solution by the fixed-point iteration started at `Q`.
pub fn dare_iterate(pair: &LtiPair, tol: f64, max_iter: usize) -> Result<SymMat> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    pair.check_stabilizable()?;
    let mut p = pair.q.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let next = pair.riccati_map(&p)?;
        residual = (&next - &p).spectral_norm();
        p = next;
        if residual <= tol {
            // the step size bounds the residual at the new iterate only up to
            // the contraction factor, so confirm directly
            let r = pair.riccati_residual(&p)?.spectral_norm();
            if r <= tol {
                return Ok(p);
            }
        }
        if !residual.is_finite() {
            break;
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual,
    })
}

/// Solution of `F P Fᵀ − P + W = 0` for Schur `F`, by doubling.
pub fn lyapunov_sum(f: &DMatrix<f64>, w: &SymMat) -> Result<SymMat> {
    let n = f.nrows();
    if f.ncols() != n || w.dim() != n {
        return Err(Error::dims("lyapunov_sum", n, format!("{}x{} / {}", f.nrows(), f.ncols(), w.dim())));
    }
    let rho = spectral_radius(f);
    if rho >= 1.0 - SCHUR_MARGIN {
        return Err(Error::NotStabilizable { modulus: rho });
    }
    let mut p = w.matrix().clone();
    let mut fk = f.clone();
    for _ in 0..64 {
        let inc = &fk * &p * fk.transpose();
        p += &inc;
        fk = &fk * &fk;
        if inc.amax() <= f64::EPSILON * p.amax() {
            return SymMat::new(p);
        }
    }
    let residual = (f * &p * f.transpose() - &p + w.matrix()).amax();
    Err(Error::NoConvergence {
        iterations: 64,
        residual,
    })
}

/// Completes a gain into a result: Gramian, `L = KPKᵀ` and the weighted cost.
pub fn certify_gain(pair: &LtiPair, k: DMatrix<f64>, p_r: Option<SymMat>) -> Result<LqrResult> {
    let acl = &pair.a + &pair.b * &k;
    let p = lyapunov_sum(&acl, &SymMat::identity(pair.n()))?;
    let l = SymMat::new(&k * p.matrix() * k.transpose())?;
    let gamma = (pair.q.matrix() * p.matrix()).trace() + (pair.r.matrix() * l.matrix()).trace();
    Ok(LqrResult { k, p_r, p, l, gamma })
}

/// LQR by the Riccati route.
pub fn lqr_gain(pair: &LtiPair) -> Result<LqrResult> {
    let p_r = dare_iterate(pair, 1e-10, 1_000_000)?;
    let pm = p_r.matrix();
    let den = SymMat::new(pair.r.matrix() + pair.b.transpose() * pm * &pair.b)?;
    let k = -den.spd_solve(&(pair.b.transpose() * pm * &pair.a))?;
    certify_gain(pair, k, Some(p_r))
}

/// Decision variables of the LQ program in `(Y, P, L, γ)`.
#[derive(Debug, Clone)]
pub(crate) struct LqProgram {
    pub problem: SdpProblem,
    pub y: RectVar,
    pub p: SymVar,
    pub l: SymVar,
    pub gamma: ScalarVar,
}

impl LqProgram {
    /// `min γ` subject to
    /// `[P − I, AP + BY; ·, P] ⪰ 0`, `[L, Y; Yᵀ, P] ⪰ 0` and
    /// `γ ≥ tr(QP) + tr(RL)`.
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &SymMat, r: &SymMat) -> Result<Self> {
        let (n, m) = (a.nrows(), b.ncols());
        let mut problem = SdpProblem::new();
        let y = problem.rect_var("Y", m, n);
        let p = problem.sym_var("P", n);
        let l = problem.sym_var("L", m);
        let gamma = problem.scalar_var("gamma");
        let id = DMatrix::identity(n, n);

        let mut decrease = Lmi::new("decrease", &[n, n]);
        decrease
            .set(0, 0, MatExpr::var(&p).add_const(&-&id))
            .set(0, 1, MatExpr::zeros(n, n).add_left(a, &p).add_left(b, &y))
            .set(1, 1, MatExpr::var(&p));
        problem.add_lmi(decrease)?;

        let mut input = Lmi::new("input", &[m, n]);
        input
            .set(0, 0, MatExpr::var(&l))
            .set(0, 1, MatExpr::var(&y))
            .set(1, 1, MatExpr::var(&p));
        problem.add_lmi(input)?;

        problem.add_linear_ge(
            "cost",
            ScalarExpr::zero()
                .add_scalar(&gamma, 1.0)
                .add_trace(&-q.matrix(), &p)
                .add_trace(&-r.matrix(), &l),
        )?;
        problem.set_objective(ScalarExpr::zero().add_scalar(&gamma, 1.0));
        Ok(Self { problem, y, p, l, gamma })
    }

    pub fn solve(&self, opts: &SolverOpts) -> Result<SdpSolution> {
        sdp::solve(&self.problem, opts)
    }
}

/// LQR by the SDP route; the gain is recovered as `K = YP⁻¹`.
pub fn lqr_sdp(pair: &LtiPair, opts: &SolverOpts) -> Result<LqrResult> {
    pair.check_stabilizable()?;
    let prog = LqProgram::new(&pair.a, &pair.b, &pair.q, &pair.r)?;
    let sol = prog.solve(opts)?;
    if !sol.is_optimal() {
        return Err(Error::Solve { status: sol.status });
    }
    let p = sol.sym(&prog.p)?;
    let y = sol.rect(&prog.y)?;
    let k = p.spd_solve(&y.transpose())?.transpose();
    let acl = &pair.a + &pair.b * &k;
    if spectral_radius(&acl) >= 1.0 - SCHUR_MARGIN {
        return Err(Error::Solve {
            status: SolveStatus::NumericalFailure,
        });
    }
    Ok(LqrResult {
        k,
        p_r: None,
        l: sol.sym(&prog.l)?,
        gamma: sol.scalar(&prog.gamma)?,
        p,
    })
}

/// Optimal cost `xᵀP_r x` of the infinite-horizon problem from `x`.
pub fn cost_to_go(p_r: &SymMat, x: &DVector<f64>) -> f64 {
    p_r.quad_form(x)
}
