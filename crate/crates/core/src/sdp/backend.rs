//! Clarabel backend. The conic form is `min qᵀx s.t. b − Ax ∈ K` with one
//! PSD triangle cone per LMI and a nonnegative cone for the linear rows.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use log::debug;
use nalgebra::DMatrix;

use super::{
    verify::{residuals, verify}, Assignment, SdpProblem, SdpSolution, SolveStatus, SolverOpts,
};
use crate::error::{Error, Result};

/// Appends `svec(m)` (upper triangle, column-major, off-diagonals scaled
/// by √2) to `out`, skipping exact zeros, as `(row, value)` pairs.
fn svec_entries(m: &DMatrix<f64>, row0: usize, out: &mut Vec<(usize, f64)>) {
    let s2 = std::f64::consts::SQRT_2;
    let mut idx = row0;
    for col in 0..m.ncols() {
        for row in 0..=col {
            let v = if row == col {
                m[(row, col)]
            } else {
                0.5 * (m[(row, col)] + m[(col, row)]) * s2
            };
            if v != 0.0 {
                out.push((idx, v));
            }
            idx += 1;
        }
    }
}

fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

pub(crate) struct ConicForm {
    pub q: Vec<f64>,
    pub a: CscMatrix<f64>,
    pub b: Vec<f64>,
    pub cones: Vec<SupportedConeT<f64>>,
}

pub(crate) fn to_conic(problem: &SdpProblem) -> ConicForm {
    let n = problem.n_unknowns;
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut b = Vec::new();
    let mut cones = Vec::new();

    let mut row0 = 0;
    for lmi in &problem.lmis {
        let size = lmi.size();
        let (f0, fk) = lmi.compile(&problem.vars);
        let mut b_blk = vec![0.0; svec_len(size)];
        let mut entries = Vec::new();
        svec_entries(&f0, 0, &mut entries);
        for (r, v) in entries {
            b_blk[r] = v;
        }
        b.extend(b_blk);
        for (k, c) in fk {
            let mut entries = Vec::new();
            svec_entries(&c, row0, &mut entries);
            for (r, v) in entries {
                rows.push(r);
                cols.push(k);
                vals.push(-v);
            }
        }
        cones.push(SupportedConeT::PSDTriangleConeT(size));
        row0 += svec_len(size);
    }

    if !problem.linear.is_empty() {
        for lin in &problem.linear {
            b.push(lin.expr.constant_part());
            for (k, c) in lin.expr.coefficients(&problem.vars) {
                rows.push(row0);
                cols.push(k);
                vals.push(-c);
            }
            row0 += 1;
        }
        cones.push(SupportedConeT::NonnegativeConeT(problem.linear.len()));
    }

    let mut q = vec![0.0; n];
    for (k, c) in problem.objective.coefficients(&problem.vars) {
        q[k] += c;
    }

    ConicForm {
        q,
        a: CscMatrix::new_from_triplets(row0, n, rows, cols, vals),
        b,
        cones,
    }
}

fn map_status(s: SolverStatus) -> SolveStatus {
    match s {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::IterationLimit,
        _ => SolveStatus::NumericalFailure,
    }
}

/// Solves `problem`. Solver-side failures are reported through
/// [`SdpSolution::status`]; `Err` is reserved for malformed input.
///
/// An `Optimal` backend result that fails [`verify`](super::verify) at
/// `opts.feas_tol` is demoted to `NumericalFailure`.
pub fn solve(problem: &SdpProblem, opts: &SolverOpts) -> Result<SdpSolution> {
    if problem.n_unknowns == 0 {
        return Err(Error::InvalidInput("problem declares no variables".into()));
    }
    let conic = to_conic(problem);
    let n = problem.n_unknowns;
    let settings = DefaultSettingsBuilder::default()
        .max_iter(opts.max_iter)
        .verbose(opts.verbose)
        .tol_gap_abs(opts.gap_tol)
        .tol_gap_rel(opts.gap_tol)
        .tol_feas(opts.kkt_tol)
        .chordal_decomposition_enable(false)
        .build()
        .map_err(|e| Error::InvalidInput(format!("solver settings: {e}")))?;
    let p = CscMatrix::zeros((n, n));

    let mut solver = match DefaultSolver::new(&p, &conic.q, &conic.a, &conic.b, &conic.cones, settings) {
        Ok(s) => s,
        Err(e) => return Err(Error::InvalidInput(format!("solver setup: {e}"))),
    };
    solver.solve();
    let raw = solver.solution.status;
    let mut status = map_status(raw);

    let assignment = Assignment::from_flat(problem, &solver.solution.x);
    let residuals = residuals(problem, &assignment)?;
    let objective_value = problem.objective.eval(&assignment)?;

    if status == SolveStatus::Optimal {
        if let Some(worst) = verify(problem, &assignment, opts.feas_tol)?.first() {
            debug!(
                "demoting {raw:?}: constraint `{}` residual {:e} beyond {:e}",
                worst.constraint, worst.residual, worst.tolerance
            );
            status = SolveStatus::NumericalFailure;
        }
    }
    debug!(
        "clarabel {raw:?} in {} iterations, objective {objective_value}",
        solver.solution.iterations
    );

    Ok(SdpSolution {
        status,
        assignment,
        objective_value,
        residuals,
        iterations: solver.solution.iterations,
        names: problem.vars.iter().map(|v| (v.name.clone(), v.kind)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::{Lmi, MatExpr, ScalarExpr};
    use super::*;
    use crate::matcore::SymMat;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_lp_embedded() {
        let mut prob = SdpProblem::new();
        let g = prob.scalar_var("gamma");
        prob.add_linear_ge("gamma >= 3", ScalarExpr::constant(-3.0).add_scalar(&g, 1.0))
            .unwrap();
        prob.set_objective(ScalarExpr::zero().add_scalar(&g, 1.0));
        let sol = solve(&prob, &SolverOpts::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.scalar(&g).unwrap(), 3.0, epsilon = 1e-7);
    }

    #[test]
    fn trace_minimization_over_shifted_cone() {
        // minimize tr(P) s.t. P ⪰ C gives P = C; distinct entries pin the svec layout
        let c = SymMat::from_row_slice(3, &[3.0, 0.5, -0.2, 0.5, 2.0, 0.7, -0.2, 0.7, 1.5]).unwrap();
        let mut prob = SdpProblem::new();
        let p = prob.sym_var("P", 3);
        let mut lmi = Lmi::new("P - C", &[3]);
        lmi.set(0, 0, MatExpr::var(&p).add_const(&-c.matrix().clone()));
        prob.add_lmi(lmi).unwrap();
        prob.set_objective(ScalarExpr::zero().add_trace(&DMatrix::identity(3, 3), &p));
        let sol = solve(&prob, &SolverOpts::default()).unwrap();
        assert!(sol.is_optimal());
        assert_relative_eq!(sol.objective_value, c.trace(), epsilon = 1e-6);
        assert_relative_eq!(sol.sym(&p).unwrap().matrix(), c.matrix(), epsilon = 1e-5);
    }

    #[test]
    fn infeasible_and_unbounded_statuses() {
        let mut prob = SdpProblem::new();
        let g = prob.scalar_var("g");
        prob.add_linear_ge("g >= 1", ScalarExpr::constant(-1.0).add_scalar(&g, 1.0))
            .unwrap();
        prob.add_linear_ge("g <= 0", ScalarExpr::zero().add_scalar(&g, -1.0))
            .unwrap();
        prob.set_objective(ScalarExpr::zero().add_scalar(&g, 1.0));
        let sol = solve(&prob, &SolverOpts::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);

        let mut prob = SdpProblem::new();
        let g = prob.scalar_var("g");
        prob.add_linear_ge("g <= 0", ScalarExpr::zero().add_scalar(&g, -1.0))
            .unwrap();
        prob.set_objective(ScalarExpr::zero().add_scalar(&g, 1.0));
        let sol = solve(&prob, &SolverOpts::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Unbounded);
    }

    #[test]
    fn iteration_limit_is_reported() {
        let mut prob = SdpProblem::new();
        let p = prob.sym_var("P", 2);
        let mut lmi = Lmi::new("P - I", &[2]);
        lmi.set(0, 0, MatExpr::var(&p).add_const(&-DMatrix::identity(2, 2)));
        prob.add_lmi(lmi).unwrap();
        prob.set_objective(ScalarExpr::zero().add_trace(&DMatrix::identity(2, 2), &p));
        let opts = SolverOpts {
            max_iter: 1,
            ..SolverOpts::default()
        };
        let sol = solve(&prob, &opts).unwrap();
        assert_eq!(sol.status, SolveStatus::IterationLimit);
    }
}
