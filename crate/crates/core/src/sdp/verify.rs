use serde::Serialize;

use super::{Assignment, ConstraintResidual, Lmi, SdpProblem};
use crate::error::{Error, Result};
use crate::matcore::SymMat;

/// A constraint that fails at a candidate point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub constraint: String,
    /// Minimum eigenvalue (LMI) or value (linear) at the candidate.
    pub residual: f64,
    /// Scaled tolerance the residual was compared against.
    pub tolerance: f64,
}

/// Substitutes `values` into `lmi` and returns the full symmetric matrix.
pub fn evaluate_lmi(lmi: &Lmi, values: &Assignment) -> Result<SymMat> {
    SymMat::new(lmi.eval(values)?)
}

/// Checks every constraint of `problem` at `values`.
///
/// An LMI `F` fails when `λ_min(F) < −tol·(1 + ‖F‖₂)`, a linear constraint
/// `g ≥ 0` when `g < −tol·(1 + |terms|)`. The relative scaling keeps the
/// verdict invariant under positive rescaling of a feasible point.
pub fn verify(problem: &SdpProblem, values: &Assignment, tol: f64) -> Result<Vec<Violation>> {
    if !(tol >= 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be nonnegative, got {tol}")));
    }
    let mut out = Vec::new();
    for lmi in &problem.lmis {
        let f = evaluate_lmi(lmi, values)?;
        let eigs = f.eigenvalues();
        let lo = eigs[0];
        let norm = eigs[eigs.len() - 1].abs().max(lo.abs());
        let tolerance = tol * (1.0 + norm);
        if lo < -tolerance {
            out.push(Violation {
                constraint: lmi.name.clone(),
                residual: lo,
                tolerance,
            });
        }
    }
    for lin in &problem.linear {
        let v = lin.expr.eval(values)?;
        let tolerance = tol * (1.0 + lin.expr.magnitude(values));
        if v < -tolerance {
            out.push(Violation {
                constraint: lin.name.clone(),
                residual: v,
                tolerance,
            });
        }
    }
    Ok(out)
}

pub(crate) fn residuals(problem: &SdpProblem, values: &Assignment) -> Result<Vec<ConstraintResidual>> {
    let mut out = Vec::with_capacity(problem.lmis.len() + problem.linear.len());
    for lmi in &problem.lmis {
        let value = match evaluate_lmi(lmi, values) {
            Ok(f) => f.min_eig(),
            Err(_) => f64::NAN,
        };
        out.push(ConstraintResidual {
            name: lmi.name.clone(),
            value,
        });
    }
    for lin in &problem.linear {
        out.push(ConstraintResidual {
            name: lin.name.clone(),
            value: lin.expr.eval(values)?,
        });
    }
    Ok(out)
}
