//! Backend-agnostic semidefinite programs in LMI form.
//!
//! A problem declares matrix and scalar decision variables, a list of
//! block LMIs whose blocks are affine in those variables, scalar affine
//! inequalities and a linear objective to minimize. Rectangular variables
//! are first-class: a block such as `A P + B Y` is written directly.
//!
//! ```
//! use nalgebra::DMatrix;
//! use tvsdp::sdp::{Lmi, MatExpr, ScalarExpr, SdpProblem, SolverOpts, solve};
//!
//! // minimize tr(P) subject to P ⪰ I
//! let mut prob = SdpProblem::new();
//! let p = prob.sym_var("P", 2);
//! let mut lmi = Lmi::new("P - I", &[2]);
//! lmi.set(0, 0, MatExpr::var(&p).add_const(&-DMatrix::identity(2, 2)));
//! prob.add_lmi(lmi).unwrap();
//! prob.set_objective(ScalarExpr::zero().add_trace(&DMatrix::identity(2, 2), &p));
//! let sol = solve(&prob, &SolverOpts::default()).unwrap();
//! assert!((sol.objective_value - 2.0).abs() < 1e-6);
//! ```

mod backend;
mod expr;
mod verify;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::SymMat;

pub use backend::solve;
pub use expr::{Lmi, MatExpr, ScalarExpr};
pub use verify::{evaluate_lmi, verify, Violation};

/// Terminal state reported by a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOpts {
    pub max_iter: u32,
    /// Relative feasibility tolerance, as in [`verify`]; an `Optimal`
    /// result violating it is demoted.
    pub feas_tol: f64,
    /// Absolute and relative duality-gap tolerance handed to the backend.
    pub gap_tol: f64,
    /// Primal/dual residual tolerance handed to the backend.
    pub kkt_tol: f64,
    pub verbose: bool,
}

impl Default for SolverOpts {
    fn default() -> Self {
        Self {
            max_iter: 200,
            feas_tol: 1e-7,
            gap_tol: 1e-10,
            kkt_tol: 1e-10,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum VarKind {
    Sym(usize),
    Rect(usize, usize),
    Scalar,
}

impl VarKind {
    fn shape(self) -> (usize, usize) {
        match self {
            VarKind::Sym(d) => (d, d),
            VarKind::Rect(r, c) => (r, c),
            VarKind::Scalar => (1, 1),
        }
    }

    fn unknowns(self) -> usize {
        match self {
            VarKind::Sym(d) => d * (d + 1) / 2,
            VarKind::Rect(r, c) => r * c,
            VarKind::Scalar => 1,
        }
    }

    /// Unit basis matrix of the `k`-th unknown. Symmetric variables are
    /// parameterized by their upper triangle in column-major order.
    fn basis(self, k: usize) -> DMatrix<f64> {
        let (r, c) = self.shape();
        let mut e = DMatrix::zeros(r, c);
        match self {
            VarKind::Sym(_) => {
                let (i, j) = upper_index(k);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
            }
            VarKind::Rect(rows, _) => e[(k % rows, k / rows)] = 1.0,
            VarKind::Scalar => e[(0, 0)] = 1.0,
        }
        e
    }
}

/// Position `(i, j)`, `i <= j`, of the `k`-th entry of a column-major upper triangle.
fn upper_index(k: usize) -> (usize, usize) {
    let mut j = 0;
    let mut start = 0;
    while start + j + 1 <= k {
        start += j + 1;
        j += 1;
    }
    (k - start, j)
}

#[derive(Debug, Clone)]
pub(crate) struct VarDecl {
    pub name: String,
    pub kind: VarKind,
    pub offset: usize,
}

/// Handle to any declared variable.
pub trait Variable {
    fn id(&self) -> usize;
    fn shape(&self) -> (usize, usize);
}

macro_rules! var_handle {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub struct $name {
            id: usize,
            rows: usize,
            cols: usize,
        }

        impl Variable for $name {
            fn id(&self) -> usize {
                self.id
            }

            fn shape(&self) -> (usize, usize) {
                (self.rows, self.cols)
            }
        }
    };
}

var_handle!(
    /// Symmetric matrix variable.
    SymVar
);
var_handle!(
    /// Rectangular matrix variable.
    RectVar
);
var_handle!(
    /// Scalar variable.
    ScalarVar
);

#[derive(Debug, Clone)]
pub(crate) struct LinearConstraint {
    pub name: String,
    pub expr: ScalarExpr,
}

/// An SDP: minimize `objective` subject to every LMI block `⪰ 0` and
/// every linear expression `≥ 0`.
#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    pub(crate) vars: Vec<VarDecl>,
    pub(crate) n_unknowns: usize,
    pub(crate) lmis: Vec<Lmi>,
    pub(crate) linear: Vec<LinearConstraint>,
    pub(crate) objective: ScalarExpr,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    fn declare(&mut self, name: &str, kind: VarKind) -> (usize, usize, usize) {
        let id = self.vars.len();
        self.vars.push(VarDecl {
            name: name.to_string(),
            kind,
            offset: self.n_unknowns,
        });
        self.n_unknowns += kind.unknowns();
        let (r, c) = kind.shape();
        (id, r, c)
    }

    pub fn sym_var(&mut self, name: &str, dim: usize) -> SymVar {
        assert!(dim >= 1, "symmetric variable needs dim >= 1");
        let (id, rows, cols) = self.declare(name, VarKind::Sym(dim));
        SymVar { id, rows, cols }
    }

    pub fn rect_var(&mut self, name: &str, rows: usize, cols: usize) -> RectVar {
        assert!(rows >= 1 && cols >= 1, "rectangular variable needs a nonempty shape");
        let (id, rows, cols) = self.declare(name, VarKind::Rect(rows, cols));
        RectVar { id, rows, cols }
    }

    pub fn scalar_var(&mut self, name: &str) -> ScalarVar {
        let (id, rows, cols) = self.declare(name, VarKind::Scalar);
        ScalarVar { id, rows, cols }
    }

    /// Adds `lmi ⪰ 0`. Fails if a block references an undeclared variable
    /// or a diagonal block is not symmetric.
    pub fn add_lmi(&mut self, lmi: Lmi) -> Result<()> {
        lmi.validate(&self.vars)?;
        self.lmis.push(lmi);
        Ok(())
    }

    /// Adds `expr ≥ 0`.
    pub fn add_linear_ge(&mut self, name: &str, expr: ScalarExpr) -> Result<()> {
        expr.validate(&self.vars)?;
        self.linear.push(LinearConstraint {
            name: name.to_string(),
            expr,
        });
        Ok(())
    }

    /// Sets the expression to minimize.
    pub fn set_objective(&mut self, expr: ScalarExpr) {
        self.objective = expr;
    }

    pub fn n_unknowns(&self) -> usize {
        self.n_unknowns
    }

    pub fn lmi_names(&self) -> impl Iterator<Item = &str> {
        self.lmis.iter().map(|l| l.name.as_str())
    }

    pub fn variable_names(&self) -> impl Iterator<Item = &str> {
        self.vars.iter().map(|v| v.name.as_str())
    }
}

/// Numeric values for (some of) a problem's variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    values: BTreeMap<usize, DMatrix<f64>>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_sym(mut self, var: &SymVar, value: &SymMat) -> Self {
        self.set(var, value.matrix().clone());
        self
    }

    pub fn with_rect(mut self, var: &RectVar, value: &DMatrix<f64>) -> Self {
        self.set(var, value.clone());
        self
    }

    pub fn with_scalar(mut self, var: &ScalarVar, value: f64) -> Self {
        self.set(var, DMatrix::from_element(1, 1, value));
        self
    }

    /// Panics if `value` does not have the variable's shape.
    pub fn set(&mut self, var: &impl Variable, value: DMatrix<f64>) {
        assert_eq!(
            value.shape(),
            var.shape(),
            "assigned value does not match the variable's shape"
        );
        self.values.insert(var.id(), value);
    }

    pub(crate) fn raw(&self, id: usize) -> Option<&DMatrix<f64>> {
        self.values.get(&id)
    }

    pub(crate) fn from_flat(problem: &SdpProblem, x: &[f64]) -> Self {
        let mut values = BTreeMap::new();
        for (id, decl) in problem.vars.iter().enumerate() {
            let (r, c) = decl.kind.shape();
            let mut m = DMatrix::zeros(r, c);
            for k in 0..decl.kind.unknowns() {
                m += decl.kind.basis(k) * x[decl.offset + k];
            }
            values.insert(id, m);
        }
        Self { values }
    }

    pub fn sym(&self, var: &SymVar) -> Result<SymMat> {
        let m = self.get(var)?;
        SymMat::new(m.clone())
    }

    pub fn rect(&self, var: &RectVar) -> Result<DMatrix<f64>> {
        self.get(var).cloned()
    }

    pub fn scalar(&self, var: &ScalarVar) -> Result<f64> {
        self.get(var).map(|m| m[(0, 0)])
    }

    fn get(&self, var: &impl Variable) -> Result<&DMatrix<f64>> {
        self.values
            .get(&var.id())
            .ok_or_else(|| Error::UnknownVariable(format!("#{}", var.id())))
    }
}

/// Minimum value of one constraint at the returned point: the minimum
/// eigenvalue for an LMI block, the expression value for a linear one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintResidual {
    pub name: String,
    pub value: f64,
}

/// A named variable value as reported by [`SdpSolution::values`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Scalar(f64),
    Matrix(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub assignment: Assignment,
    pub objective_value: f64,
    pub residuals: Vec<ConstraintResidual>,
    pub iterations: u32,
    names: Vec<(String, VarKind)>,
}

impl SdpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn sym(&self, var: &SymVar) -> Result<SymMat> {
        self.assignment.sym(var)
    }

    pub fn rect(&self, var: &RectVar) -> Result<DMatrix<f64>> {
        self.assignment.rect(var)
    }

    pub fn scalar(&self, var: &ScalarVar) -> Result<f64> {
        self.assignment.scalar(var)
    }

    /// Worst residual over all constraints.
    pub fn min_residual(&self) -> f64 {
        self.residuals
            .iter()
            .map(|r| r.value)
            .fold(f64::INFINITY, f64::min)
    }

    /// Variable values keyed by declared name.
    pub fn values(&self) -> BTreeMap<String, Value> {
        self.names
            .iter()
            .enumerate()
            .filter_map(|(id, (name, kind))| {
                let m = self.assignment.raw(id)?;
                let v = match kind {
                    VarKind::Scalar => Value::Scalar(m[(0, 0)]),
                    _ => Value::Matrix(m.clone()),
                };
                Some((name.clone(), v))
            })
            .collect()
    }
}
