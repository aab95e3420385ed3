use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::{Assignment, VarDecl, Variable};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Term {
    /// `left · V · right`, or `left · Vᵀ · right` when `transpose` is set.
    Product {
        left: DMatrix<f64>,
        var: usize,
        var_shape: (usize, usize),
        transpose: bool,
        right: DMatrix<f64>,
    },
    /// `v · coeff` for a scalar variable `v`.
    Scaled { var: usize, coeff: DMatrix<f64> },
}

/// Matrix expression affine in the problem variables.
///
/// Builder methods panic when operand shapes do not conform, the same way
/// nalgebra arithmetic does.
#[derive(Debug, Clone)]
pub struct MatExpr {
    rows: usize,
    cols: usize,
    constant: DMatrix<f64>,
    terms: Vec<Term>,
}

impl MatExpr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            constant: DMatrix::zeros(rows, cols),
            terms: Vec::new(),
        }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            constant: m,
            terms: Vec::new(),
        }
    }

    /// The variable itself.
    pub fn var(v: &impl Variable) -> Self {
        let (r, c) = v.shape();
        Self::zeros(r, c).add_product(&DMatrix::identity(r, r), v, &DMatrix::identity(c, c))
    }

    /// The transpose of a variable.
    pub fn var_t(v: &impl Variable) -> Self {
        let (r, c) = v.shape();
        Self::zeros(c, r).add_product_t(&DMatrix::identity(c, c), v, &DMatrix::identity(r, r))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn add_const(mut self, m: &DMatrix<f64>) -> Self {
        assert_eq!(m.shape(), self.shape(), "constant shape mismatch");
        self.constant += m;
        self
    }

    /// Adds `left · V · right`.
    pub fn add_product(mut self, left: &DMatrix<f64>, v: &impl Variable, right: &DMatrix<f64>) -> Self {
        let (vr, vc) = v.shape();
        assert_eq!(left.ncols(), vr, "left factor does not conform to variable");
        assert_eq!(right.nrows(), vc, "right factor does not conform to variable");
        assert_eq!((left.nrows(), right.ncols()), self.shape(), "product shape mismatch");
        self.terms.push(Term::Product {
            left: left.clone(),
            var: v.id(),
            var_shape: (vr, vc),
            transpose: false,
            right: right.clone(),
        });
        self
    }

    /// Adds `left · Vᵀ · right`.
    pub fn add_product_t(mut self, left: &DMatrix<f64>, v: &impl Variable, right: &DMatrix<f64>) -> Self {
        let (vr, vc) = v.shape();
        assert_eq!(left.ncols(), vc, "left factor does not conform to transposed variable");
        assert_eq!(right.nrows(), vr, "right factor does not conform to transposed variable");
        assert_eq!((left.nrows(), right.ncols()), self.shape(), "product shape mismatch");
        self.terms.push(Term::Product {
            left: left.clone(),
            var: v.id(),
            var_shape: (vr, vc),
            transpose: true,
            right: right.clone(),
        });
        self
    }

    /// Adds `left · V`.
    pub fn add_left(self, left: &DMatrix<f64>, v: &impl Variable) -> Self {
        let c = v.shape().1;
        self.add_product(left, v, &DMatrix::identity(c, c))
    }

    /// Adds `V` (shape must match).
    pub fn add_var(self, v: &impl Variable) -> Self {
        let (r, c) = v.shape();
        self.add_product(&DMatrix::identity(r, r), v, &DMatrix::identity(c, c))
    }

    /// Adds `s · coeff` for a scalar variable `s`.
    pub fn add_scaled(mut self, s: &super::ScalarVar, coeff: &DMatrix<f64>) -> Self {
        assert_eq!(coeff.shape(), self.shape(), "coefficient shape mismatch");
        self.terms.push(Term::Scaled {
            var: s.id(),
            coeff: coeff.clone(),
        });
        self
    }

    fn var_ids(&self) -> impl Iterator<Item = (usize, (usize, usize))> + '_ {
        self.terms.iter().map(|t| match t {
            Term::Product { var, var_shape, .. } => (*var, *var_shape),
            Term::Scaled { var, .. } => (*var, (1, 1)),
        })
    }

    /// Direct evaluation with matrix products; independent of the compiled form.
    pub(crate) fn eval(&self, values: &Assignment) -> Result<DMatrix<f64>> {
        let mut out = self.constant.clone();
        for t in &self.terms {
            match t {
                Term::Product {
                    left,
                    var,
                    transpose,
                    right,
                    ..
                } => {
                    let v = values
                        .raw(*var)
                        .ok_or_else(|| Error::UnknownVariable(format!("#{var}")))?;
                    if *transpose {
                        out += left * v.transpose() * right;
                    } else {
                        out += left * v * right;
                    }
                }
                Term::Scaled { var, coeff } => {
                    let v = values
                        .raw(*var)
                        .ok_or_else(|| Error::UnknownVariable(format!("#{var}")))?;
                    out += coeff * v[(0, 0)];
                }
            }
        }
        Ok(out)
    }

    /// Coefficient matrix of every unknown the expression touches.
    pub(crate) fn coefficients(&self, vars: &[VarDecl]) -> BTreeMap<usize, DMatrix<f64>> {
        let mut out: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
        for t in &self.terms {
            match t {
                Term::Product {
                    left,
                    var,
                    transpose,
                    right,
                    ..
                } => {
                    let decl = &vars[*var];
                    for k in 0..decl.kind.unknowns() {
                        let e = decl.kind.basis(k);
                        let c = if *transpose {
                            left * e.transpose() * right
                        } else {
                            left * e * right
                        };
                        accumulate(&mut out, decl.offset + k, c);
                    }
                }
                Term::Scaled { var, coeff } => {
                    accumulate(&mut out, vars[*var].offset, coeff.clone());
                }
            }
        }
        out
    }

    pub(crate) fn constant_part(&self) -> &DMatrix<f64> {
        &self.constant
    }
}

fn accumulate(map: &mut BTreeMap<usize, DMatrix<f64>>, key: usize, c: DMatrix<f64>) {
    match map.get_mut(&key) {
        Some(m) => *m += c,
        None => {
            map.insert(key, c);
        }
    }
}

fn check_var(vars: &[VarDecl], id: usize, shape: (usize, usize)) -> Result<()> {
    let decl = vars
        .get(id)
        .ok_or_else(|| Error::UnknownVariable(format!("#{id}")))?;
    if decl.kind.shape() != shape {
        return Err(Error::UnknownVariable(format!(
            "#{id} referenced with shape {shape:?}, declared `{}` as {:?}",
            decl.name,
            decl.kind.shape()
        )));
    }
    Ok(())
}

/// Scalar expression `c + Σ ⟨W_i, V_i⟩` affine in the problem variables,
/// where `⟨W, V⟩ = Σ W_ij V_ij`.
#[derive(Debug, Clone, Default)]
pub struct ScalarExpr {
    constant: f64,
    terms: Vec<(usize, (usize, usize), DMatrix<f64>)>,
}

impl ScalarExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn add_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn add_scalar(mut self, s: &super::ScalarVar, coeff: f64) -> Self {
        self.terms
            .push((s.id(), (1, 1), DMatrix::from_element(1, 1, coeff)));
        self
    }

    /// Adds `tr(W · V)`; `W` has the shape of `Vᵀ`.
    pub fn add_trace(mut self, w: &DMatrix<f64>, v: &impl Variable) -> Self {
        let (r, c) = v.shape();
        assert_eq!(w.shape(), (c, r), "trace weight must have the transposed variable shape");
        self.terms.push((v.id(), (r, c), w.transpose()));
        self
    }

    pub(crate) fn validate(&self, vars: &[VarDecl]) -> Result<()> {
        for (id, shape, _) in &self.terms {
            check_var(vars, *id, *shape)?;
        }
        Ok(())
    }

    pub(crate) fn eval(&self, values: &Assignment) -> Result<f64> {
        let mut out = self.constant;
        for (id, _, w) in &self.terms {
            let v = values
                .raw(*id)
                .ok_or_else(|| Error::UnknownVariable(format!("#{id}")))?;
            out += w.component_mul(v).sum();
        }
        Ok(out)
    }

    /// Sum of absolute term values at `values`, used to scale tolerances.
    pub(crate) fn magnitude(&self, values: &Assignment) -> f64 {
        let mut out = self.constant.abs();
        for (id, _, w) in &self.terms {
            if let Some(v) = values.raw(*id) {
                out += w.component_mul(v).sum().abs();
            }
        }
        out
    }

    pub(crate) fn constant_part(&self) -> f64 {
        self.constant
    }

    pub(crate) fn coefficients(&self, vars: &[VarDecl]) -> BTreeMap<usize, f64> {
        let mut out = BTreeMap::new();
        for (id, _, w) in &self.terms {
            let decl = &vars[*id];
            for k in 0..decl.kind.unknowns() {
                let c = w.component_mul(&decl.kind.basis(k)).sum();
                if c != 0.0 {
                    *out.entry(decl.offset + k).or_insert(0.0) += c;
                }
            }
        }
        out
    }
}

/// Block LMI `[[E_00, E_01, ...], [E_01ᵀ, E_11, ...], ...] ⪰ 0`.
///
/// Only blocks on or above the diagonal are set; the lower triangle is
/// their transpose. Unset blocks are zero.
#[derive(Debug, Clone)]
pub struct Lmi {
    pub(crate) name: String,
    sizes: Vec<usize>,
    blocks: BTreeMap<(usize, usize), MatExpr>,
}

impl Lmi {
    pub fn new(name: &str, block_sizes: &[usize]) -> Self {
        assert!(
            !block_sizes.is_empty() && block_sizes.iter().all(|&s| s > 0),
            "LMI blocks must be nonempty"
        );
        Self {
            name: name.to_string(),
            sizes: block_sizes.to_vec(),
            blocks: BTreeMap::new(),
        }
    }

    /// Sets block `(i, j)`, `i <= j`. Panics on a shape mismatch.
    pub fn set(&mut self, i: usize, j: usize, expr: MatExpr) -> &mut Self {
        assert!(i <= j, "only blocks on or above the diagonal are set");
        assert_eq!(
            expr.shape(),
            (self.sizes[i], self.sizes[j]),
            "block ({i}, {j}) of `{}` has the wrong shape",
            self.name
        );
        self.blocks.insert((i, j), expr);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn size(&self) -> usize {
        self.sizes.iter().sum()
    }

    fn offsets(&self) -> Vec<usize> {
        self.sizes
            .iter()
            .scan(0, |acc, s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect()
    }

    pub(crate) fn validate(&self, vars: &[VarDecl]) -> Result<()> {
        for ((i, j), e) in &self.blocks {
            for (id, shape) in e.var_ids() {
                check_var(vars, id, shape)?;
            }
            if i == j {
                let sym_err = |what: &str| {
                    Error::InvalidInput(format!(
                        "diagonal block ({i}, {i}) of `{}` is not symmetric ({what})",
                        self.name
                    ))
                };
                if !is_symmetric(e.constant_part()) {
                    return Err(sym_err("constant part"));
                }
                if e.coefficients(vars).values().any(|c| !is_symmetric(c)) {
                    return Err(sym_err("variable part"));
                }
            }
        }
        Ok(())
    }

    /// Full symmetric matrix at `values`.
    pub(crate) fn eval(&self, values: &Assignment) -> Result<DMatrix<f64>> {
        let n = self.size();
        let off = self.offsets();
        let mut m = DMatrix::zeros(n, n);
        for ((i, j), e) in &self.blocks {
            let b = e.eval(values)?;
            m.view_mut((off[*i], off[*j]), b.shape()).copy_from(&b);
            if i != j {
                m.view_mut((off[*j], off[*i]), (b.ncols(), b.nrows()))
                    .copy_from(&b.transpose());
            }
        }
        Ok(m)
    }

    /// `F0` and `F_k` of `F(x) = F0 + Σ x_k F_k`.
    pub(crate) fn compile(&self, vars: &[VarDecl]) -> (DMatrix<f64>, BTreeMap<usize, DMatrix<f64>>) {
        let n = self.size();
        let off = self.offsets();
        let place = |m: &mut DMatrix<f64>, i: usize, j: usize, b: &DMatrix<f64>| {
            m.view_mut((off[i], off[j]), b.shape()).copy_from(b);
            if i != j {
                m.view_mut((off[j], off[i]), (b.ncols(), b.nrows()))
                    .copy_from(&b.transpose());
            }
        };
        let mut f0 = DMatrix::zeros(n, n);
        let mut fk: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
        for ((i, j), e) in &self.blocks {
            place(&mut f0, *i, *j, e.constant_part());
            for (k, c) in e.coefficients(vars) {
                let mut full = DMatrix::zeros(n, n);
                place(&mut full, *i, *j, &c);
                accumulate(&mut fk, k, full);
            }
        }
        (f0, fk)
    }
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= 1e-12 * scale
}
