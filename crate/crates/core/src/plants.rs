//! Benchmark plants in state-dependent form, forward-Euler discretized.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::SymMat;
use crate::online::NlSystem;

/// `|x₁|` below which the removable-singularity limits are used.
pub const BRANCH_TOL: f64 = 1e-7;

/// Single-machine infinite-bus system with a power control loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmibParams {
    pub xd: f64,
    pub xd_prime: f64,
    pub bs: f64,
    pub tdo_prime: f64,
    pub delta0: f64,
    pub damping: f64,
    pub inertia: f64,
    pub eq0_prime: f64,
    pub vs: f64,
    pub kg: f64,
    pub tg: f64,
    /// Sampling time.
    pub t: f64,
    /// Steady-state rotor angle; defaults to `delta0`.
    pub delta_bar: Option<f64>,
    /// Steady-state transient emf; defaults to `eq0_prime`.
    pub eq_bar: Option<f64>,
}

impl Default for SmibParams {
    fn default() -> Self {
        Self {
            xd: 1.863,
            xd_prime: 0.257,
            bs: -0.404,
            tdo_prime: 0.5,
            delta0: 0.236,
            damping: 0.5,
            inertia: 1.25,
            eq0_prime: 1.0,
            vs: 1.0,
            kg: 1.0,
            tg: 0.1,
            t: 0.1,
            delta_bar: None,
            eq_bar: None,
        }
    }
}

/// Constants of the deviation model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmibConstants {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub c1: f64,
    pub c2: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Operating point of the absolute-coordinate model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmibSteadyState {
    pub delta: f64,
    pub eq: f64,
    pub pm: f64,
    pub v: f64,
    pub ef: f64,
}

impl SmibParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tdo_prime", self.tdo_prime),
            ("inertia", self.inertia),
            ("tg", self.tg),
            ("t", self.t),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("smib.{name} must be positive, got {v}")));
            }
        }
        let all = [self.xd, self.xd_prime, self.bs, self.delta0, self.damping, self.eq0_prime, self.vs, self.kg];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("smib parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn delta_bar(&self) -> f64 {
        self.delta_bar.unwrap_or(self.delta0)
    }

    pub fn eq_bar(&self) -> f64 {
        self.eq_bar.unwrap_or(self.eq0_prime)
    }

    pub fn constants(&self) -> SmibConstants {
        let gap = self.xd - self.xd_prime;
        SmibConstants {
            b1: 2.0 * self.bs / self.inertia * self.eq_bar() * self.vs,
            b2: self.damping / self.inertia,
            b3: self.bs / self.inertia * self.vs,
            b4: 1.0 / self.inertia,
            c1: 2.0 * gap * self.bs * self.vs / self.tdo_prime,
            c2: (gap * self.bs - 1.0) / self.tdo_prime,
            d1: self.kg,
            d2: 1.0 / self.tg,
        }
    }

    /// Mechanical power, governor input and excitation holding the
    /// steady state `(δ̄, 0, Ē'_q, P̄)` at rest.
    pub fn steady_state(&self) -> SmibSteadyState {
        let (delta, eq) = (self.delta_bar(), self.eq_bar());
        let pm = -self.bs * eq * self.vs * delta.sin();
        let ef = eq - (self.xd - self.xd_prime) * self.bs * (eq - self.vs * delta.cos());
        SmibSteadyState {
            delta,
            eq,
            pm,
            v: pm / self.tg,
            ef,
        }
    }

    pub fn a(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let c = self.constants();
        let t = self.t;
        let d0 = self.delta_bar();
        let x1 = x[0];
        let (a21, a31) = if x1.abs() < BRANCH_TOL {
            (c.b1 * t * d0.cos() / 2.0, c.c1 * t * d0.sin() / 2.0)
        } else {
            let h = (x1 / 2.0).sin() / x1;
            (
                c.b1 * t * (d0 + x1 / 2.0).cos() * h,
                c.c1 * t * (d0 + x1 / 2.0).sin() * h,
            )
        };
        DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, t, 0.0, 0.0,
                a21, 1.0 - c.b2 * t, c.b3 * t * (x1 + d0).sin(), c.b4 * t,
                a31, 0.0, 1.0 + c.c2 * t, 0.0,
                0.0, -c.d1 * t, 0.0, 1.0 - c.d2 * t,
            ],
        )
    }

    pub fn b(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 0.0, self.t])
    }
}

/// Moore-Greitzer jet engine compressor model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JetParams {
    pub sigma: f64,
    pub t: f64,
}

impl Default for JetParams {
    fn default() -> Self {
        Self { sigma: 3.0, t: 0.1 }
    }
}

impl JetParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.t > 0.0 && self.sigma.is_finite() && self.t.is_finite()) {
            return Err(Error::Config("jet.sigma and jet.t must be positive".into()));
        }
        Ok(())
    }

    pub fn a(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (s, t) = (self.sigma, self.t);
        let (x1, x2) = (x[0], x[1]);
        DMatrix::from_row_slice(
            3,
            3,
            &[
                1.0 - s * t * x1, -2.0 * s * t * x1 - s * t * x1 * x2, 0.0,
                -3.0 * t, 1.0 - 3.0 * t * x1 - 1.5 * t * x2 - 0.5 * t * x2 * x2, -t,
                0.0, 0.0, 1.0,
            ],
        )
    }

    pub fn b(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(3, 1, &[0.0, 0.0, -self.t])
    }
}

/// Damped inverted pendulum with torque input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumParams {
    pub t: f64,
    pub g: f64,
    pub mass: f64,
    pub length: f64,
    pub mu: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            t: 0.1,
            g: 9.8,
            mass: 1.0,
            length: 1.0,
            mu: 0.01,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.t, self.g, self.mass, self.length, self.mu];
        if all.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("pendulum parameters must be positive".into()));
        }
        Ok(())
    }

    pub fn a(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let x1 = x[0];
        let sinc = if x1.abs() < BRANCH_TOL { 1.0 } else { x1.sin() / x1 };
        DMatrix::from_row_slice(
            2,
            2,
            &[
                1.0, self.t,
                self.t * self.g / self.length * sinc, 1.0 - self.t * self.mu / (self.mass * self.length * self.length),
            ],
        )
    }

    pub fn b(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[0.0, self.t * x[0].cos() / (self.mass * self.length)])
    }
}

/// Constant pair `x⁺ = Ax + Bu`, given row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomLti {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    /// Initial-state box; defaults to `[-1, 1]` per component.
    #[serde(default)]
    pub x0_box: Option<Vec<[f64; 2]>>,
}

fn rows_to_matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{name} must be a non-empty rectangular array")));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

impl CustomLti {
    pub fn matrices(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let a = rows_to_matrix("custom.a", &self.a)?;
        let b = rows_to_matrix("custom.b", &self.b)?;
        if a.nrows() != a.ncols() || b.nrows() != a.nrows() {
            return Err(Error::Config(format!(
                "custom.a must be square and match custom.b rows ({}x{} vs {}x{})",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        Ok((a, b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Plant {
    Smib(SmibParams),
    Jet(JetParams),
    Pendulum(PendulumParams),
    Custom(CustomLti),
}

impl Plant {
    pub fn name(&self) -> &'static str {
        match self {
            Plant::Smib(_) => "smib",
            Plant::Jet(_) => "jet",
            Plant::Pendulum(_) => "pendulum",
            Plant::Custom(_) => "custom",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Plant::Smib(p) => p.validate(),
            Plant::Jet(p) => p.validate(),
            Plant::Pendulum(p) => p.validate(),
            Plant::Custom(c) => c.matrices().map(|_| ()),
        }
    }

    pub fn dims(&self) -> Result<(usize, usize)> {
        Ok(match self {
            Plant::Smib(_) => (4, 1),
            Plant::Jet(_) => (3, 1),
            Plant::Pendulum(_) => (2, 1),
            Plant::Custom(c) => {
                let (a, b) = c.matrices()?;
                (a.nrows(), b.ncols())
            }
        })
    }

    /// The plant with the given weights.
    pub fn system(&self, q: SymMat, r: SymMat) -> Result<NlSystem> {
        self.validate()?;
        let sys = match self {
            Plant::Smib(p) => {
                let (p, b) = (p.clone(), p.b());
                NlSystem::new(4, 1, move |x| p.a(x), move |_| b.clone())?
            }
            Plant::Jet(p) => {
                let (p, b) = (p.clone(), p.b());
                NlSystem::new(3, 1, move |x| p.a(x), move |_| b.clone())?
            }
            Plant::Pendulum(p) => {
                let (pa, pb) = (p.clone(), p.clone());
                NlSystem::new(2, 1, move |x| pa.a(x), move |x| pb.b(x))?
            }
            Plant::Custom(c) => {
                let (a, b) = c.matrices()?;
                NlSystem::lti(a, b)?
            }
        };
        sys.with_weights(q, r)
    }

    /// Weights used in the benchmark: `diag(10, 8, 0.1, 0.1)` and `1` for
    /// the SMIB, identities otherwise.
    pub fn default_weights(&self) -> Result<(SymMat, SymMat)> {
        let (n, m) = self.dims()?;
        Ok(match self {
            Plant::Smib(_) => (SymMat::from_diagonal(&[10.0, 8.0, 0.1, 0.1])?, SymMat::identity(1)),
            _ => (SymMat::identity(n), SymMat::identity(m)),
        })
    }

    /// Box from which random initial states are drawn.
    pub fn x0_box(&self) -> Result<Vec<[f64; 2]>> {
        Ok(match self {
            Plant::Smib(p) => {
                let w = 2.0 * (PI - p.delta0);
                vec![[-w, w], [-1.0, 1.0], [-1.0, 1.0], [-1.0, 1.0]]
            }
            Plant::Jet(_) => vec![[0.0, 1.0], [-1.0, 1.0], [-1.0, 1.0]],
            Plant::Pendulum(_) => vec![[-PI / 2.0, PI / 2.0], [-3.0, 3.0]],
            Plant::Custom(c) => match &c.x0_box {
                Some(b) => b.clone(),
                None => vec![[-1.0, 1.0]; self.dims()?.0],
            },
        })
    }

    /// Initial state of the published trajectory figures.
    pub fn canonical_x0(&self) -> Option<DVector<f64>> {
        match self {
            Plant::Smib(_) => Some(DVector::from_column_slice(&[-0.9644, -0.5594, -1.9998, -1.3953])),
            Plant::Jet(_) => Some(DVector::from_column_slice(&[0.9727, 0.9341, 0.0945])),
            Plant::Pendulum(_) => Some(DVector::from_column_slice(&[0.1596, 1.2489])),
            Plant::Custom(_) => None,
        }
    }

    pub fn default_t_end(&self) -> usize {
        match self {
            Plant::Smib(_) => 200,
            _ => 100,
        }
    }

    pub fn sample_x0<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let bx = self.x0_box()?;
        Ok(DVector::from_iterator(
            bx.len(),
            bx.iter().map(|[lo, hi]| if lo < hi { rng.random_range(*lo..=*hi) } else { *lo }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    // Euler step of the SMIB equations in absolute coordinates
    fn smib_oracle(p: &SmibParams, x: &DVector<f64>, u: f64) -> DVector<f64> {
        let ss = p.steady_state();
        let (delta, dw, eq, pm) = (ss.delta + x[0], x[1], ss.eq + x[2], ss.pm + x[3]);
        let vin = ss.v + u;
        let d_delta = dw;
        let d_dw = (pm - p.damping * dw + p.bs * eq * p.vs * delta.sin()) / p.inertia;
        let d_eq = (ss.ef - eq + (p.xd - p.xd_prime) * (p.bs * eq - p.bs * p.vs * delta.cos())) / p.tdo_prime;
        let d_pm = -pm / p.tg - p.kg * dw + vin;
        let t = p.t;
        v(&[
            delta + t * d_delta - ss.delta,
            dw + t * d_dw,
            eq + t * d_eq - ss.eq,
            pm + t * d_pm - ss.pm,
        ])
    }

    fn jet_oracle(p: &JetParams, x: &DVector<f64>, u: f64) -> DVector<f64> {
        let (r, phi, psi) = (x[0], x[1], x[2]);
        let s = p.sigma;
        let dr = -s * r * r - s * r * (2.0 * phi + phi * phi);
        let dphi = -psi - 1.5 * phi * phi - 0.5 * phi.powi(3) - 3.0 * r * phi - 3.0 * r;
        let dpsi = -u;
        v(&[r + p.t * dr, phi + p.t * dphi, psi + p.t * dpsi])
    }

    fn pendulum_oracle(p: &PendulumParams, x: &DVector<f64>, u: f64) -> DVector<f64> {
        let dx2 = p.g / p.length * x[0].sin() - p.mu / (p.mass * p.length * p.length) * x[1]
            + x[0].cos() / (p.mass * p.length) * u;
        v(&[x[0] + p.t * x[1], x[1] + p.t * dx2])
    }

    fn check_factorization(plant: &Plant, oracle: impl Fn(&DVector<f64>, f64) -> DVector<f64>) {
        let sys = plant.system(SymMat::identity(plant.dims().unwrap().0), SymMat::identity(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x = plant.sample_x0(&mut rng).unwrap();
            let u = rng.random_range(-2.0..2.0);
            let got = sys.step(&x, &v(&[u])).unwrap();
            let want = oracle(&x, u);
            assert!((&got - &want).amax() <= 1e-10, "{}: {got} vs {want}", plant.name());
        }
    }

    #[test]
    fn smib_constants_and_limit_branch() {
        let p = SmibParams::default();
        let c = p.constants();
        assert_eq!(c.b1, 2.0 * -0.404 / 1.25 * 1.0 * 1.0);
        assert_eq!(c.b2, 0.5 / 1.25);
        assert_eq!(c.b3, -0.404 / 1.25);
        assert_eq!(c.b4, 1.0 / 1.25);
        assert_eq!(c.c1, 2.0 * (1.863 - 0.257) * -0.404 / 0.5);
        assert_eq!(c.c2, ((1.863 - 0.257) * -0.404 - 1.0) / 0.5);
        assert_eq!((c.d1, c.d2), (1.0, 10.0));
        let a0 = p.a(&v(&[0.0; 4]));
        assert_relative_eq!(a0[(1, 0)], c.b1 * 0.1 * 0.236f64.cos() / 2.0);
        assert_relative_eq!(a0[(2, 0)], c.c1 * 0.1 * 0.236f64.sin() / 2.0);
        let near = p.a(&v(&[1e-9, 0.0, 0.0, 0.0]));
        assert!((near - &a0).amax() <= 1e-6);
        let across = p.a(&v(&[2e-7, 0.0, 0.0, 0.0]));
        assert!((across - &a0).amax() <= 1e-6);
    }

    #[test]
    fn smib_factorization_matches_ode() {
        let p = SmibParams::default();
        check_factorization(&Plant::Smib(p.clone()), |x, u| smib_oracle(&p, x, u));
    }

    #[test]
    fn jet_examples() {
        let p = JetParams::default();
        let a0 = p.a(&v(&[0.0; 3]));
        let want = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, -0.3, 1.0, -0.1, 0.0, 0.0, 1.0]);
        assert!((&a0 - want).amax() < 1e-15);
        assert!(crate::matcore::spectral_radius(&a0) >= 1.0);
        check_factorization(&Plant::Jet(p.clone()), |x, u| jet_oracle(&p, x, u));
    }

    #[test]
    fn pendulum_examples() {
        let p = PendulumParams::default();
        let a0 = p.a(&v(&[0.0, 0.0]));
        assert_relative_eq!(a0[(1, 0)], 0.98, epsilon = 1e-15);
        assert!((p.a(&v(&[1e-9, 0.0])) - &a0).amax() <= 1e-6);
        assert_eq!(p.b(&v(&[0.0, 0.0])), DMatrix::from_column_slice(2, 1, &[0.0, 0.1]));
        check_factorization(&Plant::Pendulum(p.clone()), |x, u| pendulum_oracle(&p, x, u));
    }

    #[test]
    fn custom_plant_and_validation() {
        let c = CustomLti {
            a: vec![vec![1.0, 0.1], vec![0.0, 1.0]],
            b: vec![vec![0.0], vec![0.1]],
            x0_box: None,
        };
        let plant = Plant::Custom(c.clone());
        assert_eq!(plant.dims().unwrap(), (2, 1));
        assert_eq!(plant.x0_box().unwrap(), vec![[-1.0, 1.0]; 2]);
        let bad = Plant::Custom(CustomLti { a: vec![vec![1.0, 2.0]], ..c });
        assert!(bad.validate().is_err());
        let bad = Plant::Pendulum(PendulumParams { t: 0.0, ..Default::default() });
        assert!(bad.system(SymMat::identity(2), SymMat::identity(1)).is_err());
    }

    #[test]
    fn seeded_sampling_is_reproducible_and_in_box() {
        let plant = Plant::Smib(SmibParams::default());
        let bx = plant.x0_box().unwrap();
        assert_relative_eq!(bx[0][1], 2.0 * (PI - 0.236));
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5).map(|_| plant.sample_x0(&mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7), draw(8));
        for x in draw(7) {
            assert!(x.iter().zip(&bx).all(|(v, [lo, hi])| lo <= v && v <= hi));
        }
    }
}
