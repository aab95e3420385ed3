//! Scenario configuration, closed-loop runs, the quadratic performance index
//! and trajectory output.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_3;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility::{self, BoxDomain, DeltaEstimate, DeltaShape, Domain, OfflineCert, OfflineOutcome, OfflineSpec};
use crate::lqr::{self, LtiPair};
use crate::matcore::SymMat;
use crate::online::{self, NlSystem, OnlineRun, StepStatus};
use crate::plants::Plant;
use crate::sdp::SolverOpts;

/// Relative slack when checking `V_{t+1}(x_{t+1}) ≤ V_t(x_t)` on reported series.
pub const MONOTONE_TOL: f64 = 1e-9;

/// State norm beyond which an open-loop or fixed-gain run counts as diverged.
pub const DIVERGENCE_NORM: f64 = 1e100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// `u = 0`.
    OpenLoop,
    /// Fixed LQR gain of the pair at the origin.
    LtiLqr,
    /// LQ program re-solved at every state, no coupling.
    OnlineLq,
    /// Coupled online controller.
    #[default]
    OnlineSdp,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::OpenLoop, Scenario::LtiLqr, Scenario::OnlineLq, Scenario::OnlineSdp];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::OpenLoop => "open_loop",
            Scenario::LtiLqr => "lti_lqr",
            Scenario::OnlineLq => "online_lq",
            Scenario::OnlineSdp => "online_sdp",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario `{s}` (expected open_loop, lti_lqr, online_lq or online_sdp)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::Config(format!("unknown format `{s}` (expected csv or json)"))),
        }
    }
}

/// How the online controller's cost bound `γ̄` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaBarRule {
    /// `(λ_max(P_0)/λ_min(P_0))·γ_0` from the first step.
    #[default]
    Heuristic,
    /// The configured `value`.
    Fixed,
    /// From an offline certificate over `[offline].domain`.
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaBarConfig {
    pub rule: GammaBarRule,
    pub value: Option<f64>,
    pub multiplier: f64,
}

impl Default for GammaBarConfig {
    fn default() -> Self {
        Self {
            rule: GammaBarRule::Heuristic,
            value: None,
            multiplier: 1.0,
        }
    }
}

/// Exactly one of the three sources must be set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct X0Config {
    pub values: Option<Vec<f64>>,
    /// Draw from the plant's initial-state box.
    pub seed: Option<u64>,
    /// The plant's published initial state.
    pub canonical: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum X0Source {
    Explicit(DVector<f64>),
    Seeded(u64),
    Canonical,
}

impl X0Config {
    pub fn explicit(values: Vec<f64>) -> Self {
        Self {
            values: Some(values),
            ..Default::default()
        }
    }

    pub fn seeded(seed: u64) -> Self {
        Self {
            seed: Some(seed),
            ..Default::default()
        }
    }

    pub fn canonical() -> Self {
        Self {
            canonical: Some(true),
            ..Default::default()
        }
    }

    pub fn source(&self) -> Result<X0Source> {
        match (&self.values, self.seed, self.canonical.unwrap_or(false)) {
            (Some(v), None, false) => Ok(X0Source::Explicit(DVector::from_column_slice(v))),
            (None, Some(s), false) => Ok(X0Source::Seeded(s)),
            (None, None, true) => Ok(X0Source::Canonical),
            _ => Err(Error::Config("[x0] needs exactly one of `values`, `seed` or `canonical = true`".into())),
        }
    }
}

/// Offline certification settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfflineConfig {
    /// Box `[lo, hi]` per state; defaults per plant.
    pub domain: Option<Vec<[f64; 2]>>,
    pub samples: usize,
    pub shape: DeltaShape,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self {
            domain: None,
            samples: 4000,
            shape: DeltaShape::RowDiagonal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleRegion {
    /// The plant's initial-state box.
    #[default]
    Box,
    /// The offline certificate's ellipsoid, intersected with its domain.
    CertifiedRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Parallel runs; all cores when unset.
    pub workers: Option<usize>,
    pub seed: u64,
    pub sample_from: SampleRegion,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            workers: None,
            seed: 0,
            sample_from: SampleRegion::Box,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: Format,
    /// File stem; `<plant>_<scenario>` when unset.
    pub stem: Option<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            format: Format::Csv,
            stem: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub plant: Plant,
    #[serde(default)]
    pub scenario: Scenario,
    /// State weight, row-major; plant default when unset.
    #[serde(default)]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub r: Option<Vec<Vec<f64>>>,
    /// Horizon; plant default when unset.
    #[serde(default)]
    pub t_end: Option<usize>,
    pub x0: X0Config,
    #[serde(default)]
    pub gamma_bar: GammaBarConfig,
    #[serde(default)]
    pub solver: SolverOpts,
    #[serde(default)]
    pub offline: OfflineConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn sym_from_rows(name: &str, rows: &[Vec<f64>], dim: usize) -> Result<SymMat> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Config(format!("{name} must be {dim}x{dim}")));
    }
    let m = DMatrix::from_row_iterator(dim, dim, rows.iter().flatten().copied());
    SymMat::new(m).map_err(|e| Error::Config(format!("{name}: {e}")))
}

impl ScenarioConfig {
    pub fn new(plant: Plant, scenario: Scenario, x0: X0Config) -> Self {
        Self {
            plant,
            scenario,
            q: None,
            r: None,
            t_end: None,
            x0,
            gamma_bar: GammaBarConfig::default(),
            solver: SolverOpts::default(),
            offline: OfflineConfig::default(),
            sweep: SweepConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        let (n, _) = self.plant.dims()?;
        if self.t_end == Some(0) {
            return Err(Error::Config("t_end must be at least 1".into()));
        }
        if let X0Source::Explicit(x) = self.x0.source()? {
            if x.len() != n {
                return Err(Error::Config(format!("x0 has {} components, plant has {n}", x.len())));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("x0 must be finite".into()));
            }
        }
        if matches!(self.x0.source()?, X0Source::Canonical) && self.plant.canonical_x0().is_none() {
            return Err(Error::Config(format!("plant `{}` has no canonical x0", self.plant.name())));
        }
        self.system()?;
        let g = &self.gamma_bar;
        if !(g.multiplier >= 1.0 && g.multiplier.is_finite()) {
            return Err(Error::Config(format!("gamma_bar.multiplier must be at least 1, got {}", g.multiplier)));
        }
        match (g.rule, g.value) {
            (GammaBarRule::Fixed, Some(v)) if v >= 1.0 && v.is_finite() => {}
            (GammaBarRule::Fixed, v) => {
                return Err(Error::Config(format!("gamma_bar.rule = \"fixed\" needs value >= 1, got {v:?}")));
            }
            (_, Some(_)) => warn!("gamma_bar.value is ignored unless rule = \"fixed\""),
            _ => {}
        }
        let s = &self.solver;
        if s.max_iter == 0 || [s.feas_tol, s.gap_tol, s.kkt_tol].iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("solver tolerances and max_iter must be positive".into()));
        }
        if let Some(d) = &self.offline.domain {
            if d.len() != n || d.iter().any(|[lo, hi]| !(lo <= hi)) {
                return Err(Error::Config(format!("offline.domain must have {n} intervals with lo <= hi")));
            }
        }
        if self.offline.samples == 0 {
            return Err(Error::Config("offline.samples must be positive".into()));
        }
        if self.sweep.workers == Some(0) {
            return Err(Error::Config("sweep.workers must be positive".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> Result<(SymMat, SymMat)> {
        let (n, m) = self.plant.dims()?;
        let (dq, dr) = self.plant.default_weights()?;
        let q = match &self.q {
            Some(rows) => sym_from_rows("q", rows, n)?,
            None => dq,
        };
        let r = match &self.r {
            Some(rows) => sym_from_rows("r", rows, m)?,
            None => dr,
        };
        Ok((q, r))
    }

    pub fn system(&self) -> Result<NlSystem> {
        let (q, r) = self.weights()?;
        self.plant
            .system(q, r)
            .map_err(|e| match e {
                Error::InvalidInput(msg) | Error::Config(msg) => Error::Config(msg),
                e => e,
            })
    }

    pub fn t_end(&self) -> usize {
        self.t_end.unwrap_or_else(|| self.plant.default_t_end())
    }

    pub fn resolve_x0(&self) -> Result<DVector<f64>> {
        match self.x0.source()? {
            X0Source::Explicit(x) => Ok(x),
            X0Source::Seeded(seed) => self.plant.sample_x0(&mut ChaCha8Rng::seed_from_u64(seed)),
            X0Source::Canonical => self
                .plant
                .canonical_x0()
                .ok_or_else(|| Error::Config(format!("plant `{}` has no canonical x0", self.plant.name()))),
        }
    }

    /// Offline domain: configured, else `[−π/3, π/3] × [−3, 3]` for the
    /// pendulum and the initial-state box for the other plants.
    pub fn offline_domain(&self) -> Result<BoxDomain> {
        let bx = match (&self.offline.domain, &self.plant) {
            (Some(d), _) => d.clone(),
            (None, Plant::Pendulum(_)) => vec![[-FRAC_PI_3, FRAC_PI_3], [-3.0, 3.0]],
            (None, p) => p.x0_box()?,
        };
        BoxDomain::new(bx.iter().map(|b| b[0]).collect(), bx.iter().map(|b| b[1]).collect())
    }

    pub fn stem(&self) -> String {
        self.output
            .stem
            .clone()
            .unwrap_or_else(|| format!("{}_{}", self.plant.name(), self.scenario))
    }
}

/// Whole-run checks derived from the recorded certificates. `None` means
/// the check does not apply to the scenario or nothing was checked.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ComplianceFlags {
    /// State envelope `‖x_t‖² ≤ γ̄(1 − γ̄⁻¹)ᵗ‖x_0‖²` at every checked step.
    pub envelope: Option<bool>,
    /// Sandwich, decrease and cross-step conditions between consecutive
    /// certificates.
    pub conditions: Option<bool>,
    /// Reported `V_t(x_t)` never increases between consecutive steps.
    pub v_monotone: Option<bool>,
    /// Solution bounds implied by `γ̄` hold at every certified step.
    pub bounds: Option<bool>,
    /// `x_0` lies outside the offline certificate's ellipsoid.
    pub outside_certified_region: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub plant: String,
    pub scenario: Scenario,
    pub label: String,
    pub t_end: usize,
    /// `x_0 … x_{T_end}`.
    pub states: Vec<Vec<f64>>,
    /// `u_0 … u_{T_end−1}`.
    pub inputs: Vec<Vec<f64>>,
    pub v: Vec<Option<f64>>,
    pub gamma: Vec<Option<f64>>,
    pub status: Vec<String>,
    pub j: f64,
    pub gamma_bar: Option<f64>,
    pub flags: ComplianceFlags,
    /// Why no controller could be formed; the plant then runs with `u = 0`.
    pub failure: Option<String>,
    pub q: SymMat,
    pub r: SymMat,
    pub config: ScenarioConfig,
    /// Full per-step record of the online scenarios.
    #[serde(skip)]
    pub run: Option<OnlineRun>,
}

impl RunReport {
    pub fn n(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn m(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn x_final(&self) -> DVector<f64> {
        DVector::from_column_slice(self.states.last().map_or(&[][..], Vec::as_slice))
    }

    pub fn count(&self, status: &str) -> usize {
        self.status.iter().filter(|s| *s == status).count()
    }

    pub fn status_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for s in &self.status {
            *out.entry(s.clone()).or_insert(0) += 1;
        }
        out
    }

    pub fn recompute_j(&self) -> Result<f64> {
        let xs = to_vectors(&self.states);
        let us = to_vectors(&self.inputs);
        perf_index(&xs, &us, &self.q, &self.r, self.t_end)
    }
}

fn to_vectors(rows: &[Vec<f64>]) -> Vec<DVector<f64>> {
    rows.iter().map(|r| DVector::from_column_slice(r)).collect()
}

/// `J = Σ_{t<T_end} u_tᵀRu_t + x_tᵀQx_t`; infinite once a sample is not
/// finite (a diverged run).
pub fn perf_index(states: &[DVector<f64>], inputs: &[DVector<f64>], q: &SymMat, r: &SymMat, t_end: usize) -> Result<f64> {
    if states.len() < t_end || inputs.len() < t_end {
        return Err(Error::dims("perf_index series length", format!(">= {t_end}"), format!("{} states, {} inputs", states.len(), inputs.len())));
    }
    let mut j = 0.0;
    for t in 0..t_end {
        if states[t].len() != q.dim() || inputs[t].len() != r.dim() {
            return Err(Error::dims("perf_index sample", format!("x in R^{}, u in R^{}", q.dim(), r.dim()), format!("x in R^{}, u in R^{}", states[t].len(), inputs[t].len())));
        }
        if states[t].iter().chain(inputs[t].iter()).any(|v| !v.is_finite()) {
            return Ok(f64::INFINITY);
        }
        j += r.quad_form(&inputs[t]) + q.quad_form(&states[t]);
    }
    Ok(j)
}

/// `x_0 … x_{T_end}` under `u_t = policy(x_t)`.
/// `x_0 … x_{T_end}` under `u_t = policy(x_t)`, with the step at which the
/// state escaped `DIVERGENCE_NORM`. Later samples are `NaN`.
fn simulate(sys: &NlSystem, x0: &DVector<f64>, t_end: usize, policy: impl Fn(&DVector<f64>) -> DVector<f64>) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>, Option<usize>)> {
    let (n, m) = (sys.n(), sys.m());
    let mut xs = vec![x0.clone()];
    let mut us = Vec::with_capacity(t_end);
    let mut diverged = None;
    for t in 0..t_end {
        if diverged.is_none() && !(xs[t].norm() <= DIVERGENCE_NORM) {
            diverged = Some(t);
        }
        if diverged.is_some() {
            xs.push(DVector::from_element(n, f64::NAN));
            us.push(DVector::from_element(m, f64::NAN));
            continue;
        }
        let u = policy(&xs[t]);
        match sys.step(&xs[t], &u) {
            Ok(x) => xs.push(x),
            // A(x) or B(x) overflowed
            Err(Error::InvalidInput(_)) => {
                diverged = Some(t + 1);
                xs.push(DVector::from_element(n, f64::NAN));
            }
            Err(e) => return Err(e),
        }
        us.push(u);
    }
    if let Some(t) = diverged {
        warn!("state diverged at t = {t}");
    }
    Ok((xs, us, diverged))
}

fn monotone(v: &[Option<f64>]) -> Option<bool> {
    let mut checked = false;
    let mut ok = true;
    for w in v.windows(2) {
        if let [Some(a), Some(b)] = w {
            checked = true;
            ok &= *b <= a * (1.0 + MONOTONE_TOL) + f64::MIN_POSITIVE;
        }
    }
    checked.then_some(ok)
}

fn all_known(flags: impl Iterator<Item = Option<bool>>) -> Option<bool> {
    flags.flatten().fold(None, |acc, f| Some(acc.unwrap_or(true) && f))
}

struct Series {
    xs: Vec<DVector<f64>>,
    us: Vec<DVector<f64>>,
    v: Vec<Option<f64>>,
    gamma: Vec<Option<f64>>,
    status: Vec<String>,
}

impl Series {
    fn plain((xs, us, diverged): (Vec<DVector<f64>>, Vec<DVector<f64>>, Option<usize>), status: &str) -> Self {
        let t_end = us.len();
        let cut = diverged.unwrap_or(t_end).min(t_end);
        let mut labels = vec![status.to_string(); cut];
        labels.resize(t_end, "diverged".to_string());
        Self {
            xs,
            us,
            v: vec![None; t_end],
            gamma: vec![None; t_end],
            status: labels,
        }
    }

    fn online(run: &OnlineRun) -> Self {
        Self {
            xs: run.states().cloned().collect(),
            us: run.steps.iter().map(|s| s.u.clone()).collect(),
            v: run.steps.iter().map(|s| s.cert.as_ref().map(|c| c.v)).collect(),
            gamma: run.steps.iter().map(|s| s.cert.as_ref().map(|c| c.gamma)).collect(),
            status: run.steps.iter().map(|s| s.status.to_string()).collect(),
        }
    }
}

/// Offline certificate for the configured plant and domain.
#[derive(Debug, Clone, Serialize)]
pub struct OfflineReport {
    pub plant: String,
    pub domain: Vec<[f64; 2]>,
    pub estimate: DeltaEstimate,
    pub outcome: OfflineOutcome,
    /// Violations of the robust LMI found by independent re-verification.
    pub violations: usize,
}

pub fn certify_plant_offline(cfg: &ScenarioConfig) -> Result<OfflineReport> {
    cfg.validate()?;
    let sys = cfg.system()?;
    let domain = cfg.offline_domain()?;
    let zero = DVector::zeros(sys.n());
    if !domain.contains(&zero) {
        return Err(Error::Config("offline domain must contain the origin".into()));
    }
    let (a_bar, b_bar) = (sys.a(&zero)?, sys.b(&zero)?);
    let estimate = feasibility::estimate_delta(&sys, &domain, &a_bar, &b_bar, cfg.offline.samples, cfg.offline.shape)?;
    let delta_b = (estimate.sigma_b > 0.0).then_some(&estimate.delta_b);
    let outcome = feasibility::certify_offline(
        &OfflineSpec {
            a_bar: &a_bar,
            b_bar: &b_bar,
            delta: &estimate.delta,
            delta_b,
            q: sys.q(),
            r: sys.r(),
            gamma_bar_multiplier: cfg.gamma_bar.multiplier,
        },
        &domain,
        &cfg.solver,
    )?;
    let violations = match outcome.cert() {
        Some(c) => feasibility::verify_offline(c, 10.0 * cfg.solver.feas_tol)?.len(),
        None => 0,
    };
    Ok(OfflineReport {
        plant: cfg.plant.name().to_string(),
        domain: domain.lo.iter().zip(&domain.hi).map(|(l, h)| [*l, *h]).collect(),
        estimate,
        outcome,
        violations,
    })
}

/// Runs the configured scenario from its configured initial state.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport> {
    cfg.validate()?;
    let x0 = cfg.resolve_x0()?;
    let offline = offline_for(cfg)?;
    run_from(cfg, &x0, offline.as_ref(), cfg.stem())
}

fn offline_for(cfg: &ScenarioConfig) -> Result<Option<OfflineCert>> {
    if cfg.scenario != Scenario::OnlineSdp || cfg.gamma_bar.rule != GammaBarRule::Offline {
        return Ok(None);
    }
    let rep = certify_plant_offline(cfg)?;
    match rep.outcome {
        OfflineOutcome::Certified(c) => {
            info!("offline certificate: gamma_bar = {}, alpha = {}", c.gamma_bar, c.alpha);
            Ok(Some(*c))
        }
        OfflineOutcome::NoCertificate { status } => {
            warn!("offline certification returned {status:?}; falling back to the heuristic gamma_bar");
            Ok(None)
        }
    }
}

/// Runs the configured scenario from `x0`.
pub fn run_from(cfg: &ScenarioConfig, x0: &DVector<f64>, offline: Option<&OfflineCert>, label: String) -> Result<RunReport> {
    let sys = cfg.system()?;
    let t_end = cfg.t_end();
    let opts = &cfg.solver;
    if x0.len() != sys.n() {
        return Err(Error::Config(format!("x0 has {} components, plant has {}", x0.len(), sys.n())));
    }
    let mut flags = ComplianceFlags::default();
    let mut gamma_bar = None;
    let mut failure = None;
    let mut run = None;

    let open_loop = |status: &str| -> Result<Series> {
        Ok(Series::plain(simulate(&sys, x0, t_end, |_| DVector::zeros(sys.m()))?, status))
    };

    let series = match cfg.scenario {
        Scenario::OpenLoop => open_loop("open_loop")?,
        Scenario::LtiLqr => {
            let zero = DVector::zeros(sys.n());
            let pair = LtiPair::new(sys.a(&zero)?, sys.b(&zero)?, sys.q().clone(), sys.r().clone())?;
            match lqr::lqr_gain(&pair) {
                Ok(res) => {
                    let mut s = Series::plain(simulate(&sys, x0, t_end, |x| &res.k * x)?, "lti");
                    if let Some(pr) = &res.p_r {
                        s.v = s.xs[..t_end].iter().map(|x| x.iter().all(|v| v.is_finite()).then(|| lqr::cost_to_go(pr, x))).collect();
                    }
                    s
                }
                Err(e @ (Error::NotStabilizable { .. } | Error::NoConvergence { .. } | Error::SingularBlock { .. })) => {
                    warn!("no LQR gain at the origin: {e}");
                    failure = Some(e.to_string());
                    open_loop("failed")?
                }
                Err(e) => return Err(e),
            }
        }
        Scenario::OnlineLq | Scenario::OnlineSdp => {
            let attempt = if cfg.scenario == Scenario::OnlineLq {
                online::run_uncoupled(&sys, x0, t_end, opts)
            } else {
                let gb = match (cfg.gamma_bar.rule, offline) {
                    (GammaBarRule::Fixed, _) => cfg.gamma_bar.value.map(|v| v * cfg.gamma_bar.multiplier),
                    // the multiplier is already folded into the offline value
                    (GammaBarRule::Offline, Some(c)) => {
                        if !c.contains(x0)? {
                            warn!("x0 = {} lies outside the certified region", x0.transpose());
                            flags.outside_certified_region = true;
                        }
                        Some(c.gamma_bar)
                    }
                    _ if cfg.gamma_bar.multiplier != 1.0 => match online::solve_initial(&sys, x0, opts) {
                        Ok(c0) => Some(online::gamma_bar_heuristic(&c0) * cfg.gamma_bar.multiplier),
                        Err(_) => None,
                    },
                    _ => None,
                };
                online::run_online(&sys, x0, t_end, gb, opts)
            };
            match attempt {
                Ok(r) => {
                    let s = Series::online(&r);
                    gamma_bar = r.gamma_bar;
                    if cfg.scenario == Scenario::OnlineSdp {
                        flags.envelope = all_known(r.steps.iter().map(|s| s.envelope));
                        flags.conditions = all_known(r.steps.iter().map(|s| s.conditions.map(|c| c.asymptotic())));
                        if let Some(g) = r.gamma_bar {
                            let mut ok = None;
                            for st in r.steps.iter().filter(|s| s.status == StepStatus::Certified) {
                                let b = online::check_bounds(&sys, st.cert.as_ref().expect("certified step has a certificate"), g)?;
                                ok = Some(ok.unwrap_or(true) && b.all());
                            }
                            flags.bounds = ok;
                        }
                    }
                    run = Some(r);
                    s
                }
                Err(e @ Error::NotStabilizable { .. }) => {
                    warn!("no controller at x0: {e}");
                    failure = Some(e.to_string());
                    open_loop("failed")?
                }
                Err(e) => return Err(e),
            }
        }
    };

    if cfg.scenario != Scenario::OnlineLq {
        flags.v_monotone = monotone(&series.v);
    }
    let j = perf_index(&series.xs, &series.us, sys.q(), sys.r(), t_end)?;
    let rows = |v: &[DVector<f64>]| v.iter().map(|x| x.iter().copied().collect()).collect();
    Ok(RunReport {
        plant: cfg.plant.name().to_string(),
        scenario: cfg.scenario,
        label,
        t_end,
        states: rows(&series.xs),
        inputs: rows(&series.us),
        v: series.v,
        gamma: series.gamma,
        status: series.status,
        j,
        gamma_bar,
        flags,
        failure,
        q: sys.q().clone(),
        r: sys.r().clone(),
        config: cfg.clone(),
        run,
    })
}

/// Initial states of a sweep, drawn in order from one seeded stream.
pub fn sweep_initial_states(cfg: &ScenarioConfig, runs: usize, offline: Option<&OfflineCert>) -> Result<Vec<DVector<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sweep.seed);
    match (cfg.sweep.sample_from, offline) {
        (SampleRegion::Box, _) => (0..runs).map(|_| cfg.plant.sample_x0(&mut rng)).collect(),
        (SampleRegion::CertifiedRegion, Some(c)) => {
            let domain = cfg.offline_domain()?;
            (0..runs)
                .map(|_| {
                    for _ in 0..10_000 {
                        let x = c.sample(&mut rng)?;
                        if domain.contains(&x) {
                            return Ok(x);
                        }
                    }
                    Err(Error::Config("certified region barely meets the offline domain; no sample accepted".into()))
                })
                .collect()
        }
        (SampleRegion::CertifiedRegion, None) => Err(Error::Config(
            "sweep.sample_from = \"certified_region\" needs scenario online_sdp with gamma_bar.rule = \"offline\" and a feasible certificate".into(),
        )),
    }
}

/// Independent runs from seeded initial states, `sweep.workers` at a time.
/// Reports come back in draw order.
pub fn sweep(cfg: &ScenarioConfig, runs: usize) -> Result<Vec<RunReport>> {
    cfg.validate()?;
    let offline = offline_for(cfg)?;
    let x0s = sweep_initial_states(cfg, runs, offline.as_ref())?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.sweep.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let stem = cfg.stem();
    pool.install(|| {
        x0s.par_iter()
            .enumerate()
            .map(|(i, x0)| run_from(cfg, x0, offline.as_ref(), format!("{stem}_run{i:04}")))
            .collect()
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `<dir>/<label>.<ext>` and returns its path. CSV columns are
/// `t, x1..xn, u1..um, V, gamma, status`, one row per `t < T_end`; JSON is
/// the whole report including the configuration.
pub fn emit(report: &RunReport, format: Format, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(format!("{}.{}", report.label, format.extension()));
    match format {
        Format::Csv => write_csv(report, &path)?,
        Format::Json => {
            let file = fs::File::create(&path).map_err(|source| Error::Io { path: path.clone(), source })?;
            serde_json::to_writer_pretty(std::io::BufWriter::new(file), report).map_err(|source| Error::Json { path: path.clone(), source })?;
        }
    }
    Ok(path)
}

fn write_csv(report: &RunReport, path: &Path) -> Result<()> {
    let err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=report.n()).map(|i| format!("x{i}")));
    header.extend((1..=report.m()).map(|i| format!("u{i}")));
    header.extend(["V", "gamma", "status"].map(String::from));
    w.write_record(&header).map_err(err)?;
    for t in 0..report.t_end {
        let mut row = vec![t.to_string()];
        row.extend(report.states[t].iter().map(f64::to_string));
        row.extend(report.inputs[t].iter().map(f64::to_string));
        row.push(fmt_opt(report.v[t]));
        row.push(fmt_opt(report.gamma[t]));
        row.push(report.status[t].clone());
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// States and inputs read back from an emitted CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTrajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub status: Vec<String>,
}

pub fn read_csv(path: &Path) -> Result<CsvTrajectory> {
    let err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let bad = |msg: String| Error::Config(format!("{}: {msg}", path.display()));
    let mut rd = csv::Reader::from_path(path).map_err(err)?;
    let header = rd.headers().map_err(err)?.clone();
    let n = header.iter().filter(|h| h.starts_with('x')).count();
    let m = header.iter().filter(|h| h.starts_with('u')).count();
    let mut out = CsvTrajectory {
        states: Vec::new(),
        inputs: Vec::new(),
        status: Vec::new(),
    };
    for rec in rd.records() {
        let rec = rec.map_err(err)?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| bad(format!("short row {rec:?}")))?
                .parse()
                .map_err(|e| bad(format!("column {i}: {e}")))
        };
        out.states.push(DVector::from_iterator(n, (1..=n).map(num).collect::<Result<Vec<_>>>()?));
        out.inputs.push(DVector::from_iterator(m, (n + 1..=n + m).map(num).collect::<Result<Vec<_>>>()?));
        out.status.push(rec.get(n + m + 3).unwrap_or_default().to_string());
    }
    Ok(out)
}

/// One line of a sweep summary.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub label: String,
    pub x0: Vec<f64>,
    pub j: f64,
    pub final_norm: f64,
    pub counts: BTreeMap<String, usize>,
    pub gamma_bar: Option<f64>,
    pub flags: ComplianceFlags,
    pub failure: Option<String>,
}

impl From<&RunReport> for SweepRow {
    fn from(r: &RunReport) -> Self {
        Self {
            label: r.label.clone(),
            x0: r.states[0].clone(),
            j: r.j,
            final_norm: r.x_final().norm(),
            counts: r.status_counts(),
            gamma_bar: r.gamma_bar,
            flags: r.flags.clone(),
            failure: r.failure.clone(),
        }
    }
}

/// Writes `<dir>/<stem>_sweep.json` with one row per run.
pub fn emit_sweep_summary(reports: &[RunReport], dir: &Path, stem: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(format!("{stem}_sweep.json"));
    let rows: Vec<SweepRow> = reports.iter().map(SweepRow::from).collect();
    let file = fs::File::create(&path).map_err(|source| Error::Io { path: path.clone(), source })?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &rows).map_err(|source| Error::Json { path: path.clone(), source })?;
    Ok(path)
}
