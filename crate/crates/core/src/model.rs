//! Switched tracking problem: subsystem dynamics, reference signal, cost
//! weights, horizon, fixed mode sequence and the training region.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::transform::SwitchVector;

/// User-supplied continuous-time subsystem `ẋ = f(x) + g(x) u`.
///
/// Jacobians are optional; when absent they are obtained by central
/// differences with step `1e-5 · max(1, |x_i|)`.
pub trait CustomDynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    fn input_map(&self, x: &DVector<f64>) -> DMatrix<f64>;

    fn drift_jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    /// `Σ_i u_i ∂g_{·,i}/∂x`.
    fn input_jacobian(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

#[derive(Clone)]
pub enum ModeDynamics {
    /// `ẋ = A x + B u`.
    Linear { a: DMatrix<f64>, b: DMatrix<f64> },
    /// Unit-damping Van der Pol oscillator with the input on the velocity:
    /// `ẋ₁ = x₂`, `ẋ₂ = (1 − x₁²) x₂ − x₁ + u`.
    VanDerPol,
    Custom(Arc<dyn CustomDynamics>),
}

impl fmt::Debug for ModeDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeDynamics::Linear { a, b } => f
                .debug_struct("Linear")
                .field("a", a)
                .field("b", b)
                .finish(),
            ModeDynamics::VanDerPol => f.write_str("VanDerPol"),
            ModeDynamics::Custom(c) => write!(
                f,
                "Custom {{ n: {}, m: {} }}",
                c.state_dim(),
                c.input_dim()
            ),
        }
    }
}

impl ModeDynamics {
    pub fn state_dim(&self) -> usize {
        match self {
            ModeDynamics::Linear { a, .. } => a.nrows(),
            ModeDynamics::VanDerPol => 2,
            ModeDynamics::Custom(c) => c.state_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ModeDynamics::Linear { b, .. } => b.ncols(),
            ModeDynamics::VanDerPol => 1,
            ModeDynamics::Custom(c) => c.input_dim(),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, ModeDynamics::Linear { .. })
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            ModeDynamics::Linear { a, .. } => a * x,
            ModeDynamics::VanDerPol => {
                DVector::from_vec(vec![x[1], (1.0 - x[0] * x[0]) * x[1] - x[0]])
            }
            ModeDynamics::Custom(c) => c.drift(x),
        }
    }

    pub fn input_map(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            ModeDynamics::Linear { b, .. } => b.clone(),
            ModeDynamics::VanDerPol => DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            ModeDynamics::Custom(c) => c.input_map(x),
        }
    }

    /// `f(x) + g(x) u` in physical time.
    pub fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        match self {
            ModeDynamics::Linear { a, b } => a * x + b * u,
            ModeDynamics::VanDerPol => DVector::from_vec(vec![
                x[1],
                (1.0 - x[0] * x[0]) * x[1] - x[0] + u[0],
            ]),
            ModeDynamics::Custom(c) => c.drift(x) + c.input_map(x) * u,
        }
    }

    pub fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            ModeDynamics::Linear { a, .. } => a.clone(),
            ModeDynamics::VanDerPol => DMatrix::from_row_slice(
                2,
                2,
                &[0.0, 1.0, -2.0 * x[0] * x[1] - 1.0, 1.0 - x[0] * x[0]],
            ),
            ModeDynamics::Custom(c) => c
                .drift_jacobian(x)
                .unwrap_or_else(|| central_jacobian(x, |y| c.drift(y))),
        }
    }

    /// `Σ_i u_i ∂g_{·,i}/∂x`; zero for constant input maps.
    pub fn input_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let n = self.state_dim();
        match self {
            ModeDynamics::Linear { .. } | ModeDynamics::VanDerPol => DMatrix::zeros(n, n),
            ModeDynamics::Custom(c) => c
                .input_jacobian(x, u)
                .unwrap_or_else(|| central_jacobian(x, |y| c.input_map(y) * u)),
        }
    }

    fn uses_fd_jacobian(&self) -> bool {
        match self {
            ModeDynamics::Custom(c) => {
                let x = DVector::zeros(c.state_dim());
                let u = DVector::zeros(c.input_dim());
                c.drift_jacobian(&x).is_none() || c.input_jacobian(&x, &u).is_none()
            }
            _ => false,
        }
    }
}

/// Central-difference Jacobian with per-coordinate step `1e-5 · max(1, |x_i|)`.
pub fn central_jacobian<F>(x: &DVector<f64>, f: F) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let rows = f(x).len();
    let mut jac = DMatrix::zeros(rows, n);
    let mut probe = x.clone();
    for j in 0..n {
        let h = 1e-5 * x[j].abs().max(1.0);
        probe[j] = x[j] + h;
        let fp = f(&probe);
        probe[j] = x[j] - h;
        let fm = f(&probe);
        probe[j] = x[j];
        jac.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    jac
}

/// User-supplied reference derivative, integrated once by forward Euler on
/// a uniform physical-time grid and interpolated linearly afterwards.
#[derive(Clone)]
pub struct CustomReference {
    t0: f64,
    step: f64,
    // ∫_{t0}^{t0 + i·step} ṙ dt
    integral: Vec<DVector<f64>>,
}

impl CustomReference {
    pub fn new<F>(derivative: F, t0: f64, tf: f64, steps: usize) -> Self
    where
        F: Fn(f64) -> DVector<f64>,
    {
        let steps = steps.max(1);
        let step = (tf - t0) / steps as f64;
        let mut acc = derivative(t0) * 0.0;
        let mut integral = Vec::with_capacity(steps + 1);
        integral.push(acc.clone());
        for i in 0..steps {
            acc += derivative(t0 + i as f64 * step) * step;
            integral.push(acc.clone());
        }
        CustomReference { t0, step, integral }
    }

    fn integral_to(&self, t: f64) -> DVector<f64> {
        let last = self.integral.len() - 1;
        let s = ((t - self.t0) / self.step).max(0.0);
        let i = (s.floor() as usize).min(last.saturating_sub(1));
        let w = (s - i as f64).clamp(0.0, 1.0);
        if last == 0 {
            return self.integral[0].clone();
        }
        &self.integral[i] * (1.0 - w) + &self.integral[i + 1] * w
    }
}

impl fmt::Debug for CustomReference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomReference {{ samples: {} }}", self.integral.len())
    }
}

#[derive(Clone, Debug)]
pub enum ReferenceDynamics {
    /// `ṙ₁ = sin(πt)`, `ṙ₂ = π cos(πt)`.
    Sinusoid,
    /// `ṙ = 0`.
    Constant,
    Custom(CustomReference),
}

impl ReferenceDynamics {
    /// `∫_{t0}^{t} ṙ(s) ds` for a state of dimension `n`.
    fn integral(&self, n: usize, t0: f64, t: f64) -> DVector<f64> {
        match self {
            ReferenceDynamics::Sinusoid => DVector::from_vec(vec![
                ((PI * t0).cos() - (PI * t).cos()) / PI,
                (PI * t).sin() - (PI * t0).sin(),
            ]),
            ReferenceDynamics::Constant => DVector::zeros(n),
            ReferenceDynamics::Custom(c) => c.integral_to(t),
        }
    }
}

/// Reference signal in physical time. With `per_mode` set, the active
/// reference derivative follows the mode of the current segment.
#[derive(Clone, Debug)]
pub struct ReferenceModel {
    pub r0: DVector<f64>,
    pub dynamics: ReferenceDynamics,
    pub per_mode: Option<Vec<ReferenceDynamics>>,
}

impl ReferenceModel {
    pub fn sinusoid(r0: DVector<f64>) -> Self {
        ReferenceModel {
            r0,
            dynamics: ReferenceDynamics::Sinusoid,
            per_mode: None,
        }
    }

    pub fn constant(r0: DVector<f64>) -> Self {
        ReferenceModel {
            r0,
            dynamics: ReferenceDynamics::Constant,
            per_mode: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CostSpec {
    pub s: DMatrix<f64>,
    pub qbar: DMatrix<f64>,
    pub rbar: DMatrix<f64>,
}

impl CostSpec {
    /// Multiplies all three weights by `c`.
    pub fn scaled(&self, c: f64) -> CostSpec {
        CostSpec {
            s: &self.s * c,
            qbar: &self.qbar * c,
            rbar: &self.rbar * c,
        }
    }
}

/// Axis-aligned training box for the state plus the sampling interval for
/// switching times.
#[derive(Clone, Debug)]
pub struct Omega {
    pub state_lo: DVector<f64>,
    pub state_hi: DVector<f64>,
    /// Lower bound on every switching time; defaults to `t0`.
    pub switch_lo: Option<f64>,
    /// Upper bound on every switching time; defaults to `tf`.
    pub switch_hi: Option<f64>,
    /// Minimum distance of switching times from each other and from the
    /// horizon ends; defaults to `1e-3 · (tf − t0)`.
    pub switch_margin: Option<f64>,
}

impl Omega {
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .zip(self.state_lo.iter().zip(self.state_hi.iter()))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Euclidean length of the box diagonal.
    pub fn diameter(&self) -> f64 {
        (&self.state_hi - &self.state_lo).norm()
    }
}

/// Unvalidated problem description. Indices in `sequence` are 0-based.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub modes: Vec<ModeDynamics>,
    pub sequence: Vec<usize>,
    pub t0: f64,
    pub tf: f64,
    pub cost: CostSpec,
    pub reference: ReferenceModel,
    pub omega: Omega,
    /// Factor on the terminal costate `c_S · S (x − r)`; 1 follows the
    /// training target literally, 2 is the exact gradient of the terminal cost.
    pub terminal_factor: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// Custom modes whose Jacobians fall back to finite differences.
    pub fd_jacobian_modes: Vec<usize>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    fn push(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }
}

fn check_finite(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name.to_string()))
    }
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= 1e-12 * scale
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Runs every structural check. Non-finite matrices and drifts that do not
/// vanish at the origin are hard errors; everything else is reported.
pub fn validate_problem(p: &ProblemSpec) -> Result<ValidationReport> {
    let mut report = ValidationReport::default();

    check_finite("S", &p.cost.s)?;
    check_finite("Qbar", &p.cost.qbar)?;
    check_finite("Rbar", &p.cost.rbar)?;
    for (i, mode) in p.modes.iter().enumerate() {
        if let ModeDynamics::Linear { a, b } = mode {
            check_finite(&format!("mode {} A", i + 1), a)?;
            check_finite(&format!("mode {} B", i + 1), b)?;
        }
    }
    if !p.t0.is_finite() || !p.tf.is_finite() {
        return Err(Error::NonFinite("horizon".into()));
    }

    report.push(
        "horizon",
        p.t0 < p.tf,
        format!("t0 = {}, tf = {}", p.t0, p.tf),
    );
    report.push("modes", !p.modes.is_empty(), format!("{} modes", p.modes.len()));
    let bad_seq: Vec<usize> = p
        .sequence
        .iter()
        .copied()
        .filter(|&v| v >= p.modes.len())
        .collect();
    report.push(
        "sequence",
        !p.sequence.is_empty() && bad_seq.is_empty(),
        if bad_seq.is_empty() {
            format!("{} segments", p.sequence.len())
        } else {
            format!("unknown mode indices {:?}", bad_seq)
        },
    );

    let n = p.cost.s.nrows();
    let m = p.cost.rbar.nrows();
    let mut dims_ok = p.cost.s.is_square()
        && p.cost.qbar.is_square()
        && p.cost.rbar.is_square()
        && p.cost.qbar.nrows() == n
        && p.reference.r0.len() == n
        && p.omega.state_lo.len() == n
        && p.omega.state_hi.len() == n;
    for mode in &p.modes {
        dims_ok &= mode.state_dim() == n && mode.input_dim() == m;
        if let ModeDynamics::Linear { a, b } = mode {
            dims_ok &= a.is_square() && b.nrows() == n;
        }
    }
    let sinusoid_used = matches!(p.reference.dynamics, ReferenceDynamics::Sinusoid)
        || p.reference.per_mode.as_ref().is_some_and(|v| {
            v.iter().any(|d| matches!(d, ReferenceDynamics::Sinusoid))
        });
    if sinusoid_used {
        dims_ok &= n == 2;
    }
    if let Some(per_mode) = &p.reference.per_mode {
        dims_ok &= per_mode.len() == p.modes.len();
    }
    report.push("dimensions", dims_ok, format!("n = {}, m = {}", n, m));
    if !dims_ok {
        return Ok(report);
    }

    report.push(
        "S",
        is_symmetric(&p.cost.s) && min_eigenvalue(&p.cost.s) >= -1e-12 * p.cost.s.amax().max(1.0),
        "S not symmetric positive semi-definite",
    );
    report.push(
        "Qbar",
        is_symmetric(&p.cost.qbar)
            && min_eigenvalue(&p.cost.qbar) >= -1e-12 * p.cost.qbar.amax().max(1.0),
        "Qbar not symmetric positive semi-definite",
    );
    report.push(
        "Rbar",
        is_symmetric(&p.cost.rbar) && p.cost.rbar.clone().cholesky().is_some(),
        "Rbar not positive definite",
    );
    // Only failing checks should read like errors.
    for c in report.checks.iter_mut() {
        if c.passed && matches!(c.name.as_str(), "S" | "Qbar" | "Rbar") {
            c.detail = "ok".into();
        }
    }

    let box_ok = p
        .omega
        .state_lo
        .iter()
        .zip(p.omega.state_hi.iter())
        .all(|(lo, hi)| lo < hi && *lo <= 0.0 && *hi >= 0.0);
    report.push("omega", box_ok, "state box must be non-empty and contain the origin");

    let (slo, shi) = switch_interval(p);
    let k = p.sequence.len().saturating_sub(1);
    let margin = switch_margin(p);
    let switch_ok = k == 0 || shi - slo >= (k as f64 - 1.0).max(0.0) * margin;
    report.push(
        "switch bounds",
        switch_ok,
        format!("[{}, {}] with margin {}", slo, shi, margin),
    );
    report.push(
        "terminal factor",
        p.terminal_factor.is_finite() && p.terminal_factor > 0.0,
        format!("{}", p.terminal_factor),
    );

    let origin = DVector::zeros(n);
    for (i, mode) in p.modes.iter().enumerate() {
        let norm = mode.drift(&origin).norm();
        if !(norm <= 1e-12) {
            return Err(Error::DriftAtOrigin { mode: i + 1, norm });
        }
    }

    // Evaluators must be total on Ω.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut finite = true;
    for _ in 0..64 {
        let x = DVector::from_fn(n, |j, _| {
            rng.gen_range(p.omega.state_lo[j]..=p.omega.state_hi[j])
        });
        let u = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..=1.0));
        for mode in &p.modes {
            finite &= mode.derivative(&x, &u).iter().all(|v| v.is_finite());
            finite &= mode.drift_jacobian(&x).iter().all(|v| v.is_finite());
        }
    }
    report.push("evaluators finite on omega", finite, "");

    let mut ref_ok = true;
    if p.t0 < p.tf && p.sequence.iter().all(|&v| v < p.modes.len()) {
        let sw = SwitchVector::evenly_spaced(p.t0, p.tf, k);
        let bounds = sw.boundaries(p.t0, p.tf);
        for i in 0..=100 {
            let t = p.t0 + (p.tf - p.t0) * i as f64 / 100.0;
            ref_ok &= reference_value(p, &bounds, t).iter().all(|v| v.is_finite());
        }
    }
    report.push("reference finite", ref_ok, "");

    for (i, mode) in p.modes.iter().enumerate() {
        if mode.uses_fd_jacobian() {
            report.fd_jacobian_modes.push(i);
        }
    }
    Ok(report)
}

fn switch_margin(p: &ProblemSpec) -> f64 {
    p.omega
        .switch_margin
        .unwrap_or(1e-3 * (p.tf - p.t0))
}

fn switch_interval(p: &ProblemSpec) -> (f64, f64) {
    let margin = switch_margin(p);
    let lo = p.omega.switch_lo.unwrap_or(p.t0).max(p.t0 + margin);
    let hi = p.omega.switch_hi.unwrap_or(p.tf).min(p.tf - margin);
    (lo, hi)
}

/// Reference value for segment boundaries `t_0 < t_1 < … < t_{K+1}`.
fn reference_value(p: &ProblemSpec, bounds: &[f64], t: f64) -> DVector<f64> {
    let n = p.reference.r0.len();
    match &p.reference.per_mode {
        None => &p.reference.r0 + p.reference.dynamics.integral(n, p.t0, t),
        Some(per_mode) => {
            let mut r = p.reference.r0.clone();
            for (j, &v) in p.sequence.iter().enumerate() {
                let (a, b) = (bounds[j], bounds[j + 1]);
                if t <= a {
                    break;
                }
                let dynamics = &per_mode[v];
                let end = t.min(b);
                r += dynamics.integral(n, p.t0, end) - dynamics.integral(n, p.t0, a);
            }
            r
        }
    }
}

/// Validated, immutable switched tracking problem.
#[derive(Clone, Debug)]
pub struct SwitchedTrackingProblem {
    spec: ProblemSpec,
    rbar_inv: DMatrix<f64>,
    report: ValidationReport,
}

impl SwitchedTrackingProblem {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        let report = validate_problem(&spec)?;
        if !report.all_passed() {
            let msg = report
                .failures()
                .iter()
                .map(|c| format!("{}: {}", c.name, c.detail))
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::Validation(msg));
        }
        let rbar_inv = spec
            .cost
            .rbar
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::Validation("Rbar not positive definite".into()))?;
        Ok(SwitchedTrackingProblem {
            spec,
            rbar_inv,
            report,
        })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn report(&self) -> &ValidationReport {
        &self.report
    }

    pub fn state_dim(&self) -> usize {
        self.spec.cost.s.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.spec.cost.rbar.nrows()
    }

    pub fn num_switches(&self) -> usize {
        self.spec.sequence.len() - 1
    }

    pub fn t0(&self) -> f64 {
        self.spec.t0
    }

    pub fn tf(&self) -> f64 {
        self.spec.tf
    }

    pub fn cost(&self) -> &CostSpec {
        &self.spec.cost
    }

    pub fn rbar_inv(&self) -> &DMatrix<f64> {
        &self.rbar_inv
    }

    pub fn omega(&self) -> &Omega {
        &self.spec.omega
    }

    pub fn terminal_factor(&self) -> f64 {
        self.spec.terminal_factor
    }

    pub fn sequence(&self) -> &[usize] {
        &self.spec.sequence
    }

    pub fn modes(&self) -> &[ModeDynamics] {
        &self.spec.modes
    }

    /// Dynamics active on segment `j` of the fixed sequence.
    pub fn segment_mode(&self, j: usize) -> &ModeDynamics {
        &self.spec.modes[self.spec.sequence[j]]
    }

    pub fn all_linear(&self) -> bool {
        self.spec.modes.iter().all(ModeDynamics::is_linear)
    }

    pub fn switch_margin(&self) -> f64 {
        switch_margin(&self.spec)
    }

    /// Interval every switching time is sampled from, margins applied.
    pub fn switch_interval(&self) -> (f64, f64) {
        switch_interval(&self.spec)
    }

    /// Same problem with a different terminal costate factor.
    pub fn with_terminal_factor(&self, factor: f64) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.terminal_factor = factor;
        SwitchedTrackingProblem::new(spec)
    }

    /// Same problem with `S`, `Q̄`, `R̄` multiplied by `c`.
    pub fn with_cost_scaled(&self, c: f64) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.cost = spec.cost.scaled(c);
        SwitchedTrackingProblem::new(spec)
    }

    /// Physical-time derivative `f̄_v(x) + ḡ_v(x) u` of mode `v` (0-based).
    pub fn eval_mode(&self, v: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let mode = self
            .spec
            .modes
            .get(v)
            .ok_or_else(|| Error::OutOfRange(format!("mode index {}", v)))?;
        let dx = mode.derivative(x, u);
        if dx.iter().all(|v| v.is_finite()) {
            Ok(dx)
        } else {
            Err(Error::NonFinite(format!(
                "derivative of mode {} at x = {:?}, u = {:?}",
                v + 1,
                x.as_slice(),
                u.as_slice()
            )))
        }
    }

    /// `(∂f̄/∂x, Σ_i u_i ∂ḡ_{·,i}/∂x)` for mode `v` (0-based).
    pub fn mode_jacobians(
        &self,
        v: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let mode = self
            .spec
            .modes
            .get(v)
            .ok_or_else(|| Error::OutOfRange(format!("mode index {}", v)))?;
        Ok((mode.drift_jacobian(x), mode.input_jacobian(x, u)))
    }

    /// Reference at physical time `t`. The switching vector only matters
    /// when reference dynamics are mode dependent.
    pub fn reference_at(&self, sw: &SwitchVector, t: f64) -> Result<DVector<f64>> {
        let span = 1e-12 * (self.spec.tf - self.spec.t0).abs().max(1.0);
        if !(t >= self.spec.t0 - span && t <= self.spec.tf + span) {
            return Err(Error::OutOfRange(format!(
                "time {} (horizon [{}, {}])",
                t, self.spec.t0, self.spec.tf
            )));
        }
        Ok(self.reference_unchecked(sw, t))
    }

    pub(crate) fn reference_unchecked(&self, sw: &SwitchVector, t: f64) -> DVector<f64> {
        self.reference_for_times(sw.times(), t)
    }

    pub(crate) fn reference_for_times(&self, tsw: &[f64], t: f64) -> DVector<f64> {
        if self.spec.reference.per_mode.is_none() {
            let n = self.state_dim();
            return &self.spec.reference.r0
                + self.spec.reference.dynamics.integral(n, self.spec.t0, t);
        }
        let mut bounds = Vec::with_capacity(tsw.len() + 2);
        bounds.push(self.spec.t0);
        bounds.extend_from_slice(tsw);
        bounds.push(self.spec.tf);
        reference_value(&self.spec, &bounds, t)
    }
}
