//! Switching-time selection from trained costate networks: scalar
//! minimization of the propagated cost (method 1), analytic integration of
//! the costate field (method 2) and an exhaustive sweep (method 3).

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{curl_defect, integrate_costate_field, minimize_univariate_poly, PolynomialExpression};
use crate::error::{Error, Result};
use crate::model::SwitchedTrackingProblem;
use crate::rollout::{rollout, CostatePolicy};
use crate::snac::CostateNetwork;
use crate::transform::{SwitchVector, TransformedGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Scalar,
    Analytic,
    Sweep,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Scalar => "method1",
            Method::Analytic => "method2",
            Method::Sweep => "method3",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub tsw: Vec<f64>,
    /// `NaN` when the rollout diverged.
    pub cost: f64,
    pub feasible: bool,
}

/// Sampled `V(t_sw, x0)` with its argmin.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValueCurve {
    pub method: Method,
    pub samples: Vec<CurvePoint>,
    pub argmin: usize,
}

impl ValueCurve {
    /// Wraps already evaluated points; fails if none is feasible.
    pub fn from_samples(method: Method, samples: Vec<CurvePoint>) -> Result<Self> {
        let argmin = argmin(&samples)?;
        Ok(ValueCurve {
            method,
            samples,
            argmin,
        })
    }

    pub fn best(&self) -> &CurvePoint {
        &self.samples[self.argmin]
    }

    /// Header `t1,...,tK,J,feasible,argmin`; the chosen row has `argmin = 1`.
    pub fn write_csv<W: Write>(&self, out: &mut W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {}", c)?;
        }
        let k = self.samples.first().map_or(0, |s| s.tsw.len());
        let mut head: Vec<String> = (1..=k).map(|i| format!("t{}", i)).collect();
        head.push("J".into());
        head.push("feasible".into());
        head.push("argmin".into());
        writeln!(out, "{}", head.join(","))?;
        for (i, s) in self.samples.iter().enumerate() {
            let mut row: Vec<String> = s.tsw.iter().map(|t| format!("{:?}", t)).collect();
            row.push(format!("{:?}", s.cost));
            row.push(s.feasible.to_string());
            row.push(u8::from(i == self.argmin).to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Smaller cost wins; ties go to the lexicographically smaller switching vector.
fn better(a: &CurvePoint, b: &CurvePoint) -> bool {
    match a.cost.total_cmp(&b.cost) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => a
            .tsw
            .iter()
            .zip(&b.tsw)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            == Some(Ordering::Less),
    }
}

fn argmin(samples: &[CurvePoint]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in samples.iter().enumerate() {
        if s.feasible && best.map_or(true, |b| better(s, &samples[b])) {
            best = Some(i);
        }
    }
    best.ok_or_else(|| Error::Divergence {
        khat: 0,
        detail: "every candidate switching vector diverged".into(),
    })
}

/// Evaluates `objective` on every candidate in parallel. Divergent
/// candidates are kept but marked infeasible.
pub fn sweep_objective<F>(method: Method, candidates: &[SwitchVector], objective: F) -> Result<ValueCurve>
where
    F: Fn(&SwitchVector) -> Result<f64> + Sync,
{
    if candidates.is_empty() {
        return Err(Error::Validation("no candidate switching vectors".into()));
    }
    let results: Vec<Result<f64>> = candidates.par_iter().map(|c| objective(c)).collect();
    let mut samples = Vec::with_capacity(candidates.len());
    for (c, r) in candidates.iter().zip(results) {
        let (cost, feasible) = match r {
            Ok(j) if j.is_finite() => (j, true),
            Ok(_) | Err(Error::Divergence { .. }) => {
                log::warn!("candidate {:?} diverged; excluded", c.times());
                (f64::NAN, false)
            }
            Err(e) => return Err(e),
        };
        samples.push(CurvePoint {
            tsw: c.times().to_vec(),
            cost,
            feasible,
        });
    }
    ValueCurve::from_samples(method, samples)
}

/// Closed-loop total cost from `x0` under the trained network.
pub fn closed_loop_cost(
    net: &CostateNetwork,
    p: &SwitchedTrackingProblem,
    grid: &TransformedGrid,
    sw: &SwitchVector,
    x0: &DVector<f64>,
) -> Result<f64> {
    let policy = CostatePolicy {
        net,
        problem: p,
        grid,
    };
    Ok(rollout(p, grid, sw, &policy, x0)?.total_cost)
}

/// Cell-centred candidates: `count` points per switching time over the
/// sampling interval, keeping only vectors that respect the spacing margin.
pub fn uniform_candidates(p: &SwitchedTrackingProblem, count: usize) -> Result<Vec<SwitchVector>> {
    let (lo, hi) = p.switch_interval();
    uniform_candidates_in(p, lo, hi, count)
}

pub fn uniform_candidates_in(
    p: &SwitchedTrackingProblem,
    lo: f64,
    hi: f64,
    count: usize,
) -> Result<Vec<SwitchVector>> {
    if count == 0 || !(lo < hi) {
        return Err(Error::Validation(format!(
            "candidate grid of {} points on [{}, {}]",
            count, lo, hi
        )));
    }
    let k = p.num_switches();
    let cell = (hi - lo) / count as f64;
    let axis: Vec<f64> = (0..count).map(|i| lo + (i as f64 + 0.5) * cell).collect();
    let gap = p.switch_margin();
    let mut out = Vec::new();
    let mut idx = vec![0usize; k];
    loop {
        let t: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
        if t.windows(2).all(|w| w[1] - w[0] >= gap) {
            if let Ok(sw) = SwitchVector::new(t, p.t0(), p.tf()) {
                out.push(sw);
            }
        }
        // Odometer over the K-fold product, last index fastest.
        let mut pos = k;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < count {
                break;
            }
            idx[pos] = 0;
        }
        if k == 0 {
            return Ok(out);
        }
    }
}

/// One closed-loop rollout per candidate.
pub fn method3_sweep(
    net: &CostateNetwork,
    p: &SwitchedTrackingProblem,
    grid: &TransformedGrid,
    x0: &DVector<f64>,
    candidates: &[SwitchVector],
) -> Result<ValueCurve> {
    net.check_compatible(p, grid)?;
    sweep_objective(Method::Sweep, candidates, |sw| closed_loop_cost(net, p, grid, sw, x0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GoldenOutcome {
    pub x: f64,
    pub fx: f64,
    pub evaluations: usize,
    /// False when the sampled values were not consistent with a unimodal
    /// objective.
    pub unimodal: bool,
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Checks that the samples, ordered by abscissa, fall and then rise.
fn looks_unimodal(points: &[(f64, f64)]) -> bool {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let scale = pts.iter().fold(0.0f64, |m, p| m.max(p.1.abs()));
    let slack = 1e-12 * scale;
    let mut rising = false;
    for w in pts.windows(2) {
        if w[1].1 > w[0].1 + slack {
            rising = true;
        } else if rising && w[1].1 < w[0].1 - slack {
            return false;
        }
    }
    true
}

/// Divergence counts as an infinite cost.
fn finite_or_inf(r: Result<f64>) -> Result<f64> {
    match r {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) | Err(Error::Divergence { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Golden-section search on `[lo, hi]` to absolute tolerance `tol`.
/// Endpoints are evaluated too so monotone objectives return a boundary.
pub fn golden_section<F>(f: F, lo: f64, hi: f64, tol: f64) -> Result<GoldenOutcome>
where
    F: Fn(f64) -> Result<f64>,
{
    if !(lo < hi) || !(tol > 0.0) {
        return Err(Error::Validation(format!("golden section on [{}, {}]", lo, hi)));
    }
    let eval = |x: f64| finite_or_inf(f(x));
    let mut points = vec![(lo, eval(lo)?), (hi, eval(hi)?)];
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    points.push((c, fc));
    points.push((d, fd));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c)?;
            points.push((c, fc));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d)?;
            points.push((d, fd));
        }
    }
    let unimodal = looks_unimodal(&points);
    let evaluations = points.len();
    let (x, fx) = points
        .into_iter()
        .min_by(|p, q| p.1.total_cmp(&q.1).then(p.0.total_cmp(&q.0)))
        .expect("at least four evaluations");
    Ok(GoldenOutcome {
        x,
        fx,
        evaluations,
        unimodal,
    })
}

/// Candidate count used when golden-section search detects a non-unimodal
/// objective.
pub const FALLBACK_GRID: usize = 64;

/// Points scanned before golden-section search when K = 1.
const PRESCAN: usize = 9;

#[derive(Clone, Debug, Serialize)]
pub struct Method1Result {
    pub tsw: Vec<f64>,
    pub cost: f64,
    pub evaluations: usize,
    /// Sequential evaluations in the order they were made.
    pub trace: Vec<CurvePoint>,
    /// Set when the search fell back to a sweep.
    pub fallback: Option<ValueCurve>,
}

/// Minimizes `objective` over ordered switching vectors in `[lo, hi]^K`.
/// K = 1 is a single golden-section search; K > 1 cycles coordinate-wise.
pub fn method1_objective<F>(
    p: &SwitchedTrackingProblem,
    lo: f64,
    hi: f64,
    objective: F,
) -> Result<Method1Result>
where
    F: Fn(&SwitchVector) -> Result<f64> + Sync,
{
    let k = p.num_switches();
    if k == 0 {
        return Err(Error::Unsupported("no switching times to optimize".into()));
    }
    let tol = 1e-3 * (p.tf() - p.t0());
    let gap = p.switch_margin();
    let (lo, hi) = (lo.max(p.switch_interval().0), hi.min(p.switch_interval().1));
    if !(lo + (k as f64 - 1.0) * gap < hi) {
        return Err(Error::Validation(format!("no admissible switching times in [{}, {}]", lo, hi)));
    }
    let trace = std::cell::RefCell::new(Vec::new());
    let eval = |sw: &SwitchVector| -> Result<f64> {
        let r = finite_or_inf(objective(sw));
        let cost = *r.as_ref().unwrap_or(&f64::INFINITY);
        trace.borrow_mut().push(CurvePoint {
            tsw: sw.times().to_vec(),
            cost: if cost.is_finite() { cost } else { f64::NAN },
            feasible: cost.is_finite(),
        });
        r
    };
    let fallback = |evaluations: usize| -> Result<Method1Result> {
        log::warn!("objective is not unimodal; falling back to a {}-point sweep", FALLBACK_GRID);
        let candidates = uniform_candidates_in(p, lo, hi, FALLBACK_GRID)?;
        let curve = sweep_objective(Method::Scalar, &candidates, &objective)?;
        let best = curve.best().clone();
        Ok(Method1Result {
            tsw: best.tsw,
            cost: best.cost,
            evaluations: evaluations + curve.samples.len(),
            trace: trace.borrow().clone(),
            fallback: Some(curve),
        })
    };

    let mut evaluations = 0;
    let mut t = SwitchVector::evenly_spaced(lo, hi, k).times().to_vec();
    let mut bracket = (lo, hi);
    if k == 1 {
        // Coarse scan to bracket the minimum and catch several wells early.
        let scan: Vec<(f64, f64)> = (0..PRESCAN)
            .map(|i| {
                let s = lo + (hi - lo) * i as f64 / (PRESCAN - 1) as f64;
                let sw = SwitchVector::new(vec![s], p.t0(), p.tf())?;
                Ok((s, eval(&sw)?))
            })
            .collect::<Result<_>>()?;
        evaluations += scan.len();
        if !looks_unimodal(&scan) {
            return fallback(evaluations);
        }
        let best = (0..scan.len())
            .min_by(|&a, &b| scan[a].1.total_cmp(&scan[b].1))
            .expect("non-empty scan");
        bracket = (scan[best.saturating_sub(1)].0, scan[(best + 1).min(scan.len() - 1)].0);
        t[0] = scan[best].0;
    }
    let mut cost = f64::INFINITY;
    for _sweep in 0..10 {
        let before = t.clone();
        for i in 0..k {
            let a = if i == 0 { bracket.0 } else { t[i - 1] + gap };
            let b = if i + 1 == k { bracket.1 } else { t[i + 1] - gap };
            if !(a < b) {
                continue;
            }
            let out = golden_section(
                |s| {
                    let mut trial = t.clone();
                    trial[i] = s;
                    let sw = SwitchVector::new(trial, p.t0(), p.tf())?;
                    eval(&sw)
                },
                a,
                b,
                tol,
            )?;
            evaluations += out.evaluations;
            if !out.unimodal {
                return fallback(evaluations);
            }
            t[i] = out.x;
            cost = out.fx;
        }
        if k == 1 || before.iter().zip(&t).all(|(x, y)| (x - y).abs() <= tol) {
            break;
        }
    }
    if !cost.is_finite() {
        return fallback(evaluations);
    }
    let trace = trace.into_inner();
    Ok(Method1Result {
        tsw: t,
        cost,
        evaluations,
        trace,
        fallback: None,
    })
}

pub fn method1_scalar(
    net: &CostateNetwork,
    p: &SwitchedTrackingProblem,
    grid: &TransformedGrid,
    x0: &DVector<f64>,
    lo: f64,
    hi: f64,
) -> Result<Method1Result> {
    net.check_compatible(p, grid)?;
    method1_objective(p, lo, hi, |sw| closed_loop_cost(net, p, grid, sw, x0))
}

#[derive(Clone, Debug)]
pub struct Method2Result {
    /// `V(t₁, x)` with the integration constant `C(t₁)` set to zero.
    pub value: PolynomialExpression,
    /// Ascending coefficients of `V(t₁, x0)`.
    pub restricted: Vec<f64>,
    pub t1: f64,
    pub curl_defect: f64,
    /// `curl_defect / ‖V‖`.
    pub relative_curl_defect: f64,
}

/// Caveat printed with every method 2 result.
pub const METHOD2_CAVEAT: &str = "the value polynomial omits the integration constant C(t1), which the costate field does not determine; its argmin assumes C is constant";

/// Integrates the step-0 costate network in `x` and minimizes the result
/// over `t₁ ∈ [lo, hi]` at `x0`.
pub fn method2_analytic(
    net: &CostateNetwork,
    x0: &DVector<f64>,
    lo: f64,
    hi: f64,
) -> Result<Method2Result> {
    if net.num_switches() != 1 {
        return Err(Error::Unsupported(format!(
            "analytic minimization needs exactly one switching time, got {}",
            net.num_switches()
        )));
    }
    if x0.len() != net.state_dim() {
        return Err(Error::Dimension(format!(
            "initial state has {} entries, expected {}",
            x0.len(),
            net.state_dim()
        )));
    }
    let w = net.weights(0).ok_or(Error::Untrained(0))?;
    method2_from_weights(net.basis(), w, x0, lo, hi)
}

pub fn method2_from_weights(
    basis: &crate::basis::PolynomialBasis,
    w: &nalgebra::DMatrix<f64>,
    x0: &DVector<f64>,
    lo: f64,
    hi: f64,
) -> Result<Method2Result> {
    let value = integrate_costate_field(basis, w, 1)?;
    let defect = curl_defect(basis, w, 1)?;
    let mut vars = vec![0.0];
    vars.extend_from_slice(x0.as_slice());
    let restricted = value.restrict(0, &vars);
    let t1 = minimize_univariate_poly(&restricted, lo, hi)?;
    let norm = value.norm();
    Ok(Method2Result {
        relative_curl_defect: if norm > 0.0 { defect / norm } else { defect },
        value,
        restricted,
        t1,
        curl_defect: defect,
    })
}

/// One line per term: `coefficient,e1,...,en`.
pub fn write_polynomial<W: Write>(out: &mut W, poly: &PolynomialExpression, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {}", c)?;
    }
    for (c, e) in poly.terms() {
        let exps: Vec<String> = e.iter().map(u32::to_string).collect();
        writeln!(out, "{:?},{}", c, exps.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::PolynomialBasis;
    use crate::model::ModeDynamics;
    use crate::problems;

    fn vdp_sw(t: f64) -> SwitchVector {
        SwitchVector::new(vec![t], 0.0, 3.0).unwrap()
    }

    #[test]
    fn candidates_are_cell_centred() {
        let p = problems::van_der_pol();
        let c = uniform_candidates_in(&p, 0.0, 3.0, 30).unwrap();
        assert_eq!(c.len(), 30);
        assert!((c[0].times()[0] - 0.05).abs() < 1e-12);
        assert!((c[29].times()[0] - 2.95).abs() < 1e-12);
        let mut spec = problems::van_der_pol_spec();
        spec.sequence = vec![0, 1, 0];
        let p2 = SwitchedTrackingProblem::new(spec).unwrap();
        let c2 = uniform_candidates_in(&p2, 0.0, 3.0, 4).unwrap();
        // Ordered pairs out of 4 cells.
        assert_eq!(c2.len(), 6);
    }

    #[test]
    fn sweep_single_candidate_and_ties() {
        let one = [vdp_sw(1.2)];
        let curve = sweep_objective(Method::Sweep, &one, |_| Ok(3.0)).unwrap();
        assert_eq!(curve.argmin, 0);
        let many: Vec<_> = [2.0, 0.5, 1.0].iter().map(|t| vdp_sw(*t)).collect();
        let flat = sweep_objective(Method::Sweep, &many, |_| Ok(1.0)).unwrap();
        assert_eq!(flat.best().tsw, vec![0.5]);
    }

    #[test]
    fn sweep_excludes_divergent_candidates() {
        let many: Vec<_> = [0.5, 1.0, 1.5].iter().map(|t| vdp_sw(*t)).collect();
        let curve = sweep_objective(Method::Sweep, &many, |sw| {
            if sw.times()[0] < 0.7 {
                Err(Error::Divergence {
                    khat: 3,
                    detail: String::new(),
                })
            } else {
                Ok(sw.times()[0])
            }
        })
        .unwrap();
        assert!(!curve.samples[0].feasible);
        assert_eq!(curve.best().tsw, vec![1.0]);
        let none = sweep_objective(Method::Sweep, &many[..1], |_| {
            Err(Error::Divergence {
                khat: 0,
                detail: String::new(),
            })
        });
        assert!(none.is_err());
    }

    #[test]
    fn golden_section_examples() {
        let q = golden_section(|t| Ok((t - 1.5).powi(2)), 0.0, 3.0, 1e-3).unwrap();
        assert!((q.x - 1.5).abs() <= 1e-3 && q.unimodal);
        let up = golden_section(|t| Ok(t), 0.2, 2.0, 1e-3).unwrap();
        assert_eq!(up.x, 0.2);
        let down = golden_section(|t| Ok(-t), 0.2, 2.0, 1e-3).unwrap();
        assert_eq!(down.x, 2.0);
        assert!(looks_unimodal(&[(0.0, 2.0), (1.0, 1.0), (2.0, 1.0), (3.0, 4.0)]));
        assert!(!looks_unimodal(&[(0.0, 2.0), (1.0, 1.0), (2.0, 3.0), (3.0, 0.5)]));
    }

    #[test]
    fn method1_on_synthetic_objectives() {
        let p = problems::van_der_pol();
        let r = method1_objective(&p, 0.0, 3.0, |sw| Ok((sw.times()[0] - 1.5).powi(2))).unwrap();
        assert!((r.tsw[0] - 1.5).abs() <= 1e-3 && r.fallback.is_none());
        let (lo, _) = p.switch_interval();
        let r = method1_objective(&p, 0.0, 3.0, |sw| Ok(sw.times()[0])).unwrap();
        assert_eq!(r.tsw[0], lo);
        // Two wells: the sweep fallback finds the deeper one.
        let r = method1_objective(&p, 0.0, 3.0, |sw| {
            let t = sw.times()[0];
            Ok((6.0 * t).cos() + 0.1 * t)
        })
        .unwrap();
        let curve = r.fallback.expect("fallback");
        assert_eq!(curve.samples.len(), FALLBACK_GRID);
        assert!((r.tsw[0] - std::f64::consts::PI / 6.0).abs() < 3.0 / 64.0, "{:?}", r.tsw);
    }

    #[test]
    fn method1_coordinate_descent_two_switches() {
        let mut spec = problems::van_der_pol_spec();
        spec.sequence = vec![0, 1, 0];
        let p = SwitchedTrackingProblem::new(spec).unwrap();
        let r = method1_objective(&p, 0.0, 3.0, |sw| {
            let t = sw.times();
            Ok((t[0] - 0.8).powi(2) + (t[1] - 2.1).powi(2) + 0.3 * (t[0] - 0.8) * (t[1] - 2.1))
        })
        .unwrap();
        assert!((r.tsw[0] - 0.8).abs() < 3e-3 && (r.tsw[1] - 2.1).abs() < 3e-3, "{:?}", r.tsw);
    }

    #[test]
    fn method2_recovers_constructed_value() {
        // V = (t - 1)² x₁² + x₂² + 0.5 t x₁ x₂ on variables (t, x₁, x₂).
        let basis = PolynomialBasis::enumerate(3, 3).unwrap();
        let v = PolynomialExpression::from_terms(
            3,
            vec![
                (1.0, vec![2, 2, 0]),
                (-2.0, vec![1, 2, 0]),
                (1.0, vec![0, 2, 0]),
                (1.0, vec![0, 0, 2]),
                (0.5, vec![1, 1, 1]),
            ],
        );
        let w = v.gradient_weights(&basis, 1).unwrap();
        let x0 = DVector::from_vec(vec![1.0, -0.5]);
        let r = method2_from_weights(&basis, &w, &x0, 0.0, 3.0).unwrap();
        assert!(r.value.sub(&v).norm() < 1e-12);
        assert!(r.curl_defect < 1e-12);
        // V(t, 1, -0.5) = (t-1)² + 0.25 - 0.25 t, minimized at t = 1.125.
        assert!((r.t1 - 1.125).abs() < 1e-9, "{}", r.t1);
    }

    #[test]
    fn method2_requires_single_switch() {
        let mut spec = problems::van_der_pol_spec();
        spec.sequence = vec![0, 1, 0];
        let p = SwitchedTrackingProblem::new(spec).unwrap();
        let grid = TransformedGrid::new(2, 0.5).unwrap();
        let net = CostateNetwork::untrained(&p, &grid, 2, 0).unwrap();
        let x0 = DVector::from_vec(vec![1.0, -0.5]);
        assert!(matches!(method2_analytic(&net, &x0, 0.0, 3.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn identical_modes_give_flat_curve() {
        // Both segments run the same dynamics, so t₁ only relabels time.
        let mut spec = problems::lq_two_mode_spec();
        let m = spec.modes[0].clone();
        spec.modes = vec![m];
        spec.sequence = vec![0, 0];
        assert!(matches!(spec.modes[0], ModeDynamics::Linear { .. }));
        let p = SwitchedTrackingProblem::new(spec).unwrap();
        let grid = TransformedGrid::new(1, 0.01).unwrap();
        let x0 = DVector::from_vec(vec![0.5, 0.5]);
        let candidates = uniform_candidates_in(&p, 0.4, 0.6, 5).unwrap();
        let curve = sweep_objective(Method::Sweep, &candidates, |sw| {
            let sol = crate::oracle::lq_solve(&p, &grid, sw)?;
            let policy = crate::oracle::OraclePolicy { sol: &sol };
            Ok(rollout(&p, &grid, sw, &policy, &x0)?.total_cost)
        })
        .unwrap();
        let costs: Vec<f64> = curve.samples.iter().map(|s| s.cost).collect();
        let spread = costs.iter().cloned().fold(f64::MIN, f64::max) - costs.iter().cloned().fold(f64::MAX, f64::min);
        // Step sizes differ between the segments, so flat up to O(h).
        assert!(spread < 1e-2 * costs[0], "{:?}", costs);
    }

    #[test]
    fn csv_and_polynomial_export() {
        let many: Vec<_> = [0.5, 1.0].iter().map(|t| vdp_sw(*t)).collect();
        let curve = sweep_objective(Method::Sweep, &many, |sw| Ok(sw.times()[0] * 2.0)).unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf, Some("seed=1")).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "# seed=1\nt1,J,feasible,argmin\n0.5,1.0,true,1\n1.0,2.0,true,0\n"
        );
        let poly = PolynomialExpression::from_terms(3, vec![(2.5, vec![1, 0, 2])]);
        let mut buf = Vec::new();
        write_polynomial(&mut buf, &poly, None).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "2.5,1,0,2\n");
    }
}
