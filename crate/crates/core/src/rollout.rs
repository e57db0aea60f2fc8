//! Closed-loop simulation on the transformed grid, tracking cost, and the
//! exact adjoint (costate) recursion along a stored trajectory.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::SwitchedTrackingProblem;
use crate::snac::CostateNetwork;
use crate::transform::{jacobian_with, step_with, Schedule, SwitchVector, TransformedGrid};

/// Feedback law evaluated on the transformed grid.
pub trait ControlPolicy: Sync {
    fn control(&self, khat: usize, sw: &SwitchVector, x: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Open-loop baseline: `u ≡ 0`.
#[derive(Clone, Copy, Debug)]
pub struct ZeroPolicy {
    pub input_dim: usize,
}

impl ControlPolicy for ZeroPolicy {
    fn control(&self, _khat: usize, _sw: &SwitchVector, _x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(self.input_dim))
    }
}

/// Wraps a closure `(khat, sw, x) -> u`.
pub struct FnPolicy<F>(pub F);

impl<F> ControlPolicy for FnPolicy<F>
where
    F: Fn(usize, &SwitchVector, &DVector<f64>) -> DVector<f64> + Sync,
{
    fn control(&self, khat: usize, sw: &SwitchVector, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok((self.0)(khat, sw, x))
    }
}

/// Replays a fixed control sequence regardless of the state.
pub struct OpenLoopPolicy {
    pub controls: Vec<DVector<f64>>,
}

impl ControlPolicy for OpenLoopPolicy {
    fn control(&self, khat: usize, _sw: &SwitchVector, _x: &DVector<f64>) -> Result<DVector<f64>> {
        self.controls
            .get(khat)
            .cloned()
            .ok_or_else(|| Error::OutOfRange(format!("step {} of a {}-step control sequence", khat, self.controls.len())))
    }
}

/// `u = −R̄⁻¹ ḡ_v(x)ᵀ λ̂_{k̂+1}` using a trained costate network.
pub struct CostatePolicy<'a> {
    pub net: &'a CostateNetwork,
    pub problem: &'a SwitchedTrackingProblem,
    pub grid: &'a TransformedGrid,
}

impl ControlPolicy for CostatePolicy<'_> {
    fn control(&self, khat: usize, sw: &SwitchVector, x: &DVector<f64>) -> Result<DVector<f64>> {
        policy_from_costates(self.net, self.problem, self.grid, sw, khat, x)
    }
}

/// `−R̄⁻¹ ḡ(x)ᵀ λ` for the mode active on segment `j`.
pub fn control_from_costate(
    p: &SwitchedTrackingProblem,
    segment: usize,
    x: &DVector<f64>,
    lambda_next: &DVector<f64>,
) -> DVector<f64> {
    let g = p.segment_mode(segment).input_map(x);
    -(p.rbar_inv() * (g.transpose() * lambda_next))
}

/// Policy extraction from the costate network. With `R_j = R̄ σ_j δt̂` and
/// `g_j = ḡ σ_j δt̂` the step factors cancel.
pub fn policy_from_costates(
    net: &CostateNetwork,
    p: &SwitchedTrackingProblem,
    grid: &TransformedGrid,
    sw: &SwitchVector,
    khat: usize,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let lambda = net.predict(khat, sw.times(), x)?;
    if lambda.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            khat,
            detail: "non-finite costate prediction".into(),
        });
    }
    Ok(control_from_costate(p, grid.active_segment(khat), x, &lambda))
}

/// `½ (x − r)ᵀ Q̄ (x − r) σ_j δt̂ + ½ uᵀ R̄ u σ_j δt̂`.
pub fn stage_cost(
    p: &SwitchedTrackingProblem,
    grid: &TransformedGrid,
    sw: &SwitchVector,
    khat: usize,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<f64> {
    if khat >= grid.nprime() {
        return Err(Error::OutOfRange(format!("step {} (N' = {})", khat, grid.nprime())));
    }
    let sched = Schedule::new(p, grid, sw)?;
    let r = p.reference_unchecked(sw, sched.time(khat));
    Ok(stage_cost_with(p, sched.step_size(khat), x, &r, u))
}

fn stage_cost_with(
    p: &SwitchedTrackingProblem,
    h: f64,
    x: &DVector<f64>,
    r: &DVector<f64>,
    u: &DVector<f64>,
) -> f64 {
    let e = x - r;
    let c = p.cost();
    0.5 * e.dot(&(&c.qbar * &e)) * h + 0.5 * u.dot(&(&c.rbar * u)) * h
}

/// A complete closed-loop run. Rows `0..=N′` for states and references,
/// `0..N′` for controls and stage costs.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub that: Vec<f64>,
    pub t: Vec<f64>,
    pub segments: Vec<usize>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub refs: Vec<DVector<f64>>,
    pub stage_costs: Vec<f64>,
    pub terminal_cost: f64,
    pub total_cost: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn terminal_error(&self) -> DVector<f64> {
        self.final_state() - self.refs.last().unwrap()
    }

    /// RMS of `x_i − r_i` over rows with `t̂` in `[lo, hi]`.
    pub fn rms_error(&self, coord: usize, lo: f64, hi: f64) -> f64 {
        let (sum, count) = self
            .that
            .iter()
            .zip(self.states.iter().zip(&self.refs))
            .filter(|(th, _)| **th >= lo && **th <= hi)
            .fold((0.0, 0usize), |(s, c), (_, (x, r))| {
                let e = x[coord] - r[coord];
                (s + e * e, c + 1)
            });
        if count == 0 {
            0.0
        } else {
            (sum / count as f64).sqrt()
        }
    }

    /// CSV with header
    /// `khat,that,t,segment,mode,x1..xn,r1..rn,u1..um,stage_cost`. The terminal
    /// row leaves the controls empty and carries the terminal cost.
    pub fn write_csv<W: Write>(
        &self,
        out: &mut W,
        p: &SwitchedTrackingProblem,
        comment: Option<&str>,
    ) -> Result<()> {
        let n = p.state_dim();
        let m = p.input_dim();
        if let Some(c) = comment {
            writeln!(out, "# {}", c)?;
        }
        let mut header = vec!["khat".to_string(), "that".into(), "t".into(), "segment".into(), "mode".into()];
        header.extend((1..=n).map(|i| format!("x{}", i)));
        header.extend((1..=n).map(|i| format!("r{}", i)));
        header.extend((1..=m).map(|i| format!("u{}", i)));
        header.push("stage_cost".into());
        writeln!(out, "{}", header.join(","))?;
        let last = self.states.len() - 1;
        for k in 0..=last {
            let j = self.segments[k];
            let mut row = vec![
                k.to_string(),
                self.that[k].to_string(),
                self.t[k].to_string(),
                j.to_string(),
                (p.sequence()[j] + 1).to_string(),
            ];
            row.extend(self.states[k].iter().map(|v| v.to_string()));
            row.extend(self.refs[k].iter().map(|v| v.to_string()));
            if k < last {
                row.extend(self.controls[k].iter().map(|v| v.to_string()));
                row.push(self.stage_costs[k].to_string());
            } else {
                row.extend(std::iter::repeat(String::new()).take(m));
                row.push(self.terminal_cost.to_string());
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Propagates `x0` under `policy` for `N′` steps and accumulates the
/// discretized tracking cost. Aborts once `|x|` exceeds `1e3 · diam(Ω)`.
pub fn rollout(
    p: &SwitchedTrackingProblem,
    grid: &TransformedGrid,
    sw: &SwitchVector,
    policy: &dyn ControlPolicy,
    x0: &DVector<f64>,
) -> Result<Trajectory> {
    if x0.len() != p.state_dim() {
        return Err(Error::Dimension(format!(
            "initial state has {} entries, expected {}",
            x0.len(),
            p.state_dim()
        )));
    }
    if !p.omega().contains(x0) {
        log::warn!("initial state {:?} lies outside the training region", x0.as_slice());
    }
    let sched = Schedule::new(p, grid, sw)?;
    let nprime = grid.nprime();
    let bound = 1e3 * p.omega().diameter();

    let mut traj = Trajectory {
        that: Vec::with_capacity(nprime + 1),
        t: Vec::with_capacity(nprime + 1),
        segments: Vec::with_capacity(nprime + 1),
        states: Vec::with_capacity(nprime + 1),
        controls: Vec::with_capacity(nprime),
        refs: Vec::with_capacity(nprime + 1),
        stage_costs: Vec::with_capacity(nprime),
        terminal_cost: 0.0,
        total_cost: 0.0,
    };
    let mut x = x0.clone();
    for k in 0..=nprime {
        let t = sched.time(k);
        let r = p.reference_unchecked(sw, t);
        traj.that.push(grid.that(k));
        traj.t.push(t);
        traj.segments.push(sched.segment(k));
        traj.states.push(x.clone());
        traj.refs.push(r.clone());
        if k == nprime {
            break;
        }
        let u = policy.control(k, sw, &x)?;
        if u.len() != p.input_dim() || u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                khat: k,
                detail: format!("policy returned {:?}", u.as_slice()),
            });
        }
        traj.stage_costs
            .push(stage_cost_with(p, sched.step_size(k), &x, &r, &u));
        x = step_with(p, &sched, k, &x, &u)?;
        if x.norm() > bound {
            return Err(Error::Divergence {
                khat: k + 1,
                detail: format!("state {:?} left the admissible region", x.as_slice()),
            });
        }
        traj.controls.push(u);
    }
    let e = traj.terminal_error();
    traj.terminal_cost = e.dot(&(&p.cost().s * &e));
    traj.total_cost = traj.stage_costs.iter().sum::<f64>() + traj.terminal_cost;
    Ok(traj)
}

/// Adjoint recursion along a stored trajectory with the controls held fixed:
/// `λ_{N′} = c_S S (x_{N′} − r_{N′})`,
/// `λ_k̂ = Q̄ σ_j δt̂ (x_k̂ − r_k̂) + (∂x_{k̂+1}/∂x_k̂)ᵀ λ_{k̂+1}`.
pub fn exact_costates_along(
    traj: &Trajectory,
    p: &SwitchedTrackingProblem,
    grid: &TransformedGrid,
    sw: &SwitchVector,
) -> Result<Vec<DVector<f64>>> {
    let nprime = grid.nprime();
    if traj.states.len() != nprime + 1 || traj.controls.len() != nprime {
        return Err(Error::Dimension(format!(
            "trajectory has {} states for N' = {}",
            traj.states.len(),
            nprime
        )));
    }
    let sched = Schedule::new(p, grid, sw)?;
    let c = p.cost();
    let mut lambdas = vec![DVector::zeros(p.state_dim()); nprime + 1];
    lambdas[nprime] = (&c.s * traj.terminal_error()) * p.terminal_factor();
    for k in (0..nprime).rev() {
        let jac: DMatrix<f64> = jacobian_with(p, &sched, k, &traj.states[k], &traj.controls[k]);
        let e = &traj.states[k] - &traj.refs[k];
        lambdas[k] = (&c.qbar * e) * sched.step_size(k) + jac.transpose() * &lambdas[k + 1];
    }
    Ok(lambdas)
}
