//! Exact costates for all-linear problems and finite-difference utilities.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ModeDynamics, SwitchedTrackingProblem};
use crate::rollout::{rollout, ControlPolicy};
use crate::transform::{Schedule, SwitchVector, TransformedGrid};

const ASYMMETRY_TOL: f64 = 1e-10;
const CONDITION_WARN: f64 = 1e12;

/// `λ_k̂ = Θ_k̂ x + θ_k̂` for `k̂ = 0..=N′`, plus the next-costate maps
/// `λ_{k̂+1} = P_k̂ x_k̂ + p_k̂` and feedback `u = −K_k̂ x − κ_k̂`.
#[derive(Clone, Debug)]
pub struct AffineCostateSolution {
    pub sw: SwitchVector,
    pub theta: Vec<DMatrix<f64>>,
    pub offset: Vec<DVector<f64>>,
    pub next_map: Vec<DMatrix<f64>>,
    pub next_offset: Vec<DVector<f64>>,
    pub gain: Vec<DMatrix<f64>>,
    pub feedforward: Vec<DVector<f64>>,
}

impl AffineCostateSolution {
    pub fn nprime(&self) -> usize {
        self.next_map.len()
    }
}

fn linear_mode(mode: &ModeDynamics) -> Result<(&DMatrix<f64>, &DMatrix<f64>)> {
    match mode {
        ModeDynamics::Linear { a, b } => Ok((a, b)),
        _ => Err(Error::Unsupported("oracle requires linear modes".into())),
    }
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax() / m.amax().max(1.0)
}

pub fn lq_solve(
    p: &SwitchedTrackingProblem,
    grid: &TransformedGrid,
    sw: &SwitchVector,
) -> Result<AffineCostateSolution> {
    if !p.all_linear() {
        return Err(Error::Unsupported("oracle requires linear modes".into()));
    }
    let sched = Schedule::new(p, grid, sw)?;
    let nprime = grid.nprime();
    let n = p.state_dim();
    let c = p.cost();
    let cs = p.terminal_factor();
    let eye = DMatrix::<f64>::identity(n, n);

    let mut theta = vec![DMatrix::zeros(n, n); nprime + 1];
    let mut offset = vec![DVector::zeros(n); nprime + 1];
    let mut next_map = vec![DMatrix::zeros(n, n); nprime];
    let mut next_offset = vec![DVector::zeros(n); nprime];
    let mut gain = vec![DMatrix::zeros(p.input_dim(), n); nprime];
    let mut feedforward = vec![DVector::zeros(p.input_dim()); nprime];

    let r_end = p.reference_unchecked(sw, sched.time(nprime));
    theta[nprime] = &c.s * cs;
    offset[nprime] = -(&theta[nprime] * r_end);

    for k in (0..nprime).rev() {
        let h = sched.step_size(k);
        let (a, b) = linear_mode(p.segment_mode(sched.segment(k)))?;
        let ak = &eye + a * h;
        let bk = b * h;
        let qk = &c.qbar * h;
        // R_k̂⁻¹ = R̄⁻¹ / h.
        let rinv = p.rbar_inv() / h;
        let th = &theta[k + 1];
        let lhs = &eye + th * &bk * &rinv * bk.transpose();
        let sv = lhs.clone().svd(false, false).singular_values;
        let smin = sv.min();
        if !(smin > 0.0) {
            return Err(Error::NonFinite(format!("singular costate map at step {}", k)));
        }
        if sv.max() / smin > CONDITION_WARN {
            log::warn!("costate map at step {} has condition number {:e}", k, sv.max() / smin);
        }
        let lu = lhs.lu();
        let m_theta = lu
            .solve(th)
            .ok_or_else(|| Error::NonFinite(format!("singular costate map at step {}", k)))?;
        let m_offset = lu
            .solve(&offset[k + 1])
            .ok_or_else(|| Error::NonFinite(format!("singular costate map at step {}", k)))?;
        let pk = &m_theta * &ak;
        let mut th_k = &qk + ak.transpose() * &pk;
        let skew = asymmetry(&th_k);
        if skew > ASYMMETRY_TOL {
            return Err(Error::NonFinite(format!(
                "Theta at step {} lost symmetry ({:e})",
                k, skew
            )));
        }
        th_k = (&th_k + th_k.transpose()) * 0.5;
        let r = p.reference_unchecked(sw, sched.time(k));
        offset[k] = -(&qk * r) + ak.transpose() * &m_offset;
        theta[k] = th_k;
        let rbt = &rinv * bk.transpose();
        gain[k] = &rbt * &pk;
        feedforward[k] = &rbt * &m_offset;
        next_map[k] = pk;
        next_offset[k] = m_offset;
        if theta[k].iter().chain(offset[k].iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("oracle recursion at step {}", k)));
        }
    }
    Ok(AffineCostateSolution {
        sw: sw.clone(),
        theta,
        offset,
        next_map,
        next_offset,
        gain,
        feedforward,
    })
}

/// `Θ_k̂ x + θ_k̂`.
pub fn oracle_costate(sol: &AffineCostateSolution, khat: usize, x: &DVector<f64>) -> DVector<f64> {
    &sol.theta[khat] * x + &sol.offset[khat]
}

/// `λ_{k̂+1}` reached from `x_k̂` under the optimal control.
pub fn next_costate(sol: &AffineCostateSolution, khat: usize, x: &DVector<f64>) -> DVector<f64> {
    &sol.next_map[khat] * x + &sol.next_offset[khat]
}

/// Optimal feedback for the switching vector the solution was built for.
pub struct OraclePolicy<'a> {
    pub sol: &'a AffineCostateSolution,
}

impl ControlPolicy for OraclePolicy<'_> {
    fn control(&self, khat: usize, sw: &SwitchVector, x: &DVector<f64>) -> Result<DVector<f64>> {
        if sw != &self.sol.sw {
            return Err(Error::Incompatible(format!(
                "oracle solved for {:?}, asked for {:?}",
                self.sol.sw.times(),
                sw.times()
            )));
        }
        if khat >= self.sol.nprime() {
            return Err(Error::OutOfRange(format!("step {}", khat)));
        }
        Ok(-(&self.sol.gain[khat] * x) - &self.sol.feedforward[khat])
    }
}

/// Central differences of the closed-loop total cost with respect to `x0`.
pub fn fd_value_gradient(
    p: &SwitchedTrackingProblem,
    grid: &TransformedGrid,
    sw: &SwitchVector,
    policy: &dyn ControlPolicy,
    x0: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    if !(h > 0.0) {
        return Err(Error::Validation("finite-difference step must be positive".into()));
    }
    let mut grad = DVector::zeros(x0.len());
    for i in 0..x0.len() {
        let mut plus = x0.clone();
        plus[i] += h;
        let mut minus = x0.clone();
        minus[i] -= h;
        let jp = rollout(p, grid, sw, policy, &plus)?.total_cost;
        let jm = rollout(p, grid, sw, policy, &minus)?.total_cost;
        grad[i] = (jp - jm) / (2.0 * h);
    }
    Ok(grad)
}

/// Per-step worst relative error of network predictions against the oracle.
#[derive(Clone, Debug, serde::Serialize)]
pub struct OracleComparison {
    /// `max_l ‖λ̂ − λ‖ / RMS_l ‖λ‖` for each step; 0 when both sides vanish.
    pub per_step: Vec<f64>,
    pub worst: f64,
    pub worst_step: usize,
}

/// Compares `λ̂_{k̂+1}(t_sw, x)` with the exact next-step costate at every
/// step and every held-out point.
pub fn compare_network(
    net: &crate::snac::CostateNetwork,
    p: &SwitchedTrackingProblem,
    grid: &TransformedGrid,
    points: &[crate::snac::Sample],
) -> Result<OracleComparison> {
    use rayon::prelude::*;
    net.check_compatible(p, grid)?;
    if points.is_empty() {
        return Err(Error::Validation("no held-out points".into()));
    }
    let sols: Vec<AffineCostateSolution> = points
        .par_iter()
        .map(|s| lq_solve(p, grid, &SwitchVector::new(s.tsw.clone(), p.t0(), p.tf())?))
        .collect::<Result<_>>()?;
    let per_step: Vec<f64> = (0..grid.nprime())
        .into_par_iter()
        .map(|k| {
            let mut worst: f64 = 0.0;
            let mut sq = 0.0;
            for (s, sol) in points.iter().zip(&sols) {
                let exact = next_costate(sol, k, &s.x);
                let err = (net.predict(k, &s.tsw, &s.x)? - &exact).norm();
                worst = worst.max(err);
                sq += exact.norm_squared();
            }
            let rms = (sq / points.len() as f64).sqrt();
            Ok(if worst == 0.0 { 0.0 } else { worst / rms })
        })
        .collect::<Result<_>>()?;
    let (worst_step, worst) = per_step
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |acc, (k, e)| if e > acc.1 { (k, e) } else { acc });
    Ok(OracleComparison {
        per_step,
        worst,
        worst_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CostSpec, Omega, ProblemSpec, ReferenceModel};
    use crate::problems;
    use crate::rollout::{exact_costates_along, FnPolicy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn scalar_problem(a: f64, b: f64, q: f64, s: f64, r: f64, tf: f64) -> SwitchedTrackingProblem {
        SwitchedTrackingProblem::new(ProblemSpec {
            modes: vec![ModeDynamics::Linear {
                a: DMatrix::from_element(1, 1, a),
                b: DMatrix::from_element(1, 1, b),
            }],
            sequence: vec![0, 0],
            t0: 0.0,
            tf,
            cost: CostSpec {
                s: DMatrix::from_element(1, 1, s),
                qbar: DMatrix::from_element(1, 1, q),
                rbar: DMatrix::from_element(1, 1, r),
            },
            reference: ReferenceModel::constant(v(&[0.0])),
            omega: Omega {
                state_lo: v(&[-1.0]),
                state_hi: v(&[1.0]),
                switch_lo: None,
                switch_hi: None,
                switch_margin: None,
            },
            terminal_factor: 2.0,
        })
        .unwrap()
    }

    #[test]
    fn rejects_nonlinear_modes() {
        let p = problems::van_der_pol();
        let grid = TransformedGrid::new(1, 0.1).unwrap();
        let sw = SwitchVector::new(vec![1.5], 0.0, 3.0).unwrap();
        assert!(matches!(lq_solve(&p, &grid, &sw), Err(Error::Unsupported(_))));
    }

    #[test]
    fn one_step_without_terminal_weight() {
        // Two segments of one step each; the last step sees S = 0 so Θ = Q.
        let p = scalar_problem(0.3, 1.0, 1.0, 0.0, 1.0, 2.0);
        let grid = TransformedGrid::new(1, 1.0).unwrap();
        let sw = SwitchVector::new(vec![1.0], 0.0, 2.0).unwrap();
        let sol = lq_solve(&p, &grid, &sw).unwrap();
        assert_eq!(sol.theta[2][(0, 0)], 0.0);
        assert!((sol.theta[1][(0, 0)] - 1.0).abs() < 1e-15);
        assert_eq!(sol.offset[1][0], 0.0);
    }

    #[test]
    fn scalar_one_step_matches_control_grid() {
        // x⁺ = x + u h, cost ½ u² R̄ h + xₙᵀ s xₙ, one step each segment.
        let (s, rbar) = (3.0, 0.5);
        let p = scalar_problem(0.0, 1.0, 0.0, s, rbar, 2.0);
        let grid = TransformedGrid::new(1, 1.0).unwrap();
        let sw = SwitchVector::new(vec![1.0], 0.0, 2.0).unwrap();
        let sol = lq_solve(&p, &grid, &sw).unwrap();
        // The final step is [1, 2] with h = 1; brute force the optimal u.
        let x = 0.7;
        let cost = |u: f64| 0.5 * rbar * u * u + s * (x + u).powi(2);
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=400_000 {
            let u = -2.0 + i as f64 * 1e-5;
            let c = cost(u);
            if c < best.0 {
                best = (c, u);
            }
        }
        let u_oracle = -(sol.gain[1][(0, 0)] * x) - sol.feedforward[1][0];
        assert!((u_oracle - best.1).abs() < 2e-5, "{} vs {}", u_oracle, best.1);
        // Envelope: dV/dx at step 1 is 2 s (x + u*).
        let dv = 2.0 * s * (x + u_oracle);
        assert!((oracle_costate(&sol, 1, &v(&[x]))[0] - dv).abs() < 1e-12);
    }

    #[test]
    fn time_invariant_riccati_fixed_point() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.2]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let p = SwitchedTrackingProblem::new(ProblemSpec {
            modes: vec![ModeDynamics::Linear { a: a.clone(), b: b.clone() }],
            sequence: vec![0, 0],
            t0: 0.0,
            tf: 40.0,
            cost: CostSpec {
                s: DMatrix::zeros(2, 2),
                qbar: DMatrix::identity(2, 2),
                rbar: DMatrix::identity(1, 1),
            },
            reference: ReferenceModel::constant(v(&[0.0, 0.0])),
            omega: Omega {
                state_lo: v(&[-1.0, -1.0]),
                state_hi: v(&[1.0, 1.0]),
                switch_lo: None,
                switch_hi: None,
                switch_margin: None,
            },
            terminal_factor: 1.0,
        })
        .unwrap();
        let grid = TransformedGrid::new(1, 0.01).unwrap();
        let sw = SwitchVector::new(vec![20.0], 0.0, 40.0).unwrap();
        let sol = lq_solve(&p, &grid, &sw).unwrap();
        // Independent fixed-point iteration of the standard discrete Riccati map.
        let h = 0.2;
        let ad = DMatrix::identity(2, 2) + &a * h;
        let bd = &b * h;
        let (q, r) = (DMatrix::<f64>::identity(2, 2) * h, DMatrix::<f64>::identity(1, 1) * h);
        let mut pm = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..20_000 {
            let k = (&r + bd.transpose() * &pm * &bd).try_inverse().unwrap() * bd.transpose() * &pm * &ad;
            pm = &q + ad.transpose() * &pm * (&ad - &bd * k);
        }
        assert!((&sol.theta[0] - &pm).amax() < 1e-8 * pm.amax(), "{} vs {}", sol.theta[0], pm);
    }

    #[test]
    fn theta_symmetric_and_offsets_vanish_for_zero_reference() {
        let p = problems::lq_two_mode();
        let grid = TransformedGrid::new(1, 0.005).unwrap();
        let sw = SwitchVector::new(vec![0.45], 0.0, 1.0).unwrap();
        let sol = lq_solve(&p.with_terminal_factor(1.0).unwrap(), &grid, &sw).unwrap();
        let zero_ref = problems::lq_two_mode_spec().reference.r0.iter().all(|v| *v == 0.0)
            && matches!(
                problems::lq_two_mode_spec().reference.dynamics,
                crate::model::ReferenceDynamics::Constant
            );
        for k in 0..=grid.nprime() {
            assert!(asymmetry(&sol.theta[k]) == 0.0);
            let eig = sol.theta[k].clone().symmetric_eigen().eigenvalues;
            assert!(eig.min() >= -1e-12);
            if zero_ref {
                assert_eq!(oracle_costate(&sol, k, &v(&[0.0, 0.0])), v(&[0.0, 0.0]));
            }
            assert_eq!(oracle_costate(&sol, k, &v(&[0.0, 0.0])), sol.offset[k]);
        }
    }

    #[test]
    fn oracle_matches_adjoint_along_its_own_rollout() {
        let p = problems::lq_two_mode();
        let grid = TransformedGrid::new(1, 0.005).unwrap();
        let sw = SwitchVector::new(vec![0.55], 0.0, 1.0).unwrap();
        let sol = lq_solve(&p, &grid, &sw).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let x0 = v(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            let traj = rollout(&p, &grid, &sw, &OraclePolicy { sol: &sol }, &x0).unwrap();
            let adj = exact_costates_along(&traj, &p, &grid, &sw).unwrap();
            for k in 0..=grid.nprime() {
                let o = oracle_costate(&sol, k, &traj.states[k]);
                assert!((&o - &adj[k]).amax() <= 1e-9 * o.amax().max(1.0));
            }
            for k in 0..grid.nprime() {
                let o = next_costate(&sol, k, &traj.states[k]);
                assert!((&o - &adj[k + 1]).amax() <= 1e-9 * o.amax().max(1.0));
            }
        }
    }

    #[test]
    fn oracle_beats_perturbed_feedback() {
        // Optimality holds for the rollout cost only with the exact terminal gradient.
        let p = problems::lq_two_mode().with_terminal_factor(2.0).unwrap();
        let grid = TransformedGrid::new(1, 0.01).unwrap();
        let sw = SwitchVector::new(vec![0.5], 0.0, 1.0).unwrap();
        let sol = lq_solve(&p, &grid, &sw).unwrap();
        let x0 = v(&[0.8, -0.3]);
        let best = rollout(&p, &grid, &sw, &OraclePolicy { sol: &sol }, &x0)
            .unwrap()
            .total_cost;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let dk = DMatrix::from_fn(1, 2, |_, _| rng.gen_range(-0.5..0.5));
            let df: f64 = rng.gen_range(-0.1..0.1);
            let policy = FnPolicy(|k: usize, _: &SwitchVector, x: &DVector<f64>| {
                -((&sol.gain[k] + &dk) * x) - sol.feedforward[k].add_scalar(df)
            });
            let j = rollout(&p, &grid, &sw, &policy, &x0).unwrap().total_cost;
            assert!(best <= j + 1e-12, "{} > {}", best, j);
        }
    }

    #[test]
    fn fd_gradient_of_quadratic_and_order() {
        // Zero dynamics, unit weights: J = ½‖x0‖² · T + ‖x0‖².
        let p = scalar_problem(0.0, 0.0, 1.0, 1.0, 1.0, 2.0);
        let grid = TransformedGrid::new(1, 0.5).unwrap();
        let sw = SwitchVector::new(vec![1.0], 0.0, 2.0).unwrap();
        let zero = crate::rollout::ZeroPolicy { input_dim: 1 };
        let g = fd_value_gradient(&p, &grid, &sw, &zero, &v(&[0.3]), 1e-4).unwrap();
        assert!((g[0] - 0.3 * 2.0 - 2.0 * 0.3).abs() < 1e-8);
        assert!(fd_value_gradient(&p, &grid, &sw, &zero, &v(&[0.3]), 0.0).is_err());
    }

    #[test]
    fn fd_gradient_matches_oracle_costate() {
        let p = problems::lq_two_mode().with_terminal_factor(2.0).unwrap();
        let grid = TransformedGrid::new(1, 0.005).unwrap();
        let sw = SwitchVector::new(vec![0.5], 0.0, 1.0).unwrap();
        let sol = lq_solve(&p, &grid, &sw).unwrap();
        let x0 = v(&[0.6, 0.4]);
        let policy = OraclePolicy { sol: &sol };
        let lam = oracle_costate(&sol, 0, &x0);
        let err = |h: f64| {
            let g = fd_value_gradient(&p, &grid, &sw, &policy, &x0, h).unwrap();
            (&g - &lam).norm() / lam.norm()
        };
        assert!(err(1e-4) <= 1e-4, "{}", err(1e-4));
        // Cubic perturbation of the policy makes the second-order term visible.
        let cubic = FnPolicy(|k: usize, sw: &SwitchVector, x: &DVector<f64>| {
            let u = policy.control(k, sw, x).unwrap();
            u.add_scalar(0.5 * x[0].powi(3))
        });
        let j = |x: &DVector<f64>| rollout(&p, &grid, &sw, &cubic, x).unwrap().total_cost;
        let fine = {
            let (mut a, mut b) = (x0.clone(), x0.clone());
            a[0] += 1e-6;
            b[0] -= 1e-6;
            (j(&a) - j(&b)) / 2e-6
        };
        let e1 = (fd_value_gradient(&p, &grid, &sw, &cubic, &x0, 0.02).unwrap()[0] - fine).abs();
        let e2 = (fd_value_gradient(&p, &grid, &sw, &cubic, &x0, 0.01).unwrap()[0] - fine).abs();
        let ratio = e1 / e2;
        assert!((3.0..5.0).contains(&ratio), "ratio {}", ratio);
    }
}
