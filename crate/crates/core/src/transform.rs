//! Switching-time parametrization.
//!
//! Transformed time `t̂ ∈ [0, K+1]` is split into unit segments; segment `j`
//! maps affinely onto `[t_j, t_{j+1}]` in physical time, so switches always
//! happen at integer `t̂` whatever the switching instants are. Dynamics and
//! stage costs on segment `j` pick up the factor `σ_j = t_{j+1} − t_j`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::SwitchedTrackingProblem;

/// Ordered switching instants `t_1 < … < t_K`, strictly inside `(t0, tf)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchVector(Vec<f64>);

impl SwitchVector {
    pub fn new(times: Vec<f64>, t0: f64, tf: f64) -> Result<Self> {
        let mut prev = t0;
        for &t in &times {
            if !(t > prev) || !t.is_finite() {
                return Err(Error::Validation(format!(
                    "switching times {:?} must be strictly increasing inside ({}, {})",
                    times, t0, tf
                )));
            }
            prev = t;
        }
        if !times.is_empty() && !(prev < tf) {
            return Err(Error::Validation(format!(
                "switching times {:?} must be strictly increasing inside ({}, {})",
                times, t0, tf
            )));
        }
        Ok(SwitchVector(times))
    }

    pub fn evenly_spaced(t0: f64, tf: f64, k: usize) -> Self {
        let span = tf - t0;
        SwitchVector(
            (1..=k)
                .map(|i| t0 + span * i as f64 / (k + 1) as f64)
                .collect(),
        )
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `[t0, t_1, …, t_K, tf]`.
    pub fn boundaries(&self, t0: f64, tf: f64) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.0.len() + 2);
        b.push(t0);
        b.extend_from_slice(&self.0);
        b.push(tf);
        b
    }
}

/// Uniform discretization of the transformed axis.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformedGrid {
    segments: usize,
    dthat: f64,
    steps_per_segment: usize,
}

impl TransformedGrid {
    /// `dthat` is nudged to the nearest value giving a whole number of
    /// steps per segment.
    pub fn new(num_switches: usize, dthat: f64) -> Result<Self> {
        if !(dthat > 0.0 && dthat <= 1.0) {
            return Err(Error::Validation(format!(
                "transformed step {} must lie in (0, 1]",
                dthat
            )));
        }
        let exact = 1.0 / dthat;
        let steps = exact.round();
        if (exact - steps).abs() > 1e-9 * exact {
            log::warn!(
                "transformed step {} does not divide a segment; using {}",
                dthat,
                1.0 / steps
            );
        }
        let steps_per_segment = steps as usize;
        Ok(TransformedGrid {
            segments: num_switches + 1,
            dthat: 1.0 / steps,
            steps_per_segment,
        })
    }

    pub fn num_switches(&self) -> usize {
        self.segments - 1
    }

    pub fn num_segments(&self) -> usize {
        self.segments
    }

    pub fn dthat(&self) -> f64 {
        self.dthat
    }

    /// Total step count `N′ = (K+1)/δt̂`.
    pub fn nprime(&self) -> usize {
        self.segments * self.steps_per_segment
    }

    pub fn steps_per_segment(&self) -> usize {
        self.steps_per_segment
    }

    /// Segment containing step `khat`; the terminal index `N′` belongs to
    /// the last segment.
    pub fn active_segment(&self, khat: usize) -> usize {
        (khat / self.steps_per_segment).min(self.segments - 1)
    }

    /// Transformed time of step `khat`, exact at segment boundaries.
    pub fn that(&self, khat: usize) -> f64 {
        let j = self.active_segment(khat);
        j as f64 + (khat - j * self.steps_per_segment) as f64 / self.steps_per_segment as f64
    }
}

/// Physical time for transformed time `that ∈ [0, K+1]`.
pub fn map_time(t0: f64, tf: f64, sw: &SwitchVector, that: f64) -> Result<f64> {
    let k = sw.len();
    if !(that >= 0.0 && that <= (k + 1) as f64) {
        return Err(Error::OutOfRange(format!(
            "transformed time {} (valid [0, {}])",
            that,
            k + 1
        )));
    }
    let b = sw.boundaries(t0, tf);
    let j = (that.floor() as usize).min(k);
    Ok(b[j] + (b[j + 1] - b[j]) * (that - j as f64))
}

/// `σ_j = t_{j+1} − t_j`.
pub fn segment_scale(t0: f64, tf: f64, sw: &SwitchVector, j: usize) -> f64 {
    let t = sw.times();
    let lo = if j == 0 { t0 } else { t[j - 1] };
    let hi = if j == t.len() { tf } else { t[j] };
    hi - lo
}

/// Precomputed segment data for one switching vector.
#[derive(Clone, Debug)]
pub struct Schedule {
    bounds: Vec<f64>,
    scales: Vec<f64>,
    steps_per_segment: usize,
    dthat: f64,
}

impl Schedule {
    pub fn new(p: &SwitchedTrackingProblem, grid: &TransformedGrid, sw: &SwitchVector) -> Result<Self> {
        if sw.len() != grid.num_switches() || sw.len() != p.num_switches() {
            return Err(Error::Dimension(format!(
                "{} switching times for a {}-switch problem",
                sw.len(),
                p.num_switches()
            )));
        }
        let bounds = sw.boundaries(p.t0(), p.tf());
        let scales = bounds.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Schedule {
            bounds,
            scales,
            steps_per_segment: grid.steps_per_segment(),
            dthat: grid.dthat(),
        })
    }

    pub fn segment(&self, khat: usize) -> usize {
        (khat / self.steps_per_segment).min(self.scales.len() - 1)
    }

    pub fn scale(&self, j: usize) -> f64 {
        self.scales[j]
    }

    /// `σ_j δt̂` for the segment containing `khat`.
    pub fn step_size(&self, khat: usize) -> f64 {
        self.scales[self.segment(khat)] * self.dthat
    }

    /// Physical time at step `khat`.
    pub fn time(&self, khat: usize) -> f64 {
        let j = self.segment(khat);
        let local = (khat - j * self.steps_per_segment) as f64 / self.steps_per_segment as f64;
        self.bounds[j] + self.scales[j] * local
    }
}

/// One Euler step on the transformed grid:
/// `x⁺ = x + (f̄_v(x) + ḡ_v(x) u) σ_j δt̂`.
pub fn discrete_step(
    p: &SwitchedTrackingProblem,
    grid: &TransformedGrid,
    sw: &SwitchVector,
    khat: usize,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    if khat >= grid.nprime() {
        return Err(Error::OutOfRange(format!("step {} (N' = {})", khat, grid.nprime())));
    }
    let sched = Schedule::new(p, grid, sw)?;
    step_with(p, &sched, khat, x, u)
}

pub(crate) fn step_with(
    p: &SwitchedTrackingProblem,
    sched: &Schedule,
    khat: usize,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let j = sched.segment(khat);
    let h = sched.scale(j) * sched.dthat;
    let next = x + p.segment_mode(j).derivative(x, u) * h;
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::Divergence {
            khat,
            detail: format!("non-finite state from x = {:?}", x.as_slice()),
        })
    }
}

/// `∂x_{k̂+1}/∂x_k̂ = I + (∂f̄/∂x + Σ u_i ∂ḡ_{·,i}/∂x) σ_j δt̂` at fixed `u`.
pub fn step_jacobian(
    p: &SwitchedTrackingProblem,
    grid: &TransformedGrid,
    sw: &SwitchVector,
    khat: usize,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let sched = Schedule::new(p, grid, sw)?;
    Ok(jacobian_with(p, &sched, khat, x, u))
}

pub(crate) fn jacobian_with(
    p: &SwitchedTrackingProblem,
    sched: &Schedule,
    khat: usize,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> DMatrix<f64> {
    let j = sched.segment(khat);
    let mode = p.segment_mode(j);
    let n = x.len();
    let h = sched.scale(j) * sched.dthat;
    let mut jac = mode.drift_jacobian(x);
    if !matches!(mode, crate::model::ModeDynamics::Linear { .. } | crate::model::ModeDynamics::VanDerPol) {
        jac += mode.input_jacobian(x, u);
    }
    jac *= h;
    for i in 0..n {
        jac[(i, i)] += 1.0;
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn map_time_examples() {
        let sw = SwitchVector::new(vec![2.654], 0.0, 3.0).unwrap();
        assert_eq!(map_time(0.0, 3.0, &sw, 1.0).unwrap(), 2.654);
        assert_eq!(map_time(0.0, 3.0, &sw, 0.0).unwrap(), 0.0);
        assert_eq!(map_time(0.0, 3.0, &sw, 2.0).unwrap(), 3.0);
        assert!((map_time(0.0, 3.0, &sw, 1.5).unwrap() - 2.827).abs() < 1e-12);
        assert!(map_time(0.0, 3.0, &sw, 2.0001).is_err());
        assert!(map_time(0.0, 3.0, &sw, -0.1).is_err());
    }

    #[test]
    fn map_time_is_continuous_at_switches() {
        let sw = SwitchVector::new(vec![0.7, 1.1, 2.9], 0.0, 3.0).unwrap();
        for j in 1..=3 {
            let below = map_time(0.0, 3.0, &sw, j as f64 - 1e-15).unwrap();
            let at = map_time(0.0, 3.0, &sw, j as f64).unwrap();
            assert_eq!(at, sw.times()[j - 1]);
            assert!((below - at).abs() < 1e-14);
        }
    }

    #[test]
    fn segment_scales() {
        let sw = SwitchVector::new(vec![2.654], 0.0, 3.0).unwrap();
        assert_eq!(segment_scale(0.0, 3.0, &sw, 0), 2.654);
        assert!((segment_scale(0.0, 3.0, &sw, 1) - 0.346).abs() < 1e-15);
        let mid = SwitchVector::new(vec![1.5], 0.0, 3.0).unwrap();
        assert_eq!(segment_scale(0.0, 3.0, &mid, 0), segment_scale(0.0, 3.0, &mid, 1));
        let thirds = SwitchVector::evenly_spaced(0.0, 3.0, 2);
        for j in 0..3 {
            assert!((segment_scale(0.0, 3.0, &thirds, j) - 1.0).abs() < 1e-15);
        }
        let sw = SwitchVector::new(vec![0.1, 0.37, 1.9], -1.0, 2.5).unwrap();
        let total: f64 = (0..4).map(|j| segment_scale(-1.0, 2.5, &sw, j)).sum();
        assert!((total - 3.5).abs() <= 1e-15 * 3.5);
    }

    #[test]
    fn switch_vector_rejects_disorder() {
        assert!(SwitchVector::new(vec![2.0, 1.0], 0.0, 3.0).is_err());
        assert!(SwitchVector::new(vec![0.0], 0.0, 3.0).is_err());
        assert!(SwitchVector::new(vec![3.0], 0.0, 3.0).is_err());
        assert!(SwitchVector::new(vec![], 0.0, 3.0).is_ok());
    }

    #[test]
    fn grid_segments() {
        let grid = TransformedGrid::new(1, 0.001).unwrap();
        assert_eq!(grid.nprime(), 2000);
        assert_eq!(grid.active_segment(999), 0);
        assert_eq!(grid.active_segment(1000), 1);
        assert_eq!(grid.active_segment(0), 0);
        assert_eq!(grid.active_segment(2000), 1);
        assert_eq!(grid.that(1000), 1.0);
        assert_eq!(grid.that(2000), 2.0);
    }

    #[test]
    fn grid_adjusts_step() {
        let grid = TransformedGrid::new(2, 0.0030001).unwrap();
        assert_eq!(grid.steps_per_segment(), 333);
        assert_eq!(grid.nprime(), 999);
        assert!(TransformedGrid::new(1, 0.0).is_err());
        assert!(TransformedGrid::new(1, -0.1).is_err());
    }

    #[test]
    fn discrete_step_examples() {
        let p = problems::van_der_pol();
        let grid = TransformedGrid::new(1, 0.001).unwrap();
        let sw = SwitchVector::new(vec![2.654], 0.0, 3.0).unwrap();
        let zero = v(&[0.0]);
        let x = discrete_step(&p, &grid, &sw, 1500, &v(&[1.0, 0.0]), &zero).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15);
        assert!((x[1] - 0.000692).abs() < 1e-15);
        let x = discrete_step(&p, &grid, &sw, 0, &v(&[1.0, -0.5]), &zero).unwrap();
        assert!((x[0] - 0.998673).abs() < 1e-12);
        assert!((x[1] - (-0.502654)).abs() < 1e-12);
        assert!(discrete_step(&p, &grid, &sw, 2000, &v(&[1.0, 0.0]), &zero).is_err());
        let bad = discrete_step(&p, &grid, &sw, 3, &v(&[f64::INFINITY, 0.0]), &zero);
        assert!(matches!(bad, Err(Error::Divergence { khat: 3, .. })));
    }

    #[test]
    fn zero_length_step_is_identity() {
        let p = problems::van_der_pol();
        let grid = TransformedGrid::new(1, 0.001).unwrap();
        let sw = SwitchVector::new(vec![1.0], 0.0, 3.0).unwrap();
        let mut sched = Schedule::new(&p, &grid, &sw).unwrap();
        sched.scales[0] = 0.0;
        let x = v(&[0.3, -2.0]);
        assert_eq!(step_with(&p, &sched, 5, &x, &v(&[4.0])).unwrap(), x);
        assert_eq!(
            jacobian_with(&p, &sched, 5, &x, &v(&[4.0])),
            DMatrix::identity(2, 2)
        );
    }

    #[test]
    fn step_jacobian_examples() {
        let p = problems::van_der_pol();
        let grid = TransformedGrid::new(1, 0.001).unwrap();
        let sw = SwitchVector::new(vec![2.654], 0.0, 3.0).unwrap();
        let zero = v(&[0.0]);
        let j = step_jacobian(&p, &grid, &sw, 10, &v(&[1.0, -0.5]), &zero).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.002654, 0.0, 1.0]);
        assert!((j - expected).amax() < 1e-15);
        let h = 0.346 * 0.001;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, -1.0]);
        for x in [v(&[0.0, 0.0]), v(&[3.0, -1.0])] {
            let j = step_jacobian(&p, &grid, &sw, 1200, &x, &zero).unwrap();
            assert!((j - (DMatrix::identity(2, 2) + &a * h)).amax() < 1e-15);
        }
    }
}
