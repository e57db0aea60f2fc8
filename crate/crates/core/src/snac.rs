//! Single-network adaptive critic: per-step polynomial networks mapping the
//! current state (and switching times) to the next-step costate, trained
//! backward in time by batched least squares.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::PolynomialBasis;
use crate::error::{Error, Result};
use crate::model::SwitchedTrackingProblem;
use crate::rollout::control_from_costate;
use crate::transform::TransformedGrid;

/// Identifies the on-disk weights layout.
pub const WEIGHTS_FORMAT: &str = "switchtrack-weights/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Fresh samples on every inner iteration.
    Resample,
    /// One batch per step, reused by all inner iterations.
    FixedBatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightInit {
    Zero,
    /// Start each step from the already trained weights of step `k̂ + 1`.
    WarmStart,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub basis_degree: u32,
    pub eta: usize,
    /// Inner loop stops once `‖Ŵ^{i+1} − Ŵ^i‖_F ≤ gamma · (1 + ‖Ŵ^{i+1}‖_F)`.
    pub gamma: f64,
    pub max_inner: usize,
    pub seed: u64,
    /// Tikhonov weight; `None` means `1e-9 · eta`.
    pub ridge: Option<f64>,
    pub sampling: SamplingMode,
    pub init: WeightInit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            basis_degree: 3,
            eta: 1000,
            gamma: 1e-6,
            max_inner: 50,
            seed: 0,
            ridge: None,
            sampling: SamplingMode::Resample,
            init: WeightInit::WarmStart,
        }
    }
}

impl TrainConfig {
    pub fn ridge_value(&self) -> f64 {
        self.ridge.unwrap_or(1e-9 * self.eta as f64)
    }
}

/// One training point `(t_sw, x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub tsw: Vec<f64>,
    pub x: DVector<f64>,
}

/// Uniform draw of ordered switching times respecting the margins.
pub fn sample_switch_times<R: Rng>(p: &SwitchedTrackingProblem, rng: &mut R) -> Vec<f64> {
    let k = p.num_switches();
    if k == 0 {
        return Vec::new();
    }
    let (lo, hi) = p.switch_interval();
    let gap = p.switch_margin();
    // Uniform on the ordered simplex with minimum spacing `gap`.
    let free = (hi - lo) - (k as f64 - 1.0) * gap;
    let mut u: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() * free).collect();
    u.sort_by(f64::total_cmp);
    u.iter()
        .enumerate()
        .map(|(i, v)| lo + v + i as f64 * gap)
        .collect()
}

fn sample_one<R: Rng>(p: &SwitchedTrackingProblem, rng: &mut R) -> Sample {
    let tsw = sample_switch_times(p, rng);
    let o = p.omega();
    let x = DVector::from_fn(p.state_dim(), |i, _| {
        let (lo, hi) = (o.state_lo[i], o.state_hi[i]);
        lo + rng.gen::<f64>() * (hi - lo)
    });
    Sample { tsw, x }
}

pub fn sample_batch<R: Rng>(cfg: &TrainConfig, p: &SwitchedTrackingProblem, rng: &mut R) -> Vec<Sample> {
    sample_points(p, cfg.eta, rng)
}

/// `count` uniform draws of `(t_sw, x)` from the training region.
pub fn sample_points<R: Rng>(p: &SwitchedTrackingProblem, count: usize, rng: &mut R) -> Vec<Sample> {
    (0..count).map(|_| sample_one(p, rng)).collect()
}

/// Evaluation points from a stream independent of the training draws.
pub fn held_out_points(p: &SwitchedTrackingProblem, count: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5DEE_CE66_D1CE_B00C);
    sample_points(p, count, &mut rng)
}

/// Per-step costate approximators `λ̂_{k̂+1} = Ŵ_k̂ᵀ φ(t_sw, x_k̂)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostateNetwork {
    basis: PolynomialBasis,
    state_dim: usize,
    input_dim: usize,
    num_switches: usize,
    dthat: f64,
    terminal_factor: f64,
    seed: u64,
    config_hash: String,
    weights: Vec<Option<DMatrix<f64>>>,
}

impl CostateNetwork {
    pub fn untrained(
        p: &SwitchedTrackingProblem,
        grid: &TransformedGrid,
        basis_degree: u32,
        seed: u64,
    ) -> Result<Self> {
        let basis = PolynomialBasis::enumerate(p.num_switches() + p.state_dim(), basis_degree)?;
        Ok(CostateNetwork {
            basis,
            state_dim: p.state_dim(),
            input_dim: p.input_dim(),
            num_switches: p.num_switches(),
            dthat: grid.dthat(),
            terminal_factor: p.terminal_factor(),
            seed,
            config_hash: String::new(),
            weights: vec![None; grid.nprime()],
        })
    }

    pub fn basis(&self) -> &PolynomialBasis {
        &self.basis
    }

    pub fn nprime(&self) -> usize {
        self.weights.len()
    }

    pub fn dthat(&self) -> f64 {
        self.dthat
    }

    pub fn num_switches(&self) -> usize {
        self.num_switches
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn terminal_factor(&self) -> f64 {
        self.terminal_factor
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn set_config_hash(&mut self, hash: impl Into<String>) {
        self.config_hash = hash.into();
    }

    pub fn weights(&self, khat: usize) -> Option<&DMatrix<f64>> {
        self.weights.get(khat).and_then(Option::as_ref)
    }

    pub fn set_weights(&mut self, khat: usize, w: DMatrix<f64>) -> Result<()> {
        if khat >= self.weights.len() {
            return Err(Error::OutOfRange(format!("step {}", khat)));
        }
        if w.nrows() != self.basis.len() || w.ncols() != self.state_dim {
            return Err(Error::Dimension(format!(
                "weights must be {}x{}, got {}x{}",
                self.basis.len(),
                self.state_dim,
                w.nrows(),
                w.ncols()
            )));
        }
        self.weights[khat] = Some(w);
        Ok(())
    }

    pub fn is_trained(&self) -> bool {
        self.weights.iter().all(Option::is_some)
    }

    /// Multiplies every weight by `c`.
    pub fn scaled(&self, c: f64) -> CostateNetwork {
        let mut out = self.clone();
        for w in out.weights.iter_mut().flatten() {
            *w *= c;
        }
        out
    }

    /// `λ̂_{k̂+1}(t_sw, x_k̂)`.
    pub fn predict(&self, khat: usize, tsw: &[f64], x: &DVector<f64>) -> Result<DVector<f64>> {
        let w = self.weights(khat).ok_or(Error::Untrained(khat))?;
        if tsw.len() != self.num_switches || x.len() != self.state_dim {
            return Err(Error::Dimension(format!(
                "predict expects {} switching times and {} states",
                self.num_switches, self.state_dim
            )));
        }
        Ok(w.tr_mul(&self.basis.eval(tsw, x.as_slice())))
    }

    /// `‖Ŵ_k̂ − Ŵ_{k̂+1}‖_F` for `k̂ = 0..N′−1`.
    pub fn step_change_profile(&self) -> Result<Vec<f64>> {
        (0..self.nprime().saturating_sub(1))
            .map(|k| {
                let a = self.weights(k).ok_or(Error::Untrained(k))?;
                let b = self.weights(k + 1).ok_or(Error::Untrained(k + 1))?;
                Ok((a - b).norm())
            })
            .collect()
    }

    /// Hash of everything that makes weights interchangeable between runs:
    /// dimensions, grid and the costate convention.
    pub fn grid_hash(&self) -> String {
        grid_hash(
            self.state_dim,
            self.input_dim,
            self.num_switches,
            self.basis.degree(),
            self.nprime(),
            self.dthat,
            self.terminal_factor,
        )
    }

    /// Fails unless the network was trained for this problem and grid.
    pub fn check_compatible(&self, p: &SwitchedTrackingProblem, grid: &TransformedGrid) -> Result<()> {
        let expected = grid_hash(
            p.state_dim(),
            p.input_dim(),
            p.num_switches(),
            self.basis.degree(),
            grid.nprime(),
            grid.dthat(),
            p.terminal_factor(),
        );
        if expected != self.grid_hash() {
            return Err(Error::Incompatible(format!(
                "weights (n={}, m={}, K={}, N'={}, dthat={}, terminal_factor={}, hash {}) vs problem (n={}, m={}, K={}, N'={}, dthat={}, terminal_factor={}, hash {})",
                self.state_dim,
                self.input_dim,
                self.num_switches,
                self.nprime(),
                self.dthat,
                self.terminal_factor,
                self.grid_hash(),
                p.state_dim(),
                p.input_dim(),
                p.num_switches(),
                grid.nprime(),
                grid.dthat(),
                p.terminal_factor(),
                expected
            )));
        }
        if !self.is_trained() {
            let k = self.weights.iter().position(Option::is_none).unwrap_or(0);
            return Err(Error::Untrained(k));
        }
        Ok(())
    }

    pub fn to_file(&self) -> Result<WeightsFile> {
        if !self.is_trained() {
            let k = self.weights.iter().position(Option::is_none).unwrap_or(0);
            return Err(Error::Untrained(k));
        }
        Ok(WeightsFile {
            format: WEIGHTS_FORMAT.to_string(),
            n: self.state_dim,
            m: self.input_dim,
            k: self.num_switches,
            degree: self.basis.degree(),
            m_lambda: self.basis.len(),
            nprime: self.nprime(),
            dthat: self.dthat,
            terminal_factor: self.terminal_factor,
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            grid_hash: self.grid_hash(),
            basis: self.basis.monomials().to_vec(),
            weights: self
                .weights
                .iter()
                .flatten()
                .map(|w| (0..w.nrows()).map(|r| w.row(r).iter().copied().collect()).collect())
                .collect(),
        })
    }

    pub fn from_file(file: WeightsFile) -> Result<Self> {
        if file.format != WEIGHTS_FORMAT {
            return Err(Error::Parse(format!("unknown weights format {:?}", file.format)));
        }
        let basis = PolynomialBasis::from_table(file.k + file.n, file.degree, file.basis)?;
        if basis.len() != file.m_lambda || file.weights.len() != file.nprime {
            return Err(Error::Parse("weights header disagrees with payload".into()));
        }
        let mut weights = Vec::with_capacity(file.nprime);
        for rows in file.weights {
            if rows.len() != file.m_lambda || rows.iter().any(|r| r.len() != file.n) {
                return Err(Error::Parse("weight matrix has the wrong shape".into()));
            }
            let w = DMatrix::from_fn(file.m_lambda, file.n, |i, j| rows[i][j]);
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("stored weights".into()));
            }
            weights.push(Some(w));
        }
        let net = CostateNetwork {
            basis,
            state_dim: file.n,
            input_dim: file.m,
            num_switches: file.k,
            dthat: file.dthat,
            terminal_factor: file.terminal_factor,
            seed: file.seed,
            config_hash: file.config_hash,
            weights,
        };
        if net.grid_hash() != file.grid_hash {
            return Err(Error::Parse("grid hash does not match the header".into()));
        }
        Ok(net)
    }
}

pub fn grid_hash(
    n: usize,
    m: usize,
    k: usize,
    degree: u32,
    nprime: usize,
    dthat: f64,
    terminal_factor: f64,
) -> String {
    use sha2::{Digest, Sha256};
    let text = format!(
        "n={};m={};K={};degree={};Nprime={};dthat={:016x};terminal_factor={:016x}",
        n,
        m,
        k,
        degree,
        nprime,
        dthat.to_bits(),
        terminal_factor.to_bits()
    );
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

/// Serialized form of a trained network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub format: String,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub degree: u32,
    pub m_lambda: usize,
    #[serde(rename = "Nprime")]
    pub nprime: usize,
    pub dthat: f64,
    pub terminal_factor: f64,
    pub seed: u64,
    pub config_hash: String,
    pub grid_hash: String,
    pub basis: Vec<Vec<u32>>,
    /// `weights[k̂][row][col]`, `m_λ × n` per step.
    pub weights: Vec<Vec<Vec<f64>>>,
}

/// Minimizes `Σ_l ‖Wᵀ φ_l − y_l‖² + ridge ‖W‖²_F` by Householder QR of the
/// ridge-augmented design matrix.
pub fn least_squares_fit(phi: &DMatrix<f64>, targets: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let (rows, cols) = phi.shape();
    if targets.nrows() != rows {
        return Err(Error::Dimension(format!(
            "{} feature rows vs {} target rows",
            rows,
            targets.nrows()
        )));
    }
    if rows < cols {
        return Err(Error::Underdetermined(format!(
            "{} samples for {} basis functions",
            rows, cols
        )));
    }
    if ridge < 0.0 {
        return Err(Error::Validation("ridge must be non-negative".into()));
    }
    let (a, mut b) = if ridge > 0.0 {
        let mut a = DMatrix::zeros(rows + cols, cols);
        a.view_mut((0, 0), (rows, cols)).copy_from(phi);
        let s = ridge.sqrt();
        for i in 0..cols {
            a[(rows + i, i)] = s;
        }
        let mut b = DMatrix::zeros(rows + cols, targets.ncols());
        b.view_mut((0, 0), (rows, targets.ncols())).copy_from(targets);
        (a, b)
    } else {
        (phi.clone(), targets.clone())
    };
    let qr = a.qr();
    let r = qr.r();
    let diag_max = r.diagonal().amax();
    let rank = r
        .diagonal()
        .iter()
        .filter(|d| d.abs() > 1e-12 * diag_max)
        .count();
    if rank < cols || diag_max == 0.0 {
        return Err(Error::RankDeficient { rank, cols });
    }
    qr.q_tr_mul(&mut b);
    let rhs = b.rows(0, cols).into_owned();
    r.solve_upper_triangular(&rhs)
        .ok_or(Error::RankDeficient { rank, cols })
}

/// Per-step training summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub khat: usize,
    pub iterations: usize,
    pub final_change: f64,
    pub residual_rms: f64,
    pub target_rms: f64,
    pub converged: bool,
    pub discarded: usize,
}

/// One inner iteration, as exported to the weight-history CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub khat: usize,
    pub iteration: usize,
    pub frobenius_change: f64,
    pub residual_rms: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub nprime: usize,
    pub m_lambda: usize,
    pub steps: Vec<StepReport>,
    pub history: Vec<HistoryRow>,
    pub wall_clock_secs: f64,
    pub capped_steps: usize,
    pub discarded_samples: usize,
}

impl TrainReport {
    pub fn write_history_csv<W: std::io::Write>(&self, out: &mut W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {}", c)?;
        }
        writeln!(out, "khat,iteration,frobenius_change,residual_rms")?;
        for h in &self.history {
            writeln!(
                out,
                "{},{},{},{}",
                h.khat, h.iteration, h.frobenius_change, h.residual_rms
            )?;
        }
        Ok(())
    }
}

/// Physical-time bookkeeping for one step and one sampled switching vector.
#[derive(Clone, Copy, Debug)]
struct Clock {
    segment: usize,
    h: f64,
    time: f64,
}

fn clock(p: &SwitchedTrackingProblem, grid: &TransformedGrid, tsw: &[f64], khat: usize) -> Clock {
    let j = grid.active_segment(khat);
    let k = tsw.len();
    let lo = if j == 0 { p.t0() } else { tsw[j - 1] };
    let hi = if j == k { p.tf() } else { tsw[j] };
    let sigma = hi - lo;
    let sps = grid.steps_per_segment();
    let local = (khat - j * sps) as f64 / sps as f64;
    Clock {
        segment: j,
        h: sigma * grid.dthat(),
        time: lo + sigma * local,
    }
}

/// Training target for step `khat` at one sample: apply the policy implied
/// by the current iterate, step the dynamics, then evaluate the costate
/// recursion at the successor state using the trained step `khat + 1`
/// (or the terminal condition at `khat = N′ − 1`).
pub fn costate_target(
    net: &CostateNetwork,
    p: &SwitchedTrackingProblem,
    grid: &TransformedGrid,
    khat: usize,
    current: &DMatrix<f64>,
    sample: &Sample,
) -> Result<DVector<f64>> {
    let nprime = grid.nprime();
    let basis = net.basis();
    let mut phi = DVector::zeros(basis.len());
    let mut vars = Vec::with_capacity(basis.nvars());
    vars.extend_from_slice(&sample.tsw);
    vars.extend_from_slice(sample.x.as_slice());
    basis.eval_into(&vars, phi.as_mut_slice());

    let now = clock(p, grid, &sample.tsw, khat);
    let lambda = current.tr_mul(&phi);
    let u = control_from_costate(p, now.segment, &sample.x, &lambda);
    let mode = p.segment_mode(now.segment);
    let next = &sample.x + mode.derivative(&sample.x, &u) * now.h;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            khat,
            detail: "non-finite successor state".into(),
        });
    }

    let cost = p.cost();
    let target = if khat + 1 == nprime {
        let r = p.reference_for_times(&sample.tsw, p.tf());
        (&cost.s * (next - r)) * p.terminal_factor()
    } else {
        let w_next = net.weights(khat + 1).ok_or(Error::Untrained(khat + 1))?;
        let after = clock(p, grid, &sample.tsw, khat + 1);
        vars.truncate(sample.tsw.len());
        vars.extend_from_slice(next.as_slice());
        basis.eval_into(&vars, phi.as_mut_slice());
        let lambda_next = w_next.tr_mul(&phi);
        let u_next = control_from_costate(p, after.segment, &next, &lambda_next);
        let next_mode = p.segment_mode(after.segment);
        let mut jac = next_mode.drift_jacobian(&next);
        if let crate::model::ModeDynamics::Custom(_) = next_mode {
            jac += next_mode.input_jacobian(&next, &u_next);
        }
        jac *= after.h;
        for i in 0..jac.nrows() {
            jac[(i, i)] += 1.0;
        }
        let r = p.reference_for_times(&sample.tsw, after.time);
        (&cost.qbar * (&next - r)) * after.h + jac.tr_mul(&lambda_next)
    };
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            khat,
            detail: "non-finite costate target".into(),
        });
    }
    Ok(target)
}

/// Maximum redraws of one sample slot whose propagation diverged.
const MAX_REDRAWS: usize = 10;

fn build_system(
    net: &CostateNetwork,
    p: &SwitchedTrackingProblem,
    grid: &TransformedGrid,
    khat: usize,
    current: &DMatrix<f64>,
    batch: &mut [Sample],
    rng: &mut ChaCha8Rng,
) -> Result<(DMatrix<f64>, DMatrix<f64>, usize)> {
    let n = p.state_dim();
    let m_lambda = net.basis().len();
    let mut results: Vec<Result<DVector<f64>>> = batch
        .par_iter()
        .map(|s| costate_target(net, p, grid, khat, current, s))
        .collect();
    let mut discarded = 0;
    for (slot, result) in results.iter_mut().enumerate() {
        let mut tries = 0;
        while let Err(err) = result {
            if !matches!(err, Error::Divergence { .. }) || tries == MAX_REDRAWS {
                return Err(std::mem::replace(
                    err,
                    Error::Validation(String::new()),
                ));
            }
            tries += 1;
            discarded += 1;
            batch[slot] = sample_one(p, rng);
            *result = costate_target(net, p, grid, khat, current, &batch[slot]);
        }
    }
    let mut phi = DMatrix::zeros(batch.len(), m_lambda);
    let mut targets = DMatrix::zeros(batch.len(), n);
    let mut row = vec![0.0; m_lambda];
    let mut vars = Vec::new();
    for (l, (s, t)) in batch.iter().zip(results).enumerate() {
        vars.clear();
        vars.extend_from_slice(&s.tsw);
        vars.extend_from_slice(s.x.as_slice());
        net.basis().eval_into(&vars, &mut row);
        for (c, v) in row.iter().enumerate() {
            phi[(l, c)] = *v;
        }
        let t = t?;
        for i in 0..n {
            targets[(l, i)] = t[i];
        }
    }
    Ok((phi, targets, discarded))
}

fn rms(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    (m.norm_squared() / m.len() as f64).sqrt()
}

/// Consecutive residual increases that count as divergence.
const DIVERGENCE_RUN: usize = 5;

/// Backward training over `k̂ = N′−1, …, 0`.
pub fn train(
    p: &SwitchedTrackingProblem,
    grid: &TransformedGrid,
    cfg: &TrainConfig,
) -> Result<(CostateNetwork, TrainReport)> {
    if grid.num_switches() != p.num_switches() {
        return Err(Error::Dimension(format!(
            "grid has {} switches, problem has {}",
            grid.num_switches(),
            p.num_switches()
        )));
    }
    let mut net = CostateNetwork::untrained(p, grid, cfg.basis_degree, cfg.seed)?;
    let m_lambda = net.basis().len();
    if cfg.eta < m_lambda {
        return Err(Error::Underdetermined(format!(
            "eta = {} < m_lambda = {}",
            cfg.eta, m_lambda
        )));
    }
    if !(cfg.gamma > 0.0) || cfg.max_inner == 0 {
        return Err(Error::Validation("gamma must be positive and max_inner at least 1".into()));
    }
    let ridge = cfg.ridge_value();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = p.state_dim();
    let nprime = grid.nprime();
    let mut report = TrainReport {
        nprime,
        m_lambda,
        steps: Vec::with_capacity(nprime),
        history: Vec::new(),
        wall_clock_secs: 0.0,
        capped_steps: 0,
        discarded_samples: 0,
    };

    for khat in (0..nprime).rev() {
        let mut w = match (cfg.init, net.weights(khat + 1)) {
            (WeightInit::WarmStart, Some(next)) => next.clone(),
            _ => DMatrix::zeros(m_lambda, n),
        };
        let mut batch = sample_batch(cfg, p, &mut rng);
        let mut residuals: Vec<f64> = Vec::new();
        let mut step = StepReport {
            khat,
            iterations: 0,
            final_change: f64::INFINITY,
            residual_rms: f64::NAN,
            target_rms: f64::NAN,
            converged: false,
            discarded: 0,
        };
        for iteration in 0..cfg.max_inner {
            if iteration > 0 && cfg.sampling == SamplingMode::Resample {
                batch = sample_batch(cfg, p, &mut rng);
            }
            let (phi, targets, discarded) =
                build_system(&net, p, grid, khat, &w, &mut batch, &mut rng)?;
            let w_new = least_squares_fit(&phi, &targets, ridge)?;
            let change = (&w_new - &w).norm();
            let residual = rms(&(&phi * &w_new - &targets));
            if !residual.is_finite() || w_new.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    khat,
                    detail: "non-finite weights".into(),
                });
            }
            report.history.push(HistoryRow {
                khat,
                iteration,
                frobenius_change: change,
                residual_rms: residual,
            });
            residuals.push(residual);
            if residuals.len() > DIVERGENCE_RUN {
                let tail = &residuals[residuals.len() - DIVERGENCE_RUN - 1..];
                let growing = tail.windows(2).all(|w| w[1] > w[0]);
                if growing && tail[DIVERGENCE_RUN] > 2.0 * tail[0] {
                    return Err(Error::TrainingDiverged {
                        khat,
                        from: tail[0],
                        to: tail[DIVERGENCE_RUN],
                    });
                }
            }
            step.iterations = iteration + 1;
            step.final_change = change;
            step.residual_rms = residual;
            step.target_rms = rms(&targets);
            step.discarded += discarded;
            w = w_new;
            if change <= cfg.gamma * (1.0 + w.norm()) {
                step.converged = true;
                break;
            }
        }
        if !step.converged {
            report.capped_steps += 1;
        }
        report.discarded_samples += step.discarded;
        net.set_weights(khat, w)?;
        report.steps.push(step);
    }
    report.steps.reverse();
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    if report.capped_steps > 0 {
        log::warn!(
            "{} of {} steps hit the inner-iteration cap of {}",
            report.capped_steps,
            nprime,
            cfg.max_inner
        );
    }
    Ok((net, report))
}
