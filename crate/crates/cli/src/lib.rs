//! Command implementations behind the `switchtrack` binary.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde_json::{json, Value};

use switchtrack::document::{self, ProblemDocument};
use switchtrack::oracle::compare_network;
use switchtrack::problems::VDP_REFERENCE_T1;
use switchtrack::rollout::{rollout, CostatePolicy, Trajectory, ZeroPolicy};
use switchtrack::snac::{self, held_out_points, CostateNetwork, TrainReport, WeightsFile};
use switchtrack::switchopt::{
    method1_scalar, method2_analytic, method3_sweep, uniform_candidates, write_polynomial, CurvePoint,
    Method, Method2Result, ValueCurve, METHOD2_CAVEAT,
};
use switchtrack::{Error, SwitchVector, SwitchedTrackingProblem, TransformedGrid};

pub const OUT_DIR_ENV: &str = "SWITCHTRACK_OUT_DIR";

/// Worst relative costate error accepted by `oracle-check`.
pub const ORACLE_TOLERANCE: f64 = 1e-3;

fn version() -> &'static str {
    Box::leak(
        format!(
            "{} (config schema {})",
            env!("CARGO_PKG_VERSION"),
            document::SCHEMA_VERSION
        )
        .into_boxed_str(),
    )
}

#[derive(Debug, Parser)]
#[command(name = "switchtrack", version = version(), about = "Optimal tracking for switched systems")]
pub struct Cli {
    /// Overrides the seed stored in the problem document.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Caps the number of worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = ".")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the per-step costate networks.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Weights file; defaults to `weights.json` in the output directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Simulate one switching vector and write the trajectory.
    Rollout {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(short, long)]
        weights: Option<PathBuf>,
        /// Comma-separated switching times.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        tsw: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value_t = PolicyKind::Trained)]
        policy: PolicyKind,
        /// Trajectory CSV; the summary goes next to it as `<stem>.summary.json`.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Choose switching times with method 1, 2 or 3.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(short, long, required = true)]
        weights: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        method: u8,
        /// Candidates per switching time.
        #[arg(long, default_value_t = 30)]
        grid: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Train on an all-linear problem and compare with the exact costates.
    OracleCheck {
        #[command(flatten)]
        config: ConfigArg,
        /// Held-out points per step.
        #[arg(long, default_value_t = 100)]
        points: usize,
    },
    /// Regenerate the Van der Pol experiment bundle.
    ReproduceVdp {
        #[arg(long, default_value_t = 30)]
        grid: usize,
    },
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Problem document path, or `builtin:vdp` / `builtin:lq_two_mode`.
    pub config: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Trained,
    Zero,
}

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Input(String),
    /// A checked criterion did not hold.
    Criterion(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Criterion(_) => 3,
            CliError::Core(e) => match e {
                Error::Divergence { .. }
                | Error::TrainingDiverged { .. }
                | Error::RankDeficient { .. }
                | Error::NonFinite(_) => 2,
                _ => 1,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{}", e),
            CliError::Input(m) | CliError::Criterion(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// A parsed document with everything derived from it.
pub struct Loaded {
    pub doc: ProblemDocument,
    pub problem: SwitchedTrackingProblem,
    pub grid: TransformedGrid,
    pub seed: u64,
    pub hash: String,
}

impl Loaded {
    pub fn from_source(source: &str, seed: Option<u64>) -> CliResult<Self> {
        let text = match source {
            "builtin:vdp" => document::BUNDLED_VDP.to_string(),
            "builtin:lq_two_mode" => document::BUNDLED_LQ_TWO_MODE.to_string(),
            path => fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read config {}: {}", path, e)))?,
        };
        let doc = ProblemDocument::from_json(&text)?;
        let problem = doc.problem()?;
        let grid = doc.grid()?;
        let seed = doc.train_config(seed).seed;
        let hash = doc.config_hash();
        Ok(Loaded {
            doc,
            problem,
            grid,
            seed,
            hash,
        })
    }

    pub fn header(&self) -> String {
        format!("seed={} config_hash={}", self.seed, self.hash)
    }

    fn x0(&self, given: Option<Vec<f64>>) -> CliResult<DVector<f64>> {
        let x0 = match given {
            Some(v) => DVector::from_vec(v),
            None => self
                .doc
                .initial_state()
                .ok_or_else(|| CliError::Input("no --x0 given and the config has no x0".into()))?,
        };
        if x0.len() != self.problem.state_dim() {
            return Err(CliError::Input(format!(
                "x0 has {} entries, expected {}",
                x0.len(),
                self.problem.state_dim()
            )));
        }
        Ok(x0)
    }

    fn switch_vector(&self, tsw: Vec<f64>) -> CliResult<SwitchVector> {
        if tsw.len() != self.problem.num_switches() {
            return Err(CliError::Input(format!(
                "--tsw has {} entries, the sequence needs {}",
                tsw.len(),
                self.problem.num_switches()
            )));
        }
        Ok(SwitchVector::new(tsw, self.problem.t0(), self.problem.tf())?)
    }

    pub fn train(&self) -> CliResult<(CostateNetwork, TrainReport)> {
        let cfg = self.doc.train_config(Some(self.seed));
        let (mut net, report) = snac::train(&self.problem, &self.grid, &cfg)?;
        net.set_config_hash(self.hash.clone());
        Ok((net, report))
    }

    pub fn load_weights(&self, path: &Path) -> CliResult<CostateNetwork> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read weights {}: {}", path.display(), e)))?;
        let file: WeightsFile = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        let net = CostateNetwork::from_file(file)?;
        net.check_compatible(&self.problem, &self.grid)?;
        if net.config_hash() != self.hash {
            log::warn!(
                "weights were trained from config {} but this config hashes to {}",
                net.config_hash(),
                self.hash
            );
        }
        Ok(net)
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| {
        CliError::Input(format!("cannot write {}: {}", path.display(), e))
    })?))
}

fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn stamped(l: &Loaded, mut value: Value) -> Value {
    value["seed"] = json!(l.seed);
    value["config_hash"] = json!(l.hash);
    value
}

pub fn write_weights(net: &CostateNetwork, path: &Path) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, &net.to_file()?).map_err(Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn report_json(l: &Loaded, report: &TrainReport) -> CliResult<Value> {
    let mut v = serde_json::to_value(report).map_err(Error::from)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("history");
    }
    Ok(stamped(l, v))
}

/// Writes `weight-history.csv`, `step-change.csv` and `train-report.json`.
fn write_training_outputs(l: &Loaded, net: &CostateNetwork, report: &TrainReport, dir: &Path) -> CliResult<()> {
    let header = l.header();
    let mut w = create(&dir.join("weight-history.csv"))?;
    report.write_history_csv(&mut w, Some(&header))?;
    w.flush()?;

    let mut w = create(&dir.join("step-change.csv"))?;
    writeln!(w, "# {}", header)?;
    writeln!(w, "khat,change_to_next")?;
    for (k, c) in net.step_change_profile()?.iter().enumerate() {
        writeln!(w, "{},{:?}", k, c)?;
    }
    w.flush()?;

    write_json(&dir.join("train-report.json"), &report_json(l, report)?)
}

fn trajectory_summary(l: &Loaded, traj: &Trajectory, policy: PolicyKind, sw: &SwitchVector, x0: &DVector<f64>) -> Value {
    let span = (l.grid.num_segments()) as f64;
    let rms: Vec<f64> = (0..l.problem.state_dim()).map(|i| traj.rms_error(i, 0.0, span)).collect();
    stamped(
        l,
        json!({
            "policy": match policy { PolicyKind::Trained => "trained", PolicyKind::Zero => "zero" },
            "tsw": sw.times(),
            "x0": x0.as_slice(),
            "state_rows": traj.states.len(),
            "total_cost": traj.total_cost,
            "terminal_cost": traj.terminal_cost,
            "terminal_error": traj.terminal_error().as_slice(),
            "rms_error": rms,
        }),
    )
}

fn write_trajectory(l: &Loaded, traj: &Trajectory, path: &Path) -> CliResult<()> {
    let mut w = create(path)?;
    traj.write_csv(&mut w, &l.problem, Some(&l.header()))?;
    w.flush()?;
    Ok(())
}

fn summary_path(csv: &Path) -> PathBuf {
    csv.with_extension("summary.json")
}

/// Method 2 sampled on the same cell-centred grid as method 3.
fn method2_curve(l: &Loaded, result: &Method2Result, count: usize) -> CliResult<ValueCurve> {
    let samples = uniform_candidates(&l.problem, count)?
        .into_iter()
        .map(|sw| {
            let t = sw.times()[0];
            let cost = result.restricted.iter().rev().fold(0.0, |acc, c| acc * t + c);
            CurvePoint {
                tsw: vec![t],
                cost,
                feasible: cost.is_finite(),
            }
        })
        .collect();
    Ok(ValueCurve::from_samples(Method::Analytic, samples)?)
}

fn write_curve(l: &Loaded, curve: &ValueCurve, path: &Path) -> CliResult<()> {
    let mut w = create(path)?;
    curve.write_csv(&mut w, Some(&l.header()))?;
    w.flush()?;
    Ok(())
}

/// Result of one switching-time method as reported in JSON.
struct Choice {
    tsw: Vec<f64>,
    extra: Value,
    curve: ValueCurve,
}

fn run_method(
    l: &Loaded,
    net: &CostateNetwork,
    x0: &DVector<f64>,
    method: u8,
    grid: usize,
    dir: &Path,
) -> CliResult<Choice> {
    let (lo, hi) = l.problem.switch_interval();
    match method {
        1 => {
            let r = method1_scalar(net, &l.problem, &l.grid, x0, lo, hi)?;
            let curve = match &r.fallback {
                Some(c) => c.clone(),
                None => {
                    let mut trace = r.trace.clone();
                    trace.sort_by(|a, b| a.tsw.partial_cmp(&b.tsw).unwrap_or(std::cmp::Ordering::Equal));
                    ValueCurve::from_samples(Method::Scalar, trace)?
                }
            };
            Ok(Choice {
                tsw: r.tsw.clone(),
                extra: json!({
                    "cost": r.cost,
                    "evaluations": r.evaluations,
                    "fallback_sweep": r.fallback.is_some(),
                }),
                curve,
            })
        }
        2 => {
            let r = method2_analytic(net, x0, lo, hi)?;
            let poly_path = dir.join("method2-polynomial.csv");
            let mut w = create(&poly_path)?;
            write_polynomial(&mut w, &r.value, Some(&format!("{} variables=t1,x1..xn", l.header())))?;
            w.flush()?;
            let curve = method2_curve(l, &r, grid)?;
            Ok(Choice {
                tsw: vec![r.t1],
                extra: json!({
                    "restricted_coefficients": r.restricted,
                    "curl_defect": r.curl_defect,
                    "relative_curl_defect": r.relative_curl_defect,
                    "polynomial_file": poly_path.display().to_string(),
                    "caveat": METHOD2_CAVEAT,
                }),
                curve,
            })
        }
        _ => {
            let candidates = uniform_candidates(&l.problem, grid)?;
            let curve = method3_sweep(net, &l.problem, &l.grid, x0, &candidates)?;
            Ok(Choice {
                tsw: curve.best().tsw.clone(),
                extra: json!({
                    "cost": curve.best().cost,
                    "candidates": curve.samples.len(),
                    "infeasible": curve.samples.iter().filter(|s| !s.feasible).count(),
                }),
                curve,
            })
        }
    }
}

fn cmd_train(cli: &Cli, config: &str, output: Option<&Path>) -> CliResult<()> {
    let l = Loaded::from_source(config, cli.seed)?;
    let (net, report) = l.train()?;
    let path = output.map_or_else(|| cli.out_dir.join("weights.json"), Path::to_path_buf);
    write_weights(&net, &path)?;
    write_training_outputs(&l, &net, &report, &cli.out_dir)?;
    println!(
        "trained N' = {} steps, m_lambda = {}, {} capped, in {:.1} s -> {}",
        report.nprime,
        report.m_lambda,
        report.capped_steps,
        report.wall_clock_secs,
        path.display()
    );
    Ok(())
}

fn cmd_rollout(
    cli: &Cli,
    config: &str,
    weights: Option<&Path>,
    tsw: Vec<f64>,
    x0: Option<Vec<f64>>,
    policy: PolicyKind,
    output: Option<&Path>,
) -> CliResult<()> {
    let l = Loaded::from_source(config, cli.seed)?;
    let sw = l.switch_vector(tsw)?;
    let x0 = l.x0(x0)?;
    let net = match (policy, weights) {
        (PolicyKind::Trained, Some(w)) => Some(l.load_weights(w)?),
        (PolicyKind::Trained, None) => {
            return Err(CliError::Input("--policy trained needs --weights".into()));
        }
        (PolicyKind::Zero, _) => None,
    };
    let traj = match &net {
        Some(net) => rollout(&l.problem, &l.grid, &sw, &trained_policy(net, &l), &x0)?,
        None => rollout(&l.problem, &l.grid, &sw, &zero_policy(&l), &x0)?,
    };
    let path = output.map_or_else(|| cli.out_dir.join("trajectory.csv"), Path::to_path_buf);
    write_trajectory(&l, &traj, &path)?;
    let summary = trajectory_summary(&l, &traj, policy, &sw, &x0);
    write_json(&summary_path(&path), &summary)?;
    println!("total cost {:e} -> {}", traj.total_cost, path.display());
    Ok(())
}

fn trained_policy<'a>(net: &'a CostateNetwork, l: &'a Loaded) -> CostatePolicy<'a> {
    CostatePolicy {
        net,
        problem: &l.problem,
        grid: &l.grid,
    }
}

fn zero_policy(l: &Loaded) -> ZeroPolicy {
    ZeroPolicy {
        input_dim: l.problem.input_dim(),
    }
}

fn cmd_sweep(
    cli: &Cli,
    config: &str,
    weights: &Path,
    x0: Option<Vec<f64>>,
    method: u8,
    grid: usize,
    output: Option<&Path>,
) -> CliResult<()> {
    let l = Loaded::from_source(config, cli.seed)?;
    let x0 = l.x0(x0)?;
    if method == 2 && l.problem.num_switches() != 1 {
        return Err(Error::Unsupported(format!(
            "method 2 needs exactly one switching time, the config has {}",
            l.problem.num_switches()
        ))
        .into());
    }
    let net = l.load_weights(weights)?;
    let choice = run_method(&l, &net, &x0, method, grid, &cli.out_dir)?;
    let path = output.map_or_else(|| cli.out_dir.join(format!("value-curve-method{}.csv", method)), Path::to_path_buf);
    write_curve(&l, &choice.curve, &path)?;
    let mut chosen = stamped(&l, choice.extra);
    chosen["method"] = json!(method);
    chosen["tsw"] = json!(choice.tsw);
    chosen["x0"] = json!(x0.as_slice());
    write_json(&cli.out_dir.join(format!("sweep-method{}.json", method)), &chosen)?;
    println!("method {}: t_sw = {:?}", method, choice.tsw);
    if method == 2 {
        println!("note: {}", METHOD2_CAVEAT);
    }
    Ok(())
}

/// Outcome of `oracle-check`, also used by the acceptance tests.
pub struct OracleCheck {
    pub worst: f64,
    pub worst_step: usize,
    pub train_secs: f64,
    pub total_secs: f64,
}

pub fn oracle_check(l: &Loaded, points: usize) -> CliResult<(OracleCheck, Value)> {
    if !l.problem.all_linear() {
        return Err(Error::Unsupported("oracle requires linear modes".into()).into());
    }
    let start = Instant::now();
    let (net, report) = l.train()?;
    let held_out = held_out_points(&l.problem, points, l.seed);
    let cmp = compare_network(&net, &l.problem, &l.grid, &held_out)?;
    let check = OracleCheck {
        worst: cmp.worst,
        worst_step: cmp.worst_step,
        train_secs: report.wall_clock_secs,
        total_secs: start.elapsed().as_secs_f64(),
    };
    let value = stamped(
        l,
        json!({
            "points_per_step": points,
            "tolerance": ORACLE_TOLERANCE,
            "worst_relative_error": cmp.worst,
            "worst_step": cmp.worst_step,
            "pass": cmp.worst <= ORACLE_TOLERANCE,
            "train_secs": check.train_secs,
            "total_secs": check.total_secs,
            "per_step": cmp.per_step,
        }),
    );
    Ok((check, value))
}

fn cmd_oracle_check(cli: &Cli, config: &str, points: usize) -> CliResult<()> {
    let l = Loaded::from_source(config, cli.seed)?;
    let (check, value) = oracle_check(&l, points)?;
    write_json(&cli.out_dir.join("oracle-report.json"), &value)?;
    let line = format!(
        "worst relative costate error {:.3e} at step {} over {} held-out points per step (tolerance {:e}, {:.1} s)",
        check.worst, check.worst_step, points, ORACLE_TOLERANCE, check.total_secs
    );
    if check.worst <= ORACLE_TOLERANCE {
        println!("PASS: {}", line);
        Ok(())
    } else {
        Err(CliError::Criterion(format!("FAIL: {}", line)))
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// RMS of `x2 − r2` over `t̂ ∈ [0.5, 2]` under the trained and zero policies.
fn paired_rms(l: &Loaded, net: &CostateNetwork, sw: &SwitchVector, x0: &DVector<f64>) -> CliResult<(Trajectory, Trajectory, f64, f64)> {
    let trained = rollout(&l.problem, &l.grid, sw, &trained_policy(net, l), x0)?;
    let zero = rollout(&l.problem, &l.grid, sw, &zero_policy(l), x0)?;
    let a = trained.rms_error(1, 0.5, 2.0);
    let b = zero.rms_error(1, 0.5, 2.0);
    Ok((trained, zero, a, b))
}

fn cmd_reproduce_vdp(cli: &Cli, grid: usize) -> CliResult<()> {
    let start = Instant::now();
    let l = Loaded::from_source("builtin:vdp", cli.seed)?;
    let dir = cli.out_dir.as_path();
    let x0 = l.x0(None)?;

    let (net, report) = l.train()?;
    write_weights(&net, &dir.join("weights.json"))?;
    write_training_outputs(&l, &net, &report, dir)?;
    let profile = net.step_change_profile()?;
    let (peak_step, peak) = profile
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, (k, c)| if c > a.1 { (k, c) } else { a });
    let med = median(&profile);

    let mut methods = Vec::new();
    for m in 1..=3u8 {
        let c = run_method(&l, &net, &x0, m, grid, dir)?;
        write_curve(&l, &c.curve, &dir.join(format!("value-curve-method{}.csv", m)))?;
        methods.push(c);
    }
    let t1 = [methods[0].tsw[0], methods[1].tsw[0], methods[2].tsw[0]];
    let rel_curl = methods[1].extra["relative_curl_defect"].as_f64().unwrap_or(f64::NAN);

    let chosen = SwitchVector::new(vec![t1[2]], l.problem.t0(), l.problem.tf())?;
    let (trained, zero, rms_trained, rms_zero) = paired_rms(&l, &net, &chosen, &x0)?;
    write_trajectory(&l, &trained, &dir.join("trajectory.csv"))?;
    write_trajectory(&l, &zero, &dir.join("trajectory-zero.csv"))?;
    let reference = SwitchVector::new(vec![VDP_REFERENCE_T1], l.problem.t0(), l.problem.tf())?;
    let (_, _, ref_trained, ref_zero) = paired_rms(&l, &net, &reference, &x0)?;

    let total = start.elapsed().as_secs_f64();
    let summary = stamped(
        &l,
        json!({
            "nprime": report.nprime,
            "m_lambda": report.m_lambda,
            "train_secs": report.wall_clock_secs,
            "total_secs": total,
            "capped_steps": report.capped_steps,
            "step_change": {
                "argmax_khat": peak_step,
                "peak": peak,
                "median": med,
                "peak_over_median": peak / med,
            },
            "method1": { "t1": t1[0], "detail": methods[0].extra },
            "method2": { "t1": t1[1], "detail": methods[1].extra },
            "method3": { "t1": t1[2], "grid": grid, "detail": methods[2].extra },
            "method1_vs_method3": (t1[0] - t1[2]).abs(),
            "method2_vs_method3": (t1[1] - t1[2]).abs(),
            "chosen_t1": t1[2],
            "rms_x2_trained": rms_trained,
            "rms_x2_zero": rms_zero,
            "rms_ratio": rms_trained / rms_zero,
            "reference_t1": VDP_REFERENCE_T1,
            "reference_rms_ratio": ref_trained / ref_zero,
        }),
    );
    write_json(&dir.join("summary.json"), &summary)?;

    println!("N' = {}, trained in {:.1} s, total {:.1} s", report.nprime, report.wall_clock_secs, total);
    println!(
        "largest weight change between steps {} and {}: {:.3e} ({:.1}x median)",
        peak_step,
        peak_step + 1,
        peak,
        peak / med
    );
    println!("method 1 t1 = {:.4}", t1[0]);
    println!("method 2 t1 = {:.4} (relative curl defect {:.2e})", t1[1], rel_curl);
    println!("method 3 t1 = {:.4} ({} candidates)", t1[2], grid);
    println!("reference t1 = {} (published value)", VDP_REFERENCE_T1);
    println!(
        "RMS(x2 - r2) on [0.5, 2]: trained {:.4e}, zero {:.4e}, ratio {:.3}",
        rms_trained,
        rms_zero,
        rms_trained / rms_zero
    );
    println!("note: {}", METHOD2_CAVEAT);
    Ok(())
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Input("--threads must be positive".into()));
        }
        // Ignore the error if a pool already exists, e.g. in tests.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Train { config, output } => cmd_train(cli, &config.config, output.as_deref()),
        Command::Rollout {
            config,
            weights,
            tsw,
            x0,
            policy,
            output,
        } => cmd_rollout(cli, &config.config, weights.as_deref(), tsw.clone(), x0.clone(), *policy, output.as_deref()),
        Command::Sweep {
            config,
            weights,
            x0,
            method,
            grid,
            output,
        } => cmd_sweep(cli, &config.config, weights, x0.clone(), *method, *grid, output.as_deref()),
        Command::OracleCheck { config, points } => cmd_oracle_check(cli, &config.config, *points),
        Command::ReproduceVdp { grid } => cmd_reproduce_vdp(cli, *grid),
    }
}

#[cfg(test)]
mod commands;
