//! Benchmark metrics and tuning: the combined position/velocity estimation
//! error, per-method interception tables, grid-search guidance tuning and
//! quasi-Newton filter tuning over recorded detection logs.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{imm_step, ImmBelief};
use crate::guidance::GuidanceParams;
use crate::sensing::{detect, ObserverState, SensorNoiseParams};
use crate::simworld::{
    random_start, run_scenario, DetectionRecord, EstErrorSample, FilterParams, Method, RunConfig, RunReport, Scenario,
};
use crate::trajlab::Trajectory;

/// Estimation error summary: `(e_x, e_p, e_v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub e_x: f64,
    pub e_p: f64,
    pub e_v: f64,
}

/// `e_x = sqrt(mean(|p_err|² + c_e²|v_err|²))`; `e_p` and `e_v` are the RMS
/// of the position and velocity error norms.
pub fn metric_ex(samples: &[EstErrorSample], c_e: f64) -> Result<ErrorMetrics> {
    if samples.is_empty() {
        return Err(Error::Metric("no estimation samples".into()));
    }
    let n = samples.len() as f64;
    let sp = samples.iter().map(|s| s.p_err.norm_squared()).sum::<f64>();
    let sv = samples.iter().map(|s| s.v_err.norm_squared()).sum::<f64>();
    Ok(ErrorMetrics { e_x: ((sp + c_e * c_e * sv) / n).sqrt(), e_p: (sp / n).sqrt(), e_v: (sv / n).sqrt() })
}

/// One method's interception and estimation statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub trajectories: usize,
    pub runs: usize,
    pub pct_trajectories_with_interception: f64,
    pub mean_interceptions_per_trajectory: f64,
    /// Over trajectories with at least one event; `None` when there are none.
    pub mean_time_to_first: Option<f64>,
    /// Number of trajectories entering `mean_time_to_first`.
    pub time_to_first_count: usize,
    /// Runs without events counted at their full duration.
    pub mean_time_to_first_imputed: f64,
    pub mean_accuracy_all: Option<f64>,
    pub mean_accuracy_first: Option<f64>,
    /// Mean per-cycle guidance time (s), when timing was recorded.
    pub mean_compute_time: Option<f64>,
    pub e_x: Option<f64>,
    pub e_p: Option<f64>,
    pub e_v: Option<f64>,
    pub mpc_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn row(&self, method: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn run_key(r: &RunReport) -> (u64, [u64; 3], u64) {
    let p = r.scenario.start;
    (r.scenario.seed, [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()], r.scenario.duration.to_bits())
}

/// Reduces runs per trajectory (averaging over starts), then averages
/// trajectories per method. Rows are sorted by method name.
pub fn aggregate(reports: &[RunReport]) -> BenchTable {
    let mut groups: BTreeMap<&str, BTreeMap<&str, Vec<&RunReport>>> = BTreeMap::new();
    for r in reports {
        groups.entry(r.scenario.method.as_str()).or_default().entry(r.scenario.trajectory.as_str()).or_default().push(r);
    }
    let rows = groups
        .into_iter()
        .map(|(method, trajs)| {
            let mut hit = Vec::new();
            let mut count = Vec::new();
            let mut first_time = Vec::new();
            let mut first_acc = Vec::new();
            let mut acc_all = Vec::new();
            let mut imputed = Vec::new();
            let mut compute = Vec::new();
            let mut samples = Vec::new();
            let mut runs = 0;
            let mut failures = 0;
            for runs_of in trajs.into_values() {
                let mut runs_of = runs_of;
                runs_of.sort_by(|a, b| run_key(a).cmp(&run_key(b)));
                runs += runs_of.len();
                let n = runs_of.len() as f64;
                hit.push(runs_of.iter().filter(|r| !r.events.is_empty()).count() as f64 / n);
                count.push(runs_of.iter().map(|r| r.events.len() as f64).sum::<f64>() / n);
                let firsts: Vec<_> = runs_of.iter().filter_map(|r| r.events.first()).collect();
                if let Some(t) = mean(firsts.iter().map(|e| e.time)) {
                    first_time.push(t);
                    first_acc.push(mean(firsts.iter().map(|e| e.accuracy)).unwrap_or_default());
                }
                if let Some(a) = mean(runs_of.iter().flat_map(|r| r.events.iter().map(|e| e.accuracy))) {
                    acc_all.push(a);
                }
                imputed.push(runs_of.iter().map(|r| r.events.first().map_or(r.scenario.duration, |e| e.time)).sum::<f64>() / n);
                for r in &runs_of {
                    compute.extend_from_slice(&r.compute_times);
                    samples.extend_from_slice(&r.est_samples);
                    failures += r.mpc_failures;
                }
            }
            let est = metric_ex(&samples, 1.0).ok();
            BenchRow {
                method: method.to_string(),
                trajectories: hit.len(),
                runs,
                pct_trajectories_with_interception: 100.0 * mean(hit.iter().copied()).unwrap_or_default(),
                mean_interceptions_per_trajectory: mean(count).unwrap_or_default(),
                time_to_first_count: first_time.len(),
                mean_time_to_first: mean(first_time),
                mean_time_to_first_imputed: mean(imputed).unwrap_or_default(),
                mean_accuracy_all: mean(acc_all),
                mean_accuracy_first: mean(first_acc),
                mean_compute_time: mean(compute),
                e_x: est.map(|m| m.e_x),
                e_p: est.map(|m| m.e_p),
                e_v: est.map(|m| m.e_v),
                mpc_failures: failures,
            }
        })
        .collect();
    BenchTable { rows }
}

/// Seed of run `start` on trajectory `trajectory`; shared by every method so
/// all methods face the same starts.
pub fn run_seed(base: u64, trajectory: usize, start: usize) -> u64 {
    let mut z = base ^ ((trajectory as u64) << 20) ^ start as u64;
    // splitmix64 finalizer
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Methods × trajectories × random starts.
pub fn batch_scenarios(
    config: &RunConfig,
    methods: &[(String, Method)],
    trajectories: &[(String, Arc<Trajectory>)],
    starts: usize,
    seed: u64,
) -> Vec<Scenario> {
    let mut out = Vec::with_capacity(methods.len() * trajectories.len() * starts);
    for (label, method) in methods {
        for (ti, (name, tr)) in trajectories.iter().enumerate() {
            for si in 0..starts {
                let s = run_seed(seed, ti, si);
                let mut sc = Scenario::with_config(name.clone(), tr.clone(), random_start(tr, s), method.clone(), config);
                sc.label = label.clone();
                sc.seed = s;
                out.push(sc);
            }
        }
    }
    out
}

/// Runs scenarios on a pool of `jobs` workers; reports keep the input order.
pub fn run_batch(scenarios: &[Scenario], jobs: usize) -> Result<Vec<RunReport>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Scenario(format!("cannot start worker pool: {e}")))?;
    pool.install(|| scenarios.par_iter().map(run_scenario).collect())
}

/// Rounds to `digits` significant digits.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x).parse().unwrap_or(x)
}

/// Serializes to pretty JSON, rounding every number to 6 significant digits
/// unless `raw` is set.
pub fn to_json<T: Serialize>(value: &T, raw: bool) -> Result<String> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::Metric(e.to_string()))?;
    if !raw {
        round_value(&mut v);
    }
    serde_json::to_string_pretty(&v).map_err(|e| Error::Metric(e.to_string()))
}

fn round_value(v: &mut serde_json::Value) {
    use serde_json::Value;
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64().and_then(|x| serde_json::Number::from_f64(round_sig(x, 6))) {
                *n = x;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

fn fmt_num(x: f64, raw: bool) -> String {
    if raw { format!("{x}") } else { format!("{}", round_sig(x, 6)) }
}

fn fmt_opt(x: Option<f64>, raw: bool) -> String {
    x.map_or_else(String::new, |x| fmt_num(x, raw))
}

/// Flat CSV view of a table; absent values are empty cells.
pub fn table_to_csv(table: &BenchTable, raw: bool) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Metric(e.to_string());
    w.write_record([
        "method",
        "trajectories",
        "runs",
        "pct_trajectories_with_interception",
        "mean_interceptions_per_trajectory",
        "mean_time_to_first",
        "time_to_first_count",
        "mean_time_to_first_imputed",
        "mean_accuracy_all",
        "mean_accuracy_first",
        "mean_compute_time",
        "e_x",
        "e_p",
        "e_v",
        "mpc_failures",
    ])
    .map_err(csv_err)?;
    for r in &table.rows {
        w.write_record([
            r.method.clone(),
            r.trajectories.to_string(),
            r.runs.to_string(),
            fmt_num(r.pct_trajectories_with_interception, raw),
            fmt_num(r.mean_interceptions_per_trajectory, raw),
            fmt_opt(r.mean_time_to_first, raw),
            r.time_to_first_count.to_string(),
            fmt_num(r.mean_time_to_first_imputed, raw),
            fmt_opt(r.mean_accuracy_all, raw),
            fmt_opt(r.mean_accuracy_first, raw),
            fmt_opt(r.mean_compute_time, raw),
            fmt_opt(r.e_x, raw),
            fmt_opt(r.e_p, raw),
            fmt_opt(r.e_v, raw),
            r.mpc_failures.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Metric(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Metric(e.to_string()))
}

/// Tunable guidance parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceField {
    Gain,
    Weight,
    K1,
    K2,
    VR,
}

impl GuidanceField {
    pub fn name(self) -> &'static str {
        match self {
            GuidanceField::Gain => "gain",
            GuidanceField::Weight => "weight",
            GuidanceField::K1 => "k1",
            GuidanceField::K2 => "k2",
            GuidanceField::VR => "v_r",
        }
    }

    pub fn set(self, p: &mut GuidanceParams, x: f64) {
        match self {
            GuidanceField::Gain => p.gain = x,
            GuidanceField::Weight => p.weight = x,
            GuidanceField::K1 => p.k1 = x,
            GuidanceField::K2 => p.k2 = x,
            GuidanceField::VR => p.v_r = x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub field: GuidanceField,
    pub values: Vec<f64>,
}

impl GridAxis {
    /// `n` evenly spaced values over `[lo, hi]`.
    pub fn linear(field: GuidanceField, lo: f64, hi: f64, n: usize) -> Self {
        let values = if n <= 1 { vec![lo] } else { (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect() };
        Self { field, values }
    }

    /// `n` log-spaced values over `[lo, hi]` (both positive).
    pub fn log(field: GuidanceField, lo: f64, hi: f64, n: usize) -> Self {
        let mut axis = Self::linear(field, lo.ln(), hi.ln(), n);
        axis.values.iter_mut().for_each(|v| *v = v.exp());
        axis
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceTuneSpec {
    pub base: GuidanceParams,
    pub axes: Vec<GridAxis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub values: Vec<f64>,
    pub primary: f64,
    pub secondary: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub names: Vec<String>,
    pub points: Vec<GridPoint>,
    pub best: usize,
}

impl GridSearch {
    pub fn best_point(&self) -> &GridPoint {
        &self.points[self.best]
    }

    /// Flat audit table, one grid point per line.
    pub fn to_csv(&self) -> String {
        let mut out = self.names.join(",");
        out.push_str(",primary,secondary\n");
        for p in &self.points {
            for v in &p.values {
                out.push_str(&format!("{},", round_sig(*v, 6)));
            }
            out.push_str(&format!("{},{}\n", round_sig(p.primary, 6), round_sig(p.secondary, 6)));
        }
        out
    }
}

fn cmp_tuple(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Exhaustive search maximizing `(primary, secondary)` lexicographically;
/// exact ties go to the lowest parameter tuple.
pub fn grid_search<F>(names: Vec<String>, axes: &[Vec<f64>], objective: F) -> Result<GridSearch>
where
    F: Fn(&[f64]) -> Result<(f64, f64)> + Sync,
{
    if axes.is_empty() || axes.iter().any(|a| a.is_empty()) {
        return Err(Error::Tuning("grid axes must be nonempty".into()));
    }
    if axes.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Tuning("grid values must be finite".into()));
    }
    let total: usize = axes.iter().map(Vec::len).product();
    let tuples: Vec<Vec<f64>> = (0..total)
        .map(|mut k| {
            let mut t = vec![0.0; axes.len()];
            for (i, axis) in axes.iter().enumerate().rev() {
                t[i] = axis[k % axis.len()];
                k /= axis.len();
            }
            t
        })
        .collect();
    let points = tuples
        .into_par_iter()
        .map(|values| objective(&values).map(|(primary, secondary)| GridPoint { values, primary, secondary }))
        .collect::<Result<Vec<_>>>()?;
    let best = (0..points.len())
        .max_by(|&i, &j| {
            let (a, b) = (&points[i], &points[j]);
            a.primary
                .total_cmp(&b.primary)
                .then(a.secondary.total_cmp(&b.secondary))
                .then(cmp_tuple(&b.values, &a.values))
        })
        .unwrap_or_default();
    Ok(GridSearch { names, points, best })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceTuning {
    pub best: GuidanceParams,
    pub grid: GridSearch,
}

/// Grid-search over guidance parameters. Each point runs every scenario with
/// the candidate law; the primary metric is the percentage of trajectories
/// with an interception, the secondary the mean interceptions per trajectory.
pub fn tune_guidance(spec: &GuidanceTuneSpec, scenarios: &[Scenario]) -> Result<GuidanceTuning> {
    if scenarios.is_empty() {
        return Err(Error::Tuning("no tuning scenarios".into()));
    }
    let candidate = |values: &[f64]| {
        let mut p = spec.base;
        for (axis, x) in spec.axes.iter().zip(values) {
            axis.field.set(&mut p, *x);
        }
        p
    };
    let names = spec.axes.iter().map(|a| a.field.name().to_string()).collect();
    let axes: Vec<Vec<f64>> = spec.axes.iter().map(|a| a.values.clone()).collect();
    let grid = grid_search(names, &axes, |values| {
        let params = candidate(values);
        params.validate()?;
        let reports = scenarios
            .iter()
            .map(|sc| {
                let mut sc = sc.clone();
                sc.method = Method::Guidance(params);
                sc.label = "candidate".into();
                run_scenario(&sc)
            })
            .collect::<Result<Vec<_>>>()?;
        let table = aggregate(&reports);
        let row = &table.rows[0];
        Ok((row.pct_trajectories_with_interception, row.mean_interceptions_per_trajectory))
    })?;
    Ok(GuidanceTuning { best: candidate(&grid.best_point().values), grid })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BfgsSettings {
    pub max_iter: usize,
    /// Stop when the gradient infinity norm falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step improves the objective by less than `f_tol·(1 + |f|)`.
    pub f_tol: f64,
    /// Central-difference step relative to `max(|x_i|, 1)`.
    pub rel_step: f64,
}

impl Default for BfgsSettings {
    fn default() -> Self {
        Self { max_iter: 100, grad_tol: 1e-8, f_tol: 1e-10, rel_step: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub iterations: usize,
    /// Objective after each accepted iteration, starting with the initial value.
    pub trace: Vec<f64>,
    pub converged: bool,
}

fn numeric_gradient<F: Fn(&DVector<f64>) -> f64>(f: &F, x: &DVector<f64>, rel_step: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let h = rel_step * x[i].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    })
}

/// BFGS with numeric central-difference gradients and Armijo backtracking.
/// Non-finite objective values are treated as rejected trial points.
pub fn bfgs_minimize<F: Fn(&DVector<f64>) -> f64>(f: F, x0: DVector<f64>, settings: &BfgsSettings) -> Result<BfgsResult> {
    let n = x0.len();
    let mut x = x0;
    let mut fx = f(&x);
    if !fx.is_finite() {
        return Err(Error::Tuning(format!("objective is not finite at the initial point ({fx})")));
    }
    let mut trace = vec![fx];
    if settings.max_iter == 0 || n == 0 {
        return Ok(BfgsResult { x, f: fx, iterations: 0, trace, converged: n == 0 });
    }
    let mut g = numeric_gradient(&f, &x, settings.rel_step);
    let mut h = nalgebra::DMatrix::<f64>::identity(n, n);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_iter {
        if !g.iter().all(|v| v.is_finite()) {
            break;
        }
        if g.amax() < settings.grad_tol {
            converged = true;
            break;
        }
        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            h = nalgebra::DMatrix::identity(n, n);
            d = -g.clone();
            slope = g.dot(&d);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xt = &x + &d * step;
            let ft = f(&xt);
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((xt, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_)) = accepted else { break };
        iterations += 1;
        let gn = numeric_gradient(&f, &xn, settings.rel_step);
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if iterations == 1 {
                h *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        let improvement = fx - fn_;
        x = xn;
        fx = fn_;
        g = gn;
        trace.push(fx);
        if improvement <= settings.f_tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
    }
    Ok(BfgsResult { x, f: fx, iterations, trace, converged })
}

/// Filter parameter exposed to tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterField {
    SigmaA,
    SigmaJ,
    SigmaZeta3,
    CAlpha,
    /// Probability of leaving the CV model per step.
    SwitchCv,
    /// Probability of leaving the CA model per step.
    SwitchCa,
}

impl FilterField {
    fn get(self, f: &FilterParams, s: &SensorNoiseParams) -> f64 {
        match self {
            FilterField::SigmaA => f.noise.sigma_a,
            FilterField::SigmaJ => f.noise.sigma_j,
            FilterField::SigmaZeta3 => s.sigma_zeta3,
            FilterField::CAlpha => s.c_alpha,
            FilterField::SwitchCv => 1.0 - f.p_stay[0],
            FilterField::SwitchCa => 1.0 - f.p_stay[1],
        }
    }

    fn set(self, f: &mut FilterParams, s: &mut SensorNoiseParams, x: f64) {
        match self {
            FilterField::SigmaA => f.noise.sigma_a = x,
            FilterField::SigmaJ => f.noise.sigma_j = x,
            FilterField::SigmaZeta3 => s.sigma_zeta3 = x,
            FilterField::CAlpha => s.c_alpha = x,
            FilterField::SwitchCv => f.p_stay[0] = 1.0 - x,
            FilterField::SwitchCa => f.p_stay[1] = 1.0 - x,
        }
    }

    fn is_probability(self) -> bool {
        matches!(self, FilterField::SwitchCv | FilterField::SwitchCa)
    }

    /// Unconstrained coordinate: log for scales, logit for probabilities.
    fn encode(self, x: f64) -> f64 {
        if self.is_probability() { (x / (1.0 - x)).ln() } else { x.ln() }
    }

    fn decode(self, u: f64) -> f64 {
        if self.is_probability() { 1.0 / (1.0 + (-u).exp()) } else { u.exp() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterTuneSpec {
    /// Initial filter parameters; fields not listed in `free` stay fixed.
    pub filter: FilterParams,
    pub sensor: SensorNoiseParams,
    pub free: Vec<FilterField>,
    pub c_e: f64,
    pub settings: BfgsSettings,
}

impl Default for FilterTuneSpec {
    fn default() -> Self {
        Self {
            filter: FilterParams::default(),
            sensor: SensorNoiseParams::default(),
            free: vec![
                FilterField::SigmaA,
                FilterField::SigmaJ,
                FilterField::SigmaZeta3,
                FilterField::CAlpha,
                FilterField::SwitchCv,
                FilterField::SwitchCa,
            ],
            c_e: 1.0,
            settings: BfgsSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterTuning {
    pub filter: FilterParams,
    pub sensor: SensorNoiseParams,
    pub initial_objective: f64,
    pub objective: f64,
    pub iterations: usize,
    pub trace: Vec<f64>,
}

/// Runs the IMM over recorded detections, recomputing each measurement
/// covariance from its geometry under `sensor`. Each log starts a fresh
/// filter at its first detection.
pub fn replay(logs: &[Vec<DetectionRecord>], filter: &FilterParams, sensor: &SensorNoiseParams) -> Result<Vec<EstErrorSample>> {
    let mut samples = Vec::new();
    for log in logs {
        let mut belief: Option<(ImmBelief, f64)> = None;
        for rec in log {
            let d = &rec.detection;
            let cov = d.geometry.covariance(sensor)?;
            let b = match belief.take() {
                None => ImmBelief::from_detection(&d.z, &cov, &filter.prior, filter.noise, filter.transition(), filter.mu0)?,
                Some((b, t)) => imm_step(&b, Some((&d.z, &cov)), d.time - t)?,
            };
            samples.push(EstErrorSample {
                time: d.time,
                p_err: b.fused.position() - rec.truth_p,
                v_err: b.fused.velocity() - rec.truth_v,
            });
            belief = Some((b, d.time));
        }
    }
    Ok(samples)
}

/// Minimizes `e_x` of the replayed filter with BFGS over the free fields.
pub fn tune_filter(spec: &FilterTuneSpec, logs: &[Vec<DetectionRecord>]) -> Result<FilterTuning> {
    if logs.iter().all(|l| l.is_empty()) {
        return Err(Error::Tuning("no detections to tune on".into()));
    }
    let decode = |u: &DVector<f64>| {
        let (mut f, mut s) = (spec.filter, spec.sensor);
        for (field, v) in spec.free.iter().zip(u.iter()) {
            field.set(&mut f, &mut s, field.decode(*v));
        }
        (f, s)
    };
    let objective = |u: &DVector<f64>| {
        let (f, s) = decode(u);
        replay(logs, &f, &s).and_then(|e| metric_ex(&e, spec.c_e)).map_or(f64::INFINITY, |m| m.e_x)
    };
    let mut u0 = DVector::zeros(spec.free.len());
    for (i, field) in spec.free.iter().enumerate() {
        let x = field.get(&spec.filter, &spec.sensor);
        let valid = if field.is_probability() { x > 0.0 && x < 1.0 } else { x > 0.0 };
        if !valid {
            return Err(Error::Tuning(format!("initial value {x} of {field:?} is outside its domain")));
        }
        u0[i] = field.encode(x);
    }
    let result = bfgs_minimize(objective, u0, &spec.settings)?;
    let (filter, sensor) = if result.iterations == 0 { (spec.filter, spec.sensor) } else { decode(&result.x) };
    Ok(FilterTuning {
        filter,
        sensor,
        initial_objective: result.trace[0],
        objective: result.f,
        iterations: result.iterations,
        trace: result.trace,
    })
}

/// Simulated detection log of `trajectory` seen from a scripted observer,
/// sampled at the sensor rate over the whole trajectory.
pub fn observe_trajectory<F>(trajectory: &Trajectory, observer: F, sensor: &SensorNoiseParams, seed: u64) -> Vec<DetectionRecord>
where
    F: Fn(f64) -> ObserverState,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (trajectory.duration() * sensor.rate).floor() as usize;
    (0..=n)
        .filter_map(|k| {
            let t = trajectory.t0 + k as f64 / sensor.rate;
            let truth = trajectory.sample(t);
            detect(t, &truth.position, &observer(t), sensor, &mut rng)
                .map(|detection| DetectionRecord { detection, truth_p: truth.position, truth_v: truth.velocity })
        })
        .collect()
}
