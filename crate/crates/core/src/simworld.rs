//! Closed-loop interception simulator: point-mass interceptor with lagged
//! acceleration and drag, trajectory playback, detector and IMM in the
//! loop, detection-loss recovery and net-crossing events.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{extrapolate, imm_step, ImmBelief, ImmNoise, InitPrior};
use crate::guidance::{self, clamp_command, los_state, GuidanceCommand, GuidanceParams};
use crate::mpc::{MpcParams, Planner};
use crate::numcore::{symmetrize, wrap_angle, Mat3, Rotation3, StateVec, Vec3};
use crate::sensing::{detect, Detection, ObserverState, SensorNoiseParams};
use crate::trajlab::Trajectory;

const GRAVITY: f64 = 9.81;
const HOLD_GAIN: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterceptorParams {
    pub v_max: Vec3,
    pub a_max: Vec3,
    pub omega_heading_max: f64,
    /// First-order acceleration time constant (s).
    pub accel_lag: f64,
    /// Linear drag coefficient (1/s).
    pub drag: f64,
    pub sim_dt: f64,
    pub control_rate: f64,
}

impl Default for InterceptorParams {
    fn default() -> Self {
        Self {
            v_max: Vec3::new(8.0, 8.0, 4.0),
            a_max: Vec3::new(4.0, 4.0, 2.0),
            omega_heading_max: 2.0,
            accel_lag: 0.1,
            drag: 0.05,
            sim_dt: 0.005,
            control_rate: 20.0,
        }
    }
}

impl InterceptorParams {
    pub fn validate(&self) -> Result<()> {
        let limits_ok = self.v_max.iter().chain(self.a_max.iter()).all(|v| *v > 0.0);
        if !limits_ok || !(self.omega_heading_max > 0.0) {
            return Err(Error::Parameter("interceptor limits must be positive".into()));
        }
        if !(self.accel_lag >= 0.0 && self.drag >= 0.0 && self.sim_dt > 0.0 && self.control_rate > 0.0) {
            return Err(Error::Parameter("interceptor requires accel_lag ≥ 0, drag ≥ 0, sim_dt > 0 and control_rate > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterceptorState {
    pub p: Vec3,
    pub v: Vec3,
    pub a: Vec3,
    pub heading: f64,
    pub time: f64,
}

impl InterceptorState {
    pub fn at_rest(p: Vec3, heading: f64) -> Self {
        Self { p, v: Vec3::zeros(), a: Vec3::zeros(), heading, time: 0.0 }
    }
}

/// Semi-implicit Euler step of the lagged point-mass model.
pub fn step_interceptor(s: &InterceptorState, cmd: &GuidanceCommand, params: &InterceptorParams, dt: f64) -> InterceptorState {
    let blend = if params.accel_lag > 0.0 { (dt / params.accel_lag).min(1.0) } else { 1.0 };
    let a = s.a + (cmd.a_limited - s.a) * blend;
    let mut v = s.v + (a - s.v * params.drag) * dt;
    for i in 0..3 {
        v[i] = v[i].clamp(-params.v_max[i], params.v_max[i]);
    }
    let p = s.p + v * dt;
    let max_turn = params.omega_heading_max * dt;
    let turn = wrap_angle(cmd.desired_heading - s.heading).clamp(-max_turn, max_turn);
    InterceptorState { p, v, a, heading: wrap_angle(s.heading + turn), time: s.time + dt }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetGeometry {
    pub radius: f64,
    /// Depth of the net plane below the interceptor (m).
    pub offset_below: f64,
    pub rearm_time: f64,
}

impl Default for NetGeometry {
    fn default() -> Self {
        Self { radius: 2.0, offset_below: 1.5, rearm_time: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterceptionEvent {
    pub time: f64,
    /// Horizontal distance of the crossing point from the net centre (m).
    pub accuracy: f64,
    /// Crossing point relative to the interceptor.
    pub crossing_point: Vec3,
}

/// Detects the target passing through the net disc between two relative
/// positions (target minus interceptor) sampled at `now - dt` and `now`.
/// The event time is interpolated to the crossing.
pub fn check_interception(
    prev_rel: &Vec3,
    cur_rel: &Vec3,
    net: &NetGeometry,
    last_event_time: Option<f64>,
    now: f64,
    dt: f64,
) -> Option<InterceptionEvent> {
    let s0 = prev_rel.z + net.offset_below;
    let s1 = cur_rel.z + net.offset_below;
    let crosses = (s0 < 0.0 && s1 >= 0.0) || (s0 > 0.0 && s1 <= 0.0);
    if !crosses {
        return None;
    }
    let w = s0 / (s0 - s1);
    let point = prev_rel + (cur_rel - prev_rel) * w;
    let accuracy = point.x.hypot(point.y);
    let time = now - dt * (1.0 - w);
    if accuracy > net.radius {
        return None;
    }
    if last_event_time.is_some_and(|last| time - last < net.rearm_time) {
        return None;
    }
    Some(InterceptionEvent { time, accuracy, crossing_point: Vec3::new(point.x, point.y, -net.offset_below) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Guidance(GuidanceParams),
    Mpc(MpcParams),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Guidance(g) => g.law.name(),
            Method::Mpc(_) => "mpc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedMode {
    /// Guidance sees the true target state.
    Truth,
    /// Guidance sees the IMM estimate built from simulated detections.
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterParams {
    pub noise: ImmNoise,
    pub prior: InitPrior,
    /// Diagonal of the Markov matrix (probability of staying in CV, CA).
    pub p_stay: [f64; 2],
    pub mu0: [f64; 2],
}

impl Default for FilterParams {
    fn default() -> Self {
        Self { noise: ImmNoise::default(), prior: InitPrior::default(), p_stay: [0.95, 0.95], mu0: [0.5, 0.5] }
    }
}

impl FilterParams {
    pub fn transition(&self) -> Matrix2<f64> {
        let [a, b] = self.p_stay;
        Matrix2::new(a, 1.0 - a, 1.0 - b, b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub trajectory_name: String,
    pub trajectory: Arc<Trajectory>,
    pub start: InterceptorState,
    pub method: Method,
    /// Name reported for the method; defaults to the law name.
    pub label: String,
    pub interceptor: InterceptorParams,
    pub sensor: SensorNoiseParams,
    /// Self-localization stdev of the observer (m).
    pub localization_sigma: f64,
    pub filter: FilterParams,
    pub net: NetGeometry,
    pub feed: FeedMode,
    pub seed: u64,
    pub duration: f64,
    pub lost_timeout: f64,
    pub record_timing: bool,
    pub record_detections: bool,
    pub audit_filter: bool,
}

/// Settings shared by every run of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub interceptor: InterceptorParams,
    pub sensor: SensorNoiseParams,
    pub localization_sigma: f64,
    pub filter: FilterParams,
    pub net: NetGeometry,
    pub feed: FeedMode,
    /// Scenario length; defaults to the trajectory duration.
    pub duration: Option<f64>,
    pub lost_timeout: f64,
    pub record_timing: bool,
    pub record_detections: bool,
    pub audit_filter: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            interceptor: InterceptorParams::default(),
            sensor: SensorNoiseParams::default(),
            localization_sigma: 0.02,
            filter: FilterParams::default(),
            net: NetGeometry::default(),
            feed: FeedMode::Estimate,
            duration: None,
            lost_timeout: 2.0,
            record_timing: false,
            record_detections: false,
            audit_filter: false,
        }
    }
}

impl Scenario {
    pub fn new(trajectory_name: impl Into<String>, trajectory: Arc<Trajectory>, start: InterceptorState, method: Method) -> Self {
        Self::with_config(trajectory_name, trajectory, start, method, &RunConfig::default())
    }

    pub fn with_config(
        trajectory_name: impl Into<String>,
        trajectory: Arc<Trajectory>,
        start: InterceptorState,
        method: Method,
        config: &RunConfig,
    ) -> Self {
        let duration = config.duration.unwrap_or_else(|| trajectory.duration());
        Self {
            trajectory_name: trajectory_name.into(),
            trajectory,
            start,
            label: method.name().to_string(),
            method,
            interceptor: config.interceptor,
            sensor: config.sensor,
            localization_sigma: config.localization_sigma,
            filter: config.filter,
            net: config.net,
            feed: config.feed,
            seed: 0,
            duration,
            lost_timeout: config.lost_timeout,
            record_timing: config.record_timing,
            record_detections: config.record_detections,
            audit_filter: config.audit_filter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.interceptor.validate()?;
        self.sensor.validate()?;
        if !(self.duration > 0.0) {
            return Err(Error::Scenario("duration must be positive".into()));
        }
        if self.trajectory.duration() + 1e-9 < self.duration {
            return Err(Error::Scenario(format!(
                "trajectory {} lasts {:.3} s, shorter than the {:.3} s scenario",
                self.trajectory_name,
                self.trajectory.duration(),
                self.duration
            )));
        }
        if !(self.net.radius > 0.0) || !(self.net.rearm_time >= 0.0) {
            return Err(Error::Scenario("net radius must be positive".into()));
        }
        match &self.method {
            Method::Guidance(g) => g.validate(),
            Method::Mpc(m) => m.validate(),
        }
    }
}

/// Random start near the trajectory's first sample: horizontal distance in
/// `[10, 20]` m at a uniform bearing, 1 to 3 m above the target.
pub fn random_start(trajectory: &Trajectory, seed: u64) -> InterceptorState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rng.random_range(10.0..20.0);
    let bearing = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let dz = rng.random_range(1.0..3.0);
    let p0 = trajectory.positions[0];
    let p = p0 + Vec3::new(r * bearing.cos(), r * bearing.sin(), dz);
    let to_target = p0 - p;
    InterceptorState::at_rest(p, to_target.y.atan2(to_target.x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstErrorSample {
    pub time: f64,
    pub p_err: Vec3,
    pub v_err: Vec3,
}

/// Detection paired with the true target state at the detection time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub detection: Detection,
    pub truth_p: Vec3,
    pub truth_v: Vec3,
}

/// Covariance and simplex statistics over every filter cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterAudit {
    pub cycles: usize,
    /// Smallest eigenvalue of any model or fused covariance, relative to
    /// `1 + λ_max` of the same matrix.
    pub min_relative_eigenvalue: f64,
    pub max_simplex_error: f64,
    pub degenerate_updates: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDescriptor {
    pub trajectory: String,
    pub method: String,
    pub start: Vec3,
    pub seed: u64,
    pub duration: f64,
    pub feed: FeedMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub method: Method,
    pub interceptor: InterceptorParams,
    pub sensor: SensorNoiseParams,
    pub filter: FilterParams,
    pub net: NetGeometry,
    pub lost_timeout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: ScenarioDescriptor,
    pub config: ConfigEcho,
    pub events: Vec<InterceptionEvent>,
    pub est_samples: Vec<EstErrorSample>,
    /// Wall-clock seconds per guidance cycle; empty unless timing is enabled.
    pub compute_times: Vec<f64>,
    pub mpc_failures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_audit: Option<FilterAudit>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detections: Vec<DetectionRecord>,
}

enum Controller {
    Law(GuidanceParams),
    Mpc(Box<Planner>),
}

impl Controller {
    fn new(method: &Method) -> Result<Self> {
        Ok(match method {
            Method::Guidance(g) => Controller::Law(*g),
            Method::Mpc(m) => Controller::Mpc(Box::new(Planner::new(m.clone())?)),
        })
    }

    /// Raw command, or `None` when the solver failed and the previous
    /// command should be kept.
    fn command(&mut self, aim: &Vec3, v_int: &Vec3, target: &StateVec) -> Option<GuidanceCommand> {
        let p_tgt = Vec3::new(target[0], target[1], target[2]);
        let v_tgt = Vec3::new(target[3], target[4], target[5]);
        match self {
            Controller::Law(g) => match los_state(aim, v_int, &p_tgt, &v_tgt, g.eps_v) {
                Ok(los) => Some(guidance::command(&los, g)),
                Err(_) => Some(GuidanceCommand::new(Vec3::zeros(), 0.0)),
            },
            Controller::Mpc(planner) => planner.plan(aim, v_int, target).ok().map(|s| s.command),
        }
    }
}

fn attitude(s: &InterceptorState) -> Vec3 {
    let (sin, cos) = s.heading.sin_cos();
    let ax = cos * s.a.x + sin * s.a.y;
    let ay = -sin * s.a.x + cos * s.a.y;
    Vec3::new((-ay).atan2(GRAVITY), ax.atan2(GRAVITY), s.heading)
}

fn truth_state(tr: &Trajectory, t: f64) -> StateVec {
    let s = tr.sample(t);
    let mut x = StateVec::zeros();
    x.fixed_rows_mut::<3>(0).copy_from(&s.position);
    x.fixed_rows_mut::<3>(3).copy_from(&s.velocity);
    x.fixed_rows_mut::<3>(6).copy_from(&s.acceleration);
    x
}

fn relative_eigenvalue(m: &nalgebra::SMatrix<f64, 9, 9>) -> f64 {
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigenvalues();
    eig.min() / (1.0 + eig.max())
}

fn hold_command(s: &InterceptorState, rotate: bool) -> GuidanceCommand {
    let heading = if rotate { s.heading + 1.0 } else { s.heading };
    GuidanceCommand::new(-s.v * HOLD_GAIN, heading)
}

/// Runs one closed-loop engagement. The report is a pure function of the
/// scenario, except for compute times when timing is enabled.
pub fn run_scenario(sc: &Scenario) -> Result<RunReport> {
    sc.validate()?;
    let ip = &sc.interceptor;
    let dt = ip.sim_dt;
    let tr = sc.trajectory.as_ref();
    let steps = (sc.duration / dt).round() as usize;
    let control_every = ((1.0 / (ip.control_rate * dt)).round() as usize).max(1);
    let sensor_every = ((1.0 / (sc.sensor.rate * dt)).round() as usize).max(1);
    let sigma_t = Mat3::identity() * sc.localization_sigma.powi(2);
    let aim_offset = Vec3::new(0.0, 0.0, sc.net.offset_below);

    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let mut controller = Controller::new(&sc.method)?;
    let mut state = InterceptorState { time: 0.0, ..sc.start };
    let mut cmd = clamp_command(&hold_command(&state, false), &state.v, &ip.v_max, &ip.a_max);
    let mut filter: Option<ImmBelief> = None;
    let mut filter_time = 0.0;
    let mut last_detection: Option<f64> = None;
    let mut angles = attitude(&state);
    let mut omega = Vec3::zeros();

    let mut events: Vec<InterceptionEvent> = Vec::new();
    let mut est_samples = Vec::new();
    let mut compute_times = Vec::new();
    let mut detections = Vec::new();
    let mut mpc_failures = 0;
    let mut audit = FilterAudit { cycles: 0, min_relative_eigenvalue: f64::INFINITY, max_simplex_error: 0.0, degenerate_updates: 0 };

    let mut truth = tr.sample(tr.t0);
    let mut prev_rel = truth.position - state.p;
    for k in 0..steps {
        let t = k as f64 * dt;

        if sc.feed == FeedMode::Estimate && k % sensor_every == 0 {
            let obs = ObserverState {
                position: state.p,
                rotation: Rotation3::from_euler_zyx(angles.z, angles.y, angles.x),
                omega,
                sigma_t,
                heading: state.heading,
            };
            let det = detect(t, &truth.position, &obs, &sc.sensor, &mut rng);
            if let Some(d) = det {
                last_detection = Some(t);
                if sc.record_detections {
                    detections.push(DetectionRecord { detection: d, truth_p: truth.position, truth_v: truth.velocity });
                }
            }
            let fp = &sc.filter;
            filter = match (filter.take(), det) {
                (None, Some(d)) => Some(ImmBelief::from_detection(&d.z, &d.cov, &fp.prior, fp.noise, fp.transition(), fp.mu0)?),
                (Some(b), d) => Some(imm_step(&b, d.as_ref().map(|d| (&d.z, &d.cov)), t - filter_time)?),
                (None, None) => None,
            };
            if let Some(b) = &filter {
                filter_time = t;
                est_samples.push(EstErrorSample {
                    time: t,
                    p_err: b.fused.position() - truth.position,
                    v_err: b.fused.velocity() - truth.velocity,
                });
                if sc.audit_filter {
                    audit.cycles += 1;
                    for cov in [&b.beliefs[0].cov, &b.beliefs[1].cov, &b.fused.cov] {
                        audit.min_relative_eigenvalue = audit.min_relative_eigenvalue.min(relative_eigenvalue(cov));
                    }
                    let simplex = (b.mu[0] + b.mu[1] - 1.0).abs().max(-b.mu[0].min(b.mu[1]));
                    audit.max_simplex_error = audit.max_simplex_error.max(simplex);
                    audit.degenerate_updates = b.degenerate_updates;
                }
            }
        }

        if k % control_every == 0 {
            let aim = state.p - aim_offset;
            let target = match sc.feed {
                FeedMode::Truth => Some(truth_state(tr, tr.t0 + t)),
                FeedMode::Estimate => filter.as_ref().map(|b| extrapolate(&b.fused.mean, t - filter_time)),
            };
            let lost = sc.feed == FeedMode::Estimate && last_detection.is_none_or(|td| t - td > sc.lost_timeout);
            let searching = lost && sc.sensor.fov_azimuth_halfwidth.is_some();
            let raw = match target {
                Some(x) if !searching => {
                    let started = sc.record_timing.then(Instant::now);
                    let out = controller.command(&aim, &state.v, &x);
                    if let Some(s) = started {
                        compute_times.push(s.elapsed().as_secs_f64());
                    }
                    match out {
                        Some(c) => Some(c),
                        None => {
                            mpc_failures += 1;
                            None
                        }
                    }
                }
                _ => Some(hold_command(&state, searching)),
            };
            if let Some(raw) = raw {
                cmd = raw;
            }
            cmd = clamp_command(&cmd, &state.v, &ip.v_max, &ip.a_max);
        }

        state = step_interceptor(&state, &cmd, ip, dt);
        let next_angles = attitude(&state);
        let mut rate = (next_angles - angles) / dt;
        rate.z = wrap_angle(next_angles.z - angles.z) / dt;
        omega = rate;
        angles = next_angles;

        truth = tr.sample(tr.t0 + t + dt);
        let cur_rel = truth.position - state.p;
        if let Some(ev) = check_interception(&prev_rel, &cur_rel, &sc.net, events.last().map(|e| e.time), t + dt, dt) {
            events.push(ev);
        }
        prev_rel = cur_rel;
    }

    Ok(RunReport {
        scenario: ScenarioDescriptor {
            trajectory: sc.trajectory_name.clone(),
            method: sc.label.clone(),
            start: sc.start.p,
            seed: sc.seed,
            duration: sc.duration,
            feed: sc.feed,
        },
        config: ConfigEcho {
            method: sc.method.clone(),
            interceptor: sc.interceptor,
            sensor: sc.sensor,
            filter: sc.filter,
            net: sc.net,
            lost_timeout: sc.lost_timeout,
        },
        events,
        est_samples,
        compute_times,
        mpc_failures,
        filter_audit: (sc.audit_filter && audit.cycles > 0).then_some(audit),
        detections,
    })
}
