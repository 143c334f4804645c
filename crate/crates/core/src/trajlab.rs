//! Target trajectories: uniformly sampled position tracks, their statistics,
//! a random spline generator, a constant-speed figure-eight generator and
//! the `t,x,y,z` text format.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Vec3;

const DT_TOLERANCE: f64 = 1e-6;

/// Uniformly sampled target positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub positions: Vec<Vec3>,
}

/// Interpolated kinematic sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajSample {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, positions: Vec<Vec3>) -> Result<Self> {
        if !(dt > 0.0) || !t0.is_finite() {
            return Err(Error::Parameter(format!("trajectory dt must be positive, got {dt}")));
        }
        if positions.len() < 3 {
            return Err(Error::Parameter("trajectory needs at least 3 samples".into()));
        }
        if positions.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Parameter("trajectory positions must be finite".into()));
        }
        Ok(Self { t0, dt, positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn duration(&self) -> f64 {
        (self.len() - 1) as f64 * self.dt
    }

    pub fn end_time(&self) -> f64 {
        self.t0 + self.duration()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// Central difference; one-sided at the ends.
    pub fn velocity(&self, i: usize) -> Vec3 {
        let n = self.len();
        let p = &self.positions;
        match i {
            0 => (p[1] - p[0]) / self.dt,
            _ if i + 1 >= n => (p[n - 1] - p[n - 2]) / self.dt,
            _ => (p[i + 1] - p[i - 1]) / (2.0 * self.dt),
        }
    }

    /// Central second difference; end samples copy their neighbour.
    pub fn acceleration(&self, i: usize) -> Vec3 {
        let n = self.len();
        let j = i.clamp(1, n - 2);
        let p = &self.positions;
        (p[j + 1] - p[j] * 2.0 + p[j - 1]) / (self.dt * self.dt)
    }

    /// Linear interpolation of position, velocity and acceleration; clamps
    /// outside the sampled interval.
    pub fn sample(&self, t: f64) -> TrajSample {
        let s = ((t - self.t0) / self.dt).clamp(0.0, (self.len() - 1) as f64);
        let i = (s.floor() as usize).min(self.len() - 2);
        let w = s - i as f64;
        let lerp = |a: Vec3, b: Vec3| a * (1.0 - w) + b * w;
        TrajSample {
            position: lerp(self.positions[i], self.positions[i + 1]),
            velocity: lerp(self.velocity(i), self.velocity(i + 1)),
            acceleration: lerp(self.acceleration(i), self.acceleration(i + 1)),
        }
    }

    pub fn translated(&self, offset: &Vec3) -> Self {
        Self { t0: self.t0, dt: self.dt, positions: self.positions.iter().map(|p| p + offset).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajStats {
    pub mean_speed: f64,
    pub max_speed: f64,
    pub mean_accel: f64,
    pub max_accel: f64,
    pub duration: f64,
    /// Bounding-box extents.
    pub extent: Vec3,
}

/// Speed and acceleration statistics over interior samples.
pub fn stats(tr: &Trajectory) -> TrajStats {
    let n = tr.len();
    let interior = 1..n - 1;
    let m = (n - 2) as f64;
    let speeds: Vec<f64> = interior.clone().map(|i| tr.velocity(i).norm()).collect();
    let accels: Vec<f64> = interior.map(|i| tr.acceleration(i).norm()).collect();
    let mut lo = tr.positions[0];
    let mut hi = tr.positions[0];
    for p in &tr.positions {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    TrajStats {
        mean_speed: speeds.iter().sum::<f64>() / m,
        max_speed: speeds.iter().cloned().fold(0.0, f64::max),
        mean_accel: accels.iter().sum::<f64>() / m,
        max_accel: accels.iter().cloned().fold(0.0, f64::max),
        duration: tr.duration(),
        extent: hi - lo,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomSpec {
    pub duration: f64,
    /// Arena extents, centred on `center`.
    pub arena: Vec3,
    pub center: Vec3,
    pub mean_speed: f64,
    pub max_speed: f64,
    pub max_accel: f64,
    pub dt: f64,
}

impl Default for RandomSpec {
    fn default() -> Self {
        Self {
            duration: 100.0,
            arena: Vec3::new(50.0, 50.0, 10.0),
            center: Vec3::new(0.0, 0.0, 10.0),
            mean_speed: 4.1,
            max_speed: 8.0,
            max_accel: 11.0,
            dt: 0.02,
        }
    }
}

impl RandomSpec {
    fn validate(&self) -> Result<()> {
        let ok = self.duration > 0.0
            && self.dt > 0.0
            && self.arena.iter().all(|e| *e >= 0.0)
            && self.mean_speed >= 0.0
            && self.max_speed >= self.mean_speed
            && self.max_accel > 0.0
            && self.duration >= 2.0 * self.dt;
        if ok {
            Ok(())
        } else {
            Err(Error::Generation(format!("infeasible random trajectory spec {self:?}")))
        }
    }
}

/// Centripetal Catmull-Rom segment from `p1` to `p2`, `s ∈ [0, 1]`.
fn catmull_rom(p0: &Vec3, p1: &Vec3, p2: &Vec3, p3: &Vec3, s: f64) -> Vec3 {
    let knot = |a: &Vec3, b: &Vec3| (b - a).norm().sqrt().max(1e-6);
    let t0 = 0.0;
    let t1 = t0 + knot(p0, p1);
    let t2 = t1 + knot(p1, p2);
    let t3 = t2 + knot(p2, p3);
    let t = t1 + s * (t2 - t1);
    let a1 = p0 * ((t1 - t) / (t1 - t0)) + p1 * ((t - t0) / (t1 - t0));
    let a2 = p1 * ((t2 - t) / (t2 - t1)) + p2 * ((t - t1) / (t2 - t1));
    let a3 = p2 * ((t3 - t) / (t3 - t2)) + p3 * ((t - t2) / (t3 - t2));
    let b1 = a1 * ((t2 - t) / (t2 - t0)) + a2 * ((t - t0) / (t2 - t0));
    let b2 = a2 * ((t3 - t) / (t3 - t1)) + a3 * ((t - t1) / (t3 - t1));
    b1 * ((t2 - t) / (t2 - t1)) + b2 * ((t - t1) / (t2 - t1))
}

const SUBSAMPLES: usize = 400;

/// Densely sampled path with cumulative arc length and curvature.
struct DensePath {
    points: Vec<Vec3>,
    arc: Vec<f64>,
    curvature: Vec<f64>,
}

impl DensePath {
    fn from_waypoints(w: &[Vec3]) -> Self {
        let mut points = Vec::with_capacity((w.len() - 3) * SUBSAMPLES + 1);
        for seg in 0..w.len() - 3 {
            for k in 0..SUBSAMPLES {
                points.push(catmull_rom(&w[seg], &w[seg + 1], &w[seg + 2], &w[seg + 3], k as f64 / SUBSAMPLES as f64));
            }
        }
        points.push(w[w.len() - 2]);
        points.dedup_by(|a, b| (*a - *b).norm() < 1e-9);
        let mut arc = vec![0.0; points.len()];
        for i in 1..points.len() {
            arc[i] = arc[i - 1] + (points[i] - points[i - 1]).norm();
        }
        let mut curvature = vec![0.0; points.len()];
        for i in 1..points.len() - 1 {
            // Menger curvature of three consecutive points.
            let (a, b, c) = (points[i - 1], points[i], points[i + 1]);
            let cross = (b - a).cross(&(c - b)).norm();
            let denom = (b - a).norm() * (c - b).norm() * (c - a).norm();
            curvature[i] = if denom > 0.0 { 2.0 * cross / denom } else { 0.0 };
        }
        let n = curvature.len();
        curvature[0] = curvature[1.min(n - 1)];
        curvature[n - 1] = curvature[n.saturating_sub(2)];
        Self { points, arc, curvature }
    }

    fn position_at(&self, l: f64) -> Vec3 {
        let i = self.arc.partition_point(|a| *a <= l).clamp(1, self.arc.len() - 1);
        let (a, b) = (self.arc[i - 1], self.arc[i]);
        let w = if b > a { ((l - a) / (b - a)).clamp(0.0, 1.0) } else { 0.0 };
        self.points[i - 1] * (1.0 - w) + self.points[i] * w
    }
}

fn moving_average(v: &[f64], half: usize) -> Vec<f64> {
    let n = v.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + v[i];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Speed profile along the dense path: per-waypoint targets scaled by
/// `gain`, capped by lateral and longitudinal acceleration budgets.
fn speed_profile(path: &DensePath, targets: &[f64], gain: f64, spec: &RandomSpec) -> Vec<f64> {
    let n = path.points.len();
    let a_lat = 0.55 * spec.max_accel;
    let a_long = 0.35 * spec.max_accel;
    let v_cap = 0.95 * spec.max_speed;
    let base: Vec<f64> = (0..n)
        .map(|i| {
            let seg = (i / SUBSAMPLES).min(targets.len() - 2);
            let w = (i % SUBSAMPLES) as f64 / SUBSAMPLES as f64;
            gain * (targets[seg] * (1.0 - w) + targets[seg + 1] * w)
        })
        .collect();
    let base = moving_average(&base, SUBSAMPLES / 4);
    let mut v: Vec<f64> = (0..n)
        .map(|i| {
            let lateral = (a_lat / path.curvature[i].max(1e-9)).sqrt();
            base[i].min(lateral).min(v_cap).max(0.05)
        })
        .collect();
    for i in 1..n {
        let ds = path.arc[i] - path.arc[i - 1];
        v[i] = v[i].min((v[i - 1] * v[i - 1] + 2.0 * a_long * ds).sqrt());
    }
    for i in (0..n - 1).rev() {
        let ds = path.arc[i + 1] - path.arc[i];
        v[i] = v[i].min((v[i + 1] * v[i + 1] + 2.0 * a_long * ds).sqrt());
    }
    v
}

/// Travel time at each dense sample under the speed profile.
fn travel_times(path: &DensePath, v: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; v.len()];
    for i in 1..v.len() {
        let ds = path.arc[i] - path.arc[i - 1];
        t[i] = t[i - 1] + 2.0 * ds / (v[i] + v[i - 1]);
    }
    t
}

fn resample(path: &DensePath, times: &[f64], v: &[f64], spec: &RandomSpec) -> Option<Vec<Vec3>> {
    let samples = (spec.duration / spec.dt).round() as usize + 1;
    if *times.last()? < spec.duration {
        return None;
    }
    let mut out = Vec::with_capacity(samples);
    for k in 0..samples {
        let t = k as f64 * spec.dt;
        let i = times.partition_point(|x| *x <= t).clamp(1, times.len() - 1);
        // constant acceleration between dense samples
        let (ta, tb) = (times[i - 1], times[i]);
        let h = tb - ta;
        let tau = (t - ta).clamp(0.0, h);
        let acc = if h > 0.0 { (v[i] - v[i - 1]) / h } else { 0.0 };
        let l = path.arc[i - 1] + v[i - 1] * tau + 0.5 * acc * tau * tau;
        out.push(path.position_at(l));
    }
    Some(out)
}

fn draw_waypoint(rng: &mut ChaCha8Rng, spec: &RandomSpec) -> Vec3 {
    let mut p = spec.center;
    for k in 0..3 {
        let half = 0.5 * spec.arena[k];
        if half > 0.0 {
            p[k] += rng.random_range(-half..half);
        }
    }
    p
}

fn attempt(rng: &mut ChaCha8Rng, spec: &RandomSpec) -> Option<Trajectory> {
    let arena_scale = spec.arena.norm().max(1.0);
    let needed = 1.6 * spec.mean_speed * spec.duration;
    let mut waypoints = vec![draw_waypoint(rng, spec), draw_waypoint(rng, spec)];
    let mut approx_len = 0.0;
    while approx_len < needed + 2.0 * arena_scale {
        let next = draw_waypoint(rng, spec);
        approx_len += (next - waypoints[waypoints.len() - 1]).norm();
        waypoints.push(next);
    }
    waypoints.push(draw_waypoint(rng, spec));
    waypoints.push(draw_waypoint(rng, spec));
    let targets: Vec<f64> = (0..waypoints.len() - 2).map(|_| spec.mean_speed * rng.random_range(0.6..1.4)).collect();
    let path = DensePath::from_waypoints(&waypoints);

    let mut gain = 1.0;
    for _ in 0..6 {
        let v = speed_profile(&path, &targets, gain, spec);
        let times = travel_times(&path, &v);
        let Some(end) = times.iter().position(|t| *t >= spec.duration) else {
            return None;
        };
        let mean = path.arc[end] / times[end];
        let ratio = spec.mean_speed / mean;
        if (ratio - 1.0).abs() < 0.02 {
            let positions = resample(&path, &times, &v, spec)?;
            return Trajectory::new(0.0, spec.dt, positions).ok();
        }
        gain *= ratio;
    }
    let v = speed_profile(&path, &targets, gain, spec);
    let times = travel_times(&path, &v);
    Trajectory::new(0.0, spec.dt, resample(&path, &times, &v, spec)?).ok()
}

fn accepts(st: &TrajStats, spec: &RandomSpec) -> bool {
    (st.mean_speed - spec.mean_speed).abs() <= 0.15 * spec.mean_speed
        && st.max_speed <= spec.max_speed
        && st.max_accel <= spec.max_accel
}

/// Smooth random trajectory through uniformly drawn waypoints, rejection
/// sampled until its statistics satisfy the spec. Deterministic per seed.
pub fn gen_random(seed: u64, spec: &RandomSpec) -> Result<Trajectory> {
    spec.validate()?;
    let samples = (spec.duration / spec.dt).round() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if spec.mean_speed == 0.0 {
        let p = draw_waypoint(&mut rng, spec);
        return Trajectory::new(0.0, spec.dt, vec![p; samples.max(3)]);
    }
    let mut last = None;
    for _ in 0..100 {
        if let Some(tr) = attempt(&mut rng, spec) {
            let st = stats(&tr);
            if accepts(&st, spec) {
                return Ok(tr);
            }
            last = Some(st);
        }
    }
    Err(Error::Generation(format!("100 candidates rejected; last candidate statistics {last:?}")))
}

/// Gerono figure-eight spanning `length` along x and `width` along y at
/// constant `speed`, re-parameterized by arc length.
pub fn gen_lemniscate(width: f64, length: f64, speed: f64, duration: f64, dt: f64) -> Result<Trajectory> {
    if [width, length, speed, duration, dt].iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Parameter("lemniscate arguments must be positive".into()));
    }
    let curve = |u: f64| Vec3::new(0.5 * length * u.sin(), 0.5 * width * (2.0 * u).sin(), 0.0);
    let m = 200_000;
    let step = std::f64::consts::TAU / m as f64;
    let mut arc = vec![0.0; m + 1];
    let mut prev = curve(0.0);
    for (k, a) in arc.iter_mut().enumerate().skip(1) {
        let p = curve(k as f64 * step);
        *a = (p - prev).norm();
        prev = p;
    }
    for k in 1..=m {
        arc[k] += arc[k - 1];
    }
    let loop_len = arc[m];
    let samples = (duration / dt).round() as usize + 1;
    let positions = (0..samples.max(3))
        .map(|i| {
            let l = (speed * i as f64 * dt) % loop_len;
            let k = arc.partition_point(|a| *a <= l).clamp(1, m);
            let w = (l - arc[k - 1]) / (arc[k] - arc[k - 1]);
            curve((k as f64 - 1.0 + w) * step)
        })
        .collect();
    Trajectory::new(0.0, dt, positions)
}

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    t: f64,
    x: f64,
    y: f64,
    z: f64,
}

/// Parses the `t,x,y,z` format; rejects non-uniform sampling.
pub fn parse(text: &str) -> Result<Trajectory> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t", "x", "y", "z"] {
        return Err(Error::Parse { line: 1, msg: format!("expected header t,x,y,z, got {}", headers.iter().collect::<Vec<_>>().join(",")) });
    }
    let mut times = Vec::new();
    let mut positions = Vec::new();
    for rec in reader.deserialize::<Row>() {
        let row = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = times.len() + 2;
        if ![row.t, row.x, row.y, row.z].iter().all(|v| v.is_finite()) {
            return Err(Error::Parse { line, msg: "non-finite value".into() });
        }
        times.push(row.t);
        positions.push(Vec3::new(row.x, row.y, row.z));
    }
    if times.is_empty() {
        return Err(Error::Parse { line: 1, msg: "no samples".into() });
    }
    if times.len() < 3 {
        return Err(Error::Parse { line: times.len() + 1, msg: "at least 3 samples required".into() });
    }
    let t0 = times[0];
    let dt = times[1] - t0;
    if !(dt > 0.0) {
        return Err(Error::Parse { line: 3, msg: "time must increase".into() });
    }
    for (i, t) in times.iter().enumerate() {
        if (t - (t0 + i as f64 * dt)).abs() > DT_TOLERANCE {
            return Err(Error::Parse { line: i + 2, msg: format!("non-uniform sample time {t}") });
        }
    }
    Trajectory::new(t0, dt, positions)
}

pub fn load(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse(&text)
}

pub fn to_csv(tr: &Trajectory) -> String {
    let mut out = String::from("t,x,y,z\n");
    for (i, p) in tr.positions.iter().enumerate() {
        out.push_str(&format!("{},{},{},{}\n", tr.time(i), p.x, p.y, p.z));
    }
    out
}

pub fn save(path: &Path, tr: &Trajectory) -> Result<()> {
    std::fs::write(path, to_csv(tr)).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}
