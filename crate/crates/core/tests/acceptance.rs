//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! nonzero if a criterion fails that is not listed in `KNOWN_FAILURES`.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use intercept_core::bench::{
    aggregate, batch_scenarios, metric_ex, observe_trajectory, replay, run_batch, to_json, tune_filter, BenchTable,
    FilterField, FilterTuneSpec,
};
use intercept_core::estimation::{
    build_model, imm_step, kf_predict, kf_update, GaussianBelief, ImmBelief, ImmNoise, InitPrior, ModelKind, ModelSpec,
};
use intercept_core::guidance::{epn, los_state, lpn, GuidanceParams, Law, LosState};
use intercept_core::mpc::{condense, solve_qp, MpcParams, MpcProblem, QpSettings};
use intercept_core::numcore::{Mat3, Rotation3, StateVec, Vec3};
use intercept_core::sensing::{ObserverState, SensorNoiseParams};
use intercept_core::simworld::{
    random_start, run_scenario, FeedMode, FilterParams, InterceptorState, Method, RunConfig, RunReport, Scenario,
};
use intercept_core::trajlab::{gen_lemniscate, gen_random, load, stats, RandomSpec, Trajectory};
use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that fail on this implementation; analysed in the project notes.
const KNOWN_FAILURES: &[&str] = &["4a"];

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, pass, detail }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn random_vec(rng: &mut ChaCha8Rng, r: f64) -> Vec3 {
    Vec3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
}

fn criterion_1() -> Vec<Outcome> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w0 = GuidanceParams { weight: 0.0, ..GuidanceParams::epn() };
    let l = GuidanceParams { gain: w0.gain, ..GuidanceParams::lpn() };
    let mut worst = 0.0f64;
    let mut count = 0;
    while count < 100_000 {
        let Ok(los) = los_state(&random_vec(&mut rng, 50.0), &random_vec(&mut rng, 8.0), &random_vec(&mut rng, 50.0), &random_vec(&mut rng, 8.0), w0.eps_v)
        else {
            continue;
        };
        worst = worst.max((epn(&los, &w0).a_cmd - lpn(&los, &l).a_cmd).amax());
        count += 1;
    }
    let secs = started.elapsed().as_secs_f64();
    vec![outcome("1", worst <= 1e-12 && secs < 1.0, format!("max |epn(W=0) - lpn| = {worst:e} over 1e5 states in {secs:.3} s"))]
}

fn criterion_2() -> Vec<Outcome> {
    let mut cases: Vec<(Vec3, Vec3)> = vec![
        (Vec3::new(10.0, 0.0, 0.0), Vec3::new(-2.0, 0.0, 0.0)),
        (Vec3::new(6.0, 8.0, 0.0), Vec3::new(-3.0, -4.0, 0.0)),
        (Vec3::new(4.0, 6.0, 12.0), Vec3::new(-2.0, -3.0, -6.0)),
        (Vec3::new(0.0, -5.0, 0.0), Vec3::new(0.0, 0.5, 0.0)),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tried = 0;
    while cases.len() < 2000 && tried < 200_000 {
        tried += 1;
        let dp = random_vec(&mut rng, 30.0);
        let dv = -dp.normalize() * rng.random_range(0.5..10.0);
        let los = los_state(&Vec3::zeros(), &Vec3::zeros(), &dp, &dv, 1e-3).unwrap();
        if los.dp + los.dv * los.t_go == Vec3::zeros() {
            cases.push((dp, dv));
        }
    }
    let w = GuidanceParams::epn();
    let w0 = GuidanceParams { weight: 0.0, ..w };
    let mut all_zero = true;
    for (dp, dv) in &cases {
        let los: LosState = los_state(&Vec3::zeros(), &Vec3::zeros(), dp, dv, 1e-3).unwrap();
        assert_eq!(los.dp + los.dv * los.t_go, Vec3::zeros());
        let blended = epn(&los, &w).a_cmd;
        all_zero &= lpn(&los, &GuidanceParams::lpn()).a_cmd == Vec3::zeros()
            && epn(&los, &w0).a_cmd == Vec3::zeros()
            && blended == los.dp * w.weight * w.gain;
    }
    vec![outcome("2", all_zero, format!("exact zero LPN term on {} exact collision-course states", cases.len()))]
}

fn line_trajectory(speed: f64, seconds: f64) -> Arc<Trajectory> {
    let n = (seconds / 0.02).round() as usize + 1;
    let dir = Vec3::new(0.8, 0.6, 0.0);
    Arc::new(Trajectory::new(0.0, 0.02, (0..n).map(|i| Vec3::new(0.0, 0.0, 10.0) + dir * (speed * 0.02 * i as f64)).collect()).unwrap())
}

/// Rest start 15-25 m from the line's origin, within 60 degrees of its
/// direction of travel, so the target approaches the interceptor.
fn ahead_of_line(seed: u64) -> InterceptorState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rng.random_range(15.0..25.0);
    let bearing = 0.6f64.atan2(0.8) + rng.random_range(-1.0..1.0) * std::f64::consts::FRAC_PI_3;
    let p = Vec3::new(r * bearing.cos(), r * bearing.sin(), 10.0 + rng.random_range(1.0..3.0));
    InterceptorState::at_rest(p, bearing + std::f64::consts::PI)
}

fn criterion_3() -> Vec<Outcome> {
    let started = Instant::now();
    let tr = line_trajectory(4.0, 40.0);
    let mut summary = Vec::new();
    for (name, params) in [("lpn", GuidanceParams::lpn()), ("epn", GuidanceParams::epn())] {
        let firsts: Vec<f64> = (0..10)
            .map(|seed| {
                let mut sc = Scenario::new("line", tr.clone(), ahead_of_line(seed), Method::Guidance(params));
                sc.feed = FeedMode::Truth;
                sc.seed = seed;
                run_scenario(&sc).unwrap().events.first().map_or(f64::INFINITY, |e| e.accuracy)
            })
            .collect();
        let mean = firsts.iter().sum::<f64>() / firsts.len() as f64;
        summary.push((name, mean, firsts.iter().copied().fold(0.0, f64::max)));
    }
    let secs = started.elapsed().as_secs_f64();
    vec![outcome(
        "3",
        summary.iter().all(|(_, mean, _)| *mean <= 0.10) && secs < 5.0,
        format!(
            "mean first-attempt accuracy over 10 starts ahead of the target: {} ({secs:.2} s)",
            summary.iter().map(|(n, m, w)| format!("{n} {m:.4} m (worst {w:.4})")).collect::<Vec<_>>().join(", ")
        ),
    )]
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.3}"))
}

fn criterion_4() -> Vec<Outcome> {
    let started = Instant::now();
    let spec = RandomSpec::default();
    let trajectories: Vec<(String, Arc<Trajectory>)> =
        (0..100).map(|k| (format!("gen_{k:03}"), Arc::new(gen_random(1000 + k, &spec).unwrap()))).collect();
    let methods: Vec<(String, Method)> = vec![
        ("pp".into(), Method::Guidance(GuidanceParams::pp())),
        ("lpn".into(), Method::Guidance(GuidanceParams::lpn())),
        ("gpn1".into(), Method::Guidance(GuidanceParams::gpn1())),
        ("gpn2".into(), Method::Guidance(GuidanceParams::gpn2())),
        ("epn".into(), Method::Guidance(GuidanceParams::epn())),
        ("mpc".into(), Method::Mpc(MpcParams::default())),
    ];
    let config = RunConfig { feed: FeedMode::Truth, ..RunConfig::default() };
    let scenarios = batch_scenarios(&config, &methods, &trajectories, 5, 2024);
    let reports = run_batch(&scenarios, jobs()).unwrap();
    let table: BenchTable = aggregate(&reports);
    let secs = started.elapsed().as_secs_f64();
    for r in &table.rows {
        println!(
            "    {:>5}: {:5.1}% intercepted, {:6.2} per trajectory, first at {} s, accuracy {} m (first {} m)",
            r.method,
            r.pct_trajectories_with_interception,
            r.mean_interceptions_per_trajectory,
            fmt_opt(r.mean_time_to_first),
            fmt_opt(r.mean_accuracy_all),
            fmt_opt(r.mean_accuracy_first)
        );
    }
    let row = |m: &str| table.row(m).unwrap();
    let (e, g, l) = (row("epn"), row("gpn2"), row("lpn"));
    let a = e.mean_interceptions_per_trajectory > g.mean_interceptions_per_trajectory
        && g.mean_interceptions_per_trajectory > l.mean_interceptions_per_trajectory;
    let ratio = e.mean_time_to_first.unwrap_or(f64::INFINITY) / l.mean_time_to_first.unwrap_or(f64::NAN);
    let pp_acc = row("pp").mean_accuracy_all.unwrap_or(f64::NAN);
    let c = table.rows.iter().filter(|r| r.method != "pp").all(|r| r.mean_accuracy_all.is_none_or(|x| x < pp_acc));
    vec![
        outcome(
            "4a",
            a,
            format!(
                "interceptions per trajectory epn {:.2} > gpn2 {:.2} > lpn {:.2}",
                e.mean_interceptions_per_trajectory, g.mean_interceptions_per_trajectory, l.mean_interceptions_per_trajectory
            ),
        ),
        outcome("4b", ratio <= 0.5, format!("time-to-first epn/lpn = {ratio:.3}")),
        outcome("4c", c, format!("pp accuracy {pp_acc:.3} m is the worst")),
        outcome("4t", secs < 900.0, format!("{} runs in {secs:.0} s on {} worker(s)", reports.len(), jobs())),
    ]
}

/// Alternating 10 s constant-velocity and 10 s constant-acceleration
/// segments; each acceleration segment steers toward a fresh random velocity.
fn mode_switching(seed: u64, seconds: f64) -> Trajectory {
    let dt = 0.01;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Vec3::new(0.0, 0.0, 10.0);
    let mut v = Vec3::new(3.0, 0.0, 0.0);
    let mut a = Vec3::zeros();
    let seg = (10.0 / dt) as usize;
    let mut pts = vec![p];
    for k in 0..(seconds / dt) as usize {
        if k % seg == 0 {
            a = if (k / seg) % 2 == 1 {
                let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let s: f64 = rng.random_range(2.0..5.0);
                (Vec3::new(s * th.cos(), s * th.sin(), rng.random_range(-0.5..0.5)) - v) / 10.0
            } else {
                Vec3::zeros()
            };
        }
        p += v * dt + a * (0.5 * dt * dt);
        v += a * dt;
        pts.push(p);
    }
    Trajectory::new(0.0, dt, pts).unwrap()
}

/// Observer circling the target at 20 m while oscillating about all three
/// body axes with peak rate `peak_rate`.
fn observer(tr: Trajectory, peak_rate: f64) -> impl Fn(f64) -> ObserverState {
    move |t: f64| {
        let target = tr.sample(t).position;
        let th = 0.2 * t;
        let position = target + Vec3::new(20.0 * th.cos(), 20.0 * th.sin(), 2.0);
        let rel = target - position;
        let w = 2.0 * std::f64::consts::PI * 0.6;
        let amp = peak_rate / w;
        let angles = |t: f64| {
            Vec3::new(amp * (1.3 * w * t).sin() / 1.3, amp * (0.8 * w * t + 1.0).sin() / 0.8, amp * (w * t).sin())
        };
        let h = 1e-5;
        let omega = (angles(t + h) - angles(t - h)) / (2.0 * h);
        let e = angles(t);
        let yaw = rel.y.atan2(rel.x) + e.z;
        ObserverState {
            position,
            rotation: Rotation3::from_euler_zyx(yaw, e.y, e.x),
            omega,
            sigma_t: Mat3::identity() * 4e-4,
            heading: yaw,
        }
    }
}

fn sensor_truth() -> SensorNoiseParams {
    SensorNoiseParams { sigma_l: 0.03, sigma_zeta3: 0.03, c_alpha: 0.005, max_range: 1e3, ..SensorNoiseParams::default() }
}

fn logs(peak_rate: f64) -> Vec<Vec<intercept_core::simworld::DetectionRecord>> {
    (0..3).map(|s| {
        let tr = mode_switching(s, 120.0);
        observe_trajectory(&tr, observer(tr.clone(), peak_rate), &sensor_truth(), 50 + s)
    })
    .collect()
}

fn tuned(filter: FilterParams, c_alpha: f64, free: Vec<FilterField>, data: &[Vec<intercept_core::simworld::DetectionRecord>]) -> f64 {
    let sensor = SensorNoiseParams { sigma_zeta3: 0.1, c_alpha, ..sensor_truth() };
    let spec = FilterTuneSpec { filter, sensor, free, ..FilterTuneSpec::default() };
    let t = tune_filter(&spec, data).unwrap();
    let check = metric_ex(&replay(data, &t.filter, &t.sensor).unwrap(), 1.0).unwrap().e_x;
    assert!((check - t.objective).abs() <= 1e-12);
    t.objective
}

fn criteria_5_and_6() -> Vec<Outcome> {
    use FilterField::*;
    let imm = FilterParams::default();
    let cv = FilterParams { p_stay: [1.0, 1.0], mu0: [1.0, 0.0], ..imm };
    let ca = FilterParams { p_stay: [1.0, 1.0], mu0: [0.0, 1.0], ..imm };
    let all = || vec![SigmaA, SigmaJ, SigmaZeta3, CAlpha, SwitchCv, SwitchCa];
    let no_alpha = || vec![SigmaA, SigmaJ, SigmaZeta3, SwitchCv, SwitchCa];

    let started = Instant::now();
    let maneuvering = logs(2.0);
    let e_imm = tuned(imm, 0.01, all(), &maneuvering);
    let e_cv = tuned(cv, 0.01, vec![SigmaA, SigmaZeta3, CAlpha], &maneuvering);
    let e_ca = tuned(ca, 0.01, vec![SigmaJ, SigmaZeta3, CAlpha], &maneuvering);
    let secs5 = started.elapsed().as_secs_f64();
    let e_static = tuned(imm, 0.0, no_alpha(), &maneuvering);

    let hovering = logs(0.05);
    let h_imm = tuned(imm, 0.01, all(), &hovering);
    let h_static = tuned(imm, 0.0, no_alpha(), &hovering);
    let hover_gap = (h_imm - h_static).abs() / h_static;

    vec![
        outcome(
            "5",
            e_imm <= 0.98 * e_cv && e_imm <= 0.98 * e_ca && secs5 < 120.0,
            format!("tuned e_x imm {e_imm:.4}, cv {e_cv:.4}, ca {e_ca:.4} ({secs5:.0} s)"),
        ),
        outcome(
            "6",
            e_imm <= 0.9 * e_static && hover_gap < 0.01,
            format!(
                "maneuvering: motion-dependent {e_imm:.4} vs static {e_static:.4} ({:.1}% lower); hovering gap {:.3}%",
                100.0 * (1.0 - e_imm / e_static),
                100.0 * hover_gap
            ),
        ),
    ]
}

fn criterion_7() -> Vec<Outcome> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let target = |rng: &mut ChaCha8Rng, r: f64| {
        let mut x = StateVec::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&random_vec(rng, r));
        x.fixed_rows_mut::<3>(3).copy_from(&random_vec(rng, 3.0));
        x.fixed_rows_mut::<3>(6).copy_from(&random_vec(rng, 1.0));
        x
    };
    let tight = QpSettings { tol: 1e-10, max_iter: 20000, ..QpSettings::default() };

    let mut worst_a = 0.0f64;
    for _ in 0..20 {
        let params = MpcParams {
            horizon: rng.random_range(2..20),
            v_max: Vec3::repeat(1e9),
            a_max: Vec3::repeat(1e9),
            ..MpcParams::default()
        };
        let problem = MpcProblem { params, p_int: random_vec(&mut rng, 5.0), v_int: random_vec(&mut rng, 2.0), target: target(&mut rng, 10.0) };
        let qp = condense(&problem).unwrap();
        let sol = solve_qp(&qp, &tight).unwrap();
        let direct = qp.p.clone().cholesky().unwrap().solve(&(-&qp.q));
        worst_a = worst_a.max((sol.x - direct).amax());
    }

    let mut worst_b = 0.0f64;
    let mut active = 0;
    for _ in 0..100 {
        let problem = MpcProblem {
            params: MpcParams { horizon: rng.random_range(3..25), ..MpcParams::default() },
            p_int: Vec3::zeros(),
            v_int: random_vec(&mut rng, 3.0),
            target: target(&mut rng, 60.0),
        };
        let qp = condense(&problem).unwrap();
        let sol = solve_qp(&qp, &QpSettings::default()).unwrap();
        worst_b = worst_b.max(qp.kkt_residuals(&sol.x, &sol.y).max());
        active += (sol.y.amax() > 1e-9) as usize;
    }

    let mut worst_c = 0.0f64;
    for _ in 0..5 {
        let a_max = Vec3::new(1.0, 1.5, 0.8);
        let params = MpcParams { horizon: 3, dt: 0.5, a_max, v_max: Vec3::new(1.2, 1.2, 0.6), ..MpcParams::default() };
        let problem = MpcProblem { params, p_int: Vec3::zeros(), v_int: random_vec(&mut rng, 0.5), target: target(&mut rng, 5.0) };
        let qp = condense(&problem).unwrap();
        let sol = solve_qp(&qp, &tight).unwrap();
        for ax in 0..3 {
            let spacing = 2.0 * a_max[ax] / 20.0;
            let grid: Vec<f64> = (0..=20).map(|i| -a_max[ax] + spacing * i as f64).collect();
            let mut best = (f64::INFINITY, [0.0; 3]);
            let mut x = sol.x.clone();
            for &u0 in &grid {
                for &u1 in &grid {
                    for &u2 in &grid {
                        x[ax] = u0;
                        x[3 + ax] = u1;
                        x[6 + ax] = u2;
                        let ax_vals = &qp.a * &x;
                        let feasible = (0..qp.m()).all(|i| ax_vals[i] >= qp.l[i] - 1e-12 && ax_vals[i] <= qp.u[i] + 1e-12);
                        let f = qp.objective(&x);
                        if feasible && f < best.0 {
                            best = (f, [u0, u1, u2]);
                        }
                    }
                }
            }
            for k in 0..3 {
                worst_c = worst_c.max((sol.x[3 * k + ax] - best.1[k]).abs() / spacing);
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    vec![
        outcome("7a", worst_a < 1e-8, format!("unconstrained max deviation from direct solve {worst_a:e}")),
        outcome("7b", worst_b < 1e-6, format!("max KKT residual {worst_b:e} over 100 instances ({active} with active bounds)")),
        outcome("7c", worst_c <= 1.0 && secs < 30.0, format!("N = 3 plans within {worst_c:.3} grid spacings of enumeration ({secs:.1} s)")),
    ]
}

fn criterion_8() -> Vec<Outcome> {
    let started = Instant::now();
    let fast = stats(&gen_lemniscate(16.0, 40.0, 5.0, 600.0, 0.02).unwrap());
    let slow = stats(&gen_lemniscate(16.0, 40.0, 3.0, 600.0, 0.02).unwrap());
    let secs = started.elapsed().as_secs_f64();
    let pass = (fast.mean_accel - 1.9).abs() <= 0.4
        && (fast.max_accel - 4.9).abs() <= 1.0
        && (slow.mean_accel - 0.7).abs() <= 0.15
        && (slow.max_accel - 1.9).abs() <= 0.4
        && secs < 1.0;
    vec![outcome(
        "8",
        pass,
        format!(
            "5 m/s mean {:.3} max {:.3}; 3 m/s mean {:.3} max {:.3} m/s² ({secs:.2} s)",
            fast.mean_accel, fast.max_accel, slow.mean_accel, slow.max_accel
        ),
    )]
}

fn bundled() -> Vec<(String, Arc<Trajectory>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/trajectories");
    let mut files: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files.iter().map(|p| (p.file_stem().unwrap().to_string_lossy().into_owned(), Arc::new(load(p).unwrap()))).collect()
}

fn pin(b: &mut GaussianBelief, sigma_pin: f64) {
    for i in 6..9 {
        b.mean[i] = 0.0;
        for j in 0..9 {
            b.cov[(i, j)] = 0.0;
            b.cov[(j, i)] = 0.0;
        }
        b.cov[(i, i)] = sigma_pin * sigma_pin;
    }
}

fn criterion_9() -> Vec<Outcome> {
    let config = RunConfig {
        audit_filter: true,
        duration: Some(60.0),
        sensor: SensorNoiseParams { fov_azimuth_halfwidth: Some(1.0), dropout_p: 0.1, ..SensorNoiseParams::default() },
        ..RunConfig::default()
    };
    let methods = vec![
        ("epn".to_string(), Method::Guidance(GuidanceParams::epn())),
        ("gpn2".to_string(), Method::Guidance(GuidanceParams::gpn2())),
        ("mpc".to_string(), Method::Mpc(MpcParams::default())),
    ];
    let reports: Vec<RunReport> = run_batch(&batch_scenarios(&config, &methods, &bundled(), 2, 9), jobs()).unwrap();
    let audits: Vec<_> = reports.iter().filter_map(|r| r.filter_audit).collect();
    let cycles: usize = audits.iter().map(|a| a.cycles).sum();
    let min_eig = audits.iter().map(|a| a.min_relative_eigenvalue).fold(f64::INFINITY, f64::min);
    let simplex = audits.iter().map(|a| a.max_simplex_error).fold(0.0, f64::max);

    let noise = ImmNoise::default();
    let z0 = Vec3::new(1.0, 2.0, 3.0);
    let zc = Mat3::identity() * 0.01;
    let mut imm = ImmBelief::from_detection(&z0, &zc, &InitPrior::default(), noise, Matrix2::identity(), [1.0, 0.0]).unwrap();
    let mut kf = imm.beliefs[0].clone();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut cv_gap = 0.0f64;
    for k in 0..500 {
        let t = 0.1 * k as f64;
        let z = Vec3::new(2.0 * t, (0.3 * t).sin() * 4.0, 10.0 + 0.1 * t) + random_vec(&mut rng, 0.1);
        let meas = (k % 9 != 4).then_some((&z, &zc));
        imm = imm_step(&imm, meas, 0.1).unwrap();
        let m = build_model(ModelSpec { kind: ModelKind::Cv, dt: 0.1, noise: noise.sigma_a }).unwrap();
        kf = kf_predict(&kf, &m.a, &m.xi);
        pin(&mut kf, noise.sigma_pin);
        if let Some((z, zc)) = meas {
            kf = kf_update(&kf, z, zc, &m.h).unwrap().belief;
            pin(&mut kf, noise.sigma_pin);
        }
        cv_gap = cv_gap.max((imm.fused.mean - kf.mean).amax()).max((imm.fused.cov - kf.cov).amax());
    }
    vec![outcome(
        "9",
        audits.len() == reports.len() && min_eig >= -1e-12 && simplex <= 1e-12 && cv_gap <= 1e-10,
        format!(
            "{} runs, {cycles} filter cycles: min relative eigenvalue {min_eig:.2e}, simplex error {simplex:.1e}; lone-CV gap {cv_gap:.1e}",
            reports.len()
        ),
    )]
}

fn criterion_10() -> Vec<Outcome> {
    let config = RunConfig { duration: Some(40.0), ..RunConfig::default() };
    let methods = vec![
        ("lpn".to_string(), Method::Guidance(GuidanceParams::lpn())),
        ("epn".to_string(), Method::Guidance(GuidanceParams::epn())),
        ("mpc".to_string(), Method::Mpc(MpcParams::default())),
    ];
    let scenarios = batch_scenarios(&config, &methods, &bundled(), 2, 10);
    let one = run_batch(&scenarios, 1).unwrap();
    let eight = run_batch(&scenarios, 8).unwrap();
    let tables_equal = to_json(&aggregate(&one), true).unwrap() == to_json(&aggregate(&eight), true).unwrap();
    let again = run_scenario(&scenarios[3]).unwrap();
    let bytes_equal = to_json(&again, true).unwrap() == to_json(&one[3], true).unwrap()
        && one.iter().zip(&eight).all(|(a, b)| to_json(a, true).unwrap() == to_json(b, true).unwrap());
    vec![outcome(
        "10",
        tables_equal && bytes_equal,
        format!("{} runs: aggregate tables equal for 1 and 8 workers: {tables_equal}; per-run reports byte-identical: {bytes_equal}", scenarios.len()),
    )]
}

fn criterion_11() -> Vec<Outcome> {
    let (name, tr) = bundled().remove(0);
    let mean_time = |method: Method| {
        let mut sc = Scenario::new(name.clone(), tr.clone(), random_start(&tr, 11), method);
        sc.record_timing = true;
        sc.feed = FeedMode::Truth;
        let r = run_scenario(&sc).unwrap();
        r.compute_times.iter().sum::<f64>() / r.compute_times.len() as f64
    };
    let pn_family: Vec<(Law, f64)> = [GuidanceParams::pn(), GuidanceParams::lpn(), GuidanceParams::gpn2(), GuidanceParams::epn()]
        .into_iter()
        .map(|g| (g.law, mean_time(Method::Guidance(g))))
        .collect();
    let mpc = mean_time(Method::Mpc(MpcParams::default()));
    let slowest = pn_family.iter().map(|(_, t)| *t).fold(0.0, f64::max);
    vec![outcome(
        "11",
        mpc >= 10.0 * slowest,
        format!(
            "mean cycle time over 100 s: {}, mpc {:.1} µs (ratio {:.0})",
            pn_family.iter().map(|(l, t)| format!("{} {:.2} µs", l.name(), t * 1e6)).collect::<Vec<_>>().join(", "),
            mpc * 1e6,
            mpc / slowest
        ),
    )]
}

fn main() {
    type Check = fn() -> Vec<Outcome>;
    let checks: [(&str, Check); 10] = [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("5-6", criteria_5_and_6),
        ("7", criterion_7),
        ("8", criterion_8),
        ("9", criterion_9),
        ("10", criterion_10),
        ("11", criterion_11),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut unexpected = Vec::new();
    for (key, check) in checks {
        if filter.as_ref().is_some_and(|f| f != key) {
            continue;
        }
        for o in check() {
            let known = KNOWN_FAILURES.contains(&o.id);
            let status = match (o.pass, known) {
                (true, _) => "PASS",
                (false, true) => "FAIL (known)",
                (false, false) => "FAIL",
            };
            println!("criterion {:<3} {status:<12} {}", o.id, o.detail);
            if !o.pass && !known {
                unexpected.push(o.id);
            }
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
