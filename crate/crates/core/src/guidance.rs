//! Reactive interception guidance: pure pursuit, canonical PN, linear PN,
//! the closing-speed regulated GPN baseline and the weighted EPN law.
//!
//! Every law maps a [`LosState`] to a commanded acceleration; limits are
//! applied separately by [`clamp_command`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Vec3;

const DEGENERATE_RATE: f64 = 1e-9;

/// Line-of-sight kinematics of the target relative to the interceptor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LosState {
    /// Target minus interceptor position (m).
    pub dp: Vec3,
    /// Target minus interceptor velocity (m/s).
    pub dv: Vec3,
    pub range: f64,
    pub range_rate: f64,
    /// Closing velocity, `-range_rate`.
    pub closing_velocity: f64,
    /// LOS angular-rate vector `dp × dv / r²`.
    pub omega: Vec3,
    pub los_rate: f64,
    pub t_go: f64,
}

pub fn los_state(p_int: &Vec3, v_int: &Vec3, p_tgt: &Vec3, v_tgt: &Vec3, eps_v: f64) -> Result<LosState> {
    let dp = p_tgt - p_int;
    let dv = v_tgt - v_int;
    let range = dp.norm();
    if range == 0.0 {
        return Err(Error::Coincident);
    }
    let range_rate = dp.dot(&dv) / range;
    let omega = dp.cross(&dv) / (range * range);
    Ok(LosState {
        dp,
        dv,
        range,
        range_rate,
        closing_velocity: -range_rate,
        omega,
        los_rate: omega.norm(),
        t_go: range / dv.norm().max(eps_v),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Law {
    Pp,
    Pn,
    Lpn,
    Gpn,
    Epn,
}

impl Law {
    pub fn name(&self) -> &'static str {
        match self {
            Law::Pp => "pp",
            Law::Pn => "pn",
            Law::Lpn => "lpn",
            Law::Gpn => "gpn",
            Law::Epn => "epn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceParams {
    pub law: Law,
    pub gain: f64,
    /// EPN approach-term weight.
    pub weight: f64,
    pub k1: f64,
    pub k2: f64,
    /// GPN range-rate setpoint (m/s, negative = closing).
    pub v_r: f64,
    /// Relative-speed guard used in `t_go`.
    pub eps_v: f64,
}

impl Default for GuidanceParams {
    fn default() -> Self {
        Self::epn()
    }
}

impl GuidanceParams {
    fn base(law: Law) -> Self {
        Self { law, gain: 0.0, weight: 0.0, k1: 0.0, k2: 0.0, v_r: 0.0, eps_v: 1e-3 }
    }

    pub fn pp() -> Self {
        Self { gain: 0.83, ..Self::base(Law::Pp) }
    }

    pub fn pn() -> Self {
        Self { gain: 3.0, ..Self::base(Law::Pn) }
    }

    pub fn lpn() -> Self {
        Self { gain: 19.7, ..Self::base(Law::Lpn) }
    }

    pub fn epn() -> Self {
        Self { gain: 19.7, weight: 5.1e-2, ..Self::base(Law::Epn) }
    }

    /// GPN with the gains of its original publication.
    pub fn gpn1() -> Self {
        Self { k1: 40.0, k2: 1.0, v_r: -5.0, ..Self::base(Law::Gpn) }
    }

    /// GPN with grid-search tuned gains.
    pub fn gpn2() -> Self {
        Self { k1: 69.5, k2: 5.8, v_r: -6.6, ..Self::base(Law::Gpn) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain >= 0.0) {
            return Err(Error::Parameter(format!("gain must be nonnegative, got {}", self.gain)));
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(Error::Parameter(format!("EPN weight must lie in [0, 1], got {}", self.weight)));
        }
        if !(self.eps_v > 0.0) {
            return Err(Error::Parameter("eps_v must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceCommand {
    /// Raw commanded acceleration (m/s²).
    pub a_cmd: Vec3,
    /// Acceleration after limiting.
    pub a_limited: Vec3,
    /// Desired heading (rad), along the horizontal LOS.
    pub desired_heading: f64,
}

impl GuidanceCommand {
    pub fn new(a_cmd: Vec3, desired_heading: f64) -> Self {
        Self { a_cmd, a_limited: a_cmd, desired_heading }
    }
}

fn heading_of(dp: &Vec3) -> f64 {
    dp.y.atan2(dp.x)
}

fn zem_term(los: &LosState) -> Vec3 {
    (los.dp + los.dv * los.t_go) / (los.t_go * los.t_go)
}

pub fn pp(los: &LosState, params: &GuidanceParams) -> GuidanceCommand {
    GuidanceCommand::new(los.dp * params.gain, heading_of(&los.dp))
}

/// Canonical PN, `G · v_c · λ̇ · a_dir`.
pub fn pn(los: &LosState, params: &GuidanceParams, a_dir: &Vec3) -> GuidanceCommand {
    if los.los_rate < DEGENERATE_RATE {
        return GuidanceCommand::new(Vec3::zeros(), heading_of(&los.dp));
    }
    let a = a_dir * (params.gain * los.closing_velocity * los.los_rate);
    GuidanceCommand::new(a, heading_of(&los.dp))
}

/// Direction perpendicular to the LOS in the engagement plane, `unit(Ω × L̂)`.
pub fn pn_direction(los: &LosState) -> Option<Vec3> {
    if los.los_rate < DEGENERATE_RATE {
        return None;
    }
    let n = los.omega.cross(&(los.dp / los.range));
    let norm = n.norm();
    (norm > 0.0).then(|| n / norm)
}

pub fn lpn(los: &LosState, params: &GuidanceParams) -> GuidanceCommand {
    GuidanceCommand::new(zem_term(los) * params.gain, heading_of(&los.dp))
}

pub fn epn(los: &LosState, params: &GuidanceParams) -> GuidanceCommand {
    let w = params.weight;
    let a = (zem_term(los) * (1.0 - w) + los.dp * w) * params.gain;
    GuidanceCommand::new(a, heading_of(&los.dp))
}

/// PN term on the LOS rate plus proportional regulation of the range rate
/// toward the setpoint `v_r` along the LOS.
pub fn gpn(los: &LosState, params: &GuidanceParams) -> GuidanceCommand {
    let los_hat = los.dp / los.range;
    let pn_term = match pn_direction(los) {
        Some(n) => n * (params.k1 * los.closing_velocity * los.los_rate),
        None => Vec3::zeros(),
    };
    let closing_term = los_hat * (params.k2 * (los.range_rate - params.v_r));
    GuidanceCommand::new(pn_term + closing_term, heading_of(&los.dp))
}

/// Dispatches to the law selected in `params`.
pub fn command(los: &LosState, params: &GuidanceParams) -> GuidanceCommand {
    match params.law {
        Law::Pp => pp(los, params),
        Law::Pn => match pn_direction(los) {
            Some(dir) => pn(los, params, &dir),
            None => GuidanceCommand::new(Vec3::zeros(), heading_of(&los.dp)),
        },
        Law::Lpn => lpn(los, params),
        Law::Gpn => gpn(los, params),
        Law::Epn => epn(los, params),
    }
}

/// Per-axis box clamp to `a_max`; an axis already at its velocity limit
/// may not be pushed further in the same direction.
pub fn clamp_command(cmd: &GuidanceCommand, v_int: &Vec3, v_max: &Vec3, a_max: &Vec3) -> GuidanceCommand {
    let mut a = cmd.a_cmd;
    for i in 0..3 {
        a[i] = a[i].clamp(-a_max[i], a_max[i]);
        if (v_int[i] >= v_max[i] && a[i] > 0.0) || (v_int[i] <= -v_max[i] && a[i] < 0.0) {
            a[i] = 0.0;
        }
    }
    GuidanceCommand { a_cmd: cmd.a_cmd, a_limited: a, desired_heading: cmd.desired_heading }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rotation3;
    use proptest::prelude::*;

    fn los(dp: Vec3, dv: Vec3) -> LosState {
        los_state(&Vec3::zeros(), &Vec3::zeros(), &dp, &dv, 1e-3).unwrap()
    }

    #[test]
    fn head_on_collision_course() {
        let l = los(Vec3::new(10.0, 0.0, 0.0), Vec3::new(-2.0, 0.0, 0.0));
        assert_eq!(l.closing_velocity, 2.0);
        assert_eq!(l.los_rate, 0.0);
        assert_eq!(l.t_go, 5.0);
    }

    #[test]
    fn crossing_target_los_rate() {
        let l = los(Vec3::new(10.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0));
        assert_eq!(l.closing_velocity, 0.0);
        assert!((l.omega - Vec3::new(0.0, 0.0, 0.2)).norm() < 1e-15);
        // finite difference of the LOS azimuth
        let h = 1e-4;
        let ang = |t: f64| (2.0 * t).atan2(10.0);
        let fd = (ang(h) - ang(-h)) / (2.0 * h);
        assert!((fd - l.los_rate).abs() < 1e-8);
    }

    #[test]
    fn t_go_guard() {
        let l = los(Vec3::new(10.0, 0.0, 0.0), Vec3::zeros());
        assert!((l.t_go - 1e4).abs() < 1e-9);
        assert!(matches!(
            los_state(&Vec3::x(), &Vec3::zeros(), &Vec3::x(), &Vec3::zeros(), 1e-3),
            Err(Error::Coincident)
        ));
    }

    #[test]
    fn pure_pursuit() {
        let l = los(Vec3::new(3.0, 4.0, 0.0), Vec3::zeros());
        let unit = GuidanceParams { gain: 1.0, ..GuidanceParams::pp() };
        assert_eq!(pp(&l, &unit).a_cmd, Vec3::new(3.0, 4.0, 0.0));
        let a = pp(&l, &GuidanceParams::pp()).a_cmd;
        assert!((a - Vec3::new(2.49, 3.32, 0.0)).norm() < 1e-12);
        let zero = LosState { dp: Vec3::zeros(), ..l };
        assert_eq!(pp(&zero, &GuidanceParams::pp()).a_cmd, Vec3::zeros());
    }

    #[test]
    fn canonical_pn() {
        let head_on = los(Vec3::new(10.0, 0.0, 0.0), Vec3::new(-2.0, 0.0, 0.0));
        assert_eq!(command(&head_on, &GuidanceParams::pn()).a_cmd, Vec3::zeros());
        let receding = los(Vec3::new(10.0, 0.0, 0.0), Vec3::new(3.0, 0.0, 0.0));
        assert_eq!(command(&receding, &GuidanceParams::pn()).a_cmd, Vec3::zeros());

        let l = LosState { closing_velocity: 2.0, los_rate: 0.2, ..head_on };
        let a = pn(&l, &GuidanceParams { gain: 3.0, ..GuidanceParams::pn() }, &Vec3::y());
        assert!((a.a_cmd.norm() - 1.2).abs() < 1e-12);
    }

    #[test]
    fn pn_direction_points_with_lateral_motion() {
        let l = los(Vec3::new(10.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0));
        assert!((pn_direction(&l).unwrap() - Vec3::y()).norm() < 1e-15);
    }

    #[test]
    fn lpn_cases() {
        let head_on = los(Vec3::new(10.0, 0.0, 0.0), Vec3::new(-2.0, 0.0, 0.0));
        assert_eq!(lpn(&head_on, &GuidanceParams::lpn()).a_cmd, Vec3::zeros());

        let crossing = los(Vec3::new(10.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0));
        let a = lpn(&crossing, &GuidanceParams::lpn()).a_cmd;
        assert!((a - Vec3::new(7.88, 7.88, 0.0)).norm() < 1e-12);

        let still = los(Vec3::new(10.0, 0.0, 0.0), Vec3::zeros());
        assert!(lpn(&still, &GuidanceParams::lpn()).a_cmd.norm() < 1e-5);
    }

    #[test]
    fn epn_cases() {
        let still = los(Vec3::new(10.0, 0.0, 0.0), Vec3::zeros());
        let a = epn(&still, &GuidanceParams::epn()).a_cmd;
        assert!((a - Vec3::new(10.047, 0.0, 0.0)).norm() < 1e-3);

        let head_on = los(Vec3::new(10.0, 0.0, 0.0), Vec3::new(-2.0, 0.0, 0.0));
        let p = GuidanceParams::epn();
        assert!((epn(&head_on, &p).a_cmd - head_on.dp * (p.gain * p.weight)).norm() < 1e-12);
    }

    #[test]
    fn gpn_cases() {
        // On a collision course closing exactly at the setpoint nothing is commanded.
        let l = los(Vec3::new(10.0, 0.0, 0.0), Vec3::new(-5.0, 0.0, 0.0));
        assert_eq!(gpn(&l, &GuidanceParams::gpn1()).a_cmd, Vec3::zeros());

        let hover = los(Vec3::new(10.0, 0.0, 0.0), Vec3::zeros());
        let a = gpn(&hover, &GuidanceParams::gpn1()).a_cmd;
        assert!((a - Vec3::new(5.0, 0.0, 0.0)).norm() < 1e-12);

        let crossing = los(Vec3::new(10.0, 0.0, 0.0), Vec3::new(1.0, 2.0, 0.0));
        let p = GuidanceParams { k1: 0.0, ..GuidanceParams::gpn2() };
        let a = gpn(&crossing, &p).a_cmd;
        assert!(a.cross(&crossing.dp).norm() < 1e-12);
    }

    #[test]
    fn clamp_cases() {
        let amax = Vec3::new(4.0, 4.0, 2.0);
        let vmax = Vec3::new(8.0, 8.0, 4.0);
        let c = clamp_command(&GuidanceCommand::new(Vec3::new(10.0, 0.0, 0.0), 0.0), &Vec3::zeros(), &vmax, &amax);
        assert_eq!(c.a_limited, Vec3::new(4.0, 0.0, 0.0));
        let inside = Vec3::new(1.0, -2.0, 0.5);
        let c = clamp_command(&GuidanceCommand::new(inside, 0.0), &Vec3::zeros(), &vmax, &amax);
        assert_eq!(c.a_limited, inside);
        let c = clamp_command(&GuidanceCommand::new(Vec3::new(4.0, 0.0, 0.0), 0.0), &Vec3::new(8.0, 0.0, 0.0), &vmax, &amax);
        assert_eq!(c.a_limited, Vec3::zeros());
        let c = clamp_command(&GuidanceCommand::new(Vec3::new(-4.0, 0.0, 0.0), 0.0), &Vec3::new(8.0, 0.0, 0.0), &vmax, &amax);
        assert_eq!(c.a_limited, Vec3::new(-4.0, 0.0, 0.0));
    }

    fn arb_vec(r: f64) -> impl Strategy<Value = Vec3> {
        (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn epn_without_weight_is_lpn(dp in arb_vec(50.0), dv in arb_vec(10.0), g in 0.0f64..50.0) {
            prop_assume!(dp.norm() > 1e-3);
            let l = los(dp, dv);
            let a = lpn(&l, &GuidanceParams { gain: g, ..GuidanceParams::lpn() }).a_cmd;
            let b = epn(&l, &GuidanceParams { gain: g, weight: 0.0, ..GuidanceParams::epn() }).a_cmd;
            prop_assert!((a - b).abs().max() <= 1e-12 * (1.0 + a.abs().max()));
        }

        #[test]
        fn rotation_equivariance(dp in arb_vec(50.0), dv in arb_vec(10.0), yaw in -3.0f64..3.0, pitch in -1.5f64..1.5, roll in -3.0f64..3.0) {
            prop_assume!(dp.norm() > 1e-2);
            let r = Rotation3::from_euler_zyx(yaw, pitch, roll);
            let l = los(dp, dv);
            let lr = los(r.apply(&dp), r.apply(&dv));
            for p in [GuidanceParams::lpn(), GuidanceParams::epn()] {
                let a = r.apply(&command(&l, &p).a_cmd);
                let b = command(&lr, &p).a_cmd;
                prop_assert!((a - b).norm() <= 1e-9 * (1.0 + a.norm()));
            }
        }

        #[test]
        fn linear_in_gain(dp in arb_vec(50.0), dv in arb_vec(10.0)) {
            prop_assume!(dp.norm() > 1e-2);
            let l = los(dp, dv);
            for p in [GuidanceParams::pp(), GuidanceParams::lpn(), GuidanceParams::epn(), GuidanceParams::pn()] {
                let a = command(&l, &p).a_cmd;
                let b = command(&l, &GuidanceParams { gain: 2.0 * p.gain, ..p }).a_cmd;
                prop_assert!((b - a * 2.0).norm() <= 1e-9 * (1.0 + a.norm()));
            }
        }

        #[test]
        fn collision_course_commands_are_collinear(dp in arb_vec(50.0), closing in 0.5f64..10.0) {
            prop_assume!(dp.norm() > 1e-2);
            let dv = -dp.normalize() * closing;
            let l = los(dp, dv);
            let a = lpn(&l, &GuidanceParams::lpn()).a_cmd;
            let b = epn(&l, &GuidanceParams::epn()).a_cmd;
            prop_assert!(a.norm() <= 1e-9 * dp.norm());
            prop_assert!(b.cross(&dp).norm() <= 1e-9 * (1.0 + b.norm() * dp.norm()));
        }

        #[test]
        fn clamp_respects_box(a in arb_vec(100.0), v in arb_vec(10.0)) {
            let amax = Vec3::new(4.0, 4.0, 2.0);
            let c = clamp_command(&GuidanceCommand::new(a, 0.0), &v, &Vec3::new(8.0, 8.0, 4.0), &amax);
            for i in 0..3 {
                prop_assert!(c.a_limited[i].abs() <= amax[i]);
            }
        }
    }
}
