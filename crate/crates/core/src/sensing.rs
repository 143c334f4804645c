//! Observer-motion-dependent measurement uncertainty and a simulated
//! position detector.
//!
//! The measurement covariance propagates range noise, observer translation
//! noise and body-frame orientation noise through the linearized point
//! transform, then adds an isotropic sampling-bias term.

use nalgebra::SMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{cholesky_psd3, rot_axis_derivatives, symmetrize, wrap_angle, Mat3, Rotation3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserverState {
    pub position: Vec3,
    /// Measured orientation (body to world).
    pub rotation: Rotation3,
    /// Body angular rates (rad/s).
    pub omega: Vec3,
    /// Translation covariance of the self-localization (m²).
    pub sigma_t: Mat3,
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorNoiseParams {
    /// Range stdev (m).
    pub sigma_l: f64,
    /// Sampling-bias stdev (m).
    pub sigma_zeta3: f64,
    /// Angular-rate to orientation-noise coefficient (rad·s).
    pub c_alpha: f64,
    /// Scan rate (Hz).
    pub rate: f64,
    pub max_range: f64,
    /// Half-width of the azimuth gate around the observer heading; `None` disables it.
    pub fov_azimuth_halfwidth: Option<f64>,
    pub dropout_p: f64,
}

impl Default for SensorNoiseParams {
    fn default() -> Self {
        Self {
            sigma_l: 0.03,
            sigma_zeta3: 0.1,
            c_alpha: 0.005,
            rate: 10.0,
            max_range: 25.0,
            fov_azimuth_halfwidth: None,
            dropout_p: 0.0,
        }
    }
}

impl SensorNoiseParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [self.sigma_l, self.sigma_zeta3, self.c_alpha, self.max_range, self.dropout_p];
        if nonneg.iter().any(|x| !(*x >= 0.0)) || self.dropout_p > 1.0 {
            return Err(Error::Parameter("sensor noise parameters must be nonnegative".into()));
        }
        if !(self.rate > 0.0) {
            return Err(Error::Parameter("sensor rate must be positive".into()));
        }
        Ok(())
    }
}

/// Everything needed to recompute a detection's covariance under different
/// noise parameters (used when replaying logs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementGeometry {
    pub rotation: Rotation3,
    pub omega: Vec3,
    pub sigma_t: Mat3,
    /// Unit ray direction in the body frame.
    pub ray: Vec3,
    pub range: f64,
}

impl MeasurementGeometry {
    pub fn covariance(&self, params: &SensorNoiseParams) -> Result<Mat3> {
        pose_covariance(&self.rotation, &self.omega, &self.sigma_t, &self.ray, self.range, params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub time: f64,
    /// Measured target position, world frame.
    pub z: Vec3,
    pub cov: Mat3,
    pub geometry: MeasurementGeometry,
}

/// `c_alpha² · diag(ω²)`.
pub fn orientation_cov(omega: &Vec3, c_alpha: f64) -> Mat3 {
    Mat3::from_diagonal(&omega.component_mul(omega)) * (c_alpha * c_alpha)
}

fn pose_covariance(
    rotation: &Rotation3,
    omega: &Vec3,
    sigma_t: &Mat3,
    d: &Vec3,
    range: f64,
    params: &SensorNoiseParams,
) -> Result<Mat3> {
    if (d.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("ray direction must be unit, |d| = {}", d.norm())));
    }
    if !(range > 0.0) {
        return Err(Error::Contract(format!("range must be positive, got {range}")));
    }
    let r = rotation.matrix();
    let (dx, dy, dz) = rot_axis_derivatives();
    // J = [R d | I | l R dRx d | l R dRy d | l R dRz d]
    let mut jac = SMatrix::<f64, 3, 7>::zeros();
    jac.fixed_view_mut::<3, 1>(0, 0).copy_from(&(r * d));
    jac.fixed_view_mut::<3, 3>(0, 1).copy_from(&Mat3::identity());
    jac.fixed_view_mut::<3, 1>(0, 4).copy_from(&(r * dx * d * range));
    jac.fixed_view_mut::<3, 1>(0, 5).copy_from(&(r * dy * d * range));
    jac.fixed_view_mut::<3, 1>(0, 6).copy_from(&(r * dz * d * range));

    let mut noise = SMatrix::<f64, 7, 7>::zeros();
    noise[(0, 0)] = params.sigma_l * params.sigma_l;
    noise.fixed_view_mut::<3, 3>(1, 1).copy_from(sigma_t);
    noise.fixed_view_mut::<3, 3>(4, 4).copy_from(&orientation_cov(omega, params.c_alpha));

    let sigma = jac * noise * jac.transpose()
        + Mat3::identity() * (params.sigma_zeta3 * params.sigma_zeta3);
    Ok(symmetrize(&sigma))
}

/// Covariance of a target position measured along body-frame ray `d` at range `range`.
pub fn measurement_cov(obs: &ObserverState, d: &Vec3, range: f64, params: &SensorNoiseParams) -> Result<Mat3> {
    pose_covariance(&obs.rotation, &obs.omega, &obs.sigma_t, d, range, params)
}

/// Ray direction (body frame) and range from the observer to a world point.
pub fn observe_geometry(obs: &ObserverState, target: &Vec3) -> Option<(Vec3, f64)> {
    let rel = target - obs.position;
    let range = rel.norm();
    if range <= 0.0 || !range.is_finite() {
        return None;
    }
    let ray = obs.rotation.transpose().apply(&(rel / range));
    Some((ray.normalize(), range))
}

/// Simulated detector: gates by range, azimuth field of view and random
/// dropout, then perturbs the true position with noise drawn from the
/// covariance it reports.
pub fn detect<R: Rng + ?Sized>(
    time: f64,
    target: &Vec3,
    obs: &ObserverState,
    params: &SensorNoiseParams,
    rng: &mut R,
) -> Option<Detection> {
    let (ray, range) = observe_geometry(obs, target)?;
    if range > params.max_range {
        return None;
    }
    if let Some(half) = params.fov_azimuth_halfwidth {
        let rel = target - obs.position;
        let bearing = rel.y.atan2(rel.x);
        if wrap_angle(bearing - obs.heading).abs() > half {
            return None;
        }
    }
    if params.dropout_p > 0.0 && rng.random::<f64>() < params.dropout_p {
        return None;
    }
    let geometry = MeasurementGeometry {
        rotation: obs.rotation,
        omega: obs.omega,
        sigma_t: obs.sigma_t,
        ray,
        range,
    };
    let cov = geometry.covariance(params).ok()?;
    let l = cholesky_psd3(&cov, 0.0).ok()?;
    let n = Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    );
    Some(Detection { time, z: target + l * n, cov, geometry })
}
