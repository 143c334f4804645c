//! Target state estimation: CV and CA Kalman filters sharing one 9-dim
//! `[p, v, a]` state space, and the two-model IMM filter built on them.
//!
//! The CV model carries `a = 0` with the acceleration covariance pinned to a
//! small configured value, so beliefs from both models can be mixed with the
//! same equations.

use nalgebra::{Matrix2, SMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{symmetrize, Mat3, StateMat, StateVec, Vec3, PSD_FLOOR};

pub type MeasMat = SMatrix<f64, 3, 9>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cv,
    Ca,
}

/// Motion model description: kind, time step and process-noise scale
/// (acceleration stdev for CV, jerk stdev for CA).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dt: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: StateMat,
    pub xi: StateMat,
    pub h: MeasMat,
}

fn set_block(m: &mut StateMat, bi: usize, bj: usize, value: f64) {
    for k in 0..3 {
        m[(3 * bi + k, 3 * bj + k)] = value;
    }
}

/// Position selector `H = [I 0 0]`.
pub fn position_selector() -> MeasMat {
    let mut h = MeasMat::zeros();
    for k in 0..3 {
        h[(k, k)] = 1.0;
    }
    h
}

/// Transition matrix, process noise and measurement matrix of a model.
pub fn build_model(spec: ModelSpec) -> Result<LinearModel> {
    if !(spec.dt > 0.0) || !spec.dt.is_finite() {
        return Err(Error::Parameter(format!("model time step must be positive, got {}", spec.dt)));
    }
    if !(spec.noise >= 0.0) {
        return Err(Error::Parameter(format!("process noise must be nonnegative, got {}", spec.noise)));
    }
    let dt = spec.dt;
    let mut a = StateMat::zeros();
    // Input matrix B, stacked per block: coefficients on [p, v, a].
    let b = match spec.kind {
        ModelKind::Cv => {
            set_block(&mut a, 0, 0, 1.0);
            set_block(&mut a, 0, 1, dt);
            set_block(&mut a, 1, 1, 1.0);
            [0.5 * dt * dt, dt, 0.0]
        }
        ModelKind::Ca => {
            set_block(&mut a, 0, 0, 1.0);
            set_block(&mut a, 0, 1, dt);
            set_block(&mut a, 0, 2, 0.5 * dt * dt);
            set_block(&mut a, 1, 1, 1.0);
            set_block(&mut a, 1, 2, dt);
            set_block(&mut a, 2, 2, 1.0);
            [dt * dt * dt / 6.0, 0.5 * dt * dt, dt]
        }
    };
    let q = spec.noise * spec.noise;
    let mut xi = StateMat::zeros();
    for bi in 0..3 {
        for bj in 0..3 {
            set_block(&mut xi, bi, bj, q * b[bi] * b[bj]);
        }
    }
    Ok(LinearModel { a, xi, h: position_selector() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: StateVec,
    pub cov: StateMat,
}

impl GaussianBelief {
    pub fn position(&self) -> Vec3 {
        self.mean.fixed_rows::<3>(0).into()
    }

    pub fn velocity(&self) -> Vec3 {
        self.mean.fixed_rows::<3>(3).into()
    }

    pub fn acceleration(&self) -> Vec3 {
        self.mean.fixed_rows::<3>(6).into()
    }
}

pub fn kf_predict(b: &GaussianBelief, a: &StateMat, xi: &StateMat) -> GaussianBelief {
    GaussianBelief {
        mean: a * b.mean,
        cov: symmetrize(&(a * b.cov * a.transpose() + xi)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KfUpdate {
    pub belief: GaussianBelief,
    pub innovation: Vec3,
    pub innovation_cov: Mat3,
    pub log_likelihood: f64,
}

impl KfUpdate {
    /// Gaussian density of the innovation under `N(0, S)`.
    pub fn likelihood(&self) -> f64 {
        self.log_likelihood.exp()
    }
}

fn floor_spectrum(s: &Mat3, floor: f64) -> Mat3 {
    let sym = symmetrize(s);
    let eig = sym.symmetric_eigen();
    if eig.eigenvalues.min() >= floor {
        return sym;
    }
    let lambda = eig.eigenvalues.map(|l| l.max(floor));
    let v = eig.eigenvectors;
    symmetrize(&(v * Mat3::from_diagonal(&lambda) * v.transpose()))
}

/// Kalman measurement update in Joseph form.
pub fn kf_update(b: &GaussianBelief, z: &Vec3, zcov: &Mat3, h: &MeasMat) -> Result<KfUpdate> {
    let innovation = z - h * b.mean;
    let ph = b.cov * h.transpose();
    let s = floor_spectrum(&(h * ph + zcov), PSD_FLOOR);
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Divergence("innovation covariance is singular".into()))?;
    let s_inv = chol.inverse();
    let k = ph * s_inv;
    let ikh = StateMat::identity() - k * h;
    let cov = symmetrize(&(ikh * b.cov * ikh.transpose() + k * zcov * k.transpose()));
    let mean = b.mean + k * innovation;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let maha = innovation.dot(&(s_inv * innovation));
    let log_likelihood = -0.5 * (maha + log_det + 3.0 * (2.0 * std::f64::consts::PI).ln());
    if !mean.iter().all(|x| x.is_finite()) {
        return Err(Error::Divergence("non-finite posterior mean".into()));
    }
    Ok(KfUpdate {
        belief: GaussianBelief { mean, cov },
        innovation,
        innovation_cov: s,
        log_likelihood,
    })
}

/// Weighted moment-matched combination of beliefs (the IMM mixing equations).
pub fn mix(beliefs: &[GaussianBelief], weights: &[f64]) -> GaussianBelief {
    debug_assert_eq!(beliefs.len(), weights.len());
    let mut mean = StateVec::zeros();
    for (b, w) in beliefs.iter().zip(weights) {
        mean += b.mean * *w;
    }
    let mut cov = StateMat::zeros();
    for (b, w) in beliefs.iter().zip(weights) {
        let d = b.mean - mean;
        cov += (b.cov + d * d.transpose()) * *w;
    }
    GaussianBelief { mean, cov: symmetrize(&cov) }
}

/// Process-noise and bridging parameters of the two-model IMM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImmNoise {
    /// CV acceleration stdev (m/s²).
    pub sigma_a: f64,
    /// CA jerk stdev (m/s³).
    pub sigma_j: f64,
    /// Acceleration stdev the CV model keeps on its `a = 0` block.
    pub sigma_pin: f64,
}

impl Default for ImmNoise {
    fn default() -> Self {
        Self { sigma_a: 2.0, sigma_j: 2.0, sigma_pin: 1e-2 }
    }
}

/// Prior used when the first detection arrives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitPrior {
    pub velocity_var: f64,
    pub acceleration_var: f64,
}

impl Default for InitPrior {
    fn default() -> Self {
        Self { velocity_var: 25.0, acceleration_var: 25.0 }
    }
}

pub fn default_transition() -> Matrix2<f64> {
    Matrix2::new(0.95, 0.05, 0.05, 0.95)
}

/// Full IMM state: one belief per model (index 0 = CV, 1 = CA), model
/// probabilities, the Markov matrix and the fused estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ImmBelief {
    pub beliefs: [GaussianBelief; 2],
    pub mu: [f64; 2],
    /// Row-stochastic; `transition[(i, j)]` is the probability of switching from model i to j.
    pub transition: Matrix2<f64>,
    pub fused: GaussianBelief,
    pub noise: ImmNoise,
    pub degenerate_updates: u32,
}

fn pin_cv(b: &mut GaussianBelief, sigma_pin: f64) {
    let var = sigma_pin * sigma_pin;
    for i in 6..9 {
        b.mean[i] = 0.0;
        for j in 0..9 {
            b.cov[(i, j)] = 0.0;
            b.cov[(j, i)] = 0.0;
        }
        b.cov[(i, i)] = var;
    }
}

impl ImmBelief {
    /// Initializes from a first detection: position from `z`, zero velocity
    /// and acceleration with the configured prior variances.
    pub fn from_detection(
        z: &Vec3,
        zcov: &Mat3,
        prior: &InitPrior,
        noise: ImmNoise,
        transition: Matrix2<f64>,
        mu: [f64; 2],
    ) -> Result<Self> {
        validate_transition(&transition)?;
        validate_mu(&mu)?;
        let mut mean = StateVec::zeros();
        mean.fixed_rows_mut::<3>(0).copy_from(z);
        let mut cov = StateMat::zeros();
        cov.fixed_view_mut::<3, 3>(0, 0).copy_from(&symmetrize(zcov));
        for k in 3..6 {
            cov[(k, k)] = prior.velocity_var;
        }
        for k in 6..9 {
            cov[(k, k)] = prior.acceleration_var;
        }
        let ca = GaussianBelief { mean, cov };
        let mut cv = ca.clone();
        pin_cv(&mut cv, noise.sigma_pin);
        let beliefs = [cv, ca];
        let fused = mix(&beliefs, &mu);
        Ok(Self { beliefs, mu, transition, fused, noise, degenerate_updates: 0 })
    }

    fn models(&self, dt: f64) -> Result<[LinearModel; 2]> {
        Ok([
            build_model(ModelSpec { kind: ModelKind::Cv, dt, noise: self.noise.sigma_a })?,
            build_model(ModelSpec { kind: ModelKind::Ca, dt, noise: self.noise.sigma_j })?,
        ])
    }
}

fn validate_transition(t: &Matrix2<f64>) -> Result<()> {
    for i in 0..2 {
        let row = t[(i, 0)] + t[(i, 1)];
        if (row - 1.0).abs() > 1e-9 || t[(i, 0)] < 0.0 || t[(i, 1)] < 0.0 {
            return Err(Error::Parameter(format!("transition row {i} is not stochastic")));
        }
    }
    Ok(())
}

fn validate_mu(mu: &[f64; 2]) -> Result<()> {
    if mu.iter().any(|m| *m < 0.0 || !m.is_finite()) || ((mu[0] + mu[1]) - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!("model probabilities {mu:?} not on the simplex")));
    }
    Ok(())
}

/// One IMM cycle: filtering (predict, then update when a measurement is
/// present), model-probability update, then mixing to re-initialize each
/// model. Without a measurement the step is predict-only and `mu` is kept.
pub fn imm_step(b: &ImmBelief, meas: Option<(&Vec3, &Mat3)>, dt: f64) -> Result<ImmBelief> {
    let models = b.models(dt)?;
    let mut filtered = [
        kf_predict(&b.beliefs[0], &models[0].a, &models[0].xi),
        kf_predict(&b.beliefs[1], &models[1].a, &models[1].xi),
    ];
    pin_cv(&mut filtered[0], b.noise.sigma_pin);

    let Some((z, zcov)) = meas else {
        let fused = mix(&filtered, &b.mu);
        return Ok(ImmBelief { beliefs: filtered, fused, ..b.clone() });
    };

    let mut log_lik = [0.0; 2];
    for j in 0..2 {
        let upd = kf_update(&filtered[j], z, zcov, &models[j].h)?;
        filtered[j] = upd.belief;
        log_lik[j] = upd.log_likelihood;
    }
    pin_cv(&mut filtered[0], b.noise.sigma_pin);

    // Predicted model probabilities c_j = sum_i P_ij mu_i.
    let t = &b.transition;
    let c = [
        t[(0, 0)] * b.mu[0] + t[(1, 0)] * b.mu[1],
        t[(0, 1)] * b.mu[0] + t[(1, 1)] * b.mu[1],
    ];
    let mut degenerate = b.degenerate_updates;
    let mu = {
        let max_ll = log_lik.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w = [
            c[0] * (log_lik[0] - max_ll).exp(),
            c[1] * (log_lik[1] - max_ll).exp(),
        ];
        let total = w[0] + w[1];
        if total > 0.0 && total.is_finite() && max_ll.is_finite() {
            [w[0] / total, w[1] / total]
        } else {
            log::debug!("degenerate IMM update, keeping model probabilities {:?}", b.mu);
            degenerate += 1;
            b.mu
        }
    };

    let fused = mix(&filtered, &mu);

    // Mixing probabilities mu^{i|j} = P_ij mu_i / sum_k P_kj mu_k.
    let mut mixed = filtered.clone();
    for j in 0..2 {
        let denom = t[(0, j)] * mu[0] + t[(1, j)] * mu[1];
        if denom <= f64::MIN_POSITIVE {
            continue;
        }
        let w = [t[(0, j)] * mu[0] / denom, t[(1, j)] * mu[1] / denom];
        mixed[j] = mix(&filtered, &w);
    }
    pin_cv(&mut mixed[0], b.noise.sigma_pin);

    Ok(ImmBelief {
        beliefs: mixed,
        mu,
        transition: b.transition,
        fused,
        noise: b.noise,
        degenerate_updates: degenerate,
    })
}

/// Constant-acceleration extrapolation of a state by `dt` (zero jerk).
pub fn extrapolate(x: &StateVec, dt: f64) -> StateVec {
    let mut out = *x;
    for k in 0..3 {
        let (p, v, a) = (x[k], x[3 + k], x[6 + k]);
        out[k] = p + v * dt + 0.5 * a * dt * dt;
        out[3 + k] = v + a * dt;
    }
    out
}

/// Rolls the fused mean forward `n` steps with the CA model and zero jerk.
pub fn predict_horizon(b: &ImmBelief, n: usize, dt: f64) -> Result<Vec<StateVec>> {
    if n == 0 {
        return Err(Error::Parameter("horizon must be at least one step".into()));
    }
    let model = build_model(ModelSpec { kind: ModelKind::Ca, dt, noise: 0.0 })?;
    let mut x = b.fused.mean;
    Ok((0..n)
        .map(|_| {
            x = model.a * x;
            x
        })
        .collect())
}
