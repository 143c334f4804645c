//! Receding-horizon interception planner.
//!
//! The interceptor is a double integrator driven by piecewise-constant
//! accelerations; the target is rolled forward with the constant-acceleration
//! model. The tracking problem is condensed into a dense QP over the input
//! sequence and solved with an operator-splitting (ADMM) method followed by
//! an optional active-set polish.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::extrapolate;
use crate::guidance::GuidanceCommand;
use crate::numcore::{min_eigenvalue, Mat3, StateVec, Vec3};

/// Iterations between active-set polish attempts.
const POLISH_EVERY: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QpSettings {
    /// Initial ADMM penalty.
    pub rho: f64,
    /// Proximal regularization of the x-update.
    pub sigma: f64,
    /// Over-relaxation factor in (0, 2).
    pub alpha: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub adaptive_rho: bool,
    pub polish: bool,
    /// Residuals are evaluated every this many iterations.
    pub check_every: usize,
    pub record_trace: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            max_iter: 2000,
            tol: 1e-6,
            adaptive_rho: true,
            polish: true,
            check_every: 5,
            record_trace: false,
        }
    }
}

/// `min ½xᵀPx + qᵀx` subject to `l ≤ Ax ≤ u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

impl DenseQp {
    pub fn new(p: DMatrix<f64>, q: DVector<f64>, a: DMatrix<f64>, l: DVector<f64>, u: DVector<f64>) -> Result<Self> {
        let n = q.len();
        if p.shape() != (n, n) || a.ncols() != n || l.len() != a.nrows() || u.len() != a.nrows() {
            return Err(Error::Contract("inconsistent QP dimensions".into()));
        }
        if l.iter().zip(u.iter()).any(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::Contract("QP bounds must satisfy l ≤ u".into()));
        }
        Ok(Self { p, q, a, l, u })
    }

    /// Builds the one-sided form `G x ≤ h`.
    pub fn with_inequalities(p: DMatrix<f64>, q: DVector<f64>, g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        let l = DVector::from_element(h.len(), f64::NEG_INFINITY);
        Self::new(p, q, g, l, h)
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn m(&self) -> usize {
        self.l.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    /// KKT residuals of a primal–dual pair. The multiplier `y` is negative on
    /// active lower bounds and positive on active upper bounds.
    pub fn kkt_residuals(&self, x: &DVector<f64>, y: &DVector<f64>) -> KktResiduals {
        let stationarity = (&self.p * x + &self.q + self.a.tr_mul(y)).amax();
        let ax = &self.a * x;
        let mut primal = 0.0f64;
        let mut complementarity = 0.0f64;
        for i in 0..self.m() {
            primal = primal.max(self.l[i] - ax[i]).max(ax[i] - self.u[i]);
            let slack = if y[i] > 0.0 {
                self.u[i] - ax[i]
            } else if y[i] < 0.0 {
                ax[i] - self.l[i]
            } else {
                0.0
            };
            complementarity = complementarity.max((y[i] * slack).abs());
        }
        KktResiduals { stationarity, primal, complementarity }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QpDiagnostics {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
    pub polished: bool,
    /// Best feasible objective after each residual check, when recorded.
    pub cost_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub objective: f64,
    pub diagnostics: QpDiagnostics,
}

/// Factorization workspace for a fixed `(P, A)` pair; reusable across
/// right-hand sides and bounds.
#[derive(Debug, Clone)]
pub struct QpSolver {
    p: DMatrix<f64>,
    a: DMatrix<f64>,
    ata: DMatrix<f64>,
    sigma: f64,
    rho: f64,
    chol: Cholesky<f64, Dyn>,
}

fn factor(p: &DMatrix<f64>, ata: &DMatrix<f64>, sigma: f64, rho: f64) -> Result<Cholesky<f64, Dyn>> {
    let n = p.nrows();
    let k = p + DMatrix::identity(n, n) * sigma + ata * rho;
    Cholesky::new(k).ok_or_else(|| Error::Contract("QP Hessian is not positive definite".into()))
}

impl QpSolver {
    pub fn new(p: &DMatrix<f64>, a: &DMatrix<f64>, settings: &QpSettings) -> Result<Self> {
        if p.nrows() != p.ncols() || a.ncols() != p.nrows() {
            return Err(Error::Contract("inconsistent QP dimensions".into()));
        }
        if (p - p.transpose()).amax() > 1e-9 * (1.0 + p.amax()) {
            return Err(Error::Contract("QP Hessian is not symmetric".into()));
        }
        if Cholesky::new(p.clone()).is_none() {
            return Err(Error::Contract("QP Hessian is not positive definite".into()));
        }
        if !(settings.rho > 0.0 && settings.sigma > 0.0 && settings.alpha > 0.0 && settings.alpha < 2.0) {
            return Err(Error::Parameter("ADMM requires rho > 0, sigma > 0 and alpha in (0, 2)".into()));
        }
        let ata = a.tr_mul(a);
        let chol = factor(p, &ata, settings.sigma, settings.rho)?;
        Ok(Self { p: p.clone(), a: a.clone(), ata, sigma: settings.sigma, rho: settings.rho, chol })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    fn set_rho(&mut self, rho: f64) -> Result<()> {
        self.chol = factor(&self.p, &self.ata, self.sigma, rho)?;
        self.rho = rho;
        Ok(())
    }

    /// Solves with linear term `q` and bounds `l ≤ Ax ≤ u`, optionally
    /// warm-started from a primal–dual pair.
    pub fn solve(
        &mut self,
        q: &DVector<f64>,
        l: &DVector<f64>,
        u: &DVector<f64>,
        settings: &QpSettings,
        warm: Option<(&DVector<f64>, &DVector<f64>)>,
    ) -> Result<QpSolution> {
        let n = self.p.nrows();
        let m = self.a.nrows();
        if q.len() != n || l.len() != m || u.len() != m {
            return Err(Error::Contract("inconsistent QP dimensions".into()));
        }
        let project = |v: &DVector<f64>| DVector::from_fn(m, |i, _| v[i].clamp(l[i], u[i]));
        let (mut x, mut y) = match warm {
            Some((x0, y0)) if x0.len() == n && y0.len() == m => (x0.clone(), y0.clone()),
            _ => (DVector::zeros(n), DVector::zeros(m)),
        };
        let mut z = project(&(&self.a * &x));

        let alpha = settings.alpha;
        let check_every = settings.check_every.max(1);
        let mut diag = QpDiagnostics::default();
        let mut best: Option<(f64, DVector<f64>, DVector<f64>, f64, f64)> = None;
        let mut best_feasible = f64::INFINITY;
        let mut early = if settings.polish && warm.is_some() { self.polish(q, l, u, &x, &y, settings.tol) } else { None };
        let objective = |p: &DMatrix<f64>, x: &DVector<f64>| 0.5 * x.dot(&(p * x)) + q.dot(x);

        for it in 1..=settings.max_iter {
            if early.is_some() {
                break;
            }
            let rhs = &x * self.sigma - q + self.a.tr_mul(&(&z * self.rho - &y));
            let xt = self.chol.solve(&rhs);
            let zt = &self.a * &xt;
            x = &xt * alpha + &x * (1.0 - alpha);
            let zr = &zt * alpha + &z * (1.0 - alpha);
            let z_new = project(&(&zr + &y / self.rho));
            y += (&zr - &z_new) * self.rho;
            z = z_new;
            diag.iterations = it;

            if it % check_every != 0 && it != settings.max_iter {
                continue;
            }
            let ax = &self.a * &x;
            let px = &self.p * &x;
            let aty = self.a.tr_mul(&y);
            let prim = if m > 0 { (&ax - &z).amax() } else { 0.0 };
            let dual = (&px + q + &aty).amax();
            let prim_scale = if m > 0 { ax.amax().max(z.amax()) } else { 0.0 };
            let dual_scale = px.amax().max(aty.amax()).max(q.amax());
            let eps_p = settings.tol * (1.0 + prim_scale);
            let eps_d = settings.tol * (1.0 + dual_scale);
            let score = (prim / eps_p).max(dual / eps_d);
            if best.as_ref().is_none_or(|b| score <= b.0) {
                best = Some((score, x.clone(), y.clone(), prim, dual));
            }
            if settings.record_trace {
                if prim <= eps_p {
                    best_feasible = best_feasible.min(objective(&self.p, &x));
                }
                diag.cost_trace.push(best_feasible);
            }
            if prim <= eps_p && dual <= eps_d {
                diag.converged = true;
                break;
            }
            if settings.polish && it % POLISH_EVERY == 0 {
                if let Some(found) = self.polish(q, l, u, &x, &y, settings.tol) {
                    early = Some(found);
                    break;
                }
            }
            if settings.adaptive_rho && m > 0 && it % (5 * check_every) == 0 {
                let ratio = (prim / (prim_scale + 1e-30)) / (dual / (dual_scale + 1e-30) + 1e-30);
                let rho_new = (self.rho * ratio.sqrt()).clamp(1e-6, 1e6);
                if rho_new > 5.0 * self.rho || rho_new < 0.2 * self.rho {
                    self.set_rho(rho_new)?;
                }
            }
        }

        if let Some((x, y, pr, du)) = early {
            diag.polished = true;
            diag.converged = true;
            diag.primal_residual = pr;
            diag.dual_residual = du;
            let objective = objective(&self.p, &x);
            return Ok(QpSolution { x, y, objective, diagnostics: diag });
        }
        let (_, bx, by, prim, dual) = best.unwrap_or_else(|| (0.0, x.clone(), y.clone(), f64::INFINITY, f64::INFINITY));
        let (mut x, mut y) = if diag.converged { (x, y) } else { (bx, by) };
        diag.primal_residual = prim;
        diag.dual_residual = dual;
        if settings.polish {
            if let Some((xp, yp, pr, du)) = self.polish(q, l, u, &x, &y, settings.tol) {
                x = xp;
                y = yp;
                diag.polished = true;
                diag.converged = true;
                diag.primal_residual = pr;
                diag.dual_residual = du;
            }
        }
        let objective = objective(&self.p, &x);
        Ok(QpSolution { x, y, objective, diagnostics: diag })
    }

    /// Solves the equality-constrained KKT system on the active set guessed
    /// from the ADMM iterate, then refines the set by dropping rows with
    /// wrong-signed multipliers and adding violated rows. Returns `None` if no
    /// valid KKT point is found.
    #[allow(clippy::type_complexity)]
    fn polish(
        &self,
        q: &DVector<f64>,
        l: &DVector<f64>,
        u: &DVector<f64>,
        x: &DVector<f64>,
        y: &DVector<f64>,
        tol: f64,
    ) -> Option<(DVector<f64>, DVector<f64>, f64, f64)> {
        let m = self.a.nrows();
        let z = &self.a * x;
        // -1 lower active, +1 upper active, 0 inactive
        let mut side: Vec<i8> = (0..m)
            .map(|i| {
                if l[i].is_finite() && z[i] - l[i] < -y[i] {
                    -1
                } else if u[i].is_finite() && u[i] - z[i] < y[i] {
                    1
                } else {
                    0
                }
            })
            .collect();
        for _ in 0..10 {
            let (xp, yp) = self.solve_active(q, l, u, &side)?;
            let ax = &self.a * &xp;
            let scale = 1e-9 * (1.0 + ax.amax());
            let mut changed = false;
            for i in 0..m {
                let wrong = (side[i] < 0 && yp[i] > tol) || (side[i] > 0 && yp[i] < -tol);
                if wrong {
                    side[i] = 0;
                    changed = true;
                } else if side[i] == 0 && ax[i] < l[i] - scale {
                    side[i] = -1;
                    changed = true;
                } else if side[i] == 0 && ax[i] > u[i] + scale {
                    side[i] = 1;
                    changed = true;
                }
            }
            if changed {
                continue;
            }
            let prim = (0..m).map(|i| (l[i] - ax[i]).max(ax[i] - u[i]).max(0.0)).fold(0.0, f64::max);
            let dual = (&self.p * &xp + q + self.a.tr_mul(&yp)).amax();
            let dual_scale = 1.0 + q.amax().max((&self.p * &xp).amax());
            return (dual <= tol * dual_scale).then_some((xp, yp, prim, dual));
        }
        None
    }

    fn solve_active(
        &self,
        q: &DVector<f64>,
        l: &DVector<f64>,
        u: &DVector<f64>,
        side: &[i8],
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = self.p.nrows();
        let m = self.a.nrows();
        let active: Vec<(usize, f64)> = side
            .iter()
            .enumerate()
            .filter(|(_, s)| **s != 0)
            .map(|(i, s)| (i, if *s < 0 { l[i] } else { u[i] }))
            .collect();
        let k = active.len();
        let delta = 1e-9;
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.p);
        for (r, &(i, _)) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = self.a[(i, j)];
                kkt[(j, n + r)] = self.a[(i, j)];
            }
        }
        let mut reg = kkt.clone();
        for i in 0..n {
            reg[(i, i)] += delta;
        }
        for r in 0..k {
            reg[(n + r, n + r)] -= delta;
        }
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-q));
        for (r, &(_, b)) in active.iter().enumerate() {
            rhs[n + r] = b;
        }
        let lu = reg.lu();
        let mut sol = lu.solve(&rhs)?;
        for _ in 0..3 {
            let res = &rhs - &kkt * &sol;
            sol += lu.solve(&res)?;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut yp = DVector::zeros(m);
        for (r, &(i, _)) in active.iter().enumerate() {
            yp[i] = sol[n + r];
        }
        Some((sol.rows(0, n).into_owned(), yp))
    }
}

/// Solves a dense QP from a cold start.
pub fn solve_qp(qp: &DenseQp, settings: &QpSettings) -> Result<QpSolution> {
    QpSolver::new(&qp.p, &qp.a, settings)?.solve(&qp.q, &qp.l, &qp.u, settings, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcParams {
    pub horizon: usize,
    pub dt: f64,
    pub w_e: Mat3,
    pub w_u: Mat3,
    pub v_max: Vec3,
    pub a_max: Vec3,
    pub solver: QpSettings,
}

impl Default for MpcParams {
    fn default() -> Self {
        Self {
            horizon: 40,
            dt: 0.2,
            w_e: Mat3::identity(),
            w_u: Mat3::identity() * 0.1,
            v_max: Vec3::new(8.0, 8.0, 4.0),
            a_max: Vec3::new(4.0, 4.0, 2.0),
            solver: QpSettings::default(),
        }
    }
}

impl MpcParams {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || !(self.dt > 0.0) {
            return Err(Error::Parameter("MPC needs horizon ≥ 1 and dt > 0".into()));
        }
        let sym = |m: &Mat3| (m - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax());
        if !sym(&self.w_e) || min_eigenvalue(&self.w_e) < -1e-12 {
            return Err(Error::Parameter("W_e must be symmetric positive semidefinite".into()));
        }
        if !sym(&self.w_u) || min_eigenvalue(&self.w_u) <= 0.0 {
            return Err(Error::Parameter("W_u must be symmetric positive definite".into()));
        }
        if self.v_max.iter().chain(self.a_max.iter()).any(|v| !(*v > 0.0)) {
            return Err(Error::Parameter("MPC limits must be positive".into()));
        }
        Ok(())
    }

    fn is_diagonal(&self) -> bool {
        let off = |m: &Mat3| (0..3).all(|i| (0..3).all(|j| i == j || m[(i, j)] == 0.0));
        off(&self.w_e) && off(&self.w_u)
    }
}

/// Interceptor aim point, its velocity and the fused target state.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub params: MpcParams,
    pub p_int: Vec3,
    pub v_int: Vec3,
    pub target: StateVec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub inputs: Vec<Vec3>,
    /// Predicted interceptor positions at steps 1..=N.
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub cost: f64,
    pub diagnostics: QpDiagnostics,
    pub command: GuidanceCommand,
}

/// CA rollout with zero jerk; positions at steps 1..=n.
pub fn predict_target(x: &StateVec, n: usize, dt: f64) -> Result<Vec<Vec3>> {
    if n == 0 || !(dt > 0.0) {
        return Err(Error::Parameter("target prediction needs n ≥ 1 and dt > 0".into()));
    }
    Ok((1..=n)
        .map(|k| {
            let s = extrapolate(x, k as f64 * dt);
            Vec3::new(s[0], s[1], s[2])
        })
        .collect())
}

/// Per-axis maps from the input sequence to positions and velocities at
/// steps 1..=n.
fn input_maps(n: usize, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mu = DMatrix::from_fn(n, n, |k, j| if j <= k { dt * dt * (k as f64 - j as f64 + 0.5) } else { 0.0 });
    let vu = DMatrix::from_fn(n, n, |k, j| if j <= k { dt } else { 0.0 });
    (mu, vu)
}

/// Free-response tracking error `p₀ + k·Δt·v₀ − p_tgt,k`.
fn free_errors(p: &Vec3, v: &Vec3, targets: &[Vec3], dt: f64) -> Vec<Vec3> {
    targets.iter().enumerate().map(|(k, t)| p + v * ((k + 1) as f64 * dt) - t).collect()
}

/// Condenses the full problem into a QP over `U = [u₀; u₁; …]` (three
/// entries per step). Rows: the input box followed by the velocity bounds.
pub fn condense(problem: &MpcProblem) -> Result<DenseQp> {
    let prm = &problem.params;
    let n = prm.horizon;
    let targets = predict_target(&problem.target, n, prm.dt)?;
    let (mu, vu) = input_maps(n, prm.dt);
    let e0 = free_errors(&problem.p_int, &problem.v_int, &targets, prm.dt);
    let mtm = mu.tr_mul(&mu);
    let dim = 3 * n;
    let mut p = DMatrix::zeros(dim, dim);
    for j in 0..n {
        for k in 0..n {
            for a in 0..3 {
                for b in 0..3 {
                    let mut v = mtm[(j, k)] * prm.w_e[(a, b)];
                    if j == k {
                        v += prm.w_u[(a, b)];
                    }
                    p[(3 * j + a, 3 * k + b)] = 2.0 * v;
                }
            }
        }
    }
    let mut q = DVector::zeros(dim);
    for j in 0..n {
        for k in 0..n {
            let we = prm.w_e * e0[k];
            for a in 0..3 {
                q[3 * j + a] += 2.0 * mu[(k, j)] * we[a];
            }
        }
    }
    let mut a = DMatrix::zeros(2 * dim, dim);
    let mut l = DVector::zeros(2 * dim);
    let mut u = DVector::zeros(2 * dim);
    for j in 0..n {
        for ax in 0..3 {
            let r = 3 * j + ax;
            a[(r, r)] = 1.0;
            l[r] = -prm.a_max[ax];
            u[r] = prm.a_max[ax];
            for i in 0..n {
                a[(dim + r, 3 * i + ax)] = vu[(j, i)];
            }
            l[dim + r] = -prm.v_max[ax] - problem.v_int[ax];
            u[dim + r] = prm.v_max[ax] - problem.v_int[ax];
        }
    }
    DenseQp::new(p, q, a, l, u)
}

enum Layout {
    PerAxis(Vec<QpSolver>),
    Full(QpSolver),
}

/// Warm-started receding-horizon planner. Splits into three independent
/// axis problems when both weights are diagonal.
pub struct Planner {
    params: MpcParams,
    mu: DMatrix<f64>,
    vu: DMatrix<f64>,
    layout: Layout,
    warm: Vec<Option<(DVector<f64>, DVector<f64>)>>,
}

/// Drops the first step of each of `block` stacked sequences, repeating the
/// last step; `stride` entries form one step.
fn shift(v: &DVector<f64>, block: usize, stride: usize) -> DVector<f64> {
    let seg = v.len() / block;
    DVector::from_fn(v.len(), |i, _| {
        let (b, k) = (i / seg, i % seg);
        let src = if k + stride < seg { k + stride } else { k };
        v[b * seg + src]
    })
}

impl Planner {
    pub fn new(params: MpcParams) -> Result<Self> {
        params.validate()?;
        let n = params.horizon;
        let (mu, vu) = input_maps(n, params.dt);
        let a_axis = {
            let mut a = DMatrix::zeros(2 * n, n);
            a.view_mut((0, 0), (n, n)).fill_with_identity();
            a.view_mut((n, 0), (n, n)).copy_from(&vu);
            a
        };
        let layout = if params.is_diagonal() {
            let mtm = mu.tr_mul(&mu);
            let solvers = (0..3)
                .map(|ax| {
                    let p = (&mtm * params.w_e[(ax, ax)] + DMatrix::identity(n, n) * params.w_u[(ax, ax)]) * 2.0;
                    QpSolver::new(&p, &a_axis, &params.solver)
                })
                .collect::<Result<Vec<_>>>()?;
            Layout::PerAxis(solvers)
        } else {
            let probe = MpcProblem {
                params: params.clone(),
                p_int: Vec3::zeros(),
                v_int: Vec3::zeros(),
                target: StateVec::zeros(),
            };
            let qp = condense(&probe)?;
            Layout::Full(QpSolver::new(&qp.p, &qp.a, &params.solver)?)
        };
        let slots = if matches!(layout, Layout::PerAxis(_)) { 3 } else { 1 };
        Ok(Self { params, mu, vu, layout, warm: vec![None; slots] })
    }

    pub fn params(&self) -> &MpcParams {
        &self.params
    }

    pub fn reset(&mut self) {
        self.warm.iter_mut().for_each(|w| *w = None);
    }

    /// Plans from aim point `p_int` with velocity `v_int` against the target
    /// state. A non-converged solve yields [`Error::NotConverged`] carrying
    /// the clipped first input of the best iterate.
    pub fn plan(&mut self, p_int: &Vec3, v_int: &Vec3, target: &StateVec) -> Result<MpcSolution> {
        let prm = self.params.clone();
        let n = prm.horizon;
        let targets = predict_target(target, n, prm.dt)?;
        let e0 = free_errors(p_int, v_int, &targets, prm.dt);
        let mut inputs = vec![Vec3::zeros(); n];
        let mut diag = QpDiagnostics { converged: true, polished: true, ..Default::default() };
        let mut merge = |d: &QpDiagnostics| {
            diag.iterations = diag.iterations.max(d.iterations);
            diag.primal_residual = diag.primal_residual.max(d.primal_residual);
            diag.dual_residual = diag.dual_residual.max(d.dual_residual);
            diag.converged &= d.converged;
            diag.polished &= d.polished;
            diag.cost_trace.extend_from_slice(&d.cost_trace);
        };
        match &mut self.layout {
            Layout::PerAxis(solvers) => {
                for (ax, solver) in solvers.iter_mut().enumerate() {
                    let ev = DVector::from_fn(n, |k, _| e0[k][ax]);
                    let q = self.mu.tr_mul(&ev) * (2.0 * prm.w_e[(ax, ax)]);
                    let mut l = DVector::zeros(2 * n);
                    let mut u = DVector::zeros(2 * n);
                    for k in 0..n {
                        l[k] = -prm.a_max[ax];
                        u[k] = prm.a_max[ax];
                        l[n + k] = -prm.v_max[ax] - v_int[ax];
                        u[n + k] = prm.v_max[ax] - v_int[ax];
                    }
                    let warm = self.warm[ax].as_ref().map(|(x, y)| (x, y));
                    let sol = solver.solve(&q, &l, &u, &prm.solver, warm)?;
                    for k in 0..n {
                        inputs[k][ax] = sol.x[k];
                    }
                    merge(&sol.diagnostics);
                    self.warm[ax] = Some((shift(&sol.x, 1, 1), shift(&sol.y, 2, 1)));
                }
            }
            Layout::Full(solver) => {
                let qp = condense(&MpcProblem { params: prm.clone(), p_int: *p_int, v_int: *v_int, target: *target })?;
                let warm = self.warm[0].as_ref().map(|(x, y)| (x, y));
                let sol = solver.solve(&qp.q, &qp.l, &qp.u, &prm.solver, warm)?;
                for k in 0..n {
                    inputs[k] = Vec3::new(sol.x[3 * k], sol.x[3 * k + 1], sol.x[3 * k + 2]);
                }
                merge(&sol.diagnostics);
                self.warm[0] = Some((shift(&sol.x, 1, 3), shift(&sol.y, 2, 3)));
            }
        }
        let mut v = *v_int;
        for u in inputs.iter_mut() {
            for ax in 0..3 {
                let lo = (-prm.a_max[ax]).max((-prm.v_max[ax] - v[ax]) / prm.dt);
                let hi = prm.a_max[ax].min((prm.v_max[ax] - v[ax]) / prm.dt);
                u[ax] = if lo <= hi { u[ax].clamp(lo, hi) } else { u[ax].clamp(-prm.a_max[ax], prm.a_max[ax]) };
            }
            v += *u * prm.dt;
        }
        if !diag.converged {
            return Err(Error::NotConverged { best_effort: inputs[0].into(), iterations: diag.iterations });
        }
        let mut positions = Vec::with_capacity(n);
        let mut velocities = Vec::with_capacity(n);
        let mut cost = 0.0;
        for k in 0..n {
            let mut pk = p_int + v_int * ((k + 1) as f64 * prm.dt);
            let mut vk = *v_int;
            for (j, u) in inputs.iter().enumerate().take(k + 1) {
                pk += u * self.mu[(k, j)];
                vk += u * self.vu[(k, j)];
            }
            let e = pk - targets[k];
            cost += e.dot(&(prm.w_e * e)) + inputs[k].dot(&(prm.w_u * inputs[k]));
            positions.push(pk);
            velocities.push(vk);
        }
        let dp = Vec3::new(target[0], target[1], target[2]) - p_int;
        let command = GuidanceCommand::new(inputs[0], dp.y.atan2(dp.x));
        Ok(MpcSolution { inputs, positions, velocities, cost, diagnostics: diag, command })
    }
}

/// One-shot plan from a cold start.
pub fn mpc_plan(p_int: &Vec3, v_int: &Vec3, target: &StateVec, params: &MpcParams) -> Result<MpcSolution> {
    Planner::new(params.clone())?.plan(p_int, v_int, target)
}
