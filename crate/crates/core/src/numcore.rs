//! Small dense linear-algebra and geometry helpers shared by every module.
//!
//! Vectors and fixed-size matrices come from `nalgebra`; this module adds the
//! PSD-floored Cholesky factorization, a checked rotation type and the
//! axis-rotation derivative matrices used by the measurement model.

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Stacked `[p, v, a]` target state.
pub type StateVec = SVector<f64, 9>;
pub type StateMat = SMatrix<f64, 9, 9>;

/// Default eigenvalue floor applied before covariance inversion.
pub const PSD_FLOOR: f64 = 1e-12;

const ORTHO_TOL: f64 = 1e-9;

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Contract(format!(
            "expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Contract("matrix has non-finite entries".into()));
    }
    let asym = inf_norm(&(m - m.transpose()));
    if asym > 1e-9 * (1.0 + inf_norm(m)) {
        return Err(Error::Contract(format!("matrix is not symmetric (|m - m^T| = {asym:e})")));
    }
    Ok(())
}

/// Returns `m` with its eigenvalues clamped from below at `floor`.
pub fn psd_floor(m: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    check_symmetric(m)?;
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return Ok(sym);
    }
    let lambda = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&lambda) * v.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// Cholesky factor of `m` after flooring its spectrum at `floor`.
///
/// Zero pivots (possible when `floor == 0`) produce zero columns, so the
/// factor exists for every PSD input.
pub fn cholesky_psd(m: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    let a = psd_floor(m, floor)?;
    let n = a.nrows();
    let scale = 1.0 + inf_norm(&a);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 1e-14 * scale {
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Fixed-size convenience wrapper around [`cholesky_psd`].
pub fn cholesky_psd3(m: &Mat3, floor: f64) -> Result<Mat3> {
    let l = cholesky_psd(&DMatrix::from_column_slice(3, 3, m.as_slice()), floor)?;
    Ok(Mat3::from_column_slice(l.as_slice()))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<const N: usize>(m: &SMatrix<f64, N, N>) -> f64 {
    let d = DMatrix::from_column_slice(N, N, m.as_slice());
    let sym = (&d + d.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min()
}

pub fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

/// Orthonormal 3x3 matrix with unit determinant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation3(Mat3);

impl Rotation3 {
    pub fn new(m: Mat3) -> Result<Self> {
        let ortho = (m.transpose() * m - Mat3::identity()).abs().max();
        let det = m.determinant();
        if !(ortho <= ORTHO_TOL) || !((det - 1.0).abs() <= ORTHO_TOL) {
            return Err(Error::Contract(format!(
                "not a rotation: |R^T R - I| = {ortho:e}, det = {det}"
            )));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_euler_zyx(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self(Self::about_z(yaw).0 * Self::about_y(pitch).0 * Self::about_x(roll).0)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation3) -> Self {
        Self(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }
}

/// Derivatives of the elementary X, Y and Z rotations evaluated at zero angle.
pub fn rot_axis_derivatives() -> (Mat3, Mat3, Mat3) {
    let dx = Mat3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
    let dy = Mat3::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0);
    let dz = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    (dx, dy, dz)
}

/// Clamps each component of `v` to `[-limit_i, limit_i]`.
pub fn clamp_abs(v: &Vec3, limit: &Vec3) -> Vec3 {
    Vec3::new(
        v.x.clamp(-limit.x, limit.x),
        v.y.clamp(-limit.y, limit.y),
        v.z.clamp(-limit.z, limit.z),
    )
}

pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut x = (a + std::f64::consts::PI) % two_pi;
    if x < 0.0 {
        x += two_pi;
    }
    x - std::f64::consts::PI
}
