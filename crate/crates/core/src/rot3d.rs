//! Rotation algebra: axis-angle vectors, 3x3 rotation matrices and the
//! continuous 6D embedding (first two matrix columns).
//!
//! Besides the value conversions this module carries the vector-Jacobian
//! products the autograd graph needs for the same maps, so the forward value
//! and its derivative live next to each other.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::scalar::Scalar;

/// Below this angle Rodrigues coefficients switch to their Taylor expansion.
pub const SMALL_ANGLE: f64 = 1e-4;
/// Above `pi - NEAR_PI` the log map extracts the axis from the symmetric part.
pub const NEAR_PI: f64 = 1e-3;
/// Orthonormality tolerance accepted by [`matrix_to_axis_angle`].
pub const ORTHO_TOL: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RotationError {
    #[error("matrix is not a rotation (orthonormality defect {defect:.3e}, det {det:.6})")]
    NotOrthonormal { defect: f64, det: f64 },
    #[error("degenerate 6D rotation: {0}")]
    Degenerate6D(&'static str),
    #[error("non-finite rotation component")]
    NonFinite,
}

/// Axis-angle rotation: direction is the axis, norm is the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle<T: Scalar>(pub Vector3<T>);

impl<T: Scalar> AxisAngle<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self(Vector3::new(x, y, z))
    }

    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    pub fn from_slice(s: &[T]) -> Self {
        Self(Vector3::new(s[0], s[1], s[2]))
    }

    pub fn angle(&self) -> T {
        self.0.norm()
    }

    /// Equivalent rotation with angle in `[0, pi]`; at exactly `pi` the first
    /// nonzero axis component is made positive.
    pub fn canonical(&self) -> Self {
        let theta = self.angle();
        if theta == T::zero() {
            return *self;
        }
        let two_pi = T::two_pi();
        let axis = self.0 / theta;
        let mut reduced = theta % two_pi;
        let mut axis = axis;
        if reduced > T::pi() {
            reduced = two_pi - reduced;
            axis = -axis;
        }
        if reduced == T::pi() {
            axis = sign_fix_first_nonzero(axis);
        }
        Self(axis * reduced)
    }

    pub fn to_matrix(&self) -> RotMat<T> {
        axis_angle_to_matrix(self)
    }
}

/// 3x3 rotation matrix. Construct through the conversions or [`RotMat::new`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotMat<T: Scalar>(Matrix3<T>);

impl<T: Scalar> RotMat<T> {
    /// Checked constructor; rejects matrices whose orthonormality defect or
    /// determinant deviate from a rotation by more than `tol`.
    pub fn new(m: Matrix3<T>, tol: f64) -> Result<Self, RotationError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(RotationError::NonFinite);
        }
        let defect = orthonormality_defect(&m);
        let det = m.determinant().as_f64();
        if defect > tol || (det - 1.0).abs() > tol {
            return Err(RotationError::NotOrthonormal { defect, det });
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix3<T>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix3<T> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<T> {
        self.0
    }

    /// Row-major flattening.
    pub fn to_row_major(&self) -> [T; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self(self.0 * other.0)
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }
}

/// Continuous 6D embedding: the first two columns of a rotation matrix,
/// `(c0x, c0y, c0z, c1x, c1y, c1z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D<T: Scalar>(pub [T; 6]);

impl<T: Scalar> Rot6D<T> {
    pub fn identity() -> Self {
        Self([T::one(), T::zero(), T::zero(), T::zero(), T::one(), T::zero()])
    }
}

/// `max |m^T m - I|` entrywise.
pub fn orthonormality_defect<T: Scalar>(m: &Matrix3<T>) -> f64 {
    let e = m.transpose() * m - Matrix3::identity();
    e.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max)
}

pub fn skew<T: Scalar>(w: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -w.z, w.y, w.z, z, -w.x, -w.y, w.x, z)
}

/// Inverse of [`skew`] applied to the antisymmetric part: `(m21 - m12, m02 - m20, m10 - m01)`.
/// Equals `<g, skew(e_i)>` for each basis vector, so it is also the adjoint of `skew`.
pub fn skew_adjoint<T: Scalar>(m: &Matrix3<T>) -> Vector3<T> {
    Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    )
}

fn sign_fix_first_nonzero<T: Scalar>(v: Vector3<T>) -> Vector3<T> {
    let eps = T::lit(1e-12);
    for i in 0..3 {
        if v[i].abs() > eps {
            return if v[i] < T::zero() { -v } else { v };
        }
    }
    v
}

/// Rodrigues coefficients `A = sin t / t`, `B = (1 - cos t) / t^2` and their
/// derivatives divided by `t`.
fn rodrigues_coefficients<T: Scalar>(theta: T) -> (T, T, T, T) {
    if theta < T::lit(SMALL_ANGLE) {
        let t2 = theta * theta;
        let a = T::one() - t2 / T::lit(6.0);
        let b = T::lit(0.5) - t2 / T::lit(24.0);
        let da = -T::one() / T::lit(3.0) + t2 / T::lit(30.0);
        let db = -T::one() / T::lit(12.0) + t2 / T::lit(180.0);
        (a, b, da, db)
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        let a = s / theta;
        let b = (T::one() - c) / t2;
        let da = (theta * c - s) / (t2 * theta);
        let db = (theta * s - T::lit(2.0) * (T::one() - c)) / (t2 * t2);
        (a, b, da, db)
    }
}

/// Exponential map (Rodrigues). The zero vector maps to the identity exactly.
pub fn axis_angle_to_matrix<T: Scalar>(aa: &AxisAngle<T>) -> RotMat<T> {
    let w = aa.0;
    if w == Vector3::zeros() {
        return RotMat::identity();
    }
    let (a, b, _, _) = rodrigues_coefficients(w.norm());
    let k = skew(&w);
    RotMat(Matrix3::identity() + k * a + k * k * b)
}

/// Vector-Jacobian product of the exponential map: given `dL/dR`, returns `dL/dw`.
pub fn axis_angle_to_matrix_vjp<T: Scalar>(w: &Vector3<T>, grad: &Matrix3<T>) -> Vector3<T> {
    let (a, b, da, db) = rodrigues_coefficients(w.norm());
    let k = skew(w);
    let kt = k.transpose();
    let g_dot_k = grad.component_mul(&k).sum();
    let g_dot_k2 = grad.component_mul(&(k * k)).sum();
    skew_adjoint(grad) * a
        + skew_adjoint(&(grad * kt + kt * grad)) * b
        + w * (da * g_dot_k + db * g_dot_k2)
}

/// Logarithm map onto canonical axis-angle.
pub fn matrix_to_axis_angle<T: Scalar>(m: &RotMat<T>) -> Result<AxisAngle<T>, RotationError> {
    let checked = RotMat::new(m.0, ORTHO_TOL)?;
    Ok(log_unchecked(checked.matrix()))
}

/// Log map without validation. Near `pi` the axis comes from the largest
/// diagonal entry of the symmetric part.
pub(crate) fn log_unchecked<T: Scalar>(r: &Matrix3<T>) -> AxisAngle<T> {
    let half = T::lit(0.5);
    let cos = ((r.trace() - T::one()) * half).max(-T::one()).min(T::one());
    let w = skew_adjoint(r) * half;
    let sin = w.norm();
    let theta = sin.atan2(cos);
    if theta < T::lit(SMALL_ANGLE) {
        let factor = T::one() + theta * theta / T::lit(6.0);
        return AxisAngle(w * factor);
    }
    if theta < T::pi() - T::lit(NEAR_PI) {
        return AxisAngle(w * (theta / sin));
    }
    // n n^T = (sym(R) - cos I) / (1 - cos)
    let sym = (r + r.transpose()) * half;
    let outer = (sym - Matrix3::identity() * cos) / (T::one() - cos);
    let mut best = 0;
    for i in 1..3 {
        if outer[(i, i)] > outer[(best, best)] {
            best = i;
        }
    }
    let col = outer.column(best).into_owned();
    let mut axis = col / col.norm();
    if axis.dot(&w) < T::zero() {
        axis = -axis;
    }
    if sin <= T::lit(1e-12) {
        axis = sign_fix_first_nonzero(axis);
    }
    AxisAngle(axis * theta)
}

/// Vector-Jacobian product of the log map `R -> w * atan2(|w|, c) / |w|` with
/// `w = vee(R - R^T) / 2` and `c = (tr R - 1) / 2`, taken in the ambient 3x3
/// space. Near `pi` the sine is clamped, so the gradient there is bounded but
/// only approximate.
pub fn matrix_to_axis_angle_vjp<T: Scalar>(r: &Matrix3<T>, grad: &Vector3<T>) -> Matrix3<T> {
    let half = T::lit(0.5);
    let c = (r.trace() - T::one()) * half;
    let w = skew_adjoint(r) * half;
    let s = w.norm();
    let theta = s.atan2(c);
    let q = grad.dot(&w);
    let s2c2 = s * s + c * c;
    let (phi, k) = if theta < T::lit(SMALL_ANGLE) {
        (T::one() + theta * theta / T::lit(6.0), -T::lit(2.0) / T::lit(3.0))
    } else {
        let se = s.max(T::lit(NEAR_PI).sin());
        let theta_s = c / s2c2;
        (theta / se, (theta_s * se - theta) / (se * se * se))
    };
    let gw = (grad * phi + w * (q * k)) * half;
    let gc = -q / s2c2 * half;
    let mut out = Matrix3::zeros();
    out[(2, 1)] += gw.x;
    out[(1, 2)] -= gw.x;
    out[(0, 2)] += gw.y;
    out[(2, 0)] -= gw.y;
    out[(1, 0)] += gw.z;
    out[(0, 1)] -= gw.z;
    for i in 0..3 {
        out[(i, i)] += gc;
    }
    out
}

/// Gram-Schmidt decoding of the 6D embedding.
pub fn sixd_to_matrix<T: Scalar>(v: &Rot6D<T>) -> Result<RotMat<T>, RotationError> {
    if v.0.iter().any(|x| !x.is_finite()) {
        return Err(RotationError::NonFinite);
    }
    let a = Vector3::new(v.0[0], v.0[1], v.0[2]);
    let b = Vector3::new(v.0[3], v.0[4], v.0[5]);
    let eps = T::lit(1e-12);
    let an = a.norm();
    if an <= eps {
        return Err(RotationError::Degenerate6D("first column is zero"));
    }
    let b1 = a / an;
    let u = b - b1 * b1.dot(&b);
    let un = u.norm();
    if un <= eps * (T::one() + b.norm()) || un <= T::lit(1e-9) * b.norm() {
        return Err(RotationError::Degenerate6D("columns are parallel or second column is zero"));
    }
    let b2 = u / un;
    let b3 = b1.cross(&b2);
    Ok(RotMat(Matrix3::from_columns(&[b1, b2, b3])))
}

/// Total version of [`sixd_to_matrix`] used inside the network: degenerate
/// inputs fall back to a deterministic orthonormal completion.
pub(crate) fn sixd_to_matrix_total<T: Scalar>(v: &[T]) -> Matrix3<T> {
    let a = Vector3::new(v[0], v[1], v[2]);
    let b = Vector3::new(v[3], v[4], v[5]);
    let eps = T::lit(1e-12);
    let an = a.norm();
    let b1 = if an > eps { a / an } else { Vector3::x() };
    let u = b - b1 * b1.dot(&b);
    let un = u.norm();
    let b2 = if un > eps {
        u / un
    } else {
        let helper = if b1.x.abs() < T::lit(0.9) { Vector3::x() } else { Vector3::y() };
        let p = helper - b1 * b1.dot(&helper);
        p / p.norm()
    };
    let b3 = b1.cross(&b2);
    Matrix3::from_columns(&[b1, b2, b3])
}

/// Vector-Jacobian product of the Gram-Schmidt decoding. Zero at degenerate inputs.
pub fn sixd_to_matrix_vjp<T: Scalar>(v: &[T], grad: &Matrix3<T>) -> [T; 6] {
    let a = Vector3::new(v[0], v[1], v[2]);
    let b = Vector3::new(v[3], v[4], v[5]);
    let eps = T::lit(1e-12);
    let an = a.norm();
    if an <= eps {
        return [T::zero(); 6];
    }
    let b1 = a / an;
    let proj = b1.dot(&b);
    let u = b - b1 * proj;
    let un = u.norm();
    if un <= eps {
        return [T::zero(); 6];
    }
    let b2 = u / un;
    let g1 = grad.column(0).into_owned();
    let g2 = grad.column(1).into_owned();
    let g3 = grad.column(2).into_owned();
    // b3 = b1 x b2
    let mut db1 = g1 + b2.cross(&g3);
    let db2 = g2 + g3.cross(&b1);
    // b2 = u / |u|
    let du = (db2 - b2 * b2.dot(&db2)) / un;
    // u = b - b1 (b1 . b)
    let db = du - b1 * b1.dot(&du);
    db1 -= b * b1.dot(&du) + du * proj;
    // b1 = a / |a|
    let da = (db1 - b1 * b1.dot(&db1)) / an;
    [da.x, da.y, da.z, db.x, db.y, db.z]
}

/// First two columns of the matrix.
pub fn matrix_to_sixd<T: Scalar>(m: &RotMat<T>) -> Rot6D<T> {
    let r = &m.0;
    Rot6D([r[(0, 0)], r[(1, 0)], r[(2, 0)], r[(0, 1)], r[(1, 1)], r[(2, 1)]])
}

/// Nearest rotation in the Frobenius sense (orthogonal polar factor with
/// determinant correction).
pub fn project_to_rotation<T: Scalar>(m: &Matrix3<T>) -> Result<RotMat<T>, RotationError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(RotationError::NonFinite);
    }
    let svd = m.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(RotationError::NotOrthonormal { defect: f64::NAN, det: f64::NAN }),
    };
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < T::zero() {
        d[(2, 2)] = -T::one();
    }
    Ok(RotMat(u * d * vt))
}

pub fn matrix_from_row_major<T: Scalar>(v: &[T]) -> Matrix3<T> {
    Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8])
}
