//! SE(3) kernels used by the rod and multibody code.
//!
//! Twists are ordered `(angular, linear)` everywhere in this crate. The
//! `ad` operator is the block matrix `[[ŵ, 0], [v̂, ŵ]]`, and `Ad(H)` is
//! `[[R, 0], [p̂R, R]]`, so that `exp(a·ad(x)) = Ad(exp(a·x̂))`.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};

/// Below this value of `‖ω‖·a` the Rodrigues coefficients switch to series.
pub const RODRIGUES_SERIES_THRESHOLD: f64 = 1e-4;

/// Below this value of `‖ω‖·a` the coefficients of the fifth-order
/// `ad`-polynomial (tangent integral) switch to their Taylor series. The
/// closed forms divide by up to `t^5`, so they need a much larger cutoff
/// than the Rodrigues ones.
pub const AD_POLY_SERIES_THRESHOLD: f64 = 0.5;

/// Largest rotation angle `log_se3` accepts.
pub const LOG_ANGLE_LIMIT: f64 = std::f64::consts::PI - 1e-6;

/// A six-dimensional twist `(angular, linear)`: a strain when differentiated
/// along arclength, a spatial velocity when differentiated in time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub angular: Vector3<f64>,
    pub linear: Vector3<f64>,
}

impl Twist {
    pub fn new(angular: Vector3<f64>, linear: Vector3<f64>) -> Self {
        Self { angular, linear }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            angular: Vector3::new(v[0], v[1], v[2]),
            linear: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert!(v.len() >= 6, "twist needs six components");
        Self {
            angular: Vector3::new(v[0], v[1], v[2]),
            linear: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.angular.x,
            self.angular.y,
            self.angular.z,
            self.linear.x,
            self.linear.y,
            self.linear.z,
        )
    }

    pub fn to_array(&self) -> [f64; 6] {
        let v = self.to_vector();
        [v[0], v[1], v[2], v[3], v[4], v[5]]
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }
}

impl Add for Twist {
    type Output = Twist;
    fn add(self, rhs: Twist) -> Twist {
        Twist::new(self.angular + rhs.angular, self.linear + rhs.linear)
    }
}

impl Sub for Twist {
    type Output = Twist;
    fn sub(self, rhs: Twist) -> Twist {
        Twist::new(self.angular - rhs.angular, self.linear - rhs.linear)
    }
}

impl Neg for Twist {
    type Output = Twist;
    fn neg(self) -> Twist {
        Twist::new(-self.angular, -self.linear)
    }
}

impl Mul<f64> for Twist {
    type Output = Twist;
    fn mul(self, k: f64) -> Twist {
        Twist::new(self.angular * k, self.linear * k)
    }
}

/// A rigid transform: rotation plus position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, position: Vector3<f64>) -> Self {
        Self { rotation, position }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            position: Vector3::zeros(),
        }
    }

    pub fn from_translation(p: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), p)
    }

    pub fn from_rotation(r: Matrix3<f64>) -> Self {
        Self::new(r, Vector3::zeros())
    }

    /// Rotation by `angle` about the unit vector `axis`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self::from_rotation(exp_so3(&(axis * angle)))
    }

    pub fn compose(&self, rhs: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * rhs.rotation,
            position: self.rotation * rhs.position + self.position,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            position: -(rt * self.position),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.position
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.position);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Pose {
        Pose {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            position: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    /// The 6×6 adjoint `[[R, 0], [p̂R, R]]` mapping twists in this frame's
    /// child coordinates into its parent coordinates.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let r = self.rotation;
        let pr = skew(&self.position) * r;
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        m.fixed_view_mut::<3, 3>(3, 0).copy_from(&pr);
        m
    }

    /// Applies `Ad(self)` to a twist without forming the matrix.
    pub fn adjoint_apply(&self, v: &Vector6<f64>) -> Vector6<f64> {
        let w = Vector3::new(v[0], v[1], v[2]);
        let u = Vector3::new(v[3], v[4], v[5]);
        let rw = self.rotation * w;
        let ru = self.rotation * u + self.position.cross(&rw);
        Vector6::new(rw.x, rw.y, rw.z, ru.x, ru.y, ru.z)
    }

    /// Applies `Ad(self⁻¹)` to a twist without inverting.
    pub fn adjoint_inv_apply(&self, v: &Vector6<f64>) -> Vector6<f64> {
        let w = Vector3::new(v[0], v[1], v[2]);
        let u = Vector3::new(v[3], v[4], v[5]);
        let rt = self.rotation.transpose();
        let rw = rt * w;
        let ru = rt * (u - self.position.cross(&w));
        Vector6::new(rw.x, rw.y, rw.z, ru.x, ru.y, ru.z)
    }

    /// Largest deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        e.max((self.rotation.determinant() - 1.0).abs())
    }

    pub fn is_valid(&self) -> bool {
        self.rotation.iter().all(|x| x.is_finite())
            && self.position.iter().all(|x| x.is_finite())
            && self.orthonormality_error() <= 1e-9
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// `[a×]`, the skew-symmetric cross-product matrix.
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// The 4×4 `se(3)` matrix `[[ŵ, v], [0, 0]]`.
pub fn hat_se3(x: &Twist) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&x.angular));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&x.linear);
    m
}

/// The 6×6 `ad` operator `[[ŵ, 0], [v̂, ŵ]]`.
pub fn ad_se3(x: &Twist) -> Matrix6<f64> {
    let w = skew(&x.angular);
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&w);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&w);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(&x.linear));
    m
}

/// `ad(x)·y` computed with cross products.
pub fn ad_apply(x: &Twist, y: &Vector6<f64>) -> Vector6<f64> {
    let yw = Vector3::new(y[0], y[1], y[2]);
    let yv = Vector3::new(y[3], y[4], y[5]);
    let a = x.angular.cross(&yw);
    let b = x.linear.cross(&yw) + x.angular.cross(&yv);
    Vector6::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

/// Rodrigues coefficients `(sin t / t, (1 − cos t)/t², (t − sin t)/t³)`.
fn rodrigues_coefficients(t: f64) -> (f64, f64, f64) {
    if t < RODRIGUES_SERIES_THRESHOLD {
        let t2 = t * t;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let (s, c) = t.sin_cos();
        (s / t, (1.0 - c) / (t * t), (t - s) / (t * t * t))
    }
}

/// Rotation `exp([w×])`.
pub fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    let t = w.norm();
    let (a, b, _) = rodrigues_coefficients(t);
    let k = skew(w);
    Matrix3::identity() + k * a + k * k * b
}

/// `exp(arclen · x̂)` in closed form.
pub fn exp_se3(x: &Twist, arclen: f64) -> Pose {
    let w = x.angular * arclen;
    let v = x.linear * arclen;
    let t = w.norm();
    let (a, b, c) = rodrigues_coefficients(t);
    let k = skew(&w);
    let k2 = k * k;
    let rotation = Matrix3::identity() + k * a + k2 * b;
    let left_jac = Matrix3::identity() + k * b + k2 * c;
    Pose {
        rotation,
        position: left_jac * v,
    }
}

/// `exp(arclen · ad(x))`, obtained as the adjoint of `exp_se3(x, arclen)`.
pub fn exp_adjoint(x: &Twist, arclen: f64) -> Matrix6<f64> {
    exp_se3(x, arclen).adjoint()
}

/// Normalized coefficients `g_k(t)` of the tangent integral
/// `T = X·(I + g1·B + g2·B² + g3·B³ + g4·B⁴)` with `B = X·ad(x)`, `t = X‖ω‖`.
fn tangent_coefficients(t: f64) -> [f64; 4] {
    if t < AD_POLY_SERIES_THRESHOLD {
        let t2 = t * t;
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        let t8 = t4 * t4;
        let t10 = t8 * t2;
        [
            (59_875_200.0 - 166_320.0 * t4 + 5_940.0 * t6 - 99.0 * t8 + t10) / 119_750_400.0,
            (259_459_200.0 - 308_880.0 * t4 + 8_580.0 * t6 - 117.0 * t8 + t10) / 1_556_755_200.0,
            (1_816_214_400.0 - 121_080_960.0 * t2 + 3_243_240.0 * t4 - 48_048.0 * t6 + 455.0 * t8
                - 3.0 * t10)
                / 43_589_145_600.0,
            (1_816_214_400.0 - 86_486_400.0 * t2 + 1_801_800.0 * t4 - 21_840.0 * t6 + 175.0 * t8
                - t10)
                / 217_945_728_000.0,
        ]
    } else {
        let (s, c) = t.sin_cos();
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t2 * t2;
        let t5 = t4 * t;
        [
            (4.0 - 4.0 * c - t * s) / (2.0 * t2),
            (t * (c + 4.0) - 5.0 * s) / (2.0 * t3),
            (1.0 - c - 0.5 * t * s) / t4,
            (t * (c + 2.0) - 3.0 * s) / (2.0 * t5),
        ]
    }
}

/// `∫₀^arclen exp(u·ad(x)) du`, the differential-kinematics operator of a
/// constant-strain segment.
pub fn tangent_integral(x: &Twist, arclen: f64) -> Matrix6<f64> {
    if arclen == 0.0 {
        return Matrix6::zeros();
    }
    let g = tangent_coefficients(x.angular.norm() * arclen.abs());
    let b = ad_se3(x) * arclen;
    let b2 = b * b;
    let b3 = b2 * b;
    let b4 = b2 * b2;
    (Matrix6::identity() + b * g[0] + b2 * g[1] + b3 * g[2] + b4 * g[3]) * arclen
}

/// `tangent_integral(x, arclen) · v` using four `ad` products instead of
/// matrix powers.
pub fn tangent_integral_apply(x: &Twist, arclen: f64, v: &Vector6<f64>) -> Vector6<f64> {
    if arclen == 0.0 {
        return Vector6::zeros();
    }
    let g = tangent_coefficients(x.angular.norm() * arclen.abs());
    let xs = *x * arclen;
    let b1 = ad_apply(&xs, v);
    let b2 = ad_apply(&xs, &b1);
    let b3 = ad_apply(&xs, &b2);
    let b4 = ad_apply(&xs, &b3);
    (v + b1 * g[0] + b2 * g[1] + b3 * g[2] + b4 * g[3]) * arclen
}

/// Logarithm of a pose, valid for rotation angles below `π − 1e-6`.
pub fn log_se3(p: &Pose) -> Result<Twist> {
    let r = &p.rotation;
    let axis2 = vee(r); // sinθ · axis
    let s = axis2.norm();
    let c = 0.5 * (r.trace() - 1.0);
    let angle = s.atan2(c);
    if angle >= LOG_ANGLE_LIMIT {
        return Err(Error::AngleNearPi { angle });
    }
    let scale = if angle < RODRIGUES_SERIES_THRESHOLD {
        1.0 + angle * angle / 6.0
    } else {
        angle / s
    };
    let w = axis2 * scale;
    let k = skew(&w);
    // V⁻¹ = I − ½K + γ K²
    let gamma = if angle < 1e-3 {
        1.0 / 12.0 + angle * angle / 720.0
    } else {
        (1.0 - angle * angle.sin() / (2.0 * (1.0 - angle.cos()))) / (angle * angle)
    };
    let v_inv = Matrix3::identity() - k * 0.5 + k * k * gamma;
    Ok(Twist::new(w, v_inv * p.position))
}
