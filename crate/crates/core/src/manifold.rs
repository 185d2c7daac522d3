//! SO(3) primitives and the composite state manifold R3 x SO(3) x R3.
//!
//! Tangent vectors of the state are ordered `(dp, dtheta, dv)`. Retraction is
//! `p + dp`, `R * Exp(dtheta)`, `v + dv`, so rotation increments live in the
//! body frame and position/velocity increments in the world frame.

use nalgebra::{Matrix3, SVector, Vector3};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Below this rotation angle (rad) closed forms switch to Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-6;

/// `log_so3` refuses rotations with `trace(R) <= -1 + CUT_LOCUS_TOL`.
pub const CUT_LOCUS_TOL: f64 = 1e-9;

/// Tangent dimension of [`State`].
pub const STATE_DIM: usize = 9;

pub type Tangent = SVector<f64, STATE_DIM>;

/// Skew-symmetric matrix with `hat(v) * w == v.cross(&w)`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] on the skew-symmetric part of `m`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// A proper rotation matrix (body to world).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps `m`, checking orthonormality and determinant to `tol` (Frobenius).
    pub fn from_matrix(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        let r = Rotation(m);
        if r.orthonormality_error() > tol || (m.determinant() - 1.0).abs() > tol {
            return Err(Error::InvalidParameter { name: "rotation", reason: "matrix is not a proper rotation" });
        }
        Ok(r)
    }

    /// Wraps `m` without validation. The caller guarantees `m` is in SO(3).
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        exp_so3(&(axis.normalize() * angle))
    }

    /// Rotation whose body z-axis points along `z` with zero yaw heading.
    pub fn from_z_axis(z: &Vector3<f64>) -> Self {
        let z = z.normalize();
        let x_c = Vector3::x();
        let y = z.cross(&x_c);
        let y = if y.norm() < 1e-9 { Vector3::y() } else { y.normalize() };
        let x = y.cross(&z);
        Rotation(Matrix3::from_columns(&[x, y, z]))
    }

    pub fn exp(theta: &Vector3<f64>) -> Self {
        exp_so3(theta)
    }

    pub fn log(&self) -> Result<Vector3<f64>> {
        log_so3(self)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Body z-axis expressed in the world frame, `R * e3`.
    pub fn z_axis(&self) -> Vector3<f64> {
        self.0.column(2).into_owned()
    }

    /// Frobenius norm of `R^T R - I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).norm()
    }
}

impl core::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl core::ops::Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// Exponential map of SO(3) (Rodrigues).
pub fn exp_so3(theta: &Vector3<f64>) -> Rotation {
    let angle = theta.norm();
    let k = hat(theta);
    let k2 = k * k;
    if angle < SMALL_ANGLE {
        return Rotation(Matrix3::identity() + k + k2 * 0.5);
    }
    let half_sin = (0.5 * angle).sin();
    let a = angle.sin() / angle;
    let b = 2.0 * half_sin * half_sin / (angle * angle);
    Rotation(Matrix3::identity() + k * a + k2 * b)
}

/// Logarithm map of SO(3). Fails near the cut locus (angle close to pi).
pub fn log_so3(r: &Rotation) -> Result<Vector3<f64>> {
    let m = &r.0;
    let trace = m.trace();
    if trace <= -1.0 + CUT_LOCUS_TOL {
        return Err(Error::CutLocus { trace });
    }
    let axis_sin = vee(m);
    let s = axis_sin.norm();
    let c = 0.5 * (trace - 1.0);
    let angle = s.atan2(c);
    if angle < SMALL_ANGLE {
        return Ok(axis_sin * (1.0 + angle * angle / 6.0));
    }
    Ok(axis_sin * (angle / s))
}

/// Right Jacobian of SO(3), `sum_k (-1)^k / (k+1)! [theta]^k`.
pub fn h_theta(theta: &Vector3<f64>) -> Matrix3<f64> {
    let angle = theta.norm();
    let k = hat(theta);
    let k2 = k * k;
    if angle < SMALL_ANGLE {
        let k3 = k2 * k;
        let k4 = k3 * k;
        return Matrix3::identity() - k * 0.5 + k2 / 6.0 - k3 / 24.0 + k4 / 120.0;
    }
    let angle2 = angle * angle;
    let half_sin = (0.5 * angle).sin();
    let a = 2.0 * half_sin * half_sin / angle2;
    let b = (angle - angle.sin()) / (angle2 * angle);
    Matrix3::identity() - k * a + k2 * b
}

/// Inverse of [`h_theta`]; singular only at `|theta| = 2 pi`.
pub fn h_theta_inv(theta: &Vector3<f64>) -> Matrix3<f64> {
    let angle = theta.norm();
    let k = hat(theta);
    let k2 = k * k;
    if angle < SMALL_ANGLE {
        return Matrix3::identity() + k * 0.5 + k2 / 12.0;
    }
    let c = 1.0 / (angle * angle) - (1.0 + angle.cos()) / (2.0 * angle * angle.sin());
    Matrix3::identity() + k * 0.5 + k2 * c
}

/// Position, attitude and velocity of a rigid vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct State {
    /// World-frame position (m).
    pub position: Vector3<f64>,
    /// Body-to-world attitude.
    pub rotation: Rotation,
    /// World-frame velocity (m/s).
    pub velocity: Vector3<f64>,
}

impl State {
    pub fn new(position: Vector3<f64>, rotation: Rotation, velocity: Vector3<f64>) -> Self {
        State { position, rotation, velocity }
    }

    pub fn at_rest(position: Vector3<f64>) -> Self {
        State { position, rotation: Rotation::identity(), velocity: Vector3::zeros() }
    }

    pub fn boxplus(&self, delta: &Tangent) -> State {
        state_boxplus(self, delta)
    }

    /// `self ⊟ other`.
    pub fn boxminus(&self, other: &State) -> Result<Tangent> {
        state_boxminus(self, other)
    }
}

pub fn tangent(dp: &Vector3<f64>, dtheta: &Vector3<f64>, dv: &Vector3<f64>) -> Tangent {
    let mut t = Tangent::zeros();
    t.fixed_rows_mut::<3>(0).copy_from(dp);
    t.fixed_rows_mut::<3>(3).copy_from(dtheta);
    t.fixed_rows_mut::<3>(6).copy_from(dv);
    t
}

pub fn state_boxplus(x: &State, delta: &Tangent) -> State {
    let dp: Vector3<f64> = delta.fixed_rows::<3>(0).into_owned();
    let dtheta: Vector3<f64> = delta.fixed_rows::<3>(3).into_owned();
    let dv: Vector3<f64> = delta.fixed_rows::<3>(6).into_owned();
    State { position: x.position + dp, rotation: x.rotation * exp_so3(&dtheta), velocity: x.velocity + dv }
}

/// `x1 ⊟ x2 = (p1 - p2, Log(R2^T R1), v1 - v2)`.
pub fn state_boxminus(x1: &State, x2: &State) -> Result<Tangent> {
    let dtheta = log_so3(&(x2.rotation.inverse() * x1.rotation))?;
    Ok(tangent(&(x1.position - x2.position), &dtheta, &(x1.velocity - x2.velocity)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{FRAC_PI_2, PI};
    use proptest::prelude::*;

    fn close_m(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn hat_examples() {
        assert_eq!(hat(&Vector3::zeros()), Matrix3::zeros());
        let e3 = hat(&Vector3::z());
        assert_eq!(e3, Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let v = Vector3::new(1.0, 2.0, 3.0);
        let w = Vector3::new(4.0, 5.0, 6.0);
        assert_eq!(hat(&v) * w, Vector3::new(-3.0, 6.0, -3.0));
        assert_eq!(hat(&v).transpose(), -hat(&v));
        assert_eq!(vee(&hat(&v)), v);
    }

    #[test]
    fn exp_examples() {
        assert_eq!(*exp_so3(&Vector3::zeros()).matrix(), Matrix3::identity());
        let q = exp_so3(&Vector3::new(0.0, 0.0, FRAC_PI_2));
        assert!((q * Vector3::x() - Vector3::y()).norm() < 1e-15);

        // Frozen from an independent Rodrigues evaluation (scipy rotvec).
        let expected = Matrix3::new(
            0.9357548032779188,
            -0.2831649605650737,
            0.21019170595074282,
            0.30293271340263705,
            0.9505806179060914,
            -0.06803131640494,
            -0.1805400766943977,
            0.12733457491763026,
            0.9752903089530457,
        );
        let r = exp_so3(&Vector3::new(0.1, 0.2, 0.3));
        assert!(close_m(r.matrix(), &expected, 1e-14));
    }

    #[test]
    fn exp_small_angle_branch_is_continuous() {
        let t = Vector3::new(3e-7, -2e-7, 5e-7);
        let r = exp_so3(&t);
        assert!(r.orthonormality_error() < 1e-12);
        let l = log_so3(&r).unwrap();
        assert!((l - t).norm() < 1e-18);
    }

    #[test]
    fn log_examples() {
        assert_eq!(log_so3(&Rotation::identity()).unwrap(), Vector3::zeros());
        let t = Vector3::new(0.4, -0.2, 0.1);
        assert!((log_so3(&exp_so3(&t)).unwrap() - t).norm() < 1e-10);

        // Axis-angle construction about e3, independent of exp_so3.
        let (s, c) = 3.1f64.sin_cos();
        let r = Rotation::from_matrix(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0), 1e-12).unwrap();
        let l = log_so3(&r).unwrap();
        assert!((l - Vector3::new(0.0, 0.0, 3.1)).norm() < 1e-12);
    }

    #[test]
    fn log_at_pi_is_an_error() {
        let r = Rotation::from_matrix(Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0), 1e-12).unwrap();
        assert!(matches!(log_so3(&r), Err(Error::CutLocus { .. })));
    }

    fn series_h(theta: &Vector3<f64>, terms: usize) -> Matrix3<f64> {
        let k = hat(theta);
        let mut sum = Matrix3::zeros();
        let mut power = Matrix3::identity();
        let mut fact = 1.0;
        for i in 0..terms {
            fact *= (i + 1) as f64;
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sum += power * (sign / fact);
            power *= k;
        }
        sum
    }

    #[test]
    fn h_theta_examples() {
        assert_eq!(h_theta(&Vector3::zeros()), Matrix3::identity());
        let t = Vector3::new(0.3, 0.1, -0.2);
        assert!((h_theta(&t) * t - t).norm() < 1e-12);
        let t = Vector3::new(0.5, 0.0, 0.0);
        assert!(close_m(&h_theta(&t), &series_h(&t, 20), 1e-14));
    }

    #[test]
    fn h_theta_inverse() {
        for t in [Vector3::new(0.3, 0.1, -0.2), Vector3::new(1e-8, 0.0, 2e-8), Vector3::new(2.0, -1.0, 0.5)] {
            let prod = h_theta(&t) * h_theta_inv(&t);
            assert!(close_m(&prod, &Matrix3::identity(), 1e-12));
        }
    }

    #[test]
    fn boxplus_examples() {
        let x = State::new(Vector3::new(1.0, -2.0, 0.5), exp_so3(&Vector3::new(0.2, 0.1, -0.3)), Vector3::new(0.1, 0.2, 0.3));
        assert_eq!(x.boxplus(&Tangent::zeros()), x);
        assert_eq!(x.boxminus(&x).unwrap(), Tangent::zeros());

        let d = tangent(&Vector3::x(), &Vector3::new(0.0, 0.0, FRAC_PI_2), &Vector3::zeros());
        let y = State::default().boxplus(&d);
        assert_eq!(y.position, Vector3::new(1.0, 0.0, 0.0));
        assert!((y.rotation * Vector3::x() - Vector3::y()).norm() < 1e-15);
        assert_eq!(y.velocity, Vector3::zeros());
    }

    #[test]
    fn boxminus_yaw_offset() {
        let base = exp_so3(&Vector3::new(0.0, 0.0, 0.4));
        let a = State::new(Vector3::zeros(), base * Rotation::from_axis_angle(&Vector3::z(), 0.2), Vector3::zeros());
        let b = State::new(Vector3::zeros(), base, Vector3::zeros());
        let d = a.boxminus(&b).unwrap();
        assert!((d - tangent(&Vector3::zeros(), &Vector3::new(0.0, 0.0, 0.2), &Vector3::zeros())).norm() < 1e-14);
    }

    fn rotvec(max_angle: f64) -> impl Strategy<Value = Vector3<f64>> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, 1e-3f64..1.0).prop_filter_map("nonzero axis", move |(x, y, z, s)| {
            let a = Vector3::new(x, y, z);
            (a.norm() > 1e-3).then(|| a.normalize() * (s * max_angle))
        })
    }

    fn state() -> impl Strategy<Value = State> {
        (rotvec(PI - 0.05), prop::array::uniform3(-10.0f64..10.0), prop::array::uniform3(-5.0f64..5.0))
            .prop_map(|(t, p, v)| State::new(Vector3::from(p), exp_so3(&t), Vector3::from(v)))
    }

    fn delta() -> impl Strategy<Value = Tangent> {
        (rotvec(PI - 0.05), prop::array::uniform3(-3.0f64..3.0), prop::array::uniform3(-3.0f64..3.0))
            .prop_map(|(t, p, v)| tangent(&Vector3::from(p), &t, &Vector3::from(v)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn log_exp_round_trip(t in rotvec(PI - 0.05)) {
            let r = exp_so3(&t);
            prop_assert!(r.orthonormality_error() < 1e-9);
            prop_assert!((r.matrix().determinant() - 1.0).abs() < 1e-9);
            prop_assert!((log_so3(&r).unwrap() - t).norm() < 1e-9);
        }

        #[test]
        fn group_closure(a in rotvec(PI - 0.05), b in rotvec(PI - 0.05)) {
            let ra = exp_so3(&a);
            let r = ra * exp_so3(&b);
            prop_assert!(r.orthonormality_error() < 1e-9);
            prop_assert!((r.matrix().determinant() - 1.0).abs() < 1e-9);
            prop_assert!(((ra * ra.inverse()).matrix() - Matrix3::identity()).norm() < 1e-9);
        }

        #[test]
        fn boxplus_boxminus_axioms(x in state(), y in state(), d in delta()) {
            let xd = x.boxplus(&d);
            prop_assert!(xd.rotation.orthonormality_error() < 1e-9);
            prop_assert!((xd.boxminus(&x).unwrap() - d).norm() < 1e-9);
            if let Ok(e) = y.boxminus(&x) {
                let back = x.boxplus(&e);
                prop_assert!((back.position - y.position).norm() < 1e-9);
                prop_assert!((back.rotation.matrix() - y.rotation.matrix()).norm() < 1e-9);
                prop_assert!((back.velocity - y.velocity).norm() < 1e-9);
            }
        }

        #[test]
        fn h_theta_matches_series(t in rotvec(2.0)) {
            prop_assert!((h_theta(&t) * t - t).norm() < 1e-12);
            prop_assert!(close_m(&h_theta(&t), &series_h(&t, 30), 1e-10));
        }
    }
}
