//! Continuous-time vehicle models and their zero-order-hold propagation.

use nalgebra::{DMatrix, DVector, Matrix3, SVector, Vector3};

use crate::error::{Error, Result};
use crate::manifold::{exp_so3, h_theta_inv, log_so3, State};

pub const GRAVITY: f64 = 9.81;

/// Body angular rate and body-frame specific acceleration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniversalInput {
    pub omega: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl UniversalInput {
    pub fn from_vector(u: &DVector<f64>) -> Self {
        UniversalInput { omega: Vector3::new(u[0], u[1], u[2]), accel: Vector3::new(u[3], u[4], u[5]) }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(alloc::vec![self.omega.x, self.omega.y, self.omega.z, self.accel.x, self.accel.y, self.accel.z])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadrotorParams {
    /// kg
    pub mass: f64,
    /// Body-frame linear drag (kg/s), applied as `R D R^T v / m`.
    pub drag: Matrix3<f64>,
    /// m/s^2
    pub gravity: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        QuadrotorParams { mass: 1.0, drag: Matrix3::zeros(), gravity: GRAVITY }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::InvalidParameter { name: "mass", reason: "must be positive" });
        }
        if (self.drag - self.drag.transpose()).amax() > 1e-12 {
            return Err(Error::InvalidParameter { name: "drag", reason: "must be symmetric" });
        }
        if self.drag.symmetric_eigenvalues().max() > 1e-12 {
            return Err(Error::InvalidParameter { name: "drag", reason: "must be negative semidefinite" });
        }
        Ok(())
    }
}

/// Body angular rate and collective thrust (N).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadrotorInput {
    pub omega: Vector3<f64>,
    pub thrust: f64,
}

impl QuadrotorInput {
    pub fn from_vector(u: &DVector<f64>) -> Self {
        QuadrotorInput { omega: Vector3::new(u[0], u[1], u[2]), thrust: u[3] }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(alloc::vec![self.omega.x, self.omega.y, self.omega.z, self.thrust])
    }
}

/// Which model the controller and simulator use.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VehicleModel {
    /// `u = [omega, a_body]`, six inputs.
    Universal { gravity: f64 },
    /// `u = [omega, T]`, four inputs.
    Quadrotor(QuadrotorParams),
}

impl VehicleModel {
    pub fn control_dim(&self) -> usize {
        match self {
            VehicleModel::Universal { .. } => 6,
            VehicleModel::Quadrotor(_) => 4,
        }
    }

    pub fn gravity(&self) -> f64 {
        match self {
            VehicleModel::Universal { gravity } => *gravity,
            VehicleModel::Quadrotor(p) => p.gravity,
        }
    }

    /// Same model with drag removed (controller-side view in mismatch studies).
    pub fn without_drag(&self) -> Self {
        match self {
            VehicleModel::Quadrotor(p) => VehicleModel::Quadrotor(QuadrotorParams { drag: Matrix3::zeros(), ..*p }),
            other => *other,
        }
    }

    /// Zero rate plus gravity-cancelling thrust for a level vehicle.
    pub fn hover_control(&self) -> DVector<f64> {
        match self {
            VehicleModel::Universal { gravity } => UniversalInput { omega: Vector3::zeros(), accel: Vector3::z() * *gravity }.to_vector(),
            VehicleModel::Quadrotor(p) => QuadrotorInput { omega: Vector3::zeros(), thrust: p.mass * p.gravity }.to_vector(),
        }
    }

    /// Body-frame specific acceleration `a_b` held over a step from `x`.
    pub fn body_acceleration(&self, x: &State, u: &DVector<f64>) -> Vector3<f64> {
        match self {
            VehicleModel::Universal { .. } => Vector3::new(u[3], u[4], u[5]),
            VehicleModel::Quadrotor(p) => {
                let body_v = x.rotation.matrix().transpose() * x.velocity;
                Vector3::z() * (u[3] / p.mass) + p.drag * body_v / p.mass
            }
        }
    }

    pub fn propagate(&self, x: &State, u: &DVector<f64>, dt: f64) -> State {
        let omega = Vector3::new(u[0], u[1], u[2]);
        zoh_step(x, &omega, &self.body_acceleration(x, u), dt, self.gravity())
    }
}

fn zoh_step(x: &State, omega: &Vector3<f64>, accel_body: &Vector3<f64>, dt: f64, gravity: f64) -> State {
    let accel_world = x.rotation * *accel_body - Vector3::z() * gravity;
    State {
        position: x.position + x.velocity * dt + accel_world * (0.5 * dt * dt),
        rotation: x.rotation * exp_so3(&(omega * dt)),
        velocity: x.velocity + accel_world * dt,
    }
}

/// Zero-order-hold step of the universal model.
pub fn propagate_universal(x: &State, u: &UniversalInput, dt: f64, gravity: f64) -> State {
    zoh_step(x, &u.omega, &u.accel, dt, gravity)
}

/// Zero-order-hold step of the quadrotor model with drag evaluated at `x`.
pub fn propagate_quadrotor(x: &State, u: &QuadrotorInput, params: &QuadrotorParams, dt: f64) -> State {
    VehicleModel::Quadrotor(*params).propagate(x, &u.to_vector(), dt)
}

/// Control-affine form `x_dot = f(x) + g(x) u` in the rotation-vector chart
/// `theta = Log(R)`, with state ordered `(p, theta, v)`.
pub fn affine_decompose(x: &State, model: &VehicleModel) -> Result<(SVector<f64, 9>, DMatrix<f64>)> {
    let theta = log_so3(&x.rotation)?;
    let gravity = model.gravity();
    let mut f = SVector::<f64, 9>::zeros();
    f.fixed_rows_mut::<3>(0).copy_from(&x.velocity);
    f[8] = -gravity;
    let mut g = DMatrix::zeros(9, model.control_dim());
    g.view_mut((3, 0), (3, 3)).copy_from(&h_theta_inv(&theta));
    let r = x.rotation.matrix();
    match model {
        VehicleModel::Universal { .. } => g.view_mut((6, 3), (3, 3)).copy_from(r),
        VehicleModel::Quadrotor(p) => {
            let drag = r * p.drag * r.transpose() * x.velocity / p.mass;
            let mut fv = f.fixed_rows_mut::<3>(6);
            fv += drag;
            g.view_mut((6, 3), (3, 1)).copy_from(&(r.column(2) / p.mass));
        }
    }
    Ok((f, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::dynamics_residual;
    use crate::manifold::Rotation;
    use proptest::prelude::*;

    #[test]
    fn hover_is_an_equilibrium() {
        let x = State::at_rest(Vector3::new(1.0, 2.0, 3.0));
        let u = UniversalInput { omega: Vector3::zeros(), accel: Vector3::z() * GRAVITY };
        assert_eq!(propagate_universal(&x, &u, 0.1, GRAVITY), x);
        let q = QuadrotorParams { mass: 1.3, ..Default::default() };
        let uq = QuadrotorInput { omega: Vector3::zeros(), thrust: 1.3 * GRAVITY };
        let y = propagate_quadrotor(&x, &uq, &q, 0.1);
        assert!((y.position - x.position).norm() < 1e-15 && y.velocity.norm() < 1e-15);
    }

    #[test]
    fn free_fall() {
        let x = State::default();
        let u = UniversalInput { omega: Vector3::zeros(), accel: Vector3::zeros() };
        let y = propagate_universal(&x, &u, 1.0, 9.81);
        assert!((y.velocity - Vector3::new(0.0, 0.0, -9.81)).norm() < 1e-15);
        assert!((y.position - Vector3::new(0.0, 0.0, -4.905)).norm() < 1e-15);
    }

    #[test]
    fn drag_decelerates_level_flight() {
        let q = QuadrotorParams { mass: 2.0, drag: Matrix3::identity() * -0.1, gravity: GRAVITY };
        let x = State::new(Vector3::zeros(), Rotation::identity(), Vector3::new(2.0, 0.0, 0.0));
        let u = QuadrotorInput { omega: Vector3::zeros(), thrust: 2.0 * GRAVITY };
        let dt = 0.01;
        let y = propagate_quadrotor(&x, &u, &q, dt);
        // R D R^T v / m = -0.1 * 2 / 2 = -0.1 m/s^2 along x.
        assert!((y.velocity - Vector3::new(2.0 - 0.1 * dt, 0.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn affine_form_identity_chart() {
        let model = VehicleModel::Universal { gravity: GRAVITY };
        let x = State::new(Vector3::zeros(), Rotation::identity(), Vector3::new(1.0, 2.0, 3.0));
        let (f, g) = affine_decompose(&x, &model).unwrap();
        assert_eq!(f.fixed_rows::<3>(0).into_owned(), Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(g.view((3, 0), (3, 3)).into_owned(), DMatrix::<f64>::identity(3, 3));
    }

    fn random_state() -> impl Strategy<Value = State> {
        (prop::array::uniform3(-1.0f64..1.0), prop::array::uniform3(-5.0f64..5.0), prop::array::uniform3(-3.0f64..3.0))
            .prop_map(|(t, p, v)| State::new(Vector3::from(p), exp_so3(&Vector3::from(t)), Vector3::from(v)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn propagation_zeroes_dynamics_residual(
            x in random_state(),
            w in prop::array::uniform3(-2.0f64..2.0),
            a in prop::array::uniform3(-15.0f64..15.0),
            dt in 0.001f64..0.1,
        ) {
            let u = UniversalInput { omega: Vector3::from(w), accel: Vector3::from(a) };
            let y = propagate_universal(&x, &u, dt, GRAVITY);
            let r = dynamics_residual(&x, &u.omega, &u.accel, &y, dt, GRAVITY).unwrap();
            prop_assert!(r.amax() < 1e-12, "residual {}", r.amax());
        }

        #[test]
        fn quadrotor_without_drag_nests_in_universal(
            x in random_state(),
            w in prop::array::uniform3(-2.0f64..2.0),
            thrust in 0.0f64..30.0,
            mass in 0.2f64..3.0,
        ) {
            let q = QuadrotorParams { mass, ..Default::default() };
            let uq = QuadrotorInput { omega: Vector3::from(w), thrust };
            let uu = UniversalInput { omega: uq.omega, accel: Vector3::z() * (thrust / mass) };
            prop_assert_eq!(propagate_quadrotor(&x, &uq, &q, 0.05), propagate_universal(&x, &uu, 0.05, GRAVITY));
        }

        #[test]
        fn affine_form_matches_flow(
            x in random_state(),
            w in prop::array::uniform3(-2.0f64..2.0),
            a in prop::array::uniform3(-15.0f64..15.0),
        ) {
            let model = VehicleModel::Universal { gravity: GRAVITY };
            let u = UniversalInput { omega: Vector3::from(w), accel: Vector3::from(a) };
            let (f, g) = affine_decompose(&x, &model).unwrap();
            let rate = f + g * u.to_vector();
            let dt = 1e-6;
            let y = propagate_universal(&x, &u, dt, GRAVITY);
            let dtheta = (log_so3(&y.rotation).unwrap() - log_so3(&x.rotation).unwrap()) / dt;
            prop_assert!(((y.position - x.position) / dt - rate.fixed_rows::<3>(0)).norm() < 1e-4);
            prop_assert!((dtheta - rate.fixed_rows::<3>(3)).norm() < 1e-4);
            prop_assert!(((y.velocity - x.velocity) / dt - rate.fixed_rows::<3>(6)).norm() < 1e-4);
        }
    }

    #[test]
    fn free_fall_conserves_energy() {
        let q = QuadrotorParams { mass: 1.5, ..Default::default() };
        let mut x = State::new(Vector3::new(0.0, 0.0, 10.0), exp_so3(&Vector3::new(0.3, -0.2, 0.1)), Vector3::new(1.0, -2.0, 3.0));
        let energy = |s: &State| 0.5 * q.mass * s.velocity.norm_squared() + q.mass * q.gravity * s.position.z;
        let e0 = energy(&x);
        let u = QuadrotorInput { omega: Vector3::zeros(), thrust: 0.0 };
        for _ in 0..1000 {
            x = propagate_quadrotor(&x, &u, &q, 1e-3);
        }
        assert!(((energy(&x) - e0) / e0).abs() < 1e-3);
    }

    #[test]
    fn rotation_stays_valid_over_long_chains() {
        let model = VehicleModel::Universal { gravity: GRAVITY };
        let mut x = State::default();
        let u = UniversalInput { omega: Vector3::new(0.7, -1.3, 2.1), accel: Vector3::new(0.1, 0.2, 9.9) }.to_vector();
        for _ in 0..10_000 {
            x = model.propagate(&x, &u, 0.01);
        }
        assert!(x.rotation.orthonormality_error() < 1e-9);
        assert!((x.rotation.matrix().determinant() - 1.0).abs() < 1e-9);
    }
}
