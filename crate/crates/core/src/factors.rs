//! MPC factor catalog: dynamics, prior/reference, control bound, control
//! rate, distance barrier and velocity-extended barrier.
//!
//! Every residual has a free-function form (used by tests and the simulator)
//! and a [`Factor`] wrapper carrying keys, noise model and analytic Jacobians
//! in the tangent space of each connected variable.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix3, RowVector3, SMatrix, Vector3};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::graph::{expect_control, expect_state, Factor, NoiseModel, Variable, VariableKey};
use crate::manifold::{h_theta_inv, hat, log_so3, State, Tangent, STATE_DIM};
use crate::vehicle::VehicleModel;

pub const FAMILY_PRIOR: &str = "prior";
pub const FAMILY_REFERENCE: &str = "reference";
pub const FAMILY_DYNAMICS: &str = "dynamics";
pub const FAMILY_BOUND: &str = "bound";
pub const FAMILY_RATE: &str = "rate";
pub const FAMILY_CBF: &str = "cbf";
pub const FAMILY_VCBF: &str = "vcbf";

/// Process noise of the zero-order-hold dynamics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DynamicsNoise {
    /// m/s^2
    pub sigma_accel: f64,
    /// rad/s
    pub sigma_omega: f64,
    /// s
    pub dt: f64,
}

impl DynamicsNoise {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_accel > 0.0 && self.sigma_omega > 0.0) {
            return Err(Error::InvalidParameter { name: "dynamics noise", reason: "sigmas must be positive" });
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParameter { name: "dt", reason: "must be positive" });
        }
        Ok(())
    }
}

/// Covariance of the dynamics residual, ordered `(p, theta, v)`.
pub fn dynamics_covariance(noise: &DynamicsNoise) -> SMatrix<f64, 9, 9> {
    let dt = noise.dt;
    let sa2 = noise.sigma_accel * noise.sigma_accel;
    let sw2 = noise.sigma_omega * noise.sigma_omega;
    let mut p = SMatrix::<f64, 9, 9>::zeros();
    let i3 = Matrix3::identity();
    p.fixed_view_mut::<3, 3>(0, 0).copy_from(&(i3 * (0.25 * dt * dt * sa2)));
    p.fixed_view_mut::<3, 3>(0, 6).copy_from(&(i3 * (0.5 * dt * sa2)));
    p.fixed_view_mut::<3, 3>(6, 0).copy_from(&(i3 * (0.5 * dt * sa2)));
    p.fixed_view_mut::<3, 3>(3, 3).copy_from(&(i3 * sw2));
    p.fixed_view_mut::<3, 3>(6, 6).copy_from(&(i3 * sa2));
    p * (dt * dt)
}

/// Relative diagonal loading added to [`dynamics_covariance`] before
/// inversion. The position/velocity block is rank deficient (both rows are
/// driven by the same acceleration noise).
pub const DYNAMICS_COVARIANCE_LOADING: f64 = 1e-6;

pub fn dynamics_noise_model(noise: &DynamicsNoise) -> Result<NoiseModel> {
    noise.validate()?;
    let p = dynamics_covariance(noise);
    let loading = DYNAMICS_COVARIANCE_LOADING * p.diagonal().max();
    let cov = DMatrix::from_fn(9, 9, |i, j| p[(i, j)] + if i == j { loading } else { 0.0 });
    NoiseModel::from_covariance(&cov)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl ControlBounds {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidParameter { name: "control bounds", reason: "dimension mismatch" });
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidParameter { name: "control bounds", reason: "lower exceeds upper" });
        }
        Ok(ControlBounds { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

/// Spherical obstacle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Obstacle {
    /// World-frame center (m).
    pub position: Vector3<f64>,
    /// World-frame velocity (m/s).
    pub velocity: Vector3<f64>,
    /// m
    pub radius: f64,
}

impl Obstacle {
    pub fn fixed(position: Vector3<f64>, radius: f64) -> Self {
        Obstacle { position, velocity: Vector3::zeros(), radius }
    }
}

/// Which barrier value enters the class-K term of the velocity-extended
/// residual.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ClassKMode {
    /// `alpha * h_cbf` (distance barrier).
    #[default]
    Distance,
    /// `alpha * h_vcbf`, the barrier whose derivative is constrained.
    Extended,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CbfParams {
    /// Class-K gain (1/s).
    pub alpha: f64,
    /// Velocity-extension gain (s). Zero selects the distance barrier.
    pub gamma: f64,
    /// Added to the obstacle radius to get `d_safe` (m).
    pub margin: f64,
    pub mode: ClassKMode,
    /// Scalar information weight of each barrier factor.
    pub weight: f64,
}

impl Default for CbfParams {
    fn default() -> Self {
        CbfParams { alpha: 1.0, gamma: 0.0, margin: 0.3, mode: ClassKMode::Distance, weight: 1.0 }
    }
}

impl CbfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidParameter { name: "cbf.alpha", reason: "must be positive" });
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidParameter { name: "cbf.gamma", reason: "must be non-negative" });
        }
        if !(self.margin >= 0.0) {
            return Err(Error::InvalidParameter { name: "cbf.margin", reason: "must be non-negative" });
        }
        if !(self.weight > 0.0) {
            return Err(Error::InvalidParameter { name: "cbf.weight", reason: "must be positive" });
        }
        Ok(())
    }

    pub fn d_safe(&self, obstacle: &Obstacle) -> f64 {
        obstacle.radius + self.margin
    }
}

fn set3<const R: usize, const C: usize>(m: &mut SMatrix<f64, R, C>, r: usize, c: usize, b: &Matrix3<f64>) {
    m.fixed_view_mut::<3, 3>(r, c).copy_from(b);
}

fn to_dmatrix<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

/// Zero-order-hold dynamics residual between `x_k` and `x_k1` under body rate
/// `omega` and body specific acceleration `accel`.
pub fn dynamics_residual(x_k: &State, omega: &Vector3<f64>, accel: &Vector3<f64>, x_k1: &State, dt: f64, gravity: f64) -> Result<Tangent> {
    let rt = x_k.rotation.matrix().transpose();
    let e3g = Vector3::z() * gravity;
    let dp = x_k1.position - x_k.velocity * dt + e3g * (0.5 * dt * dt) - x_k.position;
    let dv = x_k1.velocity - x_k.velocity + e3g * dt;
    let rp = rt * dp - accel * (0.5 * dt * dt);
    let rtheta = log_so3(&(x_k.rotation.inverse() * x_k1.rotation))? - omega * dt;
    let rv = rt * dv - accel * dt;
    Ok(crate::manifold::tangent(&rp, &rtheta, &rv))
}

struct DynamicsJacobians {
    residual: Tangent,
    d_xk: SMatrix<f64, 9, 9>,
    d_xk1: SMatrix<f64, 9, 9>,
}

fn dynamics_with_jacobians(
    x_k: &State,
    omega: &Vector3<f64>,
    accel: &Vector3<f64>,
    x_k1: &State,
    dt: f64,
    gravity: f64,
) -> Result<DynamicsJacobians> {
    let rt = x_k.rotation.matrix().transpose();
    let e3g = Vector3::z() * gravity;
    let dp = x_k1.position - x_k.velocity * dt + e3g * (0.5 * dt * dt) - x_k.position;
    let dv = x_k1.velocity - x_k.velocity + e3g * dt;
    let relative = x_k.rotation.inverse() * x_k1.rotation;
    let theta = log_so3(&relative)?;
    let residual = crate::manifold::tangent(&(rt * dp - accel * (0.5 * dt * dt)), &(theta - omega * dt), &(rt * dv - accel * dt));

    let jr_inv = h_theta_inv(&theta);
    let mut d_xk = SMatrix::<f64, 9, 9>::zeros();
    set3(&mut d_xk, 0, 0, &-rt);
    set3(&mut d_xk, 0, 3, &hat(&(rt * dp)));
    set3(&mut d_xk, 0, 6, &(-rt * dt));
    set3(&mut d_xk, 3, 3, &(-jr_inv * relative.matrix().transpose()));
    set3(&mut d_xk, 6, 3, &hat(&(rt * dv)));
    set3(&mut d_xk, 6, 6, &-rt);

    let mut d_xk1 = SMatrix::<f64, 9, 9>::zeros();
    set3(&mut d_xk1, 0, 0, &rt);
    set3(&mut d_xk1, 3, 3, &jr_inv);
    set3(&mut d_xk1, 6, 6, &rt);

    Ok(DynamicsJacobians { residual, d_xk, d_xk1 })
}

/// `max(u - u_max, 0) + max(u_min - u, 0)`.
pub fn control_bound_residual(u: &DVector<f64>, bounds: &ControlBounds) -> DVector<f64> {
    DVector::from_fn(u.len(), |i, _| (u[i] - bounds.upper[i]).max(0.0) + (bounds.lower[i] - u[i]).max(0.0))
}

pub fn control_rate_residual(u_k: &DVector<f64>, u_k1: &DVector<f64>) -> DVector<f64> {
    u_k - u_k1
}

/// `x ⊟ x_ref`.
pub fn state_error_residual(x: &State, x_ref: &State) -> Result<Tangent> {
    x.boxminus(x_ref)
}

fn relative_position(p: &Vector3<f64>, obstacle: &Obstacle) -> Result<(Vector3<f64>, f64)> {
    let rel = p - obstacle.position;
    let d = rel.norm();
    if !(d > 0.0) {
        return Err(Error::CoincidentPoints);
    }
    Ok((rel, d))
}

/// Distance barrier `1/d_safe - 1/d_o`; non-negative iff `d_o >= d_safe`.
pub fn cbf_h(p: &Vector3<f64>, obstacle: &Obstacle, d_safe: f64) -> Result<f64> {
    let (_, d) = relative_position(p, obstacle)?;
    Ok(1.0 / d_safe - 1.0 / d)
}

/// `alpha h + h_dot` for the distance barrier (obstacle treated as fixed
/// over the step). The residual is `max(-margin, 0)`.
pub fn cbf_constraint(x: &State, obstacle: &Obstacle, params: &CbfParams) -> Result<f64> {
    let (rel, d) = relative_position(&x.position, obstacle)?;
    let h = 1.0 / params.d_safe(obstacle) - 1.0 / d;
    let h_dot = rel.dot(&x.velocity) / (d * d * d);
    Ok(params.alpha * h + h_dot)
}

pub fn cbf_residual(x: &State, obstacle: &Obstacle, params: &CbfParams) -> Result<f64> {
    Ok((-cbf_constraint(x, obstacle, params)?).max(0.0))
}

fn cbf_residual_with_jacobian(x: &State, obstacle: &Obstacle, params: &CbfParams) -> Result<(f64, SMatrix<f64, 1, 9>)> {
    let (rel, d) = relative_position(&x.position, obstacle)?;
    let d3 = d * d * d;
    let h = 1.0 / params.d_safe(obstacle) - 1.0 / d;
    let rv = rel.dot(&x.velocity);
    let arg = -(params.alpha * h + rv / d3);
    let mut jac = SMatrix::<f64, 1, 9>::zeros();
    if arg > 0.0 {
        let dh_dp = rel.transpose() / d3;
        let dhdot_dp = x.velocity.transpose() / d3 - rel.transpose() * (3.0 * rv / (d3 * d * d));
        jac.fixed_view_mut::<1, 3>(0, 0).copy_from(&(-(dh_dp * params.alpha) - dhdot_dp));
        jac.fixed_view_mut::<1, 3>(0, 6).copy_from(&-dh_dp);
    }
    Ok((arg.max(0.0), jac))
}

/// Velocity-extended barrier `1/d_safe - 1/d_o + gamma n^T (v_b - v_o)`.
pub fn vcbf_h(x: &State, obstacle: &Obstacle, params: &CbfParams) -> Result<f64> {
    let (rel, d) = relative_position(&x.position, obstacle)?;
    let n = rel / d;
    Ok(1.0 / params.d_safe(obstacle) - 1.0 / d + params.gamma * n.dot(&(x.velocity - obstacle.velocity)))
}

/// World acceleration the barrier derivative sees, and its partials with
/// respect to the body rotation increment and the control. Drag is excluded.
fn barrier_acceleration(x: &State, u: &DVector<f64>, model: &VehicleModel) -> (Vector3<f64>, Matrix3<f64>, DMatrix<f64>) {
    let r = x.rotation.matrix();
    let m = model.control_dim();
    let mut d_u = DMatrix::zeros(3, m);
    let body = match model {
        VehicleModel::Universal { .. } => {
            d_u.view_mut((0, 3), (3, 3)).copy_from(r);
            Vector3::new(u[3], u[4], u[5])
        }
        VehicleModel::Quadrotor(p) => {
            d_u.view_mut((0, 3), (3, 1)).copy_from(&(r.column(2) / p.mass));
            Vector3::z() * (u[3] / p.mass)
        }
    };
    let accel = r * body - Vector3::z() * model.gravity();
    (accel, -r * hat(&body), d_u)
}

struct VcbfEval {
    residual: f64,
    d_state: SMatrix<f64, 1, 9>,
    d_control: DMatrix<f64>,
}

fn vcbf_eval(x: &State, u: &DVector<f64>, obstacle: &Obstacle, params: &CbfParams, model: &VehicleModel) -> Result<VcbfEval> {
    let (rel, d) = relative_position(&x.position, obstacle)?;
    let gamma = params.gamma;
    let n = rel / d;
    let v = x.velocity;
    let w = v - obstacle.velocity;
    let proj = Matrix3::identity() - n * n.transpose();
    let d3 = d * d * d;

    let h_cbf = 1.0 / params.d_safe(obstacle) - 1.0 / d;
    let h_v = h_cbf + gamma * n.dot(&w);
    let dh_dp: RowVector3<f64> = rel.transpose() / d3 + (w.transpose() * proj) * (gamma / d);
    let dh_dv: RowVector3<f64> = n.transpose() * gamma;

    let (accel, d_accel_dtheta, d_accel_du) = barrier_acceleration(x, u, model);
    let h_dot = dh_dp.dot(&v.transpose()) + dh_dv.dot(&accel.transpose());

    let (class_k, dk_dp, dk_dv) = match params.mode {
        ClassKMode::Distance => (h_cbf, rel.transpose() / d3, RowVector3::zeros()),
        ClassKMode::Extended => (h_v, dh_dp, dh_dv),
    };
    let arg = -h_dot - params.alpha * class_k;

    let m = model.control_dim();
    let mut d_state = SMatrix::<f64, 1, 9>::zeros();
    let mut d_control = DMatrix::zeros(1, m);
    if arg > 0.0 {
        // d(h_dot)/dp, term by term.
        let rv = rel.dot(&v);
        let a_n = n.dot(&w);
        let b_n = n.dot(&v);
        let da = w.transpose() * proj / d;
        let db = v.transpose() * proj / d;
        let t1 = v.transpose() / d3 - rel.transpose() * (3.0 * rv / (d3 * d * d));
        let t2 = (-(da * b_n + db * a_n) / d - n.transpose() * ((w.dot(&v) - a_n * b_n) / (d * d))) * gamma;
        let t3 = accel.transpose() * proj * (gamma / d);
        let dhdot_dp = t1 + t2 + t3;
        let dhdot_dv = rel.transpose() / d3 + (v.transpose() + w.transpose() - n.transpose() * (a_n + b_n)) * (gamma / d);
        let dhdot_dtheta = dh_dv * d_accel_dtheta;

        d_state.fixed_view_mut::<1, 3>(0, 0).copy_from(&(-dhdot_dp - dk_dp * params.alpha));
        d_state.fixed_view_mut::<1, 3>(0, 3).copy_from(&-dhdot_dtheta);
        d_state.fixed_view_mut::<1, 3>(0, 6).copy_from(&(-dhdot_dv - dk_dv * params.alpha));
        let dh_dv_d = DMatrix::from_row_slice(1, 3, dh_dv.as_slice());
        d_control = -(dh_dv_d * d_accel_du);
    }
    Ok(VcbfEval { residual: arg.max(0.0), d_state, d_control })
}

/// `-h_dot_vcbf - alpha * h_classK`, the pre-clamp value of the residual.
pub fn vcbf_violation(x: &State, u: &DVector<f64>, obstacle: &Obstacle, params: &CbfParams, model: &VehicleModel) -> Result<f64> {
    let (rel, d) = relative_position(&x.position, obstacle)?;
    let n = rel / d;
    let w = x.velocity - obstacle.velocity;
    let proj = Matrix3::identity() - n * n.transpose();
    let d3 = d * d * d;
    let h_cbf = 1.0 / params.d_safe(obstacle) - 1.0 / d;
    let h_v = h_cbf + params.gamma * n.dot(&w);
    let dh_dp = rel / d3 + proj * w * (params.gamma / d);
    let (accel, _, _) = barrier_acceleration(x, u, model);
    let h_dot = dh_dp.dot(&x.velocity) + params.gamma * n.dot(&accel);
    let class_k = match params.mode {
        ClassKMode::Distance => h_cbf,
        ClassKMode::Extended => h_v,
    };
    Ok(-h_dot - params.alpha * class_k)
}

/// `max(-h_dot_vcbf - alpha * h_classK, 0)`.
pub fn vcbf_residual(x: &State, u: &DVector<f64>, obstacle: &Obstacle, params: &CbfParams, model: &VehicleModel) -> Result<f64> {
    Ok(vcbf_violation(x, u, obstacle, params, model)?.max(0.0))
}

/// Row Jacobian of [`vcbf_residual`] with respect to `u`; zero when inactive.
///
/// For the quadrotor the only nonzero entry is the thrust column,
/// `-gamma cos(theta) / m` with `theta` the angle between `n` and `R e3`.
pub fn vcbf_control_jacobian(
    x: &State,
    u: &DVector<f64>,
    obstacle: &Obstacle,
    params: &CbfParams,
    model: &VehicleModel,
) -> Result<DMatrix<f64>> {
    Ok(vcbf_eval(x, u, obstacle, params, model)?.d_control)
}

/// `x ⊟ target`, used both as the initial-state prior and as the reference
/// tracking term.
#[derive(Clone, Debug)]
pub struct StateErrorFactor {
    keys: [VariableKey; 1],
    target: State,
    noise: NoiseModel,
    family: &'static str,
}

impl StateErrorFactor {
    pub fn prior(index: usize, target: State, noise: NoiseModel) -> Self {
        StateErrorFactor { keys: [VariableKey::state(index)], target, noise, family: FAMILY_PRIOR }
    }

    pub fn reference(index: usize, target: State, noise: NoiseModel) -> Self {
        StateErrorFactor { keys: [VariableKey::state(index)], target, noise, family: FAMILY_REFERENCE }
    }

    pub fn target(&self) -> &State {
        &self.target
    }
}

impl Factor for StateErrorFactor {
    fn keys(&self) -> &[VariableKey] {
        &self.keys
    }

    fn dim(&self) -> usize {
        STATE_DIM
    }

    fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn family(&self) -> &'static str {
        self.family
    }

    fn evaluate(&self, vars: &[&Variable], jacobians: Option<&mut Vec<DMatrix<f64>>>) -> Result<DVector<f64>> {
        let x = expect_state(self, vars, 0)?;
        let r = state_error_residual(x, &self.target)?;
        if let Some(jac) = jacobians {
            let mut j = SMatrix::<f64, 9, 9>::identity();
            let theta = r.fixed_rows::<3>(3).into_owned();
            set3(&mut j, 3, 3, &h_theta_inv(&theta));
            jac.clear();
            jac.push(to_dmatrix(&j));
        }
        Ok(DVector::from_column_slice(r.as_slice()))
    }
}

/// Links `(x_k, u_k, x_{k+1})` through the zero-order-hold model.
#[derive(Clone, Debug)]
pub struct DynamicsFactor {
    keys: [VariableKey; 3],
    model: VehicleModel,
    dt: f64,
    noise: NoiseModel,
}

impl DynamicsFactor {
    pub fn new(k: usize, model: VehicleModel, dt: f64, noise: NoiseModel) -> Self {
        DynamicsFactor { keys: [VariableKey::state(k), VariableKey::control(k), VariableKey::state(k + 1)], model, dt, noise }
    }
}

impl Factor for DynamicsFactor {
    fn keys(&self) -> &[VariableKey] {
        &self.keys
    }

    fn dim(&self) -> usize {
        STATE_DIM
    }

    fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn family(&self) -> &'static str {
        FAMILY_DYNAMICS
    }

    fn evaluate(&self, vars: &[&Variable], jacobians: Option<&mut Vec<DMatrix<f64>>>) -> Result<DVector<f64>> {
        let x_k = expect_state(self, vars, 0)?;
        let u = expect_control(self, vars, 1, self.model.control_dim())?;
        let x_k1 = expect_state(self, vars, 2)?;
        let omega = Vector3::new(u[0], u[1], u[2]);
        let accel = self.model.body_acceleration(x_k, u);
        let g = self.model.gravity();
        let Some(jac) = jacobians else {
            let r = dynamics_residual(x_k, &omega, &accel, x_k1, self.dt, g)?;
            return Ok(DVector::from_column_slice(r.as_slice()));
        };
        let dt = self.dt;
        let e = dynamics_with_jacobians(x_k, &omega, &accel, x_k1, dt, g)?;
        // Residual depends on the acceleration through -0.5 dt^2 a and -dt a.
        let mut d_accel = SMatrix::<f64, 9, 3>::zeros();
        d_accel.fixed_view_mut::<3, 3>(0, 0).fill_diagonal(-0.5 * dt * dt);
        d_accel.fixed_view_mut::<3, 3>(6, 0).fill_diagonal(-dt);

        let mut d_xk = e.d_xk;
        let mut d_u = DMatrix::zeros(9, self.model.control_dim());
        d_u.view_mut((3, 0), (3, 3)).copy_from(&(Matrix3::identity() * -dt));
        match &self.model {
            VehicleModel::Universal { .. } => {
                d_u.view_mut((0, 3), (9, 3)).copy_from(&d_accel);
            }
            VehicleModel::Quadrotor(p) => {
                let thrust_col = d_accel * (Vector3::z() / p.mass);
                d_u.view_mut((0, 3), (9, 1)).copy_from(&thrust_col);
                if p.drag != Matrix3::zeros() {
                    // a_b = e3 T / m + D R^T v / m.
                    let rt = x_k.rotation.matrix().transpose();
                    let da_dtheta = p.drag * hat(&(rt * x_k.velocity)) / p.mass;
                    let da_dv = p.drag * rt / p.mass;
                    let extra_theta = d_accel * da_dtheta;
                    let extra_v = d_accel * da_dv;
                    for r in 0..9 {
                        for c in 0..3 {
                            d_xk[(r, 3 + c)] += extra_theta[(r, c)];
                            d_xk[(r, 6 + c)] += extra_v[(r, c)];
                        }
                    }
                }
            }
        }
        jac.clear();
        jac.push(to_dmatrix(&d_xk));
        jac.push(d_u);
        jac.push(to_dmatrix(&e.d_xk1));
        Ok(DVector::from_column_slice(e.residual.as_slice()))
    }
}

#[derive(Clone, Debug)]
pub struct ControlBoundFactor {
    keys: [VariableKey; 1],
    bounds: ControlBounds,
    noise: NoiseModel,
}

impl ControlBoundFactor {
    pub fn new(k: usize, bounds: ControlBounds, noise: NoiseModel) -> Self {
        ControlBoundFactor { keys: [VariableKey::control(k)], bounds, noise }
    }
}

impl Factor for ControlBoundFactor {
    fn keys(&self) -> &[VariableKey] {
        &self.keys
    }

    fn dim(&self) -> usize {
        self.bounds.dim()
    }

    fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn family(&self) -> &'static str {
        FAMILY_BOUND
    }

    fn evaluate(&self, vars: &[&Variable], jacobians: Option<&mut Vec<DMatrix<f64>>>) -> Result<DVector<f64>> {
        let u = expect_control(self, vars, 0, self.bounds.dim())?;
        if let Some(jac) = jacobians {
            let d = DVector::from_fn(u.len(), |i, _| {
                if u[i] > self.bounds.upper[i] {
                    1.0
                } else if u[i] < self.bounds.lower[i] {
                    -1.0
                } else {
                    0.0
                }
            });
            jac.clear();
            jac.push(DMatrix::from_diagonal(&d));
        }
        Ok(control_bound_residual(u, &self.bounds))
    }
}

#[derive(Clone, Debug)]
pub struct ControlRateFactor {
    keys: [VariableKey; 2],
    dim: usize,
    noise: NoiseModel,
}

impl ControlRateFactor {
    pub fn new(k: usize, dim: usize, noise: NoiseModel) -> Self {
        ControlRateFactor { keys: [VariableKey::control(k), VariableKey::control(k + 1)], dim, noise }
    }
}

impl Factor for ControlRateFactor {
    fn keys(&self) -> &[VariableKey] {
        &self.keys
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn family(&self) -> &'static str {
        FAMILY_RATE
    }

    fn evaluate(&self, vars: &[&Variable], jacobians: Option<&mut Vec<DMatrix<f64>>>) -> Result<DVector<f64>> {
        let a = expect_control(self, vars, 0, self.dim)?;
        let b = expect_control(self, vars, 1, self.dim)?;
        if let Some(jac) = jacobians {
            jac.clear();
            jac.push(DMatrix::identity(self.dim, self.dim));
            jac.push(-DMatrix::identity(self.dim, self.dim));
        }
        Ok(control_rate_residual(a, b))
    }
}

/// Distance-barrier factor on one state.
#[derive(Clone, Debug)]
pub struct CbfFactor {
    keys: [VariableKey; 1],
    obstacle: Obstacle,
    params: CbfParams,
    noise: NoiseModel,
}

impl CbfFactor {
    pub fn new(k: usize, obstacle: Obstacle, params: CbfParams) -> Result<Self> {
        let noise = NoiseModel::weighted(1, params.weight)?;
        Ok(CbfFactor { keys: [VariableKey::state(k)], obstacle, params, noise })
    }

    pub fn obstacle(&self) -> &Obstacle {
        &self.obstacle
    }
}

impl Factor for CbfFactor {
    fn keys(&self) -> &[VariableKey] {
        &self.keys
    }

    fn dim(&self) -> usize {
        1
    }

    fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn family(&self) -> &'static str {
        FAMILY_CBF
    }

    fn evaluate(&self, vars: &[&Variable], jacobians: Option<&mut Vec<DMatrix<f64>>>) -> Result<DVector<f64>> {
        let x = expect_state(self, vars, 0)?;
        let (r, j) = cbf_residual_with_jacobian(x, &self.obstacle, &self.params)?;
        if let Some(jac) = jacobians {
            jac.clear();
            jac.push(to_dmatrix(&j));
        }
        Ok(DVector::from_element(1, r))
    }
}

/// Velocity-extended barrier factor on `(x_k, u_k)`.
#[derive(Clone, Debug)]
pub struct VcbfFactor {
    keys: [VariableKey; 2],
    obstacle: Obstacle,
    params: CbfParams,
    model: VehicleModel,
    noise: NoiseModel,
}

impl VcbfFactor {
    pub fn new(k: usize, obstacle: Obstacle, params: CbfParams, model: VehicleModel) -> Result<Self> {
        let noise = NoiseModel::weighted(1, params.weight)?;
        Ok(VcbfFactor { keys: [VariableKey::state(k), VariableKey::control(k)], obstacle, params, model, noise })
    }
}

impl Factor for VcbfFactor {
    fn keys(&self) -> &[VariableKey] {
        &self.keys
    }

    fn dim(&self) -> usize {
        1
    }

    fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn family(&self) -> &'static str {
        FAMILY_VCBF
    }

    fn evaluate(&self, vars: &[&Variable], jacobians: Option<&mut Vec<DMatrix<f64>>>) -> Result<DVector<f64>> {
        let x = expect_state(self, vars, 0)?;
        let u = expect_control(self, vars, 1, self.model.control_dim())?;
        match jacobians {
            None => Ok(DVector::from_element(1, vcbf_residual(x, u, &self.obstacle, &self.params, &self.model)?)),
            Some(jac) => {
                let e = vcbf_eval(x, u, &self.obstacle, &self.params, &self.model)?;
                jac.clear();
                jac.push(to_dmatrix(&e.d_state));
                jac.push(e.d_control);
                Ok(DVector::from_element(1, e.residual))
            }
        }
    }
}

/// Factor family labels in census order.
pub fn families() -> Vec<&'static str> {
    vec![FAMILY_PRIOR, FAMILY_DYNAMICS, FAMILY_REFERENCE, FAMILY_BOUND, FAMILY_RATE, FAMILY_CBF, FAMILY_VCBF]
}
