//! Analytic Jacobians of every factor family against finite differences,
//! away from max-clamp kinks and the cut locus.

use fgmpc_core::factors::*;
use fgmpc_core::graph::{check_jacobians, Factor, NoiseModel, Values};
use fgmpc_core::manifold::{exp_so3, State};
use fgmpc_core::vehicle::{QuadrotorParams, VehicleModel, GRAVITY};
use nalgebra::{DVector, Matrix3, Vector3};
use proptest::prelude::*;

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-5;
const KINK: f64 = 1e-4;

fn vec3(scale: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-scale..scale).prop_map(Vector3::from)
}

fn state() -> impl Strategy<Value = State> {
    (vec3(5.0), vec3(2.5), vec3(3.0)).prop_map(|(p, th, v)| State::new(p, exp_so3(&th), v))
}

fn model() -> impl Strategy<Value = VehicleModel> {
    prop_oneof![
        Just(VehicleModel::Universal { gravity: GRAVITY }),
        (0.5..3.0f64, 0.0..0.5f64, 0.0..0.5f64).prop_map(|(mass, dxy, dz)| {
            VehicleModel::Quadrotor(QuadrotorParams { mass, drag: -Matrix3::from_diagonal(&Vector3::new(dxy, dxy, dz)), gravity: GRAVITY })
        }),
    ]
}

fn control(model: &VehicleModel, seed: [f64; 6]) -> DVector<f64> {
    match model {
        VehicleModel::Universal { .. } => DVector::from_vec(vec![seed[0], seed[1], seed[2], seed[3], seed[4], 8.0 + seed[5]]),
        VehicleModel::Quadrotor(q) => DVector::from_vec(vec![seed[0], seed[1], seed[2], q.mass * (8.0 + seed[5])]),
    }
}

fn check(factor: &dyn Factor, values: &Values) -> Result<(), TestCaseError> {
    let c = check_jacobians(factor, values, STEP).unwrap();
    prop_assert!(c.max_error < TOL, "{} {:?}", factor.family(), c);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn dynamics(x0 in state(), dth in vec3(0.5), dp in vec3(0.5), dv in vec3(0.5), seed in prop::array::uniform6(-2.0..2.0f64), m in model(), dt in 0.01..0.2f64) {
        let x1 = State::new(x0.position + dp, x0.rotation * exp_so3(&dth), x0.velocity + dv);
        let mut v = Values::new();
        v.insert_state(0, x0);
        v.insert_state(1, x1);
        v.insert_control(0, control(&m, seed));
        check(&DynamicsFactor::new(0, m, dt, NoiseModel::unit(9)), &v)?;
    }

    #[test]
    fn prior_and_reference(x in state(), dp in vec3(3.0), dth in vec3(1.7), dv in vec3(3.0)) {
        // Keeps the offset rotation at least 0.14 rad from the cut locus.
        let dth = if dth.norm() > 3.0 { dth * (3.0 / dth.norm()) } else { dth };
        let target = State::new(x.position + dp, x.rotation * exp_so3(&dth), x.velocity + dv);
        let mut v = Values::new();
        v.insert_state(2, x);
        check(&StateErrorFactor::prior(2, target, NoiseModel::unit(9)), &v)?;
        check(&StateErrorFactor::reference(2, target, NoiseModel::unit(9)), &v)?;
    }

    #[test]
    fn bound(u in prop::collection::vec(-3.0..3.0f64, 4)) {
        let bounds = ControlBounds::new(DVector::from_element(4, -1.0), DVector::from_element(4, 1.5)).unwrap();
        prop_assume!(u.iter().all(|&x| (x + 1.0).abs() > KINK && (x - 1.5).abs() > KINK));
        let mut v = Values::new();
        v.insert_control(0, DVector::from_vec(u));
        check(&ControlBoundFactor::new(0, bounds, NoiseModel::unit(4)), &v)?;
    }

    #[test]
    fn rate(a in prop::collection::vec(-3.0..3.0f64, 6), b in prop::collection::vec(-3.0..3.0f64, 6)) {
        let mut v = Values::new();
        v.insert_control(0, DVector::from_vec(a));
        v.insert_control(1, DVector::from_vec(b));
        check(&ControlRateFactor::new(0, 6, NoiseModel::unit(6)), &v)?;
    }

    #[test]
    fn distance_cbf(x in state(), centre in vec3(5.0), radius in 0.1..1.0f64, alpha in 0.1..2.0f64) {
        let obs = Obstacle::fixed(centre, radius);
        let params = CbfParams { alpha, ..Default::default() };
        prop_assume!((x.position - centre).norm() > 0.2);
        prop_assume!(cbf_constraint(&x, &obs, &params).unwrap().abs() > KINK);
        let mut v = Values::new();
        v.insert_state(0, x);
        check(&CbfFactor::new(0, obs, params).unwrap(), &v)?;
    }

    #[test]
    fn velocity_cbf(
        x in state(), centre in vec3(5.0), vel in vec3(2.0), radius in 0.1..1.0f64,
        alpha in 0.1..2.0f64, gamma in 0.05..1.5f64, theory in any::<bool>(),
        seed in prop::array::uniform6(-2.0..2.0f64), m in model(),
    ) {
        let obs = Obstacle { position: centre, velocity: vel, radius };
        let mode = if theory { ClassKMode::Extended } else { ClassKMode::Distance };
        let params = CbfParams { alpha, gamma, mode, ..Default::default() };
        let u = control(&m, seed);
        prop_assume!((x.position - centre).norm() > 0.2);
        prop_assume!(vcbf_violation(&x, &u, &obs, &params, &m).unwrap().abs() > KINK);
        let mut v = Values::new();
        v.insert_state(0, x);
        v.insert_control(0, u);
        check(&VcbfFactor::new(0, obs, params, m).unwrap(), &v)?;
    }
}
