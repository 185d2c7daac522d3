use fgmpc_core::clock::NullClock;
use fgmpc_core::controller::{MpcConfig, MpcController, ReferenceTrajectory};
use fgmpc_core::factors::{dynamics_noise_model, CbfParams, ControlBounds, DynamicsNoise};
use fgmpc_core::graph::{NoiseModel, SolverParams};
use fgmpc_core::vehicle::{QuadrotorParams, VehicleModel};
use nalgebra::Vector3;

fn config(model: VehicleModel) -> MpcConfig {
    let m = model.control_dim();
    let hover = model.hover_control();
    MpcConfig {
        horizon: 20,
        dt: 0.1,
        model,
        reference_noise: NoiseModel::from_weights(&[20.0, 20.0, 20.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0]).unwrap(),
        terminal_noise: None,
        rate_noise: NoiseModel::weighted(m, 0.5).unwrap(),
        bound_noise: NoiseModel::weighted(m, 100.0).unwrap(),
        dynamics_noise: dynamics_noise_model(&DynamicsNoise { sigma_accel: 0.1, sigma_omega: 0.1, dt: 0.1 }).unwrap(),
        prior_noise: NoiseModel::weighted(9, 1e6).unwrap(),
        cbf: CbfParams::default(),
        bounds: ControlBounds::new(hover.map(|h| h - 15.0), hover.map(|h| h + 15.0)).unwrap(),
        solver: SolverParams::default(),
    }
}

#[test]
fn warm_start_needs_no_more_iterations_than_cold_start() {
    let reference = ReferenceTrajectory::FigureEight { center: Vector3::new(0.0, 0.0, 1.5), ax: 2.0, ay: 1.0, period: 12.0 };
    for model in [VehicleModel::Universal { gravity: 9.81 }, VehicleModel::Quadrotor(QuadrotorParams { mass: 1.2, ..Default::default() })] {
        let cfg = config(model);
        let mut warm = MpcController::new(cfg.clone()).unwrap();
        let mut x = reference.state(0.0, 9.81);
        let mut not_worse = 0;
        for i in 0..100 {
            let t = i as f64 * cfg.dt;
            let (u, warm_sol) = warm.mpc_step(&x, t, &reference, &[], &NullClock).unwrap();
            let (_, cold_sol) = MpcController::new(cfg.clone()).unwrap().mpc_step(&x, t, &reference, &[], &NullClock).unwrap();
            if i > 0 && warm_sol.stats.iterations <= cold_sol.stats.iterations {
                not_worse += 1;
            }
            x = model.propagate(&x, &u, cfg.dt);
        }
        assert!(not_worse >= 90 * 99 / 100, "{model:?}: {not_worse} of 99");
    }
}
