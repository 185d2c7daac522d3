//! Closed-loop simulation: obstacle motion, plant propagation and metrics.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::{DVector, Vector3};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::clock::Clock;
use crate::controller::{MpcConfig, MpcController, ReferenceTrajectory};
use crate::error::{Error, Result};
use crate::factors::{vcbf_h, Obstacle};
use crate::manifold::{State, Tangent};
use crate::vehicle::VehicleModel;

#[derive(Clone, Debug, PartialEq)]
pub enum ObstacleMotion {
    Static {
        position: Vector3<f64>,
    },
    ConstantVelocity {
        position: Vector3<f64>,
        velocity: Vector3<f64>,
    },
    /// `center + [a cos(rate t + phase), b sin(rate t + phase), 0]`.
    Elliptical {
        center: Vector3<f64>,
        a: f64,
        b: f64,
        rate: f64,
        phase: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObstacleSpec {
    pub motion: ObstacleMotion,
    /// m
    pub radius: f64,
}

impl ObstacleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::InvalidParameter { name: "obstacle.radius", reason: "must be positive" });
        }
        if let ObstacleMotion::Elliptical { a, b, .. } = self.motion {
            if !(a > 0.0) || !(b > 0.0) {
                return Err(Error::InvalidParameter { name: "obstacle.motion", reason: "semi-axes must be positive" });
            }
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> Obstacle {
        obstacle_state(&self.motion, self.radius, t)
    }
}

pub fn obstacle_state(motion: &ObstacleMotion, radius: f64, t: f64) -> Obstacle {
    let (position, velocity) = match *motion {
        ObstacleMotion::Static { position } => (position, Vector3::zeros()),
        ObstacleMotion::ConstantVelocity { position, velocity } => (position + velocity * t, velocity),
        ObstacleMotion::Elliptical { center, a, b, rate, phase } => {
            let (s, c) = (rate * t + phase).sin_cos();
            (center + Vector3::new(a * c, b * s, 0.0), Vector3::new(-a * rate * s, b * rate * c, 0.0))
        }
    };
    Obstacle { position, velocity, radius }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub controller: MpcConfig,
    /// Model used to propagate the true vehicle.
    pub plant: VehicleModel,
    pub reference: ReferenceTrajectory,
    pub obstacles: Vec<ObstacleSpec>,
    /// Defaults to the reference state at `t = 0`.
    pub initial_state: Option<State>,
    /// s
    pub duration: f64,
    /// Plant integration step (s), at most the controller step.
    pub sim_dt: f64,
    /// Standard deviation of the tangent-space noise on the measured state.
    pub measurement_noise: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.controller.validate()?;
        self.reference.validate()?;
        if let VehicleModel::Quadrotor(q) = &self.plant {
            q.validate()?;
        }
        if self.plant.control_dim() != self.controller.model.control_dim() {
            return Err(Error::InvalidParameter { name: "plant", reason: "control dimension differs from the controller" });
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::InvalidParameter { name: "duration", reason: "must be positive" });
        }
        if !(self.sim_dt > 0.0) || self.sim_dt > self.controller.dt {
            return Err(Error::InvalidParameter { name: "sim_dt", reason: "must be in (0, dt]" });
        }
        if !(self.measurement_noise >= 0.0) {
            return Err(Error::InvalidParameter { name: "measurement_noise", reason: "must be non-negative" });
        }
        self.obstacles.iter().try_for_each(ObstacleSpec::validate)
    }

    pub fn steps(&self) -> usize {
        ((self.duration / self.controller.dt).round() as usize).max(1)
    }

    pub fn initial_state(&self) -> State {
        self.initial_state.unwrap_or_else(|| self.reference.state(0.0, self.controller.model.gravity()))
    }

    pub fn obstacles_at(&self, t: f64) -> Vec<Obstacle> {
        self.obstacles.iter().map(|o| o.at(t)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimRecord {
    /// s
    pub t: f64,
    /// True state at `t`.
    pub state: State,
    /// Control applied over `[t, t + dt)`.
    pub control: DVector<f64>,
    pub solve_ms: f64,
    pub iterations: usize,
    /// `d_o - radius` per obstacle (m).
    pub boundary_distances: Vec<f64>,
    /// Smallest barrier value over obstacles, `None` without obstacles.
    pub min_h: Option<f64>,
    /// Whether any barrier factor in the horizon had a non-zero residual.
    pub cbf_active: bool,
    pub family_norms: BTreeMap<&'static str, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimLog {
    pub records: Vec<SimRecord>,
    /// Set when the controller failed; the log holds the steps before it.
    pub failure: Option<Error>,
}

/// Runs the closed loop. Only validation errors are returned as `Err`;
/// controller failures end the run early and are stored in the log.
pub fn run_scenario(scenario: &Scenario, clock: &dyn Clock) -> Result<SimLog> {
    scenario.validate()?;
    let mut controller = MpcController::new(scenario.controller.clone())?;
    let dt = scenario.controller.dt;
    let substeps = ((dt / scenario.sim_dt) - 1e-9).ceil().max(1.0) as usize;
    let h = dt / substeps as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut x = scenario.initial_state();
    let mut records = Vec::with_capacity(scenario.steps());
    let mut failure = None;

    for i in 0..scenario.steps() {
        let t = i as f64 * dt;
        let obstacles = scenario.obstacles_at(t);
        let measured = if scenario.measurement_noise > 0.0 {
            let noise = Tangent::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal) * scenario.measurement_noise);
            x.boxplus(&noise)
        } else {
            x
        };
        let (u, solution) = match controller.mpc_step(&measured, t, &scenario.reference, &obstacles, clock) {
            Ok(out) => out,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        let cbf = &scenario.controller.cbf;
        let boundary_distances = obstacles.iter().map(|o| (x.position - o.position).norm() - o.radius).collect();
        let min_h =
            obstacles.iter().filter_map(|o| vcbf_h(&x, o, cbf).ok()).fold(None, |m: Option<f64>, h| Some(m.map_or(h, |m| m.min(h))));
        let cbf_active = ["cbf", "vcbf"].iter().any(|f| solution.family_norms.get(f).is_some_and(|n| *n > 0.0));
        records.push(SimRecord {
            t,
            state: x,
            control: u.clone(),
            solve_ms: solution.stats.wall_time_s * 1e3,
            iterations: solution.stats.iterations,
            boundary_distances,
            min_h,
            cbf_active,
            family_norms: solution.family_norms,
        });
        for _ in 0..substeps {
            x = scenario.plant.propagate(&x, &u, h);
        }
    }
    Ok(SimLog { records, failure })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub steps: usize,
    /// Position RMSE against the reference (m).
    pub rmse: f64,
    /// RMSE over steps without barrier activity; `None` if every step had
    /// some.
    pub rmse_inactive: Option<f64>,
    /// Smallest `d_o - radius` over steps and obstacles (m).
    pub min_boundary_distance: Option<f64>,
    /// Steps with `d_o < radius` for some obstacle.
    pub collisions: usize,
    pub solve_ms_median: f64,
    pub solve_ms_p99: f64,
    pub solve_ms_max: f64,
    pub solve_ms_mean: f64,
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn compute_metrics(log: &SimLog, reference: &ReferenceTrajectory) -> Result<Metrics> {
    if log.records.is_empty() {
        return Err(Error::Empty("simulation log"));
    }
    let n = log.records.len();
    let sq: Vec<f64> = log.records.iter().map(|r| (r.state.position - reference.sample(r.t).position).norm_squared()).collect();
    let inactive: Vec<f64> = log.records.iter().zip(&sq).filter(|(r, _)| !r.cbf_active).map(|(_, e)| *e).collect();
    let min_boundary_distance = log
        .records
        .iter()
        .flat_map(|r| r.boundary_distances.iter().copied())
        .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.min(d))));
    let collisions = log.records.iter().filter(|r| r.boundary_distances.iter().any(|d| *d < 0.0)).count();
    let mut times: Vec<f64> = log.records.iter().map(|r| r.solve_ms).collect();
    times.sort_by(f64::total_cmp);
    Ok(Metrics {
        steps: n,
        rmse: (sq.iter().sum::<f64>() / n as f64).sqrt(),
        rmse_inactive: (!inactive.is_empty()).then(|| (inactive.iter().sum::<f64>() / inactive.len() as f64).sqrt()),
        min_boundary_distance,
        collisions,
        solve_ms_median: percentile(&times, 0.5),
        solve_ms_p99: percentile(&times, 0.99),
        solve_ms_max: times[n - 1],
        solve_ms_mean: times.iter().sum::<f64>() / n as f64,
    })
}
