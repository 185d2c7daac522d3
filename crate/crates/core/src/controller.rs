//! Receding-horizon controller built on the factor graph.
//!
//! Each call to [`MpcController::mpc_step`] assembles a fresh chain
//!
//! ```text
//! prior - x0 - dyn - x1 - dyn - x2 ... xN
//!              |          |
//!              u0 - rate - u1 ...
//! ```
//!
//! with reference factors on `x1..xN`, bound factors on every control and
//! one barrier factor per obstacle and step. The previous solution, shifted
//! by one step, seeds the solver.

use alloc::collections::BTreeMap;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use nalgebra::{DVector, Vector3};
#[allow(unused_imports)]
use num_traits::Float;

use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::factors::{
    CbfFactor, CbfParams, ControlBoundFactor, ControlBounds, ControlRateFactor, DynamicsFactor, Obstacle, StateErrorFactor, VcbfFactor,
};
use crate::graph::{solve_lm, FactorGraph, NoiseModel, SolveStats, SolverParams, Values, VariableKey};
use crate::manifold::{Rotation, State};
use crate::vehicle::VehicleModel;

#[derive(Clone, Debug)]
pub struct MpcConfig {
    pub horizon: usize,
    /// s
    pub dt: f64,
    pub model: VehicleModel,
    /// Reference tracking (Q).
    pub reference_noise: NoiseModel,
    /// Replaces `reference_noise` on `x_N` when set.
    pub terminal_noise: Option<NoiseModel>,
    /// Control rate (R).
    pub rate_noise: NoiseModel,
    /// Control bound violation (Q_B).
    pub bound_noise: NoiseModel,
    /// Dynamics (P).
    pub dynamics_noise: NoiseModel,
    /// Prior on the measured state (P0).
    pub prior_noise: NoiseModel,
    pub cbf: CbfParams,
    pub bounds: ControlBounds,
    pub solver: SolverParams,
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::InvalidParameter { name: "horizon", reason: "must be at least 2" });
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter { name: "dt", reason: "must be positive" });
        }
        if let VehicleModel::Quadrotor(q) = &self.model {
            q.validate()?;
        }
        let m = self.model.control_dim();
        let dims: [(&'static str, usize, usize); 6] = [
            ("reference weights", self.reference_noise.dim(), 9),
            ("terminal weights", self.terminal_noise.as_ref().map_or(9, |n| n.dim()), 9),
            ("dynamics weights", self.dynamics_noise.dim(), 9),
            ("prior weights", self.prior_noise.dim(), 9),
            ("rate weights", self.rate_noise.dim(), m),
            ("bound weights", self.bound_noise.dim(), m),
        ];
        for (name, got, want) in dims {
            if got != want {
                return Err(Error::InvalidParameter { name, reason: "dimension does not match the state or control" });
            }
        }
        if self.bounds.dim() != m {
            return Err(Error::InvalidParameter { name: "bounds", reason: "dimension does not match the control" });
        }
        self.cbf.validate()?;
        self.solver.validate()
    }
}

/// Position, velocity and acceleration of the reference at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferencePoint {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

impl ReferencePoint {
    fn at_rest(position: Vector3<f64>) -> Self {
        ReferencePoint { position, velocity: Vector3::zeros(), acceleration: Vector3::zeros() }
    }

    /// Full state with the attitude implied by the acceleration (zero yaw).
    pub fn state(&self, gravity: f64) -> State {
        let thrust = self.acceleration + Vector3::z() * gravity;
        let rotation = if thrust.norm() > 1e-9 { Rotation::from_z_axis(&thrust) } else { Rotation::identity() };
        State::new(self.position, rotation, self.velocity)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ReferenceTrajectory {
    Hover {
        position: Vector3<f64>,
    },
    /// Straight segment with a trapezoidal speed profile, at rest at both
    /// ends.
    Line {
        start: Vector3<f64>,
        end: Vector3<f64>,
        cruise_speed: f64,
        accel: f64,
    },
    /// `center + [ax sin(wt), ay sin(2wt), 0]` with `w = 2 pi / period`.
    FigureEight {
        center: Vector3<f64>,
        ax: f64,
        ay: f64,
        period: f64,
    },
    /// Piecewise-linear path; `speeds[i]` is the speed on segment `i`.
    Waypoints {
        points: Vec<Vector3<f64>>,
        speeds: Vec<f64>,
    },
}

impl ReferenceTrajectory {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason| Err(Error::InvalidParameter { name: "reference", reason });
        match self {
            ReferenceTrajectory::Hover { .. } => Ok(()),
            ReferenceTrajectory::Line { cruise_speed, accel, .. } => {
                if !(*cruise_speed > 0.0) || !(*accel > 0.0) {
                    return bad("line speed and acceleration must be positive");
                }
                Ok(())
            }
            ReferenceTrajectory::FigureEight { period, .. } => {
                if !(*period > 0.0) {
                    return bad("figure-eight period must be positive");
                }
                Ok(())
            }
            ReferenceTrajectory::Waypoints { points, speeds } => {
                if points.is_empty() {
                    return bad("waypoint list is empty");
                }
                if speeds.len() + 1 != points.len() {
                    return bad("need one speed per waypoint segment");
                }
                if speeds.iter().any(|s| !(*s > 0.0)) {
                    return bad("waypoint speeds must be positive");
                }
                Ok(())
            }
        }
    }

    pub fn sample(&self, t: f64) -> ReferencePoint {
        match self {
            ReferenceTrajectory::Hover { position } => ReferencePoint::at_rest(*position),
            ReferenceTrajectory::Line { start, end, cruise_speed, accel } => {
                let delta = end - start;
                let length = delta.norm();
                if length == 0.0 {
                    return ReferencePoint::at_rest(*start);
                }
                let dir = delta / length;
                let (s, ds, dds) = trapezoid(length, *cruise_speed, *accel, t);
                ReferencePoint { position: start + dir * s, velocity: dir * ds, acceleration: dir * dds }
            }
            ReferenceTrajectory::FigureEight { center, ax, ay, period } => {
                let w = TAU / period;
                let (s1, c1) = (w * t).sin_cos();
                let (s2, c2) = (2.0 * w * t).sin_cos();
                ReferencePoint {
                    position: center + Vector3::new(ax * s1, ay * s2, 0.0),
                    velocity: Vector3::new(ax * w * c1, 2.0 * ay * w * c2, 0.0),
                    acceleration: Vector3::new(-ax * w * w * s1, -4.0 * ay * w * w * s2, 0.0),
                }
            }
            ReferenceTrajectory::Waypoints { points, speeds } => {
                let mut t0 = 0.0;
                for (seg, speed) in points.windows(2).zip(speeds) {
                    let delta = seg[1] - seg[0];
                    let length = delta.norm();
                    let span = length / speed;
                    if t < t0 + span && length > 0.0 {
                        let dir = delta / length;
                        let tau = (t - t0).max(0.0);
                        return ReferencePoint {
                            position: seg[0] + dir * (speed * tau),
                            velocity: dir * *speed,
                            acceleration: Vector3::zeros(),
                        };
                    }
                    t0 += span;
                }
                ReferencePoint::at_rest(*points.last().expect("validated non-empty"))
            }
        }
    }

    pub fn state(&self, t: f64, gravity: f64) -> State {
        self.sample(t).state(gravity)
    }

    /// `[x(t), x(t + dt), ..., x(t + n dt)]`.
    pub fn horizon(&self, t: f64, dt: f64, n: usize, gravity: f64) -> Vec<State> {
        (0..=n).map(|k| self.state(t + k as f64 * dt, gravity)).collect()
    }
}

/// Arc length, speed and acceleration along a rest-to-rest trapezoid.
fn trapezoid(length: f64, cruise: f64, accel: f64, t: f64) -> (f64, f64, f64) {
    let peak = cruise.min((length * accel).sqrt());
    let ramp = peak / accel;
    let ramp_len = 0.5 * peak * ramp;
    let coast = (length - 2.0 * ramp_len) / peak;
    let total = 2.0 * ramp + coast;
    if t <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if t < ramp {
        (0.5 * accel * t * t, accel * t, accel)
    } else if t < ramp + coast {
        (ramp_len + peak * (t - ramp), peak, 0.0)
    } else if t < total {
        let r = total - t;
        (length - 0.5 * accel * r * r, accel * r, -accel)
    } else {
        (length, 0.0, 0.0)
    }
}

/// Constant-velocity extrapolation: entry `k` holds every obstacle at
/// `k * dt`, for `k = 0..=n`.
pub fn predict_obstacles(obstacles: &[Obstacle], n: usize, dt: f64) -> Vec<Vec<Obstacle>> {
    (0..=n)
        .map(|k| {
            let tk = k as f64 * dt;
            obstacles.iter().map(|o| Obstacle { position: o.position + o.velocity * tk, ..*o }).collect()
        })
        .collect()
}

/// Rolls the model forward from `x0` under a constant control.
pub fn rollout(model: &VehicleModel, x0: &State, u: &DVector<f64>, dt: f64, n: usize) -> Values {
    let mut values = Values::new();
    let mut x = *x0;
    for k in 0..n {
        values.insert_state(k, x);
        values.insert_control(k, u.clone());
        x = model.propagate(&x, u, dt);
    }
    values.insert_state(n, x);
    values
}

/// Assembles the horizon graph. `refs` must cover `x_0..x_N`; `predicted`
/// is either empty or covers steps `0..N-1`. The returned values are a
/// hover-control rollout from `x_init`.
pub fn build_mpc_graph(config: &MpcConfig, x_init: &State, refs: &[State], predicted: &[Vec<Obstacle>]) -> Result<(FactorGraph, Values)> {
    let n = config.horizon;
    let m = config.model.control_dim();
    if refs.len() < n + 1 {
        return Err(Error::ReferenceGap { needed: n + 1, available: refs.len() });
    }
    if !predicted.is_empty() && predicted.len() < n {
        return Err(Error::InvalidParameter { name: "obstacles", reason: "prediction shorter than the horizon" });
    }

    let mut graph = FactorGraph::new();
    for k in 0..=n {
        graph.declare_state(k);
        if k < n {
            graph.declare_control(k, m);
        }
    }
    graph.add(StateErrorFactor::prior(0, *x_init, config.prior_noise.clone()))?;
    for k in 0..n {
        graph.add(DynamicsFactor::new(k, config.model, config.dt, config.dynamics_noise.clone()))?;
    }
    for (k, target) in refs.iter().enumerate().take(n + 1).skip(1) {
        let noise = match (&config.terminal_noise, k == n) {
            (Some(terminal), true) => terminal.clone(),
            _ => config.reference_noise.clone(),
        };
        graph.add(StateErrorFactor::reference(k, *target, noise))?;
    }
    for k in 0..n {
        graph.add(ControlBoundFactor::new(k, config.bounds.clone(), config.bound_noise.clone()))?;
    }
    for k in 0..n - 1 {
        graph.add(ControlRateFactor::new(k, m, config.rate_noise.clone()))?;
    }
    for (k, step) in predicted.iter().enumerate().take(n) {
        for obstacle in step {
            if config.cbf.gamma > 0.0 {
                graph.add(VcbfFactor::new(k, *obstacle, config.cbf, config.model)?)?;
            } else {
                graph.add(CbfFactor::new(k, *obstacle, config.cbf)?)?;
            }
        }
    }

    let initial = rollout(&config.model, x_init, &config.model.hover_control(), config.dt, n);
    Ok((graph, initial))
}

#[derive(Clone, Debug)]
pub struct MpcSolution {
    pub states: Vec<State>,
    pub controls: Vec<DVector<f64>>,
    pub stats: SolveStats,
    /// `sqrt(sum ||r||^2_Sigma)` per factor family at the solution.
    pub family_norms: BTreeMap<&'static str, f64>,
    pub warm_started: bool,
}

#[derive(Clone, Debug)]
pub struct MpcController {
    config: MpcConfig,
    previous: Option<MpcSolution>,
}

impl MpcController {
    pub fn new(config: MpcConfig) -> Result<Self> {
        config.validate()?;
        Ok(MpcController { config, previous: None })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    pub fn previous(&self) -> Option<&MpcSolution> {
        self.previous.as_ref()
    }

    /// Forgets the previous solution; the next step cold-starts.
    pub fn reset(&mut self) {
        self.previous = None;
    }

    /// Previous solution shifted by one step with `x_0 = x_meas`.
    fn warm_start(&self, x_meas: &State) -> Option<Values> {
        let prev = self.previous.as_ref()?;
        let n = self.config.horizon;
        let mut values = Values::new();
        values.insert_state(0, *x_meas);
        for k in 1..n {
            values.insert_state(k, prev.states[k + 1]);
        }
        let last_u = &prev.controls[n - 1];
        values.insert_state(n, self.config.model.propagate(&prev.states[n], last_u, self.config.dt));
        for k in 0..n {
            values.insert_control(k, prev.controls[(k + 1).min(n - 1)].clone());
        }
        Some(values)
    }

    /// Solves the horizon starting at `x_meas` at time `t` and returns the
    /// first control. `obstacles` are the current obstacle states.
    pub fn mpc_step(
        &mut self,
        x_meas: &State,
        t: f64,
        reference: &ReferenceTrajectory,
        obstacles: &[Obstacle],
        clock: &dyn Clock,
    ) -> Result<(DVector<f64>, MpcSolution)> {
        let cfg = &self.config;
        let n = cfg.horizon;
        let refs = reference.horizon(t, cfg.dt, n, cfg.model.gravity());
        let predicted = if obstacles.is_empty() { vec![] } else { predict_obstacles(obstacles, n, cfg.dt) };
        let (graph, cold) = build_mpc_graph(cfg, x_meas, &refs, &predicted)?;
        let warm = self.warm_start(x_meas);
        let warm_started = warm.is_some();
        let initial = warm.unwrap_or(cold);

        let (values, stats) = solve_lm(&graph, &initial, &cfg.solver, clock)?;
        let family_norms = graph.family_costs(&values)?.into_iter().map(|(f, c)| (f, c.sqrt())).collect();
        let missing = |key: VariableKey| Error::UnknownKey { key: key.to_string() };
        let states = (0..=n).map(|k| values.state(k).copied().ok_or_else(|| missing(VariableKey::state(k)))).collect::<Result<Vec<_>>>()?;
        let controls =
            (0..n).map(|k| values.control(k).cloned().ok_or_else(|| missing(VariableKey::control(k)))).collect::<Result<Vec<_>>>()?;
        let solution = MpcSolution { states, controls, stats, family_norms, warm_started };
        self.previous = Some(solution.clone());
        Ok((solution.controls[0].clone(), solution))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::clock::NullClock;
    use crate::factors::{dynamics_noise_model, DynamicsNoise};
    use crate::vehicle::{QuadrotorParams, GRAVITY};

    pub(crate) fn config(model: VehicleModel, horizon: usize) -> MpcConfig {
        let m = model.control_dim();
        let hover = model.hover_control();
        let bounds = ControlBounds::new(hover.map(|h| h - 20.0), hover.map(|h| h + 20.0)).unwrap();
        MpcConfig {
            horizon,
            dt: 0.1,
            model,
            reference_noise: NoiseModel::from_weights(&[10.0, 10.0, 10.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap(),
            terminal_noise: None,
            rate_noise: NoiseModel::weighted(m, 0.1).unwrap(),
            bound_noise: NoiseModel::weighted(m, 100.0).unwrap(),
            dynamics_noise: dynamics_noise_model(&DynamicsNoise { sigma_accel: 0.1, sigma_omega: 0.1, dt: 0.1 }).unwrap(),
            prior_noise: NoiseModel::weighted(9, 1e6).unwrap(),
            cbf: CbfParams { weight: 100.0, ..Default::default() },
            bounds,
            solver: SolverParams::default(),
        }
    }

    fn universal() -> VehicleModel {
        VehicleModel::Universal { gravity: GRAVITY }
    }

    fn quad() -> VehicleModel {
        VehicleModel::Quadrotor(QuadrotorParams { mass: 1.2, ..Default::default() })
    }

    #[test]
    fn obstacle_prediction() {
        let still = Obstacle::fixed(Vector3::new(1.0, 2.0, 3.0), 0.5);
        let moving = Obstacle { position: Vector3::zeros(), velocity: Vector3::x(), radius: 0.5 };
        let p = predict_obstacles(&[still, moving], 5, 0.1);
        assert_eq!(p.len(), 6);
        assert!(p.iter().all(|step| step[0] == still));
        assert!((p[5][1].position - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(p[5][1].velocity, Vector3::x());
        assert_eq!(predict_obstacles(&[moving], 0, 0.1), vec![vec![moving]]);
    }

    fn census(cfg: &MpcConfig, obstacles: usize) -> BTreeMap<&'static str, usize> {
        let refs = vec![State::default(); cfg.horizon + 1];
        let obs: Vec<Obstacle> = (0..obstacles).map(|i| Obstacle::fixed(Vector3::new(3.0 + i as f64, 0.0, 0.0), 0.5)).collect();
        let predicted = if obs.is_empty() { vec![] } else { predict_obstacles(&obs, cfg.horizon, cfg.dt) };
        let (graph, _) = build_mpc_graph(cfg, &State::default(), &refs, &predicted).unwrap();
        let mut out = BTreeMap::new();
        for f in graph.factors() {
            *out.entry(f.family()).or_insert(0) += 1;
        }
        out
    }

    #[test]
    fn factor_census_examples() {
        let cfg = config(universal(), 2);
        assert_eq!(census(&cfg, 0).values().sum::<usize>(), 8);
        let cfg = config(universal(), 5);
        assert_eq!(census(&cfg, 3)["cbf"], 15);
        let mut cfg = config(quad(), 5);
        cfg.cbf.gamma = 0.5;
        let c = census(&cfg, 3);
        assert_eq!(c["vcbf"], 15);
        assert!(!c.contains_key("cbf"));
    }

    #[test]
    fn factor_census_rule() {
        for n in 2..9 {
            for s in 0..4 {
                for gamma in [0.0, 0.7] {
                    let mut cfg = config(universal(), n);
                    cfg.cbf.gamma = gamma;
                    let c = census(&cfg, s);
                    let barrier = if gamma > 0.0 { "vcbf" } else { "cbf" };
                    assert_eq!(c["prior"], 1);
                    assert_eq!(c["dynamics"], n);
                    assert_eq!(c["reference"], n);
                    assert_eq!(c["bound"], n);
                    assert_eq!(c["rate"], n - 1);
                    assert_eq!(c.get(barrier).copied().unwrap_or(0), n * s);
                    assert_eq!(c.values().sum::<usize>(), 1 + 4 * n - 1 + n * s);
                }
            }
        }
    }

    #[test]
    fn reference_gap_is_an_error() {
        let cfg = config(universal(), 4);
        let refs = vec![State::default(); 4];
        assert_eq!(build_mpc_graph(&cfg, &State::default(), &refs, &[]).err(), Some(Error::ReferenceGap { needed: 5, available: 4 }));
    }

    #[test]
    fn consistent_initialization_has_zero_tracking_residuals() {
        let cfg = config(quad(), 6);
        let x0 = State::at_rest(Vector3::new(1.0, -1.0, 2.0));
        let refs = vec![x0; 7];
        let (graph, values) = build_mpc_graph(&cfg, &x0, &refs, &[]).unwrap();
        for (i, f) in graph.factors().iter().enumerate() {
            if matches!(f.family(), "prior" | "reference") {
                assert_eq!(graph.residual(i, &values).unwrap().amax(), 0.0);
            }
        }
    }

    #[test]
    fn normal_equations_stay_banded() {
        for model in [universal(), quad()] {
            let m = model.control_dim();
            for n in [3, 10, 30] {
                let cfg = config(model, n);
                let refs = vec![State::default(); n + 1];
                let predicted = predict_obstacles(&[Obstacle::fixed(Vector3::new(2.0, 0.0, 0.0), 0.5)], n, 0.1);
                let (graph, values) = build_mpc_graph(&cfg, &State::default(), &refs, &predicted).unwrap();
                let envelope = graph.linearize(&values).unwrap().envelope();
                let band = envelope.iter().enumerate().map(|(i, f)| i - f).max().unwrap();
                assert!(band < 18 + m, "bandwidth {band} for N = {n}");
                assert_eq!(envelope.len(), 9 * (n + 1) + m * n);
            }
        }
    }

    #[test]
    fn hover_is_a_fixed_point() {
        for model in [universal(), quad()] {
            let mut ctl = MpcController::new(config(model, 10)).unwrap();
            let reference = ReferenceTrajectory::Hover { position: Vector3::new(0.0, 0.0, 1.0) };
            let x = reference.state(0.0, GRAVITY);
            for step in 0..3 {
                let (u, sol) = ctl.mpc_step(&x, step as f64 * 0.1, &reference, &[], &NullClock).unwrap();
                assert!((u - model.hover_control()).amax() <= 1e-6);
                assert!(sol.stats.final_cost <= 1e-10);
                assert_eq!(sol.warm_started, step > 0);
            }
        }
    }

    #[test]
    fn deterministic_and_obstacle_free_reproducible() {
        let reference = ReferenceTrajectory::Line {
            start: Vector3::new(0.0, 0.0, 1.0),
            end: Vector3::new(6.0, 0.0, 1.0),
            cruise_speed: 1.5,
            accel: 1.0,
        };
        let x = State::at_rest(Vector3::new(0.2, 0.1, 1.0));
        let run = |obstacles: &[Obstacle]| {
            let mut ctl = MpcController::new(config(quad(), 15)).unwrap();
            ctl.mpc_step(&x, 0.5, &reference, obstacles, &NullClock).unwrap()
        };
        let (a, _) = run(&[]);
        let (b, _) = run(&[]);
        assert_eq!(a.as_slice(), b.as_slice());
        let (c, sol) = run(&[Obstacle::fixed(Vector3::new(30.0, 0.0, 1.0), 0.5)]);
        assert_eq!(sol.family_norms["cbf"], 0.0);
        assert_eq!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn active_barrier_deflects_the_plan() {
        let reference = ReferenceTrajectory::Line {
            start: Vector3::new(0.0, 0.0, 1.0),
            end: Vector3::new(8.0, 0.0, 1.0),
            cruise_speed: 2.0,
            accel: 2.0,
        };
        let x = State::new(Vector3::new(1.0, 0.0, 1.0), Rotation::identity(), Vector3::new(2.0, 0.0, 0.0));
        let obstacle = Obstacle::fixed(Vector3::new(3.0, 0.05, 1.0), 0.5);
        let min_distance =
            |sol: &MpcSolution| sol.states.iter().map(|s| (s.position - obstacle.position).norm()).fold(f64::INFINITY, f64::min);
        for gamma in [0.0, 0.8] {
            let mut cfg = config(quad(), 20);
            cfg.cbf.gamma = gamma;
            let (free_u, free) = MpcController::new(cfg.clone()).unwrap().mpc_step(&x, 1.0, &reference, &[], &NullClock).unwrap();
            let (u, sol) = MpcController::new(cfg).unwrap().mpc_step(&x, 1.0, &reference, &[obstacle], &NullClock).unwrap();
            assert!((u - free_u).norm() > 1e-3);
            assert!(min_distance(&sol) > min_distance(&free));
        }
    }

    #[test]
    fn reference_profiles() {
        let line = ReferenceTrajectory::Line { start: Vector3::zeros(), end: Vector3::new(10.0, 0.0, 0.0), cruise_speed: 2.0, accel: 1.0 };
        // Ramp 2 s (2 m each way), cruise 3 s.
        assert_eq!(line.sample(1.0).velocity, Vector3::new(1.0, 0.0, 0.0));
        assert!((line.sample(3.0).position.x - 4.0).abs() < 1e-12);
        assert!((line.sample(6.0).position.x - 9.5).abs() < 1e-12);
        assert_eq!(line.sample(8.0), ReferencePoint::at_rest(Vector3::new(10.0, 0.0, 0.0)));
        let short = ReferenceTrajectory::Line { start: Vector3::zeros(), end: Vector3::new(1.0, 0.0, 0.0), cruise_speed: 5.0, accel: 1.0 };
        assert!((short.sample(1.0).velocity.x - 1.0).abs() < 1e-12);
        assert!((short.sample(2.0).position.x - 1.0).abs() < 1e-12);

        let eight = ReferenceTrajectory::FigureEight { center: Vector3::z(), ax: 2.0, ay: 1.0, period: 8.0 };
        let (t, h) = (1.3, 1e-5);
        let fd_v = (eight.sample(t + h).position - eight.sample(t - h).position) / (2.0 * h);
        let fd_a = (eight.sample(t + h).velocity - eight.sample(t - h).velocity) / (2.0 * h);
        assert!((fd_v - eight.sample(t).velocity).norm() < 1e-8);
        assert!((fd_a - eight.sample(t).acceleration).norm() < 1e-8);
        let s = eight.state(t, GRAVITY);
        let thrust = eight.sample(t).acceleration + Vector3::z() * GRAVITY;
        assert!((s.rotation.z_axis() - thrust.normalize()).norm() < 1e-12);

        let wp = ReferenceTrajectory::Waypoints {
            points: vec![Vector3::zeros(), Vector3::new(2.0, 0.0, 0.0), Vector3::new(2.0, 3.0, 0.0)],
            speeds: vec![1.0, 3.0],
        };
        assert!(wp.validate().is_ok());
        assert_eq!(wp.sample(1.5).position, Vector3::new(1.5, 0.0, 0.0));
        assert_eq!(wp.sample(2.5).position, Vector3::new(2.0, 1.5, 0.0));
        assert_eq!(wp.sample(10.0).velocity, Vector3::zeros());
    }
}
