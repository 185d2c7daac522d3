//! Scenario files: JSON form, dotted-path overrides and the config digest.

use std::fs;
use std::path::Path;

use fgmpc_core::controller::{MpcConfig, ReferenceTrajectory};
use fgmpc_core::factors::{dynamics_noise_model, CbfParams, ClassKMode, ControlBounds, DynamicsNoise};
use fgmpc_core::graph::{NoiseModel, SolverParams};
use fgmpc_core::manifold::{exp_so3, State};
use fgmpc_core::sim::{ObstacleMotion, ObstacleSpec, Scenario};
use fgmpc_core::vehicle::{QuadrotorParams, VehicleModel, GRAVITY};
use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

fn gravity() -> f64 {
    GRAVITY
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VehicleFile {
    /// Body angular rate and specific-force input.
    Universal {
        #[serde(default = "gravity")]
        gravity: f64,
    },
    /// Body angular rate and collective thrust input. `drag` holds the
    /// non-negative linear drag coefficients; the drag matrix is
    /// `-diag(drag)`.
    Quadrotor {
        mass: f64,
        #[serde(default)]
        drag: [f64; 3],
        #[serde(default = "gravity")]
        gravity: f64,
    },
}

impl VehicleFile {
    fn to_model(&self) -> VehicleModel {
        match *self {
            VehicleFile::Universal { gravity } => VehicleModel::Universal { gravity },
            VehicleFile::Quadrotor { mass, drag, gravity } => {
                VehicleModel::Quadrotor(QuadrotorParams { mass, drag: -Matrix3::from_diagonal(&Vector3::from(drag)), gravity })
            }
        }
    }
}

/// Diagonal information weights over the state tangent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateWeights {
    pub position: [f64; 3],
    pub attitude: [f64; 3],
    pub velocity: [f64; 3],
}

impl StateWeights {
    fn noise(&self, field: &'static str) -> Result<NoiseModel, CliError> {
        let w: Vec<f64> = self.position.iter().chain(&self.attitude).chain(&self.velocity).copied().collect();
        NoiseModel::from_weights(&w).map_err(|_| CliError::invalid(field, "weights must be positive and finite"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsFile {
    pub reference: StateWeights,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<StateWeights>,
    pub prior: StateWeights,
    pub rate: Vec<f64>,
    pub bound: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsNoiseFile {
    /// m/s^2
    pub sigma_accel: f64,
    /// rad/s
    pub sigma_omega: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsFile {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverFile {
    pub lambda_initial: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub max_iterations: usize,
    pub relative_cost_tol: f64,
    pub gradient_tol: f64,
}

impl Default for SolverFile {
    fn default() -> Self {
        let p = SolverParams::default();
        SolverFile {
            lambda_initial: p.lambda_initial,
            lambda_up: p.lambda_up,
            lambda_down: p.lambda_down,
            lambda_min: p.lambda_min,
            lambda_max: p.lambda_max,
            max_iterations: p.max_iterations,
            relative_cost_tol: p.relative_cost_tol,
            gradient_tol: p.gradient_tol,
        }
    }
}

impl From<&SolverFile> for SolverParams {
    fn from(s: &SolverFile) -> Self {
        SolverParams {
            lambda_initial: s.lambda_initial,
            lambda_up: s.lambda_up,
            lambda_down: s.lambda_down,
            lambda_min: s.lambda_min,
            lambda_max: s.lambda_max,
            max_iterations: s.max_iterations,
            relative_cost_tol: s.relative_cost_tol,
            gradient_tol: s.gradient_tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcFile {
    pub horizon: usize,
    /// s
    pub dt: f64,
    pub weights: WeightsFile,
    pub dynamics_noise: DynamicsNoiseFile,
    /// Diagonal information weights replacing the covariance built from
    /// `dynamics_noise`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics_weights: Option<Vec<f64>>,
    pub control_bounds: BoundsFile,
    #[serde(default)]
    pub solver: SolverFile,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassKFile {
    Distance,
    Extended,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CbfFile {
    pub alpha: f64,
    pub gamma: f64,
    /// Added to each obstacle radius (m).
    pub margin: f64,
    pub mode: ClassKFile,
    pub weight: f64,
}

impl Default for CbfFile {
    fn default() -> Self {
        let p = CbfParams::default();
        CbfFile { alpha: p.alpha, gamma: p.gamma, margin: p.margin, mode: ClassKFile::Distance, weight: p.weight }
    }
}

impl From<&CbfFile> for CbfParams {
    fn from(c: &CbfFile) -> Self {
        let mode = match c.mode {
            ClassKFile::Distance => ClassKMode::Distance,
            ClassKFile::Extended => ClassKMode::Extended,
        };
        CbfParams { alpha: c.alpha, gamma: c.gamma, margin: c.margin, mode, weight: c.weight }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceFile {
    Hover { position: [f64; 3] },
    Line { start: [f64; 3], end: [f64; 3], cruise_speed: f64, accel: f64 },
    FigureEight { center: [f64; 3], ax: f64, ay: f64, period: f64 },
    Waypoints { points: Vec<[f64; 3]>, speeds: Vec<f64> },
}

impl ReferenceFile {
    pub fn to_trajectory(&self) -> ReferenceTrajectory {
        let v = |a: &[f64; 3]| Vector3::from(*a);
        match self {
            ReferenceFile::Hover { position } => ReferenceTrajectory::Hover { position: v(position) },
            ReferenceFile::Line { start, end, cruise_speed, accel } => {
                ReferenceTrajectory::Line { start: v(start), end: v(end), cruise_speed: *cruise_speed, accel: *accel }
            }
            ReferenceFile::FigureEight { center, ax, ay, period } => {
                ReferenceTrajectory::FigureEight { center: v(center), ax: *ax, ay: *ay, period: *period }
            }
            ReferenceFile::Waypoints { points, speeds } => {
                ReferenceTrajectory::Waypoints { points: points.iter().map(v).collect(), speeds: speeds.clone() }
            }
        }
    }
}

fn zero() -> f64 {
    0.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionFile {
    Static {
        position: [f64; 3],
    },
    ConstantVelocity {
        position: [f64; 3],
        velocity: [f64; 3],
    },
    Elliptical {
        center: [f64; 3],
        a: f64,
        b: f64,
        /// rad/s
        rate: f64,
        #[serde(default = "zero")]
        phase: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleFile {
    pub radius: f64,
    pub motion: MotionFile,
}

impl ObstacleFile {
    fn to_spec(&self) -> ObstacleSpec {
        let v = |a: &[f64; 3]| Vector3::from(*a);
        let motion = match &self.motion {
            MotionFile::Static { position } => ObstacleMotion::Static { position: v(position) },
            MotionFile::ConstantVelocity { position, velocity } => {
                ObstacleMotion::ConstantVelocity { position: v(position), velocity: v(velocity) }
            }
            MotionFile::Elliptical { center, a, b, rate, phase } => {
                ObstacleMotion::Elliptical { center: v(center), a: *a, b: *b, rate: *rate, phase: *phase }
            }
        };
        ObstacleSpec { motion, radius: self.radius }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateFile {
    pub position: [f64; 3],
    #[serde(default)]
    pub rotvec: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimFile {
    /// s
    pub duration: f64,
    /// Plant step (s); defaults to a tenth of the controller step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_dt: Option<f64>,
    #[serde(default)]
    pub measurement_noise: f64,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to the reference state at `t = 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<InitialStateFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub vehicle: VehicleFile,
    /// True-vehicle model; defaults to `vehicle`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant: Option<VehicleFile>,
    pub mpc: MpcFile,
    #[serde(default)]
    pub cbf: CbfFile,
    pub reference: ReferenceFile,
    #[serde(default)]
    pub obstacles: Vec<ObstacleFile>,
    pub sim: SimFile,
}

impl ScenarioFile {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides).map_err(|e| match e {
            CliError::Input(msg) => CliError::Input(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| CliError::Input(format!("invalid JSON: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        serde_json::from_value(value).map_err(|e| CliError::Input(e.to_string()))
    }

    /// Canonical serialization: struct field order, defaults filled in.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    /// SHA-256 of [`ScenarioFile::canonical_json`], hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn to_scenario(&self) -> Result<Scenario, CliError> {
        let model = self.vehicle.to_model();
        let m = model.control_dim();
        let mpc = &self.mpc;
        let dim_check = |field: &'static str, len: usize| {
            if len == m {
                Ok(())
            } else {
                Err(CliError::invalid(field, &format!("expected {m} entries for this vehicle, got {len}")))
            }
        };
        dim_check("mpc.weights.rate", mpc.weights.rate.len())?;
        dim_check("mpc.weights.bound", mpc.weights.bound.len())?;
        dim_check("mpc.control_bounds.lower", mpc.control_bounds.lower.len())?;
        dim_check("mpc.control_bounds.upper", mpc.control_bounds.upper.len())?;
        if !(mpc.dt > 0.0) {
            return Err(CliError::invalid("mpc.dt", "must be positive"));
        }

        let dynamics_noise = match &mpc.dynamics_weights {
            Some(w) if w.len() != 9 => return Err(CliError::invalid("mpc.dynamics_weights", "expected 9 entries")),
            Some(w) => NoiseModel::from_weights(w).map_err(|_| CliError::invalid("mpc.dynamics_weights", "must be positive"))?,
            None => dynamics_noise_model(&DynamicsNoise {
                sigma_accel: mpc.dynamics_noise.sigma_accel,
                sigma_omega: mpc.dynamics_noise.sigma_omega,
                dt: mpc.dt,
            })
            .map_err(|e| CliError::invalid("mpc.dynamics_noise", &e.to_string()))?,
        };
        let weights =
            |field, w: &[f64]| NoiseModel::from_weights(w).map_err(|_| CliError::invalid(field, "weights must be positive and finite"));
        let bounds =
            ControlBounds::new(DVector::from_vec(mpc.control_bounds.lower.clone()), DVector::from_vec(mpc.control_bounds.upper.clone()))
                .map_err(|e| CliError::invalid("mpc.control_bounds", &e.to_string()))?;

        let controller = MpcConfig {
            horizon: mpc.horizon,
            dt: mpc.dt,
            model,
            reference_noise: mpc.weights.reference.noise("mpc.weights.reference")?,
            terminal_noise: mpc.weights.terminal.as_ref().map(|t| t.noise("mpc.weights.terminal")).transpose()?,
            rate_noise: weights("mpc.weights.rate", &mpc.weights.rate)?,
            bound_noise: weights("mpc.weights.bound", &mpc.weights.bound)?,
            dynamics_noise,
            prior_noise: mpc.weights.prior.noise("mpc.weights.prior")?,
            cbf: (&self.cbf).into(),
            bounds,
            solver: (&mpc.solver).into(),
        };
        let initial_state = self
            .sim
            .initial_state
            .as_ref()
            .map(|s| State::new(Vector3::from(s.position), exp_so3(&Vector3::from(s.rotvec)), Vector3::from(s.velocity)));
        let scenario = Scenario {
            controller,
            plant: self.plant.as_ref().unwrap_or(&self.vehicle).to_model(),
            reference: self.reference.to_trajectory(),
            obstacles: self.obstacles.iter().map(ObstacleFile::to_spec).collect(),
            initial_state,
            duration: self.sim.duration,
            sim_dt: self.sim.sim_dt.unwrap_or(mpc.dt / 10.0),
            measurement_noise: self.sim.measurement_noise,
            seed: self.sim.seed,
        };
        scenario.validate().map_err(CliError::from_core)?;
        Ok(scenario)
    }
}

/// Applies `a.b.c=value`. The value is parsed as JSON, falling back to a
/// plain string. Numeric segments index into arrays.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) =
        assignment.split_once('=').ok_or_else(|| CliError::Input(format!("override `{assignment}` is not of the form key=value")))?;
    let parsed: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(CliError::Input(format!("override key `{path}` has an empty segment")));
    }
    let mut node = root;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), parsed);
                    return Ok(());
                }
                map.entry(seg.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = seg.parse().map_err(|_| CliError::Input(format!("override `{path}`: `{seg}` is not an index")))?;
                let len = items.len();
                let slot =
                    items.get_mut(idx).ok_or_else(|| CliError::Input(format!("override `{path}`: index {idx} out of range ({len})")))?;
                if last {
                    *slot = parsed;
                    return Ok(());
                }
                slot
            }
            _ => return Err(CliError::Input(format!("override `{path}`: `{seg}` is not inside an object or array"))),
        };
    }
    unreachable!("loop returns on the last segment")
}
