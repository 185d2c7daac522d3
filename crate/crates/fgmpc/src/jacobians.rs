//! Randomized finite-difference check of every factor family.

use fgmpc_core::factors::*;
use fgmpc_core::graph::{check_jacobians, CorruptedJacobian, Factor, NoiseModel, Values, Variable};
use fgmpc_core::manifold::{exp_so3, State};
use fgmpc_core::vehicle::{QuadrotorParams, VehicleModel, GRAVITY};
use nalgebra::{DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;
/// Configurations closer than this to a max-clamp kink are redrawn.
pub const KINK_EXCLUSION: f64 = 1e-4;
/// Largest relative rotation drawn for state-error factors (rad), keeping
/// clear of the cut locus at pi.
const MAX_RELATIVE_ANGLE: f64 = 3.0;

pub const FAMILIES: [&str; 7] = [FAMILY_PRIOR, FAMILY_REFERENCE, FAMILY_DYNAMICS, FAMILY_BOUND, FAMILY_RATE, FAMILY_CBF, FAMILY_VCBF];

#[derive(Clone, Debug, PartialEq)]
pub struct FamilyReport {
    pub family: &'static str,
    pub configurations: usize,
    /// Configurations with a non-zero residual.
    pub active: usize,
    pub worst_error: f64,
    /// Seed that regenerates the worst configuration.
    pub worst_seed: u64,
}

impl FamilyReport {
    pub fn passed(&self) -> bool {
        self.worst_error < TOLERANCE
    }
}

/// Seed of configuration `index` of family `family`.
pub fn configuration_seed(seed: u64, family: usize, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((family as u64) << 40) ^ index as u64
}

fn vec3(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(-scale..scale))
}

fn state(rng: &mut ChaCha8Rng) -> State {
    State::new(vec3(rng, 5.0), exp_so3(&vec3(rng, 2.5)), vec3(rng, 3.0))
}

fn model(rng: &mut ChaCha8Rng) -> VehicleModel {
    if rng.random_bool(0.5) {
        VehicleModel::Universal { gravity: GRAVITY }
    } else {
        let dxy = rng.random_range(0.0..0.5);
        VehicleModel::Quadrotor(QuadrotorParams {
            mass: rng.random_range(0.5..3.0),
            drag: -Matrix3::from_diagonal(&Vector3::new(dxy, dxy, rng.random_range(0.0..0.5))),
            gravity: GRAVITY,
        })
    }
}

fn control(rng: &mut ChaCha8Rng, model: &VehicleModel) -> DVector<f64> {
    let omega = vec3(rng, 2.0);
    match model {
        VehicleModel::Universal { .. } => {
            let a = vec3(rng, 2.0) + Vector3::z() * 8.0;
            DVector::from_iterator(6, omega.iter().chain(a.iter()).copied())
        }
        VehicleModel::Quadrotor(q) => DVector::from_vec(vec![omega.x, omega.y, omega.z, q.mass * rng.random_range(6.0..12.0)]),
    }
}

/// Obstacle within a few meters of `x`, so both clamp branches are drawn.
fn obstacle(rng: &mut ChaCha8Rng, x: &State, moving: bool) -> Option<Obstacle> {
    let position = x.position + vec3(rng, 2.0);
    if (x.position - position).norm() < 0.2 {
        return None;
    }
    let velocity = if moving { vec3(rng, 2.0) } else { Vector3::zeros() };
    Some(Obstacle { position, velocity, radius: rng.random_range(0.1..1.0) })
}

/// One random non-degenerate configuration of `family`.
fn draw(family: &str, rng: &mut ChaCha8Rng) -> (Box<dyn Factor>, Values) {
    loop {
        let mut v = Values::new();
        match family {
            FAMILY_PRIOR | FAMILY_REFERENCE => {
                let x = state(rng);
                let mut dth = vec3(rng, 1.8);
                if dth.norm() > MAX_RELATIVE_ANGLE {
                    dth *= MAX_RELATIVE_ANGLE / dth.norm();
                }
                let target = State::new(x.position + vec3(rng, 3.0), x.rotation * exp_so3(&dth), x.velocity + vec3(rng, 3.0));
                v.insert_state(0, x);
                let noise = NoiseModel::unit(9);
                let f = if family == FAMILY_PRIOR {
                    StateErrorFactor::prior(0, target, noise)
                } else {
                    StateErrorFactor::reference(0, target, noise)
                };
                return (Box::new(f), v);
            }
            FAMILY_DYNAMICS => {
                let m = model(rng);
                let x0 = state(rng);
                let x1 = State::new(x0.position + vec3(rng, 0.5), x0.rotation * exp_so3(&vec3(rng, 0.5)), x0.velocity + vec3(rng, 0.5));
                let dt = rng.random_range(0.01..0.2);
                v.insert_state(0, x0);
                v.insert_state(1, x1);
                v.insert_control(0, control(rng, &m));
                return (Box::new(DynamicsFactor::new(0, m, dt, NoiseModel::unit(9))), v);
            }
            FAMILY_BOUND => {
                let lower = DVector::from_fn(4, |_, _| rng.random_range(-2.0..0.0));
                let upper = DVector::from_fn(4, |_, _| rng.random_range(0.0..2.0));
                let u = DVector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
                let near_kink = u
                    .iter()
                    .zip(lower.iter().zip(upper.iter()))
                    .any(|(u, (l, h)): (&f64, (&f64, &f64))| (u - l).abs() < KINK_EXCLUSION || (u - h).abs() < KINK_EXCLUSION);
                if near_kink {
                    continue;
                }
                v.insert_control(0, u);
                let bounds = ControlBounds::new(lower, upper).expect("lower < 0 < upper");
                return (Box::new(ControlBoundFactor::new(0, bounds, NoiseModel::unit(4))), v);
            }
            FAMILY_RATE => {
                v.insert_control(0, DVector::from_fn(6, |_, _| rng.random_range(-3.0..3.0)));
                v.insert_control(1, DVector::from_fn(6, |_, _| rng.random_range(-3.0..3.0)));
                return (Box::new(ControlRateFactor::new(0, 6, NoiseModel::unit(6))), v);
            }
            FAMILY_CBF => {
                let x = state(rng);
                let Some(obs) = obstacle(rng, &x, false) else { continue };
                let params = CbfParams { alpha: rng.random_range(0.1..2.0), ..Default::default() };
                if cbf_constraint(&x, &obs, &params).map_or(true, |c| c.abs() < KINK_EXCLUSION) {
                    continue;
                }
                v.insert_state(0, x);
                return (Box::new(CbfFactor::new(0, obs, params).expect("valid params")), v);
            }
            FAMILY_VCBF => {
                let x = state(rng);
                let Some(obs) = obstacle(rng, &x, true) else { continue };
                let m = model(rng);
                let u = control(rng, &m);
                let mode = if rng.random_bool(0.5) { ClassKMode::Extended } else { ClassKMode::Distance };
                let params =
                    CbfParams { alpha: rng.random_range(0.1..2.0), gamma: rng.random_range(0.05..1.5), mode, ..Default::default() };
                if vcbf_violation(&x, &u, &obs, &params, &m).map_or(true, |c| c.abs() < KINK_EXCLUSION) {
                    continue;
                }
                v.insert_state(0, x);
                v.insert_control(0, u);
                return (Box::new(VcbfFactor::new(0, obs, params, m).expect("valid params")), v);
            }
            other => panic!("unknown factor family {other}"),
        }
    }
}

/// Checks `count` configurations of every family. With `inject_fault`
/// each factor's first Jacobian entry is offset by 0.1.
pub fn run_suite(seed: u64, count: usize, inject_fault: bool) -> Vec<FamilyReport> {
    FAMILIES
        .iter()
        .enumerate()
        .map(|(fi, &family)| {
            let mut report = FamilyReport { family, configurations: count, active: 0, worst_error: 0.0, worst_seed: 0 };
            for i in 0..count {
                let cfg_seed = configuration_seed(seed, fi, i);
                let mut rng = ChaCha8Rng::seed_from_u64(cfg_seed);
                let (mut factor, values) = draw(family, &mut rng);
                let keys: Vec<&Variable> = factor.keys().iter().filter_map(|k| values.get(k)).collect();
                if factor.evaluate(&keys, None).is_ok_and(|r| r.amax() > 0.0) {
                    report.active += 1;
                }
                if inject_fault {
                    factor = Box::new(CorruptedJacobian { inner: factor, slot: 0, row: 0, col: 0, offset: 0.1 });
                }
                let err = match check_jacobians(&*factor, &values, STEP) {
                    Ok(c) => c.max_error,
                    Err(_) => f64::INFINITY,
                };
                if !(err <= report.worst_error) {
                    report.worst_error = err;
                    report.worst_seed = cfg_seed;
                }
            }
            report
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_family_passes_and_faults_are_caught() {
        let clean = run_suite(3, 50, false);
        assert_eq!(clean.len(), FAMILIES.len());
        for r in &clean {
            assert!(r.passed(), "{r:?}");
            assert!(r.active >= 5, "{r:?}");
        }
        for r in run_suite(3, 2, true) {
            assert!(r.worst_error >= 0.01, "{r:?}");
        }
    }

    #[test]
    fn configurations_are_reproducible() {
        assert_eq!(run_suite(11, 5, false), run_suite(11, 5, false));
    }
}
