//! Run outputs: `trajectory.csv` and `summary.json`.
//!
//! CSV columns, in order:
//!
//! | column | unit |
//! |---|---|
//! | `t` | s |
//! | `p_x`, `p_y`, `p_z` | m |
//! | `rotvec_x`, `rotvec_y`, `rotvec_z` | rad, `Log(R)` |
//! | `v_x`, `v_y`, `v_z` | m/s |
//! | `u_0` .. `u_{m-1}` | control components |
//! | `solve_ms` | ms |
//! | `d_obs_0` .. `d_obs_{S-1}` | m, distance to the obstacle surface |
//! | `min_h` | barrier value, empty without obstacles |

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use fgmpc_core::clock::Clock;
use fgmpc_core::sim::{Metrics, SimLog};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Seconds since construction.
#[derive(Debug)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn new() -> Self {
        WallClock(Instant::now())
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

pub fn csv_header(controls: usize, obstacles: usize) -> Vec<String> {
    let mut h: Vec<String> =
        ["t", "p_x", "p_y", "p_z", "rotvec_x", "rotvec_y", "rotvec_z", "v_x", "v_y", "v_z"].iter().map(|s| s.to_string()).collect();
    h.extend((0..controls).map(|i| format!("u_{i}")));
    h.push("solve_ms".into());
    h.extend((0..obstacles).map(|i| format!("d_obs_{i}")));
    h.push("min_h".into());
    h
}

pub fn write_trajectory<W: Write>(out: W, log: &SimLog, controls: usize, obstacles: usize) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| CliError::Io(e.into());
    w.write_record(csv_header(controls, obstacles)).map_err(io)?;
    for r in &log.records {
        let s = &r.state;
        let rotvec = s.rotation.log().unwrap_or_else(|_| nalgebra::Vector3::repeat(f64::NAN));
        let mut row: Vec<String> = Vec::with_capacity(12 + controls + obstacles);
        row.push(r.t.to_string());
        row.extend(s.position.iter().chain(rotvec.iter()).chain(s.velocity.iter()).map(f64::to_string));
        row.extend(r.control.iter().map(f64::to_string));
        row.push(r.solve_ms.to_string());
        row.extend(r.boundary_distances.iter().map(f64::to_string));
        row.push(r.min_h.map(|h| h.to_string()).unwrap_or_default());
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSummary {
    pub steps: usize,
    pub rmse_m: f64,
    pub rmse_inactive_m: Option<f64>,
    pub min_boundary_distance_m: Option<f64>,
    pub collisions: usize,
    pub solve_ms_median: f64,
    pub solve_ms_p99: f64,
    pub solve_ms_max: f64,
    pub solve_ms_mean: f64,
}

impl From<&Metrics> for MetricsSummary {
    fn from(m: &Metrics) -> Self {
        MetricsSummary {
            steps: m.steps,
            rmse_m: m.rmse,
            rmse_inactive_m: m.rmse_inactive,
            min_boundary_distance_m: m.min_boundary_distance,
            collisions: m.collisions,
            solve_ms_median: m.solve_ms_median,
            solve_ms_p99: m.solve_ms_p99,
            solve_ms_max: m.solve_ms_max,
            solve_ms_mean: m.solve_ms_mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub toolkit_version: String,
    pub scenario: String,
    pub config_digest: String,
    pub completed: bool,
    pub failure: Option<String>,
    pub metrics: MetricsSummary,
}

impl RunSummary {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Input(format!("invalid summary: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }
}
