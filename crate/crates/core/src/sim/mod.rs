//! Freeway patrol simulator: ground-truth traffic for the three conditions
//! and the drone's detection and GPS feeds.

pub mod drone;
pub mod log;
pub mod scenario;
mod traffic;

use thiserror::Error;

pub use drone::{CameraConfig, DronePlan, NoiseConfig};
pub use log::{Carriageway, ConditionInterval, GroundTruthLog, TailSample, TrajPoint, VehicleTrack};
pub use scenario::{AxisDirection, DriverParams, ScenarioFile, ScenarioSpec, TrafficEvent};
pub use traffic::lane_center_ft;

use crate::condition::Condition;
use crate::feed::Feed;

/// Extraction periods the dataset and classifier are defined for, s.
pub const EXTRACTION_PERIODS: [u32; 5] = [3, 5, 10, 15, 20];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("demand {0} veh/h/lane exceeds the stable regime (2500)")]
    UnstableDemand(f64),
    #[error("full closure: {arrivals:.0} arrivals exceed segment storage of {capacity:.0} vehicles")]
    QueueOverflow { arrivals: f64, capacity: f64 },
    #[error("invalid flight plan: {0}")]
    InvalidPlan(String),
    #[error("flight time {start} s is outside the simulation horizon {horizon} s")]
    PlanOutsideHorizon { start: f64, horizon: f64 },
    #[error("extraction period {0} s is not one of 3, 5, 10, 15, 20")]
    BadPeriod(u32),
    #[error("scenario file: {0}")]
    Parse(String),
}

/// Simulate the scenario. Deterministic for a fixed seed.
pub fn simulate(spec: &ScenarioSpec) -> Result<GroundTruthLog, SimError> {
    spec.validate()?;
    Ok(traffic::run(spec))
}

/// Fly `plan` over the simulated traffic and record what the camera sees.
pub fn fly(log: &GroundTruthLog, plan: &DronePlan, camera: &CameraConfig, noise: &NoiseConfig) -> Result<Feed, SimError> {
    drone::fly(log, plan, camera, noise)
}

/// Label of the window `[start, start + period]` (simulation seconds):
/// incident if it overlaps an incident interval, else recurrent if it
/// overlaps a recurrent interval, else normal. Overlap requires positive
/// length; windows that only touch an interval boundary do not count.
pub fn window_label(log: &GroundTruthLog, start: f64, period: f64) -> Condition {
    let end = start + period;
    log.conditions
        .iter()
        .filter(|c| c.start < end && start < c.end)
        .map(|c| c.condition)
        .max()
        .unwrap_or(Condition::Normal)
}

/// One label per 1 s-stepped window; windows running past the end of the
/// simulation are dropped.
pub fn label_windows(log: &GroundTruthLog, period: u32) -> Result<Vec<(f64, Condition)>, SimError> {
    if !EXTRACTION_PERIODS.contains(&period) {
        return Err(SimError::BadPeriod(period));
    }
    let p = period as f64;
    let last = (log.duration() - p).floor();
    if last < 0.0 {
        return Ok(Vec::new());
    }
    Ok((0..=last as u64).map(|k| k as f64).map(|t| (t, window_label(log, t, p))).collect())
}
