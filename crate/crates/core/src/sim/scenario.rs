use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::drone::{CameraConfig, DronePlan, NoiseConfig};
use super::SimError;
use crate::condition::Condition;

/// Demand above this (veh/h/lane) is outside the stable car-following regime.
pub const MAX_DEMAND_VPHPL: f64 = 2500.0;

/// Sign of travel along the milepost axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum AxisDirection {
    Increasing,
    Decreasing,
}

impl AxisDirection {
    pub fn sign(self) -> f64 {
        match self {
            AxisDirection::Increasing => 1.0,
            AxisDirection::Decreasing => -1.0,
        }
    }
}

impl TryFrom<i8> for AxisDirection {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(AxisDirection::Increasing),
            -1 => Ok(AxisDirection::Decreasing),
            other => Err(format!("patrol_direction must be 1 or -1, got {other}")),
        }
    }
}

impl From<AxisDirection> for i8 {
    fn from(d: AxisDirection) -> i8 {
        match d {
            AxisDirection::Increasing => 1,
            AxisDirection::Decreasing => -1,
        }
    }
}

/// A disturbance placed on the patrol carriageway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrafficEvent {
    /// Vehicles stopped in `blocked_lanes` at `milepost` for the active period.
    Incident {
        milepost: f64,
        start_s: f64,
        end_s: f64,
        blocked_lanes: Vec<usize>,
    },
    /// Signalized outflow (off-ramp bottleneck) at `milepost`. Lanes default
    /// to all lanes of the carriageway.
    Recurrent {
        milepost: f64,
        start_s: f64,
        end_s: f64,
        green_s: f64,
        red_s: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lanes: Option<Vec<usize>>,
    },
}

impl TrafficEvent {
    pub fn milepost(&self) -> f64 {
        match self {
            TrafficEvent::Incident { milepost, .. } | TrafficEvent::Recurrent { milepost, .. } => *milepost,
        }
    }

    pub fn active_span(&self) -> (f64, f64) {
        match self {
            TrafficEvent::Incident { start_s, end_s, .. } | TrafficEvent::Recurrent { start_s, end_s, .. } => {
                (*start_s, *end_s)
            }
        }
    }

    pub fn is_active(&self, t: f64) -> bool {
        let (a, b) = self.active_span();
        t >= a && t < b
    }

    pub fn condition(&self) -> Condition {
        match self {
            TrafficEvent::Incident { .. } => Condition::Incident,
            TrafficEvent::Recurrent { .. } => Condition::Recurrent,
        }
    }
}

/// Intelligent-driver-model and lane-change parameters, SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriverParams {
    /// Desired speed, mph. Individual drivers scatter around it.
    pub desired_speed_mph: f64,
    pub desired_speed_spread: f64,
    /// Safe time headway, s.
    pub time_headway_s: f64,
    pub max_accel: f64,
    pub comfortable_decel: f64,
    /// Jam distance, m.
    pub min_gap_m: f64,
    pub vehicle_length_m: f64,
    pub politeness: f64,
    pub lane_change_threshold: f64,
    pub safe_decel: f64,
    pub lane_change_duration_s: f64,
    pub dt_s: f64,
}

impl Default for DriverParams {
    fn default() -> Self {
        Self {
            desired_speed_mph: 65.0,
            desired_speed_spread: 0.08,
            time_headway_s: 1.5,
            max_accel: 1.0,
            comfortable_decel: 2.0,
            min_gap_m: 2.0,
            vehicle_length_m: 5.0,
            politeness: 0.2,
            lane_change_threshold: 0.2,
            safe_decel: 4.0,
            lane_change_duration_s: 3.0,
            dt_s: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpposingTraffic {
    pub lanes: usize,
    pub demand_vphpl: f64,
}

impl Default for OpposingTraffic {
    fn default() -> Self {
        Self { lanes: 3, demand_vphpl: 1000.0 }
    }
}

/// Declarative freeway scenario. Interface units are miles, mph and seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub road_length_mi: f64,
    pub lane_count: usize,
    pub patrol_direction: AxisDirection,
    /// Arrival rate on the patrol carriageway, veh/h/lane.
    pub demand_vphpl: f64,
    pub duration_s: f64,
    pub events: Vec<TrafficEvent>,
    pub opposing: OpposingTraffic,
    /// Epoch seconds corresponding to simulation time zero.
    pub epoch_start: f64,
    pub seed: u64,
    /// Trajectory sampling interval of the ground-truth log, s.
    pub record_interval_s: f64,
    pub driver: DriverParams,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            road_length_mi: 1.4,
            lane_count: 3,
            patrol_direction: AxisDirection::Increasing,
            demand_vphpl: 1200.0,
            duration_s: 600.0,
            events: Vec::new(),
            opposing: OpposingTraffic::default(),
            // 2024-04-18 16:48 EDT
            epoch_start: 1_713_473_280.0,
            seed: 0,
            record_interval_s: 0.5,
            driver: DriverParams::default(),
        }
    }
}

impl ScenarioSpec {
    /// Condition class of the scenario as a whole: incident dominates
    /// recurrent dominates normal.
    pub fn condition(&self) -> Condition {
        self.events.iter().map(TrafficEvent::condition).max().unwrap_or(Condition::Normal)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if !(self.road_length_mi.is_finite() && self.road_length_mi > 0.0) {
            return bad("road_length_mi must be positive".into());
        }
        if self.lane_count == 0 {
            return bad("lane_count must be at least 1".into());
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad("duration_s must be positive".into());
        }
        if !(self.demand_vphpl.is_finite() && self.demand_vphpl >= 0.0) {
            return bad("demand must be non-negative".into());
        }
        if self.demand_vphpl > MAX_DEMAND_VPHPL || self.opposing.demand_vphpl > MAX_DEMAND_VPHPL {
            return Err(SimError::UnstableDemand(self.demand_vphpl.max(self.opposing.demand_vphpl)));
        }
        if !(self.record_interval_s > 0.0) || !(self.driver.dt_s > 0.0) {
            return bad("time steps must be positive".into());
        }
        for (i, ev) in self.events.iter().enumerate() {
            let pos = ev.milepost();
            if !(0.0..=self.road_length_mi).contains(&pos) {
                return bad(format!("event {i}: milepost {pos} outside road"));
            }
            let (a, b) = ev.active_span();
            if !(a < b) {
                return bad(format!("event {i}: start must precede end"));
            }
            match ev {
                TrafficEvent::Incident { blocked_lanes, .. } => {
                    if blocked_lanes.is_empty() {
                        return bad(format!("event {i}: incident blocks no lane"));
                    }
                    let set: BTreeSet<_> = blocked_lanes.iter().copied().collect();
                    if set.len() != blocked_lanes.len() || set.iter().any(|&l| l >= self.lane_count) {
                        return bad(format!("event {i}: blocked lanes must be distinct and < lane_count"));
                    }
                    if set.len() == self.lane_count && self.demand_vphpl > 0.0 {
                        let capacity = self.queue_capacity_vehicles(pos);
                        let closed = b.min(self.duration_s) - a;
                        let arrivals = self.demand_vphpl * self.lane_count as f64 * closed.max(0.0) / 3600.0;
                        if arrivals > capacity {
                            return Err(SimError::QueueOverflow { arrivals, capacity });
                        }
                    }
                }
                TrafficEvent::Recurrent { green_s, red_s, lanes, .. } => {
                    if !(*green_s > 0.0 && *red_s >= 0.0) {
                        return bad(format!("event {i}: signal phases must be positive"));
                    }
                    if let Some(lanes) = lanes {
                        if lanes.is_empty() || lanes.iter().any(|&l| l >= self.lane_count) {
                            return bad(format!("event {i}: signal lanes out of range"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Vehicles that fit at jam spacing between the entry and `milepost`.
    fn queue_capacity_vehicles(&self, milepost: f64) -> f64 {
        let upstream_mi = match self.patrol_direction {
            AxisDirection::Increasing => milepost,
            AxisDirection::Decreasing => self.road_length_mi - milepost,
        };
        let spacing = self.driver.vehicle_length_m + self.driver.min_gap_m;
        crate::units::miles_to_m(upstream_mi) / spacing * self.lane_count as f64
    }
}

/// Everything `sim run` needs: the scenario, the flight and the sensor model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioFile {
    pub scenario: ScenarioSpec,
    pub drone: DronePlan,
    pub camera: CameraConfig,
    pub noise: NoiseConfig,
}

impl ScenarioFile {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        file.scenario.validate()?;
        file.drone.validate()?;
        file.camera.validate()?;
        file.noise.validate()?;
        Ok(file)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }
}
