use serde::{Deserialize, Serialize};

use super::scenario::ScenarioSpec;
use crate::condition::Condition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Carriageway {
    /// Travels in the patrol direction.
    Patrol,
    Opposing,
}

/// One ground-truth sample of a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajPoint {
    pub t: f64,
    pub milepost: f64,
    pub lane: u8,
    /// Signed offset from the median, ft; positive on the patrol carriageway.
    pub lateral_ft: f32,
    pub speed_mps: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrack {
    pub id: u64,
    pub carriageway: Carriageway,
    /// Crashed or disabled vehicle held in place by an incident.
    pub obstacle: bool,
    pub points: Vec<TrajPoint>,
}

impl VehicleTrack {
    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.points.first()?.t, self.points.last()?.t))
    }

    /// Linear interpolation of (milepost, lateral_ft) at `t`.
    pub fn position_at(&self, t: f64) -> Option<(f64, f64)> {
        let pts = &self.points;
        let first = pts.first()?;
        let last = pts.last()?;
        if t < first.t || t > last.t {
            return None;
        }
        let idx = pts.partition_point(|p| p.t <= t);
        if idx == 0 {
            return Some((first.milepost, first.lateral_ft as f64));
        }
        let a = &pts[idx - 1];
        let Some(b) = pts.get(idx) else {
            return Some((a.milepost, a.lateral_ft as f64));
        };
        let w = (t - a.t) / (b.t - a.t);
        Some((
            a.milepost + w * (b.milepost - a.milepost),
            a.lateral_ft as f64 + w * (b.lateral_ft as f64 - a.lateral_ft as f64),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionInterval {
    pub start: f64,
    pub end: f64,
    pub condition: Condition,
}

/// Queue state behind one event, sampled once per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailSample {
    pub t: f64,
    /// Upstream boundary of the queue, absent when no queue stands.
    pub tail_milepost: Option<f64>,
    /// Queue extent measured from the event location, miles.
    pub queue_length_mi: f64,
    pub queued_vehicles: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTrace {
    pub event_index: usize,
    pub condition: Condition,
    pub milepost: f64,
    /// Milepost of the upstream count station used by queueing diagrams.
    pub upstream_station_milepost: f64,
    pub samples: Vec<TailSample>,
}

/// Cumulative counts on one carriageway, sampled once per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountSample {
    pub t: f64,
    pub entered: u64,
    pub exited: u64,
    pub present: u64,
    /// Per event: vehicles that crossed the event location.
    pub passed_event: Vec<u64>,
    /// Per event: vehicles that crossed the upstream count station.
    pub passed_station: Vec<u64>,
}

/// Ground truth of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLog {
    pub spec: ScenarioSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vehicles: Vec<VehicleTrack>,
    pub conditions: Vec<ConditionInterval>,
    pub events: Vec<EventTrace>,
    pub patrol_counts: Vec<CountSample>,
    pub opposing_counts: Vec<CountSample>,
}

impl GroundTruthLog {
    pub fn duration(&self) -> f64 {
        self.spec.duration_s
    }

    pub fn condition_at(&self, t: f64) -> Option<Condition> {
        self.conditions.iter().find(|c| t >= c.start && t < c.end).map(|c| c.condition)
    }

    /// Tail sample of the first incident event (falling back to the first
    /// event of any kind) at the latest whole second not after `t`.
    pub fn tail_at(&self, t: f64) -> Option<TailSample> {
        let trace = self
            .events
            .iter()
            .find(|e| e.condition == Condition::Incident)
            .or_else(|| self.events.first())?;
        let idx = trace.samples.partition_point(|s| s.t <= t);
        idx.checked_sub(1).map(|i| trace.samples[i])
    }

    pub fn track(&self, id: u64) -> Option<&VehicleTrack> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    /// Copy without per-vehicle trajectories, for the sidecar file.
    pub fn sidecar(&self) -> GroundTruthLog {
        GroundTruthLog { vehicles: Vec::new(), ..self.clone() }
    }
}
