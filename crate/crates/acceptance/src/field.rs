//! Three patrol passes over one simulated afternoon: a signal queue at the
//! off-ramp during the first pass, then a lane-blocking crash upstream of
//! it whose queue grows through the second and third passes.

use darts_core::feed::Feed;
use darts_core::sim::{fly, simulate, DronePlan, GroundTruthLog, ScenarioFile, ScenarioSpec, SimError, TrafficEvent};
use darts_service::{FlightDetail, Service, ServiceError, StartRequest};

/// 2024-04-18 16:48 EDT, start of the first pass.
pub const FIRST_PASS_EPOCH: f64 = 1_713_473_280.0;
/// Pass starts relative to the first, minutes.
pub const PASS_OFFSETS_MIN: [f64; 3] = [0.0, 11.0, 23.0];
/// Reference verification time 27 minutes after the first pass (17:15).
pub const TMC_MARKER_EPOCH: f64 = FIRST_PASS_EPOCH + 27.0 * 60.0;
/// Required lead of the detection over the marker, minutes.
pub const REQUIRED_LEAD_MIN: f64 = 12.0;

pub const WARMUP_S: f64 = 300.0;
pub const OFF_RAMP_MP: f64 = 1.2;
pub const CRASH_MP: f64 = 0.9;
/// Crash time, simulation seconds: after the first pass has cleared it.
pub const CRASH_S: f64 = WARMUP_S + 530.0;

pub fn scenario() -> ScenarioFile {
    let last_pass = WARMUP_S + PASS_OFFSETS_MIN[2] * 60.0;
    ScenarioFile {
        scenario: ScenarioSpec {
            road_length_mi: 1.4,
            demand_vphpl: 1000.0,
            duration_s: last_pass + 540.0,
            epoch_start: FIRST_PASS_EPOCH - WARMUP_S,
            seed: 17,
            events: vec![
                TrafficEvent::Recurrent {
                    milepost: OFF_RAMP_MP,
                    start_s: 0.0,
                    end_s: WARMUP_S + 540.0,
                    green_s: 15.0,
                    red_s: 60.0,
                    lanes: Some(vec![2]),
                },
                TrafficEvent::Incident { milepost: CRASH_MP, start_s: CRASH_S, end_s: last_pass + 600.0, blocked_lanes: vec![0, 1] },
            ],
            ..Default::default()
        },
        ..Default::default()
    }
}

pub fn plan(pass: usize) -> DronePlan {
    DronePlan { start_time_s: WARMUP_S + PASS_OFFSETS_MIN[pass] * 60.0, start_milepost: 0.0, ..Default::default() }
}

/// The simulated afternoon and one feed per pass.
pub fn record() -> Result<(GroundTruthLog, Vec<Feed>), SimError> {
    let file = scenario();
    let log = simulate(&file.scenario)?;
    let feeds = (0..3).map(|k| fly(&log, &plan(k), &file.camera, &file.noise)).collect::<Result<Vec<_>, _>>()?;
    Ok((log, feeds))
}

pub const FREEWAY: &str = "I-75";

/// Fly each pass as its own flight through the service, in order, and
/// return the archived flights.
pub async fn replay_passes(service: &Service, feeds: &[Feed]) -> Result<Vec<FlightDetail>, ServiceError> {
    let mut out = Vec::new();
    for (k, feed) in feeds.iter().enumerate() {
        let start_time = FIRST_PASS_EPOCH + PASS_OFFSETS_MIN[k] * 60.0;
        service
            .start(StartRequest {
                freeway: FREEWAY.into(),
                start_time: Some(start_time),
                notes: Some(format!("pass {}", k + 1)),
                ..Default::default()
            })
            .await?;
        for r in feed.records() {
            service.ingest(r)?;
        }
        service.end_of_stream()?;
        let (_, summary) = service.stop().await?;
        let detail = service
            .with_archive(|a| a.detail(&summary.flight_id))
            .ok_or_else(|| ServiceError::Internal(format!("flight {} not archived", summary.flight_id)))?;
        out.push(detail);
    }
    Ok(out)
}
