//! Congestion length from staggered segments against the simulated queue.

use darts_core::aggregation::{AggregationPolicy, SegmentResult};
use darts_core::condition::Condition;
use darts_core::features::FlightReport;
use darts_core::sim::*;
use darts_core::units::FT_PER_MILE;

const P: f64 = 20.0;

#[test]
fn congestion_length_tracks_the_simulated_queue() {
    let event_mp = 1.25;
    let spec = ScenarioSpec {
        road_length_mi: 1.4,
        demand_vphpl: 1800.0,
        duration_s: 1200.0,
        seed: 4,
        events: vec![TrafficEvent::Incident { milepost: event_mp, start_s: 60.0, end_s: 1200.0, blocked_lanes: vec![0] }],
        ..Default::default()
    };
    let log = simulate(&spec).unwrap();
    let plan = DronePlan { start_time_s: 650.0, start_milepost: 0.0, ..Default::default() };
    let dir = AxisDirection::Increasing;
    let footprint_mi = 384.0 / FT_PER_MILE;
    let tail_at = |t: f64| log.tail_at(t).and_then(|s| s.tail_milepost);

    // an ideal classifier: a window is an incident image when the camera saw
    // any part of the standing queue during it
    let sees_queue = |t: f64| {
        let a = plan.milepost_at(t, dir);
        let b = plan.milepost_at(t + P, dir) + footprint_mi;
        (0..=P as usize).any(|k| tail_at(t + k as f64).is_some_and(|tail| b >= tail && a <= event_mp))
    };

    let end = plan.end_time(spec.road_length_mi, dir, spec.duration_s);
    let mut report = FlightReport::new("sim", plan.start_time_s, P as u32);
    let mut id = 0;
    for lane in 0..3u8 {
        let mut s = plan.start_time_s + 40.0 * lane as f64;
        while s + 120.0 <= end {
            let labels: Vec<Condition> = (0..=100)
                .map(|k| if sees_queue(s + k as f64) { Condition::Incident } else { Condition::Normal })
                .collect();
            let gps = (plan.milepost_at(s, dir), plan.milepost_at(s + 120.0, dir));
            report.segments.push(SegmentResult::new(id, lane, (s, s + 120.0), gps, labels, &AggregationPolicy::default()).unwrap());
            id += 1;
            s += 120.0;
        }
    }

    let (length, span) = report.congestion_length().expect("queue detected");
    // ground truth at the moment the drone reached the queue tail
    let t_pass = (plan.start_time_s as u64..end as u64)
        .map(|t| t as f64)
        .find(|&t| tail_at(t).is_some_and(|tail| plan.milepost_at(t, dir) + footprint_mi >= tail))
        .unwrap();
    let truth = event_mp - tail_at(t_pass).unwrap();
    let unit = 40.0 * 10.0 / 3600.0;
    assert!(
        (length - truth).abs() <= 2.0 * unit,
        "estimated {length:.3} mi over {span:?}, simulated queue {truth:.3} mi"
    );
    let scene = report.scene_window().unwrap();
    let seg = report.segments.iter().find(|s| s.segment_id == scene.segment_id).unwrap();
    assert!(scene.t0 >= seg.time_span.0 && scene.t1 <= seg.time_span.1);
    assert!(scene.t1 - scene.t0 >= P);
}
