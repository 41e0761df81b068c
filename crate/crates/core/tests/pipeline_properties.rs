use std::collections::HashMap;

use darts_core::feed::{Detection, FrameDetections, GpsFix};
use darts_core::pipeline::*;
use darts_core::sim::*;
use darts_core::units::{FT_PER_MILE, M_PER_MILE};
use proptest::prelude::*;

fn incident_log(seed: u64) -> GroundTruthLog {
    simulate(&ScenarioSpec {
        demand_vphpl: 1500.0,
        duration_s: 600.0,
        seed,
        events: vec![TrafficEvent::Incident { milepost: 1.0, start_s: 200.0, end_s: 600.0, blocked_lanes: vec![0] }],
        ..Default::default()
    })
    .unwrap()
}

fn strip_ids(frames: &[FrameDetections]) -> Vec<FrameDetections> {
    frames
        .iter()
        .map(|f| FrameDetections {
            detections: f.detections.iter().map(|d| Detection { vehicle_id: None, ..*d }).collect(),
            ..f.clone()
        })
        .collect()
}

#[test]
fn crossing_tracks_keep_identity() {
    // two vehicles swap lanes while one overtakes the other
    let frames: Vec<FrameDetections> = (0..60u64)
        .map(|k| {
            let s = k as f64;
            let a = Detection { vehicle_id: Some(1), x_px: 100.0 + 12.0 * s, y_px: 300.0 + 20.0 * s / 59.0 };
            let b = Detection { vehicle_id: Some(2), x_px: 300.0 + 8.5 * s, y_px: 320.0 - 20.0 * s / 59.0 };
            FrameDetections { frame_index: k, timestamp: s * 0.1, detections: vec![a, b] }
        })
        .collect();
    let truth: HashMap<(u64, u64), u64> = frames
        .iter()
        .flat_map(|f| f.detections.iter().map(move |d| ((f.frame_index, d.x_px.to_bits()), d.vehicle_id.unwrap())))
        .collect();
    let tracks = associate(&strip_ids(&frames), &AssociationConfig::default());
    let mut swaps = 0;
    for t in &tracks {
        let ids: Vec<u64> = t
            .points
            .iter()
            .filter(|p| !p.interpolated)
            .map(|p| truth[&(p.frame_index, p.x.to_bits())])
            .collect();
        swaps += ids.windows(2).filter(|w| w[0] != w[1]).count();
    }
    assert!(swaps <= 1, "{swaps} identity swaps");
    let covered: usize = tracks.iter().map(|t| t.points.len()).sum();
    assert!(covered >= 110);
}

#[test]
fn anonymous_association_on_simulated_traffic() {
    let log = incident_log(21);
    let plan = DronePlan { start_time_s: 300.0, start_milepost: 0.6, duration_s: Some(60.0), ..Default::default() };
    let noise = NoiseConfig { emit_ids: true, ..NoiseConfig::default() };
    let feed = fly(&log, &plan, &CameraConfig::default(), &noise).unwrap();
    let truth: HashMap<(u64, u64), u64> = feed
        .frames
        .iter()
        .flat_map(|f| f.detections.iter().map(move |d| ((f.frame_index, d.x_px.to_bits()), d.vehicle_id.unwrap())))
        .collect();
    let tracks = associate(&strip_ids(&feed.frames), &AssociationConfig::for_header(&feed.header));
    let (mut swaps, mut points) = (0usize, 0usize);
    for t in &tracks {
        let ids: Vec<u64> = t
            .points
            .iter()
            .filter(|p| !p.interpolated)
            .map(|p| truth[&(p.frame_index, p.x.to_bits())])
            .collect();
        points += ids.len();
        swaps += ids.windows(2).filter(|w| w[0] != w[1]).count();
    }
    let detections: usize = feed.frames.iter().map(|f| f.detections.len()).sum();
    assert!(points as f64 >= 0.95 * detections as f64, "{points} of {detections} detections tracked");
    assert!((swaps as f64) < 0.01 * points as f64, "{swaps} swaps over {points} points");
}

#[test]
fn compensated_speed_matches_ground_truth() {
    let log = incident_log(5);
    let plan = DronePlan { start_time_s: 100.0, start_milepost: 0.3, duration_s: Some(40.0), ..Default::default() };
    let feed = fly(&log, &plan, &CameraConfig::default(), &NoiseConfig::none()).unwrap();
    let tracks = associate(&feed.frames, &AssociationConfig::default());
    let (trajs, rejected) = compensate(&tracks, &feed.gps, feed.header.gsd_ft);
    assert!(rejected.is_empty(), "{rejected:?}");
    let tol = 2.0 * feed.header.gsd_ft * feed.header.fps;
    let epoch = log.spec.epoch_start;
    let mut checked = 0;
    for tr in &trajs {
        let truth = log.track(tr.vehicle_id).unwrap();
        for w in tr.samples.windows(2) {
            let dt = w[1].t - w[0].t;
            let v = (w[1].road_x - w[0].road_x) / dt;
            let (m0, _) = truth.position_at(w[0].t - epoch).unwrap();
            let (m1, _) = truth.position_at(w[1].t - epoch).unwrap();
            let v_true = (m1 - m0) * FT_PER_MILE / dt;
            assert!((v - v_true).abs() <= tol, "vehicle {}: {v} vs {v_true}", tr.vehicle_id);
            checked += 1;
        }
    }
    assert!(checked > 1000);
}

#[test]
fn constant_speed_vehicle_recovers_sixty_mph() {
    // synthetic vehicle at 60 mph under a 10 mph drone, detections rounded
    // to whole pixels
    let gsd = 0.6;
    let v = 88.0;
    let drone = 10.0 * 5280.0 / 3600.0;
    let gps: Vec<GpsFix> = (0..=12)
        .map(|s| GpsFix {
            timestamp: s as f64,
            latitude: 0.0,
            longitude: 0.0,
            milepost: drone * s as f64 / FT_PER_MILE,
            altitude_ft: 200.0,
        })
        .collect();
    let frames: Vec<FrameDetections> = (0..70u64)
        .map(|k| {
            let t = k as f64 * 0.1;
            let x = ((v - drone) * t / gsd).round();
            FrameDetections { frame_index: k, timestamp: t, detections: vec![Detection { vehicle_id: Some(1), x_px: x, y_px: 400.0 }] }
        })
        .collect();
    let tracks = associate(&frames, &AssociationConfig::default());
    let (trajs, _) = compensate(&tracks, &gps, gsd);
    let s = &trajs[0].samples;
    let speed = (s.last().unwrap().road_x - s[0].road_x) / (s.last().unwrap().t - s[0].t);
    assert!((speed - v).abs() <= gsd / (s.last().unwrap().t - s[0].t) + 1e-9, "{speed}");
}

#[test]
fn direction_filter_removes_exactly_the_opposing_carriageway() {
    let log = incident_log(13);
    let plan = DronePlan { start_time_s: 350.0, start_milepost: 0.85, duration_s: Some(60.0), ..Default::default() };
    let feed = fly(&log, &plan, &CameraConfig::default(), &NoiseConfig::none()).unwrap();
    let tracks = associate(&feed.frames, &AssociationConfig::default());
    let (trajs, _) = compensate(&tracks, &feed.gps, feed.header.gsd_ft);
    let side = |t: &Trajectory| log.track(t.vehicle_id).unwrap().carriageway;
    let opposing = trajs.iter().filter(|t| side(t) == Carriageway::Opposing).count();
    let patrol = trajs.iter().filter(|t| side(t) == Carriageway::Patrol).count();
    let stopped = trajs.iter().filter(|t| net_displacement(t, AxisDirection::Increasing).abs() <= 10.0).count();
    assert!(opposing > 20 && patrol > 20 && stopped > 0, "{opposing} {patrol} {stopped}");
    let kept = filter_direction(trajs, AxisDirection::Increasing, 10.0);
    assert!(kept.iter().all(|t| side(t) == Carriageway::Patrol));
    assert_eq!(kept.len(), patrol);
}

#[test]
fn stopped_vehicle_is_a_dot_and_lane_change_is_diagonal() {
    let log = incident_log(17);
    let header = darts_core::feed::FeedHeader::default();
    let parked = |mp: f64| -> Vec<GpsFix> {
        (0..=600)
            .map(|s| GpsFix { timestamp: s as f64, latitude: 0.0, longitude: 0.0, milepost: mp, altitude_ft: 200.0 })
            .collect()
    };
    let to_traj = |v: &log::VehicleTrack, t0: f64, t1: f64| Trajectory {
        vehicle_id: v.id,
        samples: v
            .points
            .iter()
            .filter(|p| p.t >= t0 && p.t <= t1)
            .map(|p| RoadSample {
                t: p.t,
                road_x: p.milepost * FT_PER_MILE,
                road_y: header.frame_height as f64 / 2.0 * header.gsd_ft + p.lateral_ft as f64,
            })
            .collect(),
    };

    let config = PipelineConfig::default();
    let obstacle = log.vehicles.iter().find(|v| v.obstacle).unwrap();
    let gps = parked(obstacle.points[0].milepost - 100.0 / FT_PER_MILE);
    let img = render_window(&[to_traj(obstacle, 300.0, 320.0)], &gps, &header, &config, 300.0).unwrap();
    let (x0, y0, x1, y1) = img.bounding_box(0.0).unwrap();
    assert!(x1 - x0 <= 1 && y1 - y0 <= 1, "blob {:?}", (x0, y0, x1, y1));

    let (v, t, mp) = log
        .vehicles
        .iter()
        .filter(|v| v.carriageway == Carriageway::Patrol && !v.obstacle)
        .find_map(|v| {
            v.points
                .windows(2)
                .find(|w| w[0].lane != w[1].lane && w[0].speed_mps > 15.0 && w[0].t > 210.0 && w[0].t < 580.0)
                .map(|w| (v, w[0].t, w[0].milepost))
        })
        .expect("some vehicle changes lane");
    let config = PipelineConfig { extraction_period_s: 5, ..Default::default() };
    let t0 = (t - 2.0).floor();
    let img = render_window(&[to_traj(v, t0, t0 + 5.0)], &parked(mp - 200.0 / FT_PER_MILE), &header, &config, t0).unwrap();
    let (x0, y0, x1, y1) = img.bounding_box(0.05).unwrap();
    let lane_px = 12.0 / (header.frame_height as f64 * header.gsd_ft) * (config.canvas_height - 1) as f64;
    assert!((y1 - y0) as f64 >= lane_px - 1.0, "stroke crosses a lane: {:?}", (x0, y0, x1, y1));
    assert!(x1 - x0 > y1 - y0);
}

#[test]
fn end_to_end_images_for_a_two_minute_segment() {
    let log = incident_log(2);
    let plan = DronePlan { start_time_s: 300.0, start_milepost: 0.6, duration_s: Some(120.0), ..Default::default() };
    let feed = fly(&log, &plan, &CameraConfig::default(), &NoiseConfig::default()).unwrap();
    let t0 = feed.frames[0].timestamp;
    let images = feed_to_images(
        &feed.frames,
        &feed.gps,
        &feed.header,
        &PipelineConfig::default(),
        AxisDirection::Increasing,
        t0,
        t0 + 120.0,
    )
    .unwrap();
    assert_eq!(images.len(), 101);
    assert!(images.iter().all(|i| i.mass() > 10.0));
    assert!(images.iter().all(|i| i.pixels.iter().all(|&p| (0.0..=1.0).contains(&p))));
}

#[test]
fn ground_truth_units_are_consistent() {
    assert!((M_PER_MILE / 0.3048 - FT_PER_MILE).abs() < 1e-6);
}

proptest! {
    #[test]
    fn window_count_formula(t in 3.0f64..500.0, p in prop::sample::select(vec![3u32, 5, 10, 15, 20])) {
        let n = window_starts(0.0, t, p as f64).len();
        if t >= p as f64 {
            prop_assert_eq!(n, (t - p as f64).floor() as usize + 1);
        } else {
            prop_assert_eq!(n, 0);
        }
    }

    #[test]
    fn rendered_points_come_from_inside_the_window(offset in 0.0f64..40.0) {
        // a trajectory that exists only outside the window leaves no ink
        let gps: Vec<GpsFix> = (0..=100)
            .map(|s| GpsFix { timestamp: s as f64, latitude: 0.0, longitude: 0.0, milepost: 0.0, altitude_ft: 200.0 })
            .collect();
        let traj = Trajectory {
            vehicle_id: 1,
            samples: (0..20)
                .map(|k| RoadSample { t: 21.0 + offset + k as f64 * 0.5, road_x: 10.0 * k as f64, road_y: 160.0 })
                .collect(),
        };
        let img = render_window(&[traj], &gps, &Default::default(), &PipelineConfig::default(), 0.0).unwrap();
        prop_assert_eq!(img.mass(), 0.0);
    }
}
