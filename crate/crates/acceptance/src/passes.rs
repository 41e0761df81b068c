//! Synthetic patrol passes: incident queues, off-ramp signal queues and
//! free flow, each flown over the stretch where its condition shows.

use darts_core::condition::Condition;
use darts_core::pipeline::dataset::LabeledVideo;
use darts_core::sim::{fly, simulate, DronePlan, ScenarioFile, ScenarioSpec, SimError, TrafficEvent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PASS_S: f64 = 150.0;
/// Signal queues are short; a shorter pass keeps them in view.
pub const RECURRENT_PASS_S: f64 = 70.0;
const ROAD_MI: f64 = 1.4;
const EVENT_MP: f64 = 1.3;

#[derive(Debug, Clone)]
pub struct Pass {
    pub name: String,
    pub class: Condition,
    pub file: ScenarioFile,
}

/// Composition of the benchmark: incident, recurrent, normal.
pub const COMPOSITION: [(Condition, usize); 3] =
    [(Condition::Incident, 12), (Condition::Recurrent, 3), (Condition::Normal, 16)];

pub fn benchmark(seed: u64) -> Vec<Pass> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (class, n) in COMPOSITION {
        for k in 0..n {
            let s = rng.random::<u32>() as u64;
            let file = match class {
                Condition::Incident => incident(&mut rng, s),
                Condition::Recurrent => recurrent(&mut rng, s),
                Condition::Normal => normal(&mut rng, s),
            };
            out.push(Pass { name: format!("{}-{k:02}", class.name()), class, file });
        }
    }
    out
}

fn base(rng: &mut ChaCha8Rng, seed: u64, demand: (f64, f64)) -> ScenarioFile {
    ScenarioFile {
        scenario: ScenarioSpec {
            road_length_mi: ROAD_MI,
            demand_vphpl: rng.random_range(demand.0..demand.1),
            seed,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn incident(rng: &mut ChaCha8Rng, seed: u64) -> ScenarioFile {
    let mut f = base(rng, seed, (1000.0, 1900.0));
    // one blocked lane only queues once demand exceeds the two open lanes
    let blocked = if f.scenario.demand_vphpl > 1500.0 && rng.random_bool(0.5) { vec![0] } else { vec![0, 1] };
    let t = rng.random_range(240.0..420.0);
    f.scenario.events = vec![TrafficEvent::Incident { milepost: EVENT_MP, start_s: 0.0, end_s: t + PASS_S + 60.0, blocked_lanes: blocked }];
    f.scenario.duration_s = t + PASS_S + 30.0;
    f.drone = DronePlan { start_time_s: t, duration_s: Some(PASS_S), ..Default::default() };
    f
}

fn recurrent(rng: &mut ChaCha8Rng, seed: u64) -> ScenarioFile {
    let mut f = base(rng, seed, (950.0, 1150.0));
    let t = rng.random_range(180.0..300.0);
    f.scenario.events = vec![TrafficEvent::Recurrent {
        milepost: EVENT_MP,
        start_s: 0.0,
        end_s: t + PASS_S + 60.0,
        green_s: rng.random_range(15.0..20.0),
        red_s: rng.random_range(50.0..65.0),
        lanes: Some(vec![2]),
    }];
    f.scenario.duration_s = t + PASS_S + 30.0;
    f.drone = DronePlan { start_time_s: t, duration_s: Some(RECURRENT_PASS_S), ..Default::default() };
    f
}

fn normal(rng: &mut ChaCha8Rng, seed: u64) -> ScenarioFile {
    let mut f = base(rng, seed, (600.0, 1700.0));
    let t = rng.random_range(120.0..300.0);
    f.scenario.duration_s = t + PASS_S + 30.0;
    f.drone = DronePlan {
        start_time_s: t,
        start_milepost: rng.random_range(0.2..0.9),
        duration_s: Some(PASS_S),
        ..Default::default()
    };
    f
}

/// Simulate, then start the drone a little upstream of whatever queue
/// stands at take-off so the pass flies into it.
pub fn record(pass: &Pass) -> Result<LabeledVideo, SimError> {
    let mut file = pass.file.clone();
    let log = simulate(&file.scenario)?;
    if pass.class != Condition::Normal {
        let tail = log
            .tail_at(file.drone.start_time_s)
            .and_then(|s| s.tail_milepost)
            .unwrap_or(EVENT_MP - 0.1);
        let span = file.drone.duration_s.unwrap_or(PASS_S) * file.drone.cruise_speed_mph / 3600.0;
        file.drone.start_milepost = (tail - 0.05).min(EVENT_MP - span).max(0.0);
    }
    let feed = fly(&log, &file.drone, &file.camera, &file.noise)?;
    Ok(LabeledVideo { name: pass.name.clone(), feed, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composition_and_determinism() {
        let a = benchmark(5);
        assert_eq!(a.len(), 31);
        for (class, n) in COMPOSITION {
            assert_eq!(a.iter().filter(|p| p.class == class).count(), n);
        }
        let b = benchmark(5);
        assert!(a.iter().zip(&b).all(|(x, y)| x.file == y.file));
        for p in &a {
            assert_eq!(p.file.scenario.condition(), p.class, "{}", p.name);
        }
    }
}
