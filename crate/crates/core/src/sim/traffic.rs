//! Microscopic freeway simulation: intelligent-driver-model car following
//! with an incentive-based lane-change rule, point-queue entry, incidents as
//! vehicles frozen in place and recurrent bottlenecks as signalized stop lines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use super::log::{
    Carriageway, ConditionInterval, CountSample, EventTrace, GroundTruthLog, TailSample, TrajPoint, VehicleTrack,
};
use super::scenario::{AxisDirection, DriverParams, ScenarioSpec, TrafficEvent};
use crate::condition::Condition;
use crate::units::{m_to_miles, miles_to_m, mph_to_mps};

pub const LANE_WIDTH_FT: f64 = 12.0;
/// Distance from the median to the inner edge of either carriageway, ft.
pub const MEDIAN_HALF_WIDTH_FT: f64 = 8.0;

/// Queue detection: vehicles slower than this count as queued, m/s.
const QUEUE_SPEED_MPS: f64 = 8.0;
const QUEUE_BIN_M: f64 = 25.0;
const QUEUE_MAX_GAP_BINS: usize = 2;
/// A lane whose obstacle lies this close ahead must be vacated, m.
const BLOCK_LOOKAHEAD_M: f64 = 300.0;
const LANE_CHANGE_COOLDOWN_S: f64 = 4.0;
const STATION_OFFSET_M: f64 = 500.0;
const MAX_DECEL: f64 = 9.0;

/// Lateral offset of a lane center from the median, ft. Lane 0 is the
/// outermost (shoulder) lane.
pub fn lane_center_ft(carriageway: Carriageway, lane: usize, lanes: usize) -> f64 {
    let from_median = MEDIAN_HALF_WIDTH_FT + LANE_WIDTH_FT * (lanes - 1 - lane) as f64 + LANE_WIDTH_FT / 2.0;
    match carriageway {
        Carriageway::Patrol => from_median,
        Carriageway::Opposing => -from_median,
    }
}

#[derive(Debug, Clone)]
struct Vehicle {
    id: u64,
    lane: usize,
    /// Front bumper, metres from the carriageway entry.
    s: f64,
    v: f64,
    v0: f64,
    fixed_by: Option<usize>,
    lc_from: Option<usize>,
    lc_start: f64,
    last_lc: f64,
    track: Vec<TrajPoint>,
}

fn idm(p: &DriverParams, v: f64, v0: f64, gap: f64, dv: f64) -> f64 {
    let free = 1.0 - (v / v0).powi(4);
    if !gap.is_finite() {
        return p.max_accel * free;
    }
    let s_star = p.min_gap_m + (v * p.time_headway_s + v * dv / (2.0 * (p.max_accel * p.comfortable_decel).sqrt())).max(0.0);
    let gap = gap.max(0.1);
    (p.max_accel * (free - (s_star / gap).powi(2))).max(-MAX_DECEL)
}

struct Road {
    carriageway: Carriageway,
    lanes: usize,
    length_m: f64,
    direction: AxisDirection,
    road_length_mi: f64,
    demand_per_lane_s: f64,
    vehicles: Vec<Vehicle>,
    lane_lists: Vec<Vec<usize>>,
    /// Positions of frozen vehicles per lane, rebuilt with `lane_lists`.
    obstacles: Vec<Vec<f64>>,
    entry_queue: Vec<u32>,
    next_arrival: Vec<f64>,
    entered: u64,
    exited: u64,
    finished: Vec<VehicleTrack>,
}

/// Stop line of a signal currently showing red.
struct StopLine {
    s: f64,
    lanes: Vec<bool>,
}

impl Road {
    fn milepost(&self, s: f64) -> f64 {
        match self.direction {
            AxisDirection::Increasing => m_to_miles(s),
            AxisDirection::Decreasing => self.road_length_mi - m_to_miles(s),
        }
    }

    fn s_of_milepost(&self, milepost: f64) -> f64 {
        match self.direction {
            AxisDirection::Increasing => miles_to_m(milepost),
            AxisDirection::Decreasing => miles_to_m(self.road_length_mi - milepost),
        }
    }

    fn lateral(&self, v: &Vehicle, t: f64, p: &DriverParams) -> f64 {
        let to = lane_center_ft(self.carriageway, v.lane, self.lanes);
        match v.lc_from {
            Some(from) if t - v.lc_start < p.lane_change_duration_s => {
                let a = lane_center_ft(self.carriageway, from, self.lanes);
                let w = ((t - v.lc_start) / p.lane_change_duration_s).clamp(0.0, 1.0);
                a + w * (to - a)
            }
            _ => to,
        }
    }

    fn rebuild_lanes(&mut self) {
        for l in &mut self.lane_lists {
            l.clear();
        }
        for l in &mut self.obstacles {
            l.clear();
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            self.lane_lists[v.lane].push(i);
            if v.fixed_by.is_some() {
                self.obstacles[v.lane].push(v.s);
            }
        }
        let vehicles = &self.vehicles;
        for l in &mut self.lane_lists {
            l.sort_by(|&a, &b| vehicles[b].s.total_cmp(&vehicles[a].s).then(vehicles[a].id.cmp(&vehicles[b].id)));
        }
    }

    /// Leader and follower of position `s` in `lane`, excluding `skip`.
    fn neighbours(&self, lane: usize, s: f64, skip: usize) -> (Option<usize>, Option<usize>) {
        let list = &self.lane_lists[lane];
        // list is sorted by descending s
        let split = list.partition_point(|&j| self.vehicles[j].s > s);
        let leader = list[..split].iter().rev().copied().find(|&j| j != skip);
        let follower = list[split..].iter().copied().find(|&j| j != skip);
        (leader, follower)
    }

    fn accel_behind(&self, p: &DriverParams, follower: usize, leader: Option<usize>, stops: &[StopLine]) -> f64 {
        let f = &self.vehicles[follower];
        if f.fixed_by.is_some() {
            return 0.0;
        }
        let mut acc = match leader {
            Some(l) => {
                let l = &self.vehicles[l];
                idm(p, f.v, f.v0, l.s - p.vehicle_length_m - f.s, f.v - l.v)
            }
            None => idm(p, f.v, f.v0, f64::INFINITY, 0.0),
        };
        for stop in stops {
            if !stop.lanes[f.lane] || f.s >= stop.s {
                continue;
            }
            let gap = stop.s - f.s;
            // Drivers that cannot stop comfortably clear the line.
            if f.v * f.v / (2.0 * gap.max(0.01)) <= p.safe_decel {
                acc = acc.min(idm(p, f.v, f.v0, gap, f.v));
            }
        }
        acc
    }

    fn current_accels(&self, p: &DriverParams, stops: &[StopLine]) -> Vec<f64> {
        let mut acc = vec![0.0; self.vehicles.len()];
        for list in &self.lane_lists {
            for (k, &i) in list.iter().enumerate() {
                let leader = if k == 0 { None } else { Some(list[k - 1]) };
                acc[i] = self.accel_behind(p, i, leader, stops);
            }
        }
        acc
    }

    fn obstacle_ahead(&self, lane: usize, s: f64) -> bool {
        self.obstacles[lane].iter().any(|&o| o > s && o - s < BLOCK_LOOKAHEAD_M)
    }

    fn lane_changes(&mut self, p: &DriverParams, t: f64, step: u64, stops: &[StopLine]) {
        if self.lanes < 2 {
            return;
        }
        let acc = self.current_accels(p, stops);
        let order: Vec<usize> = (0..self.vehicles.len()).collect();
        for i in order {
            let (lane, s, v, v0, id, fixed, last_lc) = {
                let x = &self.vehicles[i];
                (x.lane, x.s, x.v, x.v0, x.id, x.fixed_by.is_some(), x.last_lc)
            };
            if fixed || t - last_lc < LANE_CHANGE_COOLDOWN_S {
                continue;
            }
            let urgent = self.obstacle_ahead(lane, s);
            if !urgent && (step + id) % 10 != 0 {
                continue;
            }
            let (own_leader, own_follower) = self.neighbours(lane, s, i);
            let a_cur = self.accel_behind(p, i, own_leader, stops);
            let mut best: Option<(f64, usize)> = None;
            for target in [lane.wrapping_sub(1), lane + 1] {
                if target >= self.lanes || self.obstacle_ahead(target, s) {
                    continue;
                }
                let (leader, follower) = self.neighbours(target, s, i);
                if let Some(l) = leader {
                    if self.vehicles[l].s - p.vehicle_length_m - s < p.min_gap_m {
                        continue;
                    }
                }
                let a_new = match leader {
                    Some(l) => {
                        let l = &self.vehicles[l];
                        idm(p, v, v0, l.s - p.vehicle_length_m - s, v - l.v)
                    }
                    None => idm(p, v, v0, f64::INFINITY, 0.0),
                };
                let mut follower_gain = 0.0;
                if let Some(f) = follower {
                    let fv = &self.vehicles[f];
                    let gap = s - p.vehicle_length_m - fv.s;
                    if gap < p.min_gap_m {
                        continue;
                    }
                    let a_f_new = if fv.fixed_by.is_some() { 0.0 } else { idm(p, fv.v, fv.v0, gap, fv.v - v) };
                    let limit = if urgent && v < 2.0 { 1.5 * p.safe_decel } else { p.safe_decel };
                    if a_f_new < -limit {
                        continue;
                    }
                    follower_gain += a_f_new - acc[f];
                }
                if let Some(o) = own_follower {
                    let a_o_new = self.accel_behind(p, o, own_leader, stops);
                    follower_gain += a_o_new - acc[o];
                }
                let incentive = a_new - a_cur + p.politeness * follower_gain;
                let threshold = if urgent { f64::NEG_INFINITY } else { p.lane_change_threshold };
                if incentive > threshold && best.is_none_or(|(b, _)| incentive > b) {
                    best = Some((incentive, target));
                }
            }
            if let Some((_, target)) = best {
                let veh = &mut self.vehicles[i];
                veh.lc_from = Some(lane);
                veh.lc_start = t;
                veh.last_lc = t;
                veh.lane = target;
                self.lane_lists[lane].retain(|&j| j != i);
                let vehicles = &self.vehicles;
                let pos = self.lane_lists[target].partition_point(|&j| vehicles[j].s > s);
                self.lane_lists[target].insert(pos, i);
            }
        }
    }

    fn advance(&mut self, p: &DriverParams, dt: f64, stops: &[StopLine]) {
        let acc = self.current_accels(p, stops);
        for (v, a) in self.vehicles.iter_mut().zip(acc) {
            if v.fixed_by.is_some() {
                v.v = 0.0;
                continue;
            }
            let nv = v.v + a * dt;
            if nv < 0.0 {
                // stop within the step
                if a < 0.0 {
                    v.s += -v.v * v.v / (2.0 * a);
                }
                v.v = 0.0;
            } else {
                v.s += v.v * dt + 0.5 * a * dt * dt;
                v.v = nv;
            }
        }
        // Collision guard, front to back.
        let len = p.vehicle_length_m;
        for list in &self.lane_lists {
            for k in 1..list.len() {
                let (lead_s, lead_v) = {
                    let l = &self.vehicles[list[k - 1]];
                    (l.s, l.v)
                };
                let f = &mut self.vehicles[list[k]];
                let max_s = lead_s - len - 0.5;
                if f.s > max_s {
                    f.s = max_s;
                    f.v = f.v.min(lead_v);
                }
            }
        }
    }

    fn spawn(&mut self, rng: &mut ChaCha8Rng, p: &DriverParams, id: u64, lane: usize, s: f64, v: Option<f64>, t: f64) {
        let spread = Normal::new(0.0, p.desired_speed_spread).expect("valid spread");
        let factor = (1.0 + spread.sample(rng)).clamp(0.8, 1.2);
        let v0 = mph_to_mps(p.desired_speed_mph) * factor;
        self.vehicles.push(Vehicle {
            id,
            lane,
            s,
            v: v.unwrap_or(v0).min(v0),
            v0,
            fixed_by: None,
            lc_from: None,
            lc_start: f64::NEG_INFINITY,
            last_lc: t - LANE_CHANGE_COOLDOWN_S,
            track: Vec::new(),
        });
        self.entered += 1;
    }

    fn exits(&mut self) {
        let mut k = 0;
        while k < self.vehicles.len() {
            if self.vehicles[k].s > self.length_m {
                let v = self.vehicles.swap_remove(k);
                self.retire(v, false);
                self.exited += 1;
            } else {
                k += 1;
            }
        }
    }

    fn retire(&mut self, v: Vehicle, obstacle: bool) {
        if v.track.is_empty() {
            return;
        }
        self.finished.push(VehicleTrack { id: v.id, carriageway: self.carriageway, obstacle, points: v.track });
    }

    fn entries(&mut self, rng: &mut ChaCha8Rng, p: &DriverParams, t: f64, next_id: &mut u64) {
        if self.demand_per_lane_s <= 0.0 {
            return;
        }
        let exp = Exp::new(self.demand_per_lane_s).expect("positive rate");
        for lane in 0..self.lanes {
            while self.next_arrival[lane] <= t {
                self.entry_queue[lane] += 1;
                self.next_arrival[lane] += exp.sample(rng);
            }
            if self.entry_queue[lane] == 0 {
                continue;
            }
            let last = self.vehicles.iter().filter(|v| v.lane == lane).min_by(|a, b| a.s.total_cmp(&b.s));
            let (ok, speed) = match last {
                None => (true, None),
                Some(l) => {
                    let gap = l.s - p.vehicle_length_m;
                    let v_ins = l.v;
                    (gap >= p.min_gap_m + v_ins * p.time_headway_s, Some(v_ins))
                }
            };
            if ok {
                self.entry_queue[lane] -= 1;
                let id = *next_id;
                *next_id += 1;
                self.spawn(rng, p, id, lane, 0.0, speed, t);
            }
        }
    }

    fn record(&mut self, t: f64, p: &DriverParams) {
        for k in 0..self.vehicles.len() {
            let lateral = self.lateral(&self.vehicles[k], t, p);
            let milepost = self.milepost(self.vehicles[k].s);
            let v = &mut self.vehicles[k];
            v.track.push(TrajPoint {
                t,
                milepost,
                lane: v.lane as u8,
                lateral_ft: lateral as f32,
                speed_mps: v.v as f32,
            });
        }
    }

    /// Contiguous queue upstream of `s_event`: (tail s, queued vehicles).
    fn queue_tail(&self, s_event: f64) -> Option<(f64, u32)> {
        let nbins = (s_event / QUEUE_BIN_M).ceil() as usize;
        if nbins == 0 {
            return None;
        }
        let mut count = vec![0u32; nbins];
        let mut slow = vec![0u32; nbins];
        let mut speed = vec![0.0f64; nbins];
        for v in &self.vehicles {
            if v.fixed_by.is_some() || v.s >= s_event || v.s < 0.0 {
                continue;
            }
            let k = ((s_event - v.s) / QUEUE_BIN_M) as usize;
            if k < nbins {
                count[k] += 1;
                speed[k] += v.v;
                if v.v < QUEUE_SPEED_MPS {
                    slow[k] += 1;
                }
            }
        }
        let congested = |k: usize| count[k] > 0 && speed[k] / (count[k] as f64) < QUEUE_SPEED_MPS;
        let mut last = None;
        let mut gap = 0;
        for k in 0..nbins {
            if congested(k) {
                last = Some(k);
                gap = 0;
            } else {
                gap += 1;
                if gap > QUEUE_MAX_GAP_BINS {
                    break;
                }
            }
        }
        let last = last?;
        let tail = (s_event - (last + 1) as f64 * QUEUE_BIN_M).max(0.0);
        let queued = slow[..=last].iter().sum();
        Some((tail, queued))
    }
}

/// Run the microsimulation described by `spec`.
pub(super) fn run(spec: &ScenarioSpec) -> GroundTruthLog {
    let p = &spec.driver;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let length_m = miles_to_m(spec.road_length_mi);
    let mut next_id: u64 = 1;

    let make_road = |cw: Carriageway, lanes: usize, demand: f64, direction: AxisDirection| Road {
        carriageway: cw,
        lanes,
        length_m,
        direction,
        road_length_mi: spec.road_length_mi,
        demand_per_lane_s: demand / 3600.0,
        vehicles: Vec::new(),
        lane_lists: vec![Vec::new(); lanes],
        obstacles: vec![Vec::new(); lanes],
        entry_queue: vec![0; lanes],
        next_arrival: vec![0.0; lanes],
        entered: 0,
        exited: 0,
        finished: Vec::new(),
    };
    let opposing_dir = match spec.patrol_direction {
        AxisDirection::Increasing => AxisDirection::Decreasing,
        AxisDirection::Decreasing => AxisDirection::Increasing,
    };
    let mut roads = vec![make_road(Carriageway::Patrol, spec.lane_count, spec.demand_vphpl, spec.patrol_direction)];
    if spec.opposing.lanes > 0 {
        roads.push(make_road(Carriageway::Opposing, spec.opposing.lanes, spec.opposing.demand_vphpl, opposing_dir));
    }

    // Pre-populate at free-flow equilibrium so patrols need no warm-up.
    for road in &mut roads {
        if road.demand_per_lane_s <= 0.0 {
            continue;
        }
        let v_free = mph_to_mps(p.desired_speed_mph);
        let exp = Exp::new(road.demand_per_lane_s).expect("positive rate");
        for lane in 0..road.lanes {
            let mut s = length_m - rng.random::<f64>() * 30.0;
            while s > 0.0 {
                let id = next_id;
                next_id += 1;
                road.spawn(&mut rng, p, id, lane, s, Some(v_free), 0.0);
                let headway = exp.sample(&mut rng).max(p.time_headway_s + (p.vehicle_length_m + p.min_gap_m) / v_free);
                s -= headway * v_free;
            }
            road.next_arrival[lane] = exp.sample(&mut rng);
        }
    }

    let event_s: Vec<f64> = spec.events.iter().map(|e| roads[0].s_of_milepost(e.milepost())).collect();
    let station_s: Vec<f64> = event_s.iter().map(|s| (s - STATION_OFFSET_M).max(0.0)).collect();
    let mut incident_on = vec![false; spec.events.len()];
    let mut traces: Vec<EventTrace> = spec
        .events
        .iter()
        .enumerate()
        .map(|(i, e)| EventTrace {
            event_index: i,
            condition: e.condition(),
            milepost: e.milepost(),
            upstream_station_milepost: roads[0].milepost(station_s[i]),
            samples: Vec::new(),
        })
        .collect();
    let mut passed_event = vec![0u64; spec.events.len()];
    let mut passed_station = vec![0u64; spec.events.len()];
    let mut patrol_counts = Vec::new();
    let mut opposing_counts = Vec::new();
    let mut labels: Vec<Condition> = Vec::new();

    let dt = p.dt_s;
    let steps = (spec.duration_s / dt).round() as u64;
    let record_every = (spec.record_interval_s / dt).round().max(1.0) as u64;
    let per_second = (1.0 / dt).round().max(1.0) as u64;

    for step in 0..=steps {
        let t = step as f64 * dt;

        // Incident activation and clearance.
        for (i, ev) in spec.events.iter().enumerate() {
            let TrafficEvent::Incident { blocked_lanes, .. } = ev else { continue };
            let active = ev.is_active(t);
            if active && !incident_on[i] {
                incident_on[i] = true;
                let road = &mut roads[0];
                for &lane in blocked_lanes {
                    let mut frozen = false;
                    for v in road.vehicles.iter_mut() {
                        if v.lane == lane && v.s >= event_s[i] - 8.0 && v.s <= event_s[i] + 10.0 && v.fixed_by.is_none() {
                            v.fixed_by = Some(i);
                            v.v = 0.0;
                            frozen = true;
                        }
                    }
                    if !frozen {
                        let id = next_id;
                        next_id += 1;
                        road.spawn(&mut rng, p, id, lane, event_s[i], Some(0.0), t);
                        road.vehicles.last_mut().expect("just spawned").fixed_by = Some(i);
                    }
                }
            } else if !active && incident_on[i] {
                incident_on[i] = false;
                let road = &mut roads[0];
                let mut k = 0;
                while k < road.vehicles.len() {
                    if road.vehicles[k].fixed_by == Some(i) {
                        let v = road.vehicles.swap_remove(k);
                        road.retire(v, true);
                        road.exited += 1;
                    } else {
                        k += 1;
                    }
                }
            }
        }

        let stops: Vec<StopLine> = spec
            .events
            .iter()
            .enumerate()
            .filter_map(|(i, ev)| match ev {
                TrafficEvent::Recurrent { green_s, red_s, lanes, start_s, .. } if ev.is_active(t) => {
                    let phase = (t - start_s) % (green_s + red_s);
                    (phase >= *green_s).then(|| {
                        let mut mask = vec![lanes.is_none(); spec.lane_count];
                        for &l in lanes.iter().flatten() {
                            mask[l] = true;
                        }
                        StopLine { s: event_s[i], lanes: mask }
                    })
                }
                _ => None,
            })
            .collect();

        for (r, road) in roads.iter_mut().enumerate() {
            let no_stops: &[StopLine] = &[];
            let stops = if r == 0 { &stops[..] } else { no_stops };
            road.rebuild_lanes();
            road.lane_changes(p, t, step, stops);
            if step % record_every == 0 {
                road.record(t, p);
            }
            let before: Vec<f64> = if r == 0 { road.vehicles.iter().map(|v| v.s).collect() } else { Vec::new() };
            road.advance(p, dt, stops);
            if r == 0 {
                for (v, s_old) in road.vehicles.iter().zip(&before) {
                    for i in 0..event_s.len() {
                        if *s_old < event_s[i] && v.s >= event_s[i] {
                            passed_event[i] += 1;
                        }
                        if *s_old < station_s[i] && v.s >= station_s[i] {
                            passed_station[i] += 1;
                        }
                    }
                }
            }
            road.exits();
            road.entries(&mut rng, p, t + dt, &mut next_id);
            debug_assert_eq!(road.vehicles.len() as u64, road.entered - road.exited);
        }

        if step % per_second == 0 && step < steps {
            let mut label = Condition::Normal;
            for (i, ev) in spec.events.iter().enumerate() {
                let tail = roads[0].queue_tail(event_s[i]);
                let sample = TailSample {
                    t,
                    tail_milepost: tail.map(|(s, _)| roads[0].milepost(s)),
                    queue_length_mi: tail.map(|(s, _)| m_to_miles(event_s[i] - s)).unwrap_or(0.0),
                    queued_vehicles: tail.map(|(_, n)| n).unwrap_or(0),
                };
                traces[i].samples.push(sample);
                let (start, end) = ev.active_span();
                let here = match ev {
                    TrafficEvent::Incident { .. } => ev.is_active(t) || (t >= end && tail.is_some()),
                    TrafficEvent::Recurrent { .. } => t >= start && tail.is_some(),
                };
                if here {
                    label = label.max(ev.condition());
                }
            }
            labels.push(label);
            for (r, road) in roads.iter().enumerate() {
                let sample = CountSample {
                    t,
                    entered: road.entered,
                    exited: road.exited,
                    present: road.vehicles.len() as u64,
                    passed_event: if r == 0 { passed_event.clone() } else { Vec::new() },
                    passed_station: if r == 0 { passed_station.clone() } else { Vec::new() },
                };
                if r == 0 {
                    patrol_counts.push(sample);
                } else {
                    opposing_counts.push(sample);
                }
            }
        }
    }

    let mut vehicles = Vec::new();
    for mut road in roads {
        for v in std::mem::take(&mut road.vehicles) {
            let obstacle = v.fixed_by.is_some();
            road.retire(v, obstacle);
        }
        vehicles.append(&mut road.finished);
    }
    vehicles.sort_by_key(|v| v.id);

    GroundTruthLog {
        spec: spec.clone(),
        vehicles,
        conditions: merge_labels(&labels, spec.duration_s),
        events: traces,
        patrol_counts,
        opposing_counts,
    }
}

/// Collapse per-second labels into half-open intervals covering [0, duration).
fn merge_labels(labels: &[Condition], duration: f64) -> Vec<ConditionInterval> {
    let mut out: Vec<ConditionInterval> = Vec::new();
    for (k, &c) in labels.iter().enumerate() {
        let start = k as f64;
        let end = ((k + 1) as f64).min(duration);
        match out.last_mut() {
            Some(last) if last.condition == c => last.end = end,
            _ => out.push(ConditionInterval { start, end, condition: c }),
        }
    }
    out
}
