//! Frame-to-frame association of detections into pixel-space tracks.

use std::collections::BTreeMap;

use pathfinding::prelude::{kuhn_munkres_min, Matrix};
use serde::{Deserialize, Serialize};

use crate::feed::{FeedHeader, FrameDetections};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub frame_index: u64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    /// Filled in across a missed detection.
    pub interpolated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelTrack {
    pub id: u64,
    pub points: Vec<PixelPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationConfig {
    /// Largest plausible along-road displacement per frame, px. Gates the
    /// first match of a track whose velocity is still unknown.
    pub max_step_px: f64,
    /// Lateral gate for a track without a velocity estimate, px.
    pub lateral_gate_px: f64,
    /// Gate around the constant-velocity prediction, px.
    pub predicted_gate_px: f64,
    /// A track ends after this many consecutive misses.
    pub max_misses: u64,
    /// Tracks with fewer observed frames are dropped.
    pub min_frames: usize,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self::for_header(&FeedHeader::default())
    }
}

impl AssociationConfig {
    /// Gates for a camera: 130 ft/s relative speed bounds the per-frame step.
    pub fn for_header(header: &FeedHeader) -> Self {
        let step = 130.0 / header.fps / header.gsd_ft;
        Self {
            max_step_px: step.max(2.0),
            lateral_gate_px: (4.0 * 0.6 / header.gsd_ft).max(3.0),
            predicted_gate_px: (5.0 * 0.6 / header.gsd_ft).max(4.0),
            max_misses: 3,
            min_frames: 3,
        }
    }
}

/// Build tracks from time-ordered frames. When every detection carries a
/// vehicle id the tracks are the per-id groups; otherwise detections are
/// matched frame to frame by minimum total displacement within gates.
/// Either way, gaps shorter than `max_misses` frames are interpolated, longer
/// ones split the track, and short tracks are dropped.
pub fn associate(frames: &[FrameDetections], config: &AssociationConfig) -> Vec<PixelTrack> {
    let with_ids = frames.iter().flat_map(|f| &f.detections).all(|d| d.vehicle_id.is_some());
    let raw = if with_ids { group_by_id(frames) } else { match_frames(frames, config) };
    let mut out = Vec::new();
    for track in raw {
        for piece in split_gaps(track, config.max_misses) {
            if piece.points.len() >= config.min_frames {
                out.push(interpolate(piece));
            }
        }
    }
    out.sort_by_key(|t| (t.points[0].frame_index, t.id));
    out
}

fn group_by_id(frames: &[FrameDetections]) -> Vec<PixelTrack> {
    let mut groups: BTreeMap<u64, Vec<PixelPoint>> = BTreeMap::new();
    for f in frames {
        for d in &f.detections {
            let id = d.vehicle_id.expect("checked by caller");
            groups.entry(id).or_default().push(PixelPoint {
                frame_index: f.frame_index,
                t: f.timestamp,
                x: d.x_px,
                y: d.y_px,
                interpolated: false,
            });
        }
    }
    groups.into_iter().map(|(id, points)| PixelTrack { id, points }).collect()
}

fn split_gaps(track: PixelTrack, max_misses: u64) -> Vec<PixelTrack> {
    let mut pieces = vec![];
    let mut current: Vec<PixelPoint> = vec![];
    for p in track.points {
        if let Some(last) = current.last() {
            if p.frame_index <= last.frame_index {
                continue;
            }
            if p.frame_index - last.frame_index > max_misses {
                pieces.push(PixelTrack { id: track.id, points: std::mem::take(&mut current) });
            }
        }
        current.push(p);
    }
    if !current.is_empty() {
        pieces.push(PixelTrack { id: track.id, points: current });
    }
    pieces
}

fn interpolate(track: PixelTrack) -> PixelTrack {
    let mut points = Vec::with_capacity(track.points.len());
    for w in track.points.windows(2) {
        let (a, b) = (w[0], w[1]);
        points.push(a);
        let gap = b.frame_index - a.frame_index;
        for k in 1..gap {
            let f = k as f64 / gap as f64;
            points.push(PixelPoint {
                frame_index: a.frame_index + k,
                t: a.t + f * (b.t - a.t),
                x: a.x + f * (b.x - a.x),
                y: a.y + f * (b.y - a.y),
                interpolated: true,
            });
        }
    }
    points.extend(track.points.last());
    PixelTrack { id: track.id, points }
}

struct Live {
    id: u64,
    points: Vec<PixelPoint>,
    velocity: Option<(f64, f64)>,
    prior: Option<(f64, f64)>,
}

impl Live {
    fn last(&self) -> &PixelPoint {
        self.points.last().expect("live tracks are never empty")
    }

    fn predict(&self, frame: u64) -> (f64, f64) {
        let last = self.last();
        let n = (frame - last.frame_index) as f64;
        let (vx, vy) = self.velocity.or(self.prior).unwrap_or((0.0, 0.0));
        (last.x + vx * n, last.y + vy * n)
    }

    /// Displacement cost of matching a detection at `(x, y)`, if gated in.
    fn cost(&self, frame: u64, x: f64, y: f64, cfg: &AssociationConfig) -> Option<f64> {
        let (px, py) = self.predict(frame);
        let (dx, dy) = (x - px, y - py);
        let dist = dx.hypot(dy);
        let n = (frame - self.last().frame_index) as f64;
        let ok = match (self.velocity, self.prior) {
            (Some(_), _) => dist <= cfg.predicted_gate_px * n.sqrt(),
            (None, Some(_)) => dist <= 2.0 * cfg.predicted_gate_px * n.sqrt(),
            (None, None) => dx.abs() <= cfg.max_step_px * n && dy.abs() <= cfg.lateral_gate_px,
        };
        ok.then_some(dist)
    }
}

fn match_frames(frames: &[FrameDetections], cfg: &AssociationConfig) -> Vec<PixelTrack> {
    let mut live: Vec<Live> = Vec::new();
    let mut done: Vec<PixelTrack> = Vec::new();
    let mut next_id = 0u64;
    for frame in frames {
        let f = frame.frame_index;
        let (ended, kept): (Vec<Live>, Vec<Live>) =
            live.into_iter().partition(|t| f.saturating_sub(t.last().frame_index) > cfg.max_misses);
        done.extend(ended.into_iter().map(|t| PixelTrack { id: t.id, points: t.points }));
        live = kept;

        let dets = &frame.detections;
        let mut edges = Vec::new();
        for (i, t) in live.iter().enumerate() {
            for (j, d) in dets.iter().enumerate() {
                if let Some(c) = t.cost(f, d.x_px, d.y_px, cfg) {
                    edges.push((i, j, c));
                }
            }
        }
        let assignment = assign(live.len(), dets.len(), &edges);

        let mut used = vec![false; dets.len()];
        for (i, j) in assignment {
            used[j] = true;
            let d = &dets[j];
            let t = &mut live[i];
            let last = *t.last();
            let n = (f - last.frame_index) as f64;
            let v = ((d.x_px - last.x) / n, (d.y_px - last.y) / n);
            t.velocity = Some(match t.velocity {
                Some((vx, vy)) => (0.5 * (vx + v.0), 0.5 * (vy + v.1)),
                None => v,
            });
            t.points.push(PixelPoint { frame_index: f, t: frame.timestamp, x: d.x_px, y: d.y_px, interpolated: false });
        }
        for (j, d) in dets.iter().enumerate() {
            if used[j] {
                continue;
            }
            let prior = band_velocity(&live, d.y_px, cfg.lateral_gate_px * 2.0);
            live.push(Live {
                id: next_id,
                points: vec![PixelPoint { frame_index: f, t: frame.timestamp, x: d.x_px, y: d.y_px, interpolated: false }],
                velocity: None,
                prior,
            });
            next_id += 1;
        }
    }
    done.extend(live.into_iter().map(|t| PixelTrack { id: t.id, points: t.points }));
    done
}

/// Median velocity of established tracks within `band` px laterally.
fn band_velocity(live: &[Live], y: f64, band: f64) -> Option<(f64, f64)> {
    let mut vs: Vec<(f64, f64)> = live
        .iter()
        .filter(|t| (t.last().y - y).abs() <= band)
        .filter_map(|t| t.velocity)
        .collect();
    if vs.is_empty() {
        return None;
    }
    vs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Some(vs[vs.len() / 2])
}

/// Minimum-total-displacement matching over gated edges, solved per
/// connected component. Unmatched rows and columns are allowed.
fn assign(rows: usize, cols: usize, edges: &[(usize, usize, f64)]) -> Vec<(usize, usize)> {
    if edges.is_empty() {
        return vec![];
    }
    // union-find over rows 0..rows and columns rows..rows+cols
    let mut parent: Vec<usize> = (0..rows + cols).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &(i, j, _) in edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, rows + j));
        parent[a] = b;
    }
    let mut comps: BTreeMap<usize, Vec<(usize, usize, f64)>> = BTreeMap::new();
    for &e in edges {
        let root = find(&mut parent, e.0);
        comps.entry(root).or_default().push(e);
    }

    let mut out = Vec::new();
    for comp in comps.values() {
        if comp.len() == 1 {
            out.push((comp[0].0, comp[0].1));
            continue;
        }
        let mut rs: Vec<usize> = comp.iter().map(|e| e.0).collect();
        let mut cs: Vec<usize> = comp.iter().map(|e| e.1).collect();
        rs.sort_unstable();
        rs.dedup();
        cs.sort_unstable();
        cs.dedup();
        let (r, c) = (rs.len(), cs.len());
        let n = r + c;
        // Leaving a row or column unmatched costs more than any gated match,
        // and ungated pairs are prohibitively expensive.
        let scale = 1000.0;
        let max_cost = comp.iter().map(|e| e.2).fold(0.0, f64::max);
        let miss = ((max_cost + 1.0) * scale) as i64;
        let forbidden = miss * 4 * n as i64;
        let mut m = Matrix::new(n, n, 0i64);
        for a in 0..r {
            for b in 0..c {
                m[(a, b)] = forbidden;
            }
            for b in c..n {
                m[(a, b)] = if b - c == a { miss } else { forbidden };
            }
        }
        for a in r..n {
            for b in 0..c {
                m[(a, b)] = if a - r == b { miss } else { forbidden };
            }
        }
        for &(i, j, cost) in comp {
            let a = rs.binary_search(&i).expect("row in component");
            let b = cs.binary_search(&j).expect("column in component");
            m[(a, b)] = (cost * scale).round() as i64;
        }
        let (_, assignment) = kuhn_munkres_min(&m);
        for (a, &b) in assignment.iter().enumerate().take(r) {
            if b < c && m[(a, b)] < miss {
                out.push((rs[a], cs[b]));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feed::Detection;

    fn frame(k: u64, dets: Vec<(Option<u64>, f64, f64)>) -> FrameDetections {
        FrameDetections {
            frame_index: k,
            timestamp: k as f64 * 0.1,
            detections: dets.into_iter().map(|(id, x, y)| Detection { vehicle_id: id, x_px: x, y_px: y }).collect(),
        }
    }

    #[test]
    fn empty_stream_gives_no_tracks() {
        assert!(associate(&[], &AssociationConfig::default()).is_empty());
    }

    #[test]
    fn ids_group_exactly() {
        let frames: Vec<_> =
            (0..10).map(|k| frame(k, vec![(Some(7), k as f64, 300.0), (Some(9), 600.0 - k as f64, 100.0)])).collect();
        let tracks = associate(&frames, &AssociationConfig::default());
        assert_eq!(tracks.len(), 2);
        let seven = tracks.iter().find(|t| t.id == 7).unwrap();
        assert_eq!(seven.points.len(), 10);
        assert!(seven.points.iter().all(|p| p.y == 300.0));
    }

    #[test]
    fn single_miss_is_interpolated_and_long_gap_splits() {
        let mut frames: Vec<_> = (0..20).map(|k| frame(k, vec![(Some(1), 10.0 * k as f64, 300.0)])).collect();
        frames[5].detections.clear();
        for f in frames.iter_mut().skip(10).take(3) {
            f.detections.clear();
        }
        let tracks = associate(&frames, &AssociationConfig::default());
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].points.len(), 10);
        let filled = tracks[0].points[5];
        assert!(filled.interpolated);
        assert!((filled.x - 50.0).abs() < 1e-9);
        assert_eq!(tracks[1].points[0].frame_index, 13);
    }

    #[test]
    fn short_tracks_are_dropped() {
        let frames: Vec<_> = (0..2).map(|k| frame(k, vec![(Some(1), 0.0, 0.0)])).collect();
        assert!(associate(&frames, &AssociationConfig::default()).is_empty());
    }

    #[test]
    fn anonymous_parallel_lanes_stay_separate() {
        // two vehicles in adjacent lanes (20 px apart) at different speeds
        let frames: Vec<_> = (0..40)
            .map(|k| {
                let k = k as u64;
                frame(k, vec![(None, 5.0 + 12.0 * k as f64, 300.0), (None, 40.0 + 8.0 * k as f64, 320.0)])
            })
            .collect();
        let tracks = associate(&frames, &AssociationConfig::default());
        assert_eq!(tracks.len(), 2);
        for t in &tracks {
            assert_eq!(t.points.len(), 40);
            assert!(t.points.iter().all(|p| p.y == t.points[0].y));
        }
    }

    #[test]
    fn queued_followers_in_one_lane_do_not_merge() {
        // platoon 38 px apart moving 16 px per frame
        let frames: Vec<_> = (0..30)
            .map(|k| frame(k, (0..4).map(|i| (None, 16.0 * k as f64 - 38.0 * i as f64 + 200.0, 330.0)).collect()))
            .collect();
        let tracks = associate(&frames, &AssociationConfig::default());
        assert_eq!(tracks.len(), 4);
        for t in &tracks {
            let steps: Vec<f64> = t.points.windows(2).map(|w| w[1].x - w[0].x).collect();
            assert!(steps.iter().all(|s| (s - 16.0).abs() < 1e-9), "{steps:?}");
        }
    }
}
