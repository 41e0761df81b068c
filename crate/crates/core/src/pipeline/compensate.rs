//! Drone-motion compensation and opposing-lane exclusion.

use super::{PipelineError, PixelTrack, RoadSample, Trajectory};
use crate::feed::GpsFix;
use crate::sim::AxisDirection;
use crate::units::FT_PER_MILE;

/// Drone milepost at `t`, linear between fixes. Up to one second of
/// extrapolation past either end of the track is allowed.
pub fn drone_milepost_at(gps: &[GpsFix], t: f64) -> Option<f64> {
    let first = gps.first()?;
    let last = gps.last()?;
    if t < first.timestamp - 1.0 - 1e-9 || t > last.timestamp + 1.0 + 1e-9 {
        return None;
    }
    if gps.len() == 1 {
        return Some(first.milepost);
    }
    let idx = gps.partition_point(|g| g.timestamp <= t).clamp(1, gps.len() - 1);
    let (a, b) = (&gps[idx - 1], &gps[idx]);
    let span = b.timestamp - a.timestamp;
    if span <= 0.0 {
        return Some(a.milepost);
    }
    Some(a.milepost + (t - a.timestamp) / span * (b.milepost - a.milepost))
}

pub fn compensate_track(track: &PixelTrack, gps: &[GpsFix], gsd_ft: f64) -> Result<Trajectory, PipelineError> {
    let (Some(first), Some(last)) = (gps.first(), gps.last()) else {
        return Err(PipelineError::NoGps);
    };
    let samples = track
        .points
        .iter()
        .map(|p| {
            let mp = drone_milepost_at(gps, p.t).ok_or(PipelineError::OutsideGps {
                track: track.id,
                t: p.t,
                from: first.timestamp,
                to: last.timestamp,
            })?;
            Ok(RoadSample { t: p.t, road_x: p.x * gsd_ft + mp * FT_PER_MILE, road_y: p.y * gsd_ft })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(Trajectory { vehicle_id: track.id, samples })
}

/// Road-frame trajectories for every track the GPS covers, and the
/// diagnostics for those it does not.
pub fn compensate(tracks: &[PixelTrack], gps: &[GpsFix], gsd_ft: f64) -> (Vec<Trajectory>, Vec<PipelineError>) {
    let mut ok = Vec::with_capacity(tracks.len());
    let mut rejected = Vec::new();
    for t in tracks {
        match compensate_track(t, gps, gsd_ft) {
            Ok(tr) => ok.push(tr),
            Err(e) => rejected.push(e),
        }
    }
    (ok, rejected)
}

/// Net displacement along the patrol direction, ft.
pub fn net_displacement(traj: &Trajectory, direction: AxisDirection) -> f64 {
    match (traj.samples.first(), traj.samples.last()) {
        (Some(a), Some(b)) => (b.road_x - a.road_x) * direction.sign(),
        _ => 0.0,
    }
}

/// Drop trajectories moving against the patrol direction by more than
/// `epsilon_ft`. Stationary ones stay.
pub fn filter_direction(trajs: Vec<Trajectory>, direction: AxisDirection, epsilon_ft: f64) -> Vec<Trajectory> {
    trajs.into_iter().filter(|t| net_displacement(t, direction) >= -epsilon_ft).collect()
}
