//! Sliding-window rasterization of road-frame trajectories.

use super::compensate::drone_milepost_at;
use super::{ImageMode, PipelineConfig, PipelineError, Trajectory, TrajectoryImage};
use crate::feed::{FeedHeader, GpsFix};
use crate::units::FT_PER_MILE;

/// Window starts `t_start, t_start + 1, ...` whose windows end by `t_end`.
pub fn window_starts(t_start: f64, t_end: f64, period: f64) -> Vec<f64> {
    let span = t_end - t_start - period;
    if span < -1e-9 {
        return Vec::new();
    }
    let n = (span + 1e-9).floor() as usize + 1;
    (0..n).map(|k| t_start + k as f64).collect()
}

/// Max-blended raster with planar channels.
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
}

impl Canvas {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, pixels: vec![0.0; width * height * channels] }
    }

    pub fn plot(&mut self, x: i64, y: i64, intensity: f64, rgb: [f64; 3]) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height || intensity <= 0.0 {
            return;
        }
        let (x, y) = (x as usize, y as usize);
        for c in 0..self.channels {
            let v = if self.channels == 1 { intensity } else { intensity * rgb[c] };
            let p = &mut self.pixels[(c * self.height + y) * self.width + x];
            *p = p.max(v.clamp(0.0, 1.0) as f32);
        }
    }
}

/// Hue ramp from blue (`u = 0`) to red (`u = 1`) at full saturation.
pub fn time_color(u: f64) -> [f64; 3] {
    let h = 240.0 * (1.0 - u.clamp(0.0, 1.0)) / 60.0;
    let x = 1.0 - ((h % 2.0) - 1.0).abs();
    match h as u32 {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        _ => [0.0, x, 1.0],
    }
}

/// Antialiased line from `(x0, y0)` to `(x1, y1)` in canvas pixels. `color`
/// maps the position along the line (0 at the first endpoint, 1 at the
/// second) to an RGB triple.
pub fn draw_line(canvas: &mut Canvas, x0: f64, y0: f64, x1: f64, y1: f64, color: &dyn Fn(f64) -> [f64; 3]) {
    let fpart = |v: f64| v - v.floor();
    let rfpart = |v: f64| 1.0 - fpart(v);
    let steep = (y1 - y0).abs() > (x1 - x0).abs();
    let (mut ax, mut ay, mut bx, mut by) = if steep { (y0, x0, y1, x1) } else { (x0, y0, x1, y1) };
    let mut reversed = false;
    if ax > bx {
        std::mem::swap(&mut ax, &mut bx);
        std::mem::swap(&mut ay, &mut by);
        reversed = true;
    }
    let dx = bx - ax;
    let gradient = if dx == 0.0 { 1.0 } else { (by - ay) / dx };
    let param = |x: f64| {
        let s = if dx == 0.0 { 0.0 } else { ((x - ax) / dx).clamp(0.0, 1.0) };
        if reversed { 1.0 - s } else { s }
    };
    let mut plot = |x: f64, y: f64, c: f64, s: f64| {
        let rgb = color(s);
        if steep {
            canvas.plot(y as i64, x as i64, c, rgb);
        } else {
            canvas.plot(x as i64, y as i64, c, rgb);
        }
    };

    let xend = ax.round();
    let yend = ay + gradient * (xend - ax);
    let xgap = rfpart(ax + 0.5);
    let xpxl1 = xend;
    let ypxl1 = yend.floor();
    plot(xpxl1, ypxl1, rfpart(yend) * xgap, param(xend));
    plot(xpxl1, ypxl1 + 1.0, fpart(yend) * xgap, param(xend));
    let mut intery = yend + gradient;

    let xend = bx.round();
    let yend = by + gradient * (xend - bx);
    let xgap = fpart(bx + 0.5);
    let xpxl2 = xend;
    let ypxl2 = yend.floor();
    plot(xpxl2, ypxl2, rfpart(yend) * xgap, param(xend));
    plot(xpxl2, ypxl2 + 1.0, fpart(yend) * xgap, param(xend));

    let mut x = xpxl1 + 1.0;
    while x < xpxl2 {
        let s = param(x);
        plot(x, intery.floor(), rfpart(intery), s);
        plot(x, intery.floor() + 1.0, fpart(intery), s);
        intery += gradient;
        x += 1.0;
    }
}

/// Road-frame rectangle seen by the camera during `[t0, t1]`.
fn footprint(gps: &[GpsFix], header: &FeedHeader, config: &PipelineConfig, t0: f64, t1: f64) -> Result<[f64; 4], PipelineError> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let inside = gps.iter().filter(|g| g.timestamp > t0 && g.timestamp < t1).map(|g| Some(g.milepost));
    for mp in [drone_milepost_at(gps, t0), drone_milepost_at(gps, t1)].into_iter().chain(inside) {
        let mp = mp.ok_or(PipelineError::OutsideGps {
            track: u64::MAX,
            t: t0,
            from: gps.first().map_or(f64::NAN, |g| g.timestamp),
            to: gps.last().map_or(f64::NAN, |g| g.timestamp),
        })?;
        lo = lo.min(mp);
        hi = hi.max(mp);
    }
    let x0 = lo * FT_PER_MILE;
    let x1 = hi * FT_PER_MILE + header.frame_width as f64 * header.gsd_ft;
    let [y0, y1] = config.lateral_band_ft.unwrap_or([0.0, header.frame_height as f64 * header.gsd_ft]);
    Ok([x0, x1, y0, y1])
}

/// Rasterize the window `[t0, t0 + P]`.
pub fn render_window(
    trajs: &[Trajectory],
    gps: &[GpsFix],
    header: &FeedHeader,
    config: &PipelineConfig,
    t0: f64,
) -> Result<TrajectoryImage, PipelineError> {
    let p = config.period();
    let t1 = t0 + p;
    let [x0, x1, y0, y1] = footprint(gps, header, config, t0, t1)?;
    let (w, h) = (config.canvas_width as usize, config.canvas_height as usize);
    let sx = (w - 1) as f64 / (x1 - x0);
    let sy = (h - 1) as f64 / (y1 - y0);
    let color = config.image_mode == ImageMode::Color;
    let mut canvas = Canvas::new(w, h, config.image_mode.channels());

    for traj in trajs {
        let pts: Vec<(f64, f64, f64)> = traj
            .samples
            .iter()
            .filter(|s| s.t >= t0 - 1e-9 && s.t <= t1 + 1e-9)
            .map(|s| ((s.road_x - x0) * sx, (s.road_y - y0) * sy, (s.t - t0) / p))
            .collect();
        let Some(&(fx, fy, fu)) = pts.first() else { continue };
        let (mut minx, mut maxx, mut miny, mut maxy) = (fx, fx, fy, fy);
        for &(x, y, _) in &pts {
            minx = minx.min(x);
            maxx = maxx.max(x);
            miny = miny.min(y);
            maxy = maxy.max(y);
        }
        if maxx - minx < 1.0 && maxy - miny < 1.0 {
            // stopped vehicle: a single full-intensity dot
            let rgb = if color { time_color(fu) } else { [1.0; 3] };
            canvas.plot(((minx + maxx) / 2.0).round() as i64, ((miny + maxy) / 2.0).round() as i64, 1.0, rgb);
            continue;
        }
        for seg in pts.windows(2) {
            let ((ax, ay, au), (bx, by, bu)) = (seg[0], seg[1]);
            let col = move |s: f64| if color { time_color(au + s * (bu - au)) } else { [1.0; 3] };
            draw_line(&mut canvas, ax, ay, bx, by, &col);
        }
    }

    Ok(TrajectoryImage {
        window_start: t0,
        window_end: t1,
        width: w,
        height: h,
        channels: canvas.channels,
        pixels: canvas.pixels,
        label: None,
        source_segment_id: None,
    })
}

/// One image per 1 s window start in `[t_start, t_end]`.
pub fn render_windows(
    trajs: &[Trajectory],
    gps: &[GpsFix],
    header: &FeedHeader,
    config: &PipelineConfig,
    t_start: f64,
    t_end: f64,
) -> Result<Vec<TrajectoryImage>, PipelineError> {
    config.validate()?;
    window_starts(t_start, t_end, config.period())
        .into_iter()
        .map(|t0| render_window(trajs, gps, header, config, t0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::RoadSample;

    fn parked_gps(n: usize) -> Vec<GpsFix> {
        (0..=n)
            .map(|s| GpsFix { timestamp: s as f64, latitude: 0.0, longitude: 0.0, milepost: 0.0, altitude_ft: 200.0 })
            .collect()
    }

    #[test]
    fn sixty_seconds_at_p20_gives_41_windows() {
        let starts = window_starts(0.0, 60.0, 20.0);
        assert_eq!(starts.len(), 41);
        assert_eq!(starts[40], 40.0);
        assert!(window_starts(0.0, 19.0, 20.0).is_empty());
        assert_eq!(window_starts(0.0, 120.0, 20.0).len(), 101);
    }

    #[test]
    fn horizontal_line_mass_is_its_length() {
        let mut c = Canvas::new(160, 128, 1);
        draw_line(&mut c, 10.0, 20.0, 110.0, 20.0, &|_| [1.0; 3]);
        let mass: f64 = c.pixels.iter().map(|&p| p as f64).sum();
        assert!((mass - 100.0).abs() <= 1.0, "{mass}");
    }

    #[test]
    fn diagonal_line_mass_follows_major_axis() {
        let mut c = Canvas::new(160, 128, 1);
        draw_line(&mut c, 10.3, 10.7, 70.3, 40.7, &|_| [1.0; 3]);
        let mass: f64 = c.pixels.iter().map(|&p| p as f64).sum();
        assert!((mass - 60.0).abs() <= 1.5, "{mass}");
    }

    #[test]
    fn empty_window_is_blank() {
        let img = render_window(&[], &parked_gps(30), &FeedHeader::default(), &PipelineConfig::default(), 0.0).unwrap();
        assert_eq!(img.mass(), 0.0);
        assert_eq!((img.width, img.height, img.channels), (160, 128, 1));
    }

    #[test]
    fn pixels_stay_in_unit_range_and_color_has_three_channels() {
        let traj = Trajectory {
            vehicle_id: 0,
            samples: (0..200)
                .map(|k| RoadSample { t: k as f64 * 0.1, road_x: k as f64 * 8.8, road_y: 170.0 })
                .collect(),
        };
        let config = PipelineConfig { image_mode: ImageMode::Color, ..Default::default() };
        let img = render_window(&[traj], &parked_gps(30), &FeedHeader::default(), &config, 0.0).unwrap();
        assert_eq!(img.channels, 3);
        assert!(img.pixels.iter().all(|&p| (0.0..=1.0).contains(&p)));
        // early strokes blue, late strokes red
        let row = (170.0 / 307.2 * 127.0f64).round() as usize;
        let first = (0..img.width).find(|&x| img.get(2, row, x) > 0.5).unwrap();
        assert!(img.get(2, row, first) > img.get(0, row, first));
    }

    #[test]
    fn samples_outside_window_are_not_drawn() {
        let traj = Trajectory {
            vehicle_id: 0,
            samples: vec![
                RoadSample { t: 25.0, road_x: 10.0, road_y: 100.0 },
                RoadSample { t: 26.0, road_x: 200.0, road_y: 100.0 },
            ],
        };
        let img = render_window(&[traj], &parked_gps(30), &FeedHeader::default(), &PipelineConfig::default(), 0.0).unwrap();
        assert_eq!(img.mass(), 0.0);
    }

    #[test]
    fn hue_endpoints() {
        assert_eq!(time_color(0.0), [0.0, 0.0, 1.0]);
        assert_eq!(time_color(1.0), [1.0, 0.0, 0.0]);
    }
}
