//! Calibration-wand detection and sensor registration.
//!
//! A client finds the spherical wand in its depth image by iterated
//! thresholding, back-projects it to a 3D center, and the server turns two
//! wand placements into the sensor's yaw and origin offset. The first
//! placement becomes the server origin and the trajectory to the second
//! becomes the server y axis.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::geometry::{
    pixel_ray, pixel_to_camera, DepthFrame, GeometryError, Pixel, Point3, SensorPose, DEPTH_MAX_CM,
    DEPTH_MIN_CM, FOV_H_DEG, FRAME_HEIGHT, FRAME_WIDTH,
};
use crate::skeleton::SensorId;

/// Threshold scale applied to the mean labeled depth each iteration.
pub const DEFAULT_C_OFFSET: f64 = 0.5025;
/// Hard cap on binarization rounds.
pub const MAX_SEGMENT_ITERATIONS: usize = 50;
/// Default maximum center deviation between samples of one placement, cm.
pub const DEFAULT_MAX_DEV_CM: f64 = 5.0;
/// Default number of samples per placement.
pub const DEFAULT_SAMPLES_PER_PLACEMENT: usize = 5;
/// Minimum planar wand travel between the two placements, cm.
pub const MIN_TRAJECTORY_CM: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("wand not found")]
    WandNotFound,
    #[error("wand too small ({width}x{height} px)")]
    WandTooSmall { width: usize, height: usize },
    #[error("wand touches the frame border")]
    WandTruncated,
    #[error("calibration frame rejected: {survivors} of {total} samples within tolerance")]
    FrameRejected { survivors: usize, total: usize },
    #[error("need at least 3 samples per placement, got {0}")]
    TooFewSamples(usize),
    #[error("trajectory too short ({0:.2} cm in the image plane)")]
    TrajectoryTooShort(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("calibration file line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WandConfig {
    pub c_offset: f64,
    /// Nominal wand radius; bounds the depth spread of a converged label set.
    pub nominal_radius_cm: f64,
    /// Polish the center with a sphere fit over the labeled surface.
    pub refine: bool,
}

impl Default for WandConfig {
    fn default() -> Self {
        Self { c_offset: DEFAULT_C_OFFSET, nominal_radius_cm: 5.0, refine: true }
    }
}

/// Binary wand mask over a depth frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    labels: Vec<bool>,
}

impl LabelMap {
    fn all() -> Self {
        Self { labels: vec![true; DepthFrame::LEN] }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.labels[v * FRAME_WIDTH + u]
    }

    pub fn count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn is_subset_of(&self, other: &LabelMap) -> bool {
        self.labels.iter().zip(&other.labels).all(|(&a, &b)| !a || b)
    }

    pub fn iter_labeled(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l)
            .map(|(i, _)| (i % FRAME_WIDTH, i / FRAME_WIDTH))
    }

    /// Tight bounding box `(upper_left, bottom_right)` of labeled pixels.
    pub fn bbox(&self) -> Option<(Pixel, Pixel)> {
        let mut it = self.iter_labeled();
        let (u0, v0) = it.next()?;
        let (mut umin, mut umax, mut vmin, mut vmax) = (u0, u0, v0, v0);
        for (u, v) in it {
            umin = umin.min(u);
            umax = umax.max(u);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
        Some((Pixel { u: umin, v: vmin }, Pixel { u: umax, v: vmax }))
    }
}

/// Clamps every sample into the usable depth range. Zero samples (sensor
/// noise and shadow) become background.
pub fn standardize_depth(frame: &DepthFrame) -> DepthFrame {
    let mut out = frame.clone();
    for d in out.samples_mut() {
        *d = if *d <= 0.0 || d.is_nan() {
            DEPTH_MAX_CM
        } else {
            d.clamp(DEPTH_MIN_CM, DEPTH_MAX_CM)
        };
    }
    out
}

/// Every label set produced by the iterated binarization, first to last.
///
/// Round `k` labels the pixels no deeper than `c_offset` times the mean depth
/// of round `k - 1`'s labels, starting from an all-ones map. Iteration stops
/// at a fixed point, once the labeled depth spread is within twice the wand
/// diameter, or after [`MAX_SEGMENT_ITERATIONS`] rounds.
pub fn segment_wand_steps(frame: &DepthFrame, cfg: &WandConfig) -> Result<Vec<LabelMap>, CalibrationError> {
    let depths = frame.samples();
    let spread_limit = 4.0 * cfg.nominal_radius_cm;
    let mut steps = vec![LabelMap::all()];

    for _ in 0..MAX_SEGMENT_ITERATIONS {
        let current = steps.last().expect("seeded");
        let (sum, n) = current
            .labels
            .iter()
            .zip(depths)
            .filter(|(&l, _)| l)
            .fold((0.0, 0usize), |(s, n), (_, &d)| (s + d, n + 1));
        let threshold = sum / n as f64 * cfg.c_offset;

        let next = LabelMap {
            labels: current.labels.iter().zip(depths).map(|(&l, &d)| l && d <= threshold).collect(),
        };
        if next.count() == 0 {
            return Err(CalibrationError::WandNotFound);
        }
        if next == *current {
            break;
        }
        let (lo, hi) = next
            .labels
            .iter()
            .zip(depths)
            .filter(|(&l, _)| l)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, &d)| (lo.min(d), hi.max(d)));
        steps.push(next);
        if hi - lo <= spread_limit {
            break;
        }
    }
    Ok(steps)
}

/// Final wand label set and its bounding box.
pub fn segment_wand(frame: &DepthFrame, cfg: &WandConfig) -> Result<(LabelMap, (Pixel, Pixel)), CalibrationError> {
    let labels = segment_wand_steps(frame, cfg)?.pop().expect("at least one step");
    let bbox = labels.bbox().ok_or(CalibrationError::WandNotFound)?;
    Ok((labels, bbox))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WandDetection {
    pub bbox_ul: Pixel,
    pub bbox_br: Pixel,
    pub center_pixel: Pixel,
    /// Wand center (not its surface) in the client frame.
    pub center_point: Point3,
    pub radius_cm: f64,
}

/// Locates the wand center in the client frame.
///
/// The bounding-box midpoint gives the center pixel; its depth gives the
/// nearest surface point, and the wand radius, read from the angular width of
/// the box, pushes that point back along the viewing ray to the center. With
/// `refine` set, a sphere fit over all labeled surface points replaces that
/// estimate.
pub fn localize_wand(frame: &DepthFrame, cfg: &WandConfig) -> Result<WandDetection, CalibrationError> {
    let frame = standardize_depth(frame);
    let (labels, (ul, br)) = segment_wand(&frame, cfg)?;

    let (width, height) = (br.u - ul.u, br.v - ul.v);
    if width < 2 || height < 2 {
        return Err(CalibrationError::WandTooSmall { width, height });
    }
    if ul.u == 0 || ul.v == 0 || br.u == FRAME_WIDTH - 1 || br.v == FRAME_HEIGHT - 1 {
        return Err(CalibrationError::WandTruncated);
    }

    let center_pixel = Pixel { u: (ul.u + br.u) / 2, v: (ul.v + br.v) / 2 };
    let surface_depth = frame.get(center_pixel.u, center_pixel.v);
    let surface = pixel_to_camera(center_pixel, surface_depth)?;

    // sin(half angle) = r / (|surface| + r)
    let half_angle = 0.5 * (width + 1) as f64 * FOV_H_DEG.to_radians() / FRAME_WIDTH as f64;
    let s = half_angle.sin();
    let radius = surface.norm() * s / (1.0 - s);
    let coarse = surface * (1.0 + radius / surface.norm());

    let (center_point, radius_cm) = if cfg.refine {
        let points: Vec<Point3> = labels
            .iter_labeled()
            .map(|(u, v)| pixel_ray(u as f64, v as f64) * frame.get(u, v))
            .collect();
        fit_sphere(&points, coarse, radius).unwrap_or((coarse, radius))
    } else {
        (coarse, radius)
    };

    Ok(WandDetection { bbox_ul: ul, bbox_br: br, center_pixel, center_point, radius_cm })
}

/// Solves a 4x4 system by Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let tail: f64 = ((row + 1)..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// Geometric least-squares sphere fit, Gauss-Newton from `(center, radius)`.
fn fit_sphere(points: &[Point3], center: Point3, radius: f64) -> Option<(Point3, f64)> {
    if points.len() < 4 {
        return None;
    }
    let (mut c, mut r) = (center, radius);
    for _ in 0..20 {
        let mut jtj = [[0.0; 4]; 4];
        let mut jtf = [0.0; 4];
        for &p in points {
            let d = p - c;
            let dist = d.norm();
            if dist == 0.0 {
                continue;
            }
            let f = dist - r;
            let j = [-d.x / dist, -d.y / dist, -d.z / dist, -1.0];
            for a in 0..4 {
                for b in 0..4 {
                    jtj[a][b] += j[a] * j[b];
                }
                jtf[a] += j[a] * f;
            }
        }
        let step = solve4(jtj, jtf)?;
        c = c - Point3::new(step[0], step[1], step[2]);
        r -= step[3];
        if step.iter().map(|s| s * s).sum::<f64>() < 1e-20 {
            break;
        }
    }
    (c.is_finite() && r.is_finite() && r > 0.0).then_some((c, r))
}

/// A placement's accepted detection together with its sample statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptedWand {
    pub detection: WandDetection,
    pub samples_used: usize,
    /// Largest distance of a surviving sample from the accepted center, cm.
    pub spread_cm: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Merges repeated detections of one placement.
///
/// If every pair of centers lies within `max_dev` the mean is accepted.
/// Otherwise samples farther than `max_dev` from the component-wise median
/// are dropped and the rest averaged; fewer than two survivors reject the
/// placement.
pub fn validate_samples(detections: &[WandDetection], max_dev: f64) -> Result<AcceptedWand, CalibrationError> {
    if detections.len() < 3 {
        return Err(CalibrationError::TooFewSamples(detections.len()));
    }
    let max_pairwise = detections
        .iter()
        .enumerate()
        .flat_map(|(i, a)| detections[i + 1..].iter().map(move |b| a.center_point.distance(b.center_point)))
        .fold(0.0, f64::max);

    let survivors: Vec<&WandDetection> = if max_pairwise <= max_dev {
        detections.iter().collect()
    } else {
        let med = Point3::new(
            median(detections.iter().map(|d| d.center_point.x).collect()),
            median(detections.iter().map(|d| d.center_point.y).collect()),
            median(detections.iter().map(|d| d.center_point.z).collect()),
        );
        detections.iter().filter(|d| d.center_point.distance(med) <= max_dev).collect()
    };
    if survivors.len() < 2 {
        return Err(CalibrationError::FrameRejected { survivors: survivors.len(), total: detections.len() });
    }

    let center = Point3::mean(survivors.iter().map(|d| d.center_point)).expect("non-empty");
    let radius = survivors.iter().map(|d| d.radius_cm).sum::<f64>() / survivors.len() as f64;
    let nearest = survivors
        .iter()
        .min_by(|a, b| a.center_point.distance(center).total_cmp(&b.center_point.distance(center)))
        .expect("non-empty");
    let spread_cm = survivors.iter().map(|d| d.center_point.distance(center)).fold(0.0, f64::max);
    Ok(AcceptedWand {
        detection: WandDetection { center_point: center, radius_cm: radius, ..**nearest },
        samples_used: survivors.len(),
        spread_cm,
    })
}

/// Sensor pose from two wand placements seen by that sensor.
///
/// The trajectory from `first` to `second` is the server y axis, so the yaw
/// is the signed angle `atan2(dx, dy)` of the client-plane displacement; its
/// magnitude equals `arccos(dy / |d_xy|)`.
pub fn register_pose(first: &WandDetection, second: &WandDetection) -> Result<SensorPose, CalibrationError> {
    let d = second.center_point - first.center_point;
    let planar = d.x.hypot(d.y);
    if planar < MIN_TRAJECTORY_CM {
        return Err(CalibrationError::TrajectoryTooShort(planar));
    }
    Ok(SensorPose::new(first.center_point, d.x.atan2(d.y)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationRecord {
    pub sensor_id: SensorId,
    pub pose: SensorPose,
    pub sample_count: usize,
    pub residual_spread: f64,
}

impl CalibrationRecord {
    /// `sensor_id theta_rad ox oy oz sample_count spread_cm`
    pub fn to_line(&self) -> String {
        let o = self.pose.origin_in_client;
        format!(
            "{} {} {} {} {} {} {}",
            self.sensor_id, self.pose.yaw_theta, o.x, o.y, o.z, self.sample_count, self.residual_spread
        )
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<Self, CalibrationError> {
        let err = |reason: String| CalibrationError::Parse { line: line_no, reason };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(err(format!("expected 7 fields, got {}", fields.len())));
        }
        fn num<T: FromStr>(s: &str, what: &str) -> Result<T, String> {
            s.parse().map_err(|_| format!("bad {what} `{s}`"))
        }
        let sensor_id = num(fields[0], "sensor id").map_err(err)?;
        let theta: f64 = num(fields[1], "theta").map_err(err)?;
        let o = Point3::new(
            num(fields[2], "ox").map_err(err)?,
            num(fields[3], "oy").map_err(err)?,
            num(fields[4], "oz").map_err(err)?,
        );
        let sample_count = num(fields[5], "sample count").map_err(err)?;
        let residual_spread: f64 = num(fields[6], "spread").map_err(err)?;
        if residual_spread < 0.0 {
            return Err(err("negative spread".into()));
        }
        Ok(Self { sensor_id, pose: SensorPose::new(o, theta), sample_count, residual_spread })
    }
}

pub fn write_calibration_file(records: &[CalibrationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{}", r.to_line());
    }
    out
}

/// Blank lines and `#` comments are ignored.
pub fn parse_calibration_file(text: &str) -> Result<Vec<CalibrationRecord>, CalibrationError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| CalibrationRecord::parse_line(l, i + 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::render::render_wand_depth;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn block_frame(blocks: &[(usize, usize, usize, f64)]) -> DepthFrame {
        let mut f = DepthFrame::filled(650.0, 0);
        for &(u0, v0, size, depth) in blocks {
            for v in v0..v0 + size {
                for u in u0..u0 + size {
                    f.set(u, v, depth);
                }
            }
        }
        f
    }

    #[test]
    fn standardize_examples() {
        let mut f = DepthFrame::filled(200.0, 0);
        f.set(0, 0, 30.0);
        f.set(1, 0, 700.0);
        f.set(2, 0, 0.0);
        let s = standardize_depth(&f);
        assert_eq!(s.get(0, 0), 50.0);
        assert_eq!(s.get(1, 0), 650.0);
        assert_eq!(s.get(2, 0), 650.0);
        assert_eq!(s.get(3, 0), 200.0);
    }

    #[test]
    fn single_block_is_segmented_exactly() {
        let f = block_frame(&[(100, 100, 40, 100.0)]);
        let (labels, (ul, br)) = segment_wand(&f, &WandConfig::default()).unwrap();
        assert_eq!(labels.count(), 1600);
        assert_eq!((ul, br), (Pixel { u: 100, v: 100 }, Pixel { u: 139, v: 139 }));
    }

    #[test]
    fn uniform_frame_has_no_wand() {
        let f = DepthFrame::filled(650.0, 0);
        assert_eq!(segment_wand(&f, &WandConfig::default()).unwrap_err(), CalibrationError::WandNotFound);
    }

    #[test]
    fn nearest_of_two_blocks_survives() {
        let f = block_frame(&[(50, 50, 40, 100.0), (300, 200, 40, 300.0)]);
        let (labels, (ul, _)) = segment_wand(&f, &WandConfig::default()).unwrap();
        assert_eq!(labels.count(), 1600);
        assert_eq!(ul, Pixel { u: 50, v: 50 });
    }

    #[test]
    fn label_sets_shrink_monotonically() {
        let f = block_frame(&[(50, 50, 40, 100.0), (300, 200, 40, 300.0), (200, 20, 10, 80.0)]);
        let steps = segment_wand_steps(&f, &WandConfig::default()).unwrap();
        assert!(steps.len() >= 3);
        for w in steps.windows(2) {
            assert!(w[1].is_subset_of(&w[0]));
        }
    }

    #[test]
    fn sphere_on_axis_localized() {
        let f = render_wand_depth(Point3::new(0.0, 0.0, 200.0), 5.0, 0.0, 0).unwrap();
        let d = localize_wand(&f, &WandConfig::default()).unwrap();
        assert!(d.center_point.distance(Point3::new(0.0, 0.0, 200.0)) < 1.0);
        assert_abs_diff_eq!(d.radius_cm, 5.0, epsilon = 0.1);
    }

    #[test]
    fn sphere_off_axis_localized() {
        let truth = Point3::new(50.0, 0.0, 150.0);
        let f = render_wand_depth(truth, 5.0, 0.0, 0).unwrap();
        let d = localize_wand(&f, &WandConfig::default()).unwrap();
        assert!(d.center_point.distance(truth) < 1.0);
        // the unrefined bounding-box estimate meets the same bound
        let coarse = localize_wand(&f, &WandConfig { refine: false, ..Default::default() }).unwrap();
        assert!(coarse.center_point.distance(truth) < 1.0, "{:?}", coarse.center_point);
    }

    #[test]
    fn truncated_sphere_is_rejected() {
        // centered on the left image border
        let z = 150.0;
        let x = -z * (35f64).to_radians().tan();
        let f = render_wand_depth(Point3::new(x, 0.0, z), 5.0, 0.0, 0).unwrap();
        assert!(matches!(
            localize_wand(&f, &WandConfig::default()),
            Err(CalibrationError::WandTruncated | CalibrationError::WandTooSmall { .. })
        ));
    }

    #[test]
    fn tiny_blob_is_too_small() {
        let f = block_frame(&[(200, 200, 2, 100.0)]);
        assert!(matches!(
            localize_wand(&f, &WandConfig::default()),
            Err(CalibrationError::WandTooSmall { width: 1, height: 1 })
        ));
    }

    #[test]
    fn localization_error_under_noise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for i in 0..20 {
            let z = rng.gen_range(80.0..300.0);
            let truth = Point3::new(rng.gen_range(-0.3..0.3) * z, rng.gen_range(-0.25..0.25) * z, z);
            let f = render_wand_depth(truth, 5.0, 0.5, i).unwrap();
            let d = localize_wand(&f, &WandConfig::default()).unwrap();
            assert!(d.center_point.distance(truth) <= 2.0, "{truth:?} -> {:?}", d.center_point);
        }
    }

    fn det_at(p: Point3) -> WandDetection {
        let px = Pixel { u: 256, v: 212 };
        WandDetection { bbox_ul: px, bbox_br: px, center_pixel: px, center_point: p, radius_cm: 5.0 }
    }

    #[test]
    fn validation_examples() {
        let same = vec![det_at(Point3::new(1.0, 2.0, 200.0)); 5];
        let acc = validate_samples(&same, 5.0).unwrap();
        assert_eq!(acc.detection.center_point, Point3::new(1.0, 2.0, 200.0));
        assert_eq!((acc.samples_used, acc.spread_cm), (5, 0.0));

        let mut with_outlier = vec![det_at(Point3::new(0.0, 0.0, 200.0)); 4];
        with_outlier.push(det_at(Point3::new(0.0, 0.0, 260.0)));
        let acc = validate_samples(&with_outlier, 5.0).unwrap();
        assert_eq!(acc.detection.center_point, Point3::new(0.0, 0.0, 200.0));
        assert_eq!(acc.samples_used, 4);

        let spread: Vec<_> = (0..5).map(|i| det_at(Point3::new(0.0, 0.0, 200.0 + 10.0 * i as f64))).collect();
        assert!(matches!(validate_samples(&spread, 5.0), Err(CalibrationError::FrameRejected { .. })));

        assert_eq!(validate_samples(&same[..2], 5.0).unwrap_err(), CalibrationError::TooFewSamples(2));
    }

    #[test]
    fn registration_examples() {
        let a = det_at(Point3::new(0.0, 0.0, 200.0));
        let pose = register_pose(&a, &det_at(Point3::new(0.0, 100.0, 200.0))).unwrap();
        assert_eq!(pose.yaw_theta, 0.0);
        assert_eq!(pose.origin_in_client, Point3::new(0.0, 0.0, 200.0));

        let pose = register_pose(&a, &det_at(Point3::new(100.0, 0.0, 200.0))).unwrap();
        assert_abs_diff_eq!(pose.yaw_theta, PI / 2.0, epsilon = 1e-12);

        let pose = register_pose(&a, &det_at(Point3::new(70.71, 70.71, 200.0))).unwrap();
        assert_abs_diff_eq!(pose.yaw_theta, PI / 4.0, epsilon = 1e-12);
        // magnitude agrees with arccos(dy / |d|)
        assert_abs_diff_eq!(pose.yaw_theta, (70.71f64 / (2.0f64.sqrt() * 70.71)).acos(), epsilon = 1e-12);

        assert!(matches!(
            register_pose(&a, &det_at(Point3::new(3.0, 4.0, 260.0))),
            Err(CalibrationError::TrajectoryTooShort(_))
        ));
    }

    #[test]
    fn registered_origin_maps_to_zero() {
        let a = det_at(Point3::new(12.0, -7.0, 180.0));
        let b = det_at(Point3::new(40.0, 20.0, 180.0));
        let pose = register_pose(&a, &b).unwrap();
        assert!(pose.to_server(a.center_point).norm() < 1e-9);
        let on_axis = pose.to_server(b.center_point);
        assert_abs_diff_eq!(on_axis.x, 0.0, epsilon = 1e-9);
        assert!(on_axis.y > 0.0);
    }

    #[test]
    fn calibration_file_round_trip() {
        let recs = vec![
            CalibrationRecord { sensor_id: 1, pose: SensorPose::new(Point3::new(1.5, -2.25, 200.0), 0.3), sample_count: 10, residual_spread: 0.125 },
            CalibrationRecord { sensor_id: 4, pose: SensorPose::new(Point3::new(0.1, 0.2, 0.3), -3.0), sample_count: 9, residual_spread: 0.0 },
        ];
        let text = write_calibration_file(&recs);
        assert_eq!(text.lines().next().unwrap(), "1 0.3 1.5 -2.25 200 10 0.125");
        assert_eq!(parse_calibration_file(&text).unwrap(), recs);
        assert!(matches!(parse_calibration_file("1 2 3\n"), Err(CalibrationError::Parse { line: 1, .. })));
    }
}
