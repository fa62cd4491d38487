//! Points, depth frames, the depth-camera model and the client-to-server
//! rigid transform.
//!
//! Lengths are centimeters throughout. Angles are radians except for the
//! field-of-view constants of the camera model.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Depth image width in pixels.
pub const FRAME_WIDTH: usize = 512;
/// Depth image height in pixels.
pub const FRAME_HEIGHT: usize = 424;
/// Horizontal field of view in degrees.
pub const FOV_H_DEG: f64 = 70.0;
/// Vertical field of view in degrees.
pub const FOV_V_DEG: f64 = 60.0;
/// Nearest usable depth in centimeters.
pub const DEPTH_MIN_CM: f64 = 50.0;
/// Farthest usable depth in centimeters.
pub const DEPTH_MAX_CM: f64 = 650.0;

const CENTER_U: f64 = (FRAME_WIDTH / 2) as f64;
const CENTER_V: f64 = (FRAME_HEIGHT / 2) as f64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("pixel ({u}, {v}) outside the {FRAME_WIDTH}x{FRAME_HEIGHT} frame")]
    PixelOutOfBounds { u: i64, v: i64 },
    #[error("depth {0} cm outside [{DEPTH_MIN_CM}, {DEPTH_MAX_CM}]")]
    DepthOutOfRange(f64),
    #[error("depth frame needs {expected} samples, got {actual}")]
    FrameSize { expected: usize, actual: usize },
}

/// A point or vector in centimeters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Point3) -> Point3 {
        Point3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Point3) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Arithmetic mean; `None` for an empty input.
    pub fn mean<I: IntoIterator<Item = Point3>>(points: I) -> Option<Point3> {
        let mut n = 0usize;
        let mut acc = Point3::ORIGIN;
        for p in points {
            acc = acc + p;
            n += 1;
        }
        (n > 0).then(|| acc * (1.0 / n as f64))
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

/// Integer pixel index into a depth frame. `u` is the column, `v` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pixel {
    pub u: usize,
    pub v: usize,
}

impl Pixel {
    pub fn new(u: usize, v: usize) -> Result<Self, GeometryError> {
        if u >= FRAME_WIDTH || v >= FRAME_HEIGHT {
            return Err(GeometryError::PixelOutOfBounds { u: u as i64, v: v as i64 });
        }
        Ok(Self { u, v })
    }
}

/// A 512x424 depth image in centimeters, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    samples: Vec<f64>,
    /// Client clock, milliseconds.
    pub timestamp_ms: i64,
}

impl DepthFrame {
    pub const LEN: usize = FRAME_WIDTH * FRAME_HEIGHT;

    pub fn filled(depth_cm: f64, timestamp_ms: i64) -> Self {
        Self { samples: vec![depth_cm; Self::LEN], timestamp_ms }
    }

    pub fn from_samples(samples: Vec<f64>, timestamp_ms: i64) -> Result<Self, GeometryError> {
        if samples.len() != Self::LEN {
            return Err(GeometryError::FrameSize { expected: Self::LEN, actual: samples.len() });
        }
        Ok(Self { samples, timestamp_ms })
    }

    /// Builds a frame from sensor-style millimeter counts.
    pub fn from_millimeters(mm: &[u16], timestamp_ms: i64) -> Result<Self, GeometryError> {
        if mm.len() != Self::LEN {
            return Err(GeometryError::FrameSize { expected: Self::LEN, actual: mm.len() });
        }
        let samples = mm.iter().map(|&d| f64::from(d) / 10.0).collect();
        Ok(Self { samples, timestamp_ms })
    }

    /// Millimeter counts, rounded and saturated to `u16`.
    pub fn to_millimeters(&self) -> Vec<u16> {
        self.samples
            .iter()
            .map(|&d| (d * 10.0).round().clamp(0.0, f64::from(u16::MAX)) as u16)
            .collect()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.samples[v * FRAME_WIDTH + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, depth_cm: f64) {
        self.samples[v * FRAME_WIDTH + u] = depth_cm;
    }
}

/// A client sensor's registration relative to the server frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorPose {
    /// Wand center (the server origin) expressed in the client frame.
    pub origin_in_client: Point3,
    /// Yaw in radians, normalized to (-pi, pi].
    pub yaw_theta: f64,
}

impl SensorPose {
    pub fn new(origin_in_client: Point3, yaw_theta: f64) -> Self {
        Self { origin_in_client, yaw_theta: normalize_angle(yaw_theta) }
    }

    pub const IDENTITY: SensorPose =
        SensorPose { origin_in_client: Point3::ORIGIN, yaw_theta: 0.0 };

    /// Client-frame point mapped into the server frame.
    pub fn to_server(&self, p: Point3) -> Point3 {
        transform_to_server(p, self)
    }

    /// Server-frame point mapped into this sensor's client frame.
    pub fn to_client(&self, p: Point3) -> Point3 {
        let (s, c) = self.yaw_theta.sin_cos();
        Point3::new(p.x * c + p.y * s, -p.x * s + p.y * c, p.z) + self.origin_in_client
    }

    /// Pose of a sensor whose optical center sits at `sensor_position` in the
    /// server frame.
    pub fn from_sensor_position(sensor_position: Point3, yaw_theta: f64) -> Self {
        let (s, c) = yaw_theta.sin_cos();
        let p = -sensor_position;
        Self::new(Point3::new(p.x * c + p.y * s, -p.x * s + p.y * c, p.z), yaw_theta)
    }

    /// The sensor's own optical center in the server frame.
    pub fn sensor_position(&self) -> Point3 {
        self.to_server(Point3::ORIGIN)
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(theta: f64) -> f64 {
    let mut t = theta % (2.0 * PI);
    if t <= -PI {
        t += 2.0 * PI;
    } else if t > PI {
        t -= 2.0 * PI;
    }
    t
}

fn horizontal_angle(u: f64) -> f64 {
    FOV_H_DEG.to_radians() * (u - CENTER_U) / FRAME_WIDTH as f64
}

fn vertical_angle(v: f64) -> f64 {
    FOV_V_DEG.to_radians() * (v - CENTER_V) / FRAME_HEIGHT as f64
}

/// Back-projects a pixel at a measured depth into the client camera frame.
pub fn pixel_to_camera(p: Pixel, depth_cm: f64) -> Result<Point3, GeometryError> {
    if p.u >= FRAME_WIDTH || p.v >= FRAME_HEIGHT {
        return Err(GeometryError::PixelOutOfBounds { u: p.u as i64, v: p.v as i64 });
    }
    if !(DEPTH_MIN_CM..=DEPTH_MAX_CM).contains(&depth_cm) {
        return Err(GeometryError::DepthOutOfRange(depth_cm));
    }
    Ok(subpixel_to_camera(p.u as f64, p.v as f64, depth_cm))
}

/// Same camera model for fractional pixel coordinates. No range checks.
pub fn subpixel_to_camera(u: f64, v: f64, depth_cm: f64) -> Point3 {
    Point3::new(
        depth_cm * horizontal_angle(u).tan(),
        depth_cm * vertical_angle(v).tan(),
        depth_cm,
    )
}

/// Direction (z = 1) of the viewing ray through a fractional pixel.
pub fn pixel_ray(u: f64, v: f64) -> Point3 {
    subpixel_to_camera(u, v, 1.0)
}

/// Inverse camera model: fractional pixel coordinates of a point in front of
/// the sensor. Returns `None` for points with `z <= 0`.
pub fn camera_to_subpixel(p: Point3) -> Option<(f64, f64)> {
    if p.z <= 0.0 {
        return None;
    }
    let u = (p.x / p.z).atan() / FOV_H_DEG.to_radians() * FRAME_WIDTH as f64 + CENTER_U;
    let v = (p.y / p.z).atan() / FOV_V_DEG.to_radians() * FRAME_HEIGHT as f64 + CENTER_V;
    Some((u, v))
}

/// Width in centimeters covered by one pixel column at `depth_cm` around
/// column `u`.
pub fn metric_per_pixel_h(u: f64, depth_cm: f64) -> f64 {
    depth_cm * (horizontal_angle(u + 0.5).tan() - horizontal_angle(u - 0.5).tan())
}

/// Maps a client-frame point into the server frame: subtract the wand origin,
/// then rotate by the yaw about the shared z axis.
pub fn transform_to_server(p: Point3, pose: &SensorPose) -> Point3 {
    let q = p - pose.origin_in_client;
    let (s, c) = pose.yaw_theta.sin_cos();
    Point3::new(q.x * c - q.y * s, q.x * s + q.y * c, q.z)
}

/// Planar cross product `x1*y2 - x2*y1` of `(x1, y1)` and `(x2, y2)`.
#[inline]
pub fn vector_product(x1: f64, y1: f64, x2: f64, y2: f64) -> f64 {
    x1 * y2 - x2 * y1
}
