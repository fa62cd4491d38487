//! Analytic depth rendering of the calibration wand.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::SimError;
use crate::geometry::{pixel_ray, DepthFrame, Point3, DEPTH_MAX_CM, DEPTH_MIN_CM, FRAME_HEIGHT, FRAME_WIDTH};

/// Ray-traces a sphere of `radius` centered at `center` (client frame) into a
/// depth frame with a 650 cm background, then adds per-pixel Gaussian noise.
///
/// A wand closer than the minimum depth, farther than the maximum, or
/// invisible to every pixel is reported as [`SimError::WandOutOfRange`].
pub fn render_wand_depth(center: Point3, radius: f64, noise_sigma: f64, seed: u64) -> Result<DepthFrame, SimError> {
    if center.z - radius < DEPTH_MIN_CM || center.z + radius > DEPTH_MAX_CM {
        return Err(SimError::WandOutOfRange(center.z));
    }
    let mut frame = DepthFrame::filled(DEPTH_MAX_CM, 0);
    let c2 = center.dot(center) - radius * radius;
    let mut hits = 0usize;
    for v in 0..FRAME_HEIGHT {
        for u in 0..FRAME_WIDTH {
            let d = pixel_ray(u as f64, v as f64);
            // |t d - c|^2 = r^2, nearest root; d.z = 1 so t is the depth
            let (a, b) = (d.dot(d), d.dot(center));
            let disc = b * b - a * c2;
            if disc < 0.0 {
                continue;
            }
            let t = (b - disc.sqrt()) / a;
            if t > 0.0 {
                frame.set(u, v, t);
                hits += 1;
            }
        }
    }
    if hits == 0 {
        return Err(SimError::WandOutOfRange(center.z));
    }
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("finite sigma");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in frame.samples_mut() {
            *s += normal.sample(&mut rng);
        }
    }
    Ok(frame)
}
