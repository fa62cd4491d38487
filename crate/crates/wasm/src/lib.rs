//! Browser bindings for three engine operations: range-based trilateration,
//! the projected segment-crossing test, and wand localization on a rendered
//! depth frame.
//!
//! Each export is a thin wrapper over a plain function so the logic can be
//! tested natively.

use mctl_core::calibration::{localize_wand, WandConfig};
use mctl_core::geometry::{DEPTH_MAX_CM, FRAME_HEIGHT, FRAME_WIDTH};
use mctl_core::occlusion::{segments_cross, Segment2};
use mctl_core::sim::render_wand_depth;
use mctl_core::trilateration::{linear_init, solve, RangeConstraint, SolverConfig};
use mctl_core::Point3;
use wasm_bindgen::prelude::*;

fn constraints(sensors: &[f64], ranges: &[f64]) -> Result<Vec<RangeConstraint>, String> {
    if sensors.len() != 3 * ranges.len() {
        return Err(format!("{} sensor coordinates for {} ranges", sensors.len(), ranges.len()));
    }
    Ok(sensors
        .chunks_exact(3)
        .zip(ranges)
        .map(|(s, &r)| RangeConstraint::new(Point3::new(s[0], s[1], s[2]), r))
        .collect())
}

/// `[x, y, z, objective, iterations, linear_x, linear_y, linear_z]`.
pub fn trilaterate_impl(sensors: &[f64], ranges: &[f64], c_threshold: f64) -> Result<Vec<f64>, String> {
    let cs = constraints(sensors, ranges)?;
    let cfg = SolverConfig { c_threshold, ..SolverConfig::default() };
    let (seed, _) = linear_init(&cs).map_err(|e| e.to_string())?;
    let j = solve(&cs, &cfg, None).map_err(|e| e.to_string())?;
    let p = j.position;
    Ok(vec![p.x, p.y, p.z, j.final_objective, j.iterations as f64, seed.x, seed.y, seed.z])
}

/// `[center_x, center_y, center_z, radius, bbox_u0, bbox_v0, bbox_u1, bbox_v1]`
/// in the sensor frame, plus the rendered frame as RGBA for display.
pub fn locate_wand_impl(x: f64, y: f64, z: f64, radius: f64, noise: f64, seed: u64) -> Result<(Vec<f64>, Vec<u8>), String> {
    let frame = render_wand_depth(Point3::new(x, y, z), radius, noise, seed).map_err(|e| e.to_string())?;
    let mut rgba = Vec::with_capacity(FRAME_WIDTH * FRAME_HEIGHT * 4);
    for &d in frame.samples() {
        let g = (255.0 * (1.0 - d / DEPTH_MAX_CM)).clamp(0.0, 255.0) as u8;
        rgba.extend_from_slice(&[g, g, g, 255]);
    }
    let cfg = WandConfig { nominal_radius_cm: radius, ..WandConfig::default() };
    let w = localize_wand(&frame, &cfg).map_err(|e| e.to_string())?;
    let c = w.center_point;
    let out = vec![
        c.x,
        c.y,
        c.z,
        w.radius_cm,
        w.bbox_ul.u as f64,
        w.bbox_ul.v as f64,
        w.bbox_br.u as f64,
        w.bbox_br.v as f64,
    ];
    Ok((out, rgba))
}

#[wasm_bindgen]
pub fn trilaterate(sensors: &[f64], ranges: &[f64], c_threshold: f64) -> Result<Vec<f64>, JsError> {
    trilaterate_impl(sensors, ranges, c_threshold).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn crossing(ax1: f64, ay1: f64, ax2: f64, ay2: f64, bx1: f64, by1: f64, bx2: f64, by2: f64) -> bool {
    segments_cross(&Segment2::flat((ax1, ay1), (ax2, ay2)), &Segment2::flat((bx1, by1), (bx2, by2)))
}

#[wasm_bindgen]
pub struct WandResult {
    values: Vec<f64>,
    image: Vec<u8>,
}

#[wasm_bindgen]
impl WandResult {
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }

    /// RGBA pixels, `frame_width() * frame_height() * 4` bytes.
    pub fn image(&self) -> Vec<u8> {
        self.image.clone()
    }
}

#[wasm_bindgen]
pub fn locate_wand(x: f64, y: f64, z: f64, radius: f64, noise: f64, seed: u32) -> Result<WandResult, JsError> {
    let (values, image) = locate_wand_impl(x, y, z, radius, noise, seed as u64).map_err(|e| JsError::new(&e))?;
    Ok(WandResult { values, image })
}

#[wasm_bindgen]
pub fn frame_width() -> usize {
    FRAME_WIDTH
}

#[wasm_bindgen]
pub fn frame_height() -> usize {
    FRAME_HEIGHT
}

#[cfg(test)]
mod tests {
    use super::*;

    const SENSORS: [f64; 12] = [0.0, 0.0, 0.0, 300.0, 0.0, 0.0, 0.0, 300.0, 0.0, 0.0, 0.0, 300.0];

    #[test]
    fn trilaterate_recovers_exact_ranges() {
        let p = Point3::new(40.0, 70.0, 110.0);
        let ranges: Vec<f64> = SENSORS.chunks(3).map(|s| p.distance(Point3::new(s[0], s[1], s[2]))).collect();
        let out = trilaterate_impl(&SENSORS, &ranges, 1e-6).unwrap();
        assert!(Point3::new(out[0], out[1], out[2]).distance(p) < 1e-4);
        assert_eq!(out.len(), 8);
    }

    #[test]
    fn trilaterate_rejects_mismatched_input() {
        assert!(trilaterate_impl(&SENSORS[..9], &[1.0, 2.0], 1e-4).is_err());
        assert!(trilaterate_impl(&SENSORS[..6], &[1.0, 2.0], 1e-4).is_err());
    }

    #[test]
    fn crossing_examples() {
        assert!(crossing(0.0, 0.0, 10.0, 10.0, 0.0, 10.0, 10.0, 0.0));
        assert!(!crossing(0.0, 0.0, 10.0, 0.0, 0.0, 5.0, 10.0, 5.0));
    }

    #[test]
    fn wand_is_found_near_its_true_center() {
        let (v, img) = locate_wand_impl(10.0, -5.0, 200.0, 5.0, 0.0, 1).unwrap();
        assert!(Point3::new(v[0], v[1], v[2]).distance(Point3::new(10.0, -5.0, 200.0)) < 1.0);
        assert_eq!(img.len(), FRAME_WIDTH * FRAME_HEIGHT * 4);
        assert!(locate_wand_impl(0.0, 0.0, 900.0, 5.0, 0.0, 1).is_err());
    }
}
