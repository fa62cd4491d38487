//! Limb-crossing occlusion detection and the server-side sensor selection rule.
//!
//! Limbs are projected onto the sensor's image plane; two limbs whose
//! projections cross occlude each other, and the one farther from the sensor
//! at the crossing is hidden.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::geometry::{camera_to_subpixel, vector_product, Point3};
use crate::skeleton::{JointId, JointObservation, SensorId, Skeleton, TrackingState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OcclusionError {
    #[error("segments do not cross")]
    NotCrossing,
    #[error("joint {0} unavailable this frame")]
    JointUnavailable(JointId),
}

/// A projected limb: planar endpoints plus the depth at each endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment2 {
    pub p1: (f64, f64),
    pub p2: (f64, f64),
    pub z1: f64,
    pub z2: f64,
}

impl Segment2 {
    pub fn new(p1: (f64, f64), p2: (f64, f64), z1: f64, z2: f64) -> Self {
        Self { p1, p2, z1, z2 }
    }

    pub fn flat(p1: (f64, f64), p2: (f64, f64)) -> Self {
        Self::new(p1, p2, 0.0, 0.0)
    }
}

/// Six-condition crossing test: four bounding-box overlap inequalities and
/// two strict straddle tests.
///
/// Touching at an endpoint or overlapping collinearly is not a crossing, so
/// limbs sharing a joint never cross each other.
pub fn segments_cross(a: &Segment2, b: &Segment2) -> bool {
    let ((ax1, ay1), (ax2, ay2)) = (a.p1, a.p2);
    let ((bx1, by1), (bx2, by2)) = (b.p1, b.p2);

    if ax1.min(ax2) - bx1.max(bx2) > 0.0
        || bx1.min(bx2) - ax1.max(ax2) > 0.0
        || ay1.min(ay2) - by1.max(by2) > 0.0
        || by1.min(by2) - ay1.max(ay2) > 0.0
    {
        return false;
    }

    // a's endpoints on opposite sides of b
    let a_straddles = vector_product(ax1 - bx1, ay1 - by1, bx2 - bx1, by2 - by1)
        * vector_product(ax2 - bx1, ay2 - by1, bx2 - bx1, by2 - by1)
        < 0.0;
    // b's endpoints on opposite sides of a
    let b_straddles = vector_product(bx1 - ax1, by1 - ay1, ax2 - ax1, ay2 - ay1)
        * vector_product(bx2 - ax1, by2 - ay1, ax2 - ax1, ay2 - ay1)
        < 0.0;
    a_straddles && b_straddles
}

/// Depth of each segment at their crossing point, `(z_on_a, z_on_b)`.
///
/// The crossing parameter along each segment comes from the planar cross
/// products; depth is interpolated linearly along the segment. The smaller
/// value belongs to the segment nearer the sensor.
pub fn crossing_depths(a: &Segment2, b: &Segment2) -> Result<(f64, f64), OcclusionError> {
    if !segments_cross(a, b) {
        return Err(OcclusionError::NotCrossing);
    }
    let da = (a.p2.0 - a.p1.0, a.p2.1 - a.p1.1);
    let db = (b.p2.0 - b.p1.0, b.p2.1 - b.p1.1);
    let offset = (a.p1.0 - b.p1.0, a.p1.1 - b.p1.1);
    let denom = vector_product(da.0, da.1, db.0, db.1);
    // crossing a strictly implies non-parallel segments, so denom != 0
    let t_a = vector_product(db.0, db.1, offset.0, offset.1) / denom;
    let t_b = vector_product(da.0, da.1, offset.0, offset.1) / denom;
    Ok((a.z1 + (a.z2 - a.z1) * t_a, b.z1 + (b.z2 - b.z1) * t_b))
}

/// How a client projects its 3D joints onto the plane used for crossing tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SensorView {
    /// Camera-plane centimeters `(x, y)`, depth `z`.
    #[default]
    CameraPlane,
    /// Fractional depth-image pixels, depth `z`.
    Image,
}

impl SensorView {
    pub fn project(&self, p: Point3) -> Option<(f64, f64, f64)> {
        match self {
            SensorView::CameraPlane => Some((p.x, p.y, p.z)),
            SensorView::Image => camera_to_subpixel(p).map(|(u, v)| (u, v, p.z)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OcclusionReport {
    pub sensor_id: SensorId,
    pub occluded_joints: BTreeSet<JointId>,
    pub inferred_joints: BTreeSet<JointId>,
    /// Number of crossing limb pairs.
    pub intersection_count: u16,
    /// Limbs that could not be tested because an endpoint was missing.
    pub skipped_limbs: Vec<(JointId, JointId)>,
}

impl OcclusionReport {
    /// Neither occluded nor inferred.
    pub fn trusts(&self, joint: JointId) -> bool {
        !self.occluded_joints.contains(&joint) && !self.inferred_joints.contains(&joint)
    }
}

/// Tests every pair of limbs for a crossing in the sensor's view and flags
/// both joints of the farther limb at each crossing.
pub fn detect_occlusions(
    sensor_id: SensorId,
    observations: &[JointObservation],
    skeleton: &Skeleton,
    view: SensorView,
) -> OcclusionReport {
    let mut report = OcclusionReport { sensor_id, ..Default::default() };
    let by_joint: BTreeMap<JointId, &JointObservation> =
        observations.iter().map(|o| (o.joint, o)).collect();

    for o in observations {
        if o.tracking_state == TrackingState::Inferred {
            report.inferred_joints.insert(o.joint);
        }
    }

    let mut segments = Vec::with_capacity(skeleton.limbs().len());
    for &(j1, j2) in skeleton.limbs() {
        let projected = by_joint
            .get(&j1)
            .zip(by_joint.get(&j2))
            .and_then(|(a, b)| view.project(a.position).zip(view.project(b.position)));
        match projected {
            Some((a, b)) => segments.push(((j1, j2), Segment2::new((a.0, a.1), (b.0, b.1), a.2, b.2))),
            None => report.skipped_limbs.push((j1, j2)),
        }
    }

    for i in 0..segments.len() {
        for k in (i + 1)..segments.len() {
            let (limb_a, seg_a) = segments[i];
            let (limb_b, seg_b) = segments[k];
            let Ok((za, zb)) = crossing_depths(&seg_a, &seg_b) else {
                continue;
            };
            report.intersection_count = report.intersection_count.saturating_add(1);
            let hidden = if za < zb { limb_b } else { limb_a };
            report.occluded_joints.insert(hidden.0);
            report.occluded_joints.insert(hidden.1);
        }
    }
    report
}

/// Chooses which sensors' observations of `joint` enter fusion.
///
/// Every sensor that reports the joint as trusted is selected. When none
/// does, the single sensor with the fewest crossings is used, lowest id on
/// ties. `reports` lists, per sensor, its report and whether it observed the
/// joint at all.
pub fn select_observations(
    reports: &[(&OcclusionReport, bool)],
    joint: JointId,
) -> Result<Vec<SensorId>, OcclusionError> {
    let reporting: Vec<&OcclusionReport> =
        reports.iter().filter(|(_, has)| *has).map(|(r, _)| *r).collect();
    if reporting.is_empty() {
        return Err(OcclusionError::JointUnavailable(joint));
    }
    let mut trusted: Vec<SensorId> =
        reporting.iter().filter(|r| r.trusts(joint)).map(|r| r.sensor_id).collect();
    if !trusted.is_empty() {
        trusted.sort_unstable();
        return Ok(trusted);
    }
    let best = reporting
        .iter()
        .min_by_key(|r| (r.intersection_count, r.sensor_id))
        .expect("non-empty");
    Ok(vec![best.sensor_id])
}
