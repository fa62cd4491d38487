//! Skeleton topology and per-sensor joint observations.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::geometry::Point3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkeletonError {
    #[error("unknown skeleton `{0}`")]
    UnknownSkeleton(String),
    #[error("unknown joint `{0}`")]
    UnknownJoint(String),
    #[error("limb ({0}, {1}) references a joint outside the skeleton")]
    DanglingLimb(u16, u16),
    #[error("duplicate limb ({0}, {1})")]
    DuplicateLimb(u16, u16),
}

/// Index of a joint in its skeleton's joint list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JointId(pub u16);

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub type SensorId = u16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrackingState {
    Tracked,
    Inferred,
}

impl TrackingState {
    pub fn to_byte(self) -> u8 {
        match self {
            TrackingState::Tracked => 0,
            TrackingState::Inferred => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(TrackingState::Tracked),
            1 => Some(TrackingState::Inferred),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    name: String,
    joints: Vec<String>,
    limbs: Vec<(JointId, JointId)>,
}

/// The default 15-joint body.
pub const DEFAULT_JOINTS: [&str; 15] = [
    "head",
    "neck",
    "spine",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_hip",
    "right_knee",
    "right_ankle",
];

const DEFAULT_LIMBS: [(&str, &str); 14] = [
    ("head", "neck"),
    ("neck", "spine"),
    ("neck", "left_shoulder"),
    ("left_shoulder", "left_elbow"),
    ("left_elbow", "left_wrist"),
    ("neck", "right_shoulder"),
    ("right_shoulder", "right_elbow"),
    ("right_elbow", "right_wrist"),
    ("spine", "left_hip"),
    ("left_hip", "left_knee"),
    ("left_knee", "left_ankle"),
    ("spine", "right_hip"),
    ("right_hip", "right_knee"),
    ("right_knee", "right_ankle"),
];

impl Skeleton {
    pub fn new(
        name: impl Into<String>,
        joints: Vec<String>,
        limbs: Vec<(JointId, JointId)>,
    ) -> Result<Self, SkeletonError> {
        let n = joints.len() as u16;
        let mut seen = HashSet::new();
        for &(a, b) in &limbs {
            if a.0 >= n || b.0 >= n {
                return Err(SkeletonError::DanglingLimb(a.0, b.0));
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                return Err(SkeletonError::DuplicateLimb(a.0, b.0));
            }
        }
        Ok(Self { name: name.into(), joints, limbs })
    }

    pub fn default_body() -> Self {
        let joints: Vec<String> = DEFAULT_JOINTS.iter().map(|s| s.to_string()).collect();
        let idx = |name: &str| JointId(DEFAULT_JOINTS.iter().position(|j| *j == name).unwrap() as u16);
        let limbs = DEFAULT_LIMBS.iter().map(|(a, b)| (idx(a), idx(b))).collect();
        Self::new("body15", joints, limbs).expect("default skeleton is well formed")
    }

    /// Looks up a built-in skeleton by name.
    pub fn by_name(name: &str) -> Result<Self, SkeletonError> {
        match name {
            "body15" | "default" => Ok(Self::default_body()),
            other => Err(SkeletonError::UnknownSkeleton(other.to_string())),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn joint_ids(&self) -> impl Iterator<Item = JointId> + '_ {
        (0..self.joints.len() as u16).map(JointId)
    }

    pub fn limbs(&self) -> &[(JointId, JointId)] {
        &self.limbs
    }

    pub fn joint_name(&self, id: JointId) -> Option<&str> {
        self.joints.get(id.0 as usize).map(String::as_str)
    }

    pub fn joint(&self, name: &str) -> Result<JointId, SkeletonError> {
        self.joints
            .iter()
            .position(|j| j == name)
            .map(|i| JointId(i as u16))
            .ok_or_else(|| SkeletonError::UnknownJoint(name.to_string()))
    }

    pub fn contains(&self, id: JointId) -> bool {
        (id.0 as usize) < self.joints.len()
    }
}

/// One joint position reported by one sensor, in that sensor's client frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointObservation {
    pub joint: JointId,
    pub position: Point3,
    pub tracking_state: TrackingState,
    pub sensor_id: SensorId,
    /// Client clock, milliseconds.
    pub client_timestamp: i64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_body_has_fifteen_joints() {
        let s = Skeleton::default_body();
        assert_eq!(s.len(), 15);
        assert_eq!(s.limbs().len(), 14);
        assert_eq!(s.joint_name(s.joint("right_elbow").unwrap()), Some("right_elbow"));
        for &(a, b) in s.limbs() {
            assert!(s.contains(a) && s.contains(b));
        }
    }

    #[test]
    fn malformed_skeletons_rejected() {
        let joints = vec!["a".to_string(), "b".to_string()];
        assert_eq!(
            Skeleton::new("x", joints.clone(), vec![(JointId(0), JointId(2))]),
            Err(SkeletonError::DanglingLimb(0, 2))
        );
        assert_eq!(
            Skeleton::new("x", joints, vec![(JointId(0), JointId(1)), (JointId(1), JointId(0))]),
            Err(SkeletonError::DuplicateLimb(1, 0))
        );
        assert!(Skeleton::by_name("octopus").is_err());
    }
}
