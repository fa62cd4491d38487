//! Simulated skeleton tracking: ground truth seen through a sensor.

use std::collections::BTreeSet;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{Point3, SensorPose};
use crate::skeleton::{JointId, JointObservation, SensorId, TrackingState};

/// Default extra depth error on inferred joints, centimeters.
pub const DEFAULT_INFERRED_BIAS_CM: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum NoiseModel {
    #[default]
    None,
    /// Independent per-axis Gaussian error, client frame.
    Gaussian { sigma: f64 },
    /// Error along the viewing ray with magnitude uniform in `[lo, hi)` and
    /// random sign.
    Uniform { lo: f64, hi: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            NoiseModel::None => Ok(()),
            NoiseModel::Gaussian { sigma } if sigma.is_finite() && sigma >= 0.0 => Ok(()),
            NoiseModel::Uniform { lo, hi } if lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi => Ok(()),
            _ => Err(format!("invalid noise model {self:?}")),
        }
    }

    /// Perturbs a client-frame point.
    pub fn apply<R: Rng + ?Sized>(&self, p: Point3, rng: &mut R) -> Point3 {
        match *self {
            NoiseModel::None => p,
            NoiseModel::Gaussian { sigma } => {
                if sigma == 0.0 {
                    return p;
                }
                let n = Normal::new(0.0, sigma).expect("validated sigma");
                p + Point3::new(n.sample(rng), n.sample(rng), n.sample(rng))
            }
            NoiseModel::Uniform { lo, hi } => {
                let mag = if hi > lo { rng.gen_range(lo..hi) } else { lo };
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let n = p.norm();
                if n == 0.0 {
                    return p;
                }
                p * (1.0 + sign * mag / n)
            }
        }
    }
}

impl FromStr for NoiseModel {
    type Err = String;

    /// `none`, `gaussian:SIGMA` or `uniform:LO:HI`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let num = |v: &str| v.parse::<f64>().map_err(|_| format!("bad number `{v}` in noise model"));
        let m = match parts.as_slice() {
            ["none"] => NoiseModel::None,
            ["gaussian", sigma] => NoiseModel::Gaussian { sigma: num(sigma)? },
            ["uniform", lo, hi] => NoiseModel::Uniform { lo: num(lo)?, hi: num(hi)? },
            _ => return Err(format!("bad noise model `{s}` (none | gaussian:SIGMA | uniform:LO:HI)")),
        };
        m.validate()?;
        Ok(m)
    }
}

/// One sensor's view of the true joints.
///
/// Joints are moved into the sensor's client frame, perturbed by `noise`, and
/// those listed in `inferred` are marked so and pushed `inferred_bias_cm`
/// farther along the sensor's viewing axis.
#[allow(clippy::too_many_arguments)]
pub fn observe_skeleton<R: Rng + ?Sized>(
    truth: &[Point3],
    sensor_id: SensorId,
    pose: &SensorPose,
    client_timestamp: i64,
    noise: &NoiseModel,
    inferred: &BTreeSet<JointId>,
    inferred_bias_cm: f64,
    rng: &mut R,
) -> Vec<JointObservation> {
    truth
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let joint = JointId(j as u16);
            let mut position = noise.apply(pose.to_client(p), rng);
            let tracking_state = if inferred.contains(&joint) {
                position.z += inferred_bias_cm;
                TrackingState::Inferred
            } else {
                TrackingState::Tracked
            };
            JointObservation { joint, position, tracking_state, sensor_id, client_timestamp }
        })
        .collect()
}
