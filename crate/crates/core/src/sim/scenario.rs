//! Simulation scenario: everything a seeded run needs, read from the same
//! `key = value` format as the server configuration.
//!
//! ```text
//! seed = 7
//! ticks = 600
//! motion = armswing            # static | armswing | gait
//! noise = gaussian:1.5         # none | gaussian:SIGMA | uniform:LO:HI
//! sensor.1 = 0.2 -30 40 310    # yaw_rad ox oy oz (server origin in client frame)
//! clock_offset.1 = 1250        # client clock minus server clock, ms
//! occlude.2 = right_elbow 0 300
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use crate::config::{ConfigError, KeyValues, ServerConfig};
use crate::geometry::{Point3, SensorPose};
use crate::sim::motion::{MotionKind, MotionScript};
use crate::sim::network::DelayModel;
use crate::sim::observe::{NoiseModel, DEFAULT_INFERRED_BIAS_CM};
use crate::skeleton::{JointId, SensorId, Skeleton};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcclusionScript {
    pub sensor: SensorId,
    pub joint: JointId,
    /// First tick affected.
    pub start_tick: u64,
    /// First tick no longer affected.
    pub end_tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WandScenario {
    pub radius_cm: f64,
    /// Per-pixel depth noise of the rendered calibration frames.
    pub noise_cm: f64,
    pub samples: usize,
    /// Distance between the two placements along the server y axis.
    pub trajectory_cm: f64,
    pub max_dev_cm: f64,
}

impl Default for WandScenario {
    fn default() -> Self {
        Self { radius_cm: 5.0, noise_cm: 0.5, samples: 5, trajectory_cm: 40.0, max_dev_cm: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub ticks: u64,
    pub motion: MotionKind,
    pub noise: NoiseModel,
    pub delay: DelayModel,
    /// Ground-truth poses.
    pub sensors: BTreeMap<SensorId, SensorPose>,
    pub clock_offsets: BTreeMap<SensorId, f64>,
    pub occlusions: Vec<OcclusionScript>,
    pub inferred_bias_cm: f64,
    pub wand: WandScenario,
    pub server: ServerConfig,
}

/// Four sensors spread around the subject, 2.6 to 3 m away. The wand
/// detector needs the wand nearer than about half the 6.5 m background, so
/// sensors stay within 3 m of the calibration origin.
pub fn default_sensor_layout() -> BTreeMap<SensorId, SensorPose> {
    [
        (1, Point3::new(-110.0, -50.0, -300.0), 0.0),
        (2, Point3::new(110.0, -40.0, -280.0), 0.3),
        (3, Point3::new(100.0, 60.0, -295.0), -0.4),
        (4, Point3::new(-90.0, 55.0, -260.0), 0.15),
    ]
    .into_iter()
    .map(|(id, p, yaw)| (id, SensorPose::from_sensor_position(p, yaw)))
    .collect()
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            ticks: 600,
            motion: MotionKind::Static,
            noise: NoiseModel::None,
            delay: DelayModel::default(),
            sensors: default_sensor_layout(),
            clock_offsets: BTreeMap::new(),
            occlusions: Vec::new(),
            inferred_bias_cm: DEFAULT_INFERRED_BIAS_CM,
            wand: WandScenario::default(),
            server: ServerConfig::default(),
        }
    }
}

const SCENARIO_KEYS: [&str; 15] = [
    "seed",
    "ticks",
    "motion",
    "noise",
    "delay_base_ms",
    "delay_jitter_ms",
    "delay_asymmetry_ms",
    "disconnect_rate_hz",
    "outage_ms",
    "inferred_bias_cm",
    "wand_radius_cm",
    "calib_noise_cm",
    "calib_samples",
    "calib_trajectory_cm",
    "calib_max_dev_cm",
];

fn nums<const N: usize>(key: &str, v: &str) -> Result<[f64; N], ConfigError> {
    let vals: Vec<f64> = v
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| ConfigError::invalid(key, format!("bad number `{t}`"))))
        .collect::<Result<_, _>>()?;
    vals.try_into().map_err(|_| ConfigError::invalid(key, format!("expected {N} numbers")))
}

fn sensor_key(key: &str, suffix: &str) -> Result<SensorId, ConfigError> {
    let id = suffix.split('.').next().unwrap_or("");
    id.parse().map_err(|_| ConfigError::invalid(key, format!("bad sensor id `{id}`")))
}

impl ScenarioConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self, ConfigError> {
        let plain: Vec<&str> = SCENARIO_KEYS.iter().chain(ServerConfig::KEYS.iter()).copied().collect();
        kv.check_known(&plain, &["sensor", "clock_offset", "occlude"])?;
        let d = Self::default();
        let server = ServerConfig::from_kv_lenient(kv)?;
        let skeleton = Skeleton::by_name(&server.skeleton).map_err(|e| ConfigError::invalid("skeleton", e.to_string()))?;

        let mut sensors: BTreeMap<SensorId, SensorPose> = kv
            .indexed("sensor")
            .map(|(suffix, v)| {
                let key = format!("sensor.{suffix}");
                let [yaw, ox, oy, oz] = nums::<4>(&key, v)?;
                Ok((sensor_key(&key, suffix)?, SensorPose::new(Point3::new(ox, oy, oz), yaw)))
            })
            .collect::<Result<_, ConfigError>>()?;
        if sensors.is_empty() {
            sensors = d.sensors.clone();
        }

        let clock_offsets = kv
            .indexed("clock_offset")
            .map(|(suffix, v)| {
                let key = format!("clock_offset.{suffix}");
                let [ms] = nums::<1>(&key, v)?;
                Ok((sensor_key(&key, suffix)?, ms))
            })
            .collect::<Result<_, ConfigError>>()?;

        let occlusions = kv
            .indexed("occlude")
            .map(|(suffix, v)| {
                let key = format!("occlude.{suffix}");
                let sensor = sensor_key(&key, suffix)?;
                let parts: Vec<&str> = v.split_whitespace().collect();
                let [name, start, end] = parts.as_slice() else {
                    return Err(ConfigError::invalid(&key, "expected `joint start_tick end_tick`"));
                };
                let joint = match name.parse::<u16>() {
                    Ok(id) => JointId(id),
                    Err(_) => skeleton.joint(name).map_err(|e| ConfigError::invalid(&key, e.to_string()))?,
                };
                let tick = |t: &str| t.parse::<u64>().map_err(|_| ConfigError::invalid(&key, format!("bad tick `{t}`")));
                Ok(OcclusionScript { sensor, joint, start_tick: tick(start)?, end_tick: tick(end)? })
            })
            .collect::<Result<_, ConfigError>>()?;

        let parse_with = |key: &str, default| -> Result<_, ConfigError> {
            kv.get(key).map(|v| v.parse().map_err(|e: String| ConfigError::invalid(key, e))).transpose().map(|o| o.unwrap_or(default))
        };

        let cfg = Self {
            seed: kv.parsed_or("seed", d.seed)?,
            ticks: kv.parsed_or("ticks", d.ticks)?,
            motion: parse_with("motion", d.motion)?,
            noise: kv
                .get("noise")
                .map(|v| v.parse().map_err(|e: String| ConfigError::invalid("noise", e)))
                .transpose()?
                .unwrap_or(d.noise),
            delay: DelayModel {
                base_ms: kv.parsed_or("delay_base_ms", d.delay.base_ms)?,
                jitter_ms: kv.parsed_or("delay_jitter_ms", d.delay.jitter_ms)?,
                asymmetry_ms: kv.parsed_or("delay_asymmetry_ms", d.delay.asymmetry_ms)?,
                disconnect_rate_hz: kv.parsed_or("disconnect_rate_hz", d.delay.disconnect_rate_hz)?,
                outage_ms: kv.parsed_or("outage_ms", d.delay.outage_ms)?,
            },
            sensors,
            clock_offsets,
            occlusions,
            inferred_bias_cm: kv.parsed_or("inferred_bias_cm", d.inferred_bias_cm)?,
            wand: WandScenario {
                radius_cm: kv.parsed_or("wand_radius_cm", d.wand.radius_cm)?,
                noise_cm: kv.parsed_or("calib_noise_cm", d.wand.noise_cm)?,
                samples: kv.parsed_or("calib_samples", d.wand.samples)?,
                trajectory_cm: kv.parsed_or("calib_trajectory_cm", d.wand.trajectory_cm)?,
                max_dev_cm: kv.parsed_or("calib_max_dev_cm", d.wand.max_dev_cm)?,
            },
            server,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.server.validate()?;
        let skeleton = self.skeleton();
        if self.ticks == 0 {
            return Err(ConfigError::invalid("ticks", "must be positive"));
        }
        if self.sensors.is_empty() {
            return Err(ConfigError::invalid("sensor", "at least one sensor is required"));
        }
        self.noise.validate().map_err(|e| ConfigError::invalid("noise", e))?;
        self.delay.validate().map_err(|e| ConfigError::invalid("delay_base_ms", e))?;
        if MotionScript::builtin(self.motion).joint_count() != skeleton.len() {
            return Err(ConfigError::invalid("motion", "motion script does not match the skeleton"));
        }
        for id in self.clock_offsets.keys() {
            if !self.sensors.contains_key(id) {
                return Err(ConfigError::invalid(&format!("clock_offset.{id}"), "no such sensor"));
            }
        }
        for o in &self.occlusions {
            let key = format!("occlude.{}", o.sensor);
            if !self.sensors.contains_key(&o.sensor) {
                return Err(ConfigError::invalid(&key, "no such sensor"));
            }
            if !skeleton.contains(o.joint) {
                return Err(ConfigError::invalid(&key, format!("joint {} not in skeleton", o.joint)));
            }
            if o.start_tick >= o.end_tick {
                return Err(ConfigError::invalid(&key, "start tick must precede end tick"));
            }
        }
        if !(self.inferred_bias_cm.is_finite() && self.inferred_bias_cm >= 0.0) {
            return Err(ConfigError::invalid("inferred_bias_cm", "must be non-negative"));
        }
        let w = &self.wand;
        if !(w.radius_cm > 0.0) || !(w.noise_cm >= 0.0) || !(w.max_dev_cm > 0.0) {
            return Err(ConfigError::invalid("wand_radius_cm", "wand parameters must be positive"));
        }
        if w.samples < 3 || w.samples > u8::MAX as usize {
            return Err(ConfigError::invalid("calib_samples", "must be between 3 and 255"));
        }
        if !(w.trajectory_cm >= crate::calibration::MIN_TRAJECTORY_CM) {
            return Err(ConfigError::invalid("calib_trajectory_cm", "must be at least 10 cm"));
        }
        Ok(())
    }

    pub fn skeleton(&self) -> Skeleton {
        Skeleton::by_name(&self.server.skeleton).expect("validated skeleton")
    }

    pub fn fps(&self) -> f64 {
        self.server.fps
    }

    pub fn clock_offset(&self, sensor: SensorId) -> f64 {
        self.clock_offsets.get(&sensor).copied().unwrap_or(0.0)
    }

    /// Joints a sensor reports as inferred at `tick`.
    pub fn inferred_at(&self, sensor: SensorId, tick: u64) -> BTreeSet<JointId> {
        self.occlusions
            .iter()
            .filter(|o| o.sensor == sensor && (o.start_tick..o.end_tick).contains(&tick))
            .map(|o| o.joint)
            .collect()
    }
}

impl FromStr for ScenarioConfig {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_kv(&KeyValues::parse(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trilateration::SolverMode;

    #[test]
    fn empty_file_gives_defaults() {
        let c: ScenarioConfig = "".parse().unwrap();
        assert_eq!(c, ScenarioConfig::default());
        assert_eq!(c.sensors.len(), 4);
    }

    #[test]
    fn default_layout_places_sensors_where_intended() {
        let l = default_sensor_layout();
        assert!(l[&2].sensor_position().distance(Point3::new(110.0, -40.0, -280.0)) < 1e-9);
        assert!((l[&3].yaw_theta + 0.4).abs() < 1e-12);
    }

    #[test]
    fn full_scenario_parses() {
        let text = "seed = 9\nticks = 90\nmotion = gait\nnoise = gaussian:2\nfps = 60\nsolver = linear\n\
                    compensation = off\ndelay_jitter_ms = 2\nsensor.1 = 0.1 0 0 250\nsensor.7 = -0.2 10 5 300\n\
                    clock_offset.7 = -400\nocclude.7 = right_elbow 10 20\nocclude.7.b = 3 0 5\n";
        let c: ScenarioConfig = text.parse().unwrap();
        assert_eq!((c.seed, c.ticks, c.motion), (9, 90, MotionKind::Gait));
        assert_eq!(c.noise, NoiseModel::Gaussian { sigma: 2.0 });
        assert_eq!(c.fps(), 60.0);
        assert_eq!(c.server.mode, SolverMode::LinearOnly);
        assert!(!c.server.compensation);
        assert_eq!(c.sensors.keys().copied().collect::<Vec<_>>(), vec![1, 7]);
        assert_eq!(c.clock_offset(7), -400.0);
        assert_eq!(c.clock_offset(1), 0.0);
        assert_eq!(c.inferred_at(7, 12), [JointId(7)].into());
        assert_eq!(c.inferred_at(7, 3), [JointId(3)].into());
        assert!(c.inferred_at(7, 20).is_empty());
    }

    #[test]
    fn invalid_scenarios_rejected() {
        for bad in [
            "ticks = 0",
            "noise = gaussian:-1",
            "delay_jitter_ms = -2",
            "delay_base_ms = 1\ndelay_jitter_ms = 3",
            "occlude.9 = head 0 10",
            "occlude.1 = tail 0 10",
            "occlude.1 = head 10 10",
            "clock_offset.5 = 3",
            "motion = moonwalk",
            "calib_samples = 2",
            "whatever = 1",
            "sensor.1 = 1 2 3",
        ] {
            assert!(bad.parse::<ScenarioConfig>().is_err(), "{bad}");
        }
    }
}
