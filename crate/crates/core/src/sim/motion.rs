//! Piecewise-linear keyframed joint trajectories in the server frame.

use std::str::FromStr;

use crate::geometry::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    Static,
    ArmSwing,
    Gait,
}

impl FromStr for MotionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(MotionKind::Static),
            "armswing" => Ok(MotionKind::ArmSwing),
            "gait" => Ok(MotionKind::Gait),
            other => Err(format!("unknown motion `{other}` (static, armswing, gait)")),
        }
    }
}

/// Standing pose of the default 15-joint body, centimeters. The body is
/// upright along `y`, centered on the server origin and facing `-z`.
pub fn standing_pose() -> Vec<Point3> {
    [
        (0.0, 85.0, 0.0),    // head
        (0.0, 65.0, 0.0),    // neck
        (0.0, 20.0, 0.0),    // spine
        (-20.0, 60.0, 0.0),  // left shoulder
        (-26.0, 32.0, -4.0), // left elbow
        (-29.0, 6.0, -10.0), // left wrist
        (20.0, 60.0, 0.0),
        (26.0, 32.0, -4.0),
        (29.0, 6.0, -10.0),
        (-12.0, -5.0, 0.0), // left hip
        (-13.0, -45.0, -3.0),
        (-14.0, -80.0, 0.0),
        (12.0, -5.0, 0.0),
        (13.0, -45.0, -3.0),
        (14.0, -80.0, 0.0),
    ]
    .iter()
    .map(|&(x, y, z)| Point3::new(x, y, z))
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionScript {
    /// `(time_ms, pose)`, strictly increasing in time.
    keyframes: Vec<(f64, Vec<Point3>)>,
    /// Loop period; the script repeats when set.
    period_ms: Option<f64>,
}

impl MotionScript {
    pub fn new(keyframes: Vec<(f64, Vec<Point3>)>, period_ms: Option<f64>) -> Result<Self, String> {
        if keyframes.is_empty() {
            return Err("motion script needs at least one keyframe".into());
        }
        let n = keyframes[0].1.len();
        if keyframes.iter().any(|(_, p)| p.len() != n) {
            return Err("keyframes disagree on joint count".into());
        }
        if keyframes.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err("keyframe times must increase".into());
        }
        if period_ms.is_some_and(|p| p <= keyframes.last().map(|k| k.0).unwrap_or(0.0)) {
            return Err("loop period must exceed the last keyframe time".into());
        }
        Ok(Self { keyframes, period_ms })
    }

    pub fn builtin(kind: MotionKind) -> Self {
        let base = standing_pose();
        let shifted = |moves: &[(usize, Point3)]| {
            let mut p = base.clone();
            for &(j, d) in moves {
                p[j] = p[j] + d;
            }
            p
        };
        let (keys, period) = match kind {
            MotionKind::Static => (vec![(0.0, base.clone())], None),
            MotionKind::ArmSwing => {
                let forward = shifted(&[
                    (4, Point3::new(0.0, 4.0, -16.0)),
                    (5, Point3::new(0.0, 12.0, -34.0)),
                    (7, Point3::new(0.0, 4.0, 14.0)),
                    (8, Point3::new(0.0, 10.0, 28.0)),
                ]);
                let back = shifted(&[
                    (4, Point3::new(0.0, 4.0, 14.0)),
                    (5, Point3::new(0.0, 10.0, 28.0)),
                    (7, Point3::new(0.0, 4.0, -16.0)),
                    (8, Point3::new(0.0, 12.0, -34.0)),
                ]);
                (vec![(0.0, base.clone()), (300.0, forward), (600.0, base.clone()), (900.0, back)], Some(1200.0))
            }
            MotionKind::Gait => {
                let stride = |s: f64| {
                    shifted(&[
                        (10, Point3::new(0.0, 3.0, -14.0 * s)),
                        (11, Point3::new(0.0, 4.0, -22.0 * s)),
                        (13, Point3::new(0.0, 3.0, 14.0 * s)),
                        (14, Point3::new(0.0, 4.0, 22.0 * s)),
                        (5, Point3::new(0.0, 2.0, 16.0 * s)),
                        (8, Point3::new(0.0, 2.0, -16.0 * s)),
                        (0, Point3::new(0.0, -2.0, 0.0)),
                        (1, Point3::new(0.0, -2.0, 0.0)),
                    ])
                };
                (vec![(0.0, base.clone()), (250.0, stride(1.0)), (500.0, base.clone()), (750.0, stride(-1.0))], Some(1000.0))
            }
        };
        Self::new(keys, period).expect("built-in scripts are well formed")
    }

    pub fn joint_count(&self) -> usize {
        self.keyframes[0].1.len()
    }

    /// Joint positions at `t_ms`, linearly interpolated between keyframes and
    /// held constant outside the script unless it loops.
    pub fn pose_at(&self, t_ms: f64) -> Vec<Point3> {
        let t = match self.period_ms {
            Some(p) => t_ms.rem_euclid(p),
            None => t_ms,
        };
        let k = &self.keyframes;
        let next = k.partition_point(|(kt, _)| *kt <= t);
        let (a, b) = match (next, self.period_ms) {
            (0, _) => return k[0].1.clone(),
            (n, _) if n < k.len() => (&k[n - 1], (k[n].0, &k[n].1)),
            (_, Some(p)) => (&k[k.len() - 1], (p, &k[0].1)),
            (_, None) => return k[k.len() - 1].1.clone(),
        };
        let s = (t - a.0) / (b.0 - a.0);
        a.1.iter().zip(b.1).map(|(&p, &q)| p + (q - p) * s).collect()
    }
}
