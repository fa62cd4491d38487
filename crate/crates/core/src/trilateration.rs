//! Range-based fusion of per-sensor joint estimates.
//!
//! Each sensor contributes a sphere: its position in the server frame and its
//! measured distance to the joint. The fused joint minimizes
//! `F(P) = sum_i f_i(P)^2` with `f_i(P) = |P - s_i| - r_i`, iterated as
//! `R_{k+1} = R_k - (J^T J)^{-1} J^T f` with the 3x3 normal matrix inverted
//! through its adjugate. A linear least-squares solve of the differenced
//! sphere equations seeds the iteration.

use thiserror::Error;

use crate::geometry::Point3;

pub type Mat3 = [[f64; 3]; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrilaterationError {
    #[error("estimate coincides with a sensor position; residual gradient undefined")]
    SingularPoint,
    #[error("singular normal matrix (|det| = {0:e})")]
    SingularMatrix(f64),
    #[error("need at least 3 range constraints, got {0}")]
    Underdetermined(usize),
    #[error("no constraints")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeConstraint {
    /// Sensor position in the server frame.
    pub sensor_position: Point3,
    /// Measured sensor-to-joint distance, centimeters.
    pub range: f64,
}

impl RangeConstraint {
    pub fn new(sensor_position: Point3, range: f64) -> Self {
        Self { sensor_position, range }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Stop once consecutive objective values differ by less than this (cm^2).
    pub c_threshold: f64,
    pub max_iterations: usize,
    pub singular_det_epsilon: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { c_threshold: 1e-4, max_iterations: 100, singular_det_epsilon: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Initializer {
    /// Linear least squares on the differenced sphere equations.
    LinearLs,
    /// Previous frame's fused position for the same joint.
    Previous,
    /// Centroid of the sensor positions.
    Centroid,
    /// Mean of the observed joint positions.
    ObservedMean,
}

/// Solver outcome flags.
pub mod flags {
    /// Fewer than three observations; position is their mean.
    pub const NON_TRILATERATED: u8 = 1 << 0;
    /// Iteration aborted on a singular normal matrix.
    pub const SINGULAR: u8 = 1 << 1;
    /// Step halving failed to decrease the objective.
    pub const STALLED: u8 = 1 << 2;
    /// Hit the iteration cap before the threshold test passed.
    pub const MAX_ITERATIONS: u8 = 1 << 3;
    /// Every reporting sensor was occluded; the least-crossed one was used.
    pub const OCCLUDED_FALLBACK: u8 = 1 << 4;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedJoint {
    pub position: Point3,
    /// Objective at `position`, cm^2.
    pub final_objective: f64,
    pub iterations: usize,
    pub initializer: Initializer,
    pub flags: u8,
}

/// `f_i = |p - s_i| - r_i`.
pub fn residual(p: Point3, c: &RangeConstraint) -> Result<f64, TrilaterationError> {
    let dist = p.distance(c.sensor_position);
    if dist == 0.0 {
        return Err(TrilaterationError::SingularPoint);
    }
    Ok(dist - c.range)
}

/// Sum of squared residuals. Coincidence with a sensor is not an error here:
/// the objective is well defined there even though its gradient is not.
pub fn objective(p: Point3, constraints: &[RangeConstraint]) -> f64 {
    constraints
        .iter()
        .map(|c| {
            let f = p.distance(c.sensor_position) - c.range;
            f * f
        })
        .sum()
}

/// Normal-equation terms `(J^T J, J^T f)` at `p`.
///
/// Row `i` of `J` is the unit vector from sensor `i` to `p`, written with the
/// denominator `(f_i + r_i)`, which equals `|p - s_i|`.
pub fn normal_system(
    p: Point3,
    constraints: &[RangeConstraint],
) -> Result<(Mat3, [f64; 3]), TrilaterationError> {
    let mut jtj = [[0.0; 3]; 3];
    let mut jtf = [0.0; 3];
    for c in constraints {
        let f = residual(p, c)?;
        let dist = f + c.range;
        let d = (p - c.sensor_position).to_array();
        for r in 0..3 {
            for col in 0..3 {
                jtj[r][col] += d[r] * d[col] / (dist * dist);
            }
            jtf[r] += d[r] * f / dist;
        }
    }
    Ok((jtj, jtf))
}

/// Analytic gradient `2 J^T f` of the objective.
pub fn gradient(p: Point3, constraints: &[RangeConstraint]) -> Result<[f64; 3], TrilaterationError> {
    let (_, jtf) = normal_system(p, constraints)?;
    Ok([2.0 * jtf[0], 2.0 * jtf[1], 2.0 * jtf[2]])
}

pub fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Transposed cofactor matrix.
pub fn adjugate3(m: &Mat3) -> Mat3 {
    let mut adj = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
            let (c1, c2) = ((c + 1) % 3, (c + 2) % 3);
            // cyclic index order folds the (-1)^(r+c) sign into the minor
            adj[c][r] = m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1];
        }
    }
    adj
}

/// 3x3 inverse as `adj(m) / det(m)`.
pub fn invert_3x3_adjugate(m: &Mat3, eps: f64) -> Result<Mat3, TrilaterationError> {
    let det = det3(m);
    if !(det.abs() > eps) {
        return Err(TrilaterationError::SingularMatrix(det));
    }
    let mut inv = adjugate3(m);
    for row in inv.iter_mut() {
        for v in row.iter_mut() {
            *v /= det;
        }
    }
    Ok(inv)
}

pub fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = (0..3).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    out
}

/// Relative determinant floor below which the linear system is treated as
/// rank deficient.
const LINEAR_RANK_EPS: f64 = 1e-10;

pub fn sensor_centroid(constraints: &[RangeConstraint]) -> Option<Point3> {
    Point3::mean(constraints.iter().map(|c| c.sensor_position))
}

/// Linear least-squares seed.
///
/// Subtracting the first sphere equation from the others gives
/// `(s_i - s_1) . (p - s_1) = (r_1^2 - r_i^2 + |s_i - s_1|^2) / 2`,
/// solved through its normal equations. Falls back to the sensor centroid with
/// fewer than four constraints or a rank-deficient system.
pub fn linear_init(constraints: &[RangeConstraint]) -> Result<(Point3, Initializer), TrilaterationError> {
    let centroid = sensor_centroid(constraints).ok_or(TrilaterationError::Empty)?;
    if constraints.len() < 4 {
        return Ok((centroid, Initializer::Centroid));
    }
    let s1 = constraints[0].sensor_position;
    let r1 = constraints[0].range;
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for c in &constraints[1..] {
        let a = (c.sensor_position - s1).to_array();
        let d2 = (c.sensor_position - s1).dot(c.sensor_position - s1);
        let b = 0.5 * (r1 * r1 - c.range * c.range + d2);
        for r in 0..3 {
            for col in 0..3 {
                ata[r][col] += a[r] * a[col];
            }
            atb[r] += a[r] * b;
        }
    }
    let scale = (ata[0][0] + ata[1][1] + ata[2][2]) / 3.0;
    if scale <= 0.0 || !(det3(&ata).abs() > LINEAR_RANK_EPS * scale.powi(3)) {
        return Ok((centroid, Initializer::Centroid));
    }
    let inv = invert_3x3_adjugate(&ata, 0.0)?;
    let x = mat_vec(&inv, atb);
    Ok((s1 + Point3::from_array(x), Initializer::LinearLs))
}

/// Nudges `p` off any sensor it coincides with.
fn off_sensor(p: Point3, constraints: &[RangeConstraint]) -> Point3 {
    const NUDGE: f64 = 1e-6;
    let mut p = p;
    while constraints.iter().any(|c| p.distance(c.sensor_position) == 0.0) {
        p = p + Point3::new(NUDGE, NUDGE, NUDGE);
    }
    p
}

/// Maximum number of step halvings before an iteration is abandoned.
const MAX_HALVINGS: usize = 8;

/// Damped Newton iteration on the sum of squared range residuals.
///
/// Starts from `warm_start` when given, otherwise from [`linear_init`]. Stops
/// when `|F_{k-1} - F_k| < c_threshold`. A step that raises the objective is
/// halved up to eight times; if it still does, iteration stops at the current
/// point. A singular normal matrix also stops iteration. Either way the result
/// is the best iterate reached, with the cause recorded in `flags`.
pub fn solve(
    constraints: &[RangeConstraint],
    cfg: &SolverConfig,
    warm_start: Option<Point3>,
) -> Result<FusedJoint, TrilaterationError> {
    if constraints.len() < 3 {
        return Err(TrilaterationError::Underdetermined(constraints.len()));
    }
    let (start, initializer) = match warm_start {
        Some(p) => (p, Initializer::Previous),
        None => linear_init(constraints)?,
    };
    Ok(iterate(constraints, cfg, start, initializer))
}

/// Newton iteration from an explicit starting point.
pub fn iterate(
    constraints: &[RangeConstraint],
    cfg: &SolverConfig,
    start: Point3,
    initializer: Initializer,
) -> FusedJoint {
    let mut p = off_sensor(start, constraints);
    let mut f_prev = objective(p, constraints);
    let mut iterations = 0;
    let mut flags = 0u8;
    let mut converged = false;

    while iterations < cfg.max_iterations {
        let (jtj, jtf) = match normal_system(p, constraints) {
            Ok(sys) => sys,
            Err(_) => {
                p = off_sensor(p, constraints);
                continue;
            }
        };
        let inv = match invert_3x3_adjugate(&jtj, cfg.singular_det_epsilon) {
            Ok(inv) => inv,
            Err(_) => {
                flags |= flags::SINGULAR;
                break;
            }
        };
        let step = Point3::from_array(mat_vec(&inv, jtf));

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = p - step * scale;
            let f_new = objective(candidate, constraints);
            if f_new <= f_prev {
                accepted = Some((candidate, f_new));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, f_new)) = accepted else {
            flags |= flags::STALLED;
            break;
        };

        iterations += 1;
        p = next;
        let delta = (f_prev - f_new).abs();
        f_prev = f_new;
        if delta < cfg.c_threshold {
            converged = true;
            break;
        }
    }
    if !converged && flags == 0 && iterations >= cfg.max_iterations {
        flags |= flags::MAX_ITERATIONS;
    }

    FusedJoint { position: p, final_objective: f_prev, iterations, initializer, flags }
}

/// One sensor's contribution to a fused joint, already in the server frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorObservation {
    pub sensor_position: Point3,
    pub joint_position: Point3,
}

impl SensorObservation {
    pub fn constraint(&self) -> RangeConstraint {
        RangeConstraint::new(self.sensor_position, self.joint_position.distance(self.sensor_position))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverMode {
    /// Damped Newton iteration (the default).
    #[default]
    Nonlinear,
    /// Stop at the linear least-squares seed.
    LinearOnly,
}

/// Fuses one joint from per-sensor observations.
///
/// Ranges are the distances from each sensor to its own joint estimate. The
/// iteration is warm-started from `previous` when given; otherwise from the
/// linear seed with four or more sensors, or from the observed mean with
/// three. With fewer than three observations the mean position is returned
/// and flagged [`flags::NON_TRILATERATED`].
pub fn fuse_joint(
    observations: &[SensorObservation],
    cfg: &SolverConfig,
    previous: Option<Point3>,
    mode: SolverMode,
) -> Result<FusedJoint, TrilaterationError> {
    let mean = Point3::mean(observations.iter().map(|o| o.joint_position))
        .ok_or(TrilaterationError::Empty)?;
    let constraints: Vec<RangeConstraint> = observations.iter().map(SensorObservation::constraint).collect();

    if observations.len() < 3 {
        return Ok(FusedJoint {
            position: mean,
            final_objective: objective(mean, &constraints),
            iterations: 0,
            initializer: Initializer::ObservedMean,
            flags: flags::NON_TRILATERATED,
        });
    }

    if mode == SolverMode::LinearOnly {
        let (p, init) = linear_init(&constraints)?;
        let (p, init) = if init == Initializer::Centroid { (mean, Initializer::ObservedMean) } else { (p, init) };
        return Ok(FusedJoint {
            position: p,
            final_objective: objective(p, &constraints),
            iterations: 0,
            initializer: init,
            flags: 0,
        });
    }

    let (start, init) = match previous {
        Some(p) => (p, Initializer::Previous),
        None => {
            let (p, init) = linear_init(&constraints)?;
            if init == Initializer::Centroid {
                // the sensor centroid sits in the sensors' own plane where the
                // normal matrix is rank deficient; the observations are closer
                (mean, Initializer::ObservedMean)
            } else {
                (p, init)
            }
        }
    };
    Ok(iterate(&constraints, cfg, start, init))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corner_layout(target: Point3) -> Vec<RangeConstraint> {
        [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(4.0, 0.0, 0.0),
            Point3::new(0.0, 4.0, 0.0),
            Point3::new(0.0, 0.0, 4.0),
        ]
        .iter()
        .map(|&s| RangeConstraint::new(s, s.distance(target)))
        .collect()
    }

    #[test]
    fn residual_examples() {
        let s = RangeConstraint::new(Point3::ORIGIN, 5.0);
        assert_eq!(residual(Point3::new(3.0, 4.0, 0.0), &s).unwrap(), 0.0);
        let s4 = RangeConstraint::new(Point3::ORIGIN, 4.0);
        assert_eq!(residual(Point3::new(3.0, 4.0, 0.0), &s4).unwrap(), 1.0);
        assert_eq!(residual(Point3::ORIGIN, &s4), Err(TrilaterationError::SingularPoint));
    }

    #[test]
    fn objective_examples() {
        let truth = Point3::new(1.0, 1.0, 1.0);
        let mut cs = corner_layout(truth);
        assert_abs_diff_eq!(objective(truth, &cs), 0.0, epsilon = 1e-24);
        cs[1].range += 1.0;
        assert_abs_diff_eq!(objective(truth, &cs), 1.0, epsilon = 1e-12);
        cs[2].range -= 2.0;
        assert_abs_diff_eq!(objective(truth, &cs), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn normal_system_examples() {
        let p = Point3::new(1.0, 0.0, 0.0);
        let (jtj, jtf) = normal_system(p, &[RangeConstraint::new(Point3::ORIGIN, 1.0)]).unwrap();
        assert_eq!(jtj, [[1.0, 0.0, 0.0], [0.0; 3], [0.0; 3]]);
        assert_eq!(jtf, [0.0; 3]);
        let (_, jtf) = normal_system(p, &[RangeConstraint::new(Point3::ORIGIN, 0.5)]).unwrap();
        assert_eq!(jtf, [0.5, 0.0, 0.0]);
    }

    #[test]
    fn tetrahedral_layout_gives_isotropic_normal_matrix() {
        let verts = [
            Point3::new(1.0, 1.0, 1.0),
            Point3::new(1.0, -1.0, -1.0),
            Point3::new(-1.0, 1.0, -1.0),
            Point3::new(-1.0, -1.0, 1.0),
        ];
        let cs: Vec<_> = verts.iter().map(|&v| RangeConstraint::new(v * 100.0, 150.0)).collect();
        let (jtj, _) = normal_system(Point3::ORIGIN, &cs).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let expect = if r == c { 4.0 / 3.0 } else { 0.0 };
                assert_abs_diff_eq!(jtj[r][c], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn adjugate_inverse_examples() {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(invert_3x3_adjugate(&id, 1e-12).unwrap(), id);
        let d = invert_3x3_adjugate(&[[2.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 5.0]], 1e-12).unwrap();
        assert_eq!(d, [[0.5, 0.0, 0.0], [0.0, 0.25, 0.0], [0.0, 0.0, 0.2]]);
        let m = [[1.0, 2.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 3.0]];
        let inv = invert_3x3_adjugate(&m, 1e-12).unwrap();
        let expect = [[1.0, -2.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0 / 3.0]];
        for r in 0..3 {
            for c in 0..3 {
                assert_abs_diff_eq!(inv[r][c], expect[r][c], epsilon = 1e-15);
            }
        }
        let singular = [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]];
        assert!(matches!(
            invert_3x3_adjugate(&singular, 1e-12),
            Err(TrilaterationError::SingularMatrix(_))
        ));
    }

    #[test]
    fn adjugate_inverse_is_inverse_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let mut m = [[0.0; 3]; 3];
            for row in m.iter_mut() {
                for v in row.iter_mut() {
                    *v = rng.gen_range(-10.0..10.0);
                }
            }
            if det3(&m).abs() < 1e-3 {
                continue;
            }
            let prod = mat_mul(&m, &invert_3x3_adjugate(&m, 1e-12).unwrap());
            for r in 0..3 {
                for c in 0..3 {
                    let expect = if r == c { 1.0 } else { 0.0 };
                    assert!((prod[r][c] - expect).abs() < 1e-9, "{prod:?}");
                }
            }
        }
    }

    #[test]
    fn linear_init_examples() {
        let truth = Point3::new(1.0, 1.0, 1.0);
        let (p, init) = linear_init(&corner_layout(truth)).unwrap();
        assert_eq!(init, Initializer::LinearLs);
        assert!(p.distance(truth) < 1e-9);

        let collinear: Vec<_> = (0..5)
            .map(|i| RangeConstraint::new(Point3::new(i as f64 * 10.0, 0.0, 0.0), 20.0))
            .collect();
        assert_eq!(linear_init(&collinear).unwrap().1, Initializer::Centroid);

        let three = &corner_layout(truth)[..3];
        let (p, init) = linear_init(three).unwrap();
        assert_eq!(init, Initializer::Centroid);
        assert!(p.distance(Point3::new(4.0 / 3.0, 4.0 / 3.0, 0.0)) < 1e-12);
    }

    #[test]
    fn solve_exact_instance() {
        let truth = Point3::new(1.0, 1.0, 1.0);
        let r = solve(&corner_layout(truth), &SolverConfig::default(), None).unwrap();
        assert!(r.position.distance(truth) < 1e-4);
        assert!(r.final_objective < 1e-8);
    }

    #[test]
    fn warm_start_at_solution_returns_immediately() {
        let truth = Point3::new(1.0, 1.0, 1.0);
        let r = solve(&corner_layout(truth), &SolverConfig::default(), Some(truth)).unwrap();
        assert!(r.iterations <= 2);
        assert_eq!(r.initializer, Initializer::Previous);
        assert!(r.position.distance(truth) < 1e-12);
    }

    #[test]
    fn solve_requires_three_constraints() {
        let cs = &corner_layout(Point3::ORIGIN)[..2];
        assert_eq!(solve(cs, &SolverConfig::default(), None), Err(TrilaterationError::Underdetermined(2)));
    }

    #[test]
    fn solve_never_worsens_the_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = SolverConfig::default();
        for _ in 0..200 {
            let truth = Point3::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
            let cs: Vec<_> = tetra(260.0)
                .into_iter()
                .map(|s| RangeConstraint::new(s, s.distance(truth) + rng.gen_range(-30.0..30.0)))
                .collect();
            let (start, _) = linear_init(&cs).unwrap();
            let r = solve(&cs, &cfg, None).unwrap();
            assert!(r.final_objective <= objective(start, &cs) + 1e-9);
        }
    }

    #[test]
    fn accepted_steps_never_raise_the_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let truth = Point3::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
            let cs: Vec<_> = tetra(260.0)
                .into_iter()
                .map(|s| RangeConstraint::new(s, s.distance(truth) + rng.gen_range(-30.0..30.0)))
                .collect();
            let cfg = SolverConfig { c_threshold: 1e-6, ..Default::default() };
            // replay the run one iteration at a time
            let mut prev = objective(linear_init(&cs).unwrap().0, &cs);
            for k in 1..=10 {
                let r = iterate(&cs, &SolverConfig { max_iterations: k, ..cfg }, linear_init(&cs).unwrap().0, Initializer::LinearLs);
                assert!(r.final_objective <= prev + cfg.c_threshold);
                prev = r.final_objective;
            }
        }
    }

    fn tetra(scale: f64) -> Vec<Point3> {
        let k = scale / 3f64.sqrt();
        vec![
            Point3::new(k, k, k),
            Point3::new(k, -k, -k),
            Point3::new(-k, k, -k),
            Point3::new(-k, -k, k),
        ]
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let cs: Vec<_> = (0..rng.gen_range(3..7))
                .map(|_| {
                    RangeConstraint::new(
                        Point3::new(rng.gen_range(-300.0..300.0), rng.gen_range(-300.0..300.0), rng.gen_range(-300.0..300.0)),
                        rng.gen_range(50.0..400.0),
                    )
                })
                .collect();
            let p = Point3::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
            let g = gradient(p, &cs).unwrap();
            let h = 1e-4;
            let fd = [
                (objective(p + Point3::new(h, 0.0, 0.0), &cs) - objective(p - Point3::new(h, 0.0, 0.0), &cs)) / (2.0 * h),
                (objective(p + Point3::new(0.0, h, 0.0), &cs) - objective(p - Point3::new(0.0, h, 0.0), &cs)) / (2.0 * h),
                (objective(p + Point3::new(0.0, 0.0, h), &cs) - objective(p - Point3::new(0.0, 0.0, h), &cs)) / (2.0 * h),
            ];
            let gnorm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            let err = ((g[0] - fd[0]).powi(2) + (g[1] - fd[1]).powi(2) + (g[2] - fd[2]).powi(2)).sqrt();
            assert!(err / gnorm.max(1e-12) < 1e-5, "{g:?} vs {fd:?}");
        }
    }

    #[test]
    fn fuse_consistent_observations() {
        let truth = Point3::new(1.0, 1.0, 1.0);
        let obs: Vec<_> = tetra(260.0)
            .into_iter()
            .map(|s| SensorObservation { sensor_position: s, joint_position: truth })
            .collect();
        let r = fuse_joint(&obs, &SolverConfig::default(), None, SolverMode::Nonlinear).unwrap();
        assert!(r.position.distance(truth) < 1e-4);
        assert_eq!(r.flags, 0);
    }

    #[test]
    fn fuse_with_two_sensors_falls_back_to_mean() {
        let obs = [
            SensorObservation { sensor_position: Point3::ORIGIN, joint_position: Point3::new(100.0, 0.0, 0.0) },
            SensorObservation { sensor_position: Point3::new(0.0, 300.0, 0.0), joint_position: Point3::new(102.0, 2.0, 0.0) },
        ];
        let r = fuse_joint(&obs, &SolverConfig::default(), None, SolverMode::Nonlinear).unwrap();
        assert_eq!(r.position, Point3::new(101.0, 1.0, 0.0));
        assert_ne!(r.flags & flags::NON_TRILATERATED, 0);
    }

    #[test]
    fn fuse_three_sensors_converges_from_observations() {
        let truth = Point3::new(10.0, -20.0, 5.0);
        let obs: Vec<_> = tetra(260.0)[..3]
            .iter()
            .map(|&s| SensorObservation { sensor_position: s, joint_position: truth })
            .collect();
        let r = fuse_joint(&obs, &SolverConfig::default(), None, SolverMode::Nonlinear).unwrap();
        assert_eq!(r.initializer, Initializer::ObservedMean);
        assert!(r.position.distance(truth) < 1e-4);
    }

    #[test]
    fn fused_error_beats_single_sensor_error() {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let noise = Normal::new(0.0, 3.0).unwrap();
        let sensors = tetra(260.0);
        let (mut fused_err, mut single_err, mut singles) = (0.0, 0.0, 0usize);
        for _ in 0..1000 {
            let truth = Point3::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
            let obs: Vec<_> = sensors
                .iter()
                .map(|&s| {
                    let j = truth + Point3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
                    SensorObservation { sensor_position: s, joint_position: j }
                })
                .collect();
            for o in &obs {
                single_err += o.joint_position.distance(truth);
                singles += 1;
            }
            let r = fuse_joint(&obs, &SolverConfig::default(), None, SolverMode::Nonlinear).unwrap();
            fused_err += r.position.distance(truth);
        }
        assert!(fused_err / 1000.0 < single_err / singles as f64);
    }
}
