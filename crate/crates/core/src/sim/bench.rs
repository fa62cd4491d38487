//! Benchmark suites: solver accuracy against threshold, clock-sync error
//! statistics, and the segment-crossing oracle comparison.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::Point3;
use crate::occlusion::{segments_cross, Segment2};
use crate::pipeline::timing_bin;
use crate::sim::network::{DelayModel, Direction};
use crate::timesync::{SyncExchange, SyncState, SYNC_HISTORY};
use crate::trilateration::{iterate, linear_init, RangeConstraint, SolverConfig};

/// Stopping thresholds, loosest first.
pub const BENCH_THRESHOLDS: [f64; 4] = [1.0, 1e-2, 1e-4, 1e-6];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRange {
    pub label: &'static str,
    pub lo: f64,
    pub hi: f64,
}

/// Range-error intervals, largest first.
pub const BENCH_ERROR_RANGES: [ErrorRange; 3] = [
    ErrorRange { label: "(15,30]", lo: 15.0, hi: 30.0 },
    ErrorRange { label: "[5,15]", lo: 5.0, hi: 15.0 },
    ErrorRange { label: "[0,5)", lo: 0.0, hi: 5.0 },
];

/// Sensor corners of the benchmark instance, cm.
pub const BENCH_SENSORS: [Point3; 4] = [
    Point3::new(0.0, 0.0, 0.0),
    Point3::new(4.0, 0.0, 0.0),
    Point3::new(0.0, 4.0, 0.0),
    Point3::new(0.0, 0.0, 4.0),
];
/// True joint position of the benchmark instance, cm.
pub const BENCH_TRUTH: Point3 = Point3::new(1.0, 1.0, 1.0);

#[derive(Debug, Clone, PartialEq)]
pub struct TrilatBenchRow {
    pub error_range: &'static str,
    pub threshold: f64,
    pub mean_error_cm: f64,
    pub mean_time_us: f64,
    pub iters_mean: f64,
}

/// Mean propagation error, solve time and iteration count per (error range,
/// threshold) cell.
///
/// Each trial perturbs the four true ranges from [`BENCH_SENSORS`] to
/// [`BENCH_TRUTH`] by errors whose magnitude is uniform in the range interval
/// and whose sign is random.
/// All thresholds of one error range see the same trials.
pub fn run_trilat_benchmark(thresholds: &[f64], ranges: &[ErrorRange], trials: usize, seed: u64) -> Vec<TrilatBenchRow> {
    let mut rows = Vec::with_capacity(thresholds.len() * ranges.len());
    for (ri, range) in ranges.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((ri as u64 + 1) << 32));
        let instances: Vec<(Point3, Vec<RangeConstraint>)> = (0..trials)
            .map(|_| {
                let truth = BENCH_TRUTH;
                let cs = BENCH_SENSORS
                    .iter()
                    .map(|&s| {
                        let mag = rng.gen_range(range.lo..range.hi);
                        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                        RangeConstraint::new(s, s.distance(truth) + sign * mag)
                    })
                    .collect();
                (truth, cs)
            })
            .collect();

        for &threshold in thresholds {
            let cfg = SolverConfig { c_threshold: threshold, ..SolverConfig::default() };
            let (mut err, mut iters, mut secs) = (0.0, 0usize, 0.0);
            for (truth, cs) in &instances {
                let started = Instant::now();
                let (start, init) = linear_init(cs).expect("four constraints");
                let fused = iterate(cs, &cfg, start, init);
                secs += started.elapsed().as_secs_f64();
                err += fused.position.distance(*truth);
                iters += fused.iterations;
            }
            let n = trials.max(1) as f64;
            rows.push(TrilatBenchRow {
                error_range: range.label,
                threshold,
                mean_error_cm: err / n,
                mean_time_us: secs * 1e6 / n,
                iters_mean: iters as f64 / n,
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncSample {
    pub exchange_idx: usize,
    pub d_ms: f64,
    pub e_ms: f64,
    /// Smoothed clock-error estimate minus the true clock error.
    pub e_error_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncBenchResult {
    pub samples: Vec<SyncSample>,
    /// Counts of steady-state `|e_error|` per latency bin.
    pub bins: [u64; 6],
    pub steady_state: usize,
    pub under_2ms: usize,
}

impl SyncBenchResult {
    pub fn fraction_under_2ms(&self) -> f64 {
        if self.steady_state == 0 {
            return 1.0;
        }
        self.under_2ms as f64 / self.steady_state as f64
    }
}

/// Runs `exchanges` ping/pong rounds against one client whose clock reads
/// `clock_offset_ms` ahead of the server's. Clocks are read as whole
/// milliseconds and the client answers immediately. Estimates count as
/// steady state once the median history is full.
pub fn run_sync_benchmark(
    exchanges: usize,
    delay: &DelayModel,
    clock_offset_ms: f64,
    interval_ms: f64,
    seed: u64,
) -> SyncBenchResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = SyncState::new(1);
    let truth_e = -clock_offset_ms;
    let mut out = SyncBenchResult { samples: Vec::with_capacity(exchanges), bins: [0; 6], steady_state: 0, under_2ms: 0 };
    for k in 0..exchanges {
        let sent = 1000.0 + k as f64 * interval_ms;
        let at_client = sent + delay.sample(Direction::Downstream, &mut rng);
        let back = at_client + delay.sample(Direction::Upstream, &mut rng);
        let t2 = (at_client + clock_offset_ms).floor() as i64;
        let x = SyncExchange::new(sent.floor() as i64, t2, t2, back.floor() as i64);
        if state.update(&x).is_err() {
            continue;
        }
        let err = state.clock_error_e - truth_e;
        if state.history_len() == SYNC_HISTORY {
            out.steady_state += 1;
            out.bins[timing_bin(err.abs())] += 1;
            if err.abs() < 2.0 {
                out.under_2ms += 1;
            }
        }
        out.samples.push(SyncSample { exchange_idx: k, d_ms: state.delay_d, e_ms: state.clock_error_e, e_error_ms: err });
    }
    out
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    (p.0 - (a.0 + t * dx)).hypot(p.1 - (a.1 + t * dy))
}

/// Smallest distance from any endpoint of one segment to the other segment.
/// For segments that do not intersect this is their separation.
pub fn endpoint_clearance(a: &Segment2, b: &Segment2) -> f64 {
    [
        point_segment_distance(a.p1, b.p1, b.p2),
        point_segment_distance(a.p2, b.p1, b.p2),
        point_segment_distance(b.p1, a.p1, a.p2),
        point_segment_distance(b.p2, a.p1, a.p2),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

/// Brute-force crossing test: both segments are sampled at `samples + 1`
/// evenly spaced points and declared crossing when two samples lie within
/// the larger sampling step of each other.
///
/// Exact whenever [`endpoint_clearance`] exceeds that step: crossing
/// segments always have samples within half a step of the intersection on
/// each, and separated segments never come closer than their clearance.
pub fn brute_force_crossing(a: &Segment2, b: &Segment2, samples: usize) -> bool {
    let pts = |s: &Segment2| -> Vec<(f64, f64)> {
        (0..=samples)
            .map(|i| {
                let t = i as f64 / samples as f64;
                (s.p1.0 + t * (s.p2.0 - s.p1.0), s.p1.1 + t * (s.p2.1 - s.p1.1))
            })
            .collect()
    };
    let len = |s: &Segment2| (s.p2.0 - s.p1.0).hypot(s.p2.1 - s.p1.1);
    let step = len(a).max(len(b)) / samples as f64;
    let step2 = step * step;
    let (pa, pb) = (pts(a), pts(b));
    pa.iter().any(|p| pb.iter().any(|q| (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2) <= step2))
}

/// Sampling density of the oracle.
pub const ORACLE_SAMPLES: usize = 300;
/// Pairs closer than this at an endpoint are regenerated as degenerate.
pub const ORACLE_MIN_CLEARANCE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OracleResult {
    pub pairs: usize,
    pub crossing_pairs: usize,
    pub disagreements: usize,
    pub regenerated_degenerate: usize,
}

/// Compares [`segments_cross`] with [`brute_force_crossing`] on `pairs`
/// random segment pairs in a 100 x 100 square. Pairs with an endpoint within
/// [`ORACLE_MIN_CLEARANCE`] of the other segment are redrawn.
pub fn run_occlusion_oracle(pairs: usize, seed: u64) -> OracleResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = OracleResult::default();
    let pt = |rng: &mut ChaCha8Rng| (rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0));
    while out.pairs < pairs {
        let a = Segment2::flat(pt(&mut rng), pt(&mut rng));
        let b = Segment2::flat(pt(&mut rng), pt(&mut rng));
        if endpoint_clearance(&a, &b) < ORACLE_MIN_CLEARANCE {
            out.regenerated_degenerate += 1;
            continue;
        }
        out.pairs += 1;
        let fast = segments_cross(&a, &b);
        if fast {
            out.crossing_pairs += 1;
        }
        if fast != brute_force_crossing(&a, &b, ORACLE_SAMPLES) {
            out.disagreements += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trilat_bench_shape_and_determinism() {
        let a = run_trilat_benchmark(&BENCH_THRESHOLDS, &BENCH_ERROR_RANGES, 50, 4);
        let b = run_trilat_benchmark(&BENCH_THRESHOLDS, &BENCH_ERROR_RANGES, 50, 4);
        assert_eq!(a.len(), 12);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((x.error_range, x.threshold, x.mean_error_cm, x.iters_mean), (y.error_range, y.threshold, y.mean_error_cm, y.iters_mean));
        }
    }

    #[test]
    fn zero_noise_benchmark_is_exact() {
        let rows = run_trilat_benchmark(&[1e-6], &[ErrorRange { label: "0", lo: 0.0, hi: 1e-12 }], 100, 1);
        assert!(rows[0].mean_error_cm < 1e-4);
    }

    #[test]
    fn sync_benchmark_exact_without_jitter() {
        let delay = DelayModel { base_ms: 5.0, ..Default::default() };
        let r = run_sync_benchmark(50, &delay, 1234.0, 100.0, 0);
        assert!(r.samples.iter().all(|s| s.e_error_ms == 0.0 && s.d_ms == 5.0));
        assert_eq!(r.steady_state, 46);
    }

    #[test]
    fn clearance_and_oracle_basics() {
        let a = Segment2::flat((0.0, 0.0), (10.0, 0.0));
        let b = Segment2::flat((5.0, 3.0), (5.0, 8.0));
        assert_eq!(endpoint_clearance(&a, &b), 3.0);
        assert!(!brute_force_crossing(&a, &b, 300));
        let c = Segment2::flat((5.0, -3.0), (5.0, 8.0));
        assert!(brute_force_crossing(&a, &c, 300));
        let r = run_occlusion_oracle(200, 2);
        assert_eq!((r.pairs, r.disagreements), (200, 0));
        assert!(r.crossing_pairs > 0);
    }
}
