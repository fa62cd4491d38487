use mctl_core::report::{fused_csv, sync_csv, truth_csv};
use mctl_core::sim::network::Direction;
use mctl_core::sim::{run_scenario, DelayModel, NoiseModel, ScenarioConfig};
use mctl_core::{Point3, SensorPose};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

#[test]
fn gaussian_observation_noise_has_the_configured_spread() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let noise = NoiseModel::Gaussian { sigma: 3.0 };
    let p = Point3::new(10.0, -20.0, 250.0);
    let errs: Vec<Point3> = (0..10_000).map(|_| noise.apply(p, &mut rng) - p).collect();
    for axis in 0..3 {
        let xs: Vec<f64> = errs.iter().map(|e| e.to_array()[axis]).collect();
        let (m, s) = mean_std(&xs);
        assert!(m.abs() < 0.1, "axis {axis} mean {m}");
        assert!((s - 3.0).abs() < 0.3, "axis {axis} std {s}");
    }
}

#[test]
fn link_jitter_stays_in_its_band_and_is_flat() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = DelayModel { base_ms: 5.0, jitter_ms: 2.0, ..DelayModel::default() };
    let mut bins = [0usize; 4];
    for _ in 0..10_000 {
        let x = d.sample(Direction::Upstream, &mut rng);
        assert!((3.0..=7.0).contains(&x), "{x}");
        bins[((x - 3.0).floor() as usize).min(3)] += 1;
    }
    for b in bins {
        assert!((2200..=2800).contains(&b), "{bins:?}");
    }
}

#[test]
fn thousand_random_poses_invert_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut coord = || rng.gen_range(-400.0..400.0);
    for _ in 0..1000 {
        let pose = SensorPose::new(Point3::new(coord(), coord(), coord()), coord() / 100.0);
        let p = Point3::new(coord(), coord(), coord());
        assert!(pose.to_client(pose.to_server(p)).distance(p) < 1e-9);
        assert!(pose.to_server(pose.to_client(p)).distance(p) < 1e-9);
    }
}

#[test]
fn scenario_runs_are_reproducible_per_seed() {
    let text = "ticks = 120\nmotion = gait\nnoise = gaussian:2\ndelay_jitter_ms = 2\nclock_offset.2 = 500\n";
    let sc: ScenarioConfig = format!("seed = 8\n{text}").parse().unwrap();
    let a = run_scenario(&sc).unwrap();
    let b = run_scenario(&sc).unwrap();
    assert_eq!(fused_csv(&a.ticks), fused_csv(&b.ticks));
    assert_eq!(truth_csv(&a.truth), truth_csv(&b.truth));
    assert_eq!(sync_csv(&a.sync), sync_csv(&b.sync));
    assert_eq!(a.errors, b.errors);

    let other: ScenarioConfig = format!("seed = 9\n{text}").parse().unwrap();
    assert_ne!(fused_csv(&run_scenario(&other).unwrap().ticks), fused_csv(&a.ticks));
}
