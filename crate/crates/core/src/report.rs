//! CSV renderings of run and benchmark results.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::calibration::write_calibration_file;
use crate::pipeline::{PipelineStats, TickOutput, TIMING_BIN_LABELS};
use crate::sim::bench::{OracleResult, SyncBenchResult, TrilatBenchRow};
use crate::sim::run::{ErrorSummary, SimOutput, SyncRow, TruthRow};

pub fn fused_csv(ticks: &[TickOutput]) -> String {
    let mut s = String::from("tick,server_time_ms,joint_id,x,y,z,objective,sensor_count,flags\n");
    for t in ticks {
        for j in &t.joints {
            let p = j.fused.position;
            let _ = writeln!(
                s,
                "{},{:.3},{},{:.4},{:.4},{:.4},{:.6},{},{}",
                t.tick, t.server_time_ms, j.joint, p.x, p.y, p.z, j.fused.final_objective, j.sensor_count, j.fused.flags
            );
        }
    }
    s
}

pub fn truth_csv(rows: &[TruthRow]) -> String {
    let mut s = String::from("tick,reference_time_ms,joint_id,x,y,z\n");
    for r in rows {
        for (j, p) in r.joints.iter().enumerate() {
            let _ = writeln!(s, "{},{:.3},{},{:.4},{:.4},{:.4}", r.tick, r.reference_time_ms, j, p.x, p.y, p.z);
        }
    }
    s
}

pub fn errors_csv(e: &ErrorSummary) -> String {
    let mut s = String::from("joint_id,joint_name,mae_cm,samples\n");
    for j in &e.per_joint {
        let _ = writeln!(s, "{},{},{:.6},{}", j.joint, j.name, j.mae_cm, j.samples);
    }
    let _ = writeln!(s, "all,all,{:.6},{}", e.overall_mae_cm, e.samples);
    s
}

/// Latency histogram and frame accounting. Latencies include measured
/// processing time, so this file varies between otherwise identical runs.
pub fn timing_csv(stats: &PipelineStats) -> String {
    let mut s = String::from("bin,count\n");
    for (label, n) in TIMING_BIN_LABELS.iter().zip(stats.timing_bins) {
        let _ = writeln!(s, "{label},{n}");
    }
    let f = stats.frames;
    for (k, v) in [
        ("ticks", stats.ticks),
        ("empty_ticks", stats.empty_ticks),
        ("fused_ticks", stats.fused_ticks()),
        ("within_window", stats.within_window),
        ("frames_received", f.received),
        ("frames_admitted", f.admitted),
        ("frames_stale", f.stale),
        ("frames_superfluous", f.superfluous),
    ] {
        let _ = writeln!(s, "{k},{v}");
    }
    s
}

pub fn sync_csv(rows: &[SyncRow]) -> String {
    let mut s = String::from("sensor_id,exchange_idx,d_ms,e_ms\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.sensor_id, r.exchange_idx, r.d_ms, r.e_ms);
    }
    s
}

pub fn trilat_bench_csv(rows: &[TrilatBenchRow]) -> String {
    let mut s = String::from("error_range,threshold,mean_error_cm,mean_time_us,iters_mean\n");
    for r in rows {
        let _ = writeln!(
            s,
            "\"{}\",{:e},{:.6},{:.4},{:.4}",
            r.error_range, r.threshold, r.mean_error_cm, r.mean_time_us, r.iters_mean
        );
    }
    s
}

pub fn sync_bench_csv(r: &SyncBenchResult) -> String {
    let mut s = String::from("bin,count\n");
    for (label, n) in TIMING_BIN_LABELS.iter().zip(r.bins) {
        let _ = writeln!(s, "{label},{n}");
    }
    let _ = writeln!(s, "steady_state,{}", r.steady_state);
    let _ = writeln!(s, "under_2ms,{}", r.under_2ms);
    let _ = writeln!(s, "fraction_under_2ms,{:.6}", r.fraction_under_2ms());
    s
}

pub fn oracle_csv(r: &OracleResult) -> String {
    format!(
        "pairs,crossing_pairs,disagreements,regenerated_degenerate\n{},{},{},{}\n",
        r.pairs, r.crossing_pairs, r.disagreements, r.regenerated_degenerate
    )
}

/// Writes every artifact of a run into `dir`, creating it if needed.
pub fn write_sim_outputs(dir: &Path, out: &SimOutput) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("fused.csv"), fused_csv(&out.ticks))?;
    std::fs::write(dir.join("truth.csv"), truth_csv(&out.truth))?;
    std::fs::write(dir.join("errors.csv"), errors_csv(&out.errors))?;
    std::fs::write(dir.join("timing.csv"), timing_csv(&out.stats))?;
    std::fs::write(dir.join("sync.csv"), sync_csv(&out.sync))?;
    std::fs::write(dir.join("calibration.txt"), write_calibration_file(&out.calibration))?;
    Ok(())
}
