use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use mctl_core::calibration::{parse_calibration_file, write_calibration_file};
use mctl_core::config::ServerConfig;
use mctl_core::report;
use mctl_core::sim::bench::{run_occlusion_oracle, run_sync_benchmark, run_trilat_benchmark, BENCH_ERROR_RANGES, BENCH_THRESHOLDS};
use mctl_core::sim::{calibrate_sensor, run_scenario, DelayModel, ScenarioConfig};
use mctl_core::trilateration::SolverMode;
use mctl_core::SensorId;
use mctl_net::{run_sim_client, Server, SimClientConfig};

/// Bad flags, unreadable or invalid configuration. Exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl fmt::Display) -> anyhow::Error {
    UsageError(msg.to_string()).into()
}

#[derive(Parser, Debug)]
#[command(name = "mctl", version, about = "Multi-sensor skeleton fusion server, simulator and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the fusion server until Ctrl-C (or --duration), then write CSVs.
    Serve(ServeArgs),
    /// Connect one simulated depth sensor to a running server.
    SimClient(SimClientArgs),
    /// Run a whole scenario in-process and write its CSVs.
    SimRun(SimRunArgs),
    /// Calibrate every scenario sensor from rendered wand frames.
    Calibrate(CalibrateArgs),
    /// Accuracy and cost of the solver per noise range and stopping threshold.
    BenchTrilat(BenchTrilatArgs),
    /// Clock-error statistics of simulated ping exchanges.
    BenchSync(BenchSyncArgs),
    /// Segment-crossing test against a brute-force oracle.
    BenchOcclusion(BenchOcclusionArgs),
}

#[derive(clap::Args, Debug)]
struct ServeArgs {
    /// Address to listen on; overrides the config file.
    #[arg(long)]
    listen: Option<String>,
    /// Server frame rate; overrides the config file.
    #[arg(long)]
    fps: Option<f64>,
    /// `key = value` server configuration.
    #[arg(long, env = "MCTL_CONFIG")]
    config: Option<PathBuf>,
    /// Known sensor poses; those sensors skip the wand phase.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Directory for fused.csv, summary.csv, sync.csv and calibration.txt.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Stop after this many seconds instead of waiting for Ctrl-C.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(clap::Args, Debug)]
struct SimClientArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    server: String,
    #[arg(long)]
    sensor: SensorId,
    /// Scenario supplying the sensor pose, motion and noise; built-in default if absent.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stop after this many joint frames.
    #[arg(long)]
    frames: Option<u64>,
    /// Drop the connection once after this many frames, then reconnect.
    #[arg(long)]
    drop_after: Option<u64>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Switch {
    On,
    Off,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SolverArg {
    Nonlinear,
    Linear,
}

#[derive(clap::Args, Debug)]
struct SimRunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Occlusion compensation; overrides the scenario.
    #[arg(long, value_enum)]
    compensation: Option<Switch>,
    /// Fusion solver; overrides the scenario.
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the calibration file here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct BenchTrilatArgs {
    /// Trials per cell.
    #[arg(long, default_value_t = 5000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct BenchSyncArgs {
    #[arg(long, default_value_t = 10_000)]
    exchanges: usize,
    /// Half-width of the uniform per-direction jitter, ms.
    #[arg(long, default_value_t = 2.0)]
    jitter: f64,
    /// Mean one-way delay, ms.
    #[arg(long, default_value_t = 5.0)]
    delay: f64,
    /// Upstream minus downstream delay, ms.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    asymmetry: f64,
    /// Client clock minus server clock, ms.
    #[arg(long, default_value_t = 987.0, allow_hyphen_values = true)]
    offset: f64,
    /// Time between pings, ms.
    #[arg(long, default_value_t = 100.0)]
    interval: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct BenchOcclusionArgs {
    #[arg(long, default_value_t = 10_000)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn load_scenario(path: Option<&Path>, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut sc = match path {
        Some(p) => read_text(p)?.parse::<ScenarioConfig>().map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        sc.seed = s;
    }
    Ok(sc)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().context("cannot start the async runtime")
}

fn serve(a: ServeArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => read_text(p)?.parse::<ServerConfig>().map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => ServerConfig::default(),
    };
    if let Some(l) = a.listen {
        cfg.listen = l;
    }
    if let Some(f) = a.fps {
        cfg.fps = f;
    }
    cfg.validate().map_err(usage)?;
    let known = match &a.calibration {
        Some(p) => parse_calibration_file(&read_text(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => Vec::new(),
    };
    if a.duration.is_some_and(|d| !(d >= 0.0)) {
        return Err(usage("--duration must be non-negative"));
    }

    let rt = runtime()?;
    let summary = rt.block_on(async {
        let server = Server::bind(cfg).await.context("cannot start the server")?;
        log::info!("listening on {}", server.local_addr()?);
        let shutdown = async move {
            match a.duration {
                Some(d) => tokio::time::sleep(Duration::from_secs_f64(d)).await,
                None => {
                    let _ = tokio::signal::ctrl_c().await;
                }
            }
        };
        anyhow::Ok(server.with_calibration(known).run(shutdown).await)
    })?;

    std::fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    std::fs::write(a.out.join("fused.csv"), report::fused_csv(&summary.ticks))?;
    std::fs::write(a.out.join("summary.csv"), report::timing_csv(&summary.stats))?;
    std::fs::write(a.out.join("sync.csv"), report::sync_csv(&summary.sync))?;
    std::fs::write(a.out.join("calibration.txt"), write_calibration_file(&summary.calibration))?;
    eprintln!(
        "{} ticks, {} fused, {:.2}% within the window",
        summary.stats.ticks,
        summary.stats.fused_ticks(),
        100.0 * summary.stats.within_window_fraction()
    );
    Ok(())
}

fn sim_client(a: SimClientArgs) -> Result<()> {
    let sc = load_scenario(a.scenario.as_deref(), a.seed)?;
    if !sc.sensors.contains_key(&a.sensor) {
        return Err(usage(format!("scenario has no sensor {}", a.sensor)));
    }
    let mut cfg = SimClientConfig::new(a.server, a.sensor, sc);
    cfg.frames = a.frames;
    cfg.drop_after = a.drop_after;
    let s = runtime()?.block_on(run_sim_client(cfg))?;
    eprintln!(
        "sensor {}: {} frames, {} connections, {} pings answered",
        a.sensor, s.frames_sent, s.connections, s.pings_answered
    );
    Ok(())
}

fn sim_run(a: SimRunArgs) -> Result<()> {
    let mut sc = load_scenario(Some(&a.scenario), a.seed)?;
    if let Some(c) = a.compensation {
        sc.server.compensation = matches!(c, Switch::On);
    }
    if let Some(s) = a.solver {
        sc.server.mode = match s {
            SolverArg::Nonlinear => SolverMode::Nonlinear,
            SolverArg::Linear => SolverMode::LinearOnly,
        };
    }
    let out = run_scenario(&sc)?;
    report::write_sim_outputs(&a.out, &out).with_context(|| format!("cannot write to {}", a.out.display()))?;
    eprintln!(
        "{} ticks, overall MAE {:.3} cm over {} joint samples, {:.2}% within the window",
        out.stats.ticks,
        out.errors.overall_mae_cm,
        out.errors.samples,
        100.0 * out.stats.within_window_fraction()
    );
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let sc = load_scenario(a.scenario.as_deref(), a.seed)?;
    let mut records = Vec::new();
    let mut csv = String::from("sensor_id,theta_rad,ox,oy,oz,theta_error_rad,origin_error_cm\n");
    for (&id, truth) in &sc.sensors {
        let r = calibrate_sensor(id, truth, &sc.wand, sc.seed.wrapping_add(id as u64))?;
        let o = r.pose.origin_in_client;
        let dtheta = (r.pose.yaw_theta - truth.yaw_theta).sin().atan2((r.pose.yaw_theta - truth.yaw_theta).cos());
        csv.push_str(&format!(
            "{id},{:.6},{:.4},{:.4},{:.4},{:.3e},{:.4}\n",
            r.pose.yaw_theta,
            o.x,
            o.y,
            o.z,
            dtheta.abs(),
            o.distance(truth.origin_in_client)
        ));
        records.push(r);
    }
    if let Some(p) = &a.out {
        std::fs::write(p, write_calibration_file(&records)).with_context(|| format!("cannot write {}", p.display()))?;
    }
    print!("{csv}");
    Ok(())
}

fn bench_trilat(a: BenchTrilatArgs) -> Result<()> {
    if a.trials == 0 {
        return Err(usage("--trials must be positive"));
    }
    let rows = run_trilat_benchmark(&BENCH_THRESHOLDS, &BENCH_ERROR_RANGES, a.trials, a.seed);
    emit(a.out.as_deref(), &report::trilat_bench_csv(&rows))
}

fn bench_sync(a: BenchSyncArgs) -> Result<()> {
    let delay = DelayModel { base_ms: a.delay, jitter_ms: a.jitter, asymmetry_ms: a.asymmetry, ..DelayModel::default() };
    delay.validate().map_err(usage)?;
    if !(a.interval > 0.0 && a.offset.is_finite()) {
        return Err(usage("--interval must be positive and --offset finite"));
    }
    let r = run_sync_benchmark(a.exchanges, &delay, a.offset, a.interval, a.seed);
    emit(a.out.as_deref(), &report::sync_bench_csv(&r))?;
    eprintln!("{:.2}% of {} steady-state errors under 2 ms", 100.0 * r.fraction_under_2ms(), r.steady_state);
    Ok(())
}

fn bench_occlusion(a: BenchOcclusionArgs) -> Result<()> {
    let r = run_occlusion_oracle(a.pairs, a.seed);
    emit(a.out.as_deref(), &report::oracle_csv(&r))?;
    if r.disagreements > 0 {
        anyhow::bail!("{} disagreements with the oracle", r.disagreements);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = match cli.command {
        Command::Serve(a) => serve(a),
        Command::SimClient(a) => sim_client(a),
        Command::SimRun(a) => sim_run(a),
        Command::Calibrate(a) => calibrate(a),
        Command::BenchTrilat(a) => bench_trilat(a),
        Command::BenchSync(a) => bench_sync(a),
        Command::BenchOcclusion(a) => bench_occlusion(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
