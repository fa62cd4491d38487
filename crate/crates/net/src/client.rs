//! Simulated depth-sensor client: renders wand frames on request, answers
//! pings at once, and streams noisy skeleton frames while tracking.

use std::time::{Duration, Instant};

use log::{info, warn};
use mctl_core::calibration::{localize_wand, validate_samples, AcceptedWand, WandConfig};
use mctl_core::occlusion::{detect_occlusions, SensorView};
use mctl_core::protocol::{CalibFramePayload, ControlCommand, JointFramePayload, Message, Payload, StreamDecoder};
use mctl_core::sim::motion::MotionScript;
use mctl_core::sim::observe::observe_skeleton;
use mctl_core::sim::render::render_wand_depth;
use mctl_core::sim::scenario::WandScenario;
use mctl_core::sim::ScenarioConfig;
use mctl_core::{Point3, SensorId, SensorPose};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio::io::AsyncReadExt;
use tokio::net::TcpStream;

use crate::{send, NetError};

pub const BACKOFF_MIN: Duration = Duration::from_millis(100);
pub const BACKOFF_MAX: Duration = Duration::from_secs(5);

#[derive(Debug, Clone)]
pub struct SimClientConfig {
    pub server: String,
    pub sensor_id: SensorId,
    /// Supplies the true pose, motion, noise, clock offset and wand.
    pub scenario: ScenarioConfig,
    /// Stop after this many joint frames.
    pub frames: Option<u64>,
    /// Close the connection once after this many frames, then reconnect.
    pub drop_after: Option<u64>,
    /// Give up after this many consecutive failed connection attempts.
    pub max_connect_attempts: u32,
}

impl SimClientConfig {
    pub fn new(server: impl Into<String>, sensor_id: SensorId, scenario: ScenarioConfig) -> Self {
        Self { server: server.into(), sensor_id, scenario, frames: None, drop_after: None, max_connect_attempts: 20 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientSummary {
    pub frames_sent: u64,
    pub connections: u32,
    pub pings_answered: u64,
    pub placements_sent: u64,
}

/// Renders and localizes one wand placement. CPU-bound; runs off the
/// async workers so pings keep being answered meanwhile.
fn locate_placement(id: SensorId, pose: SensorPose, w: WandScenario, placement: u8, seeds: Vec<u64>) -> Option<AcceptedWand> {
    let center = pose.to_client(Point3::new(0.0, placement as f64 * w.trajectory_cm, 0.0));
    let cfg = WandConfig { nominal_radius_cm: w.radius_cm, ..WandConfig::default() };
    let mut detections = Vec::new();
    for seed in seeds {
        match render_wand_depth(center, w.radius_cm, w.noise_cm, seed) {
            Ok(frame) => detections.extend(localize_wand(&frame, &cfg).ok()),
            Err(e) => {
                warn!("sensor {id}: {e}");
                return None;
            }
        }
    }
    validate_samples(&detections, w.max_dev_cm)
        .map_err(|e| warn!("sensor {id}: placement {placement}: {e}"))
        .ok()
}

enum SessionEnd {
    Finished,
    Dropped,
}

struct Client {
    cfg: SimClientConfig,
    pose: SensorPose,
    motion: MotionScript,
    skeleton: mctl_core::Skeleton,
    rng: ChaCha8Rng,
    epoch: Instant,
    summary: ClientSummary,
    dropped_once: bool,
}

impl Client {
    /// Client clock: its own epoch shifted by the configured offset.
    fn now_ms(&self) -> i64 {
        (self.epoch.elapsed().as_secs_f64() * 1e3 + self.cfg.scenario.clock_offset(self.cfg.sensor_id)).floor() as i64
    }

    fn done(&self) -> bool {
        self.cfg.frames.is_some_and(|n| self.summary.frames_sent >= n)
    }

    fn joint_frame(&mut self) -> JointFramePayload {
        let sc = &self.cfg.scenario;
        let elapsed = self.epoch.elapsed().as_secs_f64() * 1e3;
        let truth = self.motion.pose_at(elapsed);
        let ts = self.now_ms();
        let inferred = sc.inferred_at(self.cfg.sensor_id, self.summary.frames_sent);
        let obs = observe_skeleton(
            &truth,
            self.cfg.sensor_id,
            &self.pose,
            ts,
            &sc.noise,
            &inferred,
            sc.inferred_bias_cm,
            &mut self.rng,
        );
        let report = detect_occlusions(self.cfg.sensor_id, &obs, &self.skeleton, SensorView::Image);
        JointFramePayload::from_observations(ts, &obs, &report)
    }

    async fn session(&mut self, stream: TcpStream) -> Result<SessionEnd, NetError> {
        let id = self.cfg.sensor_id;
        let _ = stream.set_nodelay(true);
        let (mut rd, mut wr) = stream.into_split();
        send(&mut wr, &Message::new(id, Payload::Hello)).await?;

        let mut dec = StreamDecoder::new();
        let mut buf = vec![0u8; 16 * 1024];
        let mut acked = false;
        let mut tracking = false;
        let mut pending: Option<(u8, tokio::task::JoinHandle<Option<AcceptedWand>>)> = None;
        let mut frames = tokio::time::interval(Duration::from_secs_f64(1.0 / self.cfg.scenario.fps()));
        frames.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        loop {
            tokio::select! {
                n = rd.read(&mut buf) => {
                    let n = n?;
                    if n == 0 {
                        return Ok(SessionEnd::Dropped);
                    }
                    dec.extend(&buf[..n]);
                    while let Some(m) = dec.next_message()? {
                        match m.payload {
                            Payload::HelloAck => acked = true,
                            Payload::SyncPing { t1 } => {
                                let t = self.now_ms();
                                send(&mut wr, &Message::new(id, Payload::SyncPong { t1, t2: t, t3: t })).await?;
                                self.summary.pings_answered += 1;
                            }
                            Payload::Control(ControlCommand::Calibrate(n)) => {
                                tracking = false;
                                let seeds = (0..self.cfg.scenario.wand.samples).map(|_| self.rng.gen()).collect();
                                let (pose, wand) = (self.pose, self.cfg.scenario.wand);
                                if let Some((_, old)) = pending.replace((
                                    n,
                                    tokio::task::spawn_blocking(move || locate_placement(id, pose, wand, n, seeds)),
                                )) {
                                    old.abort();
                                }
                            }
                            Payload::Control(ControlCommand::Track) => tracking = true,
                            Payload::Control(ControlCommand::Stop) => return Ok(SessionEnd::Finished),
                            _ => {}
                        }
                    }
                }
                done = async { (&mut pending.as_mut().expect("guarded").1).await }, if pending.is_some() => {
                    let (placement, _) = pending.take().expect("guarded");
                    let Some(a) = done.ok().flatten() else {
                        return Err(NetError::Calibration(format!("placement {placement} could not be localized")));
                    };
                    {
                        let c = CalibFramePayload {
                            client_timestamp: self.now_ms(),
                            placement,
                            center: a.detection.center_point,
                            radius_cm: a.detection.radius_cm,
                            sample_count: a.samples_used as u8,
                            spread_cm: a.spread_cm,
                        };
                        send(&mut wr, &Message::new(id, Payload::CalibFrame(c))).await?;
                        self.summary.placements_sent += 1;
                    }
                }
                _ = frames.tick() => {
                    if !(acked && tracking) {
                        continue;
                    }
                    let f = self.joint_frame();
                    send(&mut wr, &Message::new(id, Payload::JointFrame(f))).await?;
                    self.summary.frames_sent += 1;
                    if self.done() {
                        return Ok(SessionEnd::Finished);
                    }
                    if !self.dropped_once && self.cfg.drop_after.is_some_and(|n| self.summary.frames_sent >= n) {
                        self.dropped_once = true;
                        info!("sensor {id}: dropping the connection on purpose");
                        return Ok(SessionEnd::Dropped);
                    }
                }
            }
        }
    }
}

/// Runs one simulated client until it has sent its frames, the server says
/// stop, or the server stays unreachable. Reconnects back off exponentially
/// from 0.1 s to 5 s.
pub async fn run_sim_client(cfg: SimClientConfig) -> Result<ClientSummary, NetError> {
    let pose = *cfg
        .scenario
        .sensors
        .get(&cfg.sensor_id)
        .ok_or_else(|| NetError::Config(format!("scenario has no sensor {}", cfg.sensor_id)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.scenario.seed);
    rng.set_stream(0x400 + cfg.sensor_id as u64);
    let mut client = Client {
        pose,
        motion: MotionScript::builtin(cfg.scenario.motion),
        skeleton: cfg.scenario.skeleton(),
        rng,
        epoch: Instant::now(),
        summary: ClientSummary::default(),
        dropped_once: false,
        cfg,
    };

    let mut backoff = BACKOFF_MIN;
    let mut failures = 0;
    loop {
        match TcpStream::connect(&client.cfg.server).await {
            Ok(stream) => {
                failures = 0;
                backoff = BACKOFF_MIN;
                client.summary.connections += 1;
                match client.session(stream).await {
                    Ok(SessionEnd::Finished) => return Ok(client.summary),
                    Ok(SessionEnd::Dropped) => info!("sensor {}: connection closed", client.cfg.sensor_id),
                    Err(e) => warn!("sensor {}: {e}", client.cfg.sensor_id),
                }
                tokio::time::sleep(backoff).await;
            }
            Err(e) => {
                failures += 1;
                if failures >= client.cfg.max_connect_attempts {
                    return Err(e.into());
                }
                tokio::time::sleep(backoff).await;
                backoff = (backoff * 2).min(BACKOFF_MAX);
            }
        }
    }
}
