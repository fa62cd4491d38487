//! Fusion server: one reader task per client connection, one tick task on
//! the frame timer, shared state behind a mutex that is never held across an
//! await.

use std::collections::BTreeMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use mctl_core::calibration::{register_pose, write_calibration_file, CalibrationRecord, WandDetection};
use mctl_core::config::ServerConfig;
use mctl_core::geometry::Pixel;
use mctl_core::pipeline::{FusionEngine, PipelineStats, TickOutput, TrackedFrame};
use mctl_core::protocol::{CalibFramePayload, ControlCommand, Message, Payload, StreamDecoder};
use mctl_core::sim::run::SyncRow;
use mctl_core::timesync::{SyncExchange, SYNC_HISTORY};
use mctl_core::SensorId;
use tokio::io::AsyncReadExt;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::JoinSet;

use crate::{send, NetError};

/// Spacing of the pings sent right after a client connects.
pub const SYNC_BURST_SPACING: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, Default)]
pub struct ServerSummary {
    pub ticks: Vec<TickOutput>,
    pub stats: PipelineStats,
    pub calibration: Vec<CalibrationRecord>,
    pub sync: Vec<SyncRow>,
}

struct State {
    engine: FusionEngine,
    ticks: Vec<TickOutput>,
    sync: Vec<SyncRow>,
    exchanges: BTreeMap<SensorId, usize>,
    placements: BTreeMap<SensorId, Vec<CalibFramePayload>>,
    records: BTreeMap<SensorId, CalibrationRecord>,
}

struct Shared {
    cfg: ServerConfig,
    clock: Instant,
    state: Mutex<State>,
}

impl Shared {
    fn now_ms(&self) -> f64 {
        self.clock.elapsed().as_secs_f64() * 1e3
    }

    fn state(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub struct Server {
    listener: TcpListener,
    cfg: ServerConfig,
    calibration: Vec<CalibrationRecord>,
}

impl Server {
    pub async fn bind(cfg: ServerConfig) -> Result<Self, NetError> {
        cfg.validate().map_err(|e| NetError::Config(e.to_string()))?;
        let listener = TcpListener::bind(&cfg.listen).await?;
        Ok(Self { listener, cfg, calibration: Vec::new() })
    }

    /// Known poses; these sensors skip the wand phase.
    pub fn with_calibration(mut self, records: Vec<CalibrationRecord>) -> Self {
        self.calibration = records;
        self
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves until `shutdown` resolves, then drains the FIFOs.
    pub async fn run<F: Future<Output = ()>>(self, shutdown: F) -> ServerSummary {
        let mut engine = FusionEngine::from_config(&self.cfg);
        let mut records = BTreeMap::new();
        for r in self.calibration {
            engine.set_calibration(r);
            records.insert(r.sensor_id, r);
        }
        let period = Duration::from_secs_f64(1.0 / self.cfg.fps);
        let shared = Arc::new(Shared {
            cfg: self.cfg,
            clock: Instant::now(),
            state: Mutex::new(State {
                engine,
                ticks: Vec::new(),
                sync: Vec::new(),
                exchanges: BTreeMap::new(),
                placements: BTreeMap::new(),
                records,
            }),
        });

        let mut conns = JoinSet::new();
        let mut ticker = tokio::time::interval(period);
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        tokio::pin!(shutdown);
        loop {
            tokio::select! {
                _ = &mut shutdown => break,
                _ = ticker.tick() => {
                    let now = shared.now_ms();
                    let mut st = shared.state();
                    let out = st.engine.tick(now);
                    st.ticks.push(out);
                }
                accepted = self.listener.accept() => match accepted {
                    Ok((stream, peer)) => {
                        debug!("connection from {peer}");
                        let _ = stream.set_nodelay(true);
                        conns.spawn(handle_connection(stream, Arc::clone(&shared)));
                    }
                    Err(e) => warn!("accept failed: {e}"),
                },
                Some(done) = conns.join_next(), if !conns.is_empty() => {
                    if let Ok(Err(e)) = done {
                        warn!("connection ended: {e}");
                    }
                }
            }
        }
        conns.abort_all();
        while conns.join_next().await.is_some() {}

        let mut st = shared.state();
        st.engine.drain();
        ServerSummary {
            ticks: std::mem::take(&mut st.ticks),
            stats: st.engine.stats(),
            calibration: st.records.values().copied().collect(),
            sync: std::mem::take(&mut st.sync),
        }
    }
}

fn detection_at(center: mctl_core::Point3, radius_cm: f64) -> WandDetection {
    let px = Pixel { u: 0, v: 0 };
    WandDetection { bbox_ul: px, bbox_br: px, center_pixel: px, center_point: center, radius_cm }
}

/// What the reader loop must send back after handling a client message.
fn on_calib_frame(shared: &Shared, id: SensorId, c: CalibFramePayload) -> Option<ControlCommand> {
    let mut st = shared.state();
    let placements = st.placements.entry(id).or_default();
    placements.retain(|p| p.placement != c.placement);
    placements.push(c);
    placements.sort_by_key(|p| p.placement);
    if placements.len() < 2 {
        return Some(ControlCommand::Calibrate(1));
    }
    let (a, b) = (placements[0], placements[1]);
    st.placements.remove(&id);
    match register_pose(&detection_at(a.center, a.radius_cm), &detection_at(b.center, b.radius_cm)) {
        Ok(pose) => {
            let record = CalibrationRecord {
                sensor_id: id,
                pose,
                sample_count: a.sample_count as usize + b.sample_count as usize,
                residual_spread: a.spread_cm.max(b.spread_cm),
            };
            info!("sensor {id} calibrated: theta {:.4} rad", pose.yaw_theta);
            st.engine.set_calibration(record);
            st.records.insert(id, record);
            if let Some(path) = &shared.cfg.calibration_file {
                let records: Vec<CalibrationRecord> = st.records.values().copied().collect();
                if let Err(e) = std::fs::write(path, write_calibration_file(&records)) {
                    warn!("cannot write {path}: {e}");
                }
            }
            Some(ControlCommand::Track)
        }
        Err(e) => {
            warn!("sensor {id}: {e}; restarting wand placements");
            Some(ControlCommand::Calibrate(0))
        }
    }
}

async fn ping_loop(shared: Arc<Shared>, id: SensorId, tx: mpsc::UnboundedSender<Message>) {
    let ping = |shared: &Shared| Message::new(id, Payload::SyncPing { t1: shared.now_ms().floor() as i64 });
    for _ in 0..SYNC_HISTORY {
        if tx.send(ping(&shared)).is_err() {
            return;
        }
        tokio::time::sleep(SYNC_BURST_SPACING).await;
    }
    let mut every = tokio::time::interval(Duration::from_millis(shared.cfg.sync_interval_ms));
    every.tick().await;
    loop {
        every.tick().await;
        if tx.send(ping(&shared)).is_err() {
            return;
        }
    }
}

async fn handle_connection(stream: TcpStream, shared: Arc<Shared>) -> Result<(), NetError> {
    let (mut rd, mut wr) = stream.into_split();
    let (tx, mut rx) = mpsc::unbounded_channel::<Message>();
    let writer = tokio::spawn(async move {
        while let Some(m) = rx.recv().await {
            send(&mut wr, &m).await?;
        }
        Ok::<(), NetError>(())
    });

    let mut sensor: Option<SensorId> = None;
    let mut pinger: Option<tokio::task::JoinHandle<()>> = None;
    let result = read_loop(&mut rd, &shared, &tx, &mut sensor, &mut pinger).await;

    if let Some(p) = pinger {
        p.abort();
    }
    writer.abort();
    if let Some(id) = sensor {
        info!("sensor {id} disconnected");
        shared.state().engine.session_mut(id).reset_link();
    }
    result
}

async fn read_loop(
    rd: &mut tokio::net::tcp::OwnedReadHalf,
    shared: &Arc<Shared>,
    tx: &mpsc::UnboundedSender<Message>,
    sensor: &mut Option<SensorId>,
    pinger: &mut Option<tokio::task::JoinHandle<()>>,
) -> Result<(), NetError> {
    let mut dec = StreamDecoder::new();
    let mut buf = vec![0u8; 64 * 1024];
    loop {
        let n = rd.read(&mut buf).await?;
        if n == 0 {
            return Ok(());
        }
        let received_at = shared.now_ms();
        dec.extend(&buf[..n]);
        while let Some(m) = dec.next_message()? {
            let id = m.sensor_id;
            match m.payload {
                Payload::Hello => {
                    if sensor.is_some() {
                        return Err(NetError::Handshake("second Hello on one connection".into()));
                    }
                    *sensor = Some(id);
                    let calibrated = {
                        let mut st = shared.state();
                        st.placements.remove(&id);
                        let s = st.engine.session_mut(id);
                        s.reset_link();
                        s.calibration.is_some()
                    };
                    info!("sensor {id} connected");
                    let _ = tx.send(Message::new(id, Payload::HelloAck));
                    *pinger = Some(tokio::spawn(ping_loop(Arc::clone(shared), id, tx.clone())));
                    let next = if calibrated { ControlCommand::Track } else { ControlCommand::Calibrate(0) };
                    let _ = tx.send(Message::new(id, Payload::Control(next)));
                }
                _ if *sensor != Some(id) => {
                    return Err(NetError::Handshake(format!("message for sensor {id} before its Hello")));
                }
                Payload::SyncPong { t1, t2, t3 } => {
                    let t4 = shared.now_ms().floor() as i64;
                    let mut st = shared.state();
                    match st.engine.sync_update(id, &SyncExchange::new(t1, t2, t3, t4)) {
                        Ok(_) => {
                            let s = st.engine.session(id).expect("session").sync.clone();
                            let idx = *st.exchanges.entry(id).and_modify(|i| *i += 1).or_insert(0);
                            st.sync.push(SyncRow { sensor_id: id, exchange_idx: idx, d_ms: s.delay_d, e_ms: s.clock_error_e });
                        }
                        Err(e) => warn!("sensor {id}: {e}"),
                    }
                }
                Payload::CalibFrame(c) => {
                    if let Some(cmd) = on_calib_frame(shared, id, c) {
                        let _ = tx.send(Message::new(id, Payload::Control(cmd)));
                    }
                }
                Payload::JointFrame(f) => {
                    let (obs, report) = f.to_observations(id);
                    shared.state().engine.enqueue(TrackedFrame::new(id, f.client_timestamp, received_at, obs, report));
                }
                other => debug!("sensor {id}: ignoring {:?}", other.kind()),
            }
        }
    }
}
