//! In-process orchestration of a whole scenario: wand calibration of every
//! sensor, then a tracking run with simulated clocks, links and outages,
//! driven as a discrete-event timeline on the server clock.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::calibration::{localize_wand, register_pose, validate_samples, CalibrationError, CalibrationRecord, WandConfig};
use crate::geometry::{Point3, SensorPose};
use crate::occlusion::{detect_occlusions, SensorView};
use crate::pipeline::{FusionEngine, PipelineStats, TickOutput, TrackedFrame};
use crate::protocol::{decode_message, encode_message, CalibFramePayload, JointFramePayload, Message, Payload, ProtocolError};
use crate::sim::motion::MotionScript;
use crate::sim::network::{outage_windows, simulate_network, Direction};
use crate::sim::render::render_wand_depth;
use crate::sim::scenario::{ScenarioConfig, WandScenario};
use crate::sim::SimError;
use crate::skeleton::{JointId, SensorId, Skeleton};
use crate::timesync::{SyncExchange, SYNC_HISTORY};

/// Server time at which tracking starts; the initial sync burst precedes it.
pub const TRACKING_START_MS: f64 = 1000.0;
/// Spacing of the pings in a sync burst.
pub const SYNC_BURST_SPACING_MS: f64 = 20.0;

#[derive(Debug, Error)]
pub enum SimRunError {
    #[error("sensor {sensor}: {source}")]
    Render { sensor: SensorId, source: SimError },
    #[error("sensor {sensor}: {source}")]
    Calibration { sensor: SensorId, source: CalibrationError },
    #[error("sensor {sensor}: {source}")]
    Protocol { sensor: SensorId, source: ProtocolError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub tick: u64,
    /// Mean true capture time of the frames fused at this tick.
    pub reference_time_ms: f64,
    pub joints: Vec<Point3>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncRow {
    pub sensor_id: SensorId,
    pub exchange_idx: usize,
    pub d_ms: f64,
    pub e_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointError {
    pub joint: JointId,
    pub name: String,
    pub mae_cm: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorSummary {
    pub per_joint: Vec<JointError>,
    pub overall_mae_cm: f64,
    pub samples: usize,
}

impl ErrorSummary {
    pub fn joint(&self, id: JointId) -> Option<&JointError> {
        self.per_joint.iter().find(|j| j.joint == id)
    }

    /// Pairs every fused joint with the truth row of its tick.
    pub fn compute(skeleton: &Skeleton, ticks: &[TickOutput], truth: &[TruthRow]) -> Self {
        let by_tick: BTreeMap<u64, &TruthRow> = truth.iter().map(|t| (t.tick, t)).collect();
        let mut acc: BTreeMap<JointId, (f64, usize)> = BTreeMap::new();
        for t in ticks {
            let Some(row) = by_tick.get(&t.tick) else { continue };
            for j in &t.joints {
                if let Some(p) = row.joints.get(j.joint.0 as usize) {
                    let e = acc.entry(j.joint).or_default();
                    e.0 += j.fused.position.distance(*p);
                    e.1 += 1;
                }
            }
        }
        let (sum, samples) = acc.values().fold((0.0, 0), |(s, n), &(e, k)| (s + e, n + k));
        Self {
            per_joint: acc
                .into_iter()
                .map(|(joint, (e, n))| JointError {
                    joint,
                    name: skeleton.joint_name(joint).unwrap_or("?").to_string(),
                    mae_cm: e / n as f64,
                    samples: n,
                })
                .collect(),
            overall_mae_cm: if samples == 0 { 0.0 } else { sum / samples as f64 },
            samples,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub calibration: Vec<CalibrationRecord>,
    pub ticks: Vec<TickOutput>,
    pub truth: Vec<TruthRow>,
    pub sync: Vec<SyncRow>,
    pub stats: PipelineStats,
    pub errors: ErrorSummary,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_CALIBRATION: u64 = 1;
const STREAM_PHASE: u64 = 2;
const STREAM_OBSERVE: u64 = 0x100;
const STREAM_NETWORK: u64 = 0x200;
const STREAM_OUTAGE: u64 = 0x300;

fn wire(sensor: SensorId, m: &Message) -> Result<Message, SimRunError> {
    let bytes = encode_message(m).map_err(|source| SimRunError::Protocol { sensor, source })?;
    decode_message(&bytes).map(|(m, _)| m).map_err(|source| SimRunError::Protocol { sensor, source })
}

/// Calibrates one sensor from rendered depth frames of the wand at the server
/// origin and at `trajectory_cm` along the server y axis.
///
/// Each placement is rendered `samples` times with independent pixel noise;
/// the client localizes and validates them and ships the accepted center over
/// the wire protocol, where the server registers the pose.
pub fn calibrate_sensor(
    sensor: SensorId,
    truth: &SensorPose,
    wand: &WandScenario,
    seed: u64,
) -> Result<CalibrationRecord, SimRunError> {
    let mut rng = stream_rng(seed, STREAM_CALIBRATION);
    let cfg = WandConfig { nominal_radius_cm: wand.radius_cm, ..WandConfig::default() };
    let cal_err = |source| SimRunError::Calibration { sensor, source };

    let mut accepted = Vec::with_capacity(2);
    for placement in 0..2u8 {
        let center = truth.to_client(Point3::new(0.0, placement as f64 * wand.trajectory_cm, 0.0));
        let mut detections = Vec::with_capacity(wand.samples);
        for _ in 0..wand.samples {
            let frame = render_wand_depth(center, wand.radius_cm, wand.noise_cm, rng.gen())
                .map_err(|source| SimRunError::Render { sensor, source })?;
            // a sample the detector cannot use is dropped, as a client would
            if let Ok(d) = localize_wand(&frame, &cfg) {
                detections.push(d);
            }
        }
        let a = validate_samples(&detections, wand.max_dev_cm).map_err(cal_err)?;
        let sent = Message::new(
            sensor,
            Payload::CalibFrame(CalibFramePayload {
                client_timestamp: 0,
                placement,
                center: a.detection.center_point,
                radius_cm: a.detection.radius_cm,
                sample_count: a.samples_used as u8,
                spread_cm: a.spread_cm,
            }),
        );
        let Payload::CalibFrame(got) = wire(sensor, &sent)?.payload else { unreachable!("calibration frame") };
        accepted.push((a, got));
    }

    let mut first = accepted[0].0.detection;
    let mut second = accepted[1].0.detection;
    first.center_point = accepted[0].1.center;
    second.center_point = accepted[1].1.center;
    let pose = register_pose(&first, &second).map_err(cal_err)?;
    Ok(CalibrationRecord {
        sensor_id: sensor,
        pose,
        sample_count: accepted.iter().map(|(_, p)| p.sample_count as usize).sum(),
        residual_spread: accepted.iter().map(|(_, p)| p.spread_cm).fold(0.0, f64::max),
    })
}

#[derive(Debug)]
enum EventKind {
    LinkDown,
    Message(Vec<u8>),
    Tick,
}

#[derive(Debug)]
struct Event {
    at: f64,
    sensor: SensorId,
    kind: EventKind,
}

impl Event {
    fn class(&self) -> u8 {
        match self.kind {
            EventKind::LinkDown => 0,
            EventKind::Message(_) => 1,
            EventKind::Tick => 2,
        }
    }
}

fn lost(outages: &[(f64, f64)], send: f64, arrival: f64) -> bool {
    outages.iter().any(|&(a, b)| send < b && arrival >= a)
}

fn in_outage(outages: &[(f64, f64)], t: f64) -> bool {
    outages.iter().any(|&(a, b)| (a..b).contains(&t))
}

struct SensorTimeline {
    events: Vec<Event>,
    /// True capture time of every frame, by client timestamp.
    capture_times: BTreeMap<i64, f64>,
}

fn sensor_timeline(
    cfg: &ScenarioConfig,
    skeleton: &Skeleton,
    motion: &MotionScript,
    sensor: SensorId,
    pose: &SensorPose,
    phase: f64,
    end: f64,
) -> Result<SensorTimeline, SimRunError> {
    let period = 1000.0 / cfg.fps();
    let offset = cfg.clock_offset(sensor);
    let outages = outage_windows(&cfg.delay, end, &mut stream_rng(cfg.seed, STREAM_OUTAGE + sensor as u64));
    let mut net_rng = stream_rng(cfg.seed, STREAM_NETWORK + sensor as u64);
    let mut obs_rng = stream_rng(cfg.seed, STREAM_OBSERVE + sensor as u64);
    let mut events: Vec<Event> = outages.iter().map(|&(a, _)| Event { at: a, sensor, kind: EventKind::LinkDown }).collect();

    // pings: a burst at start and after every reconnect, then periodic
    let burst = |t0: f64| (0..SYNC_HISTORY).map(move |i| t0 + i as f64 * SYNC_BURST_SPACING_MS);
    let mut pings: Vec<f64> = burst(0.0).collect();
    for &(_, b) in &outages {
        pings.extend(burst(b));
    }
    let interval = cfg.server.sync_interval_ms as f64;
    let mut t = TRACKING_START_MS;
    while t <= end {
        pings.push(t);
        t += interval;
    }
    pings.retain(|&p| p <= end && !in_outage(&outages, p));
    pings.sort_by(f64::total_cmp);
    pings.dedup();
    let ping_sends: Vec<(f64, Direction)> = pings.iter().map(|&p| (p, Direction::Downstream)).collect();
    let ping_arrivals = simulate_network(&cfg.delay, &ping_sends, &mut net_rng);

    // upstream: (send time, message)
    let mut upstream: Vec<(f64, Message)> = Vec::new();
    for (&sent, &arrived) in pings.iter().zip(&ping_arrivals) {
        if lost(&outages, sent, arrived) {
            continue;
        }
        let t2 = (arrived + offset).floor() as i64;
        upstream.push((arrived, Message::new(sensor, Payload::SyncPong { t1: sent.floor() as i64, t2, t3: t2 })));
    }

    let mut capture_times = BTreeMap::new();
    let first_n = ((TRACKING_START_MS - period + offset - phase) / period).ceil() as i64;
    for n in first_n.. {
        let client_time = phase + n as f64 * period;
        let true_time = client_time - offset;
        if true_time > end {
            break;
        }
        if in_outage(&outages, true_time) {
            continue;
        }
        let client_ts = client_time.floor() as i64;
        let truth = motion.pose_at(true_time - TRACKING_START_MS);
        let tick = ((true_time - TRACKING_START_MS) / period).floor().max(0.0) as u64;
        let inferred: BTreeSet<JointId> = cfg.inferred_at(sensor, tick);
        let obs = crate::sim::observe::observe_skeleton(
            &truth,
            sensor,
            pose,
            client_ts,
            &cfg.noise,
            &inferred,
            cfg.inferred_bias_cm,
            &mut obs_rng,
        );
        let report = detect_occlusions(sensor, &obs, skeleton, SensorView::Image);
        let payload = JointFramePayload::from_observations(client_ts, &obs, &report);
        capture_times.insert(client_ts, true_time);
        upstream.push((true_time, Message::new(sensor, Payload::JointFrame(payload))));
    }
    upstream.sort_by(|a, b| a.0.total_cmp(&b.0));

    let sends: Vec<(f64, Direction)> = upstream.iter().map(|(t, _)| (*t, Direction::Upstream)).collect();
    let arrivals = simulate_network(&cfg.delay, &sends, &mut net_rng);
    for ((sent, m), arrived) in upstream.iter().zip(arrivals) {
        if lost(&outages, *sent, arrived) || arrived > end {
            continue;
        }
        let bytes = encode_message(m).map_err(|source| SimRunError::Protocol { sensor, source })?;
        events.push(Event { at: arrived, sensor, kind: EventKind::Message(bytes) });
    }
    Ok(SensorTimeline { events, capture_times })
}

/// Runs a scenario end to end. Everything except the measured processing
/// times is a deterministic function of the configuration.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimOutput, SimRunError> {
    let skeleton = cfg.skeleton();
    let motion = MotionScript::builtin(cfg.motion);
    let period = 1000.0 / cfg.fps();
    let end = TRACKING_START_MS + cfg.ticks as f64 * period;

    let mut engine = FusionEngine::from_config(&cfg.server);
    let mut calibration = Vec::with_capacity(cfg.sensors.len());
    for (&id, pose) in &cfg.sensors {
        let record = calibrate_sensor(id, pose, &cfg.wand, cfg.seed ^ ((id as u64) << 40))?;
        engine.set_calibration(record);
        calibration.push(record);
    }

    let mut phase_rng = stream_rng(cfg.seed, STREAM_PHASE);
    let mut events = Vec::new();
    let mut capture_times: BTreeMap<SensorId, BTreeMap<i64, f64>> = BTreeMap::new();
    for (&id, pose) in &cfg.sensors {
        let phase = phase_rng.gen_range(0.0..period);
        let tl = sensor_timeline(cfg, &skeleton, &motion, id, pose, phase, end)?;
        events.extend(tl.events);
        capture_times.insert(id, tl.capture_times);
    }
    events.extend((0..cfg.ticks).map(|k| Event {
        at: TRACKING_START_MS + (k + 1) as f64 * period,
        sensor: 0,
        kind: EventKind::Tick,
    }));
    events.sort_by(|a, b| a.at.total_cmp(&b.at).then(a.class().cmp(&b.class())).then(a.sensor.cmp(&b.sensor)));

    let mut ticks = Vec::with_capacity(cfg.ticks as usize);
    let mut truth = Vec::new();
    let mut sync = Vec::new();
    let mut exchanges: BTreeMap<SensorId, usize> = BTreeMap::new();
    for ev in events {
        match ev.kind {
            EventKind::LinkDown => engine.session_mut(ev.sensor).reset_link(),
            EventKind::Message(bytes) => {
                let (m, _) = decode_message(&bytes).map_err(|source| SimRunError::Protocol { sensor: ev.sensor, source })?;
                match m.payload {
                    Payload::SyncPong { t1, t2, t3 } => {
                        let x = SyncExchange::new(t1, t2, t3, ev.at.floor() as i64);
                        if engine.sync_update(ev.sensor, &x).is_ok() {
                            let s = &engine.session(ev.sensor).expect("session").sync;
                            let idx = exchanges.entry(ev.sensor).or_default();
                            sync.push(SyncRow { sensor_id: ev.sensor, exchange_idx: *idx, d_ms: s.delay_d, e_ms: s.clock_error_e });
                            *idx += 1;
                        }
                    }
                    Payload::JointFrame(f) => {
                        let (obs, report) = f.to_observations(ev.sensor);
                        engine.enqueue(TrackedFrame::new(ev.sensor, f.client_timestamp, ev.at, obs, report));
                    }
                    _ => {}
                }
            }
            EventKind::Tick => {
                let out = engine.tick(ev.at);
                let times: Vec<f64> = out
                    .admitted
                    .iter()
                    .filter_map(|a| capture_times.get(&a.sensor_id)?.get(&a.client_timestamp).copied())
                    .collect();
                if !times.is_empty() {
                    let reference = times.iter().sum::<f64>() / times.len() as f64;
                    truth.push(TruthRow {
                        tick: out.tick,
                        reference_time_ms: reference,
                        joints: motion.pose_at(reference - TRACKING_START_MS),
                    });
                }
                ticks.push(out);
            }
        }
    }
    engine.drain();

    let errors = ErrorSummary::compute(&skeleton, &ticks, &truth);
    Ok(SimOutput { calibration, ticks, truth, sync, stats: engine.stats(), errors })
}
