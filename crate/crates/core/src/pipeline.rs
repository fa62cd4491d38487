//! Server-side fusion: per-sensor sessions, the tick-driven frame window and
//! per-joint trilateration.
//!
//! Transport-agnostic. The network server and the in-process simulator both
//! feed decoded frames and sync exchanges into a [`FusionEngine`] and call
//! [`FusionEngine::tick`] on their own cadence.

use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use crate::calibration::CalibrationRecord;
use crate::config::ServerConfig;
use crate::geometry::{Point3, SensorPose};
use crate::occlusion::{select_observations, OcclusionReport};
use crate::skeleton::{JointId, JointObservation, SensorId, Skeleton};
use crate::timesync::{
    backtrack_send_time_server, frame_window_filter, SyncError, SyncExchange, SyncState, Timestamped,
};
use crate::trilateration::{flags, fuse_joint, FusedJoint, SensorObservation, SolverConfig, SolverMode};

/// Lower edges of the latency bins in milliseconds, slowest first:
/// `[33,inf) [22,33) [11,22) [4,11) [2,4) (0,2)`.
pub const TIMING_BIN_EDGES: [f64; 6] = [33.0, 22.0, 11.0, 4.0, 2.0, 0.0];
pub const TIMING_BIN_LABELS: [&str; 6] = ["[33,inf)", "[22,33)", "[11,22)", "[4,11)", "[2,4)", "(0,2)"];

pub fn timing_bin(ms: f64) -> usize {
    TIMING_BIN_EDGES.iter().position(|&lo| ms >= lo).unwrap_or(TIMING_BIN_EDGES.len() - 1)
}

/// One client frame as it sits in a session FIFO.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedFrame {
    pub sensor_id: SensorId,
    pub client_timestamp: i64,
    /// Server clock, milliseconds.
    pub received_at: f64,
    pub observations: Vec<JointObservation>,
    pub report: OcclusionReport,
    /// Backtracked server-clock send time; filled in at each tick.
    pub send_time: f64,
}

impl TrackedFrame {
    pub fn new(
        sensor_id: SensorId,
        client_timestamp: i64,
        received_at: f64,
        observations: Vec<JointObservation>,
        report: OcclusionReport,
    ) -> Self {
        Self { sensor_id, client_timestamp, received_at, observations, report, send_time: received_at }
    }
}

impl Timestamped for TrackedFrame {
    fn send_time(&self) -> f64 {
        self.send_time
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrameCounts {
    pub received: u64,
    pub admitted: u64,
    pub stale: u64,
    pub superfluous: u64,
}

impl FrameCounts {
    /// Frames accounted for so far; equals `received` once FIFOs are drained.
    pub fn resolved(&self) -> u64 {
        self.admitted + self.stale + self.superfluous
    }

    fn add(&mut self, o: &FrameCounts) {
        self.received += o.received;
        self.admitted += o.admitted;
        self.stale += o.stale;
        self.superfluous += o.superfluous;
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    pub sensor_id: SensorId,
    pub sync: SyncState,
    pub calibration: Option<CalibrationRecord>,
    fifo: VecDeque<TrackedFrame>,
    last_admitted_send: f64,
    pub counts: FrameCounts,
}

impl Session {
    pub fn new(sensor_id: SensorId) -> Self {
        Self {
            sensor_id,
            sync: SyncState::new(sensor_id),
            calibration: None,
            fifo: VecDeque::new(),
            last_admitted_send: f64::NEG_INFINITY,
            counts: FrameCounts::default(),
        }
    }

    pub fn pose(&self) -> Option<SensorPose> {
        self.calibration.map(|c| c.pose)
    }

    pub fn queued(&self) -> usize {
        self.fifo.len()
    }

    /// Drops everything buffered, counting it stale.
    fn discard_all(&mut self) {
        self.counts.stale += self.fifo.len() as u64;
        self.fifo.clear();
    }

    /// Connection lost: sync must be renegotiated, buffered frames are void.
    pub fn reset_link(&mut self) {
        self.discard_all();
        self.sync = SyncState::new(self.sensor_id);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedOutput {
    pub joint: JointId,
    pub fused: FusedJoint,
    pub sensor_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmittedFrame {
    pub sensor_id: SensorId,
    pub client_timestamp: i64,
    /// Backtracked send time, server clock.
    pub send_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub tick: u64,
    pub server_time_ms: f64,
    pub joints: Vec<FusedOutput>,
    /// Frames that entered this tick, one per sensor at most.
    pub admitted: Vec<AdmittedFrame>,
    pub processing_ms: f64,
    /// Completion time minus the earliest admitted send time.
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineStats {
    pub ticks: u64,
    pub empty_ticks: u64,
    pub within_window: u64,
    pub timing_bins: [u64; 6],
    pub frames: FrameCounts,
}

impl PipelineStats {
    pub fn fused_ticks(&self) -> u64 {
        self.ticks - self.empty_ticks
    }

    /// Share of fused ticks that completed inside the admission window.
    pub fn within_window_fraction(&self) -> f64 {
        match self.fused_ticks() {
            0 => 1.0,
            n => self.within_window as f64 / n as f64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionEngine {
    skeleton: Skeleton,
    solver: SolverConfig,
    mode: SolverMode,
    compensation: bool,
    window_ms: f64,
    sessions: BTreeMap<SensorId, Session>,
    previous: BTreeMap<JointId, Point3>,
    stats: PipelineStats,
    next_tick: u64,
}

impl FusionEngine {
    pub fn new(skeleton: Skeleton, solver: SolverConfig, mode: SolverMode, compensation: bool, window_ms: f64) -> Self {
        Self {
            skeleton,
            solver,
            mode,
            compensation,
            window_ms,
            sessions: BTreeMap::new(),
            previous: BTreeMap::new(),
            stats: PipelineStats::default(),
            next_tick: 0,
        }
    }

    pub fn from_config(cfg: &ServerConfig) -> Self {
        let skeleton = Skeleton::by_name(&cfg.skeleton).expect("validated config");
        Self::new(skeleton, cfg.solver, cfg.mode, cfg.compensation, cfg.window())
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn window_ms(&self) -> f64 {
        self.window_ms
    }

    pub fn session(&self, id: SensorId) -> Option<&Session> {
        self.sessions.get(&id)
    }

    pub fn session_mut(&mut self, id: SensorId) -> &mut Session {
        self.sessions.entry(id).or_insert_with(|| Session::new(id))
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.values()
    }

    pub fn remove_session(&mut self, id: SensorId) -> Option<Session> {
        let mut s = self.sessions.remove(&id)?;
        s.discard_all();
        self.stats.frames.add(&s.counts);
        Some(s)
    }

    pub fn set_calibration(&mut self, record: CalibrationRecord) {
        self.session_mut(record.sensor_id).calibration = Some(record);
    }

    pub fn sync_update(&mut self, id: SensorId, x: &SyncExchange) -> Result<(f64, f64), SyncError> {
        self.session_mut(id).sync.update(x)
    }

    pub fn enqueue(&mut self, frame: TrackedFrame) {
        let s = self.session_mut(frame.sensor_id);
        s.counts.received += 1;
        s.fifo.push_back(frame);
    }

    /// Aggregate statistics, including sessions still open.
    pub fn stats(&self) -> PipelineStats {
        let mut out = self.stats.clone();
        for s in self.sessions.values() {
            out.frames.add(&s.counts);
        }
        out
    }

    /// Ends a run: every frame still buffered is counted stale.
    pub fn drain(&mut self) {
        for s in self.sessions.values_mut() {
            s.discard_all();
        }
    }

    /// Fuses one server frame at `server_now` (server clock, ms).
    pub fn tick(&mut self, server_now: f64) -> TickOutput {
        let started = Instant::now();
        let tick = self.next_tick;
        self.next_tick += 1;
        self.stats.ticks += 1;

        let mut admitted: Vec<(TrackedFrame, SensorPose)> = Vec::new();
        for s in self.sessions.values_mut() {
            let usable = s.sync.is_initialized() && s.calibration.is_some();
            if !usable {
                s.discard_all();
                continue;
            }
            for f in s.fifo.iter_mut() {
                f.send_time = backtrack_send_time_server(f.received_at, &s.sync).expect("initialized");
            }
            let out = frame_window_filter(&mut s.fifo, server_now, self.window_ms);
            s.counts.stale += out.stale as u64;
            s.counts.superfluous += out.superfluous as u64;
            if let Some(frame) = out.admitted {
                if frame.send_time < s.last_admitted_send {
                    s.counts.stale += 1;
                } else {
                    s.counts.admitted += 1;
                    s.last_admitted_send = frame.send_time;
                    admitted.push((frame, s.pose().expect("calibrated")));
                }
            }
        }

        let mut joints = Vec::new();
        if !admitted.is_empty() {
            let joint_ids: Vec<JointId> = self.skeleton.joint_ids().collect();
            for joint in joint_ids {
                if let Some(out) = self.fuse_one(joint, &admitted) {
                    joints.push(out);
                }
            }
        }

        let processing_ms = started.elapsed().as_secs_f64() * 1e3;
        let earliest = admitted.iter().map(|(f, _)| f.send_time).fold(f64::INFINITY, f64::min);
        let latency_ms = earliest.is_finite().then(|| server_now + processing_ms - earliest);
        match latency_ms {
            None => self.stats.empty_ticks += 1,
            Some(l) => {
                self.stats.timing_bins[timing_bin(l)] += 1;
                if l <= self.window_ms {
                    self.stats.within_window += 1;
                }
            }
        }

        TickOutput {
            tick,
            server_time_ms: server_now,
            joints,
            admitted: admitted
                .iter()
                .map(|(f, _)| AdmittedFrame {
                    sensor_id: f.sensor_id,
                    client_timestamp: f.client_timestamp,
                    send_time: f.send_time,
                })
                .collect(),
            processing_ms,
            latency_ms,
        }
    }

    fn fuse_one(&mut self, joint: JointId, admitted: &[(TrackedFrame, SensorPose)]) -> Option<FusedOutput> {
        let seen: Vec<(&TrackedFrame, &SensorPose, &JointObservation)> = admitted
            .iter()
            .filter_map(|(f, pose)| f.observations.iter().find(|o| o.joint == joint).map(|o| (f, pose, o)))
            .collect();
        if seen.is_empty() {
            return None;
        }

        let mut extra_flags = 0;
        let chosen: Vec<&(&TrackedFrame, &SensorPose, &JointObservation)> = if self.compensation {
            let reports: Vec<(&OcclusionReport, bool)> = seen.iter().map(|(f, _, _)| (&f.report, true)).collect();
            let ids = select_observations(&reports, joint).ok()?;
            if !seen.iter().any(|(f, _, _)| f.report.trusts(joint)) {
                extra_flags |= flags::OCCLUDED_FALLBACK;
            }
            seen.iter().filter(|(f, _, _)| ids.contains(&f.sensor_id)).collect()
        } else {
            seen.iter().collect()
        };

        let observations: Vec<SensorObservation> = chosen
            .iter()
            .map(|(_, pose, o)| SensorObservation {
                sensor_position: pose.sensor_position(),
                joint_position: pose.to_server(o.position),
            })
            .collect();
        let mut fused = fuse_joint(&observations, &self.solver, self.previous.get(&joint).copied(), self.mode).ok()?;
        fused.flags |= extra_flags;
        if fused.flags & flags::NON_TRILATERATED == 0 {
            self.previous.insert(joint, fused.position);
        }
        Some(FusedOutput { joint, fused, sensor_count: observations.len() })
    }
}
