//! Binary wire format shared by the server and its sensor clients.
//!
//! Every message is a 12-byte header followed by a kind-specific payload:
//!
//! ```text
//! 0..4   magic "MCTL"
//! 4      version (1)
//! 5      kind
//! 6..8   sensor id, u16 LE
//! 8..12  payload length, u32 LE
//! ```
//!
//! Coordinates travel as `i32` hundredths of a centimeter.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::geometry::Point3;
use crate::occlusion::OcclusionReport;
use crate::skeleton::{JointId, JointObservation, SensorId, TrackingState};

pub const MAGIC: [u8; 4] = *b"MCTL";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 12;
pub const MAX_PAYLOAD: usize = 1 << 20;
/// Wire units per centimeter.
pub const FIXED_POINT_SCALE: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("need {0} more bytes")]
    NeedMore(usize),
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("payload of {0} bytes exceeds the 1 MiB limit")]
    Oversized(usize),
    #[error("malformed {kind:?} payload: {reason}")]
    Malformed { kind: MessageKind, reason: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Hello = 1,
    HelloAck = 2,
    SyncPing = 3,
    SyncPong = 4,
    CalibFrame = 5,
    JointFrame = 6,
    Control = 7,
}

impl MessageKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            1 => Self::Hello,
            2 => Self::HelloAck,
            3 => Self::SyncPing,
            4 => Self::SyncPong,
            5 => Self::CalibFrame,
            6 => Self::JointFrame,
            7 => Self::Control,
            _ => return None,
        })
    }
}

/// Wand result for one calibration placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibFramePayload {
    pub client_timestamp: i64,
    pub placement: u8,
    /// Wand center, client frame.
    pub center: Point3,
    pub radius_cm: f64,
    pub sample_count: u8,
    pub spread_cm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireJoint {
    pub joint: JointId,
    pub position: Point3,
    pub state: TrackingState,
    pub occluded: bool,
    pub inferred: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointFramePayload {
    pub client_timestamp: i64,
    pub joints: Vec<WireJoint>,
    pub intersection_count: u16,
}

impl JointFramePayload {
    pub fn from_observations(client_timestamp: i64, obs: &[JointObservation], report: &OcclusionReport) -> Self {
        let joints = obs
            .iter()
            .map(|o| WireJoint {
                joint: o.joint,
                position: o.position,
                state: o.tracking_state,
                occluded: report.occluded_joints.contains(&o.joint),
                inferred: report.inferred_joints.contains(&o.joint),
            })
            .collect();
        Self { client_timestamp, joints, intersection_count: report.intersection_count }
    }

    /// Observations and the occlusion report as seen by the server.
    pub fn to_observations(&self, sensor_id: SensorId) -> (Vec<JointObservation>, OcclusionReport) {
        let obs = self
            .joints
            .iter()
            .map(|j| JointObservation {
                joint: j.joint,
                position: j.position,
                tracking_state: j.state,
                sensor_id,
                client_timestamp: self.client_timestamp,
            })
            .collect();
        let pick = |f: fn(&WireJoint) -> bool| -> BTreeSet<JointId> {
            self.joints.iter().filter(|j| f(j)).map(|j| j.joint).collect()
        };
        let report = OcclusionReport {
            sensor_id,
            occluded_joints: pick(|j| j.occluded),
            inferred_joints: pick(|j| j.inferred),
            intersection_count: self.intersection_count,
            skipped_limbs: Vec::new(),
        };
        (obs, report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlCommand {
    /// Run wand detection for placement `n` (0 or 1).
    Calibrate(u8),
    Track,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Hello,
    HelloAck,
    SyncPing { t1: i64 },
    SyncPong { t1: i64, t2: i64, t3: i64 },
    CalibFrame(CalibFramePayload),
    JointFrame(JointFramePayload),
    Control(ControlCommand),
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Hello => MessageKind::Hello,
            Payload::HelloAck => MessageKind::HelloAck,
            Payload::SyncPing { .. } => MessageKind::SyncPing,
            Payload::SyncPong { .. } => MessageKind::SyncPong,
            Payload::CalibFrame(_) => MessageKind::CalibFrame,
            Payload::JointFrame(_) => MessageKind::JointFrame,
            Payload::Control(_) => MessageKind::Control,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub sensor_id: SensorId,
    pub payload: Payload,
}

impl Message {
    pub fn new(sensor_id: SensorId, payload: Payload) -> Self {
        Self { sensor_id, payload }
    }
}

/// Centimeters to wire units, saturating; non-finite values become 0.
pub fn to_fixed(cm: f64) -> i32 {
    if cm.is_finite() {
        (cm * FIXED_POINT_SCALE).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32
    } else {
        0
    }
}

pub fn from_fixed(v: i32) -> f64 {
    f64::from(v) / FIXED_POINT_SCALE
}

/// Rounds a point to what survives a trip over the wire.
pub fn quantize(p: Point3) -> Point3 {
    Point3::new(from_fixed(to_fixed(p.x)), from_fixed(to_fixed(p.y)), from_fixed(to_fixed(p.z)))
}

fn put_point(out: &mut Vec<u8>, p: Point3) {
    for c in [p.x, p.y, p.z] {
        out.extend_from_slice(&to_fixed(c).to_le_bytes());
    }
}

fn bitmap(flags: impl Iterator<Item = bool>, n: usize) -> Vec<u8> {
    let mut bits = vec![0u8; n.div_ceil(8)];
    for (k, set) in flags.enumerate() {
        if set {
            bits[k / 8] |= 1 << (k % 8);
        }
    }
    bits
}

fn encode_payload(p: &Payload) -> Result<Vec<u8>, ProtocolError> {
    let mut out = Vec::new();
    match p {
        Payload::Hello | Payload::HelloAck => {}
        Payload::SyncPing { t1 } => out.extend_from_slice(&t1.to_le_bytes()),
        Payload::SyncPong { t1, t2, t3 } => {
            for t in [t1, t2, t3] {
                out.extend_from_slice(&t.to_le_bytes());
            }
        }
        Payload::CalibFrame(c) => {
            out.extend_from_slice(&c.client_timestamp.to_le_bytes());
            out.push(c.placement);
            put_point(&mut out, c.center);
            out.extend_from_slice(&to_fixed(c.radius_cm).to_le_bytes());
            out.push(c.sample_count);
            out.extend_from_slice(&to_fixed(c.spread_cm).to_le_bytes());
        }
        Payload::JointFrame(j) => {
            let n = j.joints.len();
            let count = u16::try_from(n).map_err(|_| ProtocolError::Malformed {
                kind: MessageKind::JointFrame,
                reason: "more than 65535 joints",
            })?;
            out.extend_from_slice(&j.client_timestamp.to_le_bytes());
            out.extend_from_slice(&count.to_le_bytes());
            for w in &j.joints {
                out.extend_from_slice(&w.joint.0.to_le_bytes());
                put_point(&mut out, w.position);
                out.push(w.state.to_byte());
            }
            out.extend(bitmap(j.joints.iter().map(|w| w.occluded), n));
            out.extend(bitmap(j.joints.iter().map(|w| w.inferred), n));
            out.extend_from_slice(&j.intersection_count.to_le_bytes());
        }
        Payload::Control(c) => match c {
            ControlCommand::Calibrate(n) => out.extend_from_slice(&[1, *n]),
            ControlCommand::Track => out.extend_from_slice(&[2, 0]),
            ControlCommand::Stop => out.extend_from_slice(&[3, 0]),
        },
    }
    if out.len() > MAX_PAYLOAD {
        return Err(ProtocolError::Oversized(out.len()));
    }
    Ok(out)
}

pub fn encode_message(m: &Message) -> Result<Vec<u8>, ProtocolError> {
    let payload = encode_payload(&m.payload)?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(m.payload.kind() as u8);
    out.extend_from_slice(&m.sensor_id.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    kind: MessageKind,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.buf.len() < n {
            return Err(self.malformed("payload too short"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn malformed(&self, reason: &'static str) -> ProtocolError {
        ProtocolError::Malformed { kind: self.kind, reason }
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ProtocolError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn i32(&mut self) -> Result<i32, ProtocolError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn i64(&mut self) -> Result<i64, ProtocolError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn fixed(&mut self) -> Result<f64, ProtocolError> {
        Ok(from_fixed(self.i32()?))
    }

    fn point(&mut self) -> Result<Point3, ProtocolError> {
        Ok(Point3::new(self.fixed()?, self.fixed()?, self.fixed()?))
    }

    fn finish(&self) -> Result<(), ProtocolError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(self.malformed("trailing bytes"))
        }
    }
}

fn decode_payload(kind: MessageKind, bytes: &[u8]) -> Result<Payload, ProtocolError> {
    let mut r = Reader { buf: bytes, kind };
    let payload = match kind {
        MessageKind::Hello => Payload::Hello,
        MessageKind::HelloAck => Payload::HelloAck,
        MessageKind::SyncPing => Payload::SyncPing { t1: r.i64()? },
        MessageKind::SyncPong => Payload::SyncPong { t1: r.i64()?, t2: r.i64()?, t3: r.i64()? },
        MessageKind::CalibFrame => Payload::CalibFrame(CalibFramePayload {
            client_timestamp: r.i64()?,
            placement: r.u8()?,
            center: r.point()?,
            radius_cm: r.fixed()?,
            sample_count: r.u8()?,
            spread_cm: r.fixed()?,
        }),
        MessageKind::JointFrame => {
            let client_timestamp = r.i64()?;
            let n = r.u16()? as usize;
            let mut joints = Vec::with_capacity(n);
            for _ in 0..n {
                let joint = JointId(r.u16()?);
                let position = r.point()?;
                let state = TrackingState::from_byte(r.u8()?).ok_or_else(|| r.malformed("bad tracking state"))?;
                joints.push(WireJoint { joint, position, state, occluded: false, inferred: false });
            }
            let occluded = r.take(n.div_ceil(8))?;
            let inferred = r.take(n.div_ceil(8))?;
            for (k, j) in joints.iter_mut().enumerate() {
                j.occluded = occluded[k / 8] & (1 << (k % 8)) != 0;
                j.inferred = inferred[k / 8] & (1 << (k % 8)) != 0;
            }
            let pad = |bits: &[u8]| n % 8 != 0 && bits[n / 8] >> (n % 8) != 0;
            if pad(occluded) || pad(inferred) {
                return Err(r.malformed("bitmap padding bits set"));
            }
            let intersection_count = r.u16()?;
            Payload::JointFrame(JointFramePayload { client_timestamp, joints, intersection_count })
        }
        MessageKind::Control => {
            let (cmd, arg) = (r.u8()?, r.u8()?);
            Payload::Control(match (cmd, arg) {
                (1, n) => ControlCommand::Calibrate(n),
                (2, 0) => ControlCommand::Track,
                (3, 0) => ControlCommand::Stop,
                _ => return Err(r.malformed("bad control command")),
            })
        }
    };
    r.finish()?;
    Ok(payload)
}

/// Decodes one message from the front of `buf`, returning it with the number
/// of bytes consumed. A truncated buffer yields [`ProtocolError::NeedMore`].
pub fn decode_message(buf: &[u8]) -> Result<(Message, usize), ProtocolError> {
    if buf.len() < HEADER_LEN {
        // reject garbage as early as the bytes allow
        let seen = buf.len().min(4);
        if buf[..seen] != MAGIC[..seen] {
            let mut magic = [0u8; 4];
            magic[..seen].copy_from_slice(&buf[..seen]);
            return Err(ProtocolError::BadMagic(magic));
        }
        return Err(ProtocolError::NeedMore(HEADER_LEN - buf.len()));
    }
    let magic: [u8; 4] = buf[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(ProtocolError::BadMagic(magic));
    }
    if buf[4] != VERSION {
        return Err(ProtocolError::BadVersion(buf[4]));
    }
    let kind = MessageKind::from_byte(buf[5]).ok_or(ProtocolError::UnknownKind(buf[5]))?;
    let sensor_id = u16::from_le_bytes([buf[6], buf[7]]);
    let len = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(ProtocolError::Oversized(len));
    }
    let total = HEADER_LEN + len;
    if buf.len() < total {
        return Err(ProtocolError::NeedMore(total - buf.len()));
    }
    let payload = decode_payload(kind, &buf[HEADER_LEN..total])?;
    Ok((Message { sensor_id, payload }, total))
}

/// Incremental decoder over a byte stream.
#[derive(Debug, Default)]
pub struct StreamDecoder {
    buf: Vec<u8>,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete message, `Ok(None)` if more bytes are needed. Any other
    /// error means the stream is unusable.
    pub fn next_message(&mut self) -> Result<Option<Message>, ProtocolError> {
        match decode_message(&self.buf) {
            Ok((m, used)) => {
                self.buf.drain(..used);
                Ok(Some(m))
            }
            Err(ProtocolError::NeedMore(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixed_point() -> impl Strategy<Value = Point3> {
        (any::<i32>(), any::<i32>(), any::<i32>())
            .prop_map(|(x, y, z)| Point3::new(from_fixed(x), from_fixed(y), from_fixed(z)))
    }

    fn state() -> impl Strategy<Value = TrackingState> {
        prop_oneof![Just(TrackingState::Tracked), Just(TrackingState::Inferred)]
    }

    fn message() -> impl Strategy<Value = Message> {
        let joint = (any::<u16>(), fixed_point(), state(), any::<bool>(), any::<bool>()).prop_map(
            |(id, position, state, occluded, inferred)| WireJoint { joint: JointId(id), position, state, occluded, inferred },
        );
        let payload = prop_oneof![
            Just(Payload::Hello),
            Just(Payload::HelloAck),
            any::<i64>().prop_map(|t1| Payload::SyncPing { t1 }),
            (any::<i64>(), any::<i64>(), any::<i64>()).prop_map(|(t1, t2, t3)| Payload::SyncPong { t1, t2, t3 }),
            (any::<i64>(), any::<u8>(), fixed_point(), any::<i32>(), any::<u8>(), any::<i32>()).prop_map(
                |(client_timestamp, placement, center, r, sample_count, s)| Payload::CalibFrame(CalibFramePayload {
                    client_timestamp,
                    placement,
                    center,
                    radius_cm: from_fixed(r),
                    sample_count,
                    spread_cm: from_fixed(s),
                })
            ),
            (any::<i64>(), proptest::collection::vec(joint, 0..40), any::<u16>()).prop_map(
                |(client_timestamp, joints, intersection_count)| Payload::JointFrame(JointFramePayload {
                    client_timestamp,
                    joints,
                    intersection_count,
                })
            ),
            prop_oneof![
                any::<u8>().prop_map(ControlCommand::Calibrate),
                Just(ControlCommand::Track),
                Just(ControlCommand::Stop)
            ]
            .prop_map(Payload::Control),
        ];
        (any::<u16>(), payload).prop_map(|(sensor_id, payload)| Message { sensor_id, payload })
    }

    fn body_frame() -> Message {
        let joints = (0..15)
            .map(|k| WireJoint {
                joint: JointId(k),
                position: Point3::new(k as f64 * 1.25, -3.5, 200.01),
                state: if k == 7 { TrackingState::Inferred } else { TrackingState::Tracked },
                occluded: k == 4 || k == 5,
                inferred: k == 7,
            })
            .collect();
        Message::new(2, Payload::JointFrame(JointFramePayload { client_timestamp: 1_234_567, joints, intersection_count: 1 }))
    }

    #[test]
    fn hello_is_a_bare_header() {
        let bytes = encode_message(&Message::new(1, Payload::Hello)).unwrap();
        assert_eq!(bytes, [b'M', b'C', b'T', b'L', 1, 1, 1, 0, 0, 0, 0, 0]);
        assert_eq!(decode_message(&bytes).unwrap(), (Message::new(1, Payload::Hello), 12));
    }

    #[test]
    fn fifteen_joint_frame_round_trips() {
        let m = body_frame();
        let bytes = encode_message(&m).unwrap();
        // 8 + 2 + 15 * 15 + 2 + 2 + 2
        assert_eq!(bytes.len(), HEADER_LEN + 241);
        let (back, used) = decode_message(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, m);
    }

    #[test]
    fn bad_magic_version_kind() {
        let mut bytes = encode_message(&Message::new(1, Payload::Hello)).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert_eq!(decode_message(&bytes), Err(ProtocolError::BadMagic(*b"XXXX")));
        assert!(matches!(decode_message(b"XX"), Err(ProtocolError::BadMagic(_))));

        let mut bytes = encode_message(&Message::new(1, Payload::Hello)).unwrap();
        bytes[4] = 2;
        assert_eq!(decode_message(&bytes), Err(ProtocolError::BadVersion(2)));
        bytes[4] = 1;
        bytes[5] = 9;
        assert_eq!(decode_message(&bytes), Err(ProtocolError::UnknownKind(9)));
    }

    #[test]
    fn oversized_payload_rejected_from_header() {
        let mut bytes = encode_message(&Message::new(1, Payload::Hello)).unwrap();
        bytes[8..12].copy_from_slice(&((MAX_PAYLOAD as u32) + 1).to_le_bytes());
        assert_eq!(decode_message(&bytes), Err(ProtocolError::Oversized(MAX_PAYLOAD + 1)));
    }

    #[test]
    fn truncation_reports_missing_bytes() {
        let bytes = encode_message(&body_frame()).unwrap();
        for cut in 0..bytes.len() {
            let expect = if cut < HEADER_LEN { HEADER_LEN - cut } else { bytes.len() - cut };
            assert_eq!(decode_message(&bytes[..cut]), Err(ProtocolError::NeedMore(expect)));
        }
    }

    #[test]
    fn length_mismatch_is_malformed() {
        let mut bytes = encode_message(&Message::new(3, Payload::SyncPing { t1: 5 })).unwrap();
        bytes[8] = 9;
        bytes.push(0);
        assert!(matches!(decode_message(&bytes), Err(ProtocolError::Malformed { .. })));
    }

    #[test]
    fn stream_decoder_splits_messages() {
        let mut wire = encode_message(&Message::new(1, Payload::SyncPing { t1: 10 })).unwrap();
        wire.extend(encode_message(&body_frame()).unwrap());
        let mut dec = StreamDecoder::new();
        let mut got = Vec::new();
        for chunk in wire.chunks(7) {
            dec.extend(chunk);
            while let Some(m) = dec.next_message().unwrap() {
                got.push(m);
            }
        }
        assert_eq!(got, vec![Message::new(1, Payload::SyncPing { t1: 10 }), body_frame()]);
        assert_eq!(dec.buffered(), 0);
    }

    #[test]
    fn fixed_point_rounding() {
        assert_eq!(to_fixed(1.234), 123);
        assert_eq!(to_fixed(-0.005), -1);
        assert_eq!(to_fixed(f64::NAN), 0);
        assert_eq!(to_fixed(1e12), i32::MAX);
        assert_eq!(quantize(Point3::new(1.2345, 0.0, -2.0)), Point3::new(1.23, 0.0, -2.0));
    }

    #[test]
    fn observations_survive_the_wire() {
        let obs: Vec<_> = (0..3)
            .map(|k| JointObservation {
                joint: JointId(k),
                position: Point3::new(1.0, 2.0, 3.0),
                tracking_state: if k == 1 { TrackingState::Inferred } else { TrackingState::Tracked },
                sensor_id: 4,
                client_timestamp: 99,
            })
            .collect();
        let report = OcclusionReport {
            sensor_id: 4,
            occluded_joints: [JointId(2)].into(),
            inferred_joints: [JointId(1)].into(),
            intersection_count: 1,
            skipped_limbs: vec![],
        };
        let p = JointFramePayload::from_observations(99, &obs, &report);
        assert_eq!(p.to_observations(4), (obs, report));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn round_trip(m in message()) {
            let bytes = encode_message(&m).unwrap();
            let (back, used) = decode_message(&bytes).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(back, m);
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..300)) {
            let _ = decode_message(&bytes);
        }

        #[test]
        fn corrupted_frames_never_panic(m in message(), idx in any::<prop::sample::Index>(), val in any::<u8>()) {
            let mut bytes = encode_message(&m).unwrap();
            let i = idx.index(bytes.len());
            bytes[i] = val;
            let _ = decode_message(&bytes);
        }
    }
}
