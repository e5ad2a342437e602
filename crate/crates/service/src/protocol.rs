//! Wire messages. Every frame is a 4-byte big-endian length followed by
//! that many bytes of UTF-8 JSON.

use std::io::{self, Read, Write};

use base64::Engine;
use serde::{Deserialize, Serialize};
use svelte_hand::grasp_controller::{
    ActuatorCommand, ControllerPhase, ControllerSnapshot, FeedbackSample, GraspCommandConfig, GraspMode,
};
use svelte_hand::hand_model::{Finger, HandGeometry, Joint};
use svelte_hand::tactile_sim::{frame_metrics, OpticsMap, SurfaceCoord, TactileFrame};
use svelte_hand::world_sim::{GraspOutcome, SimObject};

pub const PROTOCOL_VERSION: u32 = 1;
/// Largest accepted frame body, bytes.
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;
/// Encoding tag of tactile payloads: row-major little-endian f32 depth in mm,
/// base64 (standard alphabet, padded).
pub const TACTILE_ENCODING: &str = "f32le-base64";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CommandKind {
    StartGrasp { mode: GraspMode },
    Release,
    Twist,
    /// Move one joint to an absolute angle, degrees.
    Jog { joint: Joint, degrees: f64 },
    SetConfig { config: GraspCommandConfig },
    LoadObject { object: SimObject },
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::StartGrasp { .. } => "start_grasp",
            CommandKind::Release => "release",
            CommandKind::Twist => "twist",
            CommandKind::Jog { .. } => "jog",
            CommandKind::SetConfig { .. } => "set_config",
            CommandKind::LoadObject { .. } => "load_object",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandMessage {
    /// Unique per connection.
    pub id: u64,
    pub command: CommandKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Command(CommandMessage),
    /// Start (or retune) telemetry on this connection. The first telemetry
    /// message after a subscribe is always a snapshot.
    Subscribe {
        /// Send one joint sample every this many ticks; service default if absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        decimation: Option<u32>,
        #[serde(default = "default_true")]
        tactile: bool,
    },
    Unsubscribe,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    /// The command was applied at the start of `tick`.
    Ack { id: u64, tick: u64 },
    Reject { id: u64, reason: String },
    /// The frame could not be parsed or broke a protocol rule. The
    /// connection stays open unless the frame length itself was invalid.
    ProtocolError {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        message: String,
    },
    Telemetry(TelemetryMessage),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryMessage {
    /// Position in this connection's telemetry stream, from 0.
    pub seq: u64,
    pub tick: u64,
    /// Microseconds since service start, monotonic.
    pub timestamp_us: u64,
    pub data: TelemetryData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TelemetryData {
    Snapshot(Box<StateSnapshot>),
    JointStateSample(JointSample),
    PhaseChange {
        from: ControllerPhase,
        to: ControllerPhase,
        mode: Option<GraspMode>,
    },
    TactileFrames { frames: Vec<TactileFrameMessage> },
    GraspOutcome(Box<GraspOutcome>),
    Fault { reason: String },
}

impl TelemetryData {
    pub fn kind(&self) -> &'static str {
        match self {
            TelemetryData::Snapshot(_) => "snapshot",
            TelemetryData::JointStateSample(_) => "joint_state_sample",
            TelemetryData::PhaseChange { .. } => "phase_change",
            TelemetryData::TactileFrames { .. } => "tactile_frames",
            TelemetryData::GraspOutcome(_) => "grasp_outcome",
            TelemetryData::Fault { .. } => "fault",
        }
    }
}

/// Full state sent to a subscriber before any other telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub protocol_version: u32,
    pub backend: String,
    pub tick_hz: f64,
    pub controller: ControllerSnapshot,
    pub feedback: Option<FeedbackSample>,
    pub aperture: Option<f64>,
    pub config: GraspCommandConfig,
    pub geometry: HandGeometry,
    pub optics: OpticsMap,
    pub object: Option<SimObject>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointSample {
    pub phase: ControllerPhase,
    pub mode: Option<GraspMode>,
    pub feedback: FeedbackSample,
    pub command: ActuatorCommand,
    /// Gap between the mode's contact fingers, mm; `None` outside a grasp.
    pub aperture: Option<f64>,
    /// Object contact force, N.
    pub contact_force: f64,
    /// Droppable messages this subscriber has lost so far.
    pub dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TactileFrameMessage {
    pub finger: Finger,
    pub width: usize,
    pub height: usize,
    pub encoding: String,
    pub data: String,
    pub clamped: bool,
    pub contact_area: f64,
    pub centroid: Option<SurfaceCoord>,
    pub max_depth: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum PayloadError {
    #[error("unknown tactile encoding {0:?}")]
    Encoding(String),
    #[error("bad base64: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error("payload has {got} bytes, expected {expected}")]
    Size { got: usize, expected: usize },
}

impl TactileFrameMessage {
    pub fn encode(frame: &TactileFrame, optics: &OpticsMap) -> Self {
        let metrics = frame_metrics(frame, optics);
        let bytes: Vec<u8> = frame.depth.iter().flat_map(|d| d.to_le_bytes()).collect();
        Self {
            finger: frame.finger,
            width: frame.width,
            height: frame.height,
            encoding: TACTILE_ENCODING.into(),
            data: base64::engine::general_purpose::STANDARD.encode(bytes),
            clamped: frame.clamped,
            contact_area: metrics.contact_area,
            centroid: metrics.centroid,
            max_depth: metrics.max_depth,
        }
    }

    pub fn decode(&self, tick: u64) -> Result<TactileFrame, PayloadError> {
        if self.encoding != TACTILE_ENCODING {
            return Err(PayloadError::Encoding(self.encoding.clone()));
        }
        let bytes = base64::engine::general_purpose::STANDARD.decode(&self.data)?;
        let expected = self.width * self.height * 4;
        if bytes.len() != expected {
            return Err(PayloadError::Size { got: bytes.len(), expected });
        }
        let mut frame = TactileFrame::zeros(self.finger, tick, self.width, self.height);
        for (d, chunk) in frame.depth.iter_mut().zip(bytes.chunks_exact(4)) {
            *d = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        frame.clamped = self.clamped;
        Ok(frame)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the {MAX_FRAME_LEN}-byte limit")]
    TooLong(usize),
}

/// Length prefix plus body.
pub fn encode_frame(body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
    out
}

pub fn write_frame(w: &mut impl Write, body: &[u8]) -> io::Result<()> {
    w.write_all(&encode_frame(body))?;
    w.flush()
}

/// Serialize and frame one message.
pub fn write_message<T: Serialize>(w: &mut impl Write, msg: &T) -> io::Result<()> {
    let body = serde_json::to_vec(msg).map_err(io::Error::other)?;
    write_frame(w, &body)
}

/// Read one frame body; `Ok(None)` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Vec<u8>>, FrameError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(FrameError::TooLong(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}
