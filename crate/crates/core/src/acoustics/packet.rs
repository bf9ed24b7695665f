//! Acoustic wire formats.
//!
//! Every frame starts with a two-byte header: `(version << 4) | kind` and the
//! source beacon id. Multi-byte fields are little-endian.
//!
//! | kind | code | body after header                                   | frame |
//! |------|------|-----------------------------------------------------|-------|
//! | POLL | 1    | dst u8                                              | 3 B   |
//! | STATUS | 2  | 28-byte status record                               | 30 B  |
//! | CMD_ABORT | 3 | dst u8                                            | 3 B   |
//! | CMD_WAYPOINT | 4 | target u8, x f32, y f32, depth u16 cm, speed u8 dm/s | 14 B |
//!
//! Status record: id u8, bitmask u8, x/y/z/roll/pitch/yaw f32, depth u16 cm.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_FRAME_LEN: usize = 30;
pub const STATUS_RECORD_LEN: usize = 28;
pub const HEADER_LEN: usize = 2;
pub const WIRE_VERSION: u8 = 1;
pub const BROADCAST: u8 = 0xFF;
/// Largest depth the centimeter field can carry (m).
pub const MAX_STATUS_DEPTH: f64 = u16::MAX as f64 / 100.0;
/// Largest speed the decimeter-per-second field can carry (m/s).
pub const MAX_COMMAND_SPEED: f64 = u8::MAX as f64 / 10.0;

/// Status bitmask flags.
pub mod bits {
    pub const LEAK: u8 = 1 << 0;
    pub const LOW_BATTERY: u8 = 1 << 1;
    pub const GPS_FIX: u8 = 1 << 2;
    pub const DVL_VALID: u8 = 1 << 3;
    pub const MISSION_RUNNING: u8 = 1 << 4;
    pub const ABORT_ACK: u8 = 1 << 5;
    pub const WAYPOINT_ACK: u8 = 1 << 6;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("field {field} out of range: {value}")]
    FieldOutOfRange { field: &'static str, value: f64 },
    #[error("wrong length: expected {expected} bytes, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("unknown packet kind {0}")]
    UnknownKind(u8),
    #[error("unsupported wire version {0}")]
    UnsupportedVersion(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StatusRecord {
    pub id: u8,
    pub bitmask: u8,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    /// Depth sensor reading (m).
    pub depth: f64,
}

fn f32_field(field: &'static str, v: f64) -> Result<[u8; 4], CodecError> {
    if !v.is_finite() || v.abs() > f32::MAX as f64 {
        return Err(CodecError::FieldOutOfRange { field, value: v });
    }
    Ok((v as f32).to_le_bytes())
}

fn cm_field(field: &'static str, v: f64) -> Result<[u8; 2], CodecError> {
    let cm = (v * 100.0).round();
    if !v.is_finite() || cm < 0.0 || cm > u16::MAX as f64 {
        return Err(CodecError::FieldOutOfRange { field, value: v });
    }
    Ok((cm as u16).to_le_bytes())
}

fn read_f32(b: &[u8], at: usize) -> f64 {
    f32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]]) as f64
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

impl StatusRecord {
    pub fn encode(&self) -> Result<[u8; STATUS_RECORD_LEN], CodecError> {
        let mut out = [0u8; STATUS_RECORD_LEN];
        out[0] = self.id;
        out[1] = self.bitmask;
        let fields = [
            ("x", self.x),
            ("y", self.y),
            ("z", self.z),
            ("roll", self.roll),
            ("pitch", self.pitch),
            ("yaw", self.yaw),
        ];
        for (k, (name, v)) in fields.into_iter().enumerate() {
            out[2 + 4 * k..6 + 4 * k].copy_from_slice(&f32_field(name, v)?);
        }
        out[26..28].copy_from_slice(&cm_field("depth", self.depth)?);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() != STATUS_RECORD_LEN {
            return Err(CodecError::WrongLength {
                expected: STATUS_RECORD_LEN,
                got: bytes.len(),
            });
        }
        Ok(Self {
            id: bytes[0],
            bitmask: bytes[1],
            x: read_f32(bytes, 2),
            y: read_f32(bytes, 6),
            z: read_f32(bytes, 10),
            roll: read_f32(bytes, 14),
            pitch: read_f32(bytes, 18),
            yaw: read_f32(bytes, 22),
            depth: read_u16(bytes, 26) as f64 / 100.0,
        })
    }

    /// The record as it reads after an encode/decode round trip.
    pub fn quantized(&self) -> Result<Self, CodecError> {
        Self::decode(&self.encode()?)
    }

    pub fn has(&self, flag: u8) -> bool {
        self.bitmask & flag != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaypointCommand {
    pub target: u8,
    pub x: f64,
    pub y: f64,
    pub depth: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketKind {
    Poll,
    Status,
    CmdAbort,
    CmdWaypoint,
}

impl PacketKind {
    fn code(self) -> u8 {
        match self {
            PacketKind::Poll => 1,
            PacketKind::Status => 2,
            PacketKind::CmdAbort => 3,
            PacketKind::CmdWaypoint => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PacketBody {
    Poll { dst: u8 },
    Status(StatusRecord),
    CmdAbort { dst: u8 },
    CmdWaypoint(WaypointCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcousticPacket {
    pub src: u8,
    pub body: PacketBody,
}

impl AcousticPacket {
    pub fn kind(&self) -> PacketKind {
        match self.body {
            PacketBody::Poll { .. } => PacketKind::Poll,
            PacketBody::Status(_) => PacketKind::Status,
            PacketBody::CmdAbort { .. } => PacketKind::CmdAbort,
            PacketBody::CmdWaypoint(_) => PacketKind::CmdWaypoint,
        }
    }

    /// Addressee; statuses are broadcast.
    pub fn dst(&self) -> u8 {
        match self.body {
            PacketBody::Poll { dst } | PacketBody::CmdAbort { dst } => dst,
            PacketBody::Status(_) => BROADCAST,
            PacketBody::CmdWaypoint(w) => w.target,
        }
    }

    pub fn is_for(&self, beacon: u8) -> bool {
        let d = self.dst();
        d == beacon || d == BROADCAST
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let mut out = Vec::with_capacity(MAX_FRAME_LEN);
        out.push((WIRE_VERSION << 4) | self.kind().code());
        out.push(self.src);
        match &self.body {
            PacketBody::Poll { dst } | PacketBody::CmdAbort { dst } => out.push(*dst),
            PacketBody::Status(rec) => {
                if rec.id != self.src {
                    return Err(CodecError::FieldOutOfRange {
                        field: "id",
                        value: rec.id as f64,
                    });
                }
                out.extend_from_slice(&rec.encode()?);
            }
            PacketBody::CmdWaypoint(w) => {
                out.push(w.target);
                out.extend_from_slice(&f32_field("x", w.x)?);
                out.extend_from_slice(&f32_field("y", w.y)?);
                out.extend_from_slice(&cm_field("depth", w.depth)?);
                let dm = (w.speed * 10.0).round();
                if !w.speed.is_finite() || !(0.0..=u8::MAX as f64).contains(&dm) {
                    return Err(CodecError::FieldOutOfRange {
                        field: "speed",
                        value: w.speed,
                    });
                }
                out.push(dm as u8);
            }
        }
        debug_assert!(out.len() <= MAX_FRAME_LEN);
        Ok(out)
    }

    pub fn decode(frame: &[u8]) -> Result<Self, CodecError> {
        if frame.len() < HEADER_LEN {
            return Err(CodecError::WrongLength {
                expected: HEADER_LEN,
                got: frame.len(),
            });
        }
        let version = frame[0] >> 4;
        if version != WIRE_VERSION {
            return Err(CodecError::UnsupportedVersion(version));
        }
        let src = frame[1];
        let body = &frame[HEADER_LEN..];
        let expect = |n: usize| {
            if body.len() == n {
                Ok(())
            } else {
                Err(CodecError::WrongLength {
                    expected: HEADER_LEN + n,
                    got: frame.len(),
                })
            }
        };
        let body = match frame[0] & 0x0F {
            1 => {
                expect(1)?;
                PacketBody::Poll { dst: body[0] }
            }
            2 => {
                expect(STATUS_RECORD_LEN)?;
                PacketBody::Status(StatusRecord::decode(body)?)
            }
            3 => {
                expect(1)?;
                PacketBody::CmdAbort { dst: body[0] }
            }
            4 => {
                expect(12)?;
                PacketBody::CmdWaypoint(WaypointCommand {
                    target: body[0],
                    x: read_f32(body, 1),
                    y: read_f32(body, 5),
                    depth: read_u16(body, 9) as f64 / 100.0,
                    speed: body[11] as f64 / 10.0,
                })
            }
            k => return Err(CodecError::UnknownKind(k)),
        };
        Ok(Self { src, body })
    }
}
