//! Acoustic communications: wire formats, the shared channel, the polling
//! protocol and angle-of-arrival generation.

pub mod aoa;
pub mod channel;
pub mod packet;
pub mod protocol;

pub use aoa::{bearing, compute_aoa, project, AoaMeasurement};
pub use channel::{Beacon, Channel, ChannelParams, ChannelStats, LossReason, Reception, Transmission};
pub use packet::{bits, AcousticPacket, CodecError, PacketBody, PacketKind, StatusRecord, WaypointCommand, BROADCAST, MAX_FRAME_LEN, STATUS_RECORD_LEN};
pub use protocol::{BaseStation, LeadPoller, LeadSlot, QueuedCommand, Responder, TxGate, VehicleAction};
