//! Summary-statistics protocol between data computers and the analysis computer.

pub mod messages;
pub mod nodes;
pub mod protocol;
pub mod transport;
pub mod wire;

pub use messages::{
    BoundaryPayload, BroadcastCoefficients, MessageEnvelope, OneShotSummary, Payload, Round, Round1Summary,
    Round2Summary, PROTOCOL_VERSION,
};
pub use nodes::{ac_integrate, dc_round1, dc_round2};
pub use protocol::{run_protocol, DataComputer, ProtocolConfig, ProtocolOutput};
pub use transport::{FileTransport, MemoryTransport, Slot, Transport};
pub use wire::{deserialize, serialize};
