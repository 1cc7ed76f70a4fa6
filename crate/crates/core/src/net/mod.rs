//! Wire protocol and session orchestration: length-prefixed framing, the
//! channel abstraction shared by the in-memory and TCP transports, and the
//! client/server halves of the classification session.

pub mod channel;
pub mod frame;
mod session;

pub use channel::{Dir, FrameChannel, InMemoryChannel, RecordingChannel, TcpChannel};
pub use frame::{
    frame_decode, frame_encode, read_frame, write_frame, Frame, MessageType, MAX_PAYLOAD,
    PROTOCOL_VERSION,
};
pub use session::{run_client, run_server, spawn_server, ServerHandle, ServerReport};
