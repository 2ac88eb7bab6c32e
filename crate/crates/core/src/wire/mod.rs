//! Message framing and transports shared by both parties.

pub mod message;
pub mod transport;

pub use message::{decode, encode, Abort, Body, Hello, Message, MessageType, ScheduleAck, PROTOCOL_VERSION};
pub use transport::{Direction, Loopback, TcpTransport, Transport, TransportStats};
