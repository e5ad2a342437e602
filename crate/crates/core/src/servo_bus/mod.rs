//! Servo bus: packet codec, register map, emulator and transports.

pub mod bus;
pub mod codec;
pub mod emulator;
pub mod registers;
pub mod transport;

pub use bus::{BusError, HandBus, PingInfo, ServoBus};
pub use codec::{crc16, decode_stream, encode_packet, BusPacket, CodecError, DecodeOutput, DecodeStats, Instruction};
pub use emulator::{EmulatedBus, EmulatedServo, ServoParams};
pub use transport::{SerialConfig, SerialTransport, Transport, TransportError};
