//! Byte transports for the servo bus.

use std::io::{Read, Write};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::codec::decode_stream;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("transport i/o: {0}")]
    Io(String),
    #[error("no reply within {0:?}")]
    Timeout(Duration),
}

/// A half-duplex channel: write a request, then collect reply bytes.
pub trait Transport: Send {
    /// Send `request` and return whatever bytes arrive until
    /// `expected_replies` complete frames are seen or the transport gives up.
    fn transact(&mut self, request: &[u8], expected_replies: usize) -> Result<Vec<u8>, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn transact(&mut self, request: &[u8], expected_replies: usize) -> Result<Vec<u8>, TransportError> {
        (**self).transact(request, expected_replies)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SerialConfig {
    pub device: String,
    pub baud: u32,
    pub timeout_ms: u64,
}

impl Default for SerialConfig {
    fn default() -> Self {
        Self {
            device: "/dev/ttyUSB0".into(),
            baud: 57_600,
            timeout_ms: 50,
        }
    }
}

/// Raw serial line to real servos (e.g. through a USB half-duplex adapter).
pub struct SerialTransport {
    port: Box<dyn serialport::SerialPort>,
    timeout: Duration,
}

impl SerialTransport {
    pub fn open(cfg: &SerialConfig) -> Result<Self, TransportError> {
        let timeout = Duration::from_millis(cfg.timeout_ms.max(1));
        let port = serialport::new(&cfg.device, cfg.baud)
            .timeout(Duration::from_millis(5))
            .open()
            .map_err(|e| TransportError::Io(format!("{}: {e}", cfg.device)))?;
        Ok(Self { port, timeout })
    }
}

impl Transport for SerialTransport {
    fn transact(&mut self, request: &[u8], expected_replies: usize) -> Result<Vec<u8>, TransportError> {
        let io = |e: std::io::Error| TransportError::Io(e.to_string());
        self.port
            .clear(serialport::ClearBuffer::Input)
            .map_err(|e| TransportError::Io(e.to_string()))?;
        self.port.write_all(request).map_err(io)?;
        self.port.flush().map_err(io)?;
        let mut received = Vec::new();
        if expected_replies == 0 {
            return Ok(received);
        }
        let deadline = Instant::now() + self.timeout;
        let mut buf = [0u8; 256];
        while Instant::now() < deadline {
            match self.port.read(&mut buf) {
                Ok(n) => received.extend_from_slice(&buf[..n]),
                Err(e) if e.kind() == std::io::ErrorKind::TimedOut => {}
                Err(e) => return Err(io(e)),
            }
            // Half-duplex adapters echo the request; decoding skips it as a
            // non-status frame.
            let decoded = decode_stream(&received);
            let replies = decoded
                .packets
                .iter()
                .filter(|p| p.instruction == super::codec::Instruction::Status)
                .count();
            if replies >= expected_replies {
                return Ok(received);
            }
        }
        if received.is_empty() {
            Err(TransportError::Timeout(self.timeout))
        } else {
            Ok(received)
        }
    }
}
