use std::collections::VecDeque;
use std::io::{self, BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use crate::protocol::{
    read_frame, write_message, ClientMessage, CommandKind, CommandMessage, FrameError, ServerMessage,
    TelemetryMessage,
};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("connect to {addr}: {source}")]
    Connect {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("bad message from service: {0}")]
    Decode(#[from] serde_json::Error),
    #[error("service closed the connection")]
    Closed,
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Outcome of one request.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Ack { tick: u64 },
    Reject { reason: String },
}

/// Blocking client. Telemetry that arrives while waiting for a reply is
/// queued and handed out by [`Client::next_telemetry`].
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    next_id: u64,
    pending: VecDeque<TelemetryMessage>,
}

impl Client {
    pub fn connect(addr: &str) -> Result<Self, ClientError> {
        let connect_err = |source| ClientError::Connect { addr: addr.to_string(), source };
        let target = addr
            .to_socket_addrs()
            .map_err(connect_err)?
            .next()
            .ok_or_else(|| connect_err(io::Error::new(io::ErrorKind::NotFound, "no address")))?;
        let stream = TcpStream::connect_timeout(&target, Duration::from_secs(5)).map_err(connect_err)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            next_id: 1,
            pending: VecDeque::new(),
        })
    }

    pub fn send(&mut self, msg: &ClientMessage) -> Result<(), ClientError> {
        write_message(&mut self.writer, msg)?;
        Ok(())
    }

    pub fn subscribe(&mut self, decimation: Option<u32>, tactile: bool) -> Result<(), ClientError> {
        self.send(&ClientMessage::Subscribe { decimation, tactile })
    }

    /// Read the next message, giving up after `timeout`.
    pub fn recv(&mut self, timeout: Duration) -> Result<ServerMessage, ClientError> {
        self.reader.get_ref().set_read_timeout(Some(timeout))?;
        match read_frame(&mut self.reader) {
            Ok(Some(body)) => Ok(serde_json::from_slice(&body)?),
            Ok(None) => Err(ClientError::Closed),
            Err(FrameError::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                Err(ClientError::Timeout(timeout))
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Send a command and wait for its ack or rejection.
    pub fn request(&mut self, command: CommandKind, timeout: Duration) -> Result<Reply, ClientError> {
        let id = self.next_id;
        self.next_id += 1;
        self.send(&ClientMessage::Command(CommandMessage { id, command }))?;
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(ClientError::Timeout(timeout));
            }
            match self.recv(left)? {
                ServerMessage::Ack { id: got, tick } if got == id => return Ok(Reply::Ack { tick }),
                ServerMessage::Reject { id: got, reason } if got == id => return Ok(Reply::Reject { reason }),
                ServerMessage::ProtocolError { message, .. } => return Err(ClientError::Protocol(message)),
                ServerMessage::Telemetry(t) => self.pending.push_back(t),
                _ => {}
            }
        }
    }

    /// Next telemetry message, queued or fresh.
    pub fn next_telemetry(&mut self, timeout: Duration) -> Result<TelemetryMessage, ClientError> {
        if let Some(t) = self.pending.pop_front() {
            return Ok(t);
        }
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(ClientError::Timeout(timeout));
            }
            match self.recv(left)? {
                ServerMessage::Telemetry(t) => return Ok(t),
                ServerMessage::ProtocolError { message, .. } => return Err(ClientError::Protocol(message)),
                _ => {}
            }
        }
    }
}
