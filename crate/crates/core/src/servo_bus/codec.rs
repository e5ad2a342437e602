//! Packet framing for the v2.0 half-duplex servo protocol.
//!
//! Frame layout: `FF FF FD 00 | id | len_lo len_hi | instruction | [error] |
//! params | crc_lo crc_hi`. `len` counts everything after itself, including
//! the CRC. The instruction/error/params region is byte-stuffed so that the
//! header never appears inside it.

use std::ops::Range;

pub const HEADER: [u8; 4] = [0xFF, 0xFF, 0xFD, 0x00];
pub const BROADCAST_ID: u8 = 0xFE;
pub const MAX_DEVICE_ID: u8 = 252;
/// Bytes before the stuffed body: header, id and length.
const PREFIX_LEN: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    Ping,
    Read,
    Write,
    SyncWrite,
    Status,
}

impl Instruction {
    pub const ALL: [Instruction; 5] = [
        Instruction::Ping,
        Instruction::Read,
        Instruction::Write,
        Instruction::SyncWrite,
        Instruction::Status,
    ];

    pub const fn code(self) -> u8 {
        match self {
            Instruction::Ping => 0x01,
            Instruction::Read => 0x02,
            Instruction::Write => 0x03,
            Instruction::SyncWrite => 0x83,
            Instruction::Status => 0x55,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|i| i.code() == code)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BusPacket {
    pub id: u8,
    pub instruction: Instruction,
    pub params: Vec<u8>,
    /// Device error byte; only carried by status packets, zero otherwise.
    pub error: u8,
}

impl BusPacket {
    pub fn new(id: u8, instruction: Instruction, params: Vec<u8>) -> Self {
        Self {
            id,
            instruction,
            params,
            error: 0,
        }
    }

    pub fn ping(id: u8) -> Self {
        Self::new(id, Instruction::Ping, Vec::new())
    }

    pub fn read(id: u8, address: u16, length: u16) -> Self {
        let mut params = address.to_le_bytes().to_vec();
        params.extend_from_slice(&length.to_le_bytes());
        Self::new(id, Instruction::Read, params)
    }

    pub fn write(id: u8, address: u16, data: &[u8]) -> Self {
        let mut params = address.to_le_bytes().to_vec();
        params.extend_from_slice(data);
        Self::new(id, Instruction::Write, params)
    }

    /// Broadcast write of `len` bytes at `address` to several devices.
    pub fn sync_write(address: u16, len: u16, entries: &[(u8, Vec<u8>)]) -> Self {
        let mut params = address.to_le_bytes().to_vec();
        params.extend_from_slice(&len.to_le_bytes());
        for (id, data) in entries {
            params.push(*id);
            params.extend_from_slice(data);
        }
        Self::new(BROADCAST_ID, Instruction::SyncWrite, params)
    }

    pub fn status(id: u8, error: u8, params: Vec<u8>) -> Self {
        Self {
            id,
            instruction: Instruction::Status,
            params,
            error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("invalid device id {0}")]
    InvalidId(u8),
    #[error("error byte {0:#04x} set on a non-status packet")]
    ErrorOnRequest(u8),
    #[error("packet body of {0} bytes after stuffing does not fit the length field")]
    Oversize(usize),
}

static CRC_TABLE: [u16; 256] = build_crc_table();

const fn build_crc_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = (i as u16) << 8;
        let mut bit = 0;
        while bit < 8 {
            c = if c & 0x8000 != 0 { (c << 1) ^ 0x8005 } else { c << 1 };
            bit += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

/// CRC-16 with polynomial 0x8005, zero initial value, no reflection.
pub fn crc16(data: &[u8]) -> u16 {
    data.iter().fold(0u16, |crc, &b| {
        (crc << 8) ^ CRC_TABLE[(((crc >> 8) as u8) ^ b) as usize]
    })
}

/// Insert `FD` after every `FF FF FD` run of the input.
pub fn stuff(body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + body.len() / 3);
    for (i, &b) in body.iter().enumerate() {
        out.push(b);
        if i >= 2 && body[i - 2..=i] == [0xFF, 0xFF, 0xFD] {
            out.push(0xFD);
        }
    }
    out
}

/// Inverse of [`stuff`]; `None` if the input is not canonically stuffed.
pub fn unstuff(stuffed: &[u8]) -> Option<Vec<u8>> {
    let mut out = Vec::with_capacity(stuffed.len());
    let mut iter = stuffed.iter();
    while let Some(&b) = iter.next() {
        out.push(b);
        let n = out.len();
        if n >= 3 && out[n - 3..] == [0xFF, 0xFF, 0xFD] && iter.next() != Some(&0xFD) {
            return None;
        }
    }
    Some(out)
}

fn id_valid(id: u8, instruction: Instruction) -> bool {
    id <= MAX_DEVICE_ID || (id == BROADCAST_ID && instruction != Instruction::Status)
}

pub fn encode_packet(p: &BusPacket) -> Result<Vec<u8>, CodecError> {
    if !id_valid(p.id, p.instruction) {
        return Err(CodecError::InvalidId(p.id));
    }
    if p.instruction != Instruction::Status && p.error != 0 {
        return Err(CodecError::ErrorOnRequest(p.error));
    }
    let mut body = Vec::with_capacity(p.params.len() + 2);
    body.push(p.instruction.code());
    if p.instruction == Instruction::Status {
        body.push(p.error);
    }
    body.extend_from_slice(&p.params);
    let body = stuff(&body);
    let length = body.len() + 2;
    if length > u16::MAX as usize {
        return Err(CodecError::Oversize(body.len()));
    }

    let mut frame = Vec::with_capacity(PREFIX_LEN + length);
    frame.extend_from_slice(&HEADER);
    frame.push(p.id);
    frame.extend_from_slice(&(length as u16).to_le_bytes());
    frame.extend_from_slice(&body);
    let crc = crc16(&frame);
    frame.extend_from_slice(&crc.to_le_bytes());
    Ok(frame)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecodeStats {
    pub crc_errors: u64,
    /// Frames with a valid CRC but an unusable body or id.
    pub malformed: u64,
    /// Bytes discarded while hunting for a header.
    pub skipped_bytes: u64,
}

impl DecodeStats {
    pub fn merge(&mut self, other: &DecodeStats) {
        self.crc_errors += other.crc_errors;
        self.malformed += other.malformed;
        self.skipped_bytes += other.skipped_bytes;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeOutput {
    pub packets: Vec<BusPacket>,
    /// Input byte range each packet was decoded from.
    pub frames: Vec<Range<usize>>,
    /// Trailing bytes that may still become a frame.
    pub remainder: Vec<u8>,
    pub stats: DecodeStats,
}

enum Frame {
    Packet(BusPacket, usize),
    Partial,
    CrcError,
    Malformed,
}

fn parse_frame(buf: &[u8]) -> Frame {
    if buf.len() < PREFIX_LEN {
        return Frame::Partial;
    }
    let id = buf[4];
    let length = u16::from_le_bytes([buf[5], buf[6]]) as usize;
    if length < 3 || id == 0xFD || id == 0xFF {
        return Frame::Malformed;
    }
    let total = PREFIX_LEN + length;
    if buf.len() < total {
        return Frame::Partial;
    }
    let crc = u16::from_le_bytes([buf[total - 2], buf[total - 1]]);
    if crc16(&buf[..total - 2]) != crc {
        return Frame::CrcError;
    }
    let Some(body) = unstuff(&buf[PREFIX_LEN..total - 2]) else {
        return Frame::Malformed;
    };
    let Some(instruction) = Instruction::from_code(body[0]) else {
        return Frame::Malformed;
    };
    if !id_valid(id, instruction) {
        return Frame::Malformed;
    }
    let (error, params) = if instruction == Instruction::Status {
        match body.get(1) {
            Some(&e) => (e, body[2..].to_vec()),
            None => return Frame::Malformed,
        }
    } else {
        (0, body[1..].to_vec())
    };
    Frame::Packet(
        BusPacket {
            id,
            instruction,
            params,
            error,
        },
        total,
    )
}

fn find_header(buf: &[u8], from: usize) -> Option<usize> {
    buf.get(from..)?
        .windows(HEADER.len())
        .position(|w| w == HEADER)
        .map(|p| p + from)
}

/// Length of the longest suffix of `buf` that is a proper prefix of the header.
fn header_prefix_suffix(buf: &[u8]) -> usize {
    (1..HEADER.len())
        .rev()
        .find(|&n| buf.len() >= n && buf[buf.len() - n..] == HEADER[..n])
        .unwrap_or(0)
}

/// Extract every well-formed frame from `bytes`. Never fails: corrupt frames
/// are counted and skipped, and a trailing incomplete frame is returned as
/// the remainder.
pub fn decode_stream(bytes: &[u8]) -> DecodeOutput {
    let mut out = DecodeOutput::default();
    let mut pos = 0;
    loop {
        let Some(start) = find_header(bytes, pos) else {
            let keep = header_prefix_suffix(&bytes[pos..]);
            out.stats.skipped_bytes += (bytes.len() - pos - keep) as u64;
            out.remainder = bytes[bytes.len() - keep..].to_vec();
            return out;
        };
        out.stats.skipped_bytes += (start - pos) as u64;
        match parse_frame(&bytes[start..]) {
            Frame::Packet(packet, len) => {
                out.packets.push(packet);
                out.frames.push(start..start + len);
                pos = start + len;
            }
            Frame::Partial => {
                out.remainder = bytes[start..].to_vec();
                return out;
            }
            Frame::CrcError => {
                out.stats.crc_errors += 1;
                out.stats.skipped_bytes += 1;
                pos = start + 1;
            }
            Frame::Malformed => {
                out.stats.malformed += 1;
                out.stats.skipped_bytes += 1;
                pos = start + 1;
            }
        }
    }
}
