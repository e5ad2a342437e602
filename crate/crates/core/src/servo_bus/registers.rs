//! Emulated subset of the XM430-class control table.

use std::fmt;

pub const MODEL_NUMBER: u16 = 0;
pub const FIRMWARE_VERSION: u16 = 6;
pub const ID: u16 = 7;
pub const OPERATING_MODE: u16 = 11;
pub const CURRENT_LIMIT: u16 = 38;
pub const MAX_POSITION_LIMIT: u16 = 48;
pub const MIN_POSITION_LIMIT: u16 = 52;
pub const TORQUE_ENABLE: u16 = 64;
pub const GOAL_CURRENT: u16 = 102;
pub const GOAL_POSITION: u16 = 116;
pub const PRESENT_CURRENT: u16 = 126;
pub const PRESENT_VELOCITY: u16 = 128;
pub const PRESENT_POSITION: u16 = 132;

pub const XM430_W210_MODEL: u16 = 1030;
pub const FIRMWARE: u8 = 45;

/// Position resolution: 4096 counts per revolution.
pub const DEGREES_PER_COUNT: f64 = 360.0 / 4096.0;
/// Velocity register unit, rev/min.
pub const RPM_PER_VELOCITY_UNIT: f64 = 0.229;

/// Device error codes carried in status packets.
pub mod device_error {
    pub const RESULT_FAIL: u8 = 0x01;
    pub const INSTRUCTION: u8 = 0x02;
    pub const CRC: u8 = 0x03;
    pub const DATA_RANGE: u8 = 0x04;
    pub const DATA_LENGTH: u8 = 0x05;
    pub const DATA_LIMIT: u8 = 0x06;
    pub const ACCESS: u8 = 0x07;

    pub fn describe(code: u8) -> &'static str {
        match code & 0x7F {
            RESULT_FAIL => "result fail",
            INSTRUCTION => "instruction error",
            CRC => "crc error",
            DATA_RANGE => "data range error",
            DATA_LENGTH => "data length error",
            DATA_LIMIT => "data limit error",
            ACCESS => "access error",
            _ => "unknown error",
        }
    }
}

pub fn degrees_to_counts(deg: f64) -> i32 {
    (deg / DEGREES_PER_COUNT).round() as i32
}

pub fn counts_to_degrees(counts: i32) -> f64 {
    counts as f64 * DEGREES_PER_COUNT
}

pub fn velocity_to_units(deg_per_s: f64) -> i32 {
    (deg_per_s / 6.0 / RPM_PER_VELOCITY_UNIT).round() as i32
}

pub fn units_to_velocity(units: i32) -> f64 {
    units as f64 * RPM_PER_VELOCITY_UNIT * 6.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OperatingMode {
    Current = 0,
    #[default]
    Position = 3,
}

impl OperatingMode {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(OperatingMode::Current),
            3 => Some(OperatingMode::Position),
            _ => None,
        }
    }
}

impl fmt::Display for OperatingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OperatingMode::Current => "current",
            OperatingMode::Position => "position",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Access {
    ReadOnly,
    ReadWrite,
}

#[derive(Debug, Clone, Copy)]
struct Field {
    address: u16,
    size: u16,
    access: Access,
}

const FIELDS: [Field; 13] = [
    Field { address: MODEL_NUMBER, size: 2, access: Access::ReadOnly },
    Field { address: FIRMWARE_VERSION, size: 1, access: Access::ReadOnly },
    Field { address: ID, size: 1, access: Access::ReadOnly },
    Field { address: OPERATING_MODE, size: 1, access: Access::ReadWrite },
    Field { address: CURRENT_LIMIT, size: 2, access: Access::ReadOnly },
    Field { address: MAX_POSITION_LIMIT, size: 4, access: Access::ReadOnly },
    Field { address: MIN_POSITION_LIMIT, size: 4, access: Access::ReadOnly },
    Field { address: TORQUE_ENABLE, size: 1, access: Access::ReadWrite },
    Field { address: GOAL_CURRENT, size: 2, access: Access::ReadWrite },
    Field { address: GOAL_POSITION, size: 4, access: Access::ReadWrite },
    Field { address: PRESENT_CURRENT, size: 2, access: Access::ReadOnly },
    Field { address: PRESENT_VELOCITY, size: 4, access: Access::ReadOnly },
    Field { address: PRESENT_POSITION, size: 4, access: Access::ReadOnly },
];

fn field_at(address: u16) -> Option<&'static Field> {
    FIELDS.iter().find(|f| f.address == address)
}

fn field_containing(address: u16) -> Option<&'static Field> {
    FIELDS
        .iter()
        .find(|f| address >= f.address && address < f.address + f.size)
}

/// Register state of one servo.
#[derive(Debug, Clone, PartialEq)]
pub struct RegisterMap {
    pub id: u8,
    pub model_number: u16,
    pub firmware_version: u8,
    pub operating_mode: OperatingMode,
    pub current_limit: u16,
    pub max_position_limit: i32,
    pub min_position_limit: i32,
    pub torque_enable: bool,
    pub goal_current: i16,
    pub goal_position: i32,
    pub present_current: i16,
    pub present_velocity: i32,
    pub present_position: i32,
}

impl RegisterMap {
    pub fn new(id: u8, min_position_limit: i32, max_position_limit: i32, current_limit: u16) -> Self {
        Self {
            id,
            model_number: XM430_W210_MODEL,
            firmware_version: FIRMWARE,
            operating_mode: OperatingMode::Position,
            current_limit,
            max_position_limit,
            min_position_limit,
            torque_enable: false,
            goal_current: 0,
            goal_position: 0,
            present_current: 0,
            present_velocity: 0,
            present_position: 0,
        }
    }

    fn field_bytes(&self, address: u16) -> Vec<u8> {
        match address {
            MODEL_NUMBER => self.model_number.to_le_bytes().to_vec(),
            FIRMWARE_VERSION => vec![self.firmware_version],
            ID => vec![self.id],
            OPERATING_MODE => vec![self.operating_mode as u8],
            CURRENT_LIMIT => self.current_limit.to_le_bytes().to_vec(),
            MAX_POSITION_LIMIT => self.max_position_limit.to_le_bytes().to_vec(),
            MIN_POSITION_LIMIT => self.min_position_limit.to_le_bytes().to_vec(),
            TORQUE_ENABLE => vec![self.torque_enable as u8],
            GOAL_CURRENT => self.goal_current.to_le_bytes().to_vec(),
            GOAL_POSITION => self.goal_position.to_le_bytes().to_vec(),
            PRESENT_CURRENT => self.present_current.to_le_bytes().to_vec(),
            PRESENT_VELOCITY => self.present_velocity.to_le_bytes().to_vec(),
            PRESENT_POSITION => self.present_position.to_le_bytes().to_vec(),
            _ => unreachable!("address {address} is not a field start"),
        }
    }

    /// Read `len` bytes from `address`. Bytes outside the emulated fields
    /// read as zero; the return flag reports whether any did.
    pub fn read(&self, address: u16, len: u16) -> (Vec<u8>, bool) {
        let mut unknown = false;
        let bytes = (0..len)
            .map(|k| {
                let a = address.wrapping_add(k);
                match field_containing(a) {
                    Some(f) => self.field_bytes(f.address)[(a - f.address) as usize],
                    None => {
                        unknown = true;
                        0
                    }
                }
            })
            .collect();
        (bytes, unknown)
    }

    /// Write whole fields starting at `address`. All-or-nothing; returns a
    /// device error code on refusal.
    pub fn write(&mut self, address: u16, data: &[u8]) -> Result<(), u8> {
        use device_error::*;
        if data.is_empty() {
            return Err(DATA_LENGTH);
        }
        let mut staged = self.clone();
        let mut offset = 0usize;
        while offset < data.len() {
            let a = address as usize + offset;
            let field = u16::try_from(a).ok().and_then(field_at).ok_or(ACCESS)?;
            if field.access == Access::ReadOnly {
                return Err(ACCESS);
            }
            let size = field.size as usize;
            let chunk = data.get(offset..offset + size).ok_or(DATA_LENGTH)?;
            staged.write_field(field.address, chunk)?;
            offset += size;
        }
        *self = staged;
        Ok(())
    }

    fn write_field(&mut self, address: u16, chunk: &[u8]) -> Result<(), u8> {
        use device_error::*;
        match address {
            OPERATING_MODE => {
                if self.torque_enable {
                    return Err(ACCESS);
                }
                self.operating_mode = OperatingMode::from_byte(chunk[0]).ok_or(DATA_RANGE)?;
            }
            TORQUE_ENABLE => {
                self.torque_enable = match chunk[0] {
                    0 => false,
                    1 => true,
                    _ => return Err(DATA_RANGE),
                };
            }
            GOAL_CURRENT => {
                let v = i16::from_le_bytes([chunk[0], chunk[1]]);
                if v.unsigned_abs() > self.current_limit {
                    return Err(DATA_LIMIT);
                }
                self.goal_current = v;
            }
            GOAL_POSITION => {
                let v = i32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                if v < self.min_position_limit || v > self.max_position_limit {
                    return Err(DATA_LIMIT);
                }
                self.goal_position = v;
            }
            _ => return Err(ACCESS),
        }
        Ok(())
    }
}
