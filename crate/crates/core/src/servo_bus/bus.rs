//! Request/response client and the two-servo hand adapter.

use super::codec::{decode_stream, encode_packet, BusPacket, CodecError, DecodeStats, Instruction};
use super::emulator::{F1_SERVO_ID, FLIPPER_SERVO_ID};
use super::registers::{self, counts_to_degrees, degrees_to_counts, device_error, OperatingMode};
use super::transport::{Transport, TransportError};
use crate::grasp_controller::{ActuatorCommand, JointCommand};
use crate::hand_model::{ControlMode, HandError, HandGeometry, Joint, JointState};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BusError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("servo {id} did not reply")]
    NoReply { id: u8 },
    #[error("servo {id} reported {} ({error:#04x})", device_error::describe(*error))]
    Device { id: u8, error: u8 },
    #[error("unexpected reply from servo {id}: {detail}")]
    Unexpected { id: u8, detail: String },
    #[error(transparent)]
    Limit(#[from] HandError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PingInfo {
    pub model_number: u16,
    pub firmware_version: u8,
}

/// One transaction at a time over a [`Transport`].
pub struct ServoBus<T> {
    transport: T,
    stats: DecodeStats,
}

impl<T: Transport> ServoBus<T> {
    pub fn new(transport: T) -> Self {
        Self {
            transport,
            stats: DecodeStats::default(),
        }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn transport_mut(&mut self) -> &mut T {
        &mut self.transport
    }

    pub fn stats(&self) -> DecodeStats {
        self.stats
    }

    fn request(&mut self, packet: &BusPacket) -> Result<BusPacket, BusError> {
        let bytes = encode_packet(packet)?;
        let raw = self.transport.transact(&bytes, 1)?;
        let decoded = decode_stream(&raw);
        self.stats.merge(&decoded.stats);
        let status = decoded
            .packets
            .into_iter()
            .find(|p| p.instruction == Instruction::Status && p.id == packet.id)
            .ok_or(BusError::NoReply { id: packet.id })?;
        if status.error & 0x7F != 0 {
            return Err(BusError::Device {
                id: packet.id,
                error: status.error,
            });
        }
        Ok(status)
    }

    pub fn ping(&mut self, id: u8) -> Result<PingInfo, BusError> {
        let status = self.request(&BusPacket::ping(id))?;
        match status.params[..] {
            [lo, hi, fw] => Ok(PingInfo {
                model_number: u16::from_le_bytes([lo, hi]),
                firmware_version: fw,
            }),
            _ => Err(BusError::Unexpected {
                id,
                detail: format!("ping reply with {} bytes", status.params.len()),
            }),
        }
    }

    pub fn read(&mut self, id: u8, address: u16, len: u16) -> Result<Vec<u8>, BusError> {
        let status = self.request(&BusPacket::read(id, address, len))?;
        if status.params.len() != len as usize {
            return Err(BusError::Unexpected {
                id,
                detail: format!("asked for {len} bytes, got {}", status.params.len()),
            });
        }
        Ok(status.params)
    }

    pub fn read_i32(&mut self, id: u8, address: u16) -> Result<i32, BusError> {
        let b = self.read(id, address, 4)?;
        Ok(i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn read_i16(&mut self, id: u8, address: u16) -> Result<i16, BusError> {
        let b = self.read(id, address, 2)?;
        Ok(i16::from_le_bytes([b[0], b[1]]))
    }

    pub fn write(&mut self, id: u8, address: u16, data: &[u8]) -> Result<(), BusError> {
        self.request(&BusPacket::write(id, address, data)).map(|_| ())
    }

    /// Broadcast write; no replies are expected.
    pub fn sync_write(&mut self, address: u16, len: u16, entries: &[(u8, Vec<u8>)]) -> Result<(), BusError> {
        let bytes = encode_packet(&BusPacket::sync_write(address, len, entries))?;
        self.transport.transact(&bytes, 0)?;
        Ok(())
    }
}

/// Joint-level view of the Finger 1 and flipper servos.
pub struct HandBus<T> {
    bus: ServoBus<T>,
    geom: HandGeometry,
    torque_per_current_unit: f64,
    modes: [Option<ControlMode>; 2],
}

fn servo_id(joint: Joint) -> u8 {
    match joint {
        Joint::F1 => F1_SERVO_ID,
        Joint::Flipper => FLIPPER_SERVO_ID,
    }
}

fn joint_index(joint: Joint) -> usize {
    match joint {
        Joint::F1 => 0,
        Joint::Flipper => 1,
    }
}

impl<T: Transport> HandBus<T> {
    pub fn new(transport: T, geom: HandGeometry, torque_per_current_unit: f64) -> Self {
        Self {
            bus: ServoBus::new(transport),
            geom,
            torque_per_current_unit,
            modes: [None, None],
        }
    }

    pub fn bus(&self) -> &ServoBus<T> {
        &self.bus
    }

    pub fn bus_mut(&mut self) -> &mut ServoBus<T> {
        &mut self.bus
    }

    pub fn transport_mut(&mut self) -> &mut T {
        self.bus.transport_mut()
    }

    pub fn geometry(&self) -> &HandGeometry {
        &self.geom
    }

    /// Ping both servos and put them in position mode with torque on.
    pub fn init(&mut self) -> Result<(), BusError> {
        for joint in [Joint::F1, Joint::Flipper] {
            let id = servo_id(joint);
            let info = self.bus.ping(id)?;
            log::info!("servo {id}: model {} firmware {}", info.model_number, info.firmware_version);
            self.modes[joint_index(joint)] = None;
            self.set_mode(joint, ControlMode::Position)?;
        }
        Ok(())
    }

    fn set_mode(&mut self, joint: Joint, mode: ControlMode) -> Result<(), BusError> {
        let idx = joint_index(joint);
        if self.modes[idx] == Some(mode) {
            return Ok(());
        }
        let id = servo_id(joint);
        let op = match mode {
            ControlMode::Position => OperatingMode::Position,
            ControlMode::Torque => OperatingMode::Current,
        };
        if mode == ControlMode::Position {
            // Hold where the joint is, so enabling torque does not jump.
            let here = self.bus.read_i32(id, registers::PRESENT_POSITION)?;
            self.bus.write(id, registers::TORQUE_ENABLE, &[0])?;
            self.bus.write(id, registers::OPERATING_MODE, &[op as u8])?;
            self.bus.write(id, registers::GOAL_POSITION, &here.to_le_bytes())?;
        } else {
            self.bus.write(id, registers::TORQUE_ENABLE, &[0])?;
            self.bus.write(id, registers::OPERATING_MODE, &[op as u8])?;
            self.bus.write(id, registers::GOAL_CURRENT, &0i16.to_le_bytes())?;
        }
        self.bus.write(id, registers::TORQUE_ENABLE, &[1])?;
        self.modes[idx] = Some(mode);
        Ok(())
    }

    fn apply_joint(&mut self, joint: Joint, cmd: &JointCommand) -> Result<(), BusError> {
        self.set_mode(joint, cmd.mode)?;
        let id = servo_id(joint);
        match cmd.mode {
            ControlMode::Position => {
                self.geom.check_limit(joint, cmd.position)?;
                let counts = degrees_to_counts(cmd.position * self.geom.gear_ratio(joint));
                self.bus.write(id, registers::GOAL_POSITION, &counts.to_le_bytes())
            }
            ControlMode::Torque => {
                let units = (cmd.torque / self.torque_per_current_unit).round();
                let units = units.clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                self.bus.write(id, registers::GOAL_CURRENT, &units.to_le_bytes())
            }
        }
    }

    pub fn apply(&mut self, cmd: &ActuatorCommand) -> Result<(), BusError> {
        self.apply_joint(Joint::F1, &cmd.f1)?;
        self.apply_joint(Joint::Flipper, &cmd.flipper)
    }

    /// Joint angles read from the servos. Quantization can put a joint
    /// resting on a hard stop a fraction of a count outside its range, so
    /// readings within one count of a limit are clamped onto it.
    pub fn read_state(&mut self) -> Result<JointState, BusError> {
        let mut state = JointState::default();
        for joint in [Joint::F1, Joint::Flipper] {
            let id = servo_id(joint);
            let gear = self.geom.gear_ratio(joint);
            let counts = self.bus.read_i32(id, registers::PRESENT_POSITION)?;
            let mut angle = counts_to_degrees(counts) / gear;
            let range = self.geom.range(joint);
            let slack = registers::DEGREES_PER_COUNT / gear;
            if angle < range.min && angle >= range.min - slack {
                angle = range.min;
            } else if angle > range.max && angle <= range.max + slack {
                angle = range.max;
            }
            let mode = self.modes[joint_index(joint)].unwrap_or_default();
            match joint {
                Joint::F1 => {
                    state.f1_angle = angle;
                    state.f1_mode = mode;
                    if mode == ControlMode::Torque {
                        let units = self.bus.read_i16(id, registers::GOAL_CURRENT)?;
                        state.f1_torque_setpoint = units as f64 * self.torque_per_current_unit * gear;
                    }
                }
                Joint::Flipper => {
                    state.flipper_angle = angle;
                    state.flipper_mode = mode;
                }
            }
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::servo_bus::emulator::{EmulatedBus, ServoParams};

    fn hand() -> HandBus<EmulatedBus> {
        let geom = HandGeometry::calibrated();
        let emu = EmulatedBus::for_hand(&geom, ServoParams::default(), &JointState::at(0.0, 0.0));
        let mut hb = HandBus::new(emu, geom, ServoParams::default().torque_per_current_unit);
        hb.init().unwrap();
        hb
    }

    #[test]
    fn position_commands_move_joints() {
        let mut hb = hand();
        let cmd = ActuatorCommand {
            f1: JointCommand::position(40.0),
            flipper: JointCommand::position(-46.0),
        };
        hb.apply(&cmd).unwrap();
        for _ in 0..200 {
            hb.transport_mut().step(0.01, &[]);
        }
        let s = hb.read_state().unwrap();
        assert!((s.f1_angle - 40.0).abs() < 0.05, "{}", s.f1_angle);
        assert!((s.flipper_angle + 46.0).abs() < 0.1, "{}", s.flipper_angle);
    }

    #[test]
    fn out_of_range_rejected_before_bus() {
        let mut hb = hand();
        let cmd = ActuatorCommand {
            f1: JointCommand::position(101.0),
            flipper: JointCommand::position(0.0),
        };
        assert!(matches!(hb.apply(&cmd), Err(BusError::Limit(_))));
    }

    #[test]
    fn torque_mode_closes_to_hard_stop() {
        let mut hb = hand();
        let cmd = ActuatorCommand {
            f1: JointCommand {
                mode: ControlMode::Torque,
                position: 0.0,
                torque: 60.0,
            },
            flipper: JointCommand::position(0.0),
        };
        hb.apply(&cmd).unwrap();
        for _ in 0..600 {
            hb.transport_mut().step(0.01, &[]);
        }
        let s = hb.read_state().unwrap();
        assert!((s.f1_angle - 100.0).abs() <= registers::DEGREES_PER_COUNT / 3.0);
        assert_eq!(s.f1_mode, ControlMode::Torque);
        assert!((s.f1_torque_setpoint - 180.0).abs() < 1e-9);
    }

    #[test]
    fn device_errors_surface() {
        let mut hb = hand();
        let err = hb.bus_mut().write(1, registers::OPERATING_MODE, &[0]).unwrap_err();
        assert_eq!(err, BusError::Device { id: 1, error: device_error::ACCESS });
        assert!(err.to_string().contains("access error"));
        assert_eq!(hb.bus_mut().ping(7).unwrap_err(), BusError::NoReply { id: 7 });
    }
}
