//! In-process two-servo bus with simple motor dynamics.

use serde::{Deserialize, Serialize};

use super::codec::{decode_stream, encode_packet, BusPacket, DecodeStats, Instruction, BROADCAST_ID};
use super::registers::{
    counts_to_degrees, degrees_to_counts, device_error, velocity_to_units, OperatingMode,
    RegisterMap,
};
use super::transport::{Transport, TransportError};
use crate::hand_model::{HandGeometry, Joint, JointState};

pub const F1_SERVO_ID: u8 = 1;
pub const FLIPPER_SERVO_ID: u8 = 2;

/// Motor dynamics constants. Angles and torques are motor-side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServoParams {
    /// Position-mode time constant, s.
    pub time_constant: f64,
    /// Shaft speed limit, °/s.
    pub max_velocity: f64,
    /// Position-mode holding stiffness, N·mm per degree of deflection.
    pub holding_stiffness: f64,
    /// Torque-mode viscous damping, N·mm per °/s.
    pub damping: f64,
    /// Motor torque per goal-current unit, N·mm.
    pub torque_per_current_unit: f64,
    pub current_limit: u16,
}

impl Default for ServoParams {
    fn default() -> Self {
        Self {
            time_constant: 0.05,
            max_velocity: 462.0,
            holding_stiffness: 1000.0,
            damping: 0.25,
            torque_per_current_unit: 0.5,
            current_limit: 1193,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmulatedServo {
    pub regs: RegisterMap,
    params: ServoParams,
    position: f64,
    velocity: f64,
    min_deg: f64,
    max_deg: f64,
}

impl EmulatedServo {
    /// A servo with hard stops at `[min_deg, max_deg]` (motor degrees),
    /// resting at `initial_deg`.
    pub fn new(id: u8, params: ServoParams, min_deg: f64, max_deg: f64, initial_deg: f64) -> Self {
        let mut regs = RegisterMap::new(
            id,
            degrees_to_counts(min_deg),
            degrees_to_counts(max_deg),
            params.current_limit,
        );
        let position = initial_deg.clamp(min_deg, max_deg);
        regs.present_position = degrees_to_counts(position);
        regs.goal_position = regs.present_position;
        Self {
            regs,
            params,
            position,
            velocity: 0.0,
            min_deg,
            max_deg,
        }
    }

    /// Continuous shaft angle, degrees.
    pub fn position(&self) -> f64 {
        self.position
    }

    pub fn velocity(&self) -> f64 {
        self.velocity
    }

    pub fn params(&self) -> &ServoParams {
        &self.params
    }

    /// Torque the motor applies in current mode, N·mm.
    pub fn commanded_torque(&self) -> f64 {
        self.regs.goal_current as f64 * self.params.torque_per_current_unit
    }

    /// Advance by `dt` seconds against `external_torque` (N·mm, positive
    /// opposes positive motion).
    pub fn step(&mut self, dt: f64, external_torque: f64) {
        if !(dt > 0.0) {
            return;
        }
        let p = self.params;
        let start = self.position;
        let vmax = p.max_velocity * dt;
        let mut current = 0.0;
        if self.regs.torque_enable {
            match self.regs.operating_mode {
                OperatingMode::Position => {
                    let target = counts_to_degrees(self.regs.goal_position)
                        - external_torque / p.holding_stiffness;
                    let alpha = 1.0 - (-dt / p.time_constant).exp();
                    let dx = ((target - start) * alpha).clamp(-vmax, vmax);
                    self.position = start + dx;
                    current = external_torque / p.torque_per_current_unit;
                }
                OperatingMode::Current => {
                    let net = self.commanded_torque() - external_torque;
                    let v = (net / p.damping).clamp(-p.max_velocity, p.max_velocity);
                    self.position = start + v * dt;
                    current = self.regs.goal_current as f64;
                }
            }
        }
        self.position = self.position.clamp(self.min_deg, self.max_deg);
        self.velocity = (self.position - start) / dt;
        self.regs.present_position = degrees_to_counts(self.position);
        self.regs.present_velocity = velocity_to_units(self.velocity);
        self.regs.present_current = current.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
    }
}

/// Bus counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EmulatorDiagnostics {
    pub decode: DecodeStats,
    /// Reads that touched registers outside the emulated subset.
    pub unknown_register_reads: u64,
    pub transactions: u64,
}

#[derive(Debug, Clone)]
pub struct EmulatedBus {
    servos: Vec<EmulatedServo>,
    diagnostics: EmulatorDiagnostics,
}

impl EmulatedBus {
    pub fn new(servos: Vec<EmulatedServo>) -> Self {
        Self {
            servos,
            diagnostics: EmulatorDiagnostics::default(),
        }
    }

    /// Finger 1 and flipper servos with hard stops at the geometry's joint
    /// limits, starting at `initial` joint angles.
    pub fn for_hand(geom: &HandGeometry, params: ServoParams, initial: &JointState) -> Self {
        let servo = |id, joint| {
            let gear = geom.gear_ratio(joint);
            let range = geom.range(joint);
            EmulatedServo::new(id, params, range.min * gear, range.max * gear, initial.angle(joint) * gear)
        };
        Self::new(vec![servo(F1_SERVO_ID, Joint::F1), servo(FLIPPER_SERVO_ID, Joint::Flipper)])
    }

    pub fn servo(&self, id: u8) -> Option<&EmulatedServo> {
        self.servos.iter().find(|s| s.regs.id == id)
    }

    pub fn servo_mut(&mut self, id: u8) -> Option<&mut EmulatedServo> {
        self.servos.iter_mut().find(|s| s.regs.id == id)
    }

    pub fn diagnostics(&self) -> EmulatorDiagnostics {
        self.diagnostics
    }

    /// Step every servo; `external_torques` is indexed like the servo list
    /// and missing entries count as zero.
    pub fn step(&mut self, dt: f64, external_torques: &[f64]) {
        for (k, servo) in self.servos.iter_mut().enumerate() {
            servo.step(dt, external_torques.get(k).copied().unwrap_or(0.0));
        }
    }

    /// Execute one instruction packet and return the status replies.
    pub fn handle(&mut self, packet: &BusPacket) -> Vec<BusPacket> {
        match packet.instruction {
            Instruction::Status => Vec::new(),
            Instruction::SyncWrite => {
                self.sync_write(&packet.params);
                Vec::new()
            }
            _ => {
                let ids: Vec<u8> = if packet.id == BROADCAST_ID {
                    if packet.instruction != Instruction::Ping {
                        return Vec::new();
                    }
                    self.servos.iter().map(|s| s.regs.id).collect()
                } else {
                    vec![packet.id]
                };
                ids.into_iter()
                    .filter_map(|id| self.handle_unicast(id, packet))
                    .collect()
            }
        }
    }

    fn handle_unicast(&mut self, id: u8, packet: &BusPacket) -> Option<BusPacket> {
        let mut unknown_read = false;
        let servo = self.servos.iter_mut().find(|s| s.regs.id == id)?;
        let params = &packet.params;
        let reply = match packet.instruction {
            Instruction::Ping => {
                let mut data = servo.regs.model_number.to_le_bytes().to_vec();
                data.push(servo.regs.firmware_version);
                BusPacket::status(id, 0, data)
            }
            Instruction::Read => {
                if params.len() != 4 {
                    BusPacket::status(id, device_error::DATA_LENGTH, Vec::new())
                } else {
                    let address = u16::from_le_bytes([params[0], params[1]]);
                    let len = u16::from_le_bytes([params[2], params[3]]);
                    let (data, unknown) = servo.regs.read(address, len);
                    unknown_read = unknown;
                    BusPacket::status(id, 0, data)
                }
            }
            Instruction::Write => {
                if params.len() < 3 {
                    BusPacket::status(id, device_error::DATA_LENGTH, Vec::new())
                } else {
                    let address = u16::from_le_bytes([params[0], params[1]]);
                    let error = servo.regs.write(address, &params[2..]).err().unwrap_or(0);
                    BusPacket::status(id, error, Vec::new())
                }
            }
            Instruction::SyncWrite | Instruction::Status => return None,
        };
        if unknown_read {
            self.diagnostics.unknown_register_reads += 1;
            log::warn!("servo {id}: read of registers outside the emulated subset");
        }
        Some(reply)
    }

    fn sync_write(&mut self, params: &[u8]) {
        if params.len() < 4 {
            return;
        }
        let address = u16::from_le_bytes([params[0], params[1]]);
        let len = u16::from_le_bytes([params[2], params[3]]) as usize;
        if len == 0 {
            return;
        }
        for entry in params[4..].chunks(len + 1) {
            if entry.len() != len + 1 {
                break;
            }
            if let Some(servo) = self.servo_mut(entry[0]) {
                // Sync writes have no status reply; refusals are silent.
                let _ = servo.regs.write(address, &entry[1..]);
            }
        }
    }
}

impl Transport for EmulatedBus {
    fn transact(&mut self, request: &[u8], _expected_replies: usize) -> Result<Vec<u8>, TransportError> {
        self.diagnostics.transactions += 1;
        let decoded = decode_stream(request);
        self.diagnostics.decode.merge(&decoded.stats);
        let mut reply = Vec::new();
        for packet in &decoded.packets {
            for status in self.handle(packet) {
                reply.extend(encode_packet(&status).map_err(|e| TransportError::Io(e.to_string()))?);
            }
        }
        Ok(reply)
    }
}
