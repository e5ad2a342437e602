//! Grasp sequencing state machine.
//!
//! Every grasp runs the same sequence: open Finger 1 in position mode, move
//! the flipper to the mode setpoint in position mode, then close Finger 1 in
//! torque mode while the flipper stays position-controlled. From a pinch hold
//! the flipper can oscillate about its setpoint (twist) while Finger 1 keeps
//! squeezing.
//!
//! Transitions decided from a tick's feedback take effect on the following
//! tick, so every emitted command is labelled with the phase that produced
//! it. Faults are the exception and take effect immediately.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::hand_model::{
    tangential_force_unsaturated, ControlMode, Finger, ForceSpec, HandError, HandGeometry, Joint,
    JointState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraspMode {
    Pinch,
    Lateral,
    Opposition,
}

impl GraspMode {
    pub const ALL: [GraspMode; 3] = [GraspMode::Pinch, GraspMode::Lateral, GraspMode::Opposition];

    /// Flipper bridge angle relative to the flipper motor center axis, degrees.
    pub const fn setpoint(self) -> f64 {
        match self {
            GraspMode::Pinch => 25.0,
            GraspMode::Lateral => -46.0,
            GraspMode::Opposition => 15.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GraspMode::Pinch => "pinch",
            GraspMode::Lateral => "lateral",
            GraspMode::Opposition => "opposition",
        }
    }

    /// Fingers that touch the object in this mode.
    pub fn contact_fingers(self) -> &'static [Finger] {
        match self {
            GraspMode::Pinch => &[Finger::F1, Finger::F2],
            GraspMode::Lateral => &[Finger::F1, Finger::F3],
            GraspMode::Opposition => &[Finger::F1, Finger::F2, Finger::F3],
        }
    }
}

impl fmt::Display for GraspMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GraspMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pinch" => Ok(GraspMode::Pinch),
            "lateral" => Ok(GraspMode::Lateral),
            "opposition" | "three-finger" | "power" => Ok(GraspMode::Opposition),
            other => Err(format!("unknown grasp mode '{other}' (pinch | lateral | opposition)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerPhase {
    Idle,
    OpeningF1,
    PositioningFlipper,
    ClosingF1,
    Holding,
    Twisting,
    Releasing,
    Fault,
}

impl ControllerPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerPhase::Idle => "idle",
            ControllerPhase::OpeningF1 => "opening_f1",
            ControllerPhase::PositioningFlipper => "positioning_flipper",
            ControllerPhase::ClosingF1 => "closing_f1",
            ControllerPhase::Holding => "holding",
            ControllerPhase::Twisting => "twisting",
            ControllerPhase::Releasing => "releasing",
            ControllerPhase::Fault => "fault",
        }
    }

    /// Whether `self -> next` is an edge of the sequencing graph.
    pub fn can_transition_to(self, next: ControllerPhase) -> bool {
        use ControllerPhase::*;
        matches!(
            (self, next),
            (Idle, OpeningF1)
                | (OpeningF1, PositioningFlipper)
                | (PositioningFlipper, ClosingF1)
                | (ClosingF1, Holding)
                | (Holding, Twisting)
                | (Twisting, Holding)
                | (Holding | Twisting | ClosingF1, Releasing)
                | (Releasing, Idle)
                | (Fault, Releasing)
                | (_, Fault)
        )
    }
}

impl fmt::Display for ControllerPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Operator-tunable grasp parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraspCommandConfig {
    /// Finger 1 open target, joint degrees.
    pub open_position: f64,
    /// Position settle band, degrees.
    pub position_tolerance: f64,
    /// Finger 1 closing torque at the motor, N·mm.
    pub close_torque: f64,
    /// Consecutive ticks a settle condition must hold.
    pub settle_ticks: u32,
    pub twist_amplitude: f64,
    /// Seconds per twist oscillation.
    pub twist_period: f64,
    /// Full oscillations before returning to the hold.
    pub twist_cycles: u32,
    /// Finger 1 speed below which closure counts as stalled at contact, °/s.
    pub contact_velocity: f64,
    /// Flipper deviation during closure, in tolerances, that trips a fault.
    pub fault_deviation_factor: f64,
}

impl Default for GraspCommandConfig {
    fn default() -> Self {
        Self {
            open_position: 0.0,
            position_tolerance: 0.5,
            close_torque: 60.0,
            settle_ticks: 10,
            twist_amplitude: 5.0,
            twist_period: 1.0,
            twist_cycles: 2,
            contact_velocity: 0.1,
            fault_deviation_factor: 5.0,
        }
    }
}

impl GraspCommandConfig {
    pub fn validate(&self, geom: &HandGeometry) -> Result<(), Rejection> {
        let bad = |msg: String| Err(Rejection::InvalidConfig(msg));
        if !geom.f1_joint_range.contains(self.open_position) {
            return bad(format!("open_position {} outside the Finger 1 range", self.open_position));
        }
        if !(self.position_tolerance > 0.0) {
            return bad("position_tolerance must be positive".into());
        }
        if self.settle_ticks == 0 {
            return bad("settle_ticks must be at least 1".into());
        }
        if !(self.contact_velocity > 0.0) || !(self.fault_deviation_factor > 1.0) {
            return bad("contact_velocity must be positive and fault_deviation_factor > 1".into());
        }
        self.validate_twist(geom)?;
        let force = tangential_force_unsaturated(self.close_torque, Finger::F1, geom)
            .map_err(|e| Rejection::InvalidConfig(e.to_string()))?;
        let cap = ForceSpec::TABLE.max_tangential_f1;
        if force > cap * (1.0 + 1e-9) {
            return Err(Rejection::ForceCap {
                torque: self.close_torque,
                force,
                cap,
            });
        }
        Ok(())
    }

    fn validate_twist(&self, geom: &HandGeometry) -> Result<(), Rejection> {
        if !(self.twist_amplitude > 0.0) || !(self.twist_period > 0.0) || self.twist_cycles == 0 {
            return Err(Rejection::InvalidConfig(
                "twist amplitude, period and cycles must be positive".into(),
            ));
        }
        let sp = GraspMode::Pinch.setpoint();
        let range = geom.flipper_range;
        if !range.contains(sp - self.twist_amplitude) || !range.contains(sp + self.twist_amplitude) {
            return Err(Rejection::InvalidConfig(format!(
                "twist of ±{}° about {sp}° leaves the flipper range",
                self.twist_amplitude
            )));
        }
        Ok(())
    }
}

/// Why a command was refused. Display strings are shown to operators.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Rejection {
    #[error("controller busy in phase {0}")]
    Busy(ControllerPhase),
    #[error("twist only in pinch grasp")]
    TwistNotPinch,
    #[error("twist requires a holding grasp (phase {0})")]
    NotHolding(ControllerPhase),
    #[error("cannot release in phase {0}")]
    CannotRelease(ControllerPhase),
    #[error("{0}")]
    OutOfRange(HandError),
    #[error("invalid grasp config: {0}")]
    InvalidConfig(String),
    #[error("close torque {torque} N·mm gives {force:.2} N at Finger 1, above the {cap} N cap")]
    ForceCap { torque: f64, force: f64, cap: f64 },
}

/// Target for one actuated joint. `position` is joint-side degrees;
/// `torque` is the motor torque, N·mm, used only in torque mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointCommand {
    pub mode: ControlMode,
    pub position: f64,
    pub torque: f64,
}

impl JointCommand {
    pub fn position(position: f64) -> Self {
        Self {
            mode: ControlMode::Position,
            position,
            torque: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorCommand {
    pub f1: JointCommand,
    pub flipper: JointCommand,
}

impl ActuatorCommand {
    pub fn get(&self, joint: Joint) -> &JointCommand {
        match joint {
            Joint::F1 => &self.f1,
            Joint::Flipper => &self.flipper,
        }
    }
}

/// What one `step` produced: the command and the phase that emitted it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub phase: ControllerPhase,
    pub mode: Option<GraspMode>,
    pub command: ActuatorCommand,
}

/// Consistent view of the controller for concurrent readers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSnapshot {
    pub phase: ControllerPhase,
    pub mode: Option<GraspMode>,
    pub command: ActuatorCommand,
    pub fault: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GraspController {
    geom: HandGeometry,
    cfg: GraspCommandConfig,
    phase: ControllerPhase,
    mode: Option<GraspMode>,
    command: ActuatorCommand,
    settle: u32,
    last_f1: Option<f64>,
    twist_elapsed: f64,
    fault: Option<String>,
}

impl GraspController {
    /// Starts idle, holding Finger 1 at the open position and the flipper at
    /// its center axis (clamped into range).
    pub fn new(geom: HandGeometry, cfg: GraspCommandConfig) -> Self {
        let f1 = geom.f1_joint_range.clamp(cfg.open_position);
        let flipper = geom.flipper_range.clamp(0.0);
        Self {
            geom,
            cfg,
            phase: ControllerPhase::Idle,
            mode: None,
            command: ActuatorCommand {
                f1: JointCommand::position(f1),
                flipper: JointCommand::position(flipper),
            },
            settle: 0,
            last_f1: None,
            twist_elapsed: 0.0,
            fault: None,
        }
    }

    pub fn phase(&self) -> ControllerPhase {
        self.phase
    }

    pub fn mode(&self) -> Option<GraspMode> {
        self.mode
    }

    pub fn config(&self) -> &GraspCommandConfig {
        &self.cfg
    }

    pub fn geometry(&self) -> &HandGeometry {
        &self.geom
    }

    pub fn command(&self) -> ActuatorCommand {
        self.command
    }

    pub fn fault_reason(&self) -> Option<&str> {
        self.fault.as_deref()
    }

    pub fn snapshot(&self) -> ControllerSnapshot {
        ControllerSnapshot {
            phase: self.phase,
            mode: self.mode,
            command: self.command,
            fault: self.fault.clone(),
        }
    }

    pub fn set_config(&mut self, cfg: GraspCommandConfig) -> Result<(), Rejection> {
        if self.phase != ControllerPhase::Idle {
            return Err(Rejection::Busy(self.phase));
        }
        cfg.validate(&self.geom)?;
        self.cfg = cfg;
        Ok(())
    }

    pub fn start_grasp(&mut self, mode: GraspMode, cfg: GraspCommandConfig) -> Result<(), Rejection> {
        if self.phase != ControllerPhase::Idle {
            return Err(Rejection::Busy(self.phase));
        }
        cfg.validate(&self.geom)?;
        self.cfg = cfg;
        self.mode = Some(mode);
        self.settle = 0;
        self.command.f1 = JointCommand::position(cfg.open_position);
        self.command.flipper = JointCommand::position(self.command.flipper.position);
        self.phase = ControllerPhase::OpeningF1;
        Ok(())
    }

    /// Twist about the pinch setpoint using `cfg`'s twist parameters. The
    /// closing torque is left untouched.
    pub fn twist(&mut self, cfg: &GraspCommandConfig) -> Result<(), Rejection> {
        if matches!(self.mode, Some(m) if m != GraspMode::Pinch) {
            return Err(Rejection::TwistNotPinch);
        }
        if self.phase != ControllerPhase::Holding {
            return Err(Rejection::NotHolding(self.phase));
        }
        cfg.validate_twist(&self.geom)?;
        self.cfg.twist_amplitude = cfg.twist_amplitude;
        self.cfg.twist_period = cfg.twist_period;
        self.cfg.twist_cycles = cfg.twist_cycles;
        self.twist_elapsed = 0.0;
        self.phase = ControllerPhase::Twisting;
        Ok(())
    }

    /// Open Finger 1 and return to idle. Accepted (as a no-op) while idle or
    /// already releasing; also the way out of a fault.
    pub fn release(&mut self) -> Result<(), Rejection> {
        match self.phase {
            ControllerPhase::Idle | ControllerPhase::Releasing => Ok(()),
            ControllerPhase::ClosingF1
            | ControllerPhase::Holding
            | ControllerPhase::Twisting
            | ControllerPhase::Fault => {
                self.command.f1 = JointCommand::position(self.cfg.open_position);
                if let Some(mode) = self.mode {
                    if self.phase != ControllerPhase::Fault {
                        self.command.flipper = JointCommand::position(mode.setpoint());
                    }
                }
                self.fault = None;
                self.settle = 0;
                self.phase = ControllerPhase::Releasing;
                Ok(())
            }
            other => Err(Rejection::CannotRelease(other)),
        }
    }

    /// Move one joint to an absolute position while idle.
    pub fn jog(&mut self, joint: Joint, target: f64) -> Result<(), Rejection> {
        if self.phase != ControllerPhase::Idle {
            return Err(Rejection::Busy(self.phase));
        }
        self.geom.check_limit(joint, target).map_err(Rejection::OutOfRange)?;
        match joint {
            Joint::F1 => self.command.f1 = JointCommand::position(target),
            Joint::Flipper => self.command.flipper = JointCommand::position(target),
        }
        Ok(())
    }

    /// Advance one control tick. `dt <= 0` is a no-op that re-emits the
    /// previous command.
    pub fn step(&mut self, dt: f64, feedback: &JointState) -> StepOutput {
        if !(dt > 0.0) {
            return self.output();
        }
        if let Err(e) = feedback.check_limits(&self.geom) {
            self.enter_fault(format!("feedback outside joint limits: {e}"), feedback);
            self.last_f1 = Some(feedback.f1_angle);
            return self.output();
        }
        let velocity = self.last_f1.map(|prev| (feedback.f1_angle - prev) / dt);
        self.last_f1 = Some(feedback.f1_angle);

        let tol = self.cfg.position_tolerance;
        match self.phase {
            ControllerPhase::Idle | ControllerPhase::Fault | ControllerPhase::Holding => self.output(),
            ControllerPhase::OpeningF1 => {
                let out = self.output();
                if self.settled((feedback.f1_angle - self.cfg.open_position).abs() < tol) {
                    let setpoint = self.setpoint();
                    self.command.flipper = JointCommand::position(setpoint);
                    self.phase = ControllerPhase::PositioningFlipper;
                }
                out
            }
            ControllerPhase::PositioningFlipper => {
                let out = self.output();
                if self.settled((feedback.flipper_angle - self.setpoint()).abs() < tol) {
                    self.command.f1 = JointCommand {
                        mode: ControlMode::Torque,
                        position: feedback.f1_angle,
                        torque: self.cfg.close_torque,
                    };
                    self.phase = ControllerPhase::ClosingF1;
                }
                out
            }
            ControllerPhase::ClosingF1 => {
                let deviation = (feedback.flipper_angle - self.setpoint()).abs();
                if deviation > self.cfg.fault_deviation_factor * tol {
                    self.enter_fault(
                        format!("flipper pushed {deviation:.2}° off its setpoint during closure"),
                        feedback,
                    );
                    return self.output();
                }
                let out = self.output();
                let stalled = velocity.is_some_and(|v| v.abs() < self.cfg.contact_velocity);
                if self.settled(stalled) {
                    self.phase = ControllerPhase::Holding;
                }
                out
            }
            ControllerPhase::Twisting => {
                self.twist_elapsed += dt;
                let phase = std::f64::consts::TAU * self.twist_elapsed / self.cfg.twist_period;
                let target = self.setpoint() + self.cfg.twist_amplitude * phase.sin();
                self.command.flipper = JointCommand::position(target);
                let out = self.output();
                if self.twist_elapsed >= self.cfg.twist_period * self.cfg.twist_cycles as f64 {
                    self.command.flipper = JointCommand::position(self.setpoint());
                    self.phase = ControllerPhase::Holding;
                }
                out
            }
            ControllerPhase::Releasing => {
                let out = self.output();
                if self.settled((feedback.f1_angle - self.cfg.open_position).abs() < tol) {
                    self.mode = None;
                    self.phase = ControllerPhase::Idle;
                }
                out
            }
        }
    }

    fn output(&self) -> StepOutput {
        StepOutput {
            phase: self.phase,
            mode: self.mode,
            command: self.command,
        }
    }

    fn setpoint(&self) -> f64 {
        self.mode.map(GraspMode::setpoint).unwrap_or(self.command.flipper.position)
    }

    /// Count consecutive ticks where `condition` holds; true once enough have
    /// accumulated (and resets the counter).
    fn settled(&mut self, condition: bool) -> bool {
        if condition {
            self.settle += 1;
        } else {
            self.settle = 0;
        }
        if self.settle >= self.cfg.settle_ticks {
            self.settle = 0;
            true
        } else {
            false
        }
    }

    fn enter_fault(&mut self, reason: String, feedback: &JointState) {
        log::warn!("grasp controller fault: {reason}");
        let hold = |joint: Joint| self.geom.range(joint).clamp(feedback.angle(joint));
        self.command = ActuatorCommand {
            f1: JointCommand::position(hold(Joint::F1)),
            flipper: JointCommand::position(hold(Joint::Flipper)),
        };
        self.fault = Some(reason);
        self.settle = 0;
        self.phase = ControllerPhase::Fault;
    }
}

/// Per-tick angles as seen by the controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSample {
    pub f1: f64,
    pub flipper: f64,
}

impl From<&JointState> for FeedbackSample {
    fn from(j: &JointState) -> Self {
        Self {
            f1: j.f1_angle,
            flipper: j.flipper_angle,
        }
    }
}

/// One line of the controller trace log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: u64,
    pub phase: ControllerPhase,
    pub mode: Option<GraspMode>,
    pub feedback: FeedbackSample,
    pub command: ActuatorCommand,
    /// Operator command applied at the start of this tick, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub applied: Option<String>,
}

impl TraceRecord {
    pub fn new(tick: u64, feedback: &JointState, out: &StepOutput) -> Self {
        Self {
            tick,
            phase: out.phase,
            mode: out.mode,
            feedback: feedback.into(),
            command: out.command,
            applied: None,
        }
    }
}

/// Check the sequencing rules over a trace; returns the first violation.
///
/// * Closure never starts before a positioning tick with the flipper inside
///   the tolerance band.
/// * While closing, holding or twisting, the flipper is position-controlled.
/// * Phase changes follow the sequencing graph.
pub fn check_sequencing(trace: &[TraceRecord], tolerance: f64) -> Result<(), String> {
    let mut positioned = false;
    let mut prev: Option<ControllerPhase> = None;
    for rec in trace {
        if let Some(p) = prev {
            if p != rec.phase && !p.can_transition_to(rec.phase) {
                return Err(format!("tick {}: illegal transition {p} -> {}", rec.tick, rec.phase));
            }
            if p != ControllerPhase::ClosingF1 && rec.phase == ControllerPhase::ClosingF1 && !positioned {
                return Err(format!("tick {}: closing before the flipper was positioned", rec.tick));
            }
        }
        match rec.phase {
            ControllerPhase::PositioningFlipper => {
                if let Some(mode) = rec.mode {
                    if (rec.feedback.flipper - mode.setpoint()).abs() < tolerance {
                        positioned = true;
                    }
                }
            }
            ControllerPhase::ClosingF1 | ControllerPhase::Holding | ControllerPhase::Twisting => {
                if rec.command.flipper.mode != ControlMode::Position {
                    return Err(format!("tick {}: flipper not in position mode during {}", rec.tick, rec.phase));
                }
            }
            ControllerPhase::Idle | ControllerPhase::OpeningF1 => positioned = false,
            _ => {}
        }
        prev = Some(rec.phase);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn controller() -> GraspController {
        GraspController::new(HandGeometry::calibrated(), GraspCommandConfig::default())
    }

    /// Drive the controller with an ideal plant that tracks position targets
    /// exactly and, in torque mode, closes until `contact` and stops.
    fn run_ideal(ctrl: &mut GraspController, contact: f64, ticks: usize) -> Vec<TraceRecord> {
        let mut fb = JointState::at(20.0, 0.0);
        let mut trace = Vec::new();
        for tick in 0..ticks {
            let out = ctrl.step(0.01, &fb);
            trace.push(TraceRecord::new(tick as u64, &fb, &out));
            fb.f1_angle = match out.command.f1.mode {
                ControlMode::Position => out.command.f1.position,
                ControlMode::Torque => (fb.f1_angle + 1.0).min(contact),
            };
            fb.flipper_angle = out.command.flipper.position;
        }
        trace
    }

    #[test]
    fn setpoints_are_fixed() {
        assert_eq!(GraspMode::Pinch.setpoint(), 25.0);
        assert_eq!(GraspMode::Lateral.setpoint(), -46.0);
        assert_eq!(GraspMode::Opposition.setpoint(), 15.0);
    }

    #[test]
    fn start_grasp_from_idle_opens_f1() {
        let mut c = controller();
        c.start_grasp(GraspMode::Pinch, GraspCommandConfig::default()).unwrap();
        assert_eq!(c.phase(), ControllerPhase::OpeningF1);
        assert_eq!(c.command().f1, JointCommand::position(0.0));
    }

    #[test]
    fn start_grasp_rejected_while_holding() {
        let mut c = controller();
        c.start_grasp(GraspMode::Pinch, GraspCommandConfig::default()).unwrap();
        run_ideal(&mut c, 45.0, 200);
        assert_eq!(c.phase(), ControllerPhase::Holding);
        let err = c.start_grasp(GraspMode::Lateral, GraspCommandConfig::default()).unwrap_err();
        assert_eq!(err, Rejection::Busy(ControllerPhase::Holding));
    }

    #[test]
    fn start_grasp_rejects_torque_above_cap() {
        let mut c = controller();
        let g = HandGeometry::calibrated();
        // 6.3 N at Finger 1 needs 6.3 * L / 3 N·mm at the motor.
        let at_cap = 6.3 * g.finger_length / 3.0;
        let cfg = GraspCommandConfig {
            close_torque: at_cap * 1.01,
            ..Default::default()
        };
        assert!(matches!(c.start_grasp(GraspMode::Pinch, cfg), Err(Rejection::ForceCap { .. })));
        assert_eq!(c.phase(), ControllerPhase::Idle);
        let cfg = GraspCommandConfig {
            close_torque: at_cap * 0.99,
            ..Default::default()
        };
        assert!(c.start_grasp(GraspMode::Pinch, cfg).is_ok());
    }

    #[test]
    fn positioning_targets_mode_setpoint() {
        for mode in GraspMode::ALL {
            let mut c = controller();
            c.start_grasp(mode, GraspCommandConfig::default()).unwrap();
            let trace = run_ideal(&mut c, 40.0, 100);
            let positioning: Vec<_> = trace
                .iter()
                .filter(|r| r.phase == ControllerPhase::PositioningFlipper)
                .collect();
            assert!(!positioning.is_empty());
            for r in positioning {
                assert_eq!(r.command.flipper.position, mode.setpoint());
                assert_eq!(r.command.flipper.mode, ControlMode::Position);
            }
        }
    }

    #[test]
    fn closure_keeps_flipper_in_position_mode() {
        let mut c = controller();
        c.start_grasp(GraspMode::Lateral, GraspCommandConfig::default()).unwrap();
        let trace = run_ideal(&mut c, 70.0, 300);
        let closing: Vec<_> = trace.iter().filter(|r| r.phase == ControllerPhase::ClosingF1).collect();
        assert!(!closing.is_empty());
        for r in &closing {
            assert_eq!(r.command.flipper.mode, ControlMode::Position);
            assert_eq!(r.command.flipper.position, -46.0);
            assert_eq!(r.command.f1.mode, ControlMode::Torque);
        }
        assert_eq!(c.phase(), ControllerPhase::Holding);
        check_sequencing(&trace, 0.5).unwrap();
    }

    #[test]
    fn zero_dt_is_a_no_op() {
        let mut c = controller();
        c.start_grasp(GraspMode::Pinch, GraspCommandConfig::default()).unwrap();
        let fb = JointState::at(0.0, 0.0);
        let before = c.snapshot();
        for _ in 0..50 {
            let out = c.step(0.0, &fb);
            assert_eq!(out.command, before.command);
        }
        assert_eq!(c.snapshot(), before);
    }

    #[test]
    fn feedback_outside_limits_faults() {
        let mut c = controller();
        c.start_grasp(GraspMode::Pinch, GraspCommandConfig::default()).unwrap();
        let out = c.step(0.01, &JointState::at(105.0, 0.0));
        assert_eq!(out.phase, ControllerPhase::Fault);
        assert!(c.fault_reason().unwrap().contains("f1"));
        // Fault holds the clamped position in position mode.
        assert_eq!(out.command.f1, JointCommand::position(100.0));
    }

    #[test]
    fn flipper_disturbance_during_closure_faults() {
        let mut c = controller();
        c.start_grasp(GraspMode::Pinch, GraspCommandConfig::default()).unwrap();
        run_ideal(&mut c, 90.0, 40);
        assert_eq!(c.phase(), ControllerPhase::ClosingF1);
        // 2.4° is inside 5 × 0.5°, 2.6° is not.
        let out = c.step(0.01, &JointState::at(30.0, 25.0 - 2.4));
        assert_eq!(out.phase, ControllerPhase::ClosingF1);
        let out = c.step(0.01, &JointState::at(31.0, 25.0 - 2.6));
        assert_eq!(out.phase, ControllerPhase::Fault);
        // Release clears the fault.
        c.release().unwrap();
        assert_eq!(c.phase(), ControllerPhase::Releasing);
    }

    #[test]
    fn twist_sweeps_about_pinch_setpoint() {
        let mut c = controller();
        let cfg = GraspCommandConfig::default();
        c.start_grasp(GraspMode::Pinch, cfg).unwrap();
        let mut fb = JointState::at(45.0, 25.0);
        let trace = run_ideal(&mut c, 45.0, 200);
        assert_eq!(c.phase(), ControllerPhase::Holding);
        fb.f1_angle = trace.last().unwrap().feedback.f1;
        c.twist(&cfg).unwrap();
        let (mut lo, mut hi) = (f64::MAX, f64::MIN);
        let torque = c.command().f1.torque;
        for _ in 0..250 {
            let out = c.step(0.01, &fb);
            if out.phase == ControllerPhase::Twisting {
                let t = out.command.flipper.position;
                assert!((20.0..=30.0).contains(&t));
                lo = lo.min(t);
                hi = hi.max(t);
                assert_eq!(out.command.f1.mode, ControlMode::Torque);
                assert_eq!(out.command.f1.torque, torque);
                assert_eq!(out.command.flipper.mode, ControlMode::Position);
            }
        }
        assert!(lo < 20.01 && hi > 29.99, "sweep {lo}..{hi}");
        assert_eq!(c.phase(), ControllerPhase::Holding);
        assert_eq!(c.command().flipper.position, 25.0);
    }

    #[test]
    fn twist_rejected_outside_pinch_hold() {
        let mut c = controller();
        let cfg = GraspCommandConfig::default();
        assert_eq!(c.twist(&cfg), Err(Rejection::NotHolding(ControllerPhase::Idle)));
        c.start_grasp(GraspMode::Opposition, cfg).unwrap();
        run_ideal(&mut c, 50.0, 200);
        assert_eq!(c.phase(), ControllerPhase::Holding);
        let err = c.twist(&cfg).unwrap_err();
        assert_eq!(err.to_string(), "twist only in pinch grasp");
    }

    #[test]
    fn release_paths() {
        let mut c = controller();
        assert!(c.release().is_ok());
        assert_eq!(c.phase(), ControllerPhase::Idle);

        let cfg = GraspCommandConfig::default();
        c.start_grasp(GraspMode::Pinch, cfg).unwrap();
        run_ideal(&mut c, 45.0, 200);
        c.twist(&cfg).unwrap();
        let fb = JointState::at(45.0, 25.0);
        c.step(0.01, &fb);
        c.step(0.01, &fb);
        c.release().unwrap();
        // Oscillation stops on the same tick.
        assert_eq!(c.command().flipper, JointCommand::position(25.0));
        assert_eq!(c.command().f1, JointCommand::position(0.0));
        assert_eq!(c.phase(), ControllerPhase::Releasing);
        let mut fb = JointState::at(0.0, 25.0);
        for _ in 0..20 {
            fb = JointState::at(0.0, 25.0);
            c.step(0.01, &fb);
        }
        let _ = fb;
        assert_eq!(c.phase(), ControllerPhase::Idle);
        assert_eq!(c.mode(), None);
    }

    #[test]
    fn release_rejected_mid_approach() {
        let mut c = controller();
        c.start_grasp(GraspMode::Pinch, GraspCommandConfig::default()).unwrap();
        assert_eq!(c.release(), Err(Rejection::CannotRelease(ControllerPhase::OpeningF1)));
    }

    #[test]
    fn jog_checks_range_and_phase() {
        let mut c = controller();
        let err = c.jog(Joint::Flipper, 50.0).unwrap_err();
        assert!(matches!(err, Rejection::OutOfRange(HandError::LimitViolation { joint: Joint::Flipper, .. })));
        c.jog(Joint::Flipper, -50.0).unwrap();
        assert_eq!(c.command().flipper.position, -50.0);
        c.start_grasp(GraspMode::Pinch, GraspCommandConfig::default()).unwrap();
        assert!(matches!(c.jog(Joint::F1, 10.0), Err(Rejection::Busy(_))));
    }

    #[test]
    fn twist_amplitude_must_fit_range() {
        let g = HandGeometry::calibrated();
        let cfg = GraspCommandConfig {
            twist_amplitude: 16.0,
            ..Default::default()
        };
        assert!(cfg.validate(&g).is_err());
        let cfg = GraspCommandConfig {
            twist_amplitude: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate(&g).is_err());
    }

    #[test]
    fn deterministic_traces() {
        let run = || {
            let mut c = controller();
            c.start_grasp(GraspMode::Opposition, GraspCommandConfig::default()).unwrap();
            run_ideal(&mut c, 52.5, 300)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sequencing_checker_catches_violations() {
        let mut c = controller();
        c.start_grasp(GraspMode::Pinch, GraspCommandConfig::default()).unwrap();
        let mut trace = run_ideal(&mut c, 45.0, 200);
        check_sequencing(&trace, 0.5).unwrap();
        let idx = trace.iter().position(|r| r.phase == ControllerPhase::ClosingF1).unwrap();
        trace[idx].command.flipper.mode = ControlMode::Torque;
        assert!(check_sequencing(&trace, 0.5).is_err());

        let skip: Vec<_> = trace
            .iter()
            .filter(|r| r.phase != ControllerPhase::PositioningFlipper)
            .cloned()
            .collect();
        assert!(check_sequencing(&skip, 0.5).is_err());
    }
}
