//! Quasi-static grasp world.
//!
//! The grasp controller drives the emulated servos; an object sitting between
//! the mode's contact sites pushes back through a linear contact spring once
//! closure starts. Holding is judged by a Coulomb friction balance against
//! gravity in the worst-case tangential direction.

pub mod demo;
pub mod trace;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::grasp_controller::{
    ControllerPhase, GraspCommandConfig, GraspController, GraspMode, Rejection, TraceRecord,
};
use crate::hand_model::{
    aperture_unchecked, max_aperture, Finger, ForceSpec, HandGeometry, Joint, JointState,
};
use crate::servo_bus::{BusError, EmulatedBus, HandBus, ServoParams};
use crate::tactile_sim::{
    add_contact, Indenter, OpticsMap, SurfaceCoord, TactileError, TactileFrame,
};

pub use demo::{run_demo, DemoReport, DemoTask};
pub use trace::{replay, Divergence, ReplayReport, RunHeader, TraceLine};

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid object: {0}")]
    InvalidObject(String),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("controller rejected the command: {0}")]
    Rejected(#[from] Rejection),
    #[error(transparent)]
    Tactile(#[from] TactileError),
    #[error("trace: {0}")]
    Trace(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// `width` is the dimension gripped between the fingers.
    Box { width: f64, depth: f64, height: f64 },
    /// Gripped across its diameter.
    Cylinder { radius: f64, length: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub rotation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    pub name: String,
    pub shape: Shape,
    /// Grams.
    pub mass: f64,
    pub friction: f64,
    /// Placement metadata; the object is always centered between the
    /// contact sites.
    #[serde(default)]
    pub pose: Pose,
}

impl SimObject {
    pub fn new(name: impl Into<String>, shape: Shape, mass: f64, friction: f64) -> Self {
        Self {
            name: name.into(),
            shape,
            mass,
            friction,
            pose: Pose::default(),
        }
    }

    /// 2×4 brick, 31.8 × 15.8 × 9.6 mm, 2.5 g.
    pub fn lego_brick() -> Self {
        Self::new(
            "lego-2x4",
            Shape::Box {
                width: 31.8,
                depth: 15.8,
                height: 9.6,
            },
            2.5,
            0.8,
        )
    }

    pub fn screwdriver() -> Self {
        Self::new("screwdriver", Shape::Cylinder { radius: 12.0, length: 120.0 }, 60.0, 0.8)
    }

    pub fn flashlight() -> Self {
        Self::new("flashlight", Shape::Cylinder { radius: 18.0, length: 140.0 }, 150.0, 0.8)
    }

    /// Light box of a given gripped width, for aperture sweeps.
    pub fn test_box(width: f64) -> Self {
        Self::new(
            format!("box-{width}mm"),
            Shape::Box {
                width,
                depth: 15.8,
                height: 9.6,
            },
            2.5,
            0.8,
        )
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let dims: [f64; 3] = match self.shape {
            Shape::Box { width, depth, height } => [width, depth, height],
            Shape::Cylinder { radius, length } => [radius, length, 1.0],
        };
        if !dims.iter().all(|d| *d > 0.0 && d.is_finite()) {
            return Err(SimError::InvalidObject(format!("{}: dimensions must be positive", self.name)));
        }
        if !(self.mass >= 0.0 && self.mass.is_finite()) {
            return Err(SimError::InvalidObject(format!("{}: mass must be >= 0", self.name)));
        }
        if !(self.friction > 0.0 && self.friction <= 2.0) {
            return Err(SimError::InvalidObject(format!(
                "{}: friction coefficient must be in (0, 2]",
                self.name
            )));
        }
        Ok(())
    }

    pub fn grip_width(&self) -> f64 {
        match self.shape {
            Shape::Box { width, .. } => width,
            Shape::Cylinder { radius, .. } => 2.0 * radius,
        }
    }

    /// Weight, N.
    pub fn weight(&self) -> f64 {
        self.mass / 1000.0 * STANDARD_GRAVITY
    }

    /// Shape the object presents to a finger's skin.
    pub fn indenter(&self, skin_width: f64) -> Indenter {
        match self.shape {
            Shape::Box { depth, height, .. } => Indenter::Rect {
                half_s: height / 2.0,
                half_u: depth.min(skin_width) / 2.0,
            },
            Shape::Cylinder { radius, .. } => Indenter::Cylinder { radius },
        }
    }
}

/// Contact and timing constants of the simulated world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldParams {
    /// Control period, s.
    pub tick: f64,
    /// Physics substeps per control tick.
    pub substeps: u32,
    /// Object contact stiffness, N/mm.
    pub contact_stiffness: f64,
    /// Gel indentation per unit normal load, N/mm.
    pub gel_stiffness: f64,
    /// Fingertip contacts are rendered this far in from the skin tip, mm.
    pub tip_inset: f64,
    /// Side contacts are rendered this far in from the skin edge, mm.
    pub side_inset: f64,
    /// Ticks to stay in the hold before judging it.
    pub hold_ticks: u32,
    pub max_ticks: u32,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            tick: 0.01,
            substeps: 10,
            contact_stiffness: 5.0,
            gel_stiffness: 1.5,
            tip_inset: 4.0,
            side_inset: 3.0,
            hold_ticks: 30,
            max_ticks: 3000,
        }
    }
}

/// Everything a run depends on besides the mode and the object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSetup {
    pub geometry: HandGeometry,
    pub grasp: GraspCommandConfig,
    pub servo: ServoParams,
    pub optics: OpticsMap,
    pub world: WorldParams,
}

impl Default for SimSetup {
    fn default() -> Self {
        Self {
            geometry: HandGeometry::calibrated(),
            grasp: GraspCommandConfig::default(),
            servo: ServoParams::default(),
            optics: OpticsMap::default(),
            world: WorldParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactSite {
    Tip,
    Side,
}

impl fmt::Display for ContactSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContactSite::Tip => "tip",
            ContactSite::Side => "side",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub finger: Finger,
    pub site: ContactSite,
    pub location: SurfaceCoord,
    /// N, never above the normal force cap.
    pub normal_force: f64,
    /// Friction carried against gravity, N.
    pub tangential_force: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspOutcome {
    pub mode: GraspMode,
    pub object: String,
    pub held: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub contacts: Vec<Contact>,
    /// Aperture minus object width at the end of closure, mm (negative
    /// while squeezing).
    pub slack: f64,
    /// Σ friction available at the contacts, N.
    pub friction_capacity: f64,
    /// Object weight, N.
    pub load: f64,
    pub final_phase: ControllerPhase,
    pub ticks: u64,
}

/// One controller + servo bus + object, advanced a tick at a time.
pub struct Simulation {
    setup: SimSetup,
    controller: GraspController,
    hand: HandBus<EmulatedBus>,
    object: Option<SimObject>,
    tick: u64,
    contact_force: f64,
}

fn contact_phase(phase: ControllerPhase) -> bool {
    matches!(
        phase,
        ControllerPhase::ClosingF1 | ControllerPhase::Holding | ControllerPhase::Twisting | ControllerPhase::Releasing
    )
}

impl Simulation {
    pub fn new(setup: SimSetup, object: Option<SimObject>) -> Result<Self, SimError> {
        if let Some(obj) = &object {
            obj.validate()?;
        }
        setup
            .geometry
            .validate()
            .map_err(|e| SimError::InvalidObject(format!("geometry: {e}")))?;
        let geom = setup.geometry.clone();
        let rest = JointState::at(setup.grasp.open_position, 0.0);
        let emulator = EmulatedBus::for_hand(&geom, setup.servo, &rest);
        let mut hand = HandBus::new(emulator, geom.clone(), setup.servo.torque_per_current_unit);
        hand.init()?;
        let controller = GraspController::new(geom, setup.grasp);
        Ok(Self {
            setup,
            controller,
            hand,
            object,
            tick: 0,
            contact_force: 0.0,
        })
    }

    pub fn setup(&self) -> &SimSetup {
        &self.setup
    }

    pub fn controller(&self) -> &GraspController {
        &self.controller
    }

    pub fn controller_mut(&mut self) -> &mut GraspController {
        &mut self.controller
    }

    pub fn object(&self) -> Option<&SimObject> {
        self.object.as_ref()
    }

    /// Swap the object; only takes effect for contact from the next tick.
    pub fn set_object(&mut self, object: Option<SimObject>) -> Result<(), SimError> {
        if let Some(obj) = &object {
            obj.validate()?;
        }
        self.object = object;
        Ok(())
    }

    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    pub fn hand_bus(&self) -> &HandBus<EmulatedBus> {
        &self.hand
    }

    /// Current contact spring force, N.
    pub fn contact_force(&self) -> f64 {
        self.contact_force
    }

    /// Unquantized joint angles of the emulated servos.
    pub fn true_joint_angles(&mut self) -> (f64, f64) {
        let geom = &self.setup.geometry;
        let (g1, g2) = (geom.gear_ratio(Joint::F1), geom.gear_ratio(Joint::Flipper));
        let emu = self.hand.transport_mut();
        let f1 = emu.servo(crate::servo_bus::emulator::F1_SERVO_ID).map_or(0.0, |s| s.position()) / g1;
        let fl = emu.servo(crate::servo_bus::emulator::FLIPPER_SERVO_ID).map_or(0.0, |s| s.position()) / g2;
        (f1, fl)
    }

    /// One control tick: read feedback, step the controller, send its
    /// command, then integrate the servos against the contact.
    pub fn step(&mut self) -> Result<TraceRecord, SimError> {
        let feedback = self.hand.read_state()?;
        let out = self.controller.step(self.setup.world.tick, &feedback);
        let record = TraceRecord::new(self.tick, &feedback, &out);
        self.hand.apply(&out.command)?;
        self.integrate();
        self.tick += 1;
        Ok(record)
    }

    fn integrate(&mut self) {
        let world = self.setup.world;
        let substeps = world.substeps.max(1);
        let dt = world.tick / substeps as f64;
        let geom = self.setup.geometry.clone();
        let active = contact_phase(self.controller.phase());
        let mode = self.controller.mode();
        for _ in 0..substeps {
            let (f1, fl) = self.true_joint_angles();
            let mut torques = [0.0, 0.0];
            self.contact_force = 0.0;
            if let (true, Some(mode), Some(obj)) = (active, mode, self.object.as_ref()) {
                let gap = aperture_unchecked(mode, f1, fl, &geom);
                let penetration = (obj.grip_width() - gap).max(0.0);
                let force = world.contact_stiffness * penetration;
                if force > 0.0 {
                    let h = 1e-4;
                    let d_f1 = aperture_unchecked(mode, f1 + h, fl, &geom) - aperture_unchecked(mode, f1 - h, fl, &geom);
                    let d_fl = aperture_unchecked(mode, f1, fl + h, &geom) - aperture_unchecked(mode, f1, fl - h, &geom);
                    // Positive external torque opposes positive motion; the
                    // object pushes each joint toward a wider opening.
                    let lever = geom.finger_length;
                    torques[0] = -d_f1.signum() * force * lever / geom.gear_ratio_f1;
                    torques[1] = -d_fl.signum() * force * lever / geom.gear_ratio_flipper;
                }
                self.contact_force = force;
            }
            self.hand.transport_mut().step(dt, &torques);
        }
    }

    /// Current aperture minus object width, mm.
    pub fn slack(&mut self) -> Option<f64> {
        let mode = self.controller.mode()?;
        let width = self.object.as_ref()?.grip_width();
        let (f1, fl) = self.true_joint_angles();
        Some(aperture_unchecked(mode, f1, fl, &self.setup.geometry) - width)
    }

    fn site_location(&self, finger: Finger, site: ContactSite, mode: GraspMode) -> SurfaceCoord {
        let geom = &self.setup.geometry;
        let skin = self.setup.optics.skin;
        let world = &self.setup.world;
        let tip = (skin.length - world.tip_inset).max(0.0);
        let s = match mode {
            GraspMode::Lateral => (geom.side_contact_offset / geom.finger_length * skin.length).min(tip),
            _ => tip,
        };
        let u = match (finger, site) {
            (Finger::F3, ContactSite::Side) => (skin.width / 2.0 - world.side_inset).max(0.0),
            _ => 0.0,
        };
        SurfaceCoord::new(s, u)
    }

    /// Contacts under the current spring force, with friction shares
    /// against the object's weight.
    pub fn contacts(&self) -> Vec<Contact> {
        let (Some(mode), Some(obj)) = (self.controller.mode(), self.object.as_ref()) else {
            return Vec::new();
        };
        if !(self.contact_force > 0.0) || !contact_phase(self.controller.phase()) {
            return Vec::new();
        }
        let caps = ForceSpec::TABLE;
        let mut contacts: Vec<Contact> = mode
            .contact_fingers()
            .iter()
            .map(|&finger| {
                let share = match (mode, finger) {
                    (GraspMode::Opposition, Finger::F2 | Finger::F3) => 0.5,
                    _ => 1.0,
                };
                let site = match (mode, finger) {
                    (GraspMode::Lateral, Finger::F3) => ContactSite::Side,
                    _ => ContactSite::Tip,
                };
                Contact {
                    finger,
                    site,
                    location: self.site_location(finger, site, mode),
                    normal_force: (share * self.contact_force).min(caps.max_normal_tip),
                    tangential_force: 0.0,
                }
            })
            .collect();
        let total_normal: f64 = contacts.iter().map(|c| c.normal_force).sum();
        for c in &mut contacts {
            let demand = obj.weight() * c.normal_force / total_normal;
            c.tangential_force = demand
                .min(obj.friction * c.normal_force)
                .min(caps.tangential_cap(c.finger));
        }
        contacts
    }

    /// Σ min(μ·N, tangential cap) over the contacts, N.
    pub fn friction_capacity(&self) -> f64 {
        let mu = self.object.as_ref().map_or(0.0, |o| o.friction);
        self.contacts()
            .iter()
            .map(|c| (mu * c.normal_force).min(ForceSpec::TABLE.tangential_cap(c.finger)))
            .sum()
    }

    /// Judge the current grip on `object` as a hold in `mode`.
    pub fn judge(&mut self, mode: GraspMode, object: &SimObject, ticks: u64) -> GraspOutcome {
        let final_phase = self.controller.phase();
        let contacts = self.contacts();
        let capacity = self.friction_capacity();
        let slack = self.slack().unwrap_or(0.0);
        let load = object.weight();
        let reason = if final_phase != ControllerPhase::Holding {
            Some(match self.controller.fault_reason() {
                Some(f) => format!("no hold: {f}"),
                None => format!("no hold: controller ended in {final_phase}"),
            })
        } else if contacts.is_empty() {
            Some("no contact at closure".into())
        } else if capacity < load {
            Some(format!("slips: friction {capacity:.3} N < load {load:.3} N"))
        } else {
            None
        };
        GraspOutcome {
            mode,
            object: object.name.clone(),
            held: reason.is_none(),
            reason,
            contacts,
            slack,
            friction_capacity: capacity,
            load,
            final_phase,
            ticks,
        }
    }

    /// Tactile frame for every contacting finger.
    pub fn render_frames(&self) -> Result<Vec<TactileFrame>, SimError> {
        match self.object.as_ref() {
            Some(obj) => render_contacts(&self.contacts(), obj, &self.setup, self.tick),
            None => Ok(Vec::new()),
        }
    }

    /// Empty frames for fingers without contact, so every finger has a view.
    pub fn render_all_fingers(&self) -> Result<Vec<TactileFrame>, SimError> {
        let mut frames = self.render_frames()?;
        let optics = &self.setup.optics;
        for finger in Finger::ALL {
            if !frames.iter().any(|f| f.finger == finger) {
                frames.push(TactileFrame::zeros(finger, self.tick, optics.image_width, optics.image_height));
            }
        }
        frames.sort_by_key(|f| f.finger.index());
        Ok(frames)
    }
}

/// One tactile frame per contact, with gel depth proportional to the
/// contact's normal load.
pub fn render_contacts(
    contacts: &[Contact],
    object: &SimObject,
    setup: &SimSetup,
    tick: u64,
) -> Result<Vec<TactileFrame>, SimError> {
    let optics = &setup.optics;
    let indenter = object.indenter(optics.skin.width);
    let mut frames = Vec::new();
    for c in contacts {
        let depth = c.normal_force / setup.world.gel_stiffness;
        let mut frame = TactileFrame::zeros(c.finger, tick, optics.image_width, optics.image_height);
        add_contact(&mut frame, &indenter, c.location, depth, optics)?;
        frames.push(frame);
    }
    Ok(frames)
}

/// Full result of [`simulate_grasp`].
#[derive(Debug, Clone)]
pub struct GraspRun {
    pub outcome: GraspOutcome,
    pub trace: Vec<TraceRecord>,
    pub frames: Vec<TactileFrame>,
}

/// Run one grasp of `object` in `mode` until the hold settles (or the run
/// faults or times out) and judge the hold.
pub fn simulate_grasp(mode: GraspMode, object: &SimObject, setup: &SimSetup) -> Result<GraspRun, SimError> {
    object.validate()?;
    let limit = max_aperture(mode, &setup.geometry);
    let load = object.weight();
    if object.grip_width() >= limit {
        return Ok(GraspRun {
            outcome: GraspOutcome {
                mode,
                object: object.name.clone(),
                held: false,
                reason: Some("aperture exceeded".into()),
                contacts: Vec::new(),
                slack: limit - object.grip_width(),
                friction_capacity: 0.0,
                load,
                final_phase: ControllerPhase::Idle,
                ticks: 0,
            },
            trace: Vec::new(),
            frames: Vec::new(),
        });
    }

    let mut sim = Simulation::new(setup.clone(), Some(object.clone()))?;
    sim.controller_mut().start_grasp(mode, setup.grasp)?;
    let mut trace = Vec::new();
    let mut held_ticks = 0;
    while trace.len() < setup.world.max_ticks as usize {
        let rec = sim.step()?;
        let phase = rec.phase;
        trace.push(rec);
        match phase {
            ControllerPhase::Holding => {
                held_ticks += 1;
                if held_ticks >= setup.world.hold_ticks {
                    break;
                }
            }
            ControllerPhase::Fault => break,
            _ => {}
        }
    }

    let frames = sim.render_frames()?;
    let outcome = sim.judge(mode, object, trace.len() as u64);
    Ok(GraspRun { outcome, trace, frames })
}
