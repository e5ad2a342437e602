//! What the tick agent drives: the emulated world or real servos.

use svelte_hand::grasp_controller::{GraspController, GraspMode, TraceRecord};
use svelte_hand::hand_model::aperture_unchecked;
use svelte_hand::servo_bus::{HandBus, SerialTransport, Transport};
use svelte_hand::world_sim::{Contact, GraspOutcome, SimError, SimObject, SimSetup, Simulation};

use crate::config::{BusBackend, ServiceConfig};

/// Controller plus real servos on a serial line. No object model, so no
/// contacts or tactile frames.
pub struct Hardware {
    controller: GraspController,
    hand: HandBus<Box<dyn Transport>>,
    tick: u64,
    dt: f64,
}

impl Hardware {
    pub fn new(transport: Box<dyn Transport>, setup: &SimSetup, dt: f64) -> Result<Self, SimError> {
        let mut hand = HandBus::new(transport, setup.geometry.clone(), setup.servo.torque_per_current_unit);
        hand.init()?;
        Ok(Self {
            controller: GraspController::new(setup.geometry.clone(), setup.grasp),
            hand,
            tick: 0,
            dt,
        })
    }

    fn step(&mut self) -> Result<TraceRecord, SimError> {
        let tick = self.tick;
        self.tick += 1;
        let feedback = self.hand.read_state()?;
        let out = self.controller.step(self.dt, &feedback);
        self.hand.apply(&out.command)?;
        Ok(TraceRecord::new(tick, &feedback, &out))
    }
}

pub enum Plant {
    Emulated(Box<Simulation>),
    Hardware(Box<Hardware>),
}

/// Everything the tactile worker needs to render one tick's frames.
#[derive(Debug, Clone)]
pub struct TactileJob {
    pub tick: u64,
    pub contacts: Vec<Contact>,
    pub object: SimObject,
}

impl Plant {
    /// Build the configured backend. The emulated world advances one
    /// control period per tick so simulated time tracks wall-clock time.
    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, SimError> {
        let mut setup = cfg.setup.clone();
        setup.world.tick = 1.0 / cfg.tick_hz;
        match &cfg.backend {
            BusBackend::Emulator => Ok(Plant::Emulated(Box::new(Simulation::new(setup, cfg.object.clone())?))),
            BusBackend::Serial(serial) => {
                let transport = SerialTransport::open(serial).map_err(svelte_hand::servo_bus::BusError::from)?;
                Ok(Plant::Hardware(Box::new(Hardware::new(Box::new(transport), &setup, setup.world.tick)?)))
            }
        }
    }

    pub fn backend(&self) -> &'static str {
        match self {
            Plant::Emulated(_) => "emulator",
            Plant::Hardware(_) => "serial",
        }
    }

    pub fn controller(&self) -> &GraspController {
        match self {
            Plant::Emulated(sim) => sim.controller(),
            Plant::Hardware(hw) => &hw.controller,
        }
    }

    pub fn controller_mut(&mut self) -> &mut GraspController {
        match self {
            Plant::Emulated(sim) => sim.controller_mut(),
            Plant::Hardware(hw) => &mut hw.controller,
        }
    }

    /// Index of the next tick to run.
    pub fn tick_index(&self) -> u64 {
        match self {
            Plant::Emulated(sim) => sim.tick_index(),
            Plant::Hardware(hw) => hw.tick,
        }
    }

    /// Run one tick. The tick index advances even when the bus fails.
    pub fn step(&mut self) -> Result<TraceRecord, SimError> {
        match self {
            Plant::Emulated(sim) => sim.step(),
            Plant::Hardware(hw) => hw.step(),
        }
    }

    pub fn object(&self) -> Option<&SimObject> {
        match self {
            Plant::Emulated(sim) => sim.object(),
            Plant::Hardware(_) => None,
        }
    }

    pub fn load_object(&mut self, object: SimObject) -> Result<(), String> {
        match self {
            Plant::Emulated(sim) => sim.set_object(Some(object)).map_err(|e| e.to_string()),
            Plant::Hardware(_) => Err("objects can only be loaded into the emulator".into()),
        }
    }

    pub fn contact_force(&self) -> f64 {
        match self {
            Plant::Emulated(sim) => sim.contact_force(),
            Plant::Hardware(_) => 0.0,
        }
    }

    pub fn setup(&self) -> Option<&SimSetup> {
        match self {
            Plant::Emulated(sim) => Some(sim.setup()),
            Plant::Hardware(_) => None,
        }
    }

    /// Gap between the current mode's contact fingers at the given angles.
    pub fn aperture(&self, f1: f64, flipper: f64) -> Option<f64> {
        let mode = self.controller().mode()?;
        Some(aperture_unchecked(mode, f1, flipper, self.controller().geometry()).max(0.0))
    }

    pub fn tactile_job(&self) -> Option<TactileJob> {
        match self {
            Plant::Emulated(sim) => Some(TactileJob {
                tick: sim.tick_index().saturating_sub(1),
                contacts: sim.contacts(),
                object: sim.object()?.clone(),
            }),
            Plant::Hardware(_) => None,
        }
    }

    /// Hold verdict for the current grip, when there is an object to judge.
    pub fn judge(&mut self, mode: GraspMode, ticks: u64) -> Option<GraspOutcome> {
        match self {
            Plant::Emulated(sim) => {
                let object = sim.object()?.clone();
                Some(sim.judge(mode, &object, ticks))
            }
            Plant::Hardware(_) => None,
        }
    }
}
