use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use svelte_hand::hand_model::HandGeometry;
use svelte_hand::servo_bus::SerialConfig;
use svelte_hand::world_sim::{SimObject, SimSetup};

/// Environment variable naming the config file when no path is given.
pub const CONFIG_ENV: &str = "SVELTE_HAND_CONFIG";
pub const LISTEN_ENV: &str = "SVELTE_LISTEN";
/// `emulator` or `serial:<device>`.
pub const BACKEND_ENV: &str = "SVELTE_BACKEND";
pub const TICK_HZ_ENV: &str = "SVELTE_TICK_HZ";

/// Highest tactile frame rate the service will publish.
pub const MAX_TACTILE_HZ: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BusBackend {
    Emulator,
    Serial(SerialConfig),
}

impl BusBackend {
    pub fn name(&self) -> &'static str {
        match self {
            BusBackend::Emulator => "emulator",
            BusBackend::Serial(_) => "serial",
        }
    }
}

/// Service and simulation settings, loaded from JSON with environment
/// overrides applied on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// TCP address to listen on; port 0 picks a free one.
    pub listen: String,
    pub backend: BusBackend,
    pub tick_hz: f64,
    /// Default joint-sample decimation for subscribers that don't set one.
    pub sample_decimation: u32,
    pub tactile_hz: f64,
    /// Per-subscriber queue of droppable telemetry.
    pub subscriber_queue: usize,
    /// Replaces `setup.geometry` when set, e.g. the output of `calibrate`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometry_file: Option<PathBuf>,
    pub setup: SimSetup,
    /// Object present in the emulated world at startup.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub object: Option<SimObject>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:7878".into(),
            backend: BusBackend::Emulator,
            tick_hz: 100.0,
            sample_decimation: 1,
            tactile_hz: MAX_TACTILE_HZ,
            subscriber_queue: 64,
            geometry_file: None,
            setup: SimSetup::default(),
            object: None,
        }
    }
}

impl ServiceConfig {
    pub fn from_json_str(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Read `path`, resolve `geometry_file` relative to it, and validate.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_json_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        if let Some(geom) = cfg.geometry_file.as_mut() {
            if geom.is_relative() {
                if let Some(dir) = path.parent() {
                    *geom = dir.join(&*geom);
                }
            }
        }
        cfg.resolve_geometry()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Explicit path, else `$SVELTE_HAND_CONFIG`, else defaults; then
    /// environment overrides.
    pub fn discover(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        let mut cfg = match explicit.map(Path::to_path_buf).or(from_env) {
            Some(path) => Self::load(&path)?,
            None => Self::default(),
        };
        cfg.apply_overrides(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    fn resolve_geometry(&mut self) -> Result<(), ConfigError> {
        if let Some(path) = &self.geometry_file {
            self.setup.geometry =
                HandGeometry::load(path).map_err(|e| ConfigError::Invalid(format!("geometry_file: {e}")))?;
        }
        Ok(())
    }

    /// Apply `SVELTE_LISTEN`, `SVELTE_BACKEND` and `SVELTE_TICK_HZ` as
    /// returned by `lookup`.
    pub fn apply_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(listen) = lookup(LISTEN_ENV) {
            self.listen = listen;
        }
        if let Some(backend) = lookup(BACKEND_ENV) {
            self.backend = match backend.as_str() {
                "emulator" => BusBackend::Emulator,
                other => match other.strip_prefix("serial:") {
                    Some(device) if !device.is_empty() => {
                        let mut serial = match &self.backend {
                            BusBackend::Serial(s) => s.clone(),
                            BusBackend::Emulator => SerialConfig::default(),
                        };
                        serial.device = device.to_string();
                        BusBackend::Serial(serial)
                    }
                    _ => {
                        return Err(ConfigError::Invalid(format!(
                            "{BACKEND_ENV}={other}: expected `emulator` or `serial:<device>`"
                        )))
                    }
                },
            };
        }
        if let Some(hz) = lookup(TICK_HZ_ENV) {
            self.tick_hz = hz
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{TICK_HZ_ENV}={hz}: not a number")))?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.tick_hz > 0.0 && self.tick_hz <= 1000.0) {
            return bad(format!("tick_hz {} outside (0, 1000]", self.tick_hz));
        }
        if !(self.tactile_hz > 0.0 && self.tactile_hz <= MAX_TACTILE_HZ) {
            return bad(format!("tactile_hz {} outside (0, {MAX_TACTILE_HZ}]", self.tactile_hz));
        }
        if self.sample_decimation == 0 {
            return bad("sample_decimation must be at least 1".into());
        }
        if self.subscriber_queue == 0 {
            return bad("subscriber_queue must be at least 1".into());
        }
        if let BusBackend::Serial(s) = &self.backend {
            if s.device.is_empty() {
                return bad("serial backend needs a device".into());
            }
            if self.object.is_some() {
                return bad("objects can only be loaded into the emulator".into());
            }
        }
        self.setup
            .geometry
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("geometry: {e}")))?;
        self.setup
            .grasp
            .validate(&self.setup.geometry)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(obj) = &self.object {
            obj.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    /// Ticks between tactile frames so the frame rate stays at or below
    /// `tactile_hz`.
    pub fn tactile_interval(&self) -> u64 {
        (self.tick_hz / self.tactile_hz).ceil().max(1.0) as u64
    }

    /// Control period in seconds as seen by the controller. The world keeps
    /// its own `setup.world.tick`, so the tick rate sets wall-clock pacing.
    pub fn period(&self) -> std::time::Duration {
        std::time::Duration::from_secs_f64(1.0 / self.tick_hz)
    }
}
