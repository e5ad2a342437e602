use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use svelte_hand::grasp_controller::{ControllerPhase, GraspMode};
use svelte_hand::hand_model::{calibrate_geometry_from, ApertureTargets, CalibrationError, HandGeometry};
use svelte_hand::tactile_sim::{frame_metrics, TactileFrame};
use svelte_hand::world_sim::trace::{parse_trace, replay_text, TraceLine};
use svelte_hand::world_sim::{run_demo, DemoTask, GraspOutcome, SimError, SimObject, Simulation};
use svelte_service::client::Reply;
use svelte_service::protocol::TelemetryData;
use svelte_service::{Client, CommandKind, Service, ServiceConfig};

#[derive(Parser)]
#[command(name = "svelte", version, about = "Calibrate, simulate and drive the tactile hand")]
struct Cli {
    /// Config file (JSON). Falls back to $SVELTE_HAND_CONFIG, then defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Service address; defaults to the config's listen address.
    #[arg(long, global = true, value_name = "ADDR")]
    socket: Option<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the finger lengths to the fully open apertures (mm) and write
    /// geometry.calibrated.json.
    Calibrate {
        pinch: f64,
        lateral: f64,
        opposition: f64,
    },
    /// Run a demo grasp in the simulated world.
    Demo {
        /// lego-pinch | screwdriver-lateral | flashlight-opposition
        task: DemoTask,
        /// Replace the demo's object with one read from a JSON file.
        #[arg(long, value_name = "PATH")]
        object: Option<PathBuf>,
    },
    /// Re-simulate a trace and compare it line by line.
    Replay { trace: PathBuf },
    /// Re-simulate a trace and write its tactile frames as PGM images.
    Export {
        trace: PathBuf,
        /// Write frames every this many ticks while in contact.
        #[arg(long, default_value_t = 10)]
        every: u64,
    },
    /// Run the control service until killed.
    Serve,
    /// Run a grasp through a running service.
    Grasp {
        mode: ModeArg,
        /// Load one of the demo objects first (emulator only).
        #[arg(long, value_name = "TASK")]
        object: Option<DemoTask>,
        /// Twist once the hold is reached (pinch only).
        #[arg(long)]
        twist: bool,
        /// Release after the hold (and twist).
        #[arg(long)]
        release: bool,
        /// Seconds to wait for the hold.
        #[arg(long, default_value_t = 30.0)]
        timeout: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Pinch,
    Lateral,
    Opposition,
}

impl From<ModeArg> for GraspMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Pinch => GraspMode::Pinch,
            ModeArg::Lateral => GraspMode::Lateral,
            ModeArg::Opposition => GraspMode::Opposition,
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    /// Bad input, config or precondition.
    #[error("{0}")]
    Invalid(String),
    /// Calibration failure or replay divergence.
    #[error("{0}")]
    Mismatch(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Mismatch(_) => 3,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidObject(_) | SimError::Rejected(_) | SimError::Trace(_) => CliError::Invalid(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = ServiceConfig::discover(cli.config.as_deref()).map_err(|e| CliError::Invalid(e.to_string()))?;
    match &cli.command {
        Command::Calibrate { pinch, lateral, opposition } => calibrate(cli, &cfg, [*pinch, *lateral, *opposition]),
        Command::Demo { task, object } => demo(cli, &cfg, *task, object.as_deref()),
        Command::Replay { trace } => replay(cli, trace),
        Command::Export { trace, every } => export(cli, trace, *every),
        Command::Serve => serve(cli, cfg),
        Command::Grasp { mode, object, twist, release, timeout } => grasp(
            cli,
            &cfg,
            GraspRequest {
                mode: (*mode).into(),
                object: *object,
                twist: *twist,
                release: *release,
                timeout: Duration::from_secs_f64(*timeout),
            },
        ),
    }
}

fn emit<T: Serialize>(cli: &Cli, value: &T, text: impl FnOnce() -> String) {
    if cli.json {
        println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
    } else {
        println!("{}", text());
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

#[derive(Serialize)]
struct CalibrateOutput {
    targets: [f64; 3],
    residuals: [f64; 3],
    rms: f64,
    file: PathBuf,
    geometry: HandGeometry,
}

fn calibrate(cli: &Cli, cfg: &ServiceConfig, targets: [f64; 3]) -> Result<(), CliError> {
    let [p, l, o] = targets;
    let cal = calibrate_geometry_from(&cfg.setup.geometry, &ApertureTargets::new(p, l, o)).map_err(|e| match e {
        CalibrationError::InvalidTargets(_) => CliError::Invalid(e.to_string()),
        CalibrationError::NotConverged { .. } => CliError::Mismatch(e.to_string()),
    })?;
    let dir = out_dir(cli);
    fs::create_dir_all(&dir).map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))?;
    let file = dir.join("geometry.calibrated.json");
    cal.geometry.save(&file).map_err(|e| CliError::Failed(e.to_string()))?;
    let out = CalibrateOutput { targets, residuals: cal.residuals, rms: cal.rms, file, geometry: cal.geometry };
    emit(cli, &out, || {
        let g = &out.geometry;
        format!(
            "finger_length {:.4} mm, side_contact_offset {:.4} mm, motor_axis_separation {:.4} mm\n\
             residuals pinch {:+.2e} lateral {:+.2e} opposition {:+.2e} mm (rms {:.2e})\nwrote {}",
            g.finger_length,
            g.side_contact_offset,
            g.motor_axis_separation,
            out.residuals[0],
            out.residuals[1],
            out.residuals[2],
            out.rms,
            out.file.display()
        )
    });
    Ok(())
}

#[derive(Serialize)]
struct DemoOutput<'a> {
    task: DemoTask,
    outcome: &'a GraspOutcome,
    files: &'a [PathBuf],
}

fn describe_outcome(o: &GraspOutcome) -> String {
    let mut s = format!(
        "{} {}: held={} after {} ticks, friction {:.3} N vs load {:.3} N",
        o.mode, o.object, o.held, o.ticks, o.friction_capacity, o.load
    );
    if let Some(r) = &o.reason {
        s += &format!(" ({r})");
    }
    for c in &o.contacts {
        s += &format!(
            "\n  {} {} at s={:.1} u={:.1} mm: normal {:.3} N, tangential {:.3} N",
            c.finger, c.site, c.location.s, c.location.u, c.normal_force, c.tangential_force
        );
    }
    s
}

fn demo(cli: &Cli, cfg: &ServiceConfig, task: DemoTask, object: Option<&Path>) -> Result<(), CliError> {
    let object = match object {
        Some(path) => Some(
            serde_json::from_str::<SimObject>(&read_text(path)?)
                .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?,
        ),
        None => None,
    };
    let dir = out_dir(cli);
    let report = run_demo(task, object, &cfg.setup, Some(&dir))?;
    let out = DemoOutput { task, outcome: &report.outcome, files: &report.files };
    emit(cli, &out, || {
        format!("{}\nwrote {} files to {}", describe_outcome(&report.outcome), report.files.len(), dir.display())
    });
    if report.outcome.held {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{task}: object not held")))
    }
}

#[derive(Serialize)]
struct ReplayOutput {
    identical: bool,
    lines_compared: usize,
    divergence_line: Option<usize>,
    divergence_tick: Option<u64>,
}

fn replay(cli: &Cli, trace: &Path) -> Result<(), CliError> {
    let report = replay_text(&read_text(trace)?)?;
    let out = ReplayOutput {
        identical: report.identical(),
        lines_compared: report.lines_compared,
        divergence_line: report.divergence.as_ref().map(|d| d.line),
        divergence_tick: report.divergence.as_ref().and_then(|d| d.tick),
    };
    emit(cli, &out, || match &report.divergence {
        None => format!("identical: {} lines", report.lines_compared),
        Some(d) => format!(
            "diverged at line {} (tick {})\n  recorded: {}\n  replayed: {}",
            d.line,
            d.tick.map_or("-".into(), |t| t.to_string()),
            d.expected.as_deref().unwrap_or("<end of trace>"),
            d.actual.as_deref().unwrap_or("<end of trace>")
        ),
    });
    match report.divergence {
        None => Ok(()),
        Some(d) => Err(CliError::Mismatch(match d.tick {
            Some(t) => format!("replay diverged at tick {t} (line {})", d.line),
            None => format!("replay diverged at line {}", d.line),
        })),
    }
}

#[derive(Serialize)]
struct ExportedFrame {
    file: PathBuf,
    finger: String,
    tick: u64,
    contact_area: f64,
    max_depth: f64,
}

fn export(cli: &Cli, trace: &Path, every: u64) -> Result<(), CliError> {
    if every == 0 {
        return Err(CliError::Invalid("--every must be at least 1".into()));
    }
    let text = read_text(trace)?;
    let report = replay_text(&text)?;
    if let Some(d) = report.divergence {
        return Err(CliError::Mismatch(format!("trace does not replay (line {}); not exporting", d.line)));
    }
    let lines = parse_trace(&text)?;
    let Some(TraceLine::Run(header)) = lines.first() else {
        return Err(CliError::Invalid("trace does not start with a run record".into()));
    };
    let ticks = lines.iter().filter(|l| matches!(l, TraceLine::Tick(_))).count() as u64;

    let dir = out_dir(cli);
    fs::create_dir_all(&dir).map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))?;
    let mut sim = Simulation::new(header.setup.clone(), Some(header.object.clone()))?;
    if ticks > 0 {
        sim.controller_mut()
            .start_grasp(header.mode, header.setup.grasp)
            .map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    let mut written = Vec::new();
    for _ in 0..ticks {
        let rec = sim.step()?;
        if rec.tick % every != 0 && rec.tick + 1 != ticks {
            continue;
        }
        for frame in sim.render_frames()? {
            written.push(write_frame(&dir, &frame, &header.setup.optics)?);
        }
    }
    emit(cli, &written, || {
        format!("wrote {} frames from {} ticks to {}", written.len(), ticks, dir.display())
    });
    Ok(())
}

fn write_frame(
    dir: &Path,
    frame: &TactileFrame,
    optics: &svelte_hand::tactile_sim::OpticsMap,
) -> Result<ExportedFrame, CliError> {
    let file = dir.join(format!("frame_{}_{}.pgm", frame.finger, frame.tick));
    fs::write(&file, frame.to_pgm()).map_err(|e| CliError::Failed(format!("{}: {e}", file.display())))?;
    let m = frame_metrics(frame, optics);
    Ok(ExportedFrame {
        file,
        finger: frame.finger.to_string(),
        tick: frame.tick,
        contact_area: m.contact_area,
        max_depth: m.max_depth,
    })
}

fn serve(cli: &Cli, mut cfg: ServiceConfig) -> Result<(), CliError> {
    if let Some(addr) = &cli.socket {
        cfg.listen = addr.clone();
    }
    let backend = cfg.backend.name();
    let service = Service::start(cfg).map_err(|e| CliError::Failed(e.to_string()))?;
    let addr = service.local_addr();
    if cli.json {
        println!("{}", serde_json::json!({ "listening": addr.to_string(), "backend": backend }));
    } else {
        println!("listening on {addr} ({backend})");
    }
    let _ = std::io::stdout().flush();
    service.wait();
    Ok(())
}

struct GraspRequest {
    mode: GraspMode,
    object: Option<DemoTask>,
    twist: bool,
    release: bool,
    timeout: Duration,
}

#[derive(Serialize)]
struct GraspOutput {
    mode: GraspMode,
    start_tick: u64,
    phases: Vec<ControllerPhase>,
    reached_holding: bool,
    outcome: Option<GraspOutcome>,
    twisted: bool,
    released: bool,
}

const REPLY_TIMEOUT: Duration = Duration::from_secs(5);

fn grasp(cli: &Cli, cfg: &ServiceConfig, req: GraspRequest) -> Result<(), CliError> {
    let addr = cli.socket.clone().unwrap_or_else(|| cfg.listen.clone());
    let net = |e: svelte_service::ClientError| CliError::Failed(e.to_string());
    let mut client = Client::connect(&addr).map_err(net)?;
    let send = |client: &mut Client, cmd: CommandKind| -> Result<u64, CliError> {
        match client.request(cmd, REPLY_TIMEOUT).map_err(net)? {
            Reply::Ack { tick } => Ok(tick),
            Reply::Reject { reason } => Err(CliError::Invalid(format!("rejected: {reason}"))),
        }
    };
    if let Some(task) = req.object {
        send(&mut client, CommandKind::LoadObject { object: task.object() })?;
    }
    client.subscribe(Some(1000), false).map_err(net)?;
    let start_tick = send(&mut client, CommandKind::StartGrasp { mode: req.mode })?;

    let mut out = GraspOutput {
        mode: req.mode,
        start_tick,
        phases: Vec::new(),
        reached_holding: false,
        outcome: None,
        twisted: false,
        released: false,
    };
    // Wait for the hold, then for the verdict if the backend gives one.
    let deadline = Instant::now() + req.timeout;
    let mut verdict_deadline: Option<Instant> = None;
    loop {
        let now = Instant::now();
        let until = verdict_deadline.unwrap_or(deadline).min(deadline);
        if now >= until {
            break;
        }
        let t = match client.next_telemetry(until - now) {
            Ok(t) => t,
            Err(svelte_service::ClientError::Timeout(_)) => break,
            Err(e) => return Err(net(e)),
        };
        if t.tick < start_tick {
            continue;
        }
        match t.data {
            TelemetryData::PhaseChange { to, .. } => {
                out.phases.push(to);
                match to {
                    ControllerPhase::Holding => {
                        out.reached_holding = true;
                        verdict_deadline = Some(Instant::now() + Duration::from_secs(2));
                    }
                    ControllerPhase::Fault => break,
                    _ => {}
                }
            }
            TelemetryData::GraspOutcome(o) => {
                out.outcome = Some(*o);
                if out.reached_holding {
                    break;
                }
            }
            TelemetryData::Fault { .. } if !out.reached_holding => break,
            _ => {}
        }
    }

    if out.reached_holding && req.twist {
        send(&mut client, CommandKind::Twist)?;
        wait_for_phase(&mut client, &mut out.phases, ControllerPhase::Holding, req.timeout).map_err(net)?;
        out.twisted = true;
    }
    if req.release {
        send(&mut client, CommandKind::Release)?;
        wait_for_phase(&mut client, &mut out.phases, ControllerPhase::Idle, req.timeout).map_err(net)?;
        out.released = true;
    }

    emit(cli, &out, || {
        let names: Vec<_> = out.phases.iter().map(|p| p.as_str()).collect();
        let mut s = format!("{} grasp from tick {}: {}", out.mode, out.start_tick, names.join(" -> "));
        if let Some(o) = &out.outcome {
            s += "\n";
            s += &describe_outcome(o);
        }
        s
    });
    if out.reached_holding {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{} grasp did not reach holding", req.mode)))
    }
}

fn wait_for_phase(
    client: &mut Client,
    phases: &mut Vec<ControllerPhase>,
    target: ControllerPhase,
    timeout: Duration,
) -> Result<(), svelte_service::ClientError> {
    let deadline = Instant::now() + timeout;
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        if let TelemetryData::PhaseChange { to, .. } = client.next_telemetry(left)?.data {
            phases.push(to);
            if to == target {
                return Ok(());
            }
        }
    }
}
