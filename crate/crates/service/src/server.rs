use std::collections::{HashMap, HashSet, VecDeque};
use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, select, unbounded, Receiver, Sender, TryRecvError, TrySendError};
use svelte_hand::grasp_controller::{ControllerPhase, FeedbackSample, Rejection, TraceRecord};
use svelte_hand::hand_model::Finger;
use svelte_hand::tactile_sim::{OpticsMap, TactileFrame};
use svelte_hand::world_sim::{render_contacts, SimError, SimSetup};

use crate::config::{ConfigError, ServiceConfig};
use crate::plant::{Plant, TactileJob};
use crate::protocol::{
    read_frame, write_message, ClientMessage, CommandKind, CommandMessage, FrameError, JointSample, ServerMessage,
    StateSnapshot, TactileFrameMessage, TelemetryData, TelemetryMessage, PROTOCOL_VERSION,
};

/// Trace records kept in memory for inspection.
const TRACE_CAPACITY: usize = 10_000;
/// Tick intervals kept for jitter statistics.
const JITTER_WINDOW: usize = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("backend: {0}")]
    Plant(#[from] SimError),
    #[error("thread spawn: {0}")]
    Spawn(io::Error),
}

/// Tick timing as measured by the tick agent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TickStats {
    pub ticks: u64,
    /// Nominal period, s.
    pub period: f64,
    /// |interval − period| over the recent window, s.
    pub mean_jitter: f64,
    pub p99_jitter: f64,
    pub max_jitter: f64,
    /// Longest time spent inside one tick, s.
    pub max_busy: f64,
}

#[derive(Default)]
struct StatsState {
    ticks: u64,
    jitter: VecDeque<f64>,
    max_busy: f64,
}

enum ToAgent {
    Connect {
        conn: u64,
        events: Sender<ServerMessage>,
        samples: Sender<ServerMessage>,
    },
    Command {
        conn: u64,
        msg: CommandMessage,
    },
    Subscribe {
        conn: u64,
        decimation: Option<u32>,
        tactile: bool,
    },
    Unsubscribe {
        conn: u64,
    },
    Disconnect {
        conn: u64,
    },
}

/// A running service. Dropping it without [`Service::shutdown`] leaves the
/// threads running.
pub struct Service {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    stats: Arc<Mutex<StatsState>>,
    period: f64,
    trace: Arc<Mutex<VecDeque<TraceRecord>>>,
    threads: Vec<JoinHandle<()>>,
}

impl Service {
    /// Bind, build the backend and start the tick agent.
    pub fn start(cfg: ServiceConfig) -> Result<Self, ServiceError> {
        cfg.validate()?;
        let listener = TcpListener::bind(&cfg.listen).map_err(|source| ServiceError::Bind {
            addr: cfg.listen.clone(),
            source,
        })?;
        let bind_err = |source| ServiceError::Bind { addr: cfg.listen.clone(), source };
        let addr = listener.local_addr().map_err(bind_err)?;
        listener.set_nonblocking(true).map_err(bind_err)?;

        let plant = Plant::from_config(&cfg)?;
        let stop = Arc::new(AtomicBool::new(false));
        let stats = Arc::new(Mutex::new(StatsState::default()));
        let trace = Arc::new(Mutex::new(VecDeque::new()));
        let (agent_tx, agent_rx) = unbounded();
        let (job_tx, job_rx) = bounded::<TactileJob>(1);
        let (frames_tx, frames_rx) = unbounded();

        let mut threads = Vec::new();
        let setup = plant.setup().cloned().unwrap_or_else(|| cfg.setup.clone());
        threads.push(spawn("svelte-tactile", move || tactile_worker(setup, job_rx, frames_tx))?);

        let agent = Agent {
            plant,
            inbox: agent_rx,
            conns: HashMap::new(),
            jobs: job_tx,
            rendered: frames_rx,
            start: Instant::now(),
            last_phase: ControllerPhase::Idle,
            last_feedback: None,
            held_ticks: 0,
            grasp_start: 0,
            outcome_sent: false,
            last_error: None,
            had_contact: false,
            stats: stats.clone(),
            trace: trace.clone(),
            cfg: cfg.clone(),
        };
        let agent_stop = stop.clone();
        threads.push(spawn("svelte-tick", move || agent.run(&agent_stop))?);

        let accept_stop = stop.clone();
        let queue = cfg.subscriber_queue;
        threads.push(spawn("svelte-accept", move || accept_loop(listener, agent_tx, queue, &accept_stop))?);
        log::info!("control service listening on {addr} ({})", cfg.backend.name());
        Ok(Self {
            addr,
            stop,
            stats,
            period: 1.0 / cfg.tick_hz,
            trace,
            threads,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn tick_stats(&self) -> TickStats {
        let s = self.stats.lock().unwrap();
        let mut sorted: Vec<f64> = s.jitter.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len().max(1) as f64;
        TickStats {
            ticks: s.ticks,
            period: self.period,
            mean_jitter: sorted.iter().sum::<f64>() / n,
            p99_jitter: sorted.get(sorted.len() * 99 / 100).copied().unwrap_or(0.0),
            max_jitter: sorted.last().copied().unwrap_or(0.0),
            max_busy: s.max_busy,
        }
    }

    /// Forget the jitter collected so far, e.g. after a warm-up.
    pub fn reset_tick_stats(&self) {
        let mut s = self.stats.lock().unwrap();
        s.jitter.clear();
        s.max_busy = 0.0;
    }

    /// The most recent trace records, oldest first.
    pub fn trace(&self) -> Vec<TraceRecord> {
        self.trace.lock().unwrap().iter().cloned().collect()
    }

    /// Block until another handle stops the service (or forever).
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn spawn(name: &str, f: impl FnOnce() + Send + 'static) -> Result<JoinHandle<()>, ServiceError> {
    thread::Builder::new()
        .name(name.into())
        .spawn(f)
        .map_err(ServiceError::Spawn)
}

/// Drop the calling thread to the lowest scheduling priority so that on a
/// loaded or single-core machine the tick thread preempts it on wake-up.
fn background_priority() {
    #[cfg(target_os = "linux")]
    // SAFETY: plain syscalls on the calling thread's own id.
    unsafe {
        let tid = libc::syscall(libc::SYS_gettid) as libc::id_t;
        libc::setpriority(libc::PRIO_PROCESS, tid, 19);
    }
}

fn accept_loop(listener: TcpListener, agent: Sender<ToAgent>, queue: usize, stop: &AtomicBool) {
    static NEXT_CONN: AtomicU64 = AtomicU64::new(1);
    background_priority();
    let mut open: Vec<TcpStream> = Vec::new();
    let mut workers = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let conn = NEXT_CONN.fetch_add(1, Ordering::Relaxed);
                log::debug!("connection {conn} from {peer}");
                match start_connection(conn, stream, &agent, queue) {
                    Ok((handle, threads)) => {
                        open.push(handle);
                        workers.extend(threads);
                    }
                    Err(e) => log::warn!("connection {conn}: {e}"),
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("accept: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
        workers.retain(|t: &JoinHandle<()>| !t.is_finished());
    }
    for s in &open {
        let _ = s.shutdown(std::net::Shutdown::Both);
    }
    for t in workers {
        let _ = t.join();
    }
}

fn start_connection(
    conn: u64,
    stream: TcpStream,
    agent: &Sender<ToAgent>,
    queue: usize,
) -> io::Result<(TcpStream, Vec<JoinHandle<()>>)> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let reader = stream.try_clone()?;
    let writer = stream.try_clone()?;
    let (events_tx, events_rx) = unbounded();
    let (samples_tx, samples_rx) = bounded(queue);
    let _ = agent.send(ToAgent::Connect {
        conn,
        events: events_tx.clone(),
        samples: samples_tx,
    });
    let agent = agent.clone();
    let r = thread::Builder::new()
        .name(format!("svelte-read-{conn}"))
        .spawn(move || read_loop(conn, reader, events_tx, agent))?;
    let w = thread::Builder::new()
        .name(format!("svelte-write-{conn}"))
        .spawn(move || write_loop(writer, events_rx, samples_rx))?;
    Ok((stream, vec![r, w]))
}

fn read_loop(conn: u64, stream: TcpStream, events: Sender<ServerMessage>, agent: Sender<ToAgent>) {
    background_priority();
    let mut reader = BufReader::new(stream);
    let mut seen = HashSet::new();
    let protocol_error = |id, message: String| {
        let _ = events.send(ServerMessage::ProtocolError { id, message });
    };
    loop {
        let body = match read_frame(&mut reader) {
            Ok(Some(body)) => body,
            Ok(None) => break,
            Err(FrameError::TooLong(n)) => {
                protocol_error(None, format!("frame length {n} exceeds limit; closing"));
                break;
            }
            Err(FrameError::Io(_)) => break,
        };
        let msg = match serde_json::from_slice::<ClientMessage>(&body) {
            Ok(msg) => msg,
            Err(e) => {
                let id = serde_json::from_slice::<serde_json::Value>(&body)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|id| id.as_u64()));
                protocol_error(id, format!("malformed message: {e}"));
                continue;
            }
        };
        let to_agent = match msg {
            ClientMessage::Command(msg) => {
                if !seen.insert(msg.id) {
                    protocol_error(Some(msg.id), format!("duplicate request id {}", msg.id));
                    continue;
                }
                ToAgent::Command { conn, msg }
            }
            ClientMessage::Subscribe { decimation: Some(0), .. } => {
                protocol_error(None, "decimation must be at least 1".into());
                continue;
            }
            ClientMessage::Subscribe { decimation, tactile } => ToAgent::Subscribe { conn, decimation, tactile },
            ClientMessage::Unsubscribe => ToAgent::Unsubscribe { conn },
        };
        if agent.send(to_agent).is_err() {
            break;
        }
    }
    let _ = agent.send(ToAgent::Disconnect { conn });
}

fn write_loop(stream: TcpStream, events: Receiver<ServerMessage>, samples: Receiver<ServerMessage>) {
    background_priority();
    let shutdown_handle = stream.try_clone().ok();
    let mut w = BufWriter::new(stream);
    let mut seq = 0u64;
    loop {
        // Replies and events go out ahead of droppable telemetry.
        let next = match events.try_recv() {
            Ok(m) => Some(m),
            Err(TryRecvError::Disconnected) => None,
            Err(TryRecvError::Empty) => select! {
                recv(events) -> m => m.ok(),
                recv(samples) -> m => m.ok(),
            },
        };
        let Some(mut msg) = next else { break };
        if let ServerMessage::Telemetry(t) = &mut msg {
            t.seq = seq;
            seq += 1;
        }
        if write_message(&mut w, &msg).is_err() {
            break;
        }
    }
    if let Some(s) = shutdown_handle {
        let _ = s.shutdown(std::net::Shutdown::Both);
    }
}

fn tactile_worker(setup: SimSetup, jobs: Receiver<TactileJob>, out: Sender<(u64, TelemetryData)>) {
    background_priority();
    for job in jobs {
        let frames = match render_contacts(&job.contacts, &job.object, &setup, job.tick) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("tactile render at tick {}: {e}", job.tick);
                continue;
            }
        };
        let data = TelemetryData::TactileFrames {
            frames: all_fingers(frames, job.tick, &setup.optics)
                .iter()
                .map(|f| TactileFrameMessage::encode(f, &setup.optics))
                .collect(),
        };
        if out.send((job.tick, data)).is_err() {
            break;
        }
    }
}

fn all_fingers(mut frames: Vec<TactileFrame>, tick: u64, optics: &OpticsMap) -> Vec<TactileFrame> {
    for finger in Finger::ALL {
        if !frames.iter().any(|f| f.finger == finger) {
            frames.push(TactileFrame::zeros(finger, tick, optics.image_width, optics.image_height));
        }
    }
    frames.sort_by_key(|f| f.finger.index());
    frames
}

struct Subscription {
    decimation: u32,
    tactile: bool,
}

struct Connection {
    events: Sender<ServerMessage>,
    samples: Sender<ServerMessage>,
    sub: Option<Subscription>,
    dropped: u64,
}

impl Connection {
    fn event(&self, msg: ServerMessage) {
        let _ = self.events.send(msg);
    }

    fn offer(&mut self, msg: ServerMessage) {
        match self.samples.try_send(msg) {
            Ok(()) | Err(TrySendError::Disconnected(_)) => {}
            Err(TrySendError::Full(_)) => self.dropped += 1,
        }
    }
}

struct Agent {
    cfg: ServiceConfig,
    plant: Plant,
    inbox: Receiver<ToAgent>,
    conns: HashMap<u64, Connection>,
    jobs: Sender<TactileJob>,
    rendered: Receiver<(u64, TelemetryData)>,
    start: Instant,
    last_phase: ControllerPhase,
    last_feedback: Option<FeedbackSample>,
    held_ticks: u32,
    grasp_start: u64,
    outcome_sent: bool,
    last_error: Option<String>,
    had_contact: bool,
    stats: Arc<Mutex<StatsState>>,
    trace: Arc<Mutex<VecDeque<TraceRecord>>>,
}

impl Agent {
    fn run(mut self, stop: &AtomicBool) {
        let period = self.cfg.period();
        let mut next = Instant::now();
        let mut last_start: Option<Instant> = None;
        while !stop.load(Ordering::SeqCst) {
            let now = Instant::now();
            if next > now {
                thread::sleep(next - now);
            }
            let started = Instant::now();
            if let Some(prev) = last_start {
                let interval = (started - prev).as_secs_f64();
                let mut s = self.stats.lock().unwrap();
                if s.jitter.len() == JITTER_WINDOW {
                    s.jitter.pop_front();
                }
                s.jitter.push_back((interval - period.as_secs_f64()).abs());
            }
            last_start = Some(started);

            self.tick();

            let busy = started.elapsed().as_secs_f64();
            {
                let mut s = self.stats.lock().unwrap();
                s.ticks += 1;
                s.max_busy = s.max_busy.max(busy);
            }
            next += period;
            // After an overrun, restart the schedule instead of bursting.
            let now = Instant::now();
            if next < now {
                next = now;
            }
        }
    }

    fn timestamp(&self) -> u64 {
        self.start.elapsed().as_micros() as u64
    }

    fn telemetry(&self, tick: u64, data: TelemetryData) -> ServerMessage {
        ServerMessage::Telemetry(TelemetryMessage {
            seq: 0,
            tick,
            timestamp_us: self.timestamp(),
            data,
        })
    }

    fn broadcast_event(&self, tick: u64, data: TelemetryData) {
        let msg = self.telemetry(tick, data);
        for c in self.conns.values().filter(|c| c.sub.is_some()) {
            c.event(msg.clone());
        }
    }

    fn tick(&mut self) {
        let tick = self.plant.tick_index();
        let mut applied = Vec::new();
        while let Ok(msg) = self.inbox.try_recv() {
            self.handle(msg, tick, &mut applied);
        }

        match self.plant.step() {
            Ok(mut record) => {
                self.last_error = None;
                if !applied.is_empty() {
                    record.applied = Some(applied.join("; "));
                }
                self.publish(&record, !applied.is_empty());
                let mut trace = self.trace.lock().unwrap();
                if trace.len() == TRACE_CAPACITY {
                    trace.pop_front();
                }
                trace.push_back(record);
            }
            Err(e) => {
                let reason = format!("bus: {e}");
                if self.last_error.as_deref() != Some(reason.as_str()) {
                    log::warn!("tick {tick}: {reason}");
                    self.broadcast_event(tick, TelemetryData::Fault { reason: reason.clone() });
                    self.last_error = Some(reason);
                }
            }
        }
        self.tactile(tick);
    }

    fn handle(&mut self, msg: ToAgent, tick: u64, applied: &mut Vec<String>) {
        match msg {
            ToAgent::Connect { conn, events, samples } => {
                self.conns.insert(conn, Connection { events, samples, sub: None, dropped: 0 });
            }
            ToAgent::Disconnect { conn } => {
                self.conns.remove(&conn);
            }
            ToAgent::Unsubscribe { conn } => {
                if let Some(c) = self.conns.get_mut(&conn) {
                    c.sub = None;
                }
            }
            ToAgent::Subscribe { conn, decimation, tactile } => {
                let snapshot = self.telemetry(
                    tick.saturating_sub(1),
                    TelemetryData::Snapshot(Box::new(self.snapshot())),
                );
                if let Some(c) = self.conns.get_mut(&conn) {
                    c.event(snapshot);
                    c.sub = Some(Subscription {
                        decimation: decimation.unwrap_or(self.cfg.sample_decimation),
                        tactile,
                    });
                }
            }
            ToAgent::Command { conn, msg } => {
                let reply = match self.apply(&msg.command) {
                    Ok(()) => {
                        applied.push(format!("#{} {}", msg.id, msg.command.name()));
                        ServerMessage::Ack { id: msg.id, tick }
                    }
                    Err(reason) => ServerMessage::Reject { id: msg.id, reason },
                };
                if let Some(c) = self.conns.get(&conn) {
                    c.event(reply);
                }
            }
        }
    }

    fn apply(&mut self, cmd: &CommandKind) -> Result<(), String> {
        let ctrl = self.plant.controller_mut();
        let cfg = *ctrl.config();
        let result = match cmd {
            CommandKind::StartGrasp { mode } => ctrl.start_grasp(*mode, cfg),
            CommandKind::Release => ctrl.release(),
            CommandKind::Twist => ctrl.twist(&cfg),
            CommandKind::Jog { joint, degrees } => ctrl.jog(*joint, *degrees),
            CommandKind::SetConfig { config } => ctrl.set_config(*config),
            CommandKind::LoadObject { object } => {
                let phase = ctrl.phase();
                if phase != ControllerPhase::Idle {
                    return Err(Rejection::Busy(phase).to_string());
                }
                return self.plant.load_object(object.clone());
            }
        };
        result.map_err(|e| e.to_string())
    }

    fn snapshot(&self) -> StateSnapshot {
        let ctrl = self.plant.controller();
        StateSnapshot {
            protocol_version: PROTOCOL_VERSION,
            backend: self.plant.backend().into(),
            tick_hz: self.cfg.tick_hz,
            controller: ctrl.snapshot(),
            feedback: self.last_feedback,
            aperture: self.last_feedback.and_then(|f| self.plant.aperture(f.f1, f.flipper)),
            config: *ctrl.config(),
            geometry: ctrl.geometry().clone(),
            optics: self.cfg.setup.optics.clone(),
            object: self.plant.object().cloned(),
        }
    }

    fn publish(&mut self, record: &TraceRecord, forced: bool) {
        let tick = record.tick;
        self.last_feedback = Some(record.feedback);

        if record.phase != self.last_phase {
            let from = std::mem::replace(&mut self.last_phase, record.phase);
            self.broadcast_event(tick, TelemetryData::PhaseChange { from, to: record.phase, mode: record.mode });
            match record.phase {
                ControllerPhase::OpeningF1 => {
                    self.outcome_sent = false;
                    self.grasp_start = tick;
                }
                ControllerPhase::Holding => self.held_ticks = 0,
                ControllerPhase::Fault => {
                    let reason = self.plant.controller().fault_reason().unwrap_or("fault").to_string();
                    self.broadcast_event(tick, TelemetryData::Fault { reason });
                    self.send_outcome(record);
                }
                _ => {}
            }
        }
        if record.phase == ControllerPhase::Holding {
            self.held_ticks += 1;
            if self.held_ticks >= self.cfg.setup.world.hold_ticks {
                self.send_outcome(record);
            }
        }

        let sample = JointSample {
            phase: record.phase,
            mode: record.mode,
            feedback: record.feedback,
            command: record.command,
            aperture: self.plant.aperture(record.feedback.f1, record.feedback.flipper),
            contact_force: self.plant.contact_force(),
            dropped: 0,
        };
        let timestamp_us = self.timestamp();
        for c in self.conns.values_mut() {
            let Some(sub) = &c.sub else { continue };
            if forced || tick.is_multiple_of(sub.decimation as u64) {
                let data = TelemetryData::JointStateSample(JointSample { dropped: c.dropped, ..sample });
                c.offer(ServerMessage::Telemetry(TelemetryMessage { seq: 0, tick, timestamp_us, data }));
            }
        }
    }

    fn send_outcome(&mut self, record: &TraceRecord) {
        if self.outcome_sent {
            return;
        }
        let Some(mode) = record.mode else { return };
        if let Some(outcome) = self.plant.judge(mode, record.tick + 1 - self.grasp_start) {
            self.outcome_sent = true;
            self.broadcast_event(record.tick, TelemetryData::GraspOutcome(Box::new(outcome)));
        }
    }

    fn tactile(&mut self, tick: u64) {
        let wanted = self.conns.values().any(|c| c.sub.as_ref().is_some_and(|s| s.tactile));
        if wanted && tick.is_multiple_of(self.cfg.tactile_interval()) {
            if let Some(job) = self.plant.tactile_job() {
                let contact = !job.contacts.is_empty();
                // Render while in contact, plus once after release to clear views.
                if (contact || self.had_contact) && self.jobs.try_send(job).is_ok() {
                    self.had_contact = contact;
                }
            }
        }
        while let Ok((frame_tick, data)) = self.rendered.try_recv() {
            let msg = self.telemetry(frame_tick, data);
            for c in self.conns.values_mut() {
                if c.sub.as_ref().is_some_and(|s| s.tactile) {
                    c.offer(msg.clone());
                }
            }
        }
    }
}
