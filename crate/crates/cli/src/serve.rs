//! The `serve` host: one simulator thread owning a [`Simulator`], the setpoint
//! TCP server on one port, and the cockpit port carrying both static HTTP and the
//! WebSocket protocol (told apart by the `Upgrade` header).
//!
//! Every cockpit message is applied on the simulator thread between ticks, in
//! arrival order, and written to the trace with the tick it took effect at. A
//! trace recorded here replays through [`Simulator::replay`] to the same state.
//! Setpoint-protocol requests are applied the same way but are not traced.
//!
//! Lockstep hosts advance only on `step` messages and broadcast one `state`
//! after each; realtime hosts tick at wall-clock rate and broadcast every
//! `state_every` ticks.

use std::net::{IpAddr, Ipv4Addr, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use ctbot_core::controller::server::{spawn_tcp_server, Envelope, Pacing};
use ctbot_core::controller::{Reply, Request};
use ctbot_core::sim::{Applied, Simulator};
use ctbot_core::teleop::protocol::{ClientMessage, Hello, ServerMessage, WireScene, PROTOCOL_VERSION};
use ctbot_core::teleop::trace::TraceWriter;
use tungstenite::{Message, WebSocket};

use crate::http::{peek_head, StaticSite, HEATMAP_URL};

pub const DEFAULT_PORT: u16 = 7070;
pub const DEFAULT_COCKPIT_PORT: u16 = 8080;
/// 40 Hz telemetry at the default 1 ms tick.
pub const DEFAULT_STATE_EVERY: u64 = 25;

const POLL: Duration = Duration::from_millis(2);

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub bind: IpAddr,
    /// Setpoint protocol port; 0 picks a free one.
    pub port: u16,
    /// Cockpit HTTP + WebSocket port; 0 picks a free one.
    pub cockpit_port: u16,
    pub pacing: Pacing,
    pub state_every: u64,
    pub trace: Option<PathBuf>,
    pub site: StaticSite,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: DEFAULT_PORT,
            cockpit_port: DEFAULT_COCKPIT_PORT,
            pacing: Pacing::Realtime,
            state_every: DEFAULT_STATE_EVERY,
            trace: None,
            site: StaticSite::default(),
        }
    }
}

enum HostMsg {
    Controller(Envelope),
    Attach { id: u64, outbox: Sender<ServerMessage> },
    Detach(u64),
    Client { id: u64, message: ClientMessage },
}

fn wrap_controller(env: Envelope) -> HostMsg {
    HostMsg::Controller(env)
}

pub struct ServerHandle {
    pub controller_addr: SocketAddr,
    pub cockpit_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    sim_thread: JoinHandle<Simulator>,
    accept_threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    /// Stops every thread and returns the simulator in its final state.
    pub fn shutdown(self) -> Simulator {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.accept_threads {
            let _ = t.join();
        }
        self.sim_thread.join().expect("simulator thread panicked")
    }

    /// Blocks until the simulator thread exits (it runs until shutdown).
    pub fn wait(self) -> Simulator {
        self.sim_thread.join().expect("simulator thread panicked")
    }
}

/// Binds both ports and starts the host threads.
pub fn start(sim: Simulator, opts: ServeOptions) -> std::io::Result<ServerHandle> {
    let controller_listener = TcpListener::bind((opts.bind, opts.port))?;
    let cockpit_listener = TcpListener::bind((opts.bind, opts.cockpit_port))?;
    let controller_addr = controller_listener.local_addr()?;
    let cockpit_addr = cockpit_listener.local_addr()?;
    let trace = match &opts.trace {
        Some(p) => Some(TraceWriter::create(p).map_err(|e| std::io::Error::other(e.to_string()))?),
        None => None,
    };

    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel();
    let controller_thread = spawn_tcp_server(controller_listener, tx.clone(), wrap_controller, stop.clone())
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    let cockpit_thread = spawn_cockpit_server(cockpit_listener, tx, opts.site.clone(), stop.clone())?;

    let host = SimHost {
        sim,
        pacing: opts.pacing,
        state_every: opts.state_every.max(1),
        heatmap_url: opts.site.heatmap.as_ref().map(|_| HEATMAP_URL.to_string()),
        trace,
        subscribers: Vec::new(),
    };
    let stop_sim = stop.clone();
    let sim_thread = thread::spawn(move || host.run(rx, stop_sim));
    Ok(ServerHandle {
        controller_addr,
        cockpit_addr,
        stop,
        sim_thread,
        accept_threads: vec![controller_thread, cockpit_thread],
    })
}

struct SimHost {
    sim: Simulator,
    pacing: Pacing,
    state_every: u64,
    heatmap_url: Option<String>,
    trace: Option<TraceWriter>,
    subscribers: Vec<(u64, Sender<ServerMessage>)>,
}

impl SimHost {
    fn run(mut self, rx: Receiver<HostMsg>, stop: Arc<AtomicBool>) -> Simulator {
        match self.pacing {
            Pacing::Lockstep => {
                while !stop.load(Ordering::Relaxed) {
                    match rx.recv_timeout(Duration::from_millis(20)) {
                        Ok(msg) => self.handle(msg),
                        Err(RecvTimeoutError::Timeout) => {}
                        Err(RecvTimeoutError::Disconnected) => break,
                    }
                }
            }
            Pacing::Realtime => {
                let period = Duration::from_secs_f64(self.sim.controller().config().dt);
                let start = Instant::now();
                let first = self.sim.tick();
                while !stop.load(Ordering::Relaxed) {
                    loop {
                        match rx.try_recv() {
                            Ok(msg) => self.handle(msg),
                            Err(TryRecvError::Empty) => break,
                            Err(TryRecvError::Disconnected) => return self.sim,
                        }
                    }
                    self.sim.step();
                    let ticks = self.sim.tick() - first;
                    if ticks % self.state_every == 0 {
                        self.broadcast_state();
                    }
                    let due = start + period.mul_f64(ticks as f64);
                    if let Some(wait) = due.checked_duration_since(Instant::now()) {
                        thread::sleep(wait);
                    }
                }
            }
        }
        self.sim
    }

    fn handle(&mut self, msg: HostMsg) {
        match msg {
            HostMsg::Controller(env) => {
                let reply = match (&env.request, self.pacing) {
                    (Request::Step { ticks }, Pacing::Lockstep) => {
                        self.sim.run(*ticks);
                        self.broadcast_state();
                        Reply::Status(self.sim.controller().status())
                    }
                    (request, _) => self.sim.handle_request(request),
                };
                let _ = env.reply.send(reply);
            }
            HostMsg::Attach { id, outbox } => {
                let c = self.sim.controller().config();
                let hello = ServerMessage::Hello(Hello {
                    version: PROTOCOL_VERSION,
                    dt: c.dt,
                    teleop_rate_hz: f64::from(self.sim.teleop_rate_hz()),
                    mode: match self.pacing {
                        Pacing::Realtime => "realtime",
                        Pacing::Lockstep => "lockstep",
                    }
                    .to_string(),
                    scene: WireScene::from(self.sim.scene()),
                    heatmap_url: self.heatmap_url.clone(),
                });
                let state = ServerMessage::State(Box::new(self.sim.peek_snapshot()));
                if outbox.send(hello).is_ok() && outbox.send(state).is_ok() {
                    self.subscribers.push((id, outbox));
                }
            }
            HostMsg::Detach(id) => self.subscribers.retain(|(s, _)| *s != id),
            HostMsg::Client { id, message } => self.client_message(id, message),
        }
    }

    fn client_message(&mut self, id: u64, message: ClientMessage) {
        if matches!(message, ClientMessage::Step { .. }) && self.pacing == Pacing::Realtime {
            self.reply_error(id, "step is only accepted by lockstep servers".into());
            return;
        }
        if let Some(w) = &mut self.trace {
            if let Err(e) = w.append(self.sim.tick(), &message) {
                eprintln!("trace write failed, recording stopped: {e}");
                self.trace = None;
            }
        }
        match self.sim.apply(&message) {
            Applied::Done => {}
            Applied::Refused(reason) => self.reply_error(id, reason),
            Applied::Step(n) => {
                self.sim.run(n);
                self.broadcast_state();
            }
        }
    }

    fn reply_error(&mut self, id: u64, message: String) {
        if let Some((_, out)) = self.subscribers.iter().find(|(s, _)| *s == id) {
            let _ = out.send(ServerMessage::Error { message });
        }
    }

    fn broadcast_state(&mut self) {
        if self.subscribers.is_empty() {
            return;
        }
        let state = ServerMessage::State(Box::new(self.sim.snapshot()));
        self.subscribers.retain(|(_, out)| out.send(state.clone()).is_ok());
    }
}

fn spawn_cockpit_server(
    listener: TcpListener,
    host: Sender<HostMsg>,
    site: StaticSite,
    stop: Arc<AtomicBool>,
) -> std::io::Result<JoinHandle<()>> {
    listener.set_nonblocking(true)?;
    let site = Arc::new(site);
    Ok(thread::spawn(move || {
        let mut next_id = 0u64;
        while !stop.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((stream, _)) => {
                    next_id += 1;
                    let (id, host, site, stop) = (next_id, host.clone(), site.clone(), stop.clone());
                    thread::spawn(move || {
                        let _ = cockpit_connection(stream, id, host, &site, stop);
                    });
                }
                Err(_) => thread::sleep(Duration::from_millis(5)),
            }
        }
    }))
}

fn cockpit_connection(
    stream: TcpStream,
    id: u64,
    host: Sender<HostMsg>,
    site: &StaticSite,
    stop: Arc<AtomicBool>,
) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let head = peek_head(&stream)?;
    if !head.is_websocket_upgrade() {
        return site.serve(stream, &head);
    }
    let ws = tungstenite::accept(stream).map_err(|e| std::io::Error::other(e.to_string()))?;
    ws.get_ref().set_read_timeout(Some(POLL))?;
    let (outbox, inbox) = mpsc::channel();
    if host.send(HostMsg::Attach { id, outbox }).is_err() {
        return Ok(());
    }
    let result = websocket_session(ws, id, &host, inbox, &stop);
    let _ = host.send(HostMsg::Detach(id));
    result
}

fn websocket_session(
    mut ws: WebSocket<TcpStream>,
    id: u64,
    host: &Sender<HostMsg>,
    inbox: Receiver<ServerMessage>,
    stop: &AtomicBool,
) -> std::io::Result<()> {
    let io_err = |e: tungstenite::Error| std::io::Error::other(e.to_string());
    while !stop.load(Ordering::Relaxed) {
        while let Ok(msg) = inbox.try_recv() {
            ws.send(Message::text(msg.to_json())).map_err(io_err)?;
        }
        match ws.read() {
            Ok(Message::Text(text)) => match ClientMessage::decode(text.as_str()) {
                Ok(message) => {
                    if host.send(HostMsg::Client { id, message }).is_err() {
                        break;
                    }
                }
                Err(message) => ws.send(Message::text(ServerMessage::Error { message }.to_json())).map_err(io_err)?,
            },
            Ok(Message::Binary(_)) => {
                let message = "binary frames are not part of the protocol".to_string();
                ws.send(Message::text(ServerMessage::Error { message }.to_json())).map_err(io_err)?;
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => break,
            Err(e) => return Err(io_err(e)),
        }
    }
    Ok(())
}
