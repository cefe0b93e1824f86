//! TCP transport for the setpoint protocol and a host loop that owns a
//! [`Controller`].
//!
//! Connection threads only parse lines and forward requests over a channel; the
//! loop thread applies them between ticks and sends each reply back. Requests
//! from several clients are applied in arrival order. There is no
//! authentication: the server is meant for a trusted local network.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::protocol::{decode_request, encode, Reply, Request};
use super::{Controller, SetpointSink, NUM_AXES};
use crate::error::{Error, Result};

/// A request and the channel its reply goes back on.
pub struct Envelope {
    pub request: Request,
    pub reply: Sender<Reply>,
}

/// How the host advances simulated time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pacing {
    /// One tick per `dt` of wall-clock time.
    Realtime,
    /// Time advances only on `step` requests.
    Lockstep,
}

/// Accepts connections on `listener` until `stop` is set. Each decoded request is
/// wrapped by `wrap` and sent on `tx`.
pub fn spawn_tcp_server<T: Send + 'static>(
    listener: TcpListener,
    tx: Sender<T>,
    wrap: fn(Envelope) -> T,
    stop: Arc<AtomicBool>,
) -> Result<JoinHandle<()>> {
    listener.set_nonblocking(true)?;
    Ok(thread::spawn(move || {
        while !stop.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let (tx, stop) = (tx.clone(), stop.clone());
                    thread::spawn(move || {
                        let _ = serve_connection(stream, tx, wrap, stop);
                    });
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
                Err(_) => thread::sleep(Duration::from_millis(5)),
            }
        }
    }))
}

fn serve_connection<T>(stream: TcpStream, tx: Sender<T>, wrap: fn(Envelope) -> T, stop: Arc<AtomicBool>) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_millis(200)))?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        if stop.load(Ordering::Relaxed) {
            return Ok(());
        }
        match reader.read_line(&mut line) {
            Ok(0) => return Ok(()),
            Ok(_) => {}
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => continue,
            Err(e) => return Err(e),
        }
        if !line.ends_with('\n') {
            continue;
        }
        let reply = match decode_request(&line) {
            Ok(request) => {
                let (reply_tx, reply_rx) = mpsc::channel();
                if tx.send(wrap(Envelope { request, reply: reply_tx })).is_err() {
                    return Ok(());
                }
                match reply_rx.recv() {
                    Ok(r) => r,
                    Err(_) => return Ok(()),
                }
            }
            Err(message) => Reply::Error { message },
        };
        line.clear();
        writer.write_all(encode(&reply).as_bytes())?;
    }
}

/// Runs `controller` until `stop` is set or every sender is gone, then returns it.
pub fn run_controller_loop(mut controller: Controller, rx: Receiver<Envelope>, pacing: Pacing, stop: Arc<AtomicBool>) -> Controller {
    let dt = controller.config().dt;
    match pacing {
        Pacing::Lockstep => loop {
            if stop.load(Ordering::Relaxed) {
                break;
            }
            match rx.recv_timeout(Duration::from_millis(20)) {
                Ok(env) => {
                    let reply = match env.request {
                        Request::Step { ticks } => {
                            for _ in 0..ticks {
                                controller.control_tick();
                            }
                            Reply::Status(controller.status())
                        }
                        ref other => controller.handle(other),
                    };
                    let _ = env.reply.send(reply);
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
        },
        Pacing::Realtime => {
            let period = Duration::from_secs_f64(dt);
            let start = Instant::now();
            let mut last = start;
            while !stop.load(Ordering::Relaxed) {
                loop {
                    match rx.try_recv() {
                        Ok(env) => {
                            let reply = controller.handle(&env.request);
                            let _ = env.reply.send(reply);
                        }
                        Err(mpsc::TryRecvError::Empty) => break,
                        Err(mpsc::TryRecvError::Disconnected) => return controller,
                    }
                }
                controller.control_tick();
                let now = Instant::now();
                let ticks = controller.tick();
                controller
                    .stats_mut()
                    .record_period((now - last).as_secs_f64() * 1e6, dt * 1e6, ticks);
                last = now;
                let due = start + period.mul_f64(ticks as f64);
                if let Some(wait) = due.checked_duration_since(Instant::now()) {
                    thread::sleep(wait);
                }
            }
        }
    }
    controller
}

/// Blocking client for the setpoint protocol.
pub struct ControllerClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl ControllerClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::ConnectionLost(e.to_string()))?;
        stream.set_nodelay(true)?;
        Ok(Self {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
        })
    }

    pub fn peer_addr(&self) -> Result<SocketAddr> {
        Ok(self.writer.peer_addr()?)
    }

    pub fn request(&mut self, request: &Request) -> Result<Reply> {
        self.request_raw(&encode(request))
    }

    /// Sends one already-encoded line and reads one reply.
    pub fn request_raw(&mut self, line: &str) -> Result<Reply> {
        let lost = |e: std::io::Error| Error::ConnectionLost(e.to_string());
        self.writer.write_all(line.as_bytes()).map_err(lost)?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply).map_err(lost)? == 0 {
            return Err(Error::ConnectionLost("server closed the connection".into()));
        }
        serde_json::from_str(&reply).map_err(|e| Error::Protocol(format!("bad reply {reply:?}: {e}")))
    }
}

impl SetpointSink for ControllerClient {
    fn send_setpoints(&mut self, setpoints: &[i64; NUM_AXES]) -> Result<()> {
        match self.request(&Request::SetSetpoints { setpoints: *setpoints })? {
            Reply::Ok => Ok(()),
            other => Err(super::reply_error(other)),
        }
    }
}
