//! TCP front end. Each connection gets a reader thread; every frame is handed
//! to a single executor thread that owns the [`Pipeline`], and the reader
//! waits for the reply before reading the next line, so replies on one
//! connection come back in the order frames were sent.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use crate::config::NetlistConfig;
use crate::pipeline::{Pipeline, Reply};
use crate::wire::{ErrorCode, WireError, MAX_FRAME};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("cannot build the pipeline: {0}")]
    Pipeline(#[from] ktram::Error),
    #[error("server thread failed: {0}")]
    Thread(String),
}

enum Payload {
    Line(String),
    /// Rejected by the reader; sent along so the error is counted.
    Reject(WireError),
}

struct Job {
    payload: Payload,
    reply: Sender<Reply>,
}

type Connections = Arc<Mutex<Vec<TcpStream>>>;

pub struct RunningServer {
    addr: SocketAddr,
    jobs: Sender<Job>,
    stopping: Arc<AtomicBool>,
    acceptor: JoinHandle<()>,
    executor: JoinHandle<()>,
}

impl RunningServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Ask the executor to stop after the frames already queued.
    pub fn shutdown(&self) {
        let (tx, _rx) = mpsc::channel();
        let _ = self.jobs.send(Job {
            payload: Payload::Line(r#"{"control":"shutdown"}"#.into()),
            reply: tx,
        });
    }

    /// Block until a shutdown frame (or [`RunningServer::shutdown`]) has been
    /// processed and the listener is closed.
    pub fn wait(self) -> Result<(), ServeError> {
        drop(self.jobs);
        self.executor
            .join()
            .map_err(|_| ServeError::Thread("executor panicked".into()))?;
        debug_assert!(self.stopping.load(Ordering::SeqCst));
        self.acceptor
            .join()
            .map_err(|_| ServeError::Thread("acceptor panicked".into()))
    }
}

/// Bind `address:port` from the config and start serving. Port 0 picks a
/// free port; see [`RunningServer::local_addr`].
pub fn start(cfg: NetlistConfig) -> Result<RunningServer, ServeError> {
    let addr = format!("{}:{}", cfg.server.address, cfg.server.port);
    let listener = TcpListener::bind(&addr).map_err(|source| ServeError::Bind {
        addr: addr.clone(),
        source,
    })?;
    let local = listener.local_addr().map_err(|source| ServeError::Bind { addr, source })?;
    let pipeline = Pipeline::new(cfg)?;
    log::info!("listening on {local}");

    let (jobs, rx) = mpsc::channel::<Job>();
    let stopping = Arc::new(AtomicBool::new(false));
    let conns: Connections = Arc::default();

    let executor = {
        let stopping = Arc::clone(&stopping);
        let conns = Arc::clone(&conns);
        thread::Builder::new()
            .name("sense-executor".into())
            .spawn(move || run_executor(pipeline, rx, stopping, conns, local))
            .map_err(|e| ServeError::Thread(e.to_string()))?
    };
    let acceptor = {
        let jobs = jobs.clone();
        let stopping = Arc::clone(&stopping);
        thread::Builder::new()
            .name("sense-accept".into())
            .spawn(move || run_acceptor(listener, jobs, stopping, conns))
            .map_err(|e| ServeError::Thread(e.to_string()))?
    };
    Ok(RunningServer {
        addr: local,
        jobs,
        stopping,
        acceptor,
        executor,
    })
}

/// Start and block until shut down.
pub fn serve(cfg: NetlistConfig) -> Result<(), ServeError> {
    start(cfg)?.wait()
}

fn run_executor(
    mut pipeline: Pipeline,
    rx: Receiver<Job>,
    stopping: Arc<AtomicBool>,
    conns: Connections,
    local: SocketAddr,
) {
    for job in rx.iter() {
        let reply = match &job.payload {
            Payload::Line(line) => pipeline.handle_line(line),
            Payload::Reject(e) => pipeline.reject(e),
        };
        let shutdown = reply.shutdown;
        let _ = job.reply.send(reply);
        if shutdown {
            log::info!("shutdown requested");
            break;
        }
    }
    stopping.store(true, Ordering::SeqCst);
    // Frames queued behind the shutdown are refused.
    for job in rx.try_iter() {
        let _ = job.reply.send(refusal());
    }
    drop(rx);
    // Wake the acceptor, then unblock readers waiting on idle clients.
    let _ = TcpStream::connect(wake_addr(local));
    for c in conns.lock().unwrap_or_else(|e| e.into_inner()).drain(..) {
        let _ = c.shutdown(Shutdown::Read);
    }
}

fn wake_addr(local: SocketAddr) -> SocketAddr {
    let mut a = local;
    if a.ip().is_unspecified() {
        a.set_ip(match a {
            SocketAddr::V4(_) => [127, 0, 0, 1].into(),
            SocketAddr::V6(_) => std::net::Ipv6Addr::LOCALHOST.into(),
        });
    }
    a
}

fn refusal() -> Reply {
    Reply {
        lines: vec![WireError::new(ErrorCode::ShuttingDown, "server is shutting down").to_line()],
        shutdown: false,
    }
}

fn run_acceptor(listener: TcpListener, jobs: Sender<Job>, stopping: Arc<AtomicBool>, conns: Connections) {
    for stream in listener.incoming() {
        if stopping.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        // Replies are small and strictly request/response.
        if let Err(e) = stream.set_nodelay(true) {
            log::debug!("cannot disable Nagle: {e}");
        }
        let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
        if let Ok(c) = stream.try_clone() {
            conns.lock().unwrap_or_else(|e| e.into_inner()).push(c);
        }
        let jobs = jobs.clone();
        let spawned = thread::Builder::new()
            .name(format!("sense-conn-{peer}"))
            .spawn(move || {
                log::debug!("{peer} connected");
                if let Err(e) = run_connection(stream, jobs) {
                    log::debug!("{peer}: {e}");
                }
                log::debug!("{peer} closed");
            });
        if let Err(e) = spawned {
            log::warn!("cannot spawn connection thread: {e}");
        }
    }
}

enum Frame {
    Line(Vec<u8>),
    TooLong(usize),
    Eof,
}

/// Read one newline-terminated frame without buffering more than
/// `MAX_FRAME` bytes of it.
fn read_frame(reader: &mut impl BufRead) -> io::Result<Frame> {
    let mut buf = Vec::new();
    reader.by_ref().take(MAX_FRAME as u64 + 1).read_until(b'\n', &mut buf)?;
    if buf.is_empty() {
        return Ok(Frame::Eof);
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
        if buf.last() == Some(&b'\r') {
            buf.pop();
        }
        return Ok(Frame::Line(buf));
    }
    if buf.len() <= MAX_FRAME {
        // Final line without a newline.
        return Ok(Frame::Line(buf));
    }
    // Skip the rest of the oversized line.
    let mut total = buf.len();
    loop {
        let chunk = reader.fill_buf()?;
        if chunk.is_empty() {
            break;
        }
        match chunk.iter().position(|&b| b == b'\n') {
            Some(i) => {
                total += i;
                reader.consume(i + 1);
                break;
            }
            None => {
                let n = chunk.len();
                total += n;
                reader.consume(n);
            }
        }
    }
    Ok(Frame::TooLong(total))
}

fn run_connection(stream: TcpStream, jobs: Sender<Job>) -> io::Result<()> {
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    loop {
        let payload = match read_frame(&mut reader)? {
            Frame::Eof => return Ok(()),
            Frame::TooLong(n) => Payload::Reject(WireError::new(
                ErrorCode::TooLong,
                format!("frame of {n} bytes exceeds {MAX_FRAME}"),
            )),
            Frame::Line(bytes) => match String::from_utf8(bytes) {
                Err(_) => Payload::Reject(WireError::new(ErrorCode::Parse, "frame is not UTF-8")),
                Ok(line) if line.trim().is_empty() => continue,
                Ok(line) => Payload::Line(line),
            },
        };
        let reply = submit(&jobs, payload);
        let mut out = String::new();
        for l in &reply.lines {
            out.push_str(l);
            out.push('\n');
        }
        writer.write_all(out.as_bytes())?;
        writer.flush()?;
    }
}

fn submit(jobs: &Sender<Job>, payload: Payload) -> Reply {
    let (tx, rx) = mpsc::channel();
    if jobs.send(Job { payload, reply: tx }).is_err() {
        return refusal();
    }
    rx.recv().unwrap_or_else(|_| refusal())
}
