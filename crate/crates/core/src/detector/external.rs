use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crate::category::CategoryTable;
use crate::detection::Detection;

use super::protocol::{decode_detections, WireRequest, WireResponse};
use super::{Detector, DetectorError, DetectorRequest};

/// Where an external detector lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// A program speaking newline-delimited JSON on stdin/stdout.
    Process { program: String, args: Vec<String> },
    /// An HTTP server accepting `POST /detect`.
    Http { url: String },
}

impl FromStr for Endpoint {
    type Err = DetectorError;

    /// `http://host:port[/detect]` selects HTTP; anything else is a command
    /// line split on whitespace.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.starts_with("http://") || s.starts_with("https://") {
            let base = s.trim_end_matches('/');
            let url = if base.ends_with("/detect") {
                base.to_string()
            } else {
                format!("{base}/detect")
            };
            return Ok(Endpoint::Http { url });
        }
        let mut parts = s.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| DetectorError::InvalidRequest("empty detector endpoint".into()))?;
        Ok(Endpoint::Process {
            program,
            args: parts.collect(),
        })
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Process { program, args } => {
                f.write_str(program)?;
                args.iter().try_for_each(|a| write!(f, " {a}"))
            }
            Endpoint::Http { url } => f.write_str(url),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExternalConfig {
    /// Per-page limit on waiting for a response.
    pub timeout: Duration,
    /// Number of child processes (or concurrent HTTP requests) to use.
    pub pool_size: usize,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(120),
            pool_size: 1,
        }
    }
}

type Reply = Result<WireResponse, DetectorError>;
type Pending = Arc<Mutex<HashMap<String, Sender<Reply>>>>;

/// One line-oriented connection. Writes are serialized; a reader thread routes
/// responses to waiting callers by id, so replies may arrive in any order.
struct Connection {
    writer: Mutex<Box<dyn Write + Send>>,
    pending: Pending,
    broken: Arc<AtomicBool>,
    child: Option<Mutex<Child>>,
}

impl Connection {
    fn new(reader: Box<dyn BufRead + Send>, writer: Box<dyn Write + Send>, child: Option<Child>) -> Self {
        let pending: Pending = Arc::default();
        let broken = Arc::new(AtomicBool::new(false));
        let (p, b) = (Arc::clone(&pending), Arc::clone(&broken));
        thread::spawn(move || read_loop(reader, &p, &b));
        Self {
            writer: Mutex::new(writer),
            pending,
            broken,
            child: child.map(Mutex::new),
        }
    }

    fn spawn(program: &str, args: &[String]) -> Result<Self, DetectorError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| DetectorError::Unavailable(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        Ok(Self::new(Box::new(BufReader::new(stdout)), Box::new(stdin), Some(child)))
    }

    fn is_broken(&self) -> bool {
        self.broken.load(Ordering::SeqCst)
    }

    fn call(&self, req: &WireRequest, timeout: Duration) -> Reply {
        let (tx, rx) = mpsc::channel();
        self.pending.lock().expect("pending map").insert(req.id.clone(), tx);
        let written = {
            let mut w = self.writer.lock().expect("writer");
            writeln!(w, "{}", req.to_line()).and_then(|_| w.flush())
        };
        if let Err(e) = written {
            self.pending.lock().expect("pending map").remove(&req.id);
            self.broken.store(true, Ordering::SeqCst);
            return Err(DetectorError::Unavailable(format!("cannot write request: {e}")));
        }
        match rx.recv_timeout(timeout) {
            Ok(reply) => reply,
            Err(RecvTimeoutError::Timeout) => {
                self.pending.lock().expect("pending map").remove(&req.id);
                // A stalled backend is not trusted with further requests.
                self.broken.store(true, Ordering::SeqCst);
                Err(DetectorError::Timeout {
                    id: req.id.clone(),
                    secs: timeout.as_secs_f64(),
                })
            }
            Err(RecvTimeoutError::Disconnected) => {
                Err(DetectorError::Unavailable("detector connection closed".into()))
            }
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &self.child {
            let mut child = child.lock().unwrap_or_else(|e| e.into_inner());
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn read_loop(mut reader: Box<dyn BufRead + Send>, pending: &Pending, broken: &AtomicBool) {
    let mut line = String::new();
    let failure = loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) => break DetectorError::Unavailable("detector closed its output".into()),
            Err(e) => break DetectorError::Unavailable(format!("cannot read response: {e}")),
            Ok(_) => {}
        }
        if line.trim().is_empty() {
            continue;
        }
        match WireResponse::parse(line.trim_end()) {
            Ok(resp) => {
                // Unknown ids belong to requests that already timed out.
                if let Some(tx) = pending.lock().expect("pending map").remove(resp.id()) {
                    let _ = tx.send(Ok(resp));
                }
            }
            Err(message) => {
                break DetectorError::Protocol {
                    id: "<unknown>".into(),
                    message,
                }
            }
        }
    };
    broken.store(true, Ordering::SeqCst);
    for (id, tx) in pending.lock().expect("pending map").drain() {
        let err = match &failure {
            DetectorError::Protocol { message, .. } => DetectorError::Protocol {
                id,
                message: message.clone(),
            },
            other => other.clone(),
        };
        let _ = tx.send(Err(err));
    }
}

enum Backend {
    Process {
        program: String,
        args: Vec<String>,
        slots: Vec<Mutex<Option<Arc<Connection>>>>,
    },
    Streams(Arc<Connection>),
    Http {
        url: String,
        agent: ureq::Agent,
    },
}

/// Client for detectors running outside this process.
///
/// Child processes are started lazily, one per pool slot, and restarted if
/// they exit or stall. Each call picks the next slot in turn.
pub struct ExternalDetector {
    backend: Backend,
    categories: CategoryTable,
    cfg: ExternalConfig,
    seq: AtomicU64,
    next_slot: AtomicUsize,
}

impl ExternalDetector {
    pub fn new(endpoint: Endpoint, categories: CategoryTable, cfg: ExternalConfig) -> Self {
        let backend = match endpoint {
            Endpoint::Process { program, args } => Backend::Process {
                program,
                args,
                slots: (0..cfg.pool_size.max(1)).map(|_| Mutex::new(None)).collect(),
            },
            Endpoint::Http { url } => {
                let config = ureq::Agent::config_builder()
                    .timeout_global(Some(cfg.timeout))
                    .http_status_as_error(false)
                    .max_idle_connections_per_host(cfg.pool_size.max(1))
                    .build();
                Backend::Http {
                    url,
                    agent: ureq::Agent::new_with_config(config),
                }
            }
        };
        Self::with_backend(backend, categories, cfg)
    }

    /// A client over an already-open pair of streams, such as a socket or pipe.
    pub fn from_streams(
        reader: impl BufRead + Send + 'static,
        writer: impl Write + Send + 'static,
        categories: CategoryTable,
        cfg: ExternalConfig,
    ) -> Self {
        let conn = Connection::new(Box::new(reader), Box::new(writer), None);
        Self::with_backend(Backend::Streams(Arc::new(conn)), categories, cfg)
    }

    fn with_backend(backend: Backend, categories: CategoryTable, cfg: ExternalConfig) -> Self {
        Self {
            backend,
            categories,
            cfg,
            seq: AtomicU64::new(0),
            next_slot: AtomicUsize::new(0),
        }
    }

    /// Starts every child process now instead of on first use.
    pub fn warm_up(&self) -> Result<(), DetectorError> {
        if let Backend::Process { program, args, slots } = &self.backend {
            for slot in slots {
                connection(slot, program, args)?;
            }
        }
        Ok(())
    }

    fn exchange(&self, wire: &WireRequest) -> Reply {
        match &self.backend {
            Backend::Streams(conn) => {
                if conn.is_broken() {
                    return Err(DetectorError::Unavailable("detector connection closed".into()));
                }
                conn.call(wire, self.cfg.timeout)
            }
            Backend::Process { program, args, slots } => {
                let slot = &slots[self.next_slot.fetch_add(1, Ordering::Relaxed) % slots.len()];
                let conn = connection(slot, program, args)?;
                conn.call(wire, self.cfg.timeout)
            }
            Backend::Http { url, agent } => http_call(agent, url, wire, self.cfg.timeout),
        }
    }
}

fn connection(slot: &Mutex<Option<Arc<Connection>>>, program: &str, args: &[String]) -> Result<Arc<Connection>, DetectorError> {
    let mut guard = slot.lock().expect("pool slot");
    match guard.as_ref() {
        Some(conn) if !conn.is_broken() => Ok(Arc::clone(conn)),
        _ => {
            let conn = Arc::new(Connection::spawn(program, args)?);
            *guard = Some(Arc::clone(&conn));
            Ok(conn)
        }
    }
}

fn http_call(agent: &ureq::Agent, url: &str, wire: &WireRequest, timeout: Duration) -> Reply {
    let result = agent
        .post(url)
        .header("Content-Type", "application/json")
        .send(wire.to_line());
    let mut resp = match result {
        Ok(r) => r,
        Err(ureq::Error::Timeout(_)) => {
            return Err(DetectorError::Timeout {
                id: wire.id.clone(),
                secs: timeout.as_secs_f64(),
            })
        }
        Err(e) => return Err(DetectorError::Unavailable(format!("{url}: {e}"))),
    };
    let status = resp.status();
    let body = match resp.body_mut().read_to_string() {
        Ok(b) => b,
        Err(ureq::Error::Timeout(_)) => {
            return Err(DetectorError::Timeout {
                id: wire.id.clone(),
                secs: timeout.as_secs_f64(),
            })
        }
        Err(e) => return Err(DetectorError::Unavailable(format!("{url}: {e}"))),
    };
    match WireResponse::parse(body.trim()) {
        Ok(parsed) => Ok(parsed),
        Err(_) if !status.is_success() => Err(DetectorError::Unavailable(format!("{url}: HTTP {status}"))),
        Err(message) => Err(DetectorError::Protocol {
            id: wire.id.clone(),
            message,
        }),
    }
}

impl Detector for ExternalDetector {
    fn detect(&self, req: &DetectorRequest<'_>) -> Result<Vec<Detection>, DetectorError> {
        let seq = self.seq.fetch_add(1, Ordering::Relaxed);
        let wire = WireRequest::new(format!("{}#{seq}", req.image_id), req.image, req.score_threshold);
        let protocol = |message: String| DetectorError::Protocol {
            id: wire.id.clone(),
            message,
        };
        match self.exchange(&wire)? {
            WireResponse::Error { id, message } => Err(DetectorError::Remote { id, message }),
            WireResponse::Detections { id, .. } if id != wire.id => {
                Err(protocol(format!("response carries id {id}")))
            }
            WireResponse::Detections { detections, .. } => decode_detections(
                &detections,
                &self.categories,
                wire.width,
                wire.height,
                req.score_threshold,
            )
            .map_err(protocol),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_parsing() {
        assert_eq!(
            "http://127.0.0.1:9000".parse::<Endpoint>().unwrap(),
            Endpoint::Http {
                url: "http://127.0.0.1:9000/detect".into()
            }
        );
        assert_eq!(
            "http://h/detect/".parse::<Endpoint>().unwrap(),
            Endpoint::Http { url: "http://h/detect".into() }
        );
        let p: Endpoint = "python3 serve.py --device cpu".parse().unwrap();
        assert_eq!(
            p,
            Endpoint::Process {
                program: "python3".into(),
                args: vec!["serve.py".into(), "--device".into(), "cpu".into()]
            }
        );
        assert_eq!(p.to_string(), "python3 serve.py --device cpu");
        assert!("  ".parse::<Endpoint>().is_err());
    }

    #[test]
    fn missing_program_is_unavailable() {
        let det = ExternalDetector::new(
            "/nonexistent/detector-binary".parse().unwrap(),
            CategoryTable::default(),
            ExternalConfig::default(),
        );
        assert!(matches!(det.warm_up(), Err(DetectorError::Unavailable(_))));
    }
}
