//! Push ingestion over a local TCP byte stream.
//!
//! A session opens with `trial <name>`; every following line uses the metric
//! line format. The server answers each line with `ok` once the point is
//! stored, or `err <reason>`.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use log::debug;

use super::parse::{format_metric_line, parse_metric_line, LineParse};
use super::{MetricPoint, ObservationStore};

pub struct PushServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl PushServer {
    /// Binds an ephemeral loopback port and starts accepting sessions.
    pub fn start(store: Arc<dyn ObservationStore>) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(conn) = conn else { continue };
                let store = store.clone();
                std::thread::spawn(move || {
                    if let Err(e) = serve(conn, store.as_ref()) {
                        debug!("push session ended: {e}");
                    }
                });
            }
        });
        Ok(Self {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for PushServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(conn: TcpStream, store: &dyn ObservationStore) -> std::io::Result<()> {
    // one small reply per line; Nagle would stall each round trip
    conn.set_nodelay(true)?;
    let mut out = conn.try_clone()?;
    let mut lines = BufReader::new(conn).lines();
    let trial = match lines.next() {
        Some(line) => {
            let line = line?;
            match line.trim().strip_prefix("trial ") {
                Some(t) if !t.trim().is_empty() => t.trim().to_string(),
                _ => {
                    writeln!(out, "err expected `trial <name>`")?;
                    return Ok(());
                }
            }
        }
        None => return Ok(()),
    };
    writeln!(out, "ok")?;
    for line in lines {
        let line = line?;
        let reply = match parse_metric_line(&line) {
            LineParse::Metric { timestamp, name, value } => {
                match store.register(&[MetricPoint {
                    trial_name: trial.clone(),
                    metric_name: name,
                    timestamp,
                    value,
                }]) {
                    Ok(()) => "ok".to_string(),
                    Err(e) => format!("err {e}"),
                }
            }
            LineParse::Malformed(m) => format!("err {m}"),
            LineParse::Ignored => "err not a metric line".to_string(),
        };
        writeln!(out, "{reply}")?;
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum PushError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("rejected: {0}")]
    Rejected(String),
}

/// Client side of one push session.
pub struct PushClient {
    out: TcpStream,
    replies: std::io::Lines<BufReader<TcpStream>>,
}

impl PushClient {
    pub fn connect(addr: SocketAddr, trial: &str) -> Result<Self, PushError> {
        let out = TcpStream::connect(addr)?;
        out.set_nodelay(true)?;
        let replies = BufReader::new(out.try_clone()?).lines();
        let mut c = Self { out, replies };
        c.send_line(&format!("trial {trial}"))?;
        Ok(c)
    }

    fn send_line(&mut self, line: &str) -> Result<(), PushError> {
        writeln!(self.out, "{line}")?;
        let reply = self
            .replies
            .next()
            .ok_or_else(|| PushError::Rejected("connection closed".into()))??;
        if reply == "ok" {
            Ok(())
        } else {
            Err(PushError::Rejected(reply.trim_start_matches("err ").to_string()))
        }
    }

    /// Returns once the point is readable from the store.
    pub fn push(&mut self, timestamp: i64, name: &str, value: f64) -> Result<(), PushError> {
        self.send_line(&format_metric_line(timestamp, name, value))
    }

    pub fn push_line(&mut self, line: &str) -> Result<(), PushError> {
        self.send_line(line)
    }
}
