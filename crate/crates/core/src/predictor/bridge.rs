//! Client for an external fill-mask service.
//!
//! Wire format: one UTF-8 JSON object per LF-terminated line, strict
//! request/response alternation on a connection.
//!
//! ```text
//! -> {"sequence":[3,-1,7],"candidates":{"1":[2,5]},"q":16}
//! <- {"filled":[3,5,7],"scores":{"1":[0.1,0.9]}}
//! <- {"error":"..."}
//! ```
//!
//! MASK is `-1` on the wire. Endpoints are either `host:port` (TCP) or
//! `stdio:<command> [args...]`, which spawns the service as a child process
//! and talks to it over its stdin/stdout.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{check_contract, MaskPredictor, PredictionRequest};
use crate::assigner::MaskedSequence;
use crate::error::{Error, Result};
use crate::token::TokenSequence;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// MASK sentinel on the wire.
pub const WIRE_MASK: i64 = -1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeRequest {
    pub sequence: Vec<i64>,
    pub candidates: BTreeMap<String, Vec<usize>>,
    pub q: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BridgeResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filled: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl From<&PredictionRequest> for BridgeRequest {
    fn from(req: &PredictionRequest) -> Self {
        Self {
            sequence: req
                .sequence()
                .slots()
                .iter()
                .map(|s| s.map_or(WIRE_MASK, |t| t as i64))
                .collect(),
            candidates: req
                .candidates()
                .iter()
                .map(|(n, c)| (n.to_string(), c.iter().copied().collect()))
                .collect(),
            q: req.q(),
        }
    }
}

impl TryFrom<BridgeRequest> for PredictionRequest {
    type Error = Error;

    fn try_from(wire: BridgeRequest) -> Result<Self> {
        let slots = wire
            .sequence
            .iter()
            .map(|&v| match v {
                WIRE_MASK => Ok(None),
                v if v >= 0 => Ok(Some(v as usize)),
                v => Err(Error::Config(format!("invalid token id {v}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let candidates = wire
            .candidates
            .into_iter()
            .map(|(k, v)| {
                let n = k
                    .parse::<usize>()
                    .map_err(|e| Error::Config(format!("candidate key {k:?}: {e}")))?;
                Ok((n, v.into_iter().collect()))
            })
            .collect::<Result<_>>()?;
        PredictionRequest::new(MaskedSequence::new(slots, wire.q)?, candidates)
    }
}

/// Where the fill-mask service lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BridgeEndpoint {
    Tcp(String),
    Stdio(Vec<String>),
}

impl std::str::FromStr for BridgeEndpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(cmd) = s.strip_prefix("stdio:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_owned).collect();
            if argv.is_empty() {
                return Err(Error::Config(
                    "stdio endpoint needs a command: stdio:<command> [args]".into(),
                ));
            }
            return Ok(Self::Stdio(argv));
        }
        if s == "stdio" {
            return Err(Error::Config(
                "stdio endpoint needs a command: stdio:<command> [args]".into(),
            ));
        }
        if s.is_empty() {
            return Err(Error::Config("empty bridge endpoint".into()));
        }
        Ok(Self::Tcp(s.to_owned()))
    }
}

impl fmt::Display for BridgeEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Tcp(addr) => f.write_str(addr),
            Self::Stdio(argv) => write!(f, "stdio:{}", argv.join(" ")),
        }
    }
}

enum Transport {
    Tcp {
        reader: BufReader<TcpStream>,
        writer: TcpStream,
    },
    Child {
        child: Child,
        stdin: ChildStdin,
        lines: Receiver<std::io::Result<String>>,
    },
}

/// One connection to a fill-mask service.
pub struct BridgeClient {
    endpoint: BridgeEndpoint,
    timeout: Duration,
    transport: Transport,
}

impl fmt::Debug for BridgeClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BridgeClient")
            .field("endpoint", &self.endpoint)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl BridgeClient {
    pub fn connect(endpoint: BridgeEndpoint, timeout: Duration) -> Result<Self> {
        let err = |msg: String| Error::Bridge {
            endpoint: endpoint.to_string(),
            msg,
        };
        let transport = match &endpoint {
            BridgeEndpoint::Tcp(addr) => {
                let addrs: Vec<_> = addr
                    .to_socket_addrs()
                    .map_err(|e| err(format!("cannot resolve: {e}")))?
                    .collect();
                let mut last = None;
                let mut stream = None;
                for a in addrs {
                    match TcpStream::connect_timeout(&a, timeout) {
                        Ok(s) => {
                            stream = Some(s);
                            break;
                        }
                        Err(e) => last = Some(e),
                    }
                }
                let stream = stream.ok_or_else(|| {
                    err(match last {
                        Some(e) if is_timeout(&e) => format!("connect timed out after {timeout:?}"),
                        Some(e) => format!("connect failed: {e}"),
                        None => "address resolved to nothing".into(),
                    })
                })?;
                stream.set_read_timeout(Some(timeout))?;
                stream.set_write_timeout(Some(timeout))?;
                stream.set_nodelay(true)?;
                let reader = BufReader::new(stream.try_clone()?);
                Transport::Tcp {
                    reader,
                    writer: stream,
                }
            }
            BridgeEndpoint::Stdio(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| err(format!("spawn failed: {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                let (tx, lines) = mpsc::channel();
                thread::spawn(move || {
                    let mut reader = BufReader::new(stdout);
                    loop {
                        let mut line = String::new();
                        let res = reader.read_line(&mut line).map(|_| line);
                        let stop = !matches!(&res, Ok(l) if !l.is_empty());
                        if tx.send(res).is_err() || stop {
                            break;
                        }
                    }
                });
                Transport::Child { child, stdin, lines }
            }
        };
        Ok(Self {
            endpoint,
            timeout,
            transport,
        })
    }

    pub fn endpoint(&self) -> &BridgeEndpoint {
        &self.endpoint
    }

    fn error(&self, msg: impl Into<String>) -> Error {
        Error::Bridge {
            endpoint: self.endpoint.to_string(),
            msg: msg.into(),
        }
    }

    fn round_trip(&mut self, line: &str) -> std::result::Result<String, String> {
        let timeout = self.timeout;
        let io_err = |e: std::io::Error| {
            if is_timeout(&e) {
                format!("timed out after {timeout:?}")
            } else {
                format!("i/o error: {e}")
            }
        };
        match &mut self.transport {
            Transport::Tcp { reader, writer } => {
                writer
                    .write_all(line.as_bytes())
                    .and_then(|_| writer.flush())
                    .map_err(io_err)?;
                let mut buf = String::new();
                match reader.read_line(&mut buf) {
                    Ok(0) => Err("connection closed by service".into()),
                    Ok(_) => Ok(buf),
                    Err(e) => Err(io_err(e)),
                }
            }
            Transport::Child { stdin, lines, .. } => {
                stdin
                    .write_all(line.as_bytes())
                    .and_then(|_| stdin.flush())
                    .map_err(io_err)?;
                match lines.recv_timeout(timeout) {
                    Ok(Ok(l)) if l.is_empty() => Err("service closed its output".into()),
                    Ok(Ok(l)) => Ok(l),
                    Ok(Err(e)) => Err(io_err(e)),
                    Err(RecvTimeoutError::Timeout) => Err(format!("timed out after {timeout:?}")),
                    Err(RecvTimeoutError::Disconnected) => Err("service exited".into()),
                }
            }
        }
    }

    /// Sends one request and returns the validated fill.
    pub fn predict(&mut self, request: &PredictionRequest) -> Result<TokenSequence> {
        let mut line = serde_json::to_string(&BridgeRequest::from(request))?;
        line.push('\n');
        let reply = self.round_trip(&line).map_err(|m| self.error(m))?;
        let response: BridgeResponse = serde_json::from_str(reply.trim_end())
            .map_err(|e| self.error(format!("protocol violation: {e}")))?;
        if let Some(msg) = response.error {
            return Err(self.error(format!("service error: {msg}")));
        }
        let filled = response
            .filled
            .ok_or_else(|| self.error("protocol violation: response has no \"filled\""))?;
        let filled = filled
            .into_iter()
            .map(|v| {
                usize::try_from(v).map_err(|_| self.error(format!("protocol violation: token {v} in fill")))
            })
            .collect::<Result<Vec<_>>>()?;
        check_contract(request, &filled, true).map_err(|e| self.error(format!("invalid fill: {e}")))?;
        TokenSequence::new(filled, request.q())
    }
}

impl MaskPredictor for BridgeClient {
    fn predict(&mut self, request: &PredictionRequest) -> Result<TokenSequence> {
        BridgeClient::predict(self, request)
    }
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        if let Transport::Child { child, .. } = &mut self.transport {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn is_timeout(e: &std::io::Error) -> bool {
    matches!(e.kind(), ErrorKind::TimedOut | ErrorKind::WouldBlock)
}
