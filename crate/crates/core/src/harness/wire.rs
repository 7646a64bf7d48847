//! Newline-delimited JSON protocol for out-of-process generators and scorers.
//!
//! Requests carry an `op` tag:
//!
//! ```text
//! {"op":"handshake"}
//! {"op":"generate","context":"...","profile":[10 reals],"n":3,"temperature":0.8,"seed":7}
//! {"op":"score","action":"...","context":"...","profile":[10 reals]}
//! ```
//!
//! Responses are one object per request: `{"protocol_version":1,
//! "deterministic":true,"max_inflight":1}`, `{"candidates":[...]}`,
//! `{"score":0.5}`, or `{"error":"...","retry_after_ms":100}`.
//!
//! The same messages travel over a child process's stdin/stdout (one line
//! each) or as HTTP POST bodies.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::domain::{validate_profile, CandidateSet, Provenance, ValueProfile};

use super::{BackendError, GeneratorBackend, Handshake, ScorerBackend, PROTOCOL_VERSION};

pub const TIMEOUT_ENV: &str = "VALGAUGE_BACKEND_TIMEOUT_MS";
pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;

/// Timeout from the environment, falling back to the default when unset or
/// unparseable.
pub fn timeout_from_env() -> Duration {
    let ms = std::env::var(TIMEOUT_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_TIMEOUT_MS);
    Duration::from_millis(ms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Handshake,
    Generate {
        context: String,
        profile: Vec<f64>,
        n: usize,
        temperature: f64,
        seed: u64,
    },
    Score {
        action: String,
        context: String,
        profile: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Error {
        error: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        retry_after_ms: Option<u64>,
    },
    Handshake(Handshake),
    Candidates {
        candidates: Vec<String>,
    },
    Score {
        score: f64,
    },
}

/// Checks that a handshake speaks our protocol version.
pub fn check_handshake(h: &Handshake) -> Result<(), BackendError> {
    if h.protocol_version != PROTOCOL_VERSION {
        return Err(BackendError::new(format!(
            "backend speaks protocol {}, expected {PROTOCOL_VERSION}",
            h.protocol_version
        )));
    }
    if h.max_inflight == 0 {
        return Err(BackendError::new("backend declares max_inflight 0"));
    }
    Ok(())
}

/// Answer one request with in-process backends.
pub fn respond(req: Request, gen: &dyn GeneratorBackend, scorer: &dyn ScorerBackend) -> Response {
    let err = |e: BackendError| Response::Error {
        error: e.message,
        retry_after_ms: e.retry_after_ms,
    };
    let profile = |p: &[f64]| validate_profile(p).map_err(|e| BackendError::new(format!("bad profile: {e}")));
    match req {
        Request::Handshake => match gen.handshake() {
            Ok(h) => Response::Handshake(h),
            Err(e) => err(e),
        },
        Request::Generate {
            context,
            profile: p,
            n,
            temperature,
            seed,
        } => match profile(&p).and_then(|p| gen.generate(&context, &p, n, temperature, seed)) {
            Ok(set) => Response::Candidates {
                candidates: set.into_candidates(),
            },
            Err(e) => err(e),
        },
        Request::Score {
            action,
            context,
            profile: p,
        } => match profile(&p).and_then(|p| scorer.score(&action, &context, &p)) {
            Ok(score) => Response::Score { score },
            Err(e) => err(e),
        },
    }
}

/// Serve requests line by line until the input closes. Malformed lines get an
/// error response; the loop keeps going.
pub fn serve(
    input: impl BufRead,
    mut output: impl Write,
    gen: &dyn GeneratorBackend,
    scorer: &dyn ScorerBackend,
) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<Request>(&line) {
            Ok(req) => respond(req, gen, scorer),
            Err(e) => Response::Error {
                error: format!("malformed request: {e}"),
                retry_after_ms: None,
            },
        };
        serde_json::to_writer(&mut output, &resp)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

trait Transport: Send + Sync {
    fn call(&self, req: &Request) -> Result<Response, BackendError>;
}

fn expect_candidates(resp: Response, n: usize, seed: u64, temperature: f64) -> Result<CandidateSet, BackendError> {
    match resp {
        Response::Candidates { candidates } if candidates.len() == n => {
            CandidateSet::new(candidates, Provenance { seed, temperature })
                .map_err(|e| BackendError::new(e.to_string()))
        }
        Response::Candidates { candidates } => Err(BackendError::new(format!(
            "asked for {n} candidates, got {}",
            candidates.len()
        ))),
        Response::Error { error, retry_after_ms } => Err(BackendError {
            message: error,
            retry_after_ms,
        }),
        other => Err(BackendError::new(format!("unexpected response {other:?}"))),
    }
}

/// A generator and scorer reached over the wire.
pub struct RemoteBackend {
    transport: Box<dyn Transport>,
    label: String,
}

impl RemoteBackend {
    /// `exec:COMMAND [ARGS...]` or `http:URL`.
    pub fn from_spec(spec: &str, timeout: Duration) -> Result<Self, BackendError> {
        if let Some(cmd) = spec.strip_prefix("exec:") {
            let transport = ExecTransport::spawn(cmd, timeout)?;
            Ok(RemoteBackend {
                transport: Box::new(transport),
                label: spec.to_string(),
            })
        } else if let Some(url) = spec.strip_prefix("http:") {
            let url = if url.starts_with("//") {
                format!("http:{url}")
            } else if url.contains("://") {
                url.to_string()
            } else {
                format!("http://{url}")
            };
            Ok(RemoteBackend {
                transport: Box::new(HttpTransport::new(url, timeout)),
                label: spec.to_string(),
            })
        } else {
            Err(BackendError::new(format!("unknown backend spec {spec:?}")))
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl GeneratorBackend for RemoteBackend {
    fn generate(
        &self,
        context: &str,
        profile: &ValueProfile,
        n: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<CandidateSet, BackendError> {
        let req = Request::Generate {
            context: context.to_string(),
            profile: profile.scores().to_vec(),
            n,
            temperature,
            seed,
        };
        expect_candidates(self.transport.call(&req)?, n, seed, temperature)
    }

    fn handshake(&self) -> Result<Handshake, BackendError> {
        match self.transport.call(&Request::Handshake)? {
            Response::Handshake(h) => {
                check_handshake(&h)?;
                Ok(h)
            }
            Response::Error { error, retry_after_ms } => Err(BackendError {
                message: error,
                retry_after_ms,
            }),
            other => Err(BackendError::new(format!("unexpected handshake response {other:?}"))),
        }
    }
}

impl ScorerBackend for RemoteBackend {
    fn score(&self, action: &str, context: &str, profile: &ValueProfile) -> Result<f64, BackendError> {
        let req = Request::Score {
            action: action.to_string(),
            context: context.to_string(),
            profile: profile.scores().to_vec(),
        };
        match self.transport.call(&req)? {
            Response::Score { score } => Ok(score),
            Response::Error { error, retry_after_ms } => Err(BackendError {
                message: error,
                retry_after_ms,
            }),
            other => Err(BackendError::new(format!("unexpected response {other:?}"))),
        }
    }
}

struct ExecInner {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

/// A child process speaking the protocol on its standard streams. Calls are
/// serialized, so the child sees one request at a time.
struct ExecTransport {
    inner: Mutex<ExecInner>,
    timeout: Duration,
}

impl ExecTransport {
    fn spawn(command: &str, timeout: Duration) -> Result<Self, BackendError> {
        let mut parts = command.split_whitespace();
        let program = parts.next().ok_or_else(|| BackendError::new("empty exec command"))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::new(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(ExecTransport {
            inner: Mutex::new(ExecInner {
                child,
                stdin,
                lines: rx,
            }),
            timeout,
        })
    }
}

impl Transport for ExecTransport {
    fn call(&self, req: &Request) -> Result<Response, BackendError> {
        let mut inner = self
            .inner
            .lock()
            .map_err(|_| BackendError::new("backend lock poisoned"))?;
        let mut line = serde_json::to_string(req).expect("requests serialize");
        line.push('\n');
        inner
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| inner.stdin.flush())
            .map_err(|e| BackendError::new(format!("write to backend failed: {e}")))?;
        match inner.lines.recv_timeout(self.timeout) {
            Ok(Ok(resp)) => {
                serde_json::from_str(&resp).map_err(|e| BackendError::new(format!("malformed backend response: {e}")))
            }
            Ok(Err(e)) => Err(BackendError::new(format!("read from backend failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(BackendError::new(format!(
                "backend did not answer within {} ms",
                self.timeout.as_millis()
            ))),
            Err(RecvTimeoutError::Disconnected) => Err(BackendError::new("backend closed its output")),
        }
    }
}

impl Drop for ExecTransport {
    fn drop(&mut self) {
        if let Ok(inner) = self.inner.get_mut() {
            let _ = inner.child.kill();
            let _ = inner.child.wait();
        }
    }
}

struct HttpTransport {
    agent: ureq::Agent,
    url: String,
}

impl HttpTransport {
    fn new(url: String, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpTransport { agent, url }
    }
}

impl Transport for HttpTransport {
    fn call(&self, req: &Request) -> Result<Response, BackendError> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(req)
            .map_err(|e| BackendError::new(format!("http request failed: {e}")))?;
        let status = resp.status();
        let parsed: Result<Response, _> = resp.body_mut().read_json();
        match parsed {
            Ok(r) => Ok(r),
            Err(e) => Err(BackendError::new(format!("http {status}: unreadable body: {e}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{BiasedScorer, MockGenerator};

    #[test]
    fn request_wire_shapes() {
        let r: Request = serde_json::from_str(r#"{"op":"handshake"}"#).unwrap();
        assert_eq!(r, Request::Handshake);
        let g = Request::Generate {
            context: "c".into(),
            profile: vec![0.0; 10],
            n: 2,
            temperature: 0.5,
            seed: 9,
        };
        let text = serde_json::to_string(&g).unwrap();
        assert!(text.starts_with(r#"{"op":"generate""#));
        assert_eq!(serde_json::from_str::<Request>(&text).unwrap(), g);
    }

    #[test]
    fn response_shapes() {
        let h: Response =
            serde_json::from_str(r#"{"protocol_version":1,"deterministic":false,"max_inflight":4}"#).unwrap();
        assert!(matches!(h, Response::Handshake(Handshake { max_inflight: 4, .. })));
        let e: Response = serde_json::from_str(r#"{"error":"busy","retry_after_ms":50}"#).unwrap();
        assert!(matches!(
            e,
            Response::Error {
                retry_after_ms: Some(50),
                ..
            }
        ));
        let s: Response = serde_json::from_str(r#"{"score":0.25}"#).unwrap();
        assert_eq!(s, Response::Score { score: 0.25 });
    }

    #[test]
    fn serve_loop_answers_each_line() {
        let input = concat!(
            r#"{"op":"handshake"}"#,
            "\n",
            "not json\n",
            r#"{"op":"generate","context":"<|Comment|>","profile":[0,0,0,0,0,0,0,0,0,0],"n":2,"temperature":0.8,"seed":1}"#,
            "\n",
            r#"{"op":"score","action":"<|value|>0.9<|value|>","context":"","profile":[0,0,0,0,0,0,0,0,0,0]}"#,
            "\n",
            r#"{"op":"score","action":"x","context":"","profile":[2,0,0,0,0,0,0,0,0,0]}"#,
            "\n"
        );
        let mut out = Vec::new();
        serve(
            input.as_bytes(),
            &mut out,
            &MockGenerator::default(),
            &BiasedScorer::default(),
        )
        .unwrap();
        let lines: Vec<Response> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 5);
        assert!(matches!(
            lines[0],
            Response::Handshake(Handshake {
                protocol_version: 1,
                ..
            })
        ));
        assert!(matches!(lines[1], Response::Error { .. }));
        assert!(matches!(&lines[2], Response::Candidates { candidates } if candidates.len() == 2));
        assert_eq!(lines[3], Response::Score { score: 0.0 });
        assert!(matches!(lines[4], Response::Error { .. }));
    }

    #[test]
    fn version_check() {
        let mut h = Handshake::default();
        assert!(check_handshake(&h).is_ok());
        h.protocol_version = 2;
        assert!(check_handshake(&h).is_err());
    }
}
