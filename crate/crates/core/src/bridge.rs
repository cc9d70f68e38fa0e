//! Newline-delimited JSON bridge to model processes.
//!
//! ```text
//! -> {"type":"hello","protocol":1,"features":p,"names":[...]}
//! <- {"type":"ready","features":p,"parallel":bool}
//! -> {"type":"predict","id":k,"x":[[...],...]}
//! <- {"type":"prediction","id":k,"y":[...]}
//! <- {"type":"error","id":k,"message":"..."}
//! -> {"type":"shutdown"}
//! ```
//!
//! Floats travel as shortest round-trip decimals.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{GeoShapError, Result};
use crate::models::{check_arity, Predictor};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Frame {
    Hello {
        protocol: u32,
        features: usize,
        names: Vec<String>,
    },
    Ready {
        features: usize,
        parallel: bool,
    },
    Predict {
        id: u64,
        x: Vec<Vec<f64>>,
    },
    Prediction {
        id: u64,
        y: Vec<f64>,
    },
    Shutdown,
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        message: String,
    },
}

impl Frame {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("frame serializes");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<Frame> {
        serde_json::from_str(line.trim_end()).map_err(|e| GeoShapError::Protocol {
            message: format!("malformed frame: {e}"),
            line: line.trim_end().to_string(),
        })
    }
}

/// Program and arguments of a model process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BridgeCommand {
    pub program: String,
    pub args: Vec<String>,
}

impl BridgeCommand {
    pub fn new(program: impl Into<String>, args: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            program: program.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }

    /// Runs a command line through `sh -c`.
    pub fn shell(command: &str) -> Self {
        Self::new("sh", ["-c", command])
    }

    fn display(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

type Reply = Result<Vec<f64>>;

#[derive(Default)]
struct Router {
    pending: Mutex<HashMap<u64, Sender<Reply>>>,
    control: Mutex<Option<Sender<Result<Frame>>>>,
    dead: Mutex<Option<String>>,
}

impl Router {
    fn fail_all(&self, message: String, line: &str) {
        let mut dead = self.dead.lock().unwrap();
        if dead.is_none() {
            *dead = Some(message.clone());
        }
        for (_, tx) in self.pending.lock().unwrap().drain() {
            let _ = tx.send(Err(GeoShapError::Protocol {
                message: message.clone(),
                line: line.to_string(),
            }));
        }
        if let Some(tx) = self.control.lock().unwrap().take() {
            let _ = tx.send(Err(GeoShapError::Protocol {
                message,
                line: line.to_string(),
            }));
        }
    }

    fn dispatch(&self, line: &str) -> std::result::Result<(), String> {
        let frame = Frame::parse(line).map_err(|e| e.to_string())?;
        match frame {
            Frame::Ready { .. } | Frame::Error { id: None, .. } => {
                match self.control.lock().unwrap().take() {
                    Some(tx) => {
                        let _ = tx.send(Ok(frame));
                        Ok(())
                    }
                    None => match frame {
                        Frame::Error { message, .. } => Err(format!("server error: {message}")),
                        _ => Err("unexpected ready frame".into()),
                    },
                }
            }
            Frame::Prediction { id, y } => self.reply(id, Ok(y)),
            Frame::Error {
                id: Some(id),
                message,
            } => self.reply(id, Err(GeoShapError::Predictor(message))),
            Frame::Hello { .. } | Frame::Predict { .. } | Frame::Shutdown => {
                Err("server sent a client-only frame".into())
            }
        }
    }

    fn reply(&self, id: u64, reply: Reply) -> std::result::Result<(), String> {
        match self.pending.lock().unwrap().remove(&id) {
            Some(tx) => {
                let _ = tx.send(reply);
                Ok(())
            }
            None => Err(format!("reply for unknown request id {id}")),
        }
    }
}

/// Client handle for a model process speaking the bridge protocol.
pub struct BridgePredictor {
    arity: usize,
    parallel: bool,
    timeout: Duration,
    descriptor: String,
    stdin: Mutex<Option<ChildStdin>>,
    child: Mutex<Child>,
    router: Arc<Router>,
    next_id: AtomicU64,
    in_flight: Mutex<()>,
    reader: Option<JoinHandle<()>>,
    closed: bool,
}

/// Launches `command`, performs the handshake and returns a predictor over
/// `names.len()` columns.
pub fn bridge_connect(command: &BridgeCommand, names: &[String], timeout: Duration) -> Result<BridgePredictor> {
    let mut child = Command::new(&command.program)
        .args(&command.args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| GeoShapError::Predictor(format!("cannot launch '{}': {e}", command.display())))?;
    let stdout = child.stdout.take().expect("piped stdout");
    let stdin = child.stdin.take().expect("piped stdin");

    let router = Arc::new(Router::default());
    let (ctl_tx, ctl_rx) = mpsc::channel();
    *router.control.lock().unwrap() = Some(ctl_tx);
    let reader_router = Arc::clone(&router);
    let reader = std::thread::spawn(move || {
        let mut lines = BufReader::new(stdout);
        let mut line = String::new();
        loop {
            line.clear();
            match lines.read_line(&mut line) {
                Ok(0) | Err(_) => {
                    reader_router.fail_all("server closed its output".into(), "");
                    return;
                }
                Ok(_) => {
                    if line.trim().is_empty() {
                        continue;
                    }
                    if let Err(message) = reader_router.dispatch(&line) {
                        reader_router.fail_all(message, line.trim_end());
                        return;
                    }
                }
            }
        }
    });

    let mut handle = BridgePredictor {
        arity: names.len(),
        parallel: false,
        timeout,
        descriptor: format!("cmd:{}", command.display()),
        stdin: Mutex::new(Some(stdin)),
        child: Mutex::new(child),
        router,
        next_id: AtomicU64::new(1),
        in_flight: Mutex::new(()),
        reader: Some(reader),
        closed: false,
    };
    let hello = Frame::Hello {
        protocol: PROTOCOL_VERSION,
        features: names.len(),
        names: names.to_vec(),
    };
    let handshake = handle.send(&hello).and_then(|_| match ctl_rx.recv_timeout(timeout) {
        Ok(Ok(Frame::Ready { features, parallel })) => {
            if features != names.len() {
                Err(GeoShapError::Protocol {
                    message: format!(
                        "arity mismatch: server advertises {features} features, explainer has {}",
                        names.len()
                    ),
                    line: Frame::Ready { features, parallel }.to_line().trim_end().to_string(),
                })
            } else {
                Ok(parallel)
            }
        }
        Ok(Ok(Frame::Error { message, .. })) => Err(GeoShapError::Protocol {
            message: format!("server rejected handshake: {message}"),
            line: String::new(),
        }),
        Ok(Ok(other)) => Err(GeoShapError::Protocol {
            message: "unexpected handshake frame".into(),
            line: other.to_line().trim_end().to_string(),
        }),
        Ok(Err(e)) => Err(e),
        Err(_) => Err(GeoShapError::Protocol {
            message: format!("handshake timed out after {timeout:?}"),
            line: String::new(),
        }),
    });
    match handshake {
        Ok(parallel) => {
            handle.parallel = parallel;
            Ok(handle)
        }
        Err(e) => {
            handle.kill();
            Err(e)
        }
    }
}

impl BridgePredictor {
    pub fn parallel(&self) -> bool {
        self.parallel
    }

    fn send(&self, frame: &Frame) -> Result<()> {
        let mut guard = self.stdin.lock().unwrap();
        let stdin = guard
            .as_mut()
            .ok_or_else(|| GeoShapError::Predictor("bridge is closed".into()))?;
        stdin
            .write_all(frame.to_line().as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| GeoShapError::Predictor(format!("cannot write to model process: {e}")))
    }

    fn kill(&mut self) {
        self.stdin.lock().unwrap().take();
        let mut child = self.child.lock().unwrap();
        let _ = child.kill();
        let _ = child.wait();
        if let Some(r) = self.reader.take() {
            let _ = r.join();
        }
        self.closed = true;
    }

    /// Sends the shutdown frame and waits for the process to exit.
    pub fn close(mut self) -> Result<ExitStatus> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<ExitStatus> {
        self.closed = true;
        let _ = self.send(&Frame::Shutdown);
        self.stdin.lock().unwrap().take();
        let deadline = Instant::now() + self.timeout;
        let status = loop {
            let polled = self.child.lock().unwrap().try_wait()?;
            if let Some(status) = polled {
                break status;
            }
            if Instant::now() > deadline {
                let mut child = self.child.lock().unwrap();
                let _ = child.kill();
                child.wait()?;
                return Err(GeoShapError::Protocol {
                    message: "model process did not exit after shutdown".into(),
                    line: String::new(),
                });
            }
            std::thread::sleep(Duration::from_millis(5));
        };
        if let Some(r) = self.reader.take() {
            let _ = r.join();
        }
        Ok(status)
    }
}

impl std::fmt::Debug for BridgePredictor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgePredictor")
            .field("descriptor", &self.descriptor)
            .field("arity", &self.arity)
            .field("parallel", &self.parallel)
            .finish()
    }
}

impl Drop for BridgePredictor {
    fn drop(&mut self) {
        if !self.closed {
            let _ = self.shutdown();
        }
    }
}

impl Predictor for BridgePredictor {
    fn arity(&self) -> usize {
        self.arity
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        check_arity(&x, self.arity)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GeoShapError::Data("cannot send non-finite values over the bridge".into()));
        }
        let _serial = if self.parallel {
            None
        } else {
            Some(self.in_flight.lock().unwrap_or_else(|e| e.into_inner()))
        };
        if let Some(reason) = self.router.dead.lock().unwrap().clone() {
            return Err(GeoShapError::Protocol {
                message: reason,
                line: String::new(),
            });
        }
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let (tx, rx) = mpsc::channel();
        self.router.pending.lock().unwrap().insert(id, tx);
        let frame = Frame::Predict {
            id,
            x: x.rows().into_iter().map(|r| r.to_vec()).collect(),
        };
        if let Err(e) = self.send(&frame) {
            self.router.pending.lock().unwrap().remove(&id);
            return Err(e);
        }
        let y = match rx.recv_timeout(self.timeout) {
            Ok(reply) => reply?,
            Err(RecvTimeoutError::Timeout) => {
                self.router.pending.lock().unwrap().remove(&id);
                return Err(GeoShapError::Predictor(format!(
                    "request {id} timed out after {:?}",
                    self.timeout
                )));
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(GeoShapError::Protocol {
                    message: "bridge reader stopped".into(),
                    line: String::new(),
                })
            }
        };
        if y.len() != x.nrows() {
            return Err(GeoShapError::Protocol {
                message: format!("request {id}: {} outputs for {} rows", y.len(), x.nrows()),
                line: String::new(),
            });
        }
        Ok(y)
    }

    fn descriptor(&self) -> String {
        self.descriptor.clone()
    }

    fn concurrency_safe(&self) -> bool {
        true
    }
}

/// Server side of the protocol: answers frames from `input` until shutdown
/// or end of input. Returns the process exit code.
pub fn serve<R, W, F>(input: R, mut output: W, arity: usize, parallel: bool, predict: F) -> Result<i32>
where
    R: BufRead,
    W: Write,
    F: Fn(&[Vec<f64>]) -> std::result::Result<Vec<f64>, String>,
{
    let mut write = |frame: Frame| -> Result<()> {
        output.write_all(frame.to_line().as_bytes())?;
        output.flush()?;
        Ok(())
    };
    let mut greeted = false;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame = match Frame::parse(&line) {
            Ok(f) => f,
            Err(e) => {
                write(Frame::Error {
                    id: None,
                    message: e.to_string(),
                })?;
                continue;
            }
        };
        match frame {
            Frame::Hello { protocol, features, .. } => {
                if protocol != PROTOCOL_VERSION {
                    write(Frame::Error {
                        id: None,
                        message: format!("unsupported protocol {protocol}, server speaks {PROTOCOL_VERSION}"),
                    })?;
                    return Ok(1);
                }
                if features != arity {
                    write(Frame::Error {
                        id: None,
                        message: format!("arity mismatch: model has {arity} features, client sent {features}"),
                    })?;
                    return Ok(1);
                }
                greeted = true;
                write(Frame::Ready {
                    features: arity,
                    parallel,
                })?;
            }
            Frame::Predict { id, x } if greeted => {
                let reply = if let Some(bad) = x.iter().find(|r| r.len() != arity) {
                    Frame::Error {
                        id: Some(id),
                        message: format!("row has {} values, expected {arity}", bad.len()),
                    }
                } else {
                    match predict(&x) {
                        Ok(y) => Frame::Prediction { id, y },
                        Err(message) => Frame::Error { id: Some(id), message },
                    }
                };
                write(reply)?;
            }
            Frame::Shutdown => return Ok(0),
            _ => write(Frame::Error {
                id: None,
                message: "unexpected frame".into(),
            })?,
        }
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_wire_format() {
        let hello = Frame::Hello {
            protocol: 1,
            features: 2,
            names: vec!["a".into(), "b".into()],
        };
        assert_eq!(
            hello.to_line(),
            "{\"type\":\"hello\",\"protocol\":1,\"features\":2,\"names\":[\"a\",\"b\"]}\n"
        );
        assert_eq!(Frame::Shutdown.to_line(), "{\"type\":\"shutdown\"}\n");
        let p = Frame::Predict {
            id: 3,
            x: vec![vec![0.1, 1e-300, -2.5]],
        };
        assert_eq!(p.to_line(), "{\"type\":\"predict\",\"id\":3,\"x\":[[0.1,1e-300,-2.5]]}\n");
        assert_eq!(Frame::parse(&p.to_line()).unwrap(), p);
        assert!(Frame::parse("{\"type\":\"bogus\"}").is_err());
        assert!(Frame::parse("not json").is_err());
        assert_eq!(
            Frame::parse("{\"type\":\"error\",\"id\":4,\"message\":\"x\"}").unwrap(),
            Frame::Error {
                id: Some(4),
                message: "x".into()
            }
        );
    }

    #[test]
    fn shortest_round_trip_numbers() {
        for v in [0.1 + 0.2, std::f64::consts::PI, 1.0 / 3.0, -7.25e-12, 123456789.123456789] {
            let line = Frame::Prediction { id: 1, y: vec![v] }.to_line();
            match Frame::parse(&line).unwrap() {
                Frame::Prediction { y, .. } => assert_eq!(y[0].to_bits(), v.to_bits()),
                _ => unreachable!(),
            }
        }
    }

    fn transcript(input: &str, arity: usize) -> (i32, String) {
        let mut out = Vec::new();
        let code = serve(input.as_bytes(), &mut out, arity, false, |x| {
            Ok(x.iter().map(|r| r.iter().sum()).collect())
        })
        .unwrap();
        (code, String::from_utf8(out).unwrap())
    }

    #[test]
    fn server_golden_transcript() {
        let input = concat!(
            "{\"type\":\"hello\",\"protocol\":1,\"features\":2,\"names\":[\"a\",\"b\"]}\n",
            "{\"type\":\"predict\",\"id\":1,\"x\":[[1,2],[3,4]]}\n",
            "{\"type\":\"predict\",\"id\":7,\"x\":[]}\n",
            "{\"type\":\"predict\",\"id\":2,\"x\":[[0.5,0.25]]}\n",
            "{\"type\":\"shutdown\"}\n",
        );
        let (code, out) = transcript(input, 2);
        assert_eq!(code, 0);
        assert_eq!(
            out,
            concat!(
                "{\"type\":\"ready\",\"features\":2,\"parallel\":false}\n",
                "{\"type\":\"prediction\",\"id\":1,\"y\":[3.0,7.0]}\n",
                "{\"type\":\"prediction\",\"id\":7,\"y\":[]}\n",
                "{\"type\":\"prediction\",\"id\":2,\"y\":[0.75]}\n",
            )
        );
    }

    #[test]
    fn server_rejects_arity_and_garbage() {
        let (code, out) = transcript(
            "{\"type\":\"hello\",\"protocol\":1,\"features\":3,\"names\":[]}\n",
            2,
        );
        assert_eq!(code, 1);
        assert!(out.contains("\"type\":\"error\""));
        let (code, out) = transcript(
            "{\"type\":\"hello\",\"protocol\":1,\"features\":2,\"names\":[]}\nnonsense\n{\"type\":\"predict\",\"id\":1,\"x\":[[1]]}\n",
            2,
        );
        assert_eq!(code, 0);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].contains("error") && !lines[1].contains("\"id\""));
        assert!(lines[2].contains("\"id\":1") && lines[2].contains("error"));
    }
}
