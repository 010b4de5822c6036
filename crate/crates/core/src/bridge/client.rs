use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use image::RgbImage;

use super::protocol::{decode_line, encode_line, Request, Response, PROTOCOL_VERSION};
use super::{Backbone, Capabilities, Capability, CaptionModel};
use crate::error::{Error, Result};
use crate::features::ActivationTensor;
use crate::game::CaptionEmbedding;

pub const TIMEOUT_ENV: &str = "SEMSHAP_MODEL_TIMEOUT_S";
pub const DEFAULT_WINDOW: usize = 4;
const DEFAULT_TIMEOUT_S: u64 = 120;

/// Per-request timeout: `SEMSHAP_MODEL_TIMEOUT_S` if set, else 120 s.
pub fn default_timeout() -> Duration {
    let secs = std::env::var(TIMEOUT_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<f64>().ok())
        .filter(|v| *v > 0.0)
        .unwrap_or(DEFAULT_TIMEOUT_S as f64);
    Duration::from_secs_f64(secs)
}

type Pending = Arc<Mutex<HashMap<u64, Sender<Response>>>>;

/// Counting semaphore bounding in-flight requests.
struct Window {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Window {
    fn acquire(&self) {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
    }

    fn release(&self) {
        *self.free.lock().unwrap() += 1;
        self.cv.notify_one();
    }
}

struct Slot<'a>(&'a Window);

impl Drop for Slot<'_> {
    fn drop(&mut self) {
        self.0.release();
    }
}

/// Pipelined request/response client over a pair of byte streams.
///
/// Up to `window` requests may be in flight; a reader thread routes each
/// response to its caller by `id`, so responses may arrive in any order.
pub struct BridgeClient {
    writer: Mutex<Box<dyn Write + Send>>,
    pending: Pending,
    next_id: AtomicU64,
    window: Window,
    timeout: Duration,
    closed: Arc<Mutex<Option<String>>>,
    reader: Option<JoinHandle<()>>,
}

/// Result of the hello exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelloInfo {
    pub protocol_version: String,
    pub capabilities: Capabilities,
    pub backbone: Backbone,
}

impl BridgeClient {
    pub fn new<R, W>(reader: R, writer: W, window: usize, timeout: Duration) -> Self
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let pending: Pending = Arc::default();
        let closed: Arc<Mutex<Option<String>>> = Arc::default();
        let reader = {
            let pending = Arc::clone(&pending);
            let closed = Arc::clone(&closed);
            thread::spawn(move || read_loop(reader, pending, closed))
        };
        Self {
            writer: Mutex::new(Box::new(writer)),
            pending,
            next_id: AtomicU64::new(1),
            window: Window {
                free: Mutex::new(window.max(1)),
                cv: Condvar::new(),
            },
            timeout,
            closed,
            reader: Some(reader),
        }
    }

    /// Sends `request` under a fresh id and waits for the matching response.
    /// `ok: false` responses become bridge errors.
    pub fn call(&self, mut request: Request) -> Result<Response> {
        self.window.acquire();
        let _slot = Slot(&self.window);

        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        request.id = id;
        let op = request.op;
        let (tx, rx) = mpsc::channel();
        self.pending.lock().unwrap().insert(id, tx);
        if let Some(reason) = self.closed.lock().unwrap().clone() {
            self.pending.lock().unwrap().remove(&id);
            return Err(Error::Bridge(format!("model connection closed: {reason}")));
        }

        let line = encode_line(&request)?;
        let written = {
            let mut w = self.writer.lock().unwrap();
            w.write_all(line.as_bytes()).and_then(|_| w.flush())
        };
        if let Err(e) = written {
            self.pending.lock().unwrap().remove(&id);
            return Err(Error::Bridge(format!("failed to send {op:?} request {id}: {e}")));
        }

        let response = match rx.recv_timeout(self.timeout) {
            Ok(r) => r,
            Err(RecvTimeoutError::Timeout) => {
                self.pending.lock().unwrap().remove(&id);
                return Err(Error::Bridge(format!(
                    "{op:?} request {id} timed out after {:.1} s",
                    self.timeout.as_secs_f64()
                )));
            }
            Err(RecvTimeoutError::Disconnected) => {
                let reason = self
                    .closed
                    .lock()
                    .unwrap()
                    .clone()
                    .unwrap_or_else(|| "reader stopped".into());
                return Err(Error::Bridge(format!(
                    "model connection closed during {op:?} request {id}: {reason}"
                )));
            }
        };
        if !response.ok {
            return Err(Error::Bridge(format!(
                "model rejected {op:?} request {id}: {}",
                response.error.as_deref().unwrap_or("no error message")
            )));
        }
        Ok(response)
    }

    /// Exchanges hello messages and validates the peer's version and capabilities.
    pub fn handshake(&self) -> Result<HelloInfo> {
        let resp = self.call(Request::hello())?;
        let version = resp
            .protocol_version
            .ok_or_else(|| Error::Protocol("hello response lacks protocol_version".into()))?;
        if version != PROTOCOL_VERSION {
            return Err(Error::Protocol(format!(
                "protocol version mismatch: client speaks {PROTOCOL_VERSION}, model speaks {version}"
            )));
        }
        let capabilities: Capabilities = resp
            .capabilities
            .ok_or_else(|| Error::Protocol("hello response lacks capabilities".into()))?
            .iter()
            .map(|c| c.parse())
            .collect::<Result<_>>()?;
        if capabilities.is_empty() {
            return Err(Error::Protocol("model advertises no capabilities".into()));
        }
        let backbone = match resp.backbone {
            Some(b) => b.parse()?,
            None => Backbone::Other,
        };
        Ok(HelloInfo {
            protocol_version: version,
            capabilities,
            backbone,
        })
    }
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        // the reader exits once the peer closes its end; don't block on it here
        drop(self.reader.take());
    }
}

fn read_loop<R: Read>(reader: R, pending: Pending, closed: Arc<Mutex<Option<String>>>) {
    let mut lines = BufReader::new(reader);
    let mut line = String::new();
    let reason = loop {
        line.clear();
        match lines.read_line(&mut line) {
            Ok(0) => break "end of stream".to_string(),
            Ok(_) => {}
            Err(e) => break format!("read failed: {e}"),
        }
        if line.trim().is_empty() {
            continue;
        }
        match decode_line::<Response>(&line) {
            Ok(resp) => {
                let tx = pending.lock().unwrap().remove(&resp.id);
                match tx {
                    Some(tx) => {
                        let _ = tx.send(resp);
                    }
                    None => log::warn!("dropping response with unknown id {}", resp.id),
                }
            }
            Err(e) => log::warn!("ignoring unparsable line from model: {e}"),
        }
    };
    *closed.lock().unwrap() = Some(reason);
    // dropping the senders wakes every waiting caller
    pending.lock().unwrap().clear();
}

/// A model served by a child process speaking the bridge protocol on stdio.
pub struct ExternalModel {
    client: BridgeClient,
    hello: HelloInfo,
    child: Mutex<Child>,
}

impl ExternalModel {
    pub fn spawn(command: &str, args: &[String], timeout: Duration) -> Result<Self> {
        let mut child = Command::new(command)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Bridge(format!("cannot launch model `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        let client = BridgeClient::new(stdout, stdin, DEFAULT_WINDOW, timeout);
        match client.handshake() {
            Ok(hello) => Ok(Self {
                client,
                hello,
                child: Mutex::new(child),
            }),
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    pub fn hello(&self) -> &HelloInfo {
        &self.hello
    }

    fn require(&self, cap: Capability) -> Result<()> {
        if self.hello.capabilities.contains(&cap) {
            Ok(())
        } else {
            Err(Error::Capability(cap.to_string()))
        }
    }
}

impl Drop for ExternalModel {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl CaptionModel for ExternalModel {
    fn capabilities(&self) -> Capabilities {
        self.hello.capabilities.clone()
    }

    fn backbone(&self) -> Backbone {
        self.hello.backbone
    }

    fn caption(&self, image: &RgbImage, question: Option<&str>) -> Result<String> {
        self.require(Capability::Caption)?;
        self.client
            .call(Request::caption(image, question)?)?
            .caption
            .ok_or_else(|| Error::Protocol("caption response lacks `caption`".into()))
    }

    fn activations(&self, image: &RgbImage) -> Result<ActivationTensor> {
        self.require(Capability::Activations)?;
        self.client
            .call(Request::activations(image)?)?
            .activations
            .ok_or_else(|| Error::Protocol("activations response lacks `activations`".into()))?
            .decode()
    }

    fn embed(&self, text: &str) -> Result<CaptionEmbedding> {
        self.require(Capability::Embed)?;
        self.client
            .call(Request::embed(text))?
            .embedding
            .ok_or_else(|| Error::Protocol("embed response lacks `embedding`".into()))?
            .decode()
    }
}
