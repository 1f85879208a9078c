//! Vault and discovery over TCP.
//!
//! Every frame is a 4-byte big-endian length followed by that many bytes of
//! JSON. Requests look like
//!
//! ```json
//! {"v": 1, "op": "query", "payload": {"query": "overall>=0.5"}, "request_id": "7"}
//! ```
//!
//! and responses echo `request_id` with either `"ok": true` and a `result`, or
//! `"ok": false` and an `error` object `{code, message}`. Model bytes travel as
//! base64-encoded MMV1.
//!
//! | op      | payload                                   | result                     |
//! |---------|-------------------------------------------|----------------------------|
//! | `store` | `{model, owner, tags?, stored_at?}`       | `{id, entry}`              |
//! | `fetch` | `{id}`                                    | `{id, model}`              |
//! | `query` | `{query}` (text form)                     | `{match}` (null if none)   |
//! | `list`  | `{owner?, tag?}`                          | `{entries}`                |
//! | `eval`  | `{model}` or `{id}`                       | `{report}`                 |

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{debug, info, warn};

use crate::discovery::{parse_query, LinearScan, MatchResult, Matcher, Query};
use crate::distill::ModelExchange;
use crate::error::{Error, Result};
use crate::ml::{codec, Model, QualityReport};
use crate::vault::{evaluate_on_registration, EntryFilter, ModelId, Vault, VaultEntry};

pub const PROTOCOL_VERSION: u64 = 1;
pub const MAX_FRAME: usize = 64 * 1024 * 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub v: u64,
    pub request_id: Option<String>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<WireError>,
}

impl Response {
    fn ok(request_id: Option<String>, result: Value) -> Self {
        Self { v: PROTOCOL_VERSION, request_id, ok: true, result: Some(result), error: None }
    }

    fn err(request_id: Option<String>, code: &str, message: impl Into<String>) -> Self {
        let error = WireError { code: code.to_string(), message: message.into() };
        Self { v: PROTOCOL_VERSION, request_id, ok: false, result: None, error: Some(error) }
    }

    fn from_error(request_id: Option<String>, e: &Error) -> Self {
        Self::err(request_id, e.code(), e.to_string())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StorePayload {
    model: String,
    owner: String,
    #[serde(default)]
    tags: Vec<String>,
    #[serde(default)]
    stored_at: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FetchPayload {
    id: ModelId,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryPayload {
    query: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalPayload {
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    id: Option<ModelId>,
}

/// A vault plus a discovery strategy, shared by all connections.
pub struct Service {
    vault: RwLock<Vault>,
    matcher: Box<dyn Matcher + Send + Sync>,
}

impl Service {
    pub fn new(vault: Vault) -> Self {
        Self::with_matcher(vault, Box::new(LinearScan))
    }

    pub fn with_matcher(vault: Vault, matcher: Box<dyn Matcher + Send + Sync>) -> Self {
        Self { vault: RwLock::new(vault), matcher }
    }

    /// Handles one frame body. Never panics on bad input.
    pub fn handle_frame(&self, body: &[u8]) -> Response {
        let value: Value = match serde_json::from_slice(body) {
            Ok(v) => v,
            Err(e) => return Response::err(None, "malformed_frame", e.to_string()),
        };
        let Value::Object(mut req) = value else {
            return Response::err(None, "malformed_frame", "request must be a JSON object");
        };
        let request_id = match req.remove("request_id") {
            Some(Value::String(s)) => Some(s),
            Some(_) => return Response::err(None, "malformed_frame", "request_id must be a string"),
            None => return Response::err(None, "malformed_frame", "missing request_id"),
        };
        match req.get("v").and_then(Value::as_u64) {
            Some(PROTOCOL_VERSION) => {}
            other => {
                let msg = format!("unsupported protocol version {other:?}");
                return Response::err(request_id, "unsupported_version", msg);
            }
        }
        let op = match req.remove("op") {
            Some(Value::String(s)) => s,
            _ => return Response::err(request_id, "malformed_frame", "missing op"),
        };
        let payload = req.remove("payload").unwrap_or_else(|| json!({}));
        let result = match op.as_str() {
            "store" => payload_of(payload).and_then(|p| self.store(p)),
            "fetch" => payload_of(payload).and_then(|p| self.fetch(p)),
            "query" => payload_of(payload).and_then(|p| self.query(p)),
            "list" => payload_of(payload).and_then(|p| self.list(p)),
            "eval" => payload_of(payload).and_then(|p| self.eval(p)),
            _ => return Response::err(request_id, "unknown_op", format!("unknown op {op:?}")),
        };
        match result {
            Ok(v) => Response::ok(request_id, v),
            Err(e) => Response::from_error(request_id, &e),
        }
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Vault> {
        self.vault.read().unwrap_or_else(|p| p.into_inner())
    }

    fn store(&self, p: StorePayload) -> Result<Value> {
        let model = codec::decode(&decode_b64(&p.model)?)?;
        let mut vault = self.vault.write().unwrap_or_else(|p| p.into_inner());
        let id = vault.store(&model, &p.owner, &p.tags, p.stored_at)?;
        let entry = vault.entry(&id).cloned();
        Ok(json!({ "id": id, "entry": entry }))
    }

    fn fetch(&self, p: FetchPayload) -> Result<Value> {
        let bytes = self.read().fetch_bytes(&p.id)?;
        Ok(json!({ "id": p.id, "model": B64.encode(bytes) }))
    }

    fn query(&self, p: QueryPayload) -> Result<Value> {
        let query = parse_query(&p.query)?;
        let entries = self.read().list_entries(&EntryFilter::default());
        let best = self.matcher.best(&query, &entries)?;
        Ok(json!({ "match": best }))
    }

    fn list(&self, filter: EntryFilter) -> Result<Value> {
        Ok(json!({ "entries": self.read().list_entries(&filter) }))
    }

    fn eval(&self, p: EvalPayload) -> Result<Value> {
        let vault = self.read();
        let model = match (p.model, p.id) {
            (Some(m), None) => codec::decode(&decode_b64(&m)?)?,
            (None, Some(id)) => vault.fetch(&id)?,
            _ => return Err(Error::Protocol("eval takes exactly one of model or id".into())),
        };
        let report = evaluate_on_registration(&model, vault.public_dataset(), vault.public_dataset_id())?;
        Ok(json!({ "report": report }))
    }
}

fn payload_of<T: DeserializeOwned>(payload: Value) -> Result<T> {
    serde_json::from_value(payload).map_err(|e| Error::Protocol(format!("bad payload: {e}")))
}

fn decode_b64(s: &str) -> Result<Vec<u8>> {
    B64.decode(s).map_err(|e| Error::Protocol(format!("bad base64: {e}")))
}

// ---------------------------------------------------------------------------
// Framing

enum Frame {
    Body(Vec<u8>),
    TooLarge(usize),
    Closed,
}

fn read_frame(r: &mut impl Read) -> io::Result<Frame> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(Frame::Closed),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Ok(Frame::TooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Frame::Body(body))
}

fn write_frame(w: &mut impl Write, body: &[u8]) -> io::Result<()> {
    let len = u32::try_from(body.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&len.to_be_bytes());
    frame.extend_from_slice(body);
    w.write_all(&frame)?;
    w.flush()
}

fn write_response(w: &mut impl Write, resp: &Response) -> io::Result<()> {
    let body = serde_json::to_vec(resp).map_err(io::Error::other)?;
    write_frame(w, &body)
}

fn handle_connection(service: &Service, mut stream: TcpStream) -> io::Result<()> {
    loop {
        match read_frame(&mut stream)? {
            Frame::Closed => return Ok(()),
            Frame::TooLarge(len) => {
                let msg = format!("frame of {len} bytes exceeds the {MAX_FRAME}-byte limit");
                write_response(&mut stream, &Response::err(None, "frame_too_large", msg))?;
                // The oversized body cannot be skipped safely, so the stream is done.
                return Ok(());
            }
            Frame::Body(body) => {
                let resp = service.handle_frame(&body);
                write_response(&mut stream, &resp)?;
            }
        }
    }
}

/// Accepts connections until `stop` is set, one thread per connection.
pub fn serve(service: Arc<Service>, listener: TcpListener, stop: Arc<AtomicBool>) -> Result<()> {
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!(error = %e, "accept failed");
                continue;
            }
        };
        if let Err(e) = stream.set_nodelay(true) {
            debug!(error = %e, "set_nodelay failed");
        }
        let service = Arc::clone(&service);
        thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = handle_connection(&service, stream) {
                debug!(?peer, error = %e, "connection ended");
            }
        });
    }
    Ok(())
}

/// A service running on a background thread.
pub struct ServiceHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<Result<()>>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) -> Result<()> {
        self.stop_and_join()
    }

    fn stop_and_join(&mut self) -> Result<()> {
        let Some(thread) = self.thread.take() else { return Ok(()) };
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        thread.join().map_err(|_| Error::Protocol("service thread panicked".into()))?
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        let _ = self.stop_and_join();
    }
}

/// Binds `endpoint` (e.g. `127.0.0.1:0`) and serves in the background.
pub fn spawn(service: Service, endpoint: &str) -> Result<ServiceHandle> {
    let listener = TcpListener::bind(endpoint)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let service = Arc::new(service);
    let thread = {
        let stop = Arc::clone(&stop);
        thread::spawn(move || serve(service, listener, stop))
    };
    info!(%addr, "vault service listening");
    Ok(ServiceHandle { addr, stop, thread: Some(thread) })
}

// ---------------------------------------------------------------------------
// Client

/// Blocking client. Requests on one client are serialized.
pub struct Client {
    stream: Mutex<TcpStream>,
    next_id: AtomicU64,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream: Mutex::new(stream), next_id: AtomicU64::new(1) })
    }

    /// Sends one request and returns the `result` object.
    pub fn call(&self, op: &str, payload: Value) -> Result<Value> {
        let request_id = self.next_id.fetch_add(1, Ordering::Relaxed).to_string();
        let req = json!({ "v": PROTOCOL_VERSION, "op": op, "payload": payload, "request_id": request_id });
        let mut stream = self.stream.lock().unwrap_or_else(|p| p.into_inner());
        write_frame(&mut *stream, &serde_json::to_vec(&req)?)?;
        let body = match read_frame(&mut *stream)? {
            Frame::Body(b) => b,
            Frame::Closed => return Err(Error::Protocol("connection closed by service".into())),
            Frame::TooLarge(n) => return Err(Error::Protocol(format!("response frame of {n} bytes"))),
        };
        drop(stream);
        let resp: Response = serde_json::from_slice(&body)?;
        if resp.request_id.as_deref() != Some(request_id.as_str()) {
            return Err(Error::Protocol(format!("response for {:?}, expected {request_id}", resp.request_id)));
        }
        match (resp.ok, resp.result, resp.error) {
            (true, Some(result), _) => Ok(result),
            (false, _, Some(e)) => Err(Error::Remote { code: e.code, message: e.message }),
            _ => Err(Error::Protocol("response carries neither result nor error".into())),
        }
    }

    pub fn store_bytes(&self, mmv1: &[u8], owner: &str, tags: &[String], stored_at: f64) -> Result<VaultEntry> {
        let payload = json!({ "model": B64.encode(mmv1), "owner": owner, "tags": tags, "stored_at": stored_at });
        field(self.call("store", payload)?, "entry")
    }

    pub fn store(&self, model: &Model<f64>, owner: &str, tags: &[String], stored_at: f64) -> Result<VaultEntry> {
        self.store_bytes(&codec::encode(model), owner, tags, stored_at)
    }

    pub fn fetch_bytes(&self, id: &ModelId) -> Result<Vec<u8>> {
        let encoded: String = field(self.call("fetch", json!({ "id": id }))?, "model")?;
        decode_b64(&encoded)
    }

    pub fn query(&self, text: &str) -> Result<Option<MatchResult>> {
        field(self.call("query", json!({ "query": text }))?, "match")
    }

    pub fn list(&self, filter: &EntryFilter) -> Result<Vec<VaultEntry>> {
        field(self.call("list", serde_json::to_value(filter)?)?, "entries")
    }

    pub fn eval(&self, model: &Model<f64>) -> Result<QualityReport> {
        field(self.call("eval", json!({ "model": B64.encode(codec::encode(model)) }))?, "report")
    }

    pub fn eval_stored(&self, id: &ModelId) -> Result<QualityReport> {
        field(self.call("eval", json!({ "id": id }))?, "report")
    }
}

fn field<T: DeserializeOwned>(mut result: Value, name: &str) -> Result<T> {
    let v = result.get_mut(name).map(Value::take).unwrap_or(Value::Null);
    Ok(serde_json::from_value(v)?)
}

impl ModelExchange for Client {
    fn discover(&self, query: &Query) -> Result<Option<MatchResult>> {
        self.query(&query.to_string())
    }

    fn fetch_model(&self, id: &ModelId) -> Result<Model<f64>> {
        codec::decode(&self.fetch_bytes(id)?)
    }
}
