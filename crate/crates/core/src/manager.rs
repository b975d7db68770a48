//! Event manager: the untrusted per-node router and its wire protocol.
//!
//! Frames are `opcode(1) ‖ len(2, BE) ‖ body`. The manager is outside the
//! trusted computing base; it sees only sealed payloads and may drop,
//! delay or reorder them without breaking authenticity.

use std::collections::{BTreeMap, VecDeque};
use std::io::{Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use log::{debug, warn};

use crate::behavior::ENTRY_HANDLE_INPUT;
use crate::error::{Error, ErrorKind, Result};
use crate::metrics::{self, Stage};
use crate::package::{Identity, Reader};
use crate::tee::{EventSink, Node, RouteTarget};

pub const FRAME_HEADER_LEN: usize = 3;
pub const MAX_BODY_LEN: usize = u16::MAX as usize;
pub const QUEUE_CAPACITY: usize = 1024;
pub const CONTROL_MODULE: u16 = 0;
pub const CONTROL_UNLOAD: u16 = 0;
pub const CONTROL_RESET: u16 = 1;
const LOG_CAPACITY: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    LoadModule = 0x00,
    CallEntry = 0x01,
    AddConnection = 0x02,
    RemoteEvent = 0x03,
    Ack = 0x04,
    Error = 0x05,
}

impl Opcode {
    pub fn from_u8(byte: u8) -> Option<Opcode> {
        Some(match byte {
            0x00 => Opcode::LoadModule,
            0x01 => Opcode::CallEntry,
            0x02 => Opcode::AddConnection,
            0x03 => Opcode::RemoteEvent,
            0x04 => Opcode::Ack,
            0x05 => Opcode::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub opcode: Opcode,
    pub body: Vec<u8>,
}

impl Frame {
    pub fn new(opcode: Opcode, body: Vec<u8>) -> Frame {
        Frame { opcode, body }
    }

    pub fn ack(body: Vec<u8>) -> Frame {
        Frame::new(Opcode::Ack, body)
    }

    pub fn error(err: &Error) -> Frame {
        let mut body = err.to_wire();
        body.truncate(MAX_BODY_LEN);
        Frame::new(Opcode::Error, body)
    }

    pub fn load_module(package: &[u8]) -> Frame {
        Frame::new(Opcode::LoadModule, package.to_vec())
    }

    pub fn call_entry(module_id: u16, entry: u16, args: &[u8]) -> Frame {
        let mut body = Vec::with_capacity(4 + args.len());
        body.extend_from_slice(&module_id.to_be_bytes());
        body.extend_from_slice(&entry.to_be_bytes());
        body.extend_from_slice(args);
        Frame::new(Opcode::CallEntry, body)
    }

    pub fn add_connection(conn_id: u16, src_module: u16, dest_address: &str, dest_module: u16) -> Frame {
        let addr = dest_address.as_bytes();
        let mut body = Vec::with_capacity(7 + addr.len());
        body.extend_from_slice(&conn_id.to_be_bytes());
        body.extend_from_slice(&src_module.to_be_bytes());
        body.push(addr.len() as u8);
        body.extend_from_slice(addr);
        body.extend_from_slice(&dest_module.to_be_bytes());
        Frame::new(Opcode::AddConnection, body)
    }

    pub fn remote_event(dest_module: u16, conn_id: u16, sealed: &[u8]) -> Frame {
        let mut body = Vec::with_capacity(4 + sealed.len());
        body.extend_from_slice(&dest_module.to_be_bytes());
        body.extend_from_slice(&conn_id.to_be_bytes());
        body.extend_from_slice(sealed);
        Frame::new(Opcode::RemoteEvent, body)
    }

    pub fn encode(&self) -> Vec<u8> {
        assert!(self.body.len() <= MAX_BODY_LEN, "frame body exceeds 65535 bytes");
        let mut out = Vec::with_capacity(FRAME_HEADER_LEN + self.body.len());
        out.push(self.opcode as u8);
        out.extend_from_slice(&(self.body.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    /// Decodes exactly one frame occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Frame> {
        if bytes.len() < FRAME_HEADER_LEN {
            return Err(Error::new(ErrorKind::MalformedFrame, "short header"));
        }
        let opcode = Opcode::from_u8(bytes[0])
            .ok_or_else(|| Error::new(ErrorKind::MalformedFrame, format!("opcode {:#04x}", bytes[0])))?;
        let len = u16::from_be_bytes([bytes[1], bytes[2]]) as usize;
        if bytes.len() != FRAME_HEADER_LEN + len {
            return Err(Error::new(
                ErrorKind::MalformedFrame,
                format!("length {len} but {} body bytes", bytes.len() - FRAME_HEADER_LEN),
            ));
        }
        Ok(Frame::new(opcode, bytes[FRAME_HEADER_LEN..].to_vec()))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Frame> {
        let mut header = [0u8; FRAME_HEADER_LEN];
        r.read_exact(&mut header)?;
        let opcode = Opcode::from_u8(header[0])
            .ok_or_else(|| Error::new(ErrorKind::MalformedFrame, format!("opcode {:#04x}", header[0])))?;
        let mut body = vec![0u8; u16::from_be_bytes([header[1], header[2]]) as usize];
        r.read_exact(&mut body)?;
        Ok(Frame::new(opcode, body))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.encode())?;
        w.flush()?;
        Ok(())
    }

    /// Ack body, or the error carried by an Error frame.
    pub fn into_result(self) -> Result<Vec<u8>> {
        match self.opcode {
            Opcode::Ack => Ok(self.body),
            Opcode::Error => Err(Error::from_wire(&self.body)),
            other => Err(Error::new(ErrorKind::MalformedFrame, format!("unexpected {other:?} reply"))),
        }
    }
}

/// Decoded request frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    LoadModule(Vec<u8>),
    CallEntry { module_id: u16, entry: u16, args: Vec<u8> },
    AddConnection { conn_id: u16, src_module: u16, dest_address: String, dest_module: u16 },
    RemoteEvent { dest_module: u16, conn_id: u16, payload: Vec<u8> },
}

impl Message {
    pub fn parse(frame: &Frame) -> Result<Message> {
        let mut r = Reader::with_kind(&frame.body, ErrorKind::MalformedFrame);
        let msg = match frame.opcode {
            Opcode::LoadModule => Message::LoadModule(frame.body.clone()),
            Opcode::CallEntry => Message::CallEntry {
                module_id: r.u16()?,
                entry: r.u16()?,
                args: r.rest().to_vec(),
            },
            Opcode::AddConnection => {
                let conn_id = r.u16()?;
                let src_module = r.u16()?;
                let dest_address = r.str8()?;
                let dest_module = r.u16()?;
                if !r.is_empty() {
                    return Err(Error::new(ErrorKind::MalformedFrame, "trailing AddConnection bytes"));
                }
                Message::AddConnection {
                    conn_id,
                    src_module,
                    dest_address,
                    dest_module,
                }
            }
            Opcode::RemoteEvent => Message::RemoteEvent {
                dest_module: r.u16()?,
                conn_id: r.u16()?,
                payload: r.rest().to_vec(),
            },
            Opcode::Ack | Opcode::Error => {
                return Err(Error::new(ErrorKind::MalformedFrame, "reply frame sent as request"))
            }
        };
        Ok(msg)
    }
}

pub fn parse_load_ack(body: &[u8]) -> Result<(u16, Identity)> {
    let mut r = Reader::with_kind(body, ErrorKind::MalformedFrame);
    let id = r.u16()?;
    let identity = r.array::<32>()?;
    Ok((id, identity))
}

/// `(source module, connection) -> destination` for outgoing events.
#[derive(Debug, Clone, Default)]
pub struct RoutingTable {
    routes: BTreeMap<(u16, u16), RouteTarget>,
}

impl RoutingTable {
    pub fn insert(&mut self, src_module: u16, conn_id: u16, target: RouteTarget) {
        self.routes.insert((src_module, conn_id), target);
    }

    pub fn get(&self, src_module: u16, conn_id: u16) -> Option<&RouteTarget> {
        self.routes.get(&(src_module, conn_id))
    }

    pub fn remove_module(&mut self, module_id: u16) {
        self.routes.retain(|(src, _), _| *src != module_id);
    }

    pub fn clear(&mut self) {
        self.routes.clear();
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }
}

/// Per-destination outgoing queues; full queues drop their oldest frame.
#[derive(Debug, Default)]
pub struct RouteQueues {
    queues: BTreeMap<String, VecDeque<Frame>>,
    capacity: usize,
    dropped: u64,
}

impl RouteQueues {
    pub fn new(capacity: usize) -> Self {
        RouteQueues {
            queues: BTreeMap::new(),
            capacity: capacity.max(1),
            dropped: 0,
        }
    }

    pub fn push(&mut self, address: &str, frame: Frame) {
        let q = self.queues.entry(address.to_string()).or_default();
        if q.len() >= self.capacity {
            q.pop_front();
            self.dropped += 1;
        }
        q.push_back(frame);
    }

    pub fn drain(&mut self) -> Vec<(String, Frame)> {
        let mut out = Vec::new();
        for (addr, q) in self.queues.iter_mut() {
            out.extend(q.drain(..).map(|f| (addr.clone(), f)));
        }
        out
    }

    pub fn pending(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

/// Untrusted network between managers.
pub trait Transport: Send + Sync {
    /// Synchronous request/reply.
    fn call(&self, from: &str, address: &str, frame: Frame, timeout: Duration) -> Result<Frame>;

    /// Fire-and-forget delivery.
    fn post(&self, from: &str, address: &str, frame: Frame);

    /// Lets posted frames reach their destinations, where the transport
    /// can tell.
    fn settle(&self) {}
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ManagerStats {
    pub frames_in: u64,
    pub events_out: u64,
    pub unroutable: u64,
    pub queue_drops: u64,
}

/// Observer for every accepted input: node, module, connection, label, payload.
pub type FiringHook = Arc<dyn Fn(&str, u16, u16, &str, &[u8]) + Send + Sync>;

/// One node's event manager.
pub struct EventManager {
    node: Node,
    routes: RoutingTable,
    queues: RouteQueues,
    transport: Arc<dyn Transport>,
    log: VecDeque<String>,
    stats: ManagerStats,
    firing_hook: Option<FiringHook>,
}

impl std::fmt::Debug for EventManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventManager")
            .field("node", &self.node)
            .field("routes", &self.routes.len())
            .field("stats", &self.stats)
            .finish_non_exhaustive()
    }
}

struct ManagerSink<'a> {
    address: &'a str,
    routes: &'a RoutingTable,
    queues: &'a mut RouteQueues,
    transport: &'a Arc<dyn Transport>,
    stats: &'a mut ManagerStats,
    log: &'a mut VecDeque<String>,
    hook: Option<&'a FiringHook>,
}

fn push_log(log: &mut VecDeque<String>, line: String) {
    debug!("{line}");
    if log.len() >= LOG_CAPACITY {
        log.pop_front();
    }
    log.push_back(line);
}

impl EventSink for ManagerSink<'_> {
    fn publish(&mut self, src_module: u16, conn_id: u16, sealed: Vec<u8>) {
        match self.routes.get(src_module, conn_id) {
            Some(target) => {
                self.stats.events_out += 1;
                let frame = Frame::remote_event(target.dest_module, conn_id, &sealed);
                self.queues.push(&target.address, frame);
            }
            None => {
                self.stats.unroutable += 1;
                push_log(self.log, format!("drop event module={src_module} conn={conn_id}: no route"));
            }
        }
    }

    fn route(&self, src_module: u16, conn_id: u16) -> Option<RouteTarget> {
        self.routes.get(src_module, conn_id).cloned()
    }

    fn call_remote(&mut self, target: &RouteTarget, conn_id: u16, sealed: Vec<u8>, timeout: Duration) -> Result<Vec<u8>> {
        let mut args = conn_id.to_be_bytes().to_vec();
        args.extend_from_slice(&sealed);
        let frame = Frame::call_entry(target.dest_module, ENTRY_HANDLE_INPUT, &args);
        let _net = metrics::enter(Stage::Network);
        self.transport
            .call(self.address, &target.address, frame, timeout)?
            .into_result()
    }

    fn record_firing(&mut self, node: &str, module_id: u16, conn_id: u16, label: &str, payload: &[u8]) {
        if let Some(hook) = self.hook {
            hook(node, module_id, conn_id, label, payload);
        }
        push_log(
            self.log,
            format!("{node}: module {module_id} {label} conn={conn_id} payload={}", hex::encode(payload)),
        );
    }
}

impl EventManager {
    pub fn new(node: Node, transport: Arc<dyn Transport>) -> EventManager {
        EventManager {
            node,
            routes: RoutingTable::default(),
            queues: RouteQueues::new(QUEUE_CAPACITY),
            transport,
            log: VecDeque::new(),
            stats: ManagerStats::default(),
            firing_hook: None,
        }
    }

    pub fn set_firing_hook(&mut self, hook: Option<FiringHook>) {
        self.firing_hook = hook;
    }

    pub fn node(&self) -> &Node {
        &self.node
    }

    pub fn node_mut(&mut self) -> &mut Node {
        &mut self.node
    }

    pub fn address(&self) -> &str {
        self.node.address()
    }

    pub fn routes(&self) -> &RoutingTable {
        &self.routes
    }

    pub fn stats(&self) -> ManagerStats {
        ManagerStats {
            queue_drops: self.queues.dropped(),
            ..self.stats
        }
    }

    pub fn log_lines(&self) -> impl Iterator<Item = &String> {
        self.log.iter()
    }

    /// Runs `f` against the node with this manager acting as its sink, then
    /// forwards whatever the node published.
    pub fn with_node<T>(&mut self, f: impl FnOnce(&mut Node, &mut dyn EventSink) -> T) -> T {
        let address = self.node.config().address.clone();
        let out = {
            let mut sink = ManagerSink {
                address: &address,
                routes: &self.routes,
                queues: &mut self.queues,
                transport: &self.transport,
                stats: &mut self.stats,
                log: &mut self.log,
                hook: self.firing_hook.as_ref(),
            };
            f(&mut self.node, &mut sink)
        };
        self.flush();
        out
    }

    /// Posts queued events to the transport.
    pub fn flush(&mut self) {
        let from = self.node.address().to_string();
        for (addr, frame) in self.queues.drain() {
            self.transport.post(&from, &addr, frame);
        }
    }

    pub fn inject_physical_input(&mut self, device: &str, value: &[u8]) -> Result<()> {
        self.with_node(|node, sink| node.inject_physical_input(device, value, sink))
    }

    /// Handles one request frame and produces the reply frame.
    pub fn handle_frame(&mut self, frame: &Frame) -> Frame {
        self.stats.frames_in += 1;
        match self.dispatch(frame) {
            Ok(body) => Frame::ack(body),
            Err(err) => {
                push_log(&mut self.log, format!("{:?} failed: {err}", frame.opcode));
                Frame::error(&err)
            }
        }
    }

    fn dispatch(&mut self, frame: &Frame) -> Result<Vec<u8>> {
        match Message::parse(frame)? {
            Message::LoadModule(bytes) => {
                let (id, identity) = self.node.load_module(&bytes)?;
                push_log(&mut self.log, format!("loaded module {id} {}", hex::encode(identity)));
                let mut body = id.to_be_bytes().to_vec();
                body.extend_from_slice(&identity);
                Ok(body)
            }
            Message::CallEntry {
                module_id: CONTROL_MODULE,
                entry,
                args,
            } => self.control(entry, &args),
            Message::CallEntry { module_id, entry, args } => {
                self.with_node(|node, sink| node.call(module_id, entry, &args, sink))
            }
            Message::AddConnection {
                conn_id,
                src_module,
                dest_address,
                dest_module,
            } => {
                self.routes.insert(
                    src_module,
                    conn_id,
                    RouteTarget {
                        address: dest_address,
                        dest_module,
                    },
                );
                Ok(Vec::new())
            }
            Message::RemoteEvent {
                dest_module,
                conn_id,
                payload,
            } => {
                let mut args = conn_id.to_be_bytes().to_vec();
                args.extend_from_slice(&payload);
                self.with_node(|node, sink| node.call(dest_module, ENTRY_HANDLE_INPUT, &args, sink))
            }
        }
    }

    fn control(&mut self, entry: u16, args: &[u8]) -> Result<Vec<u8>> {
        match entry {
            CONTROL_UNLOAD => {
                let mut r = Reader::with_kind(args, ErrorKind::MalformedFrame);
                let module_id = r.u16()?;
                self.node.unload(module_id)?;
                self.routes.remove_module(module_id);
                Ok(Vec::new())
            }
            CONTROL_RESET => {
                self.node.reset()?;
                self.routes.clear();
                push_log(&mut self.log, format!("node reset, epoch {}", self.node.epoch()));
                Ok(Vec::new())
            }
            other => Err(Error::new(ErrorKind::UnknownEntry, format!("control entry {other}"))),
        }
    }
}

/// Synchronous request over a fresh TCP connection.
pub fn tcp_call(address: &str, frame: &Frame, timeout: Duration) -> Result<Frame> {
    let addr = address
        .to_socket_addrs()
        .map_err(|e| Error::new(ErrorKind::NodeUnreachable, format!("{address}: {e}")))?
        .next()
        .ok_or_else(|| Error::new(ErrorKind::NodeUnreachable, address.to_string()))?;
    let mut stream = TcpStream::connect_timeout(&addr, timeout)
        .map_err(|e| Error::new(ErrorKind::NodeUnreachable, format!("{address}: {e}")))?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    stream.set_nodelay(true)?;
    frame.write_to(&mut stream)?;
    Frame::read_from(&mut stream).map_err(|e| match e.kind {
        ErrorKind::Io => Error::new(ErrorKind::Timeout, format!("{address}: {}", e.detail)),
        _ => e,
    })
}

/// TCP transport; posts are forwarded in order by a background thread.
pub struct TcpTransport {
    outbox: Mutex<mpsc::Sender<(String, Frame)>>,
    timeout: Duration,
}

impl TcpTransport {
    pub fn new(timeout: Duration) -> Arc<TcpTransport> {
        let (tx, rx) = mpsc::channel::<(String, Frame)>();
        std::thread::Builder::new()
            .name("authex-forwarder".into())
            .spawn(move || {
                for (addr, frame) in rx {
                    if let Err(e) = tcp_call(&addr, &frame, timeout).and_then(Frame::into_result) {
                        warn!("event to {addr} failed: {e}");
                    }
                }
            })
            .expect("spawn forwarder");
        Arc::new(TcpTransport {
            outbox: Mutex::new(tx),
            timeout,
        })
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }
}

impl Transport for TcpTransport {
    fn call(&self, _from: &str, address: &str, frame: Frame, timeout: Duration) -> Result<Frame> {
        tcp_call(address, &frame, timeout)
    }

    fn post(&self, _from: &str, address: &str, frame: Frame) {
        let _ = self
            .outbox
            .lock()
            .expect("outbox lock")
            .send((address.to_string(), frame));
    }
}

/// Running TCP front end of a manager.
pub struct ServerHandle {
    pub local_addr: std::net::SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.local_addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.shutdown();
        }
    }
}

/// Serves frames for `manager` on `listener`, one thread per connection.
pub fn serve(manager: Arc<Mutex<EventManager>>, listener: TcpListener) -> Result<ServerHandle> {
    let local_addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = stop.clone();
    let thread = std::thread::Builder::new()
        .name(format!("authex-server-{local_addr}"))
        .spawn(move || {
            for stream in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let manager = manager.clone();
                std::thread::spawn(move || serve_connection(manager, stream));
            }
        })?;
    Ok(ServerHandle {
        local_addr,
        stop,
        thread: Some(thread),
    })
}

fn serve_connection(manager: Arc<Mutex<EventManager>>, mut stream: TcpStream) {
    let _ = stream.set_nodelay(true);
    loop {
        let frame = match Frame::read_from(&mut stream) {
            Ok(f) => f,
            Err(e) if e.kind == ErrorKind::MalformedFrame => {
                let _ = Frame::error(&e).write_to(&mut stream);
                break;
            }
            Err(_) => break,
        };
        let reply = match manager.lock() {
            Ok(mut m) => m.handle_frame(&frame),
            Err(_) => Frame::error(&Error::new(ErrorKind::Busy, "manager poisoned")),
        };
        if reply.write_to(&mut stream).is_err() {
            break;
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
}

/// Transport that delivers nothing; useful for a manager driven directly.
#[derive(Debug, Default)]
pub struct NullTransport {
    pub posted: Mutex<Vec<(String, Frame)>>,
}

impl Transport for NullTransport {
    fn call(&self, _from: &str, address: &str, _frame: Frame, _timeout: Duration) -> Result<Frame> {
        Err(Error::new(ErrorKind::NodeUnreachable, address.to_string()))
    }

    fn post(&self, _from: &str, address: &str, frame: Frame) {
        self.posted.lock().expect("posted lock").push((address.to_string(), frame));
    }
}
