//! Deterministic in-process network with a programmable attacker.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::sync::{Arc, Mutex, Weak};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clock::{Clock, SimClock};
use crate::crypto::sha256;
use crate::error::{Error, ErrorKind, Result};
use crate::manager::{EventManager, Frame, Opcode, Transport};
use crate::metrics::{self, Stage};

use super::trace::{CausalTrace, TraceRecord};

pub const DEFAULT_LINK_LATENCY_MICROS: u64 = 1_000;

/// What the attacker does to one frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackAction {
    Pass,
    Drop,
    /// Deliver `k` extra copies.
    Duplicate(u8),
    /// Extra delay of up to `window` link latencies.
    Reorder(u32),
    /// Flip these bit positions of the frame body.
    Corrupt(Vec<u32>),
    /// Deliver these raw bytes first, decoded as a frame.
    Inject(Vec<u8>),
    /// Deliver a previously captured frame first.
    Replay(usize),
}

impl AttackAction {
    pub fn name(&self) -> &'static str {
        match self {
            AttackAction::Pass => "pass",
            AttackAction::Drop => "drop",
            AttackAction::Duplicate(_) => "duplicate",
            AttackAction::Reorder(_) => "reorder",
            AttackAction::Corrupt(_) => "corrupt",
            AttackAction::Inject(_) => "inject",
            AttackAction::Replay(_) => "replay",
        }
    }
}

/// Relative weights of the actions drawn for each frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackProfile {
    pub pass: u32,
    pub drop: u32,
    pub duplicate: u32,
    pub reorder: u32,
    pub corrupt: u32,
    pub inject: u32,
    pub replay: u32,
}

impl AttackProfile {
    pub const PASS: AttackProfile = AttackProfile {
        pass: 1,
        drop: 0,
        duplicate: 0,
        reorder: 0,
        corrupt: 0,
        inject: 0,
        replay: 0,
    };

    pub const DROP_ALL: AttackProfile = AttackProfile {
        pass: 0,
        drop: 1,
        ..AttackProfile::PASS
    };

    pub const MIXED: AttackProfile = AttackProfile {
        pass: 10,
        drop: 2,
        duplicate: 2,
        reorder: 2,
        corrupt: 2,
        inject: 1,
        replay: 2,
    };

    fn total(&self) -> u32 {
        self.pass + self.drop + self.duplicate + self.reorder + self.corrupt + self.inject + self.replay
    }
}

/// Seeded per-frame attack plan; explicit overrides win over the profile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackScript {
    pub seed: u64,
    pub profile: AttackProfile,
    #[serde(default)]
    pub overrides: BTreeMap<u64, AttackAction>,
}

impl AttackScript {
    pub fn pass_through() -> Self {
        AttackScript {
            seed: 0,
            profile: AttackProfile::PASS,
            overrides: BTreeMap::new(),
        }
    }

    pub fn all_drop() -> Self {
        AttackScript {
            profile: AttackProfile::DROP_ALL,
            ..Self::pass_through()
        }
    }

    pub fn random(seed: u64) -> Self {
        AttackScript {
            seed,
            profile: AttackProfile::MIXED,
            overrides: BTreeMap::new(),
        }
    }

    pub fn with_override(mut self, frame_index: u64, action: AttackAction) -> Self {
        self.overrides.insert(frame_index, action);
        self
    }

    fn decide(&self, rng: &mut ChaCha8Rng, index: u64, body_len: usize, captured: usize) -> AttackAction {
        if let Some(a) = self.overrides.get(&index) {
            return a.clone();
        }
        let p = self.profile;
        let total = p.total();
        if total == 0 {
            return AttackAction::Pass;
        }
        let mut pick = rng.gen_range(0..total);
        let mut take = |w: u32| {
            if pick < w {
                true
            } else {
                pick -= w;
                false
            }
        };
        if take(p.pass) {
            AttackAction::Pass
        } else if take(p.drop) {
            AttackAction::Drop
        } else if take(p.duplicate) {
            AttackAction::Duplicate(rng.gen_range(1..=3))
        } else if take(p.reorder) {
            AttackAction::Reorder(rng.gen_range(1..=8))
        } else if take(p.corrupt) {
            let bits = (body_len.max(1) * 8) as u32;
            let n = rng.gen_range(1..=3);
            AttackAction::Corrupt((0..n).map(|_| rng.gen_range(0..bits)).collect())
        } else if take(p.inject) {
            AttackAction::Inject(random_frame(rng))
        } else if captured > 0 {
            AttackAction::Replay(rng.gen_range(0..captured))
        } else {
            AttackAction::Pass
        }
    }
}

/// Structured-but-random frame bytes aimed at real code paths.
fn random_frame(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut noise = |n: usize| (0..n).map(|_| rng.gen::<u8>()).collect::<Vec<u8>>();
    let kind = noise(1)[0] % 4;
    match kind {
        0 => {
            let len = (noise(1)[0] % 40) as usize;
            noise(len)
        }
        1 => {
            let head = noise(4);
            let dest = 1 + (head[0] % 8) as u16;
            let conn = (head[1] % 16) as u16;
            let len = 16 + (head[2] % 24) as usize;
            Frame::remote_event(dest, conn, &noise(len)).encode()
        }
        _ => {
            let head = noise(4);
            let module = 1 + (head[0] % 8) as u16;
            let entry = (head[1] % 7) as u16;
            let len = (head[2] % 60) as usize;
            Frame::call_entry(module, entry, &noise(len)).encode()
        }
    }
}

fn corrupt(frame: &Frame, bits: &[u32]) -> Frame {
    let mut body = frame.body.clone();
    if !body.is_empty() {
        for b in bits {
            let bit = (*b as usize) % (body.len() * 8);
            body[bit / 8] ^= 1 << (bit % 8);
        }
    }
    Frame::new(frame.opcode, body)
}

pub fn frame_hash(frame: &Frame) -> String {
    hex::encode(&sha256(&frame.encode())[..8])
}

struct Delivery {
    from: String,
    to: String,
    frame: Frame,
    label: &'static str,
}

struct NetCore {
    heap: BinaryHeap<Reverse<(u64, u64)>>,
    pending: BTreeMap<u64, Delivery>,
    seq: u64,
    latency: u64,
    script: AttackScript,
    rng: ChaCha8Rng,
    attacks_enabled: bool,
    frame_index: u64,
    captured: Vec<(String, Frame)>,
    down: BTreeSet<String>,
}

/// Simulated network between event managers.
pub struct SimNet {
    clock: Arc<SimClock>,
    core: Mutex<NetCore>,
    nodes: Mutex<BTreeMap<String, Weak<Mutex<EventManager>>>>,
    trace: Arc<Mutex<CausalTrace>>,
}

impl std::fmt::Debug for SimNet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimNet").finish_non_exhaustive()
    }
}

impl SimNet {
    pub fn new(clock: Arc<SimClock>, trace: Arc<Mutex<CausalTrace>>, latency_micros: u64) -> Arc<SimNet> {
        Arc::new(SimNet {
            clock,
            core: Mutex::new(NetCore {
                heap: BinaryHeap::new(),
                pending: BTreeMap::new(),
                seq: 0,
                latency: latency_micros,
                script: AttackScript::pass_through(),
                rng: ChaCha8Rng::seed_from_u64(0),
                attacks_enabled: false,
                frame_index: 0,
                captured: Vec::new(),
                down: BTreeSet::new(),
            }),
            nodes: Mutex::new(BTreeMap::new()),
            trace,
        })
    }

    pub fn register(&self, address: &str, manager: &Arc<Mutex<EventManager>>) {
        self.nodes
            .lock()
            .expect("nodes lock")
            .insert(address.to_string(), Arc::downgrade(manager));
    }

    pub fn set_script(&self, script: AttackScript) {
        let mut core = self.core.lock().expect("net lock");
        core.rng = ChaCha8Rng::seed_from_u64(script.seed);
        core.script = script;
    }

    pub fn set_attacks_enabled(&self, enabled: bool) {
        self.core.lock().expect("net lock").attacks_enabled = enabled;
    }

    pub fn set_down(&self, address: &str, down: bool) {
        let mut core = self.core.lock().expect("net lock");
        if down {
            core.down.insert(address.to_string());
        } else {
            core.down.remove(address);
        }
    }

    pub fn latency(&self) -> u64 {
        self.core.lock().expect("net lock").latency
    }

    /// Frames seen while attacks were enabled, with their destinations.
    pub fn captured(&self) -> Vec<(String, Frame)> {
        self.core.lock().expect("net lock").captured.clone()
    }

    pub fn next_delivery_time(&self) -> Option<u64> {
        self.core.lock().expect("net lock").heap.peek().map(|Reverse((t, _))| *t)
    }

    pub fn has_pending(&self) -> bool {
        !self.core.lock().expect("net lock").heap.is_empty()
    }

    fn record(&self, record: TraceRecord) {
        self.trace.lock().expect("trace lock").push(record);
    }

    fn record_frame(&self, from: &str, to: &str, frame: &Frame, action: &str) {
        self.record(TraceRecord::Frame {
            ts: self.clock.now_micros(),
            from: from.to_string(),
            to: to.to_string(),
            opcode: frame.opcode as u8,
            len: frame.body.len(),
            hash: frame_hash(frame),
            action: action.to_string(),
        });
    }

    /// Draws the attacker's action for a frame and captures it.
    fn observe(&self, core: &mut NetCore, to: &str, frame: &Frame) -> AttackAction {
        if !core.attacks_enabled {
            return AttackAction::Pass;
        }
        let index = core.frame_index;
        core.frame_index += 1;
        let captured = core.captured.len();
        let NetCore { script, rng, .. } = core;
        let action = script.decide(rng, index, frame.body.len(), captured);
        if matches!(frame.opcode, Opcode::RemoteEvent | Opcode::CallEntry) {
            core.captured.push((to.to_string(), frame.clone()));
        }
        action
    }

    fn schedule(&self, core: &mut NetCore, delay: u64, from: &str, to: &str, frame: Frame, label: &'static str) {
        let at = self.clock.now_micros() + delay;
        let seq = core.seq;
        core.seq += 1;
        core.heap.push(Reverse((at, seq)));
        core.pending.insert(
            seq,
            Delivery {
                from: from.to_string(),
                to: to.to_string(),
                frame,
                label,
            },
        );
    }

    fn manager(&self, address: &str) -> Result<Arc<Mutex<EventManager>>> {
        self.nodes
            .lock()
            .expect("nodes lock")
            .get(address)
            .and_then(Weak::upgrade)
            .ok_or_else(|| Error::new(ErrorKind::NodeUnreachable, address.to_string()))
    }

    /// Hands a frame to the destination manager right now.
    fn deliver(&self, to: &str, frame: &Frame) -> Result<Frame> {
        if self.core.lock().expect("net lock").down.contains(to) {
            return Err(Error::new(ErrorKind::NodeUnreachable, to.to_string()));
        }
        let manager = self.manager(to)?;
        let mut guard = manager
            .try_lock()
            .map_err(|_| Error::new(ErrorKind::Busy, format!("{to} is executing")))?;
        Ok(guard.handle_frame(frame))
    }

    fn deliver_raw(&self, from: &str, to: &str, bytes: &[u8], label: &str) {
        match Frame::decode(bytes) {
            Ok(f) => {
                self.record_frame(from, to, &f, label);
                let _ = self.deliver(to, &f);
            }
            Err(_) => self.record(TraceRecord::Frame {
                ts: self.clock.now_micros(),
                from: from.to_string(),
                to: to.to_string(),
                opcode: 0xFF,
                len: bytes.len(),
                hash: hex::encode(&sha256(bytes)[..8]),
                action: format!("{label}-malformed"),
            }),
        }
    }

    /// Delivers the earliest scheduled frame; false when nothing is queued.
    pub fn step(&self) -> bool {
        let next = {
            let mut core = self.core.lock().expect("net lock");
            core.heap
                .pop()
                .map(|Reverse((at, seq))| (at, core.pending.remove(&seq).expect("scheduled frame")))
        };
        let Some((at, d)) = next else { return false };
        self.clock.advance_to(at);
        let _net = metrics::enter(Stage::Network);
        match d.label {
            "extra" => self.deliver_raw(&d.from, &d.to, &d.frame.encode(), "deliver-extra"),
            _ => {
                if let Err(e) = self.deliver(&d.to, &d.frame) {
                    self.record_frame(&d.from, &d.to, &d.frame, &format!("lost-{}", e.kind.code()));
                }
            }
        }
        true
    }

    /// Runs until no frame is scheduled.
    pub fn run_until_idle(&self) {
        while self.step() {}
    }
}

impl Transport for SimNet {
    fn call(&self, from: &str, address: &str, frame: Frame, _timeout: Duration) -> Result<Frame> {
        let _net = metrics::enter(Stage::Network);
        let (action, latency, extra) = {
            let mut core = self.core.lock().expect("net lock");
            if core.down.contains(address) {
                drop(core);
                self.record_frame(from, address, &frame, "unreachable");
                return Err(Error::new(ErrorKind::NodeUnreachable, address.to_string()));
            }
            let action = self.observe(&mut core, address, &frame);
            let extra = match &action {
                AttackAction::Replay(i) => core.captured.get(*i).cloned(),
                _ => None,
            };
            (action, core.latency, extra)
        };
        self.record_frame(from, address, &frame, action.name());
        self.clock.advance_by(latency);
        let reply = match &action {
            AttackAction::Drop => return Err(Error::new(ErrorKind::Timeout, format!("{address}: no reply"))),
            AttackAction::Corrupt(bits) => self.deliver(address, &corrupt(&frame, bits)),
            AttackAction::Duplicate(k) => {
                let first = self.deliver(address, &frame);
                for _ in 0..*k {
                    let _ = self.deliver(address, &frame);
                }
                first
            }
            AttackAction::Inject(bytes) => {
                self.deliver_raw("attacker", address, bytes, "injected");
                self.deliver(address, &frame)
            }
            AttackAction::Replay(_) => {
                if let Some((to, f)) = extra {
                    self.deliver_raw("attacker", &to, &f.encode(), "replayed");
                }
                self.deliver(address, &frame)
            }
            AttackAction::Pass | AttackAction::Reorder(_) => self.deliver(address, &frame),
        }?;
        let reply_action = {
            let mut core = self.core.lock().expect("net lock");
            self.observe(&mut core, from, &reply)
        };
        self.record_frame(address, from, &reply, reply_action.name());
        self.clock.advance_by(latency);
        match reply_action {
            AttackAction::Drop => Err(Error::new(ErrorKind::Timeout, format!("{address}: reply lost"))),
            AttackAction::Corrupt(bits) => Ok(corrupt(&reply, &bits)),
            _ => Ok(reply),
        }
    }

    fn post(&self, from: &str, address: &str, frame: Frame) {
        let _net = metrics::enter(Stage::Network);
        let mut core = self.core.lock().expect("net lock");
        let action = self.observe(&mut core, address, &frame);
        let latency = core.latency;
        let name = action.name();
        match action {
            AttackAction::Pass => self.schedule(&mut core, latency, from, address, frame.clone(), "frame"),
            AttackAction::Drop => {}
            AttackAction::Duplicate(k) => {
                for _ in 0..=k {
                    self.schedule(&mut core, latency, from, address, frame.clone(), "frame");
                }
            }
            AttackAction::Reorder(window) => {
                let extra = core.rng.gen_range(1..=window.max(1) as u64) * latency.max(1);
                self.schedule(&mut core, latency + extra, from, address, frame.clone(), "frame");
            }
            AttackAction::Corrupt(ref bits) => {
                self.schedule(&mut core, latency, from, address, corrupt(&frame, bits), "frame")
            }
            AttackAction::Inject(ref bytes) => {
                if let Ok(f) = Frame::decode(bytes) {
                    self.schedule(&mut core, latency, "attacker", address, f, "extra");
                }
                self.schedule(&mut core, latency, from, address, frame.clone(), "frame");
            }
            AttackAction::Replay(i) => {
                if let Some((to, f)) = core.captured.get(i).cloned() {
                    self.schedule(&mut core, latency, "attacker", &to, f, "extra");
                }
                self.schedule(&mut core, latency, from, address, frame.clone(), "frame");
            }
        }
        drop(core);
        self.record_frame(from, address, &frame, name);
    }

    fn settle(&self) {
        self.run_until_idle();
    }
}
