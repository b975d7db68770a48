//! Authenticity oracle.
//!
//! Replays the application's reference semantics over the deployment's
//! channels and searches for an execution that explains every observed
//! actuation, in order, from the physical and direct inputs that preceded
//! it. Channels are FIFO and may stall forever (a lost message blocks all
//! later ones on the same connection); a request may be lost, delivered
//! with its reply lost, or answered.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::behavior::{Behavior, BehaviorRegistry, Context};
use crate::deployer::descriptor::{DeploymentDescriptor, Sink, Source};
use crate::error::{Error, ErrorKind, Result};
use crate::package::IoKind;

use super::trace::{CausalTrace, TraceRecord};

pub const DEFAULT_STATE_BUDGET: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Position among the trace's actuations.
    pub index: usize,
    pub ts: u64,
    pub device: String,
    pub value: Vec<u8>,
    pub attribution: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub actuations: usize,
    /// Longest prefix of actuations the search could explain.
    pub explained: usize,
    pub violations: Vec<Violation>,
    pub inconclusive: bool,
    pub states: usize,
}

impl Verdict {
    pub fn is_authentic(&self) -> bool {
        self.violations.is_empty() && !self.inconclusive
    }
}

#[derive(Debug, Clone)]
enum ChanSink {
    Module { module: usize, label: String, handler: bool },
    Device(String),
}

#[derive(Debug)]
struct Stimuli {
    channels: Vec<usize>,
    values: Vec<(u64, Vec<u8>)>,
}

struct Actuation {
    ts: u64,
    device: String,
    value: Vec<u8>,
    attribution: String,
}

#[derive(Debug)]
enum LogEvent {
    Stimulus(usize),
    Fire { node: String, label: String, payload: Vec<u8> },
    Actuation,
}

struct Model {
    initial: Vec<Box<dyn Behavior>>,
    module_node: Vec<String>,
    sinks: Vec<ChanSink>,
    outgoing: HashMap<(usize, String), Vec<usize>>,
    stimuli: Vec<Stimuli>,
    actuations: Vec<Actuation>,
    log: Vec<LogEvent>,
}

impl Model {
    fn build(desc: &DeploymentDescriptor, trace: &CausalTrace, registry: &BehaviorRegistry) -> Result<Model> {
        let index: HashMap<&str, usize> = desc
            .modules
            .iter()
            .enumerate()
            .map(|(i, m)| (m.name.as_str(), i))
            .collect();
        let mut initial = Vec::new();
        for m in &desc.modules {
            let spec = registry
                .get(&m.behavior)
                .ok_or_else(|| Error::new(ErrorKind::UnknownBehavior, m.behavior.clone()))?;
            let init = m.init_bytes()?.unwrap_or_else(|| spec.default_init.to_vec());
            initial.push(spec.instantiate(&init)?);
        }
        let module_of = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::new(ErrorKind::UnknownModule, name.to_string()))
        };
        let mut sinks = Vec::new();
        let mut outgoing: HashMap<(usize, String), Vec<usize>> = HashMap::new();
        let mut device_sources: HashMap<String, Vec<usize>> = HashMap::new();
        let mut direct_sources: HashMap<String, usize> = HashMap::new();
        for c in &desc.connections {
            let ch = sinks.len();
            sinks.push(match c.sink()? {
                Sink::Module { module, label, kind } => ChanSink::Module {
                    module: module_of(&module)?,
                    label,
                    handler: kind == IoKind::Handler,
                },
                Sink::Driver(d) => ChanSink::Device(d),
            });
            match c.source()? {
                Source::Deployer => {
                    direct_sources.insert(c.name.clone(), ch);
                }
                Source::Module { module, label, .. } => {
                    outgoing.entry((module_of(&module)?, label)).or_default().push(ch);
                }
                Source::Driver(d) => device_sources.entry(d).or_default().push(ch),
            }
        }
        let mut stimuli: Vec<Stimuli> = Vec::new();
        let mut by_device: HashMap<String, usize> = HashMap::new();
        let mut by_direct: HashMap<String, usize> = HashMap::new();
        let mut actuations = Vec::new();
        let mut log = Vec::new();
        for r in trace.records() {
            match r {
                TraceRecord::Input { ts, node, device, value } => {
                    let key = format!("{node}.{device}");
                    let Some(chans) = device_sources.get(&key) else { continue };
                    let s = *by_device.entry(key).or_insert_with(|| {
                        stimuli.push(Stimuli {
                            channels: chans.clone(),
                            values: Vec::new(),
                        });
                        stimuli.len() - 1
                    });
                    stimuli[s].values.push((*ts, value.clone()));
                    log.push(LogEvent::Stimulus(s));
                }
                TraceRecord::Direct { ts, connection, payload } => {
                    let Some(ch) = direct_sources.get(connection) else { continue };
                    let s = *by_direct.entry(connection.clone()).or_insert_with(|| {
                        stimuli.push(Stimuli {
                            channels: vec![*ch],
                            values: Vec::new(),
                        });
                        stimuli.len() - 1
                    });
                    stimuli[s].values.push((*ts, payload.clone()));
                    log.push(LogEvent::Stimulus(s));
                }
                TraceRecord::Firing {
                    node, label, payload, ..
                } => log.push(LogEvent::Fire {
                    node: node.clone(),
                    label: label.clone(),
                    payload: payload.clone(),
                }),
                TraceRecord::Actuation {
                    ts,
                    node,
                    device,
                    value,
                    attribution,
                } => {
                    actuations.push(Actuation {
                        ts: *ts,
                        device: format!("{node}.{device}"),
                        value: value.clone(),
                        attribution: attribution.clone(),
                    });
                    log.push(LogEvent::Actuation);
                }
                _ => {}
            }
        }
        Ok(Model {
            initial,
            module_node: desc.modules.iter().map(|m| m.node.clone()).collect(),
            sinks,
            outgoing,
            stimuli,
            actuations,
            log,
        })
    }
}

struct World {
    behaviors: Vec<Option<Box<dyn Behavior>>>,
    pending: Vec<VecDeque<Vec<u8>>>,
    consumed: Vec<usize>,
    explained: usize,
}

impl Clone for World {
    fn clone(&self) -> Self {
        World {
            behaviors: self
                .behaviors
                .iter()
                .map(|b| b.as_ref().map(|b| b.clone_box()))
                .collect(),
            pending: self.pending.clone(),
            consumed: self.consumed.clone(),
            explained: self.explained,
        }
    }
}

impl World {
    fn key(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        let mut put = |bytes: &[u8]| {
            h.update((bytes.len() as u64).to_be_bytes());
            h.update(bytes);
        };
        for b in &self.behaviors {
            put(&b.as_ref().map(|b| b.snapshot()).unwrap_or_default());
        }
        for q in &self.pending {
            put(&(q.len() as u64).to_be_bytes());
            for m in q {
                put(m);
            }
        }
        for c in &self.consumed {
            put(&(*c as u64).to_be_bytes());
        }
        put(&(self.explained as u64).to_be_bytes());
        h.finalize().into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Choice {
    Lost,
    ReplyLost,
    Replied,
}

const CHOICES: [Choice; 3] = [Choice::Lost, Choice::ReplyLost, Choice::Replied];

struct Exec<'a> {
    model: &'a Model,
    world: World,
    choices: &'a [Choice],
    pos: usize,
    need_choice: bool,
    invalid: bool,
    fired: Vec<Fired>,
}

/// Module, label and payload of one accepted input.
type Fired = (usize, String, Vec<u8>);

struct OracleCtx<'e, 'a> {
    exec: &'e mut Exec<'a>,
    module: usize,
}

impl Exec<'_> {
    fn run_input(&mut self, module: usize, label: &str, payload: &[u8], handler: bool) -> Option<Vec<u8>> {
        let mut b = self.world.behaviors[module].take()?;
        self.fired.push((module, label.to_string(), payload.to_vec()));
        let reply = {
            let mut ctx = OracleCtx { exec: self, module };
            if handler {
                Some(b.on_request(label, payload, &mut ctx))
            } else {
                b.on_input(label, payload, &mut ctx);
                None
            }
        };
        self.world.behaviors[module] = Some(b);
        reply
    }
}

fn unavailable() -> Error {
    Error::new(ErrorKind::Timeout, "request not answered")
}

impl Context for OracleCtx<'_, '_> {
    fn output(&mut self, label: &str, payload: &[u8]) {
        if let Some(chans) = self.exec.model.outgoing.get(&(self.module, label.to_string())) {
            for ch in chans {
                self.exec.world.pending[*ch].push_back(payload.to_vec());
            }
        }
    }

    fn request(&mut self, label: &str, payload: &[u8]) -> Result<Vec<u8>> {
        let exec = &mut *self.exec;
        if exec.need_choice || exec.invalid {
            return Err(unavailable());
        }
        let Some(ch) = exec.model.outgoing.get(&(self.module, label.to_string())).and_then(|c| c.first()).copied()
        else {
            return Err(Error::new(ErrorKind::Unestablished, label.to_string()));
        };
        let Some(choice) = exec.choices.get(exec.pos).copied() else {
            exec.need_choice = true;
            return Err(unavailable());
        };
        exec.pos += 1;
        if choice == Choice::Lost {
            exec.world.pending[ch].push_back(payload.to_vec());
            return Err(unavailable());
        }
        let ChanSink::Module { module, label, handler: true } = exec.model.sinks[ch].clone() else {
            exec.invalid = true;
            return Err(unavailable());
        };
        if !exec.world.pending[ch].is_empty() || exec.world.behaviors[module].is_none() {
            exec.invalid = true;
            return Err(unavailable());
        }
        let reply = exec.run_input(module, &label, payload, true).unwrap_or_default();
        match choice {
            Choice::Replied => Ok(reply),
            _ => Err(unavailable()),
        }
    }

    fn caller(&self) -> u16 {
        0
    }

    fn module_id(&self) -> u16 {
        self.module as u16
    }
}

/// Every world reachable by delivering the head of `ch`, with the inputs
/// accepted along the way.
fn deliveries(model: &Model, world: &World, ch: usize) -> Vec<(World, Vec<Fired>)> {
    let ChanSink::Module { module, label, handler } = &model.sinks[ch] else {
        return Vec::new();
    };
    let mut base = world.clone();
    let Some(payload) = base.pending[ch].pop_front() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut todo: Vec<Vec<Choice>> = vec![Vec::new()];
    while let Some(choices) = todo.pop() {
        let mut exec = Exec {
            model,
            world: base.clone(),
            choices: &choices,
            pos: 0,
            need_choice: false,
            invalid: false,
            fired: Vec::new(),
        };
        exec.run_input(*module, label, &payload, *handler);
        if exec.invalid {
            continue;
        }
        if exec.need_choice {
            for c in CHOICES {
                let mut next = choices.clone();
                next.push(c);
                todo.push(next);
            }
            continue;
        }
        out.push((exec.world, exec.fired));
    }
    out
}

fn inject(model: &Model, w: &World, s: usize) -> Option<World> {
    let stim = &model.stimuli[s];
    let (_, value) = stim.values.get(w.consumed[s])?;
    let mut n = w.clone();
    n.consumed[s] += 1;
    for ch in &stim.channels {
        n.pending[*ch].push_back(value.clone());
    }
    Some(n)
}

fn match_actuation(model: &Model, w: &World) -> Vec<World> {
    let Some(act) = model.actuations.get(w.explained) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (ch, sink) in model.sinks.iter().enumerate() {
        if let ChanSink::Device(d) = sink {
            if *d == act.device && w.pending[ch].front() == Some(&act.value) {
                let mut n = w.clone();
                n.pending[ch].pop_front();
                n.explained += 1;
                out.push(n);
            }
        }
    }
    out
}

/// Whether a logged firing lands on an endpoint the model knows about;
/// firings elsewhere (drivers, unrelated modules) carry no hint.
fn modelled(model: &Model, node: &str, label: &str) -> bool {
    model.sinks.iter().any(|s| match s {
        ChanSink::Module { module, label: l, .. } => model.module_node[*module] == node && l == label,
        ChanSink::Device(_) => false,
    })
}

/// Searches along the order in which the nodes accepted inputs. The log is
/// only a hint: every step is a transition of the reference semantics, so a
/// success is a genuine explanation.
fn guided(model: &Model, start: &World, budget: usize, states: &mut usize) -> bool {
    let total = model.actuations.len();
    let mut visited = HashSet::new();
    let mut stack = vec![(start.clone(), 0usize)];
    while let Some((w, cursor)) = stack.pop() {
        if w.explained == total {
            return true;
        }
        *states += 1;
        if *states > budget || cursor == model.log.len() {
            if *states > budget {
                return false;
            }
            continue;
        }
        let mut next = Vec::new();
        match &model.log[cursor] {
            LogEvent::Stimulus(s) => next.extend(inject(model, &w, *s).map(|n| (n, cursor + 1))),
            LogEvent::Actuation => next.extend(match_actuation(model, &w).into_iter().map(|n| (n, cursor + 1))),
            LogEvent::Fire { node, label, payload } => {
                if !modelled(model, node, label) {
                    next.push((w.clone(), cursor + 1));
                }
                for (ch, sink) in model.sinks.iter().enumerate() {
                    let ChanSink::Module { module, label: l, .. } = sink else { continue };
                    if model.module_node[*module] != *node || l != label || w.pending[ch].front() != Some(payload) {
                        continue;
                    }
                    for (n, fired) in deliveries(model, &w, ch) {
                        let end = cursor + fired.len();
                        let agrees = end <= model.log.len()
                            && fired.iter().zip(&model.log[cursor..end]).all(|((m, fl, fp), ev)| {
                                matches!(ev, LogEvent::Fire { node, label, payload }
                                    if model.module_node[*m] == *node && fl == label && fp == payload)
                            });
                        if agrees {
                            next.push((n, end));
                        }
                    }
                }
            }
        }
        for (n, c) in next {
            if visited.insert((n.key(), c)) {
                stack.push((n, c));
            }
        }
    }
    false
}

fn successors(model: &Model, w: &World) -> Vec<World> {
    let mut out = Vec::new();
    let next_act = model.actuations.get(w.explained);
    // Highest priority last: the search pops from the end.
    let horizon = next_act.map(|a| a.ts).unwrap_or(u64::MAX);
    for (s, stim) in model.stimuli.iter().enumerate() {
        if stim.values.get(w.consumed[s]).is_some_and(|(ts, _)| *ts <= horizon) {
            out.extend(inject(model, w, s));
        }
    }
    for ch in (0..model.sinks.len()).rev() {
        if !w.pending[ch].is_empty() {
            out.extend(deliveries(model, w, ch).into_iter().map(|(n, _)| n));
        }
    }
    out.extend(match_actuation(model, w));
    out
}

pub fn verify_authenticity(desc: &DeploymentDescriptor, trace: &CausalTrace) -> Result<Verdict> {
    verify_with(desc, trace, &BehaviorRegistry::builtin(), DEFAULT_STATE_BUDGET)
}

pub fn verify_with(
    desc: &DeploymentDescriptor,
    trace: &CausalTrace,
    registry: &BehaviorRegistry,
    budget: usize,
) -> Result<Verdict> {
    let model = Model::build(desc, trace, registry)?;
    let total = model.actuations.len();
    let start = World {
        behaviors: model.initial.iter().map(|b| Some(b.clone_box())).collect(),
        pending: vec![VecDeque::new(); model.sinks.len()],
        consumed: vec![0; model.stimuli.len()],
        explained: 0,
    };
    let mut states = 0usize;
    if guided(&model, &start, budget, &mut states) {
        return Ok(Verdict {
            actuations: total,
            explained: total,
            violations: Vec::new(),
            inconclusive: false,
            states,
        });
    }
    states = 0;
    let mut visited = HashSet::new();
    visited.insert(start.key());
    let mut stack = vec![start];
    let mut best = 0usize;
    let mut inconclusive = false;
    while let Some(w) = stack.pop() {
        if w.explained == total {
            return Ok(Verdict {
                actuations: total,
                explained: total,
                violations: Vec::new(),
                inconclusive: false,
                states,
            });
        }
        states += 1;
        best = best.max(w.explained);
        if states > budget {
            inconclusive = true;
            break;
        }
        for n in successors(&model, &w) {
            if visited.insert(n.key()) {
                stack.push(n);
            }
        }
    }
    let a = &model.actuations[best];
    let reason = if inconclusive {
        format!("search budget of {budget} states exhausted")
    } else {
        "no execution from the recorded inputs produces this actuation".to_string()
    };
    Ok(Verdict {
        actuations: total,
        explained: best,
        violations: if inconclusive {
            Vec::new()
        } else {
            vec![Violation {
                index: best,
                ts: a.ts,
                device: a.device.clone(),
                value: a.value.clone(),
                attribution: a.attribution.clone(),
                reason,
            }]
        },
        inconclusive,
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const DESC: &str = r#"{
      "nodes": [
        {"name": "a", "type": "sancus", "address": "sim://a"},
        {"name": "b", "type": "trustzone", "address": "sim://b"}
      ],
      "modules": [
        {"name": "s", "type": "sancus", "node": "a", "behavior": "AggS", "vendor_id": 1},
        {"name": "e", "type": "trustzone", "node": "b", "behavior": "echo", "vendor_id": 1}
      ],
      "connections": [
        {"name": "in", "from_driver": "a.probe", "to_module": "s", "to_input": "Sensor", "encryption": "aes"},
        {"name": "r", "from_module": "s", "from_output": "Reading", "to_module": "e", "to_input": "in", "encryption": "aes"},
        {"name": "o", "from_module": "e", "from_output": "out", "to_driver": "b.led", "encryption": "aes"}
      ]
    }"#;

    fn input(ts: u64, v: u16) -> TraceRecord {
        TraceRecord::Input {
            ts,
            node: "a".into(),
            device: "probe".into(),
            value: v.to_be_bytes().to_vec(),
        }
    }

    fn act(ts: u64, v: u16) -> TraceRecord {
        TraceRecord::Actuation {
            ts,
            node: "b".into(),
            device: "led".into(),
            value: v.to_be_bytes().to_vec(),
            attribution: String::new(),
        }
    }

    fn verdict(records: Vec<TraceRecord>) -> Verdict {
        let desc = DeploymentDescriptor::parse(DESC).unwrap();
        let mut t = CausalTrace::new();
        for r in records {
            t.push(r);
        }
        verify_authenticity(&desc, &t).unwrap()
    }

    #[test]
    fn explains_in_order_and_with_losses() {
        assert!(verdict(vec![input(1, 5), input(2, 6), act(3, 5), act(4, 6)]).is_authentic());
        assert!(verdict(vec![input(1, 5), input(2, 6), act(4, 5)]).is_authentic());
        assert!(verdict(vec![input(1, 5), input(2, 6)]).is_authentic());
        assert!(verdict(vec![]).is_authentic());
    }

    #[test]
    fn a_lost_event_stalls_its_connection() {
        assert!(!verdict(vec![input(1, 5), input(2, 6), act(4, 6)]).is_authentic());
    }

    #[test]
    fn rejects_forgery_reordering_and_duplication() {
        let v = verdict(vec![input(1, 5), act(3, 7)]);
        assert_eq!(v.violations.len(), 1);
        assert_eq!(v.violations[0].index, 0);
        assert!(!verdict(vec![input(1, 5), input(2, 6), act(3, 6), act(4, 5)]).is_authentic());
        assert!(!verdict(vec![input(1, 5), act(3, 5), act(4, 5)]).is_authentic());
    }

    #[test]
    fn actuation_cannot_precede_its_input() {
        let v = verdict(vec![act(1, 5), input(2, 5)]);
        assert_eq!(v.violations.len(), 1);
    }

    #[test]
    fn budget_exhaustion_is_inconclusive() {
        let desc = DeploymentDescriptor::parse(DESC).unwrap();
        let mut t = CausalTrace::new();
        for i in 0..6 {
            t.push(input(i, i as u16));
        }
        t.push(act(10, 99));
        let v = verify_with(&desc, &t, &BehaviorRegistry::builtin(), 3).unwrap();
        assert!(v.inconclusive && v.violations.is_empty() && !v.is_authentic());
    }
}
