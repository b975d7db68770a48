//! Adversary harness: simulated network under attacker control, causal
//! traces, the authenticity oracle, scenarios and the RTT profiler.

pub mod bench;
pub mod net;
pub mod oracle;
pub mod scenarios;
pub mod trace;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use crate::behavior::BehaviorRegistry;
use crate::clock::{Clock, SharedClock, SimClock};
use crate::crypto::{Key128, SecureRng};
use crate::deployer::descriptor::{split_driver_ref, DeploymentDescriptor};
use crate::deployer::state::{Credentials, DeploymentState};
use crate::deployer::Deployer;
use crate::error::{Error, ErrorKind, Result};
use crate::manager::EventManager;
use crate::runtime::Faults;
use crate::secure_io::{DeviceKind, Direction, InfrastructureProvider};
use crate::tee::{Node, NodeConfig};

pub use net::{AttackAction, AttackProfile, AttackScript, SimNet};
pub use oracle::{verify_authenticity, verify_with, Verdict, Violation, DEFAULT_STATE_BUDGET};
pub use trace::{CausalTrace, TraceRecord};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Stimulus {
    Physical { node: String, device: String, value: Vec<u8> },
    Direct { connection: String, payload: Vec<u8> },
}

/// Nodes, network, provider and trace of one simulated deployment.
pub struct SimWorld {
    seed: u64,
    clock: Arc<SimClock>,
    net: Arc<SimNet>,
    trace: Arc<Mutex<CausalTrace>>,
    configs: Vec<NodeConfig>,
    managers: BTreeMap<String, Arc<Mutex<EventManager>>>,
    provider: Arc<Mutex<InfrastructureProvider>>,
    stimuli: BTreeMap<(u64, u64), Stimulus>,
    stimulus_seq: u64,
    cursors: BTreeMap<(String, String), usize>,
}

impl std::fmt::Debug for SimWorld {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimWorld")
            .field("seed", &self.seed)
            .field("nodes", &self.managers.keys().collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

/// Node configurations implied by a descriptor: vendors from its modules,
/// devices from its driver references, roots from `seed`.
pub fn configs_for(desc: &DeploymentDescriptor, seed: u64) -> Vec<NodeConfig> {
    let mut rng = SecureRng::seeded(seed ^ 0x5EED_0001);
    desc.nodes
        .iter()
        .map(|n| {
            let root = loop {
                let k = Key128::generate(&mut rng);
                if !k.is_unset() {
                    break k;
                }
            };
            let mut cfg = NodeConfig::new(&n.name, &n.address, n.flavor, root);
            for m in desc.modules.iter().filter(|m| m.node == n.name) {
                cfg = cfg.with_vendor(m.vendor_id);
            }
            for c in &desc.connections {
                let refs = [(&c.from_driver, DeviceKind::Input), (&c.to_driver, DeviceKind::Output)];
                for (r, kind) in refs {
                    if let Some((node, device)) = r.as_deref().and_then(split_driver_ref) {
                        if node == n.name && !cfg.devices.iter().any(|d| d.name == device) {
                            cfg = cfg.with_device(device, kind);
                        }
                    }
                }
            }
            cfg
        })
        .collect()
}

impl SimWorld {
    pub fn new(configs: Vec<NodeConfig>, seed: u64, latency_micros: u64) -> Result<SimWorld> {
        let clock = SimClock::new();
        let shared: SharedClock = clock.clone();
        let trace = Arc::new(Mutex::new(CausalTrace::new()));
        let net = SimNet::new(clock.clone(), trace.clone(), latency_micros);
        let provider = Arc::new(Mutex::new(InfrastructureProvider::new(shared.clone())));
        let mut master = SecureRng::seeded(seed);
        let mut managers = BTreeMap::new();
        for cfg in &configs {
            let node = Node::new(cfg.clone(), BehaviorRegistry::builtin(), shared.clone(), master.fork())?;
            provider.lock().expect("provider lock").register_node(cfg);
            let mut manager = EventManager::new(node, net.clone());
            let (hook_trace, hook_clock) = (trace.clone(), clock.clone());
            manager.set_firing_hook(Some(Arc::new(move |node, module, conn, label, payload| {
                hook_trace.lock().expect("trace lock").push(TraceRecord::Firing {
                    ts: hook_clock.now_micros(),
                    node: node.to_string(),
                    module,
                    conn,
                    label: label.to_string(),
                    payload: payload.to_vec(),
                });
            })));
            let manager = Arc::new(Mutex::new(manager));
            net.register(&cfg.address, &manager);
            managers.insert(cfg.node_id.clone(), manager);
        }
        Ok(SimWorld {
            seed,
            clock,
            net,
            trace,
            configs,
            managers,
            provider,
            stimuli: BTreeMap::new(),
            stimulus_seq: 0,
            cursors: BTreeMap::new(),
        })
    }

    pub fn for_descriptor(desc: &DeploymentDescriptor, seed: u64) -> Result<SimWorld> {
        Self::new(configs_for(desc, seed), seed, net::DEFAULT_LINK_LATENCY_MICROS)
    }

    /// A deployer holding exactly the credentials issued for its vendors.
    pub fn deployer(&self, desc: &DeploymentDescriptor, deployer_id: &str) -> Deployer {
        let vendors: Vec<u16> = desc.modules.iter().map(|m| m.vendor_id).collect();
        let creds = Credentials::issue(&self.configs, &vendors);
        let clock: SharedClock = self.clock.clone();
        Deployer::new(
            desc.clone(),
            DeploymentState::new(deployer_id),
            self.net.clone(),
            creds,
            self.provider.clone(),
            clock,
            SecureRng::seeded(self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xDE91),
        )
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn clock(&self) -> &Arc<SimClock> {
        &self.clock
    }

    pub fn now_micros(&self) -> u64 {
        self.clock.now_micros()
    }

    pub fn net(&self) -> &Arc<SimNet> {
        &self.net
    }

    pub fn provider(&self) -> &Arc<Mutex<InfrastructureProvider>> {
        &self.provider
    }

    pub fn configs(&self) -> &[NodeConfig] {
        &self.configs
    }

    pub fn manager(&self, node: &str) -> Result<Arc<Mutex<EventManager>>> {
        self.managers
            .get(node)
            .cloned()
            .ok_or_else(|| Error::new(ErrorKind::NodeUnreachable, node.to_string()))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &String> {
        self.managers.keys()
    }

    pub fn set_faults(&self, faults: Faults) {
        for m in self.managers.values() {
            m.lock().expect("manager lock").node_mut().set_faults(faults);
        }
    }

    pub fn trace(&self) -> CausalTrace {
        self.trace.lock().expect("trace lock").clone()
    }

    pub fn clear_trace(&mut self) {
        self.poll_actuations();
        *self.trace.lock().expect("trace lock") = CausalTrace::new();
    }

    /// Schedules a physical input at an absolute simulated time.
    pub fn schedule_input(&mut self, at_micros: u64, node: &str, device: &str, value: &[u8]) {
        self.push_stimulus(
            at_micros,
            Stimulus::Physical {
                node: node.to_string(),
                device: device.to_string(),
                value: value.to_vec(),
            },
        );
    }

    /// Schedules an event from the deployer on a direct connection.
    pub fn schedule_direct(&mut self, at_micros: u64, connection: &str, payload: &[u8]) {
        self.push_stimulus(
            at_micros,
            Stimulus::Direct {
                connection: connection.to_string(),
                payload: payload.to_vec(),
            },
        );
    }

    fn push_stimulus(&mut self, at: u64, s: Stimulus) {
        self.stimuli.insert((at, self.stimulus_seq), s);
        self.stimulus_seq += 1;
    }

    pub fn pending_stimuli(&self) -> usize {
        self.stimuli.len()
    }

    /// Senses a value right now.
    pub fn input_now(&mut self, node: &str, device: &str, value: &[u8]) -> Result<()> {
        let ts = self.now_micros();
        self.trace.lock().expect("trace lock").push(TraceRecord::Input {
            ts,
            node: node.to_string(),
            device: device.to_string(),
            value: value.to_vec(),
        });
        let result = self.manager(node)?.lock().expect("manager lock").inject_physical_input(device, value);
        self.poll_actuations();
        result
    }

    /// Sends on a direct connection right now.
    pub fn direct_now(&mut self, deployer: &mut Deployer, connection: &str, payload: &[u8]) -> Result<Option<Vec<u8>>> {
        self.trace.lock().expect("trace lock").push(TraceRecord::Direct {
            ts: self.now_micros(),
            connection: connection.to_string(),
            payload: payload.to_vec(),
        });
        let result = deployer.send_direct(connection, payload);
        self.poll_actuations();
        result
    }

    /// Runs stimuli and network deliveries in time order until both are
    /// exhausted. Direct stimuli are dropped when no deployer is given.
    pub fn run(&mut self, mut deployer: Option<&mut Deployer>) {
        loop {
            let next_frame = self.net.next_delivery_time();
            let next_stimulus = self.stimuli.keys().next().map(|(t, _)| *t);
            let take_stimulus = match (next_frame, next_stimulus) {
                (None, None) => break,
                (Some(f), Some(s)) => s < f,
                (None, Some(_)) => true,
                (Some(_), None) => false,
            };
            if take_stimulus {
                let ((at, _), s) = self.stimuli.pop_first().expect("stimulus");
                self.clock.advance_to(at);
                match s {
                    Stimulus::Physical { node, device, value } => {
                        let _ = self.input_now(&node, &device, &value);
                    }
                    Stimulus::Direct { connection, payload } => {
                        if let Some(d) = deployer.as_deref_mut() {
                            let _ = self.direct_now(d, &connection, &payload);
                        }
                    }
                }
            } else {
                self.net.step();
                self.poll_actuations();
            }
        }
        self.poll_actuations();
    }

    /// Delivers in-flight frames only.
    pub fn settle(&mut self) {
        self.net.run_until_idle();
        self.poll_actuations();
    }

    /// Appends new output-device writes to the trace.
    pub fn poll_actuations(&mut self) {
        let mut fresh = Vec::new();
        for (node, m) in &self.managers {
            let guard = m.lock().expect("manager lock");
            for dev in guard.node().devices().filter(|d| d.kind == DeviceKind::Output) {
                let cursor = self.cursors.entry((node.clone(), dev.device_id.clone())).or_insert(0);
                for rec in &dev.log()[*cursor..] {
                    if rec.direction == Direction::Out {
                        fresh.push(TraceRecord::Actuation {
                            ts: rec.ts_micros,
                            node: node.clone(),
                            device: dev.device_id.clone(),
                            value: rec.value.clone(),
                            attribution: rec.attribution.clone(),
                        });
                    }
                }
                *cursor = dev.log().len();
            }
        }
        if !fresh.is_empty() {
            let mut t = self.trace.lock().expect("trace lock");
            for r in fresh {
                t.push(r);
            }
        }
    }

    /// Every output-device write so far, per `node.device`.
    pub fn actuations(&self) -> Vec<(String, Vec<u8>, String)> {
        let mut out = Vec::new();
        for (node, m) in &self.managers {
            let guard = m.lock().expect("manager lock");
            for dev in guard.node().devices().filter(|d| d.kind == DeviceKind::Output) {
                for rec in dev.log().iter().filter(|r| r.direction == Direction::Out) {
                    out.push((format!("{node}.{}", dev.device_id), rec.value.clone(), rec.attribution.clone()));
                }
            }
        }
        out
    }
}
