//! Simulated TEE nodes and their key hierarchies.
//!
//! Three flavors share one attestation contract. Sancus and TrustZone
//! derive `vendor_key = kdf128(root, vendor_id)` and
//! `module_key = kdf128(vendor_key, identity)`; the SGX simulation derives
//! `module_key = kdf128(root, identity)` and answers Attest with a quote
//! that a verification service holding the platform root can check.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::behavior::{BehaviorRegistry, ENTRY_ATTEST};
use crate::clock::SharedClock;
use crate::crypto::{kdf128, mac_tag, Key128, SecureRng, Tag128, HASH_LEN, TAG_LEN};
use crate::error::{Error, ErrorKind, Result};
use crate::package::{identity_of, Identity, ModulePackage};
use crate::metrics::{self, Stage};
use crate::runtime::{Faults, ModuleEnv, SecurityModule};
use crate::secure_io::{driver_layout, DeviceKind, DriverLayout, SimDevice, ENTRY_INTERRUPT, INFRA_VENDOR};

pub const DEFAULT_MAX_MODULES: usize = 64;
pub const EXTERNAL_CALLER: u16 = 0;
const QUOTE_LABEL: &[u8] = b"QUOTE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Flavor {
    #[serde(rename = "sancus")]
    Sancus,
    #[serde(rename = "trustzone")]
    TrustZone,
    #[serde(rename = "sgx-sim")]
    SgxSim,
}

impl Flavor {
    pub const ALL: [Flavor; 3] = [Flavor::Sancus, Flavor::TrustZone, Flavor::SgxSim];

    pub fn as_str(self) -> &'static str {
        match self {
            Flavor::Sancus => "sancus",
            Flavor::TrustZone => "trustzone",
            Flavor::SgxSim => "sgx-sim",
        }
    }
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Flavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sancus" => Ok(Flavor::Sancus),
            "trustzone" => Ok(Flavor::TrustZone),
            "sgx-sim" | "sgx" => Ok(Flavor::SgxSim),
            other => Err(Error::new(ErrorKind::Config, format!("unknown flavor {other}"))),
        }
    }
}

pub fn derive_vendor_key(root: &Key128, vendor_id: u16) -> Key128 {
    kdf128(root.as_bytes(), &vendor_id.to_be_bytes())
}

pub fn derive_module_key(vendor_key: &Key128, identity: &Identity) -> Key128 {
    kdf128(vendor_key.as_bytes(), identity)
}

/// Root-anchored derivation chain of one node.
#[derive(Clone, Debug)]
pub struct KeyHierarchy {
    pub flavor: Flavor,
    root: Key128,
}

impl KeyHierarchy {
    pub fn new(flavor: Flavor, root: Key128) -> Self {
        KeyHierarchy { flavor, root }
    }

    pub fn vendor_key(&self, vendor_id: u16) -> Key128 {
        derive_vendor_key(&self.root, vendor_id)
    }

    pub fn module_key(&self, vendor_id: u16, identity: &Identity) -> Key128 {
        match self.flavor {
            Flavor::Sancus | Flavor::TrustZone => derive_module_key(&self.vendor_key(vendor_id), identity),
            Flavor::SgxSim => kdf128(self.root.as_bytes(), identity),
        }
    }

    pub fn quote_key(&self) -> Key128 {
        kdf128(self.root.as_bytes(), QUOTE_LABEL)
    }

    pub fn quote(&self, identity: &Identity, challenge: &[u8]) -> Vec<u8> {
        let mut body = identity.to_vec();
        body.extend_from_slice(challenge);
        let tag = mac_tag(&self.quote_key(), &body).expect("quote key is never zero");
        body.extend_from_slice(tag.as_bytes());
        body
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub name: String,
    pub kind: DeviceKind,
}

/// Node configuration file (TOML).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub node_id: String,
    pub address: String,
    pub flavor: Flavor,
    pub root_key: Key128,
    #[serde(default)]
    pub vendors: BTreeSet<u16>,
    #[serde(default = "default_max_modules")]
    pub max_modules: usize,
    #[serde(default)]
    pub devices: Vec<DeviceConfig>,
}

fn default_max_modules() -> usize {
    DEFAULT_MAX_MODULES
}

impl NodeConfig {
    pub fn new(node_id: &str, address: &str, flavor: Flavor, root_key: Key128) -> Self {
        NodeConfig {
            node_id: node_id.to_string(),
            address: address.to_string(),
            flavor,
            root_key,
            vendors: BTreeSet::new(),
            max_modules: DEFAULT_MAX_MODULES,
            devices: Vec::new(),
        }
    }

    pub fn with_vendor(mut self, vendor_id: u16) -> Self {
        self.vendors.insert(vendor_id);
        self
    }

    pub fn with_device(mut self, name: &str, kind: DeviceKind) -> Self {
        self.devices.push(DeviceConfig {
            name: name.to_string(),
            kind,
        });
        self
    }

    pub fn parse_toml(text: &str) -> Result<Self> {
        let config: NodeConfig = toml::from_str(text).map_err(|e| Error::new(ErrorKind::Config, e.to_string()))?;
        if config.root_key.is_unset() {
            return Err(Error::new(ErrorKind::Config, "root_key must not be all zero"));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("node config serializes")
    }

    pub fn keys(&self) -> KeyHierarchy {
        KeyHierarchy::new(self.flavor, self.root_key)
    }

    pub fn layout(&self) -> Vec<DriverLayout> {
        let devices: Vec<(String, DeviceKind)> = self.devices.iter().map(|d| (d.name.clone(), d.kind)).collect();
        driver_layout(&self.node_id, &devices, 1)
    }
}

/// Verifier for sgx-sim quotes; shares platform roots with the nodes.
#[derive(Debug, Clone, Default)]
pub struct VerificationService {
    platforms: BTreeMap<String, KeyHierarchy>,
}

impl VerificationService {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, node_id: &str, root: Key128) {
        self.platforms
            .insert(node_id.to_string(), KeyHierarchy::new(Flavor::SgxSim, root));
    }

    /// Checks identity, freshness and the quote MAC; on success hands the
    /// deployer the module key bound to that identity.
    pub fn verify(&self, node_id: &str, evidence: &[u8], expected: &Identity, challenge: &[u8]) -> Result<Key128> {
        let keys = self
            .platforms
            .get(node_id)
            .ok_or_else(|| Error::new(ErrorKind::AttestationFailed, format!("unknown platform {node_id}")))?;
        if evidence.len() != HASH_LEN + challenge.len() + TAG_LEN {
            return Err(Error::new(ErrorKind::AttestationFailed, "quote length"));
        }
        let (body, tag) = evidence.split_at(evidence.len() - TAG_LEN);
        let expected_tag = mac_tag(&keys.quote_key(), body)?;
        if expected_tag != Tag128::from_slice(tag)? {
            return Err(Error::new(ErrorKind::AttestationFailed, "quote MAC mismatch"));
        }
        if &body[..HASH_LEN] != expected || &body[HASH_LEN..] != challenge {
            return Err(Error::new(ErrorKind::AttestationFailed, "quote identity or challenge mismatch"));
        }
        Ok(keys.module_key(0, expected))
    }
}

/// Destination of a routed connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteTarget {
    pub address: String,
    pub dest_module: u16,
}

/// Untrusted services around a node: routing and transport.
pub trait EventSink {
    fn publish(&mut self, src_module: u16, conn_id: u16, sealed: Vec<u8>);

    fn route(&self, src_module: u16, conn_id: u16) -> Option<RouteTarget>;

    fn call_remote(&mut self, target: &RouteTarget, conn_id: u16, sealed: Vec<u8>, timeout: Duration) -> Result<Vec<u8>>;

    fn record_firing(&mut self, _node: &str, _module_id: u16, _conn_id: u16, _label: &str, _payload: &[u8]) {}
}

/// Sink without routes; published events are kept for inspection.
#[derive(Debug, Default)]
pub struct CollectingSink {
    pub published: Vec<(u16, u16, Vec<u8>)>,
    pub firings: Vec<(u16, u16, String, Vec<u8>)>,
}

impl EventSink for CollectingSink {
    fn publish(&mut self, src_module: u16, conn_id: u16, sealed: Vec<u8>) {
        self.published.push((src_module, conn_id, sealed));
    }

    fn route(&self, _src_module: u16, _conn_id: u16) -> Option<RouteTarget> {
        None
    }

    fn call_remote(&mut self, _t: &RouteTarget, _conn_id: u16, _sealed: Vec<u8>, _timeout: Duration) -> Result<Vec<u8>> {
        Err(ErrorKind::NodeUnreachable.into())
    }

    fn record_firing(&mut self, _node: &str, module_id: u16, conn_id: u16, label: &str, payload: &[u8]) {
        self.firings.push((module_id, conn_id, label.to_string(), payload.to_vec()));
    }
}

struct DeviceSlot {
    device: SimDevice,
    layout: DriverLayout,
}

/// One simulated TEE node: loaded modules, devices and the key chain.
pub struct Node {
    config: NodeConfig,
    keys: KeyHierarchy,
    registry: BehaviorRegistry,
    modules: BTreeMap<u16, Option<Box<SecurityModule>>>,
    vendors: BTreeMap<u16, u16>,
    next_id: u16,
    epoch: u32,
    devices: Vec<DeviceSlot>,
    rng: SecureRng,
    clock: SharedClock,
    faults: Faults,
}

impl fmt::Debug for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Node")
            .field("node_id", &self.config.node_id)
            .field("flavor", &self.config.flavor)
            .field("epoch", &self.epoch)
            .field("modules", &self.modules.keys().collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

impl Node {
    pub fn new(config: NodeConfig, registry: BehaviorRegistry, clock: SharedClock, rng: SecureRng) -> Result<Node> {
        let devices = config
            .layout()
            .into_iter()
            .map(|layout| DeviceSlot {
                device: SimDevice::new(&layout.device, layout.kind),
                layout,
            })
            .collect();
        let mut node = Node {
            keys: config.keys(),
            config,
            registry,
            modules: BTreeMap::new(),
            vendors: BTreeMap::new(),
            next_id: 1,
            epoch: 0,
            devices,
            rng,
            clock,
            faults: Faults::default(),
        };
        node.boot()?;
        Ok(node)
    }

    fn boot(&mut self) -> Result<()> {
        self.modules.clear();
        self.vendors.clear();
        self.next_id = 1;
        let layouts: Vec<DriverLayout> = self.devices.iter().map(|d| d.layout.clone()).collect();
        for layout in layouts {
            let (driver_id, _) = self.install(&layout.driver_package.encode(), true)?;
            let (mmio_id, _) = self.install(&layout.mmio_package.encode(), true)?;
            debug_assert_eq!((driver_id, mmio_id), (layout.driver_id, layout.mmio_id));
        }
        Ok(())
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn node_id(&self) -> &str {
        &self.config.node_id
    }

    pub fn address(&self) -> &str {
        &self.config.address
    }

    pub fn flavor(&self) -> Flavor {
        self.config.flavor
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn now_micros(&self) -> u64 {
        self.clock.now_micros()
    }

    pub fn set_faults(&mut self, faults: Faults) {
        self.faults = faults;
        for module in self.modules.values_mut().flatten() {
            module.set_faults(faults);
        }
    }

    fn install(&mut self, bytes: &[u8], infrastructure: bool) -> Result<(u16, Identity)> {
        let package = ModulePackage::parse(bytes)?;
        let vendor_ok = if infrastructure {
            package.vendor_id == INFRA_VENDOR
        } else {
            package.vendor_id != INFRA_VENDOR && self.config.vendors.contains(&package.vendor_id)
        };
        if !vendor_ok {
            return Err(Error::new(ErrorKind::UnknownVendor, format!("vendor {}", package.vendor_id)));
        }
        if self.modules.len() >= self.config.max_modules {
            return Err(Error::new(
                ErrorKind::CapacityExceeded,
                format!("{} modules loaded", self.modules.len()),
            ));
        }
        let spec = self.registry.resolve(&package)?;
        let identity = identity_of(bytes);
        let key = self.keys.module_key(package.vendor_id, &identity);
        let id = self.next_id;
        let vendor = package.vendor_id;
        let mut module = SecurityModule::build(id, package, spec, key)?;
        module.set_faults(self.faults);
        self.modules.insert(id, Some(Box::new(module)));
        self.vendors.insert(id, vendor);
        self.next_id = self
            .next_id
            .checked_add(1)
            .ok_or_else(|| Error::new(ErrorKind::CapacityExceeded, "module ids exhausted"))?;
        Ok((id, identity))
    }

    /// LoadModule: measure, derive the module key, assign the next id.
    pub fn load_module(&mut self, bytes: &[u8]) -> Result<(u16, Identity)> {
        self.install(bytes, false)
    }

    pub fn unload(&mut self, module_id: u16) -> Result<()> {
        if self.is_infrastructure(module_id) {
            return Err(Error::new(ErrorKind::Rejected, "infrastructure modules cannot be unloaded"));
        }
        self.vendors.remove(&module_id);
        self.modules
            .remove(&module_id)
            .map(|_| ())
            .ok_or_else(|| Error::new(ErrorKind::UnknownModule, format!("module {module_id}")))
    }

    /// Clears every module; drivers are reloaded with fresh nonces.
    pub fn reset(&mut self) -> Result<()> {
        self.epoch += 1;
        self.boot()
    }

    pub fn module(&self, module_id: u16) -> Option<&SecurityModule> {
        self.modules.get(&module_id).and_then(|m| m.as_deref())
    }

    pub fn module_ids(&self) -> Vec<u16> {
        self.modules.keys().copied().collect()
    }

    fn is_infrastructure(&self, module_id: u16) -> bool {
        self.vendors.get(&module_id) == Some(&INFRA_VENDOR)
    }

    pub fn layouts(&self) -> Vec<DriverLayout> {
        self.devices.iter().map(|d| d.layout.clone()).collect()
    }

    pub fn device(&self, name: &str) -> Option<&SimDevice> {
        self.devices.iter().find(|d| d.device.device_id == name).map(|d| &d.device)
    }

    pub fn devices(&self) -> impl Iterator<Item = &SimDevice> {
        self.devices.iter().map(|d| &d.device)
    }

    /// Invokes an entry point with an explicit caller id.
    pub fn call_with_caller_id(
        &mut self,
        caller: u16,
        module_id: u16,
        entry: u16,
        args: &[u8],
        sink: &mut dyn EventSink,
    ) -> Result<Vec<u8>> {
        let slot = self
            .modules
            .get_mut(&module_id)
            .ok_or_else(|| Error::new(ErrorKind::UnknownModule, format!("module {module_id}")))?;
        let mut module = slot
            .take()
            .ok_or_else(|| Error::new(ErrorKind::Busy, format!("module {module_id} is executing")))?;
        let privileged = self.is_infrastructure(module_id);
        let _crossing = metrics::enter(if privileged { Stage::SecureIo } else { Stage::Boundary });
        let result = {
            let mut env = NodeEnv {
                node: self,
                sink,
                caller,
                privileged,
            };
            module.dispatch_entry(entry, args, &mut env)
        };
        if let Some(slot) = self.modules.get_mut(&module_id) {
            *slot = Some(module);
        }
        result
    }

    /// External (untrusted) call, caller id 0.
    pub fn call(&mut self, module_id: u16, entry: u16, args: &[u8], sink: &mut dyn EventSink) -> Result<Vec<u8>> {
        self.call_with_caller_id(EXTERNAL_CALLER, module_id, entry, args, sink)
    }

    pub fn node_attest(&mut self, module_id: u16, challenge: &[u8]) -> Result<Vec<u8>> {
        self.call(module_id, ENTRY_ATTEST, challenge, &mut CollectingSink::default())
    }

    /// A physical event: logged on the device, then signalled to the input
    /// driver through its interrupt caller id.
    pub fn inject_physical_input(&mut self, device: &str, value: &[u8], sink: &mut dyn EventSink) -> Result<()> {
        let now = self.clock.now_micros();
        let slot = self
            .devices
            .iter_mut()
            .find(|d| d.device.device_id == device)
            .ok_or_else(|| Error::new(ErrorKind::UnknownDevice, device.to_string()))?;
        if slot.layout.kind != DeviceKind::Input {
            return Err(Error::new(ErrorKind::UnknownDevice, format!("{device} is not an input device")));
        }
        slot.device.sense(now, value);
        let (caller, driver) = (slot.layout.interrupt_id, slot.layout.driver_id);
        self.call_with_caller_id(caller, driver, ENTRY_INTERRUPT, &[], sink)
            .map(|_| ())
    }
}

struct NodeEnv<'a> {
    node: &'a mut Node,
    sink: &'a mut dyn EventSink,
    caller: u16,
    privileged: bool,
}

impl NodeEnv<'_> {
    fn device_of(&mut self, mmio_id: u16) -> Result<&mut SimDevice> {
        self.node
            .devices
            .iter_mut()
            .find(|d| d.layout.mmio_id == mmio_id)
            .map(|d| &mut d.device)
            .ok_or_else(|| Error::new(ErrorKind::Rejected, format!("module {mmio_id} has no device mapping")))
    }
}

impl ModuleEnv for NodeEnv<'_> {
    fn caller(&self) -> u16 {
        self.caller
    }

    fn now_micros(&self) -> u64 {
        self.node.clock.now_micros()
    }

    fn publish(&mut self, module_id: u16, conn_id: u16, sealed: Vec<u8>) {
        self.sink.publish(module_id, conn_id, sealed);
    }

    fn request(&mut self, module_id: u16, conn_id: u16, sealed: Vec<u8>, timeout: Duration) -> Result<Vec<u8>> {
        let target = self
            .sink
            .route(module_id, conn_id)
            .ok_or_else(|| Error::new(ErrorKind::Unestablished, format!("no route for conn {conn_id}")))?;
        if target.address == self.node.config.address {
            let mut args = conn_id.to_be_bytes().to_vec();
            args.extend_from_slice(&sealed);
            return self.node.call_with_caller_id(
                module_id,
                target.dest_module,
                crate::behavior::ENTRY_HANDLE_INPUT,
                &args,
                self.sink,
            );
        }
        self.sink.call_remote(&target, conn_id, sealed, timeout)
    }

    fn quote(&mut self, identity: &Identity, challenge: &[u8]) -> Option<Vec<u8>> {
        match self.node.config.flavor {
            Flavor::SgxSim => Some(self.node.keys.quote(identity, challenge)),
            _ => None,
        }
    }

    fn record_firing(&mut self, module_id: u16, conn_id: u16, label: &str, payload: &[u8]) {
        let node_id = self.node.config.node_id.clone();
        self.sink.record_firing(&node_id, module_id, conn_id, label, payload);
    }

    fn call_module(&mut self, from: u16, module_id: u16, entry: u16, args: &[u8]) -> Result<Vec<u8>> {
        self.node.call_with_caller_id(from, module_id, entry, args, self.sink)
    }

    fn fill_random(&mut self, buf: &mut [u8]) -> Result<()> {
        if !self.privileged {
            return Err(Error::new(ErrorKind::Rejected, "fill_random"));
        }
        rand::RngCore::fill_bytes(&mut self.node.rng, buf);
        Ok(())
    }

    fn mmio_read(&mut self, module_id: u16, register: u16) -> Result<Vec<u8>> {
        Ok(self.device_of(module_id)?.read(register))
    }

    fn mmio_write(&mut self, module_id: u16, register: u16, value: &[u8], attribution: &str) -> Result<()> {
        let now = self.node.clock.now_micros();
        self.device_of(module_id)?.write(now, register, value, attribution);
        Ok(())
    }

    fn privileged(&self) -> bool {
        self.privileged
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::crypto::sha256;
    use crate::secure_io::{
        confirmation_tag, release_args, seal_grant, ENTRY_GET_NONCE, ENTRY_MMIO_WRITE, ENTRY_RELEASE,
        ENTRY_SET_EXCLUSIVE, FLAG_EXCLUSIVE, INTERRUPT_CALLER_BASE,
    };
    use crate::runtime::{open_event, seal_event, seal_set_key};
    use crate::crypto::CipherSuite;

    fn config(flavor: Flavor) -> NodeConfig {
        NodeConfig::new("n1", "sim://n1", flavor, Key128::from_bytes([0x42; 16])).with_vendor(7)
    }

    fn node(config: NodeConfig) -> Node {
        Node::new(config, BehaviorRegistry::builtin(), SimClock::new(), SecureRng::seeded(1)).unwrap()
    }

    fn package(behavior: &str, instance: &str) -> Vec<u8> {
        let reg = BehaviorRegistry::builtin();
        reg.get(behavior).unwrap().package(instance, 7, None).encode()
    }

    #[test]
    fn key_chain_matches_formula() {
        let root = Key128::from_bytes([3; 16]);
        let vk = derive_vendor_key(&root, 0x0102);
        let expect: [u8; 16] = sha256(&[&[3u8; 16][..], &[1, 2]].concat())[..16].try_into().unwrap();
        assert_eq!(vk.as_bytes(), &expect);
        let id = [0u8; 32];
        let mk = derive_module_key(&vk, &id);
        let expect: [u8; 16] = sha256(&[vk.as_bytes().as_slice(), &id].concat())[..16].try_into().unwrap();
        assert_eq!(mk.as_bytes(), &expect);
    }

    #[test]
    fn ids_are_sequential_and_keys_deterministic() {
        let mut n = node(config(Flavor::Sancus));
        let bytes = package("FloS", "a");
        let (a, ida) = n.load_module(&bytes).unwrap();
        let (b, idb) = n.load_module(&bytes).unwrap();
        assert_eq!((a, b), (1, 2));
        assert_eq!(ida, idb);
        let c = [9u8; 16];
        assert_eq!(n.node_attest(a, &c).unwrap(), n.node_attest(b, &c).unwrap());
        let expected = config(Flavor::Sancus).keys().module_key(7, &ida);
        assert_eq!(n.node_attest(a, &c).unwrap(), mac_tag(&expected, &c).unwrap().as_bytes().to_vec());
    }

    #[test]
    fn same_package_on_two_roots_differs_only_in_key() {
        let mut n1 = node(config(Flavor::TrustZone));
        let mut cfg2 = config(Flavor::TrustZone);
        cfg2.root_key = Key128::from_bytes([0x43; 16]);
        let mut n2 = node(cfg2);
        let bytes = package("FloA", "x");
        let (a, ia) = n1.load_module(&bytes).unwrap();
        let (b, ib) = n2.load_module(&bytes).unwrap();
        assert_eq!(ia, ib);
        assert_ne!(n1.node_attest(a, &[1; 16]).unwrap(), n2.node_attest(b, &[1; 16]).unwrap());
    }

    #[test]
    fn load_errors() {
        let mut cfg = config(Flavor::Sancus);
        cfg.max_modules = 1;
        let mut n = node(cfg);
        assert_eq!(n.load_module(&[1, 2]).unwrap_err().kind, ErrorKind::MalformedPackage);
        let reg = BehaviorRegistry::builtin();
        let foreign = reg.get("FloA").unwrap().package("x", 8, None).encode();
        assert_eq!(n.load_module(&foreign).unwrap_err().kind, ErrorKind::UnknownVendor);
        let infra = reg.get("FloA").unwrap().package("x", INFRA_VENDOR, None).encode();
        assert_eq!(n.load_module(&infra).unwrap_err().kind, ErrorKind::UnknownVendor);
        n.load_module(&package("FloA", "x")).unwrap();
        assert_eq!(n.load_module(&package("FloA", "y")).unwrap_err().kind, ErrorKind::CapacityExceeded);
        assert_eq!(n.node_attest(9, &[0; 16]).unwrap_err().kind, ErrorKind::UnknownModule);
    }

    #[test]
    fn sgx_quotes_verify_and_reject_tampering() {
        let cfg = config(Flavor::SgxSim);
        let mut n = node(cfg.clone());
        let (id, identity) = n.load_module(&package("web", "w")).unwrap();
        let challenge = [5u8; 16];
        let quote = n.node_attest(id, &challenge).unwrap();
        let mut vs = VerificationService::new();
        vs.register("n1", cfg.root_key);
        let key = vs.verify("n1", &quote, &identity, &challenge).unwrap();
        assert_eq!(key, kdf128(cfg.root_key.as_bytes(), &identity));
        let mut bad = quote.clone();
        bad[3] ^= 1;
        assert!(vs.verify("n1", &bad, &identity, &challenge).is_err());
        let mut other = identity;
        other[0] ^= 1;
        assert!(vs.verify("n1", &quote, &other, &challenge).is_err());
        assert!(vs.verify("n1", &quote, &identity, &[6u8; 16]).is_err());
    }

    #[test]
    fn reset_preserves_root_and_bumps_epoch() {
        let mut n = node(config(Flavor::Sancus).with_device("led", DeviceKind::Output));
        let (id, _) = n.load_module(&package("FloA", "x")).unwrap();
        assert_eq!(id, 3);
        let before = n.node_attest(id, &[1; 16]).unwrap();
        n.reset().unwrap();
        assert_eq!(n.epoch(), 1);
        assert!(n.module(id).is_none());
        let (again, _) = n.load_module(&package("FloA", "x")).unwrap();
        assert_eq!(again, 3);
        assert_eq!(n.node_attest(again, &[1; 16]).unwrap(), before);
    }

    #[test]
    fn mmio_refuses_everyone_but_its_driver() {
        let mut n = node(config(Flavor::Sancus).with_device("led", DeviceKind::Output));
        let mut sink = CollectingSink::default();
        let layout = n.layouts()[0].clone();
        let mut args = vec![0, 0, 1, b'x'];
        args.push(1);
        for caller in [EXTERNAL_CALLER, INTERRUPT_CALLER_BASE, 99] {
            let err = n
                .call_with_caller_id(caller, layout.mmio_id, ENTRY_MMIO_WRITE, &args, &mut sink)
                .unwrap_err();
            assert_eq!(err.kind, ErrorKind::CallerRejected);
        }
        n.call_with_caller_id(layout.driver_id, layout.mmio_id, ENTRY_MMIO_WRITE, &args, &mut sink)
            .unwrap();
        assert_eq!(n.device("led").unwrap().log().len(), 1);
    }

    #[test]
    fn exclusive_access_protocol_on_a_node() {
        let cfg = config(Flavor::Sancus).with_device("led", DeviceKind::Output);
        let mut n = node(cfg.clone());
        let mut sink = CollectingSink::default();
        let layout = n.layouts()[0].clone();
        let driver_key = cfg.keys().module_key(INFRA_VENDOR, &layout.driver_package.identity());
        let nonce: [u8; 16] = n.call(layout.driver_id, ENTRY_GET_NONCE, &[], &mut sink).unwrap().try_into().unwrap();
        assert_eq!(n.call(layout.driver_id, ENTRY_GET_NONCE, &[], &mut sink).unwrap(), nonce.to_vec());
        let conn_key = Key128::from_bytes([0x77; 16]);
        let blob = seal_grant(&driver_key, &nonce, &conn_key, 11, FLAG_EXCLUSIVE).unwrap();
        let conf = n.call(layout.driver_id, ENTRY_SET_EXCLUSIVE, &blob.to_args(), &mut sink).unwrap();
        assert_eq!(conf, confirmation_tag(&conn_key, &nonce).unwrap().as_bytes().to_vec());
        let err = n.call(layout.driver_id, ENTRY_SET_EXCLUSIVE, &blob.to_args(), &mut sink).unwrap_err();
        assert_eq!(err.kind, ErrorKind::NonceMismatch);
        let ev = seal_event(CipherSuite::AesGcm128, &conn_key, 0, &[1]).unwrap();
        let mut args = 11u16.to_be_bytes().to_vec();
        args.extend_from_slice(&ev);
        n.call(layout.driver_id, 2, &args, &mut sink).unwrap();
        n.call(layout.driver_id, 2, &args, &mut sink).unwrap();
        let log = n.device("led").unwrap().log().to_vec();
        assert_eq!(log.len(), 1);
        assert!(log[0].attribution.contains(&crate::runtime::key_fingerprint(&conn_key)));
        let rel = release_args(&conn_key, 11, 0).unwrap();
        n.call(layout.driver_id, ENTRY_RELEASE, &rel, &mut sink).unwrap();
        assert!(n.call(layout.driver_id, ENTRY_RELEASE, &rel, &mut sink).is_err());
        let _ = open_event;
    }

    #[test]
    fn input_driver_fans_out_to_subscribers() {
        let cfg = config(Flavor::Sancus).with_device("btn", DeviceKind::Input);
        let mut n = node(cfg.clone());
        let mut sink = CollectingSink::default();
        let layout = n.layouts()[0].clone();
        let driver_key = cfg.keys().module_key(INFRA_VENDOR, &layout.driver_package.identity());
        n.inject_physical_input("btn", &[1], &mut sink).unwrap();
        assert!(sink.published.is_empty());
        let mut keys = Vec::new();
        for conn in [4u16, 5] {
            let nonce: [u8; 16] = n.call(layout.driver_id, ENTRY_GET_NONCE, &[], &mut sink).unwrap().try_into().unwrap();
            let k = Key128::from_bytes([conn as u8; 16]);
            let blob = seal_grant(&driver_key, &nonce, &k, conn, crate::secure_io::FLAG_SHARED).unwrap();
            n.call(layout.driver_id, ENTRY_SET_EXCLUSIVE, &blob.to_args(), &mut sink).unwrap();
            keys.push(k);
        }
        n.inject_physical_input("btn", &[0, 9], &mut sink).unwrap();
        assert_eq!(sink.published.len(), 2);
        assert_eq!(open_event(CipherSuite::AesGcm128, &keys[0], 0, &sink.published[0].2).unwrap(), vec![0, 9]);
        assert_eq!(n.device("btn").unwrap().log().len(), 2);
        assert_eq!(n.inject_physical_input("nope", &[1], &mut sink).unwrap_err().kind, ErrorKind::UnknownDevice);
        let err = n.call(layout.driver_id, crate::secure_io::ENTRY_INTERRUPT, &[], &mut sink).unwrap_err();
        assert_eq!(err.kind, ErrorKind::CallerRejected);
    }

    #[test]
    fn set_key_via_entry_zero() {
        let cfg = config(Flavor::TrustZone);
        let mut n = node(cfg.clone());
        let (id, identity) = n.load_module(&package("echo", "e")).unwrap();
        let mk = cfg.keys().module_key(7, &identity);
        let body = seal_set_key(&mk, 1, 0, 0, &Key128::from_bytes([5; 16]), CipherSuite::AesGcm128).unwrap();
        assert!(n.call(id, 0, &body, &mut CollectingSink::default()).unwrap().is_empty());
        assert_eq!(n.module(id).unwrap().connections().len(), 1);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = config(Flavor::SgxSim).with_device("led", DeviceKind::Output);
        let text = cfg.to_toml();
        assert_eq!(NodeConfig::parse_toml(&text).unwrap(), cfg);
        assert!(text.contains("flavor = \"sgx-sim\""));
    }
}
