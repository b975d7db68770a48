//! Protected drivers, simulated devices and the infrastructure provider.
//!
//! Every device is served by two infrastructure modules loaded at boot: a
//! driver that application modules connect to, and an MMIO module that
//! alone touches the device registers and only obeys its driver.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::behavior::{Behavior, BehaviorSpec, Context, FIRST_USER_ENTRY};
use crate::clock::SharedClock;
use crate::crypto::{self, kdf128, mac_tag, AeadNonce, CipherSuite, Key128, NonceDomain, Tag128};
use crate::error::{Error, ErrorKind, Result};
use crate::package::{ModulePackage, Reader};
use crate::runtime::key_fingerprint;

/// Vendor id of infrastructure-owned modules.
pub const INFRA_VENDOR: u16 = 0xFFFF;
/// Caller ids at or above this value denote physical interrupt sources.
pub const INTERRUPT_CALLER_BASE: u16 = 0xFF00;
pub const DATA_REGISTER: u16 = 0;
pub const DRIVER_NONCE_LEN: usize = 16;
pub const DEFAULT_LEASE_MICROS: u64 = 3_600 * 1_000_000;

pub const FLAG_EXCLUSIVE: u8 = 1;
pub const FLAG_SHARED: u8 = 0;

pub const ENTRY_GET_NONCE: u16 = FIRST_USER_ENTRY;
pub const ENTRY_SET_EXCLUSIVE: u16 = FIRST_USER_ENTRY + 1;
pub const ENTRY_RELEASE: u16 = FIRST_USER_ENTRY + 2;
pub const ENTRY_INTERRUPT: u16 = FIRST_USER_ENTRY + 3;
pub const ENTRY_MMIO_READ: u16 = FIRST_USER_ENTRY;
pub const ENTRY_MMIO_WRITE: u16 = FIRST_USER_ENTRY + 1;

const CONFIRM: &[u8] = b"CONFIRM";
const RELEASE: &[u8] = b"RELEASE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Input,
    Output,
}

impl DeviceKind {
    fn byte(self) -> u8 {
        match self {
            DeviceKind::Input => 0,
            DeviceKind::Output => 1,
        }
    }
}

// ---------------------------------------------------------------------------
// Physical devices
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    In,
    Out,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhysicalRecord {
    pub ts_micros: u64,
    pub device_id: String,
    pub direction: Direction,
    pub value: Vec<u8>,
    pub attribution: String,
}

impl fmt::Display for PhysicalRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dir = match self.direction {
            Direction::In => "in",
            Direction::Out => "out",
        };
        write!(
            f,
            "{}, {}, {}, {}, {}",
            self.ts_micros,
            self.device_id,
            dir,
            hex::encode(&self.value),
            self.attribution
        )
    }
}

#[derive(Debug, Clone)]
pub struct SimDevice {
    pub device_id: String,
    pub kind: DeviceKind,
    registers: BTreeMap<u16, Vec<u8>>,
    log: Vec<PhysicalRecord>,
}

impl SimDevice {
    pub fn new(device_id: &str, kind: DeviceKind) -> Self {
        SimDevice {
            device_id: device_id.to_string(),
            kind,
            registers: BTreeMap::new(),
            log: Vec::new(),
        }
    }

    pub fn read(&self, register: u16) -> Vec<u8> {
        self.registers.get(&register).cloned().unwrap_or_default()
    }

    /// Register write from the bound MMIO module; output devices log it.
    pub fn write(&mut self, ts_micros: u64, register: u16, value: &[u8], attribution: &str) {
        self.registers.insert(register, value.to_vec());
        if self.kind == DeviceKind::Output {
            self.log.push(PhysicalRecord {
                ts_micros,
                device_id: self.device_id.clone(),
                direction: Direction::Out,
                value: value.to_vec(),
                attribution: attribution.to_string(),
            });
        }
    }

    /// A physical event on an input device.
    pub fn sense(&mut self, ts_micros: u64, value: &[u8]) {
        self.registers.insert(DATA_REGISTER, value.to_vec());
        self.log.push(PhysicalRecord {
            ts_micros,
            device_id: self.device_id.clone(),
            direction: Direction::In,
            value: value.to_vec(),
            attribution: "physical".to_string(),
        });
    }

    pub fn log(&self) -> &[PhysicalRecord] {
        &self.log
    }

    pub fn export_log(&self) -> String {
        self.log.iter().map(|r| format!("{r}\n")).collect()
    }
}

// ---------------------------------------------------------------------------
// Driver and MMIO behaviors
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
struct Owner {
    key: Key128,
    release_counter: u16,
}

/// Driver state: current protocol nonce and the installed owner keys.
#[derive(Clone, Debug)]
pub struct Driver {
    kind: DeviceKind,
    mmio_id: u16,
    interrupt_id: u16,
    nonce: Option<[u8; DRIVER_NONCE_LEN]>,
    owners: BTreeMap<u16, Owner>,
    release_counters: BTreeMap<u16, u16>,
}

impl Driver {
    pub fn init_bytes(kind: DeviceKind, mmio_id: u16, interrupt_id: u16) -> Vec<u8> {
        let mut out = vec![kind.byte()];
        out.extend_from_slice(&mmio_id.to_be_bytes());
        out.extend_from_slice(&interrupt_id.to_be_bytes());
        out
    }

    fn from_init(init: &[u8], expected: DeviceKind) -> std::result::Result<Self, String> {
        match init {
            [k, m1, m2, i1, i2] if *k == expected.byte() => Ok(Driver {
                kind: expected,
                mmio_id: u16::from_be_bytes([*m1, *m2]),
                interrupt_id: u16::from_be_bytes([*i1, *i2]),
                nonce: None,
                owners: BTreeMap::new(),
                release_counters: BTreeMap::new(),
            }),
            _ => Err("expected kind(1) mmio_id(2) interrupt_id(2)".into()),
        }
    }

    fn endpoint(&self) -> &'static str {
        match self.kind {
            DeviceKind::Input => "value",
            DeviceKind::Output => "actuate",
        }
    }

    fn current_nonce(&mut self, ctx: &mut dyn Context) -> Result<[u8; DRIVER_NONCE_LEN]> {
        if let Some(n) = self.nonce {
            return Ok(n);
        }
        self.rotate(ctx)?;
        Ok(self.nonce.expect("fresh nonce"))
    }

    fn rotate(&mut self, ctx: &mut dyn Context) -> Result<()> {
        let mut n = [0u8; DRIVER_NONCE_LEN];
        ctx.fill_random(&mut n)?;
        self.nonce = Some(n);
        Ok(())
    }

    fn set_exclusive(&mut self, args: &[u8], ctx: &mut dyn Context) -> Result<Vec<u8>> {
        let blob = GrantBlob::parse(args)?;
        let current = self.current_nonce(ctx)?;
        if blob.nonce != current {
            return Err(Error::new(ErrorKind::NonceMismatch, "grant nonce is not the current driver nonce"));
        }
        if self.kind == DeviceKind::Output && blob.flags != FLAG_EXCLUSIVE {
            return Err(Error::new(ErrorKind::Rejected, "output drivers grant exclusive access only"));
        }
        let plain = ctx.open_with_module_key(&grant_nonce(&blob.nonce), &blob.ciphertext, &blob.tag, &blob.aad())?;
        let key = Key128::from_slice(&plain)?;
        if blob.flags == FLAG_EXCLUSIVE {
            for conn_id in std::mem::take(&mut self.owners).into_keys() {
                let _ = ctx.remove_connection(conn_id);
            }
        }
        ctx.install_connection(blob.conn_id, self.endpoint(), key, CipherSuite::AesGcm128)?;
        let release_counter = self.release_counters.get(&blob.conn_id).copied().unwrap_or(0);
        self.owners.insert(blob.conn_id, Owner { key, release_counter });
        let confirmation = confirmation_tag(&key, &current)?;
        self.rotate(ctx)?;
        Ok(confirmation.as_bytes().to_vec())
    }

    fn release(&mut self, args: &[u8], ctx: &mut dyn Context) -> Result<Vec<u8>> {
        let mut r = Reader::with_kind(args, ErrorKind::AuthFailure);
        let conn_id = r.u16()?;
        let counter = r.u16()?;
        let tag = Tag128::from_slice(r.take(16)?)?;
        let owner = self
            .owners
            .get(&conn_id)
            .ok_or_else(|| Error::new(ErrorKind::AuthFailure, format!("conn {conn_id} has no owner")))?;
        if counter != owner.release_counter {
            return Err(Error::new(ErrorKind::NonceMismatch, "stale release counter"));
        }
        let expected = release_tag(&owner.key, conn_id, counter)?;
        if expected != tag {
            return Err(Error::new(ErrorKind::AuthFailure, "release tag mismatch"));
        }
        self.owners.remove(&conn_id);
        self.release_counters.insert(conn_id, counter.wrapping_add(1));
        let _ = ctx.remove_connection(conn_id);
        self.rotate(ctx)?;
        Ok(Vec::new())
    }

    fn interrupt(&mut self, ctx: &mut dyn Context) -> Result<Vec<u8>> {
        if self.kind != DeviceKind::Input || ctx.caller() != self.interrupt_id {
            return Err(Error::new(ErrorKind::CallerRejected, format!("caller {}", ctx.caller())));
        }
        let value = ctx.call_module(self.mmio_id, ENTRY_MMIO_READ, &DATA_REGISTER.to_be_bytes())?;
        ctx.output("value", &value);
        Ok(Vec::new())
    }
}

impl Behavior for Driver {
    fn on_input(&mut self, label: &str, payload: &[u8], ctx: &mut dyn Context) {
        if label != "actuate" {
            return;
        }
        let Some(conn_id) = ctx.source_connection() else { return };
        let Some(owner) = self.owners.get(&conn_id) else { return };
        let attribution = format!("conn={} key={}", conn_id, key_fingerprint(&owner.key));
        let mut args = DATA_REGISTER.to_be_bytes().to_vec();
        args.push(attribution.len() as u8);
        args.extend_from_slice(attribution.as_bytes());
        args.extend_from_slice(payload);
        if let Err(e) = ctx.call_module(self.mmio_id, ENTRY_MMIO_WRITE, &args) {
            log::warn!("driver: mmio write failed: {e}");
        }
    }

    fn on_entry(&mut self, name: &str, args: &[u8], ctx: &mut dyn Context) -> Result<Vec<u8>> {
        match name {
            "get_nonce" => Ok(self.current_nonce(ctx)?.to_vec()),
            "set_exclusive" => self.set_exclusive(args, ctx),
            "release" => self.release(args, ctx),
            "interrupt" => self.interrupt(ctx),
            _ => Err(Error::new(ErrorKind::UnknownEntry, name.to_string())),
        }
    }

    fn snapshot(&self) -> Vec<u8> {
        let mut out = self.nonce.map(|n| n.to_vec()).unwrap_or_default();
        for (conn, owner) in &self.owners {
            out.extend_from_slice(&conn.to_be_bytes());
            out.extend_from_slice(key_fingerprint(&owner.key).as_bytes());
        }
        out
    }

    fn clone_box(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

/// MMIO module: the only code allowed to touch one device's registers.
#[derive(Clone, Debug)]
pub struct Mmio {
    expected_driver: u16,
}

impl Behavior for Mmio {
    fn on_input(&mut self, _label: &str, _payload: &[u8], _ctx: &mut dyn Context) {}

    fn on_entry(&mut self, name: &str, args: &[u8], ctx: &mut dyn Context) -> Result<Vec<u8>> {
        if ctx.caller() != self.expected_driver {
            return Err(Error::new(
                ErrorKind::CallerRejected,
                format!("caller {} is not driver {}", ctx.caller(), self.expected_driver),
            ));
        }
        let mut r = Reader::with_kind(args, ErrorKind::Rejected);
        match name {
            "read" => ctx.mmio_read(r.u16()?),
            "write" => {
                let register = r.u16()?;
                let attr_len = r.u8()? as usize;
                let attribution = String::from_utf8_lossy(r.take(attr_len)?).into_owned();
                ctx.mmio_write(register, r.rest(), &attribution)?;
                Ok(Vec::new())
            }
            _ => Err(Error::new(ErrorKind::UnknownEntry, name.to_string())),
        }
    }

    fn snapshot(&self) -> Vec<u8> {
        self.expected_driver.to_be_bytes().to_vec()
    }

    fn clone_box(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

pub fn driver_specs() -> Vec<BehaviorSpec> {
    vec![
        BehaviorSpec {
            name: "input_driver",
            inputs: &[],
            outputs: &["value"],
            requests: &[],
            handlers: &[],
            entries: &["get_nonce", "set_exclusive", "release", "interrupt"],
            default_init: &[],
            factory: |init| Ok(Box::new(Driver::from_init(init, DeviceKind::Input)?)),
        },
        BehaviorSpec {
            name: "output_driver",
            inputs: &["actuate"],
            outputs: &[],
            requests: &[],
            handlers: &[],
            entries: &["get_nonce", "set_exclusive", "release", "interrupt"],
            default_init: &[],
            factory: |init| Ok(Box::new(Driver::from_init(init, DeviceKind::Output)?)),
        },
        BehaviorSpec {
            name: "mmio",
            inputs: &[],
            outputs: &[],
            requests: &[],
            handlers: &[],
            entries: &["read", "write"],
            default_init: &[],
            factory: |init| match init {
                [a, b] => Ok(Box::new(Mmio {
                    expected_driver: u16::from_be_bytes([*a, *b]),
                })),
                _ => Err("expected driver id(2)".into()),
            },
        },
    ]
}

/// Boot-time placement of one device's driver and MMIO modules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DriverLayout {
    pub device: String,
    pub kind: DeviceKind,
    pub driver_id: u16,
    pub mmio_id: u16,
    pub interrupt_id: u16,
    pub driver_package: ModulePackage,
    pub mmio_package: ModulePackage,
}

/// Deterministic layout: devices in declaration order, each taking two
/// consecutive module ids starting at `first_id`.
pub fn driver_layout(node_id: &str, devices: &[(String, DeviceKind)], first_id: u16) -> Vec<DriverLayout> {
    let specs = driver_specs();
    devices
        .iter()
        .enumerate()
        .map(|(i, (device, kind))| {
            let driver_id = first_id + 2 * i as u16;
            let mmio_id = driver_id + 1;
            let interrupt_id = INTERRUPT_CALLER_BASE + i as u16;
            let driver_spec = match kind {
                DeviceKind::Input => &specs[0],
                DeviceKind::Output => &specs[1],
            };
            let instance = format!("{node_id}.{device}");
            DriverLayout {
                device: device.clone(),
                kind: *kind,
                driver_id,
                mmio_id,
                interrupt_id,
                driver_package: driver_spec.package(
                    &instance,
                    INFRA_VENDOR,
                    Some(&Driver::init_bytes(*kind, mmio_id, interrupt_id)),
                ),
                mmio_package: specs[2].package(&instance, INFRA_VENDOR, Some(&driver_id.to_be_bytes())),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Grant protocol
// ---------------------------------------------------------------------------

/// Sealed lease grant: connection key under the driver's module key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrantBlob {
    pub conn_id: u16,
    pub flags: u8,
    pub nonce: [u8; DRIVER_NONCE_LEN],
    pub ciphertext: Vec<u8>,
    pub tag: Tag128,
}

impl GrantBlob {
    pub fn aad(&self) -> Vec<u8> {
        grant_aad(&self.nonce, self.flags, self.conn_id)
    }

    /// set_exclusive arguments.
    pub fn to_args(&self) -> Vec<u8> {
        let mut out = self.conn_id.to_be_bytes().to_vec();
        out.push(self.flags);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(self.tag.as_bytes());
        out
    }

    pub fn parse(args: &[u8]) -> Result<GrantBlob> {
        let mut r = Reader::with_kind(args, ErrorKind::AuthFailure);
        let conn_id = r.u16()?;
        let flags = r.u8()?;
        let nonce = r.array::<DRIVER_NONCE_LEN>()?;
        let ciphertext = r.take(16)?.to_vec();
        let tag = Tag128::from_slice(r.take(16)?)?;
        if !r.is_empty() {
            return Err(Error::new(ErrorKind::AuthFailure, "trailing bytes in grant"));
        }
        Ok(GrantBlob {
            conn_id,
            flags,
            nonce,
            ciphertext,
            tag,
        })
    }
}

fn grant_aad(nonce: &[u8; DRIVER_NONCE_LEN], flags: u8, conn_id: u16) -> Vec<u8> {
    let mut aad = nonce.to_vec();
    aad.push(flags);
    aad.extend_from_slice(&conn_id.to_be_bytes());
    aad
}

fn grant_nonce(driver_nonce: &[u8; DRIVER_NONCE_LEN]) -> AeadNonce {
    AeadNonce::from_unique(NonceDomain::Grant, driver_nonce)
}

pub fn seal_grant(
    driver_key: &Key128,
    driver_nonce: &[u8; DRIVER_NONCE_LEN],
    conn_key: &Key128,
    conn_id: u16,
    flags: u8,
) -> Result<GrantBlob> {
    let aad = grant_aad(driver_nonce, flags, conn_id);
    let sealed = crypto::aead_seal(
        CipherSuite::AesGcm128,
        driver_key,
        &grant_nonce(driver_nonce),
        conn_key.as_bytes(),
        &aad,
    )?;
    Ok(GrantBlob {
        conn_id,
        flags,
        nonce: *driver_nonce,
        ciphertext: sealed.ciphertext,
        tag: sealed.tag,
    })
}

/// Tag returned by set_exclusive, checked by the deployer.
pub fn confirmation_tag(conn_key: &Key128, old_nonce: &[u8; DRIVER_NONCE_LEN]) -> Result<Tag128> {
    let subkey = kdf128(conn_key.as_bytes(), CONFIRM);
    Ok(mac_tag(&subkey, &[CONFIRM, old_nonce.as_slice()].concat())?)
}

pub fn release_tag(conn_key: &Key128, conn_id: u16, counter: u16) -> Result<Tag128> {
    let subkey = kdf128(conn_key.as_bytes(), RELEASE);
    let mut data = RELEASE.to_vec();
    data.extend_from_slice(&conn_id.to_be_bytes());
    data.extend_from_slice(&counter.to_be_bytes());
    Ok(mac_tag(&subkey, &data)?)
}

pub fn release_args(conn_key: &Key128, conn_id: u16, counter: u16) -> Result<Vec<u8>> {
    let mut out = conn_id.to_be_bytes().to_vec();
    out.extend_from_slice(&counter.to_be_bytes());
    out.extend_from_slice(release_tag(conn_key, conn_id, counter)?.as_bytes());
    Ok(out)
}

// ---------------------------------------------------------------------------
// Infrastructure provider
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessLease {
    pub deployer_id: String,
    pub driver: String,
    pub conn_id: u16,
    pub exclusive: bool,
    pub granted_at: u64,
    pub expires_at: u64,
}

#[derive(Debug, Clone)]
pub struct DriverRecord {
    pub node: String,
    pub device: String,
    pub kind: DeviceKind,
    pub driver_id: u16,
    module_key: Key128,
}

impl DriverRecord {
    pub fn new(node: &str, device: &str, kind: DeviceKind, driver_id: u16, module_key: Key128) -> Self {
        DriverRecord {
            node: node.to_string(),
            device: device.to_string(),
            kind,
            driver_id,
            module_key,
        }
    }
}

/// Owner of the nodes' drivers; grants leases to deployers over a trusted
/// in-process channel.
#[derive(Debug)]
pub struct InfrastructureProvider {
    clock: SharedClock,
    lease_micros: u64,
    drivers: BTreeMap<String, DriverRecord>,
    leases: BTreeMap<String, Vec<AccessLease>>,
    pub transcript: Vec<String>,
}

pub fn driver_ref(node: &str, device: &str) -> String {
    format!("{node}.{device}")
}

impl InfrastructureProvider {
    pub fn new(clock: SharedClock) -> Self {
        InfrastructureProvider {
            clock,
            lease_micros: DEFAULT_LEASE_MICROS,
            drivers: BTreeMap::new(),
            leases: BTreeMap::new(),
            transcript: Vec::new(),
        }
    }

    pub fn with_lease_micros(mut self, micros: u64) -> Self {
        self.lease_micros = micros;
        self
    }

    pub fn register_driver(&mut self, record: DriverRecord) {
        self.drivers.insert(driver_ref(&record.node, &record.device), record);
    }

    /// Registers every driver a node's configuration implies.
    pub fn register_node(&mut self, cfg: &crate::tee::NodeConfig) {
        let keys = cfg.keys();
        for layout in cfg.layout() {
            let identity = crate::package::identity_of(&layout.driver_package.encode());
            self.register_driver(DriverRecord::new(
                &cfg.node_id,
                &layout.device,
                layout.kind,
                layout.driver_id,
                keys.module_key(INFRA_VENDOR, &identity),
            ));
        }
    }

    pub fn driver(&self, driver: &str) -> Option<&DriverRecord> {
        self.drivers.get(driver)
    }

    fn expire(&mut self, driver: &str) {
        let now = self.clock.now_micros();
        if let Some(list) = self.leases.get_mut(driver) {
            list.retain(|l| l.expires_at > now);
        }
    }

    pub fn leases(&mut self, driver: &str) -> Vec<AccessLease> {
        self.expire(driver);
        self.leases.get(driver).cloned().unwrap_or_default()
    }

    /// Records a lease and seals `conn_key` for the driver's current nonce.
    pub fn grant(
        &mut self,
        deployer_id: &str,
        driver: &str,
        nonce: &[u8; DRIVER_NONCE_LEN],
        conn_key: &Key128,
        conn_id: u16,
        exclusive: bool,
    ) -> Result<GrantBlob> {
        let record = self
            .drivers
            .get(driver)
            .cloned()
            .ok_or_else(|| Error::new(ErrorKind::UnknownDriver, driver.to_string()))?;
        if record.kind == DeviceKind::Output && !exclusive {
            return Err(Error::new(ErrorKind::Rejected, "output devices require exclusive access"));
        }
        self.expire(driver);
        let now = self.clock.now_micros();
        let list = self.leases.entry(driver.to_string()).or_default();
        // A shared driver keys its owners by conn_id, so two deployers may not
        // hold the same slot.
        let foreign = list
            .iter()
            .any(|l| l.deployer_id != deployer_id && (l.exclusive || exclusive || l.conn_id == conn_id));
        if foreign {
            let holder = list.iter().find(|l| l.deployer_id != deployer_id).map(|l| l.deployer_id.clone());
            self.transcript
                .push(format!("grant {driver} to {deployer_id}: LeaseHeld by {}", holder.unwrap_or_default()));
            return Err(Error::new(ErrorKind::LeaseHeld, format!("{driver} is leased")));
        }
        list.retain(|l| !(l.deployer_id == deployer_id && (exclusive || l.conn_id == conn_id)));
        list.push(AccessLease {
            deployer_id: deployer_id.to_string(),
            driver: driver.to_string(),
            conn_id,
            exclusive,
            granted_at: now,
            expires_at: now.saturating_add(self.lease_micros),
        });
        let flags = if exclusive { FLAG_EXCLUSIVE } else { FLAG_SHARED };
        let blob = seal_grant(&record.module_key, nonce, conn_key, conn_id, flags)?;
        self.transcript.push(format!(
            "grant {driver} to {deployer_id}: conn {conn_id} nonce {}",
            hex::encode(nonce)
        ));
        Ok(blob)
    }

    /// Closes a deployer's leases on a driver.
    pub fn release(&mut self, deployer_id: &str, driver: &str) -> bool {
        let Some(list) = self.leases.get_mut(driver) else { return false };
        let before = list.len();
        list.retain(|l| l.deployer_id != deployer_id);
        self.transcript.push(format!("release {driver} by {deployer_id}"));
        list.len() != before
    }

    /// Lease holder check used before every actuation audit.
    pub fn holder(&mut self, driver: &str) -> Option<String> {
        self.leases(driver)
            .into_iter()
            .find(|l| l.exclusive)
            .map(|l| l.deployer_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use std::sync::Arc;

    fn provider() -> (Arc<SimClock>, InfrastructureProvider) {
        let clock = SimClock::new();
        let mut p = InfrastructureProvider::new(clock.clone());
        p.register_driver(DriverRecord::new("n1", "led", DeviceKind::Output, 1, Key128::from_bytes([1; 16])));
        p.register_driver(DriverRecord::new("n1", "btn", DeviceKind::Input, 3, Key128::from_bytes([2; 16])));
        (clock, p)
    }

    #[test]
    fn grant_blob_is_32_bytes_of_sealed_material() {
        let (_, mut p) = provider();
        let blob = p.grant("alice", "n1.led", &[7; 16], &Key128::from_bytes([9; 16]), 4, true).unwrap();
        assert_eq!(blob.ciphertext.len() + blob.tag.as_bytes().len(), 32);
        assert_eq!(GrantBlob::parse(&blob.to_args()).unwrap(), blob);
    }

    #[test]
    fn second_deployer_gets_lease_held_until_expiry() {
        let (clock, mut p) = provider();
        let k = Key128::from_bytes([9; 16]);
        p.grant("alice", "n1.led", &[7; 16], &k, 4, true).unwrap();
        let err = p.grant("bob", "n1.led", &[7; 16], &k, 5, true).unwrap_err();
        assert_eq!(err.kind, ErrorKind::LeaseHeld);
        p.grant("alice", "n1.led", &[8; 16], &k, 4, true).unwrap();
        clock.advance_by(DEFAULT_LEASE_MICROS);
        p.grant("bob", "n1.led", &[7; 16], &k, 5, true).unwrap();
        assert_eq!(p.holder("n1.led").as_deref(), Some("bob"));
    }

    #[test]
    fn shared_input_leases_coexist() {
        let (_, mut p) = provider();
        let k = Key128::from_bytes([9; 16]);
        p.grant("alice", "n1.btn", &[7; 16], &k, 1, false).unwrap();
        p.grant("bob", "n1.btn", &[7; 16], &k, 2, false).unwrap();
        assert_eq!(p.leases("n1.btn").len(), 2);
        assert_eq!(p.grant("carol", "n1.btn", &[7; 16], &k, 3, true).unwrap_err().kind, ErrorKind::LeaseHeld);
        assert_eq!(p.grant("bob", "n1.led", &[7; 16], &k, 2, false).unwrap_err().kind, ErrorKind::Rejected);
    }

    #[test]
    fn shared_leases_cannot_reuse_a_foreign_conn_id() {
        let (_, mut p) = provider();
        let k = Key128::from_bytes([9; 16]);
        p.grant("alice", "n1.btn", &[7; 16], &k, 0, false).unwrap();
        assert_eq!(p.grant("bob", "n1.btn", &[7; 16], &k, 0, false).unwrap_err().kind, ErrorKind::LeaseHeld);
        p.grant("alice", "n1.btn", &[8; 16], &k, 0, false).unwrap();
        assert_eq!(p.leases("n1.btn").len(), 1);
    }

    #[test]
    fn release_frees_the_driver() {
        let (_, mut p) = provider();
        let k = Key128::from_bytes([9; 16]);
        p.grant("alice", "n1.led", &[7; 16], &k, 4, true).unwrap();
        assert!(p.release("alice", "n1.led"));
        p.grant("bob", "n1.led", &[7; 16], &k, 5, true).unwrap();
        assert_eq!(p.grant("x", "n1.nope", &[7; 16], &k, 5, true).unwrap_err().kind, ErrorKind::UnknownDriver);
    }

    #[test]
    fn confirmation_depends_on_key_and_nonce() {
        let k = Key128::from_bytes([9; 16]);
        let a = confirmation_tag(&k, &[1; 16]).unwrap();
        assert_ne!(a, confirmation_tag(&k, &[2; 16]).unwrap());
        assert_ne!(a, confirmation_tag(&Key128::from_bytes([8; 16]), &[1; 16]).unwrap());
        assert_ne!(release_tag(&k, 1, 0).unwrap(), release_tag(&k, 1, 1).unwrap());
    }

    #[test]
    fn layout_is_sequential() {
        let devices = vec![("led".to_string(), DeviceKind::Output), ("btn".to_string(), DeviceKind::Input)];
        let layout = driver_layout("n1", &devices, 1);
        assert_eq!((layout[0].driver_id, layout[0].mmio_id, layout[0].interrupt_id), (1, 2, 0xFF00));
        assert_eq!((layout[1].driver_id, layout[1].mmio_id, layout[1].interrupt_id), (3, 4, 0xFF01));
        assert_ne!(layout[0].driver_package.identity(), layout[1].driver_package.identity());
    }

    #[test]
    fn physical_log_line_format() {
        let mut d = SimDevice::new("led", DeviceKind::Output);
        d.write(42, DATA_REGISTER, &[1], "conn=3 key=abcd0123");
        assert_eq!(d.export_log(), "42, led, out, 01, conn=3 key=abcd0123\n");
        let mut b = SimDevice::new("btn", DeviceKind::Input);
        b.sense(7, &[0, 5]);
        assert_eq!(b.log()[0].to_string(), "7, btn, in, 0005, physical");
        assert_eq!(b.read(DATA_REGISTER), vec![0, 5]);
    }
}
