//! Application behaviors and the context interface they run against.
//!
//! A behavior is written once and executed both inside a [`SecurityModule`]
//! (where the context seals, routes and authenticates) and inside the
//! harness reference interpreter (where the context only records effects).
//!
//! [`SecurityModule`]: crate::runtime::SecurityModule

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::crypto::{AeadNonce, CipherSuite, Key128, Tag128};
use crate::error::{Error, ErrorKind, Result};
use crate::package::{IoKind, ModulePackage};

/// Entry ids fixed by the module layout.
pub const ENTRY_SET_KEY: u16 = 0;
pub const ENTRY_ATTEST: u16 = 1;
pub const ENTRY_HANDLE_INPUT: u16 = 2;
pub const FIRST_USER_ENTRY: u16 = 3;

/// Separator between behavior name and instance tag in a package name.
pub const INSTANCE_SEPARATOR: char = '/';

/// What a running behavior can ask of its environment.
///
/// Everything below `source_connection` is privileged and only honoured for
/// infrastructure modules; the defaults refuse.
pub trait Context {
    fn output(&mut self, label: &str, payload: &[u8]);

    fn request(&mut self, label: &str, payload: &[u8]) -> Result<Vec<u8>>;

    /// Module id of the previous executing module, 0 for external callers.
    fn caller(&self) -> u16;

    fn module_id(&self) -> u16;

    fn source_connection(&self) -> Option<u16> {
        None
    }

    fn call_module(&mut self, _module_id: u16, _entry: u16, _args: &[u8]) -> Result<Vec<u8>> {
        Err(refused("call_module"))
    }

    fn fill_random(&mut self, _buf: &mut [u8]) -> Result<()> {
        Err(refused("fill_random"))
    }

    fn mmio_read(&mut self, _register: u16) -> Result<Vec<u8>> {
        Err(refused("mmio_read"))
    }

    fn mmio_write(&mut self, _register: u16, _value: &[u8], _attribution: &str) -> Result<()> {
        Err(refused("mmio_write"))
    }

    fn install_connection(&mut self, _conn_id: u16, _label: &str, _key: Key128, _suite: CipherSuite) -> Result<()> {
        Err(refused("install_connection"))
    }

    fn remove_connection(&mut self, _conn_id: u16) -> Result<()> {
        Err(refused("remove_connection"))
    }

    fn open_with_module_key(&mut self, _nonce: &AeadNonce, _ct: &[u8], _tag: &Tag128, _aad: &[u8]) -> Result<Vec<u8>> {
        Err(refused("open_with_module_key"))
    }
}

fn refused(op: &str) -> Error {
    Error::new(ErrorKind::Rejected, format!("{op} is not available to this module"))
}

/// Application logic of one module.
pub trait Behavior: Send {
    fn on_input(&mut self, label: &str, payload: &[u8], ctx: &mut dyn Context);

    fn on_request(&mut self, label: &str, _payload: &[u8], _ctx: &mut dyn Context) -> Vec<u8> {
        let _ = label;
        Vec::new()
    }

    fn on_entry(&mut self, name: &str, _args: &[u8], _ctx: &mut dyn Context) -> Result<Vec<u8>> {
        Err(Error::new(ErrorKind::UnknownEntry, name.to_string()))
    }

    /// Canonical encoding of the state, used for memoisation and transfer.
    fn snapshot(&self) -> Vec<u8>;

    fn clone_box(&self) -> Box<dyn Behavior>;
}

impl Clone for Box<dyn Behavior> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

pub type Factory = fn(&[u8]) -> std::result::Result<Box<dyn Behavior>, String>;

/// Static description of a behavior: its endpoints, entries and constructor.
#[derive(Clone)]
pub struct BehaviorSpec {
    pub name: &'static str,
    pub inputs: &'static [&'static str],
    pub outputs: &'static [&'static str],
    pub requests: &'static [&'static str],
    pub handlers: &'static [&'static str],
    pub entries: &'static [&'static str],
    pub default_init: &'static [u8],
    pub factory: Factory,
}

impl fmt::Debug for BehaviorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BehaviorSpec").field("name", &self.name).finish_non_exhaustive()
    }
}

impl BehaviorSpec {
    pub fn labels(&self, kind: IoKind) -> &'static [&'static str] {
        match kind {
            IoKind::Input => self.inputs,
            IoKind::Output => self.outputs,
            IoKind::Request => self.requests,
            IoKind::Handler => self.handlers,
        }
    }

    pub fn kind_of(&self, label: &str) -> Option<IoKind> {
        IoKind::ALL.into_iter().find(|k| self.labels(*k).contains(&label))
    }

    /// Package for one instance; `instance` keeps identities of separately
    /// deployed instances of the same behavior distinct.
    pub fn package(&self, instance: &str, vendor_id: u16, init: Option<&[u8]>) -> ModulePackage {
        let name = if instance.is_empty() || instance == self.name {
            self.name.to_string()
        } else {
            format!("{}{}{}", self.name, INSTANCE_SEPARATOR, instance)
        };
        ModulePackage::new(
            &name,
            vendor_id,
            [self.inputs, self.outputs, self.requests, self.handlers],
            init.unwrap_or(self.default_init).to_vec(),
        )
    }

    pub fn entry_id(&self, name: &str) -> Option<u16> {
        self.entries
            .iter()
            .position(|e| *e == name)
            .map(|i| FIRST_USER_ENTRY + i as u16)
    }

    pub fn entry_name(&self, id: u16) -> Option<&'static str> {
        id.checked_sub(FIRST_USER_ENTRY)
            .and_then(|i| self.entries.get(i as usize).copied())
    }

    pub fn instantiate(&self, init: &[u8]) -> Result<Box<dyn Behavior>> {
        (self.factory)(init).map_err(|e| Error::new(ErrorKind::MalformedPackage, format!("{}: {e}", self.name)))
    }
}

/// Behavior name carried by a package name.
pub fn behavior_name(package_name: &str) -> &str {
    package_name.split(INSTANCE_SEPARATOR).next().unwrap_or(package_name)
}

/// Name-indexed set of behaviors known to a node.
#[derive(Clone, Default, Debug)]
pub struct BehaviorRegistry {
    specs: BTreeMap<&'static str, Arc<BehaviorSpec>>,
}

impl BehaviorRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Every behavior shipped with the crate: example applications and
    /// infrastructure drivers.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        for spec in crate::apps::all_specs() {
            reg.register(spec);
        }
        for spec in crate::secure_io::driver_specs() {
            reg.register(spec);
        }
        reg
    }

    pub fn register(&mut self, spec: BehaviorSpec) {
        self.specs.insert(spec.name, Arc::new(spec));
    }

    pub fn get(&self, name: &str) -> Option<Arc<BehaviorSpec>> {
        self.specs.get(name).cloned()
    }

    /// Finds the behavior for a package and checks that the package
    /// declares exactly that behavior's endpoints.
    pub fn resolve(&self, package: &ModulePackage) -> Result<Arc<BehaviorSpec>> {
        let name = behavior_name(&package.name);
        let spec = self
            .get(name)
            .ok_or_else(|| Error::new(ErrorKind::UnknownBehavior, name.to_string()))?;
        for kind in IoKind::ALL {
            let declared: Vec<&str> = package.endpoints_of(kind).map(|e| e.label.as_str()).collect();
            if declared != spec.labels(kind) {
                return Err(Error::new(
                    ErrorKind::MalformedPackage,
                    format!("{name}: {kind:?} endpoints do not match the behavior"),
                ));
            }
        }
        Ok(spec)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.specs.keys().copied()
    }
}

/// Context that records outputs and answers every request with an error.
#[derive(Debug, Default)]
pub struct RecordingContext {
    pub outputs: Vec<(String, Vec<u8>)>,
    pub caller: u16,
    pub module_id: u16,
}

impl Context for RecordingContext {
    fn output(&mut self, label: &str, payload: &[u8]) {
        self.outputs.push((label.to_string(), payload.to_vec()));
    }

    fn request(&mut self, label: &str, _payload: &[u8]) -> Result<Vec<u8>> {
        Err(Error::new(ErrorKind::Unestablished, label.to_string()))
    }

    fn caller(&self) -> u16 {
        self.caller
    }

    fn module_id(&self) -> u16 {
        self.module_id
    }
}
