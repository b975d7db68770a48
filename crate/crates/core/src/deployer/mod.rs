//! Trusted deployer: packages, loads, attests and wires an application.

pub mod attman;
pub mod descriptor;
pub mod state;

use std::sync::{Arc, Mutex};
use std::time::Duration;

use log::info;

use crate::behavior::{BehaviorRegistry, ENTRY_HANDLE_INPUT, ENTRY_SET_KEY};
use crate::clock::SharedClock;
use crate::crypto::{Key128, SecureRng};
use crate::error::{Error, ErrorKind, Result};
use crate::manager::{parse_load_ack, Frame, Transport, CONTROL_MODULE, CONTROL_UNLOAD};
use crate::package::{identity_of, IoKind};
use crate::runtime::{open_reply, seal_event, seal_set_key, NONCE_LIMIT};
use crate::secure_io::{
    confirmation_tag, release_args, InfrastructureProvider, ENTRY_GET_NONCE, ENTRY_RELEASE, ENTRY_SET_EXCLUSIVE,
};

pub use attman::{attest_module, AttestTarget, AttestationManager, KeyHandle, DEPLOYER_ADDRESS};
pub use descriptor::{ConnectionDecl, DeploymentDescriptor, ModuleDecl, NodeDecl, Sink, Source};
pub use state::{key_digest, ConnectionState, Credentials, DeploymentState, ModuleState};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

pub type PackageTamper = Box<dyn FnMut(&str, &mut Vec<u8>) + Send>;

/// Outcome of one deploy/attest/connect run.
#[derive(Debug, Default)]
pub struct CommandReport {
    pub command: &'static str,
    pub succeeded: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Vec<(String, Error)>,
}

impl CommandReport {
    fn new(command: &'static str) -> Self {
        CommandReport {
            command,
            ..Default::default()
        }
    }

    pub fn is_success(&self) -> bool {
        self.failed.is_empty()
    }

    pub fn failed_names(&self) -> Vec<&str> {
        self.failed.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn into_result(self) -> Result<CommandReport> {
        if self.failed.is_empty() {
            return Ok(self);
        }
        let kind = self.failed[0].1.kind;
        let detail = self
            .failed
            .iter()
            .map(|(n, e)| format!("{n}: {e}"))
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::new(kind, format!("{} failed for {detail}", self.command)))
    }
}

impl std::fmt::Display for CommandReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} ok, {} skipped, {} failed",
            self.command,
            self.succeeded.len(),
            self.skipped.len(),
            self.failed.len()
        )?;
        for (name, err) in &self.failed {
            write!(f, "\n  {name}: {err}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct UpdateOptions {
    /// Initial state of the new instance; the descriptor's when absent.
    pub init: Option<Vec<u8>>,
    /// Move state through a temporary transfer → restore connection.
    pub transfer: bool,
}

#[derive(Debug, Clone)]
pub struct UpdateReport {
    pub module: String,
    pub old_module_id: u16,
    pub new_module_id: u16,
    pub connections: Vec<(String, u16)>,
    /// Keys in force before the update, per connection name.
    pub retired_keys: Vec<(String, Key128)>,
    pub set_key_calls: usize,
    pub route_updates: usize,
    pub deactivated_at: u64,
    pub reconnected_at: u64,
}

impl UpdateReport {
    pub fn downtime_micros(&self) -> u64 {
        self.reconnected_at - self.deactivated_at
    }

    pub fn downtime_ms(&self) -> f64 {
        self.downtime_micros() as f64 / 1000.0
    }
}

pub struct Deployer {
    pub descriptor: DeploymentDescriptor,
    pub state: DeploymentState,
    transport: Arc<dyn Transport>,
    creds: Credentials,
    provider: Arc<Mutex<InfrastructureProvider>>,
    registry: BehaviorRegistry,
    rng: SecureRng,
    clock: SharedClock,
    timeout: Duration,
    attman: Option<AttestationManager>,
    tamper: Option<PackageTamper>,
}

impl std::fmt::Debug for Deployer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Deployer")
            .field("deployer_id", &self.state.deployer_id)
            .field("modules", &self.state.modules.len())
            .field("connections", &self.state.connections.len())
            .finish_non_exhaustive()
    }
}

impl Deployer {
    pub fn new(
        descriptor: DeploymentDescriptor,
        state: DeploymentState,
        transport: Arc<dyn Transport>,
        creds: Credentials,
        provider: Arc<Mutex<InfrastructureProvider>>,
        clock: SharedClock,
        rng: SecureRng,
    ) -> Self {
        Deployer {
            descriptor,
            state,
            transport,
            creds,
            provider,
            registry: BehaviorRegistry::builtin(),
            rng,
            clock,
            timeout: DEFAULT_TIMEOUT,
            attman: None,
            tamper: None,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_registry(mut self, registry: BehaviorRegistry) -> Self {
        self.registry = registry;
        self
    }

    /// Hook applied to every package on its way to a node.
    pub fn set_package_tamper(&mut self, tamper: Option<PackageTamper>) {
        self.tamper = tamper;
    }

    /// Routes all further attestations through an attestation manager.
    pub fn use_attestation_manager(&mut self, attman: AttestationManager) {
        self.attman = Some(attman);
    }

    pub fn attestation_manager(&self) -> Option<&AttestationManager> {
        self.attman.as_ref()
    }

    pub fn attestation_manager_mut(&mut self) -> Option<&mut AttestationManager> {
        self.attman.as_mut()
    }

    pub fn credentials(&self) -> &Credentials {
        &self.creds
    }

    pub fn set_credentials(&mut self, creds: Credentials) {
        self.creds = creds;
    }

    pub fn provider(&self) -> &Arc<Mutex<InfrastructureProvider>> {
        &self.provider
    }

    fn call(&self, address: &str, frame: Frame) -> Result<Vec<u8>> {
        self.transport
            .call(DEPLOYER_ADDRESS, address, frame, self.timeout)?
            .into_result()
    }

    fn node_address(&self, node: &str) -> Result<String> {
        self.descriptor
            .node(node)
            .map(|n| n.address.clone())
            .ok_or_else(|| Error::new(ErrorKind::SchemaError, format!("unknown node {node}")))
    }

    fn module_decl(&self, name: &str) -> Result<ModuleDecl> {
        self.descriptor
            .module(name)
            .cloned()
            .ok_or_else(|| Error::new(ErrorKind::UnknownModule, name.to_string()))
    }

    fn module_state(&self, name: &str) -> Result<&ModuleState> {
        self.state
            .modules
            .get(name)
            .ok_or_else(|| Error::new(ErrorKind::UnknownModule, format!("{name} is not deployed")))
    }

    fn package_bytes(&self, decl: &ModuleDecl, instance: &str, init: Option<&[u8]>) -> Result<Vec<u8>> {
        let spec = self
            .registry
            .get(&decl.behavior)
            .ok_or_else(|| Error::new(ErrorKind::UnknownBehavior, decl.behavior.clone()))?;
        let init = match init {
            Some(i) => Some(i.to_vec()),
            None => decl.init_bytes()?,
        };
        Ok(spec.package(instance, decl.vendor_id, init.as_deref()).encode())
    }

    fn io_id(&self, module: &str, label: &str) -> Result<u16> {
        let decl = self.module_decl(module)?;
        let spec = self
            .registry
            .get(&decl.behavior)
            .ok_or_else(|| Error::new(ErrorKind::UnknownBehavior, decl.behavior.clone()))?;
        spec.package("", decl.vendor_id, None)
            .endpoint(label)
            .map(|e| e.io_id)
            .ok_or_else(|| Error::new(ErrorKind::SchemaError, format!("{module} has no endpoint {label}")))
    }

    fn load(&mut self, decl: &ModuleDecl, instance: &str, generation: u32, init: Option<&[u8]>) -> Result<ModuleState> {
        let package = self.package_bytes(decl, instance, init)?;
        let identity = identity_of(&package);
        let mut wire = package;
        if let Some(tamper) = self.tamper.as_mut() {
            tamper(&decl.name, &mut wire);
        }
        let address = self.node_address(&decl.node)?;
        let ack = self.call(&address, Frame::load_module(&wire))?;
        let (module_id, _) = parse_load_ack(&ack)?;
        Ok(ModuleState {
            node: decl.node.clone(),
            module_id,
            identity: hex::encode(identity),
            instance: instance.to_string(),
            generation,
            attested: false,
            module_key: None,
            key_handle: None,
            setkey_seq: 0,
        })
    }

    /// Loads every module not yet in the state.
    pub fn deploy(&mut self) -> CommandReport {
        let mut report = CommandReport::new("deploy");
        for decl in self.descriptor.modules.clone() {
            if self.state.modules.contains_key(&decl.name) {
                report.skipped.push(decl.name.clone());
                continue;
            }
            match self.load(&decl, &decl.name, 0, None) {
                Ok(ms) => {
                    info!("deployed {} as module {} on {}", decl.name, ms.module_id, decl.node);
                    self.state.modules.insert(decl.name.clone(), ms);
                    report.succeeded.push(decl.name.clone());
                }
                Err(e) => report.failed.push((decl.name.clone(), e)),
            }
        }
        report
    }

    fn attest_one(&mut self, name: &str, ms: &mut ModuleState) -> Result<()> {
        let decl = self.module_decl(name)?;
        let address = self.node_address(&decl.node)?;
        let identity = ms.identity_bytes()?;
        let target = AttestTarget {
            module: name,
            node: &decl.node,
            address: &address,
            flavor: decl.flavor,
            module_id: ms.module_id,
            vendor_id: decl.vendor_id,
            identity,
        };
        match self.attman.as_mut() {
            Some(am) => {
                ms.key_handle = Some(am.attest(&target, &mut self.rng)?);
                ms.module_key = None;
            }
            None => {
                ms.module_key = Some(attest_module(
                    self.transport.as_ref(),
                    &self.creds,
                    &target,
                    &mut self.rng,
                    self.timeout,
                )?);
            }
        }
        ms.attested = true;
        Ok(())
    }

    /// Attests every loaded module that is not yet attested.
    pub fn attest(&mut self) -> CommandReport {
        let mut report = CommandReport::new("attest");
        let names: Vec<String> = self.state.modules.keys().cloned().collect();
        for name in names {
            let mut ms = self.state.modules[&name].clone();
            if ms.attested {
                report.skipped.push(name);
                continue;
            }
            match self.attest_one(&name, &mut ms) {
                Ok(()) => {
                    self.state.modules.insert(name.clone(), ms);
                    report.succeeded.push(name);
                }
                Err(e) => report.failed.push((name, e)),
            }
        }
        report
    }

    fn fresh_key(&mut self) -> Key128 {
        loop {
            let key = Key128::generate(&mut self.rng);
            if self.state.issued_keys.insert(key_digest(&key)) {
                return key;
            }
        }
    }

    fn set_key(&mut self, module: &str, label: &str, conn: &ConnectionDecl, conn_id: u16, key: &Key128) -> Result<()> {
        let io_id = self.io_id(module, label)?;
        let ms = self.module_state(module)?.clone();
        if !ms.attested {
            return Err(Error::new(ErrorKind::AttestationFailed, format!("{module} is not attested")));
        }
        let body = match (&ms.module_key, &ms.key_handle, &self.attman) {
            (Some(mk), _, _) => seal_set_key(mk, conn_id, io_id, ms.setkey_seq, key, conn.encryption)?,
            (None, Some(h), Some(am)) => am.seal_set_key(
                *h,
                module,
                &ms.identity_bytes()?,
                conn_id,
                io_id,
                ms.setkey_seq,
                key,
                conn.encryption,
            )?,
            _ => return Err(Error::new(ErrorKind::KeyMismatch, format!("no key available for {module}"))),
        };
        let address = self.node_address(&ms.node)?;
        self.call(&address, Frame::call_entry(ms.module_id, ENTRY_SET_KEY, &body))
            .map_err(|e| Error::new(ErrorKind::SetKeyRejected, format!("{module}.{label}: {e}")))?;
        self.state.modules.get_mut(module).expect("module state").setkey_seq += 1;
        Ok(())
    }

    fn add_route(&mut self, src_address: &str, src_module: u16, conn_id: u16, dest_address: &str, dest_module: u16) -> Result<()> {
        self.call(
            src_address,
            Frame::add_connection(conn_id, src_module, dest_address, dest_module),
        )
        .map(|_| ())
    }

    /// Three-step lease: driver nonce, provider grant, set_exclusive with
    /// confirmation check.
    fn lease(&mut self, driver: &str, conn_id: u16, key: &Key128, exclusive: bool) -> Result<(String, u16)> {
        let record = self
            .provider
            .lock()
            .expect("provider lock")
            .driver(driver)
            .cloned()
            .ok_or_else(|| Error::new(ErrorKind::UnknownDriver, driver.to_string()))?;
        let address = self.node_address(&record.node)?;
        let nonce: [u8; 16] = self
            .call(&address, Frame::call_entry(record.driver_id, ENTRY_GET_NONCE, &[]))?
            .try_into()
            .map_err(|_| Error::new(ErrorKind::MalformedFrame, "driver nonce length"))?;
        self.state
            .transcript
            .push(format!("1 nonce {driver} {}", hex::encode(nonce)));
        let deployer_id = self.state.deployer_id.clone();
        let blob = self
            .provider
            .lock()
            .expect("provider lock")
            .grant(&deployer_id, driver, &nonce, key, conn_id, exclusive)?;
        self.state
            .transcript
            .push(format!("2 grant {driver} conn {conn_id} exclusive {exclusive}"));
        let confirmation = self.call(
            &address,
            Frame::call_entry(record.driver_id, ENTRY_SET_EXCLUSIVE, &blob.to_args()),
        )?;
        if confirmation != confirmation_tag(key, &nonce)?.as_bytes() {
            return Err(Error::new(ErrorKind::AuthFailure, format!("{driver}: bad confirmation")));
        }
        self.state
            .transcript
            .push(format!("3 confirmed {driver} conn {conn_id}"));
        Ok((address, record.driver_id))
    }

    fn establish(&mut self, conn: &ConnectionDecl, conn_id: u16, key: &Key128) -> Result<usize> {
        let mut routes = 0;
        let source = conn.source()?;
        let sink = conn.sink()?;
        let dest = match &sink {
            Sink::Module { module, label, .. } => {
                self.set_key(module, label, conn, conn_id, key)?;
                let ms = self.module_state(module)?;
                (self.node_address(&ms.node.clone())?, ms.module_id)
            }
            Sink::Driver(driver) => self.lease(driver, conn_id, key, true)?,
        };
        match &source {
            Source::Deployer => {}
            Source::Module { module, label, .. } => {
                self.set_key(module, label, conn, conn_id, key)?;
                let ms = self.module_state(module)?.clone();
                let src_address = self.node_address(&ms.node)?;
                self.add_route(&src_address, ms.module_id, conn_id, &dest.0, dest.1)?;
                routes += 1;
            }
            Source::Driver(driver) => {
                let (src_address, driver_id) = self.lease(driver, conn_id, key, false)?;
                self.add_route(&src_address, driver_id, conn_id, &dest.0, dest.1)?;
                routes += 1;
            }
        }
        Ok(routes)
    }

    fn connect_one(&mut self, conn: &ConnectionDecl) -> Result<()> {
        let conn_id = match self.state.connections.get(&conn.name) {
            Some(cs) => cs.conn_id,
            None => self.state.allocate_conn_id()?,
        };
        let key = self.fresh_key();
        let driver = match (conn.source()?, conn.sink()?) {
            (Source::Driver(d), _) | (_, Sink::Driver(d)) => Some(d),
            _ => None,
        };
        self.state.connections.insert(
            conn.name.clone(),
            ConnectionState {
                conn_id,
                key,
                suite: conn.encryption,
                established: false,
                direct: conn.direct,
                nonce: 0,
                driver,
            },
        );
        self.establish(conn, conn_id, &key)?;
        self.state.connections.get_mut(&conn.name).expect("inserted").established = true;
        Ok(())
    }

    /// Establishes every connection not yet established.
    pub fn connect(&mut self) -> CommandReport {
        let mut report = CommandReport::new("connect");
        for conn in self.descriptor.connections.clone() {
            if self.state.connections.get(&conn.name).map(|c| c.established).unwrap_or(false) {
                report.skipped.push(conn.name.clone());
                continue;
            }
            match self.connect_one(&conn) {
                Ok(()) => report.succeeded.push(conn.name.clone()),
                Err(e) => report.failed.push((conn.name.clone(), e)),
            }
        }
        report
    }

    /// deploy, attest and connect in sequence, stopping at the first
    /// command that fails.
    pub fn deploy_all(&mut self) -> Result<()> {
        self.deploy().into_result()?;
        self.attest().into_result()?;
        self.connect().into_result()?;
        Ok(())
    }

    fn unload(&self, node: &str, module_id: u16) -> Result<()> {
        let address = self.node_address(node)?;
        self.call(&address, Frame::call_entry(CONTROL_MODULE, CONTROL_UNLOAD, &module_id.to_be_bytes()))
            .map(|_| ())
    }

    fn touches(conn: &ConnectionDecl, module: &str) -> bool {
        conn.from_module.as_deref() == Some(module) || conn.to_module.as_deref() == Some(module)
    }

    fn transfer_state(&mut self, name: &str, old: &ModuleState) -> Result<()> {
        let decl = self.module_decl(name)?;
        let spec = self
            .registry
            .get(&decl.behavior)
            .ok_or_else(|| Error::new(ErrorKind::UnknownBehavior, decl.behavior.clone()))?;
        let (Some(save), true, true) = (
            spec.entry_id("save"),
            spec.kind_of("transfer") == Some(IoKind::Output),
            spec.kind_of("restore") == Some(IoKind::Input),
        ) else {
            return Err(Error::new(ErrorKind::Rejected, format!("{} cannot transfer state", decl.behavior)));
        };
        let temp_name = format!("{name}#transfer");
        self.state.modules.insert(temp_name.clone(), old.clone());
        let decl_conn = ConnectionDecl {
            name: temp_name.clone(),
            from_module: Some(temp_name.clone()),
            from_output: Some("transfer".into()),
            from_request: None,
            from_driver: None,
            to_module: Some(name.to_string()),
            to_input: Some("restore".into()),
            to_handler: None,
            to_driver: None,
            encryption: crate::crypto::CipherSuite::AesGcm128,
            direct: false,
        };
        let mut desc_module = decl.clone();
        desc_module.name = temp_name.clone();
        self.descriptor.modules.push(desc_module);
        let result = (|| {
            let conn_id = self.state.allocate_conn_id()?;
            let key = self.fresh_key();
            self.establish(&decl_conn, conn_id, &key)?;
            let address = self.node_address(&old.node)?;
            self.call(&address, Frame::call_entry(old.module_id, save, &[]))?;
            self.transport.settle();
            Ok(())
        })();
        self.descriptor.modules.retain(|m| m.name != temp_name);
        self.state.modules.remove(&temp_name);
        result
    }

    /// Replaces a module: new instance deployed and attested, old one
    /// deactivated, every touching connection re-keyed under its conn_id.
    pub fn update(&mut self, name: &str, opts: &UpdateOptions) -> Result<UpdateReport> {
        let old = self.module_state(name)?.clone();
        let decl = self.module_decl(name)?;
        let generation = old.generation + 1;
        let instance = format!("{name}@{generation}");

        let mut fresh = self.load(&decl, &instance, generation, opts.init.as_deref())?;
        if let Err(e) = self.attest_one(name, &mut fresh) {
            let _ = self.unload(&decl.node, fresh.module_id);
            return Err(e);
        }
        self.state.modules.insert(name.to_string(), fresh.clone());
        if opts.transfer {
            if let Err(e) = self.transfer_state(name, &old) {
                let _ = self.unload(&decl.node, fresh.module_id);
                self.state.modules.insert(name.to_string(), old);
                return Err(e);
            }
        }

        let deactivated_at = self.clock.now_micros();
        if let Err(e) = self.unload(&decl.node, old.module_id) {
            let _ = self.unload(&decl.node, fresh.module_id);
            self.state.modules.insert(name.to_string(), old);
            return Err(e);
        }
        self.state.transcript.push(format!("update {name}: deactivated module {}", old.module_id));

        let mut report = UpdateReport {
            module: name.to_string(),
            old_module_id: old.module_id,
            new_module_id: fresh.module_id,
            connections: Vec::new(),
            retired_keys: Vec::new(),
            set_key_calls: 0,
            route_updates: 0,
            deactivated_at,
            reconnected_at: deactivated_at,
        };
        let touched: Vec<ConnectionDecl> = self
            .descriptor
            .connections
            .iter()
            .filter(|c| Self::touches(c, name))
            .cloned()
            .collect();
        let mut first_error = None;
        for conn in touched {
            let Some(cs) = self.state.connections.get(&conn.name).cloned() else { continue };
            let key = self.fresh_key();
            report.retired_keys.push((conn.name.clone(), cs.key));
            let mut next = cs.clone();
            next.key = key;
            next.nonce = 0;
            next.established = false;
            self.state.connections.insert(conn.name.clone(), next);
            let before = self.setkey_total();
            match self.establish(&conn, cs.conn_id, &key) {
                Ok(routes) => {
                    report.route_updates += routes;
                    self.state.connections.get_mut(&conn.name).expect("conn").established = true;
                    report.connections.push((conn.name.clone(), cs.conn_id));
                }
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
            report.set_key_calls += self.setkey_total() - before;
        }
        report.reconnected_at = self.clock.now_micros();
        self.state.transcript.push(format!(
            "update {name}: reconnected {} connections, window {} us",
            report.connections.len(),
            report.downtime_micros()
        ));
        match first_error {
            Some(e) => Err(e),
            None => Ok(report),
        }
    }

    fn setkey_total(&self) -> usize {
        self.state.modules.values().map(|m| m.setkey_seq as usize).sum()
    }

    /// Sends one event (or request) on a direct connection.
    pub fn send_direct(&mut self, conn_name: &str, payload: &[u8]) -> Result<Option<Vec<u8>>> {
        let decl = self
            .descriptor
            .connection(conn_name)
            .cloned()
            .ok_or_else(|| Error::new(ErrorKind::UnknownConnection, conn_name.to_string()))?;
        let cs = self
            .state
            .connections
            .get(conn_name)
            .cloned()
            .filter(|c| c.established && c.direct)
            .ok_or_else(|| Error::new(ErrorKind::Unestablished, conn_name.to_string()))?;
        if cs.nonce == NONCE_LIMIT {
            return Err(Error::new(ErrorKind::NonceExhausted, conn_name.to_string()));
        }
        let Sink::Module { module, .. } = decl.sink()? else {
            return Err(Error::new(ErrorKind::SchemaError, "direct connection into a driver"));
        };
        let ms = self.module_state(&module)?.clone();
        let address = self.node_address(&ms.node)?;
        let sealed = seal_event(cs.suite, &cs.key, cs.nonce, payload)?;
        self.state.connections.get_mut(conn_name).expect("conn").nonce += 1;
        if decl.is_request() {
            let mut args = cs.conn_id.to_be_bytes().to_vec();
            args.extend_from_slice(&sealed);
            let reply = self.call(&address, Frame::call_entry(ms.module_id, ENTRY_HANDLE_INPUT, &args))?;
            if reply.is_empty() {
                return Err(Error::new(ErrorKind::Rejected, format!("{conn_name}: request not accepted")));
            }
            Ok(Some(open_reply(cs.suite, &cs.key, cs.nonce, &reply)?))
        } else {
            self.call(&address, Frame::remote_event(ms.module_id, cs.conn_id, &sealed))?;
            Ok(None)
        }
    }

    /// Ends the lease behind a driver connection.
    pub fn release_driver(&mut self, conn_name: &str, counter: u16) -> Result<()> {
        let cs = self
            .state
            .connections
            .get(conn_name)
            .cloned()
            .ok_or_else(|| Error::new(ErrorKind::UnknownConnection, conn_name.to_string()))?;
        let driver = cs
            .driver
            .clone()
            .ok_or_else(|| Error::new(ErrorKind::UnknownDriver, format!("{conn_name} has no driver")))?;
        let record = self
            .provider
            .lock()
            .expect("provider lock")
            .driver(&driver)
            .cloned()
            .ok_or_else(|| Error::new(ErrorKind::UnknownDriver, driver.clone()))?;
        let address = self.node_address(&record.node)?;
        self.call(
            &address,
            Frame::call_entry(record.driver_id, ENTRY_RELEASE, &release_args(&cs.key, cs.conn_id, counter)?),
        )?;
        let deployer_id = self.state.deployer_id.clone();
        self.provider.lock().expect("provider lock").release(&deployer_id, &driver);
        self.state.connections.get_mut(conn_name).expect("conn").established = false;
        Ok(())
    }
}
