//! Security-module runtime: connection and callback tables, the reserved
//! entry points and the context handed to behaviors.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use log::debug;

use crate::behavior::{
    Behavior, BehaviorSpec, Context, ENTRY_ATTEST, ENTRY_HANDLE_INPUT, ENTRY_SET_KEY,
};
use crate::crypto::{
    self, aead_open, aead_seal, AeadNonce, CipherSuite, Key128, NonceDomain, Tag128, KEY_LEN, TAG_LEN,
};
use crate::error::{Error, ErrorKind, Result};
use crate::package::{Identity, IoKind, ModulePackage, Reader};
use crate::metrics::{self, Stage};

pub const MIN_CHALLENGE_LEN: usize = 16;
/// Counter value at which a connection is retired instead of wrapping.
pub const NONCE_LIMIT: u16 = u16::MAX;
pub const SET_KEY_BODY_LEN: usize = 2 + 2 + 2 + KEY_LEN + TAG_LEN + 1;
pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(2);

/// One directed channel slot.
#[derive(Clone, Debug)]
pub struct Connection {
    pub conn_id: u16,
    pub io_id: u16,
    pub direction: IoKind,
    key: Key128,
    pub nonce: u16,
    pub suite: CipherSuite,
    pub dead: bool,
}

impl Connection {
    pub fn new(conn_id: u16, io_id: u16, direction: IoKind, key: Key128, suite: CipherSuite) -> Self {
        Connection {
            conn_id,
            io_id,
            direction,
            key,
            nonce: 0,
            suite,
            dead: false,
        }
    }

    pub fn is_established(&self) -> bool {
        !self.key.is_unset()
    }

    /// FNV-1a fingerprint of the key, used for attribution and tests.
    pub fn key_fingerprint(&self) -> String {
        key_fingerprint(&self.key)
    }
}

/// Short non-invertible label of a key.
pub fn key_fingerprint(key: &Key128) -> String {
    let digest = crypto::sha256(&[b"FPR".as_slice(), key.as_bytes()].concat());
    hex::encode(&digest[..4])
}

#[derive(Clone, Debug, Default)]
pub struct ConnectionTable {
    entries: BTreeMap<u16, Connection>,
}

impl ConnectionTable {
    pub fn get(&self, conn_id: u16) -> Option<&Connection> {
        self.entries.get(&conn_id)
    }

    fn get_mut(&mut self, conn_id: u16) -> Option<&mut Connection> {
        self.entries.get_mut(&conn_id)
    }

    pub fn insert(&mut self, conn: Connection) {
        self.entries.insert(conn.conn_id, conn);
    }

    pub fn remove(&mut self, conn_id: u16) -> Option<Connection> {
        self.entries.remove(&conn_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Connection> {
        self.entries.values()
    }

    fn for_io(&self, io_id: u16) -> Vec<u16> {
        self.entries
            .values()
            .filter(|c| c.io_id == io_id && c.is_established() && !c.dead)
            .map(|c| c.conn_id)
            .collect()
    }
}

/// io_id to (label, kind) for every endpoint that receives events.
#[derive(Clone, Debug, Default)]
pub struct CallbackTable {
    entries: BTreeMap<u16, (String, IoKind)>,
}

impl CallbackTable {
    pub fn from_package(package: &ModulePackage) -> Self {
        let entries = package
            .endpoints
            .iter()
            .filter(|e| e.kind.is_receiving())
            .map(|e| (e.io_id, (e.label.clone(), e.kind)))
            .collect();
        CallbackTable { entries }
    }

    pub fn get(&self, io_id: u16) -> Option<(&str, IoKind)> {
        self.entries.get(&io_id).map(|(l, k)| (l.as_str(), *k))
    }

    pub fn ids(&self) -> Vec<u16> {
        self.entries.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Why an incoming event was dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IgnoreReason {
    UnknownConnection,
    Unestablished,
    AuthFailure,
    NonceExhausted,
    Malformed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InputOutcome {
    Fired { conn_id: u16, nonce: u16 },
    Replied { conn_id: u16, nonce: u16, sealed: Vec<u8> },
    Ignored(IgnoreReason),
}

/// Fault switches for negative-control builds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Faults {
    pub skip_tag_check: bool,
}

/// Services a node provides to an executing module.
pub trait ModuleEnv {
    fn caller(&self) -> u16;

    fn now_micros(&self) -> u64;

    /// Hands a sealed event on `conn_id` to the event manager.
    fn publish(&mut self, module_id: u16, conn_id: u16, sealed: Vec<u8>);

    /// Sends a sealed request and waits for the sealed reply.
    fn request(&mut self, module_id: u16, conn_id: u16, sealed: Vec<u8>, timeout: Duration) -> Result<Vec<u8>>;

    /// Evidence override for flavors whose attestation is not a bare MAC.
    fn quote(&mut self, _identity: &Identity, _challenge: &[u8]) -> Option<Vec<u8>> {
        None
    }

    fn record_firing(&mut self, _module_id: u16, _conn_id: u16, _label: &str, _payload: &[u8]) {}

    fn call_module(&mut self, _from: u16, _module_id: u16, _entry: u16, _args: &[u8]) -> Result<Vec<u8>> {
        Err(Error::new(ErrorKind::Rejected, "call_module"))
    }

    fn fill_random(&mut self, _buf: &mut [u8]) -> Result<()> {
        Err(Error::new(ErrorKind::Rejected, "fill_random"))
    }

    fn mmio_read(&mut self, _module_id: u16, _register: u16) -> Result<Vec<u8>> {
        Err(Error::new(ErrorKind::Rejected, "mmio_read"))
    }

    fn mmio_write(&mut self, _module_id: u16, _register: u16, _value: &[u8], _attribution: &str) -> Result<()> {
        Err(Error::new(ErrorKind::Rejected, "mmio_write"))
    }

    /// Whether the executing module belongs to the infrastructure.
    fn privileged(&self) -> bool {
        false
    }
}

pub struct SecurityModule {
    pub module_id: u16,
    identity: Identity,
    module_key: Key128,
    spec: Arc<BehaviorSpec>,
    package: ModulePackage,
    connections: ConnectionTable,
    callbacks: CallbackTable,
    setkey_seq: u16,
    behavior: Option<Box<dyn Behavior>>,
    faults: Faults,
}

impl std::fmt::Debug for SecurityModule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecurityModule")
            .field("module_id", &self.module_id)
            .field("name", &self.package.name)
            .field("identity", &hex::encode(self.identity))
            .field("connections", &self.connections.len())
            .finish_non_exhaustive()
    }
}

/// Body of a SetKey call, sealed under the module key.
pub fn seal_set_key(
    module_key: &Key128,
    conn_id: u16,
    io_id: u16,
    seq: u16,
    conn_key: &Key128,
    suite: CipherSuite,
) -> Result<Vec<u8>> {
    let aad = set_key_aad(conn_id, io_id, seq);
    let sealed = aead_seal(
        CipherSuite::AesGcm128,
        module_key,
        &AeadNonce::new(NonceDomain::SetKey, seq),
        conn_key.as_bytes(),
        &aad,
    )?;
    let mut body = aad.to_vec();
    body.extend_from_slice(&sealed.ciphertext);
    body.extend_from_slice(sealed.tag.as_bytes());
    body.push(suite as u8);
    Ok(body)
}

fn set_key_aad(conn_id: u16, io_id: u16, seq: u16) -> [u8; 6] {
    let mut aad = [0u8; 6];
    aad[..2].copy_from_slice(&conn_id.to_be_bytes());
    aad[2..4].copy_from_slice(&io_id.to_be_bytes());
    aad[4..].copy_from_slice(&seq.to_be_bytes());
    aad
}

/// Seals one event at `nonce`; the counter also travels as associated data.
pub fn seal_event(suite: CipherSuite, key: &Key128, nonce: u16, payload: &[u8]) -> Result<Vec<u8>> {
    Ok(aead_seal(suite, key, &AeadNonce::event(nonce), payload, &nonce.to_be_bytes())?.to_bytes())
}

pub fn open_event(suite: CipherSuite, key: &Key128, nonce: u16, data: &[u8]) -> Result<Vec<u8>> {
    open_in_domain(suite, key, NonceDomain::Event, nonce, data)
}

pub fn seal_reply(suite: CipherSuite, key: &Key128, nonce: u16, payload: &[u8]) -> Result<Vec<u8>> {
    Ok(aead_seal(suite, key, &AeadNonce::new(NonceDomain::Reply, nonce), payload, &nonce.to_be_bytes())?.to_bytes())
}

pub fn open_reply(suite: CipherSuite, key: &Key128, nonce: u16, data: &[u8]) -> Result<Vec<u8>> {
    open_in_domain(suite, key, NonceDomain::Reply, nonce, data)
}

fn open_in_domain(suite: CipherSuite, key: &Key128, domain: NonceDomain, nonce: u16, data: &[u8]) -> Result<Vec<u8>> {
    if data.len() < TAG_LEN {
        return Err(Error::new(ErrorKind::AuthFailure, "shorter than a tag"));
    }
    let (ct, tag) = data.split_at(data.len() - TAG_LEN);
    Ok(aead_open(
        suite,
        key,
        &AeadNonce::new(domain, nonce),
        ct,
        &Tag128::from_slice(tag)?,
        &nonce.to_be_bytes(),
    )?)
}

impl SecurityModule {
    /// Builds a module with empty connection table and the behavior's
    /// callbacks.
    pub fn build(
        module_id: u16,
        package: ModulePackage,
        spec: Arc<BehaviorSpec>,
        module_key: Key128,
    ) -> Result<SecurityModule> {
        package.check_io_ids()?;
        let behavior = spec.instantiate(&package.init)?;
        Ok(SecurityModule {
            module_id,
            identity: package.identity(),
            module_key,
            callbacks: CallbackTable::from_package(&package),
            spec,
            package,
            connections: ConnectionTable::default(),
            setkey_seq: 0,
            behavior: Some(behavior),
            faults: Faults::default(),
        })
    }

    pub fn identity(&self) -> &Identity {
        &self.identity
    }

    pub fn package(&self) -> &ModulePackage {
        &self.package
    }

    pub fn spec(&self) -> &BehaviorSpec {
        &self.spec
    }

    pub fn connections(&self) -> &ConnectionTable {
        &self.connections
    }

    pub fn callbacks(&self) -> &CallbackTable {
        &self.callbacks
    }

    pub fn setkey_seq(&self) -> u16 {
        self.setkey_seq
    }

    pub fn set_faults(&mut self, faults: Faults) {
        self.faults = faults;
    }

    pub fn behavior_snapshot(&self) -> Vec<u8> {
        self.behavior.as_ref().map(|b| b.snapshot()).unwrap_or_default()
    }

    /// SetKey: installs a connection key delivered under the module key.
    pub fn set_key(&mut self, body: &[u8]) -> Result<()> {
        if body.len() != SET_KEY_BODY_LEN {
            return Err(Error::new(ErrorKind::AuthFailure, "malformed SetKey body"));
        }
        let mut r = Reader::with_kind(body, ErrorKind::AuthFailure);
        let conn_id = r.u16()?;
        let io_id = r.u16()?;
        let seq = r.u16()?;
        let ct = r.take(KEY_LEN)?;
        let tag = Tag128::from_slice(r.take(TAG_LEN)?)?;
        let suite_byte = r.u8()?;
        if seq != self.setkey_seq || self.setkey_seq == u16::MAX {
            return Err(Error::new(
                ErrorKind::StaleSequence,
                format!("expected sequence {}, got {}", self.setkey_seq, seq),
            ));
        }
        let plain = aead_open(
            CipherSuite::AesGcm128,
            &self.module_key,
            &AeadNonce::new(NonceDomain::SetKey, seq),
            ct,
            &tag,
            &set_key_aad(conn_id, io_id, seq),
        )?;
        let suite = CipherSuite::from_u8(suite_byte)
            .ok_or_else(|| Error::new(ErrorKind::UnsupportedCipher, format!("suite id {suite_byte}")))?;
        crypto::cipher_for(suite)?;
        let key = Key128::from_slice(&plain)?;
        if key.is_unset() {
            return Err(Error::new(ErrorKind::InvalidKey, "connection key is all zero"));
        }
        let direction = match self.callbacks.get(io_id) {
            Some((_, kind)) => kind,
            None => match self.package.endpoint_by_id(io_id) {
                Some(e) => e.kind,
                None => IoKind::Output,
            },
        };
        self.connections.insert(Connection::new(conn_id, io_id, direction, key, suite));
        self.setkey_seq += 1;
        Ok(())
    }

    /// Attest: MAC of the challenge under the module key.
    pub fn attest(&self, challenge: &[u8]) -> Result<Tag128> {
        if challenge.len() < MIN_CHALLENGE_LEN {
            return Err(Error::new(
                ErrorKind::ChallengeTooShort,
                format!("{} < {} bytes", challenge.len(), MIN_CHALLENGE_LEN),
            ));
        }
        Ok(crypto::mac_tag(&self.module_key, challenge)?)
    }

    /// Seals `payload` for every established connection of an output.
    pub fn handle_output(&mut self, io_id: u16, payload: &[u8]) -> Vec<(u16, Vec<u8>)> {
        let mut out = Vec::new();
        for conn_id in self.connections.for_io(io_id) {
            let conn = self.connections.get_mut(conn_id).expect("listed connection");
            if conn.direction != IoKind::Output {
                continue;
            }
            if conn.nonce == NONCE_LIMIT {
                debug!("module {} conn {}: NonceExhausted", self.module_id, conn_id);
                conn.dead = true;
                continue;
            }
            match seal_event(conn.suite, &conn.key, conn.nonce, payload) {
                Ok(sealed) => {
                    conn.nonce += 1;
                    out.push((conn_id, sealed));
                }
                Err(e) => debug!("module {} conn {}: {}", self.module_id, conn_id, e),
            }
        }
        out
    }

    fn open_incoming(&mut self, conn_id: u16, data: &[u8]) -> std::result::Result<(u16, Vec<u8>), IgnoreReason> {
        let faults = self.faults;
        let conn = self.connections.get_mut(conn_id).ok_or(IgnoreReason::UnknownConnection)?;
        if !conn.is_established() {
            return Err(IgnoreReason::Unestablished);
        }
        if !conn.direction.is_receiving() {
            return Err(IgnoreReason::UnknownConnection);
        }
        if conn.dead || conn.nonce == NONCE_LIMIT {
            conn.dead = true;
            return Err(IgnoreReason::NonceExhausted);
        }
        let nonce = conn.nonce;
        let plain = if faults.skip_tag_check {
            if data.len() < TAG_LEN {
                return Err(IgnoreReason::Malformed);
            }
            let ct = &data[..data.len() - TAG_LEN];
            crypto::aes_gcm_decrypt_unverified(&conn.key, &AeadNonce::event(nonce), ct)
        } else {
            open_event(conn.suite, &conn.key, nonce, data).map_err(|_| IgnoreReason::AuthFailure)?
        };
        conn.nonce += 1;
        Ok((nonce, plain))
    }

    /// HandleInput: authenticates the event at the expected nonce and runs
    /// the handler; every failure is swallowed.
    pub fn handle_input(&mut self, conn_id: u16, data: &[u8], env: &mut dyn ModuleEnv) -> InputOutcome {
        let (nonce, plain) = match self.open_incoming(conn_id, data) {
            Ok(v) => v,
            Err(reason) => {
                debug!("module {} ignored event on conn {}: {:?}", self.module_id, conn_id, reason);
                return InputOutcome::Ignored(reason);
            }
        };
        let conn = self.connections.get(conn_id).expect("opened connection").clone();
        let Some((label, kind)) = self.callbacks.get(conn.io_id).map(|(l, k)| (l.to_string(), k)) else {
            return InputOutcome::Ignored(IgnoreReason::UnknownConnection);
        };
        env.record_firing(self.module_id, conn_id, &label, &plain);
        let mut behavior = self.behavior.take().expect("behavior present outside execution");
        let outcome = {
            let mut ctx = ModuleContext {
                module: self,
                env,
                source: Some(conn_id),
            };
            match kind {
                IoKind::Handler => {
                    let reply = {
                        let _work = metrics::enter(Stage::Other);
                        behavior.on_request(&label, &plain, &mut ctx)
                    };
                    match seal_reply(conn.suite, &conn.key, nonce, &reply) {
                        Ok(sealed) => InputOutcome::Replied { conn_id, nonce, sealed },
                        Err(_) => InputOutcome::Fired { conn_id, nonce },
                    }
                }
                _ => {
                    let _work = metrics::enter(Stage::Other);
                    behavior.on_input(&label, &plain, &mut ctx);
                    InputOutcome::Fired { conn_id, nonce }
                }
            }
        };
        self.behavior = Some(behavior);
        outcome
    }

    /// Synchronous request on a request endpoint.
    pub fn request_sync(
        &mut self,
        io_id: u16,
        payload: &[u8],
        timeout: Duration,
        env: &mut dyn ModuleEnv,
    ) -> Result<Vec<u8>> {
        let conn_id = self
            .connections
            .for_io(io_id)
            .into_iter()
            .find(|id| self.connections.get(*id).map(|c| c.direction == IoKind::Request).unwrap_or(false))
            .ok_or_else(|| Error::new(ErrorKind::Unestablished, format!("no connection on io {io_id}")))?;
        let conn = self.connections.get_mut(conn_id).expect("found connection");
        if conn.nonce == NONCE_LIMIT {
            conn.dead = true;
            return Err(Error::new(ErrorKind::NonceExhausted, format!("conn {conn_id}")));
        }
        let nonce = conn.nonce;
        let sealed = seal_event(conn.suite, &conn.key, nonce, payload)?;
        conn.nonce += 1;
        let (suite, key) = (conn.suite, conn.key);
        let reply = env.request(self.module_id, conn_id, sealed, timeout)?;
        open_reply(suite, &key, nonce, &reply)
    }

    fn call_user_entry(&mut self, entry: u16, args: &[u8], env: &mut dyn ModuleEnv) -> Result<Vec<u8>> {
        let name = self
            .spec
            .entry_name(entry)
            .ok_or_else(|| Error::new(ErrorKind::UnknownEntry, format!("entry {entry}")))?;
        let mut behavior = self.behavior.take().expect("behavior present outside execution");
        let result = {
            let mut ctx = ModuleContext {
                module: self,
                env,
                source: None,
            };
            let _work = metrics::enter(Stage::Other);
            behavior.on_entry(name, args, &mut ctx)
        };
        self.behavior = Some(behavior);
        result
    }

    pub fn dispatch_entry(&mut self, entry: u16, args: &[u8], env: &mut dyn ModuleEnv) -> Result<Vec<u8>> {
        match entry {
            ENTRY_SET_KEY => self.set_key(args).map(|_| Vec::new()),
            ENTRY_ATTEST => {
                if challenge_too_short(args) {
                    return Err(Error::new(ErrorKind::ChallengeTooShort, format!("{} bytes", args.len())));
                }
                if let Some(quote) = env.quote(&self.identity, args) {
                    return Ok(quote);
                }
                Ok(self.attest(args)?.as_bytes().to_vec())
            }
            ENTRY_HANDLE_INPUT => {
                if args.len() < 2 {
                    return Ok(Vec::new());
                }
                let conn_id = u16::from_be_bytes([args[0], args[1]]);
                match self.handle_input(conn_id, &args[2..], env) {
                    InputOutcome::Replied { sealed, .. } => Ok(sealed),
                    _ => Ok(Vec::new()),
                }
            }
            _ => self.call_user_entry(entry, args, env),
        }
    }

    /// Privileged: installs a connection directly (driver modules).
    pub(crate) fn install_connection(&mut self, conn_id: u16, label: &str, key: Key128, suite: CipherSuite) -> Result<()> {
        let endpoint = self
            .package
            .endpoint(label)
            .ok_or_else(|| Error::new(ErrorKind::UnknownConnection, label.to_string()))?;
        if key.is_unset() {
            return Err(ErrorKind::InvalidKey.into());
        }
        self.connections
            .insert(Connection::new(conn_id, endpoint.io_id, endpoint.kind, key, suite));
        Ok(())
    }

    /// Remaining nonce budget of a connection, if present.
    pub fn nonce_of(&self, conn_id: u16) -> Option<u16> {
        self.connections.get(conn_id).map(|c| c.nonce)
    }
}

fn challenge_too_short(challenge: &[u8]) -> bool {
    challenge.len() < MIN_CHALLENGE_LEN
}

/// Behavior-facing view of a module during one invocation.
struct ModuleContext<'a> {
    module: &'a mut SecurityModule,
    env: &'a mut dyn ModuleEnv,
    source: Option<u16>,
}

impl Context for ModuleContext<'_> {
    fn output(&mut self, label: &str, payload: &[u8]) {
        let Some(endpoint) = self.module.package.endpoint(label) else {
            debug!("module {}: undeclared output {}", self.module.module_id, label);
            return;
        };
        if endpoint.kind != IoKind::Output {
            return;
        }
        let io_id = endpoint.io_id;
        for (conn_id, sealed) in self.module.handle_output(io_id, payload) {
            self.env.publish(self.module.module_id, conn_id, sealed);
        }
    }

    fn request(&mut self, label: &str, payload: &[u8]) -> Result<Vec<u8>> {
        let endpoint = self
            .module
            .package
            .endpoint(label)
            .filter(|e| e.kind == IoKind::Request)
            .ok_or_else(|| Error::new(ErrorKind::Unestablished, label.to_string()))?;
        let io_id = endpoint.io_id;
        self.module.request_sync(io_id, payload, DEFAULT_REQUEST_TIMEOUT, self.env)
    }

    fn caller(&self) -> u16 {
        self.env.caller()
    }

    fn module_id(&self) -> u16 {
        self.module.module_id
    }

    fn source_connection(&self) -> Option<u16> {
        self.source
    }

    fn call_module(&mut self, module_id: u16, entry: u16, args: &[u8]) -> Result<Vec<u8>> {
        self.env.call_module(self.module.module_id, module_id, entry, args)
    }

    fn fill_random(&mut self, buf: &mut [u8]) -> Result<()> {
        self.env.fill_random(buf)
    }

    fn mmio_read(&mut self, register: u16) -> Result<Vec<u8>> {
        self.env.mmio_read(self.module.module_id, register)
    }

    fn mmio_write(&mut self, register: u16, value: &[u8], attribution: &str) -> Result<()> {
        self.env.mmio_write(self.module.module_id, register, value, attribution)
    }

    fn install_connection(&mut self, conn_id: u16, label: &str, key: Key128, suite: CipherSuite) -> Result<()> {
        if !self.env.privileged() {
            return Err(Error::new(ErrorKind::Rejected, "install_connection"));
        }
        self.module.install_connection(conn_id, label, key, suite)
    }

    fn remove_connection(&mut self, conn_id: u16) -> Result<()> {
        if !self.env.privileged() {
            return Err(Error::new(ErrorKind::Rejected, "remove_connection"));
        }
        self.module
            .connections
            .remove(conn_id)
            .map(|_| ())
            .ok_or_else(|| Error::new(ErrorKind::UnknownConnection, format!("conn {conn_id}")))
    }

    fn open_with_module_key(&mut self, nonce: &AeadNonce, ct: &[u8], tag: &Tag128, aad: &[u8]) -> Result<Vec<u8>> {
        if !self.env.privileged() {
            return Err(Error::new(ErrorKind::Rejected, "open_with_module_key"));
        }
        Ok(aead_open(CipherSuite::AesGcm128, &self.module.module_key, nonce, ct, tag, aad)?)
    }
}

/// Environment with no node behind it: outputs are collected, requests fail.
#[derive(Debug, Default)]
pub struct DetachedEnv {
    pub caller: u16,
    pub published: Vec<(u16, u16, Vec<u8>)>,
    pub firings: Vec<(u16, u16, String, Vec<u8>)>,
}

impl ModuleEnv for DetachedEnv {
    fn caller(&self) -> u16 {
        self.caller
    }

    fn now_micros(&self) -> u64 {
        0
    }

    fn publish(&mut self, module_id: u16, conn_id: u16, sealed: Vec<u8>) {
        self.published.push((module_id, conn_id, sealed));
    }

    fn request(&mut self, _module_id: u16, conn_id: u16, _sealed: Vec<u8>, _timeout: Duration) -> Result<Vec<u8>> {
        Err(Error::new(ErrorKind::Timeout, format!("no route for conn {conn_id}")))
    }

    fn record_firing(&mut self, module_id: u16, conn_id: u16, label: &str, payload: &[u8]) {
        self.firings.push((module_id, conn_id, label.to_string(), payload.to_vec()));
    }
}
