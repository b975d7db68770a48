//! Attestation manager: attests modules on the deployer's behalf and keeps
//! their keys; the deployer refers to keys through handles.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::behavior::{BehaviorRegistry, ENTRY_ATTEST};
use crate::crypto::{mac_tag, CipherSuite, Key128, SecureRng, Tag128};
use crate::error::{Error, ErrorKind, Result};
use crate::manager::{parse_load_ack, Frame, Transport};
use crate::package::{identity_of, Identity};
use crate::runtime::{seal_set_key, MIN_CHALLENGE_LEN};
use crate::tee::{derive_module_key, Flavor};

use super::state::Credentials;

pub const DEPLOYER_ADDRESS: &str = "deployer";

/// What has to be known to attest one module.
#[derive(Debug, Clone)]
pub struct AttestTarget<'a> {
    pub module: &'a str,
    pub node: &'a str,
    pub address: &'a str,
    pub flavor: Flavor,
    pub module_id: u16,
    pub vendor_id: u16,
    pub identity: Identity,
}

/// Challenge-response against a loaded module; returns the module key.
pub fn attest_module(
    transport: &dyn Transport,
    creds: &Credentials,
    target: &AttestTarget<'_>,
    rng: &mut SecureRng,
    timeout: Duration,
) -> Result<Key128> {
    let fail = |why: String| Error::new(ErrorKind::AttestationFailed, format!("{}: {why}", target.module));
    let challenge = rng.random_bytes(MIN_CHALLENGE_LEN);
    let frame = Frame::call_entry(target.module_id, ENTRY_ATTEST, &challenge);
    let evidence = transport
        .call(DEPLOYER_ADDRESS, target.address, frame, timeout)?
        .into_result()
        .map_err(|e| fail(e.to_string()))?;
    match target.flavor {
        Flavor::Sancus | Flavor::TrustZone => {
            let vendor_key = creds
                .vendor_key(target.node, target.vendor_id)
                .ok_or_else(|| fail(format!("no vendor key for {} on {}", target.vendor_id, target.node)))?;
            let key = derive_module_key(&vendor_key, &target.identity);
            let expected = mac_tag(&key, &challenge)?;
            let got = Tag128::from_slice(&evidence).map_err(|_| fail("evidence is not a tag".into()))?;
            if got != expected {
                return Err(fail("MAC mismatch".into()));
            }
            Ok(key)
        }
        Flavor::SgxSim => creds
            .verifier()
            .verify(target.node, &evidence, &target.identity, &challenge)
            .map_err(|e| fail(e.detail)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KeyHandle {
    pub id: u32,
    pub epoch: u32,
}

#[derive(Debug, Clone)]
struct StoredKey {
    module: String,
    identity: Identity,
    key: Key128,
}

/// Host side of the attestation-manager enclave.
pub struct AttestationManager {
    node: String,
    address: String,
    module_id: u16,
    session_key: Key128,
    epoch: u32,
    creds: Credentials,
    keys: BTreeMap<u32, StoredKey>,
    next_handle: u32,
    transport: Arc<dyn Transport>,
    timeout: Duration,
}

impl std::fmt::Debug for AttestationManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AttestationManager")
            .field("node", &self.node)
            .field("module_id", &self.module_id)
            .field("epoch", &self.epoch)
            .field("keys", &self.keys.len())
            .finish_non_exhaustive()
    }
}

impl AttestationManager {
    /// Loads the manager enclave on an sgx-sim node and attests it; only
    /// then are the credentials handed over.
    pub fn launch(
        transport: Arc<dyn Transport>,
        node: &str,
        address: &str,
        vendor_id: u16,
        creds: Credentials,
        rng: &mut SecureRng,
        timeout: Duration,
    ) -> Result<Self> {
        let package = BehaviorRegistry::builtin()
            .get("attman")
            .expect("attman behavior is builtin")
            .package("attman", vendor_id, None)
            .encode();
        let ack = transport
            .call(DEPLOYER_ADDRESS, address, Frame::load_module(&package), timeout)?
            .into_result()?;
        let (module_id, _) = parse_load_ack(&ack)?;
        let target = AttestTarget {
            module: "attman",
            node,
            address,
            flavor: Flavor::SgxSim,
            module_id,
            vendor_id,
            identity: identity_of(&package),
        };
        let session_key = attest_module(transport.as_ref(), &creds, &target, rng, timeout)?;
        Ok(AttestationManager {
            node: node.to_string(),
            address: address.to_string(),
            module_id,
            session_key,
            epoch: 0,
            creds,
            keys: BTreeMap::new(),
            next_handle: 1,
            transport,
            timeout,
        })
    }

    pub fn module_id(&self) -> u16 {
        self.module_id
    }

    pub fn address(&self) -> &str {
        &self.address
    }

    pub fn session_fingerprint(&self) -> String {
        crate::runtime::key_fingerprint(&self.session_key)
    }

    pub fn attest(&mut self, target: &AttestTarget<'_>, rng: &mut SecureRng) -> Result<KeyHandle> {
        let key = attest_module(self.transport.as_ref(), &self.creds, target, rng, self.timeout)?;
        let id = self.next_handle;
        self.next_handle += 1;
        self.keys.insert(
            id,
            StoredKey {
                module: target.module.to_string(),
                identity: target.identity,
                key,
            },
        );
        Ok(KeyHandle { id, epoch: self.epoch })
    }

    fn stored(&self, handle: KeyHandle, module: &str, identity: &Identity) -> Result<&StoredKey> {
        if handle.epoch != self.epoch {
            return Err(Error::new(ErrorKind::UnknownModule, "handle predates manager restart"));
        }
        let stored = self
            .keys
            .get(&handle.id)
            .ok_or_else(|| Error::new(ErrorKind::UnknownModule, format!("handle {}", handle.id)))?;
        if stored.module != module || &stored.identity != identity {
            return Err(Error::new(
                ErrorKind::KeyMismatch,
                format!("handle {} belongs to {}", handle.id, stored.module),
            ));
        }
        Ok(stored)
    }

    /// Indirect key use: SetKey body sealed inside the manager.
    #[allow(clippy::too_many_arguments)]
    pub fn seal_set_key(
        &self,
        handle: KeyHandle,
        module: &str,
        identity: &Identity,
        conn_id: u16,
        io_id: u16,
        seq: u16,
        conn_key: &Key128,
        suite: CipherSuite,
    ) -> Result<Vec<u8>> {
        let stored = self.stored(handle, module, identity)?;
        seal_set_key(&stored.key, conn_id, io_id, seq, conn_key, suite)
    }

    /// Direct key use.
    pub fn fetch(&self, handle: KeyHandle, module: &str, identity: &Identity) -> Result<Key128> {
        Ok(self.stored(handle, module, identity)?.key)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Enclave memory is volatile: every handle becomes invalid.
    pub fn restart(&mut self) {
        self.keys.clear();
        self.epoch += 1;
    }
}
