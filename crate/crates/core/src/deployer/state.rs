//! Persistent deployer state and credentials.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crypto::{sha256, CipherSuite, Key128};
use crate::error::{Error, ErrorKind, Result};
use crate::tee::{derive_vendor_key, Flavor, NodeConfig, VerificationService};

use super::attman::KeyHandle;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleState {
    pub node: String,
    pub module_id: u16,
    /// Hex SHA-256 of the package bytes the deployer built.
    pub identity: String,
    /// Instance tag inside the package name; changes on every update.
    pub instance: String,
    #[serde(default)]
    pub generation: u32,
    #[serde(default)]
    pub attested: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub module_key: Option<Key128>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_handle: Option<KeyHandle>,
    #[serde(default)]
    pub setkey_seq: u16,
}

impl ModuleState {
    pub fn identity_bytes(&self) -> Result<[u8; 32]> {
        hex::decode(&self.identity)
            .ok()
            .and_then(|v| v.try_into().ok())
            .ok_or_else(|| Error::new(ErrorKind::Config, "identity in state is not 32 hex bytes"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionState {
    pub conn_id: u16,
    pub key: Key128,
    pub suite: CipherSuite,
    #[serde(default)]
    pub established: bool,
    #[serde(default)]
    pub direct: bool,
    /// Next event nonce of a direct connection (deployer is the source).
    #[serde(default)]
    pub nonce: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver: Option<String>,
}

/// Everything the deployer learned while deploying, persisted as JSON.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentState {
    pub deployer_id: String,
    pub next_conn_id: u16,
    pub modules: BTreeMap<String, ModuleState>,
    pub connections: BTreeMap<String, ConnectionState>,
    /// Digest of every connection key ever issued.
    #[serde(default)]
    pub issued_keys: BTreeSet<String>,
    #[serde(default)]
    pub transcript: Vec<String>,
}

pub fn key_digest(key: &Key128) -> String {
    hex::encode(sha256(key.as_bytes()))
}

impl DeploymentState {
    pub fn new(deployer_id: &str) -> Self {
        DeploymentState {
            deployer_id: deployer_id.to_string(),
            ..Default::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::new(ErrorKind::Config, format!("{}: {e}", path.display())))
    }

    pub fn load_or_new(path: &Path, deployer_id: &str) -> Result<Self> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new(deployer_id))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(self).expect("state serializes"))?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn allocate_conn_id(&mut self) -> Result<u16> {
        let id = self.next_conn_id;
        self.next_conn_id = id
            .checked_add(1)
            .ok_or_else(|| Error::new(ErrorKind::CapacityExceeded, "connection ids exhausted"))?;
        Ok(id)
    }
}

/// Key material the deployer is entitled to: vendor keys of its own
/// vendor ids and the sgx verifier's platform roots.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credentials {
    #[serde(default)]
    pub vendor_keys: BTreeMap<String, BTreeMap<u16, Key128>>,
    #[serde(default)]
    pub sgx_roots: BTreeMap<String, Key128>,
}

impl Credentials {
    /// What an infrastructure provider hands out for the given vendors.
    pub fn issue(configs: &[NodeConfig], vendor_ids: &[u16]) -> Self {
        let mut creds = Credentials::default();
        for cfg in configs {
            if cfg.flavor == Flavor::SgxSim {
                creds.sgx_roots.insert(cfg.node_id.clone(), cfg.root_key);
            } else {
                let keys = creds.vendor_keys.entry(cfg.node_id.clone()).or_default();
                for v in vendor_ids.iter().filter(|v| cfg.vendors.contains(v)) {
                    keys.insert(*v, derive_vendor_key(&cfg.root_key, *v));
                }
            }
        }
        creds
    }

    pub fn vendor_key(&self, node: &str, vendor_id: u16) -> Option<Key128> {
        self.vendor_keys.get(node).and_then(|m| m.get(&vendor_id)).copied()
    }

    pub fn verifier(&self) -> VerificationService {
        let mut vs = VerificationService::new();
        for (node, root) in &self.sgx_roots {
            vs.register(node, *root);
        }
        vs
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::new(ErrorKind::Config, format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("credentials serialize")
    }
}
