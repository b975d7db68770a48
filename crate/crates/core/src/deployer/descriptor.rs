//! Deployment descriptor: `nodes`, `modules` and `connections`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::behavior::BehaviorRegistry;
use crate::crypto::CipherSuite;
use crate::error::{Error, ErrorKind, Result};
use crate::package::IoKind;
use crate::secure_io::INFRA_VENDOR;
use crate::tee::Flavor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDecl {
    pub name: String,
    #[serde(rename = "type")]
    pub flavor: Flavor,
    pub address: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleDecl {
    pub name: String,
    #[serde(rename = "type")]
    pub flavor: Flavor,
    pub node: String,
    pub behavior: String,
    pub vendor_id: u16,
    /// Hex-encoded initial state; the behavior default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ModuleDecl {
    pub fn init_bytes(&self) -> Result<Option<Vec<u8>>> {
        self.init
            .as_deref()
            .map(|h| hex::decode(h).map_err(|e| Error::new(ErrorKind::SchemaError, format!("{}.init: {e}", self.name))))
            .transpose()
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionDecl {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_module: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_request: Option<String>,
    /// `node.device` of an input driver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_driver: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_module: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_handler: Option<String>,
    /// `node.device` of an output driver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_driver: Option<String>,
    pub encryption: CipherSuite,
    #[serde(default, skip_serializing_if = "is_false")]
    pub direct: bool,
}

/// Resolved source of a connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Deployer,
    Module { module: String, label: String, kind: IoKind },
    Driver(String),
}

/// Resolved destination of a connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sink {
    Module { module: String, label: String, kind: IoKind },
    Driver(String),
}

impl ConnectionDecl {
    pub fn source(&self) -> Result<Source> {
        let err = |m: &str| Error::new(ErrorKind::SchemaError, format!("connections.{}: {m}", self.name));
        if self.direct {
            if self.from_module.is_some() || self.from_driver.is_some() {
                return Err(err("a direct connection has the deployer as source"));
            }
            return Ok(Source::Deployer);
        }
        match (&self.from_module, &self.from_output, &self.from_request, &self.from_driver) {
            (Some(m), Some(o), None, None) => Ok(Source::Module {
                module: m.clone(),
                label: o.clone(),
                kind: IoKind::Output,
            }),
            (Some(m), None, Some(r), None) => Ok(Source::Module {
                module: m.clone(),
                label: r.clone(),
                kind: IoKind::Request,
            }),
            (None, None, None, Some(d)) => Ok(Source::Driver(d.clone())),
            _ => Err(err("source must be from_module with one of from_output/from_request, or from_driver")),
        }
    }

    pub fn sink(&self) -> Result<Sink> {
        let err = |m: &str| Error::new(ErrorKind::SchemaError, format!("connections.{}: {m}", self.name));
        match (&self.to_module, &self.to_input, &self.to_handler, &self.to_driver) {
            (Some(m), Some(i), None, None) => Ok(Sink::Module {
                module: m.clone(),
                label: i.clone(),
                kind: IoKind::Input,
            }),
            (Some(m), None, Some(h), None) => Ok(Sink::Module {
                module: m.clone(),
                label: h.clone(),
                kind: IoKind::Handler,
            }),
            (None, None, None, Some(d)) => Ok(Sink::Driver(d.clone())),
            _ => Err(err("destination must be to_module with one of to_input/to_handler, or to_driver")),
        }
    }

    /// Whether the destination answers with a reply.
    pub fn is_request(&self) -> bool {
        self.to_handler.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentDescriptor {
    pub nodes: Vec<NodeDecl>,
    pub modules: Vec<ModuleDecl>,
    pub connections: Vec<ConnectionDecl>,
}

/// Splits `node.device`.
pub fn split_driver_ref(driver: &str) -> Option<(&str, &str)> {
    driver.split_once('.')
}

impl DeploymentDescriptor {
    /// Parses and validates; every violation is reported.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with(text, &BehaviorRegistry::builtin())
    }

    pub fn parse_with(text: &str, registry: &BehaviorRegistry) -> Result<Self> {
        let desc: DeploymentDescriptor = serde_json::from_str(text).map_err(|e| {
            Error::new(
                ErrorKind::SchemaError,
                format!("line {} column {}: {e}", e.line(), e.column()),
            )
        })?;
        let violations = desc.validate(registry);
        if violations.is_empty() {
            Ok(desc)
        } else {
            Err(Error::new(ErrorKind::SchemaError, violations.join("; ")))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("descriptor serializes")
    }

    pub fn node(&self, name: &str) -> Option<&NodeDecl> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn module(&self, name: &str) -> Option<&ModuleDecl> {
        self.modules.iter().find(|m| m.name == name)
    }

    pub fn connection(&self, name: &str) -> Option<&ConnectionDecl> {
        self.connections.iter().find(|c| c.name == name)
    }

    pub fn validate(&self, registry: &BehaviorRegistry) -> Vec<String> {
        let mut v = Vec::new();
        for (section, names) in [
            ("nodes", self.nodes.iter().map(|n| n.name.as_str()).collect::<Vec<_>>()),
            ("modules", self.modules.iter().map(|m| m.name.as_str()).collect()),
            ("connections", self.connections.iter().map(|c| c.name.as_str()).collect()),
        ] {
            let mut seen = BTreeSet::new();
            for (i, name) in names.iter().enumerate() {
                if name.is_empty() {
                    v.push(format!("{section}[{i}].name: empty"));
                } else if !seen.insert(*name) {
                    v.push(format!("{section}[{i}].name: duplicate '{name}'"));
                }
            }
        }
        for (i, m) in self.modules.iter().enumerate() {
            match self.node(&m.node) {
                None => v.push(format!("modules[{i}].node: unknown node '{}'", m.node)),
                Some(n) if n.flavor != m.flavor => v.push(format!(
                    "modules[{i}].type: '{}' but node '{}' is '{}'",
                    m.flavor, n.name, n.flavor
                )),
                _ => {}
            }
            if registry.get(&m.behavior).is_none() {
                v.push(format!("modules[{i}].behavior: unknown behavior '{}'", m.behavior));
            }
            if m.vendor_id == INFRA_VENDOR {
                v.push(format!("modules[{i}].vendor_id: {INFRA_VENDOR:#06x} is reserved"));
            }
            if m.name.contains('@') || m.name.contains('/') {
                v.push(format!("modules[{i}].name: '@' and '/' are reserved"));
            }
            if let Err(e) = m.init_bytes() {
                v.push(format!("modules[{i}].init: {}", e.detail));
            }
        }
        for (i, c) in self.connections.iter().enumerate() {
            let src = c.source();
            let dst = c.sink();
            if let Err(e) = &src {
                v.push(format!("connections[{i}]: {}", e.detail));
            }
            if let Err(e) = &dst {
                v.push(format!("connections[{i}]: {}", e.detail));
            }
            let (Ok(src), Ok(dst)) = (src, dst) else { continue };
            let mut check_module = |field: &str, module: &str, label: &str, kind: IoKind| {
                let Some(decl) = self.module(module) else {
                    v.push(format!("connections[{i}].{field}: unknown module '{module}'"));
                    return;
                };
                let Some(spec) = registry.get(&decl.behavior) else { return };
                if !spec.labels(kind).contains(&label) {
                    v.push(format!(
                        "connections[{i}].{field}: '{module}' has no {} '{label}'",
                        kind_name(kind)
                    ));
                }
            };
            if let Source::Module { module, label, kind } = &src {
                check_module("from_module", module, label, *kind);
            }
            if let Sink::Module { module, label, kind } = &dst {
                check_module("to_module", module, label, *kind);
            }
            for driver in [&src_driver(&src), &dst_driver(&dst)].into_iter().flatten() {
                match split_driver_ref(driver) {
                    Some((node, dev)) if !dev.is_empty() && self.node(node).is_some() => {}
                    _ => v.push(format!("connections[{i}]: bad driver reference '{driver}'")),
                }
            }
            let pairing_ok = matches!(
                (&src, &dst),
                (Source::Module { kind: IoKind::Output, .. }, Sink::Module { kind: IoKind::Input, .. })
                    | (Source::Module { kind: IoKind::Request, .. }, Sink::Module { kind: IoKind::Handler, .. })
                    | (Source::Module { kind: IoKind::Output, .. }, Sink::Driver(_))
                    | (Source::Driver(_), Sink::Module { kind: IoKind::Input, .. })
                    | (Source::Deployer, Sink::Module { .. })
            );
            if !pairing_ok {
                v.push(format!("connections[{i}]: incompatible endpoint kinds"));
            }
        }
        v
    }
}

fn src_driver(s: &Source) -> Option<String> {
    match s {
        Source::Driver(d) => Some(d.clone()),
        _ => None,
    }
}

fn dst_driver(s: &Sink) -> Option<String> {
    match s {
        Sink::Driver(d) => Some(d.clone()),
        _ => None,
    }
}

fn kind_name(kind: IoKind) -> &'static str {
    match kind {
        IoKind::Input => "input",
        IoKind::Output => "output",
        IoKind::Request => "request",
        IoKind::Handler => "handler",
    }
}
