//! Module package: the byte image a deployer ships to a node.
//!
//! Layout, all integers big-endian:
//! `name_len(1) ‖ name ‖ vendor_id(2) ‖ n_inputs(1) ‖ n_outputs(1) ‖
//! n_requests(1) ‖ n_handlers(1) ‖ records ‖ init_len(2) ‖ init`,
//! where every record is `io_id(2) ‖ label_len(1) ‖ label`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::crypto::{sha256, HASH_LEN};
use crate::error::{Error, ErrorKind, Result};

pub type Identity = [u8; HASH_LEN];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IoKind {
    Input,
    Output,
    Request,
    Handler,
}

impl IoKind {
    pub const ALL: [IoKind; 4] = [IoKind::Input, IoKind::Output, IoKind::Request, IoKind::Handler];

    /// Kinds whose events arrive at the module through HandleInput.
    pub fn is_receiving(self) -> bool {
        matches!(self, IoKind::Input | IoKind::Handler)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub io_id: u16,
    pub label: String,
    pub kind: IoKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModulePackage {
    pub name: String,
    pub vendor_id: u16,
    pub endpoints: Vec<Endpoint>,
    pub init: Vec<u8>,
}

impl ModulePackage {
    /// Builds a package with io ids assigned from 0 in the order inputs,
    /// outputs, requests, handlers.
    pub fn new(
        name: &str,
        vendor_id: u16,
        labels: [&[&str]; 4],
        init: Vec<u8>,
    ) -> ModulePackage {
        let mut endpoints = Vec::new();
        let mut next = 0u16;
        for (kind, group) in IoKind::ALL.iter().zip(labels.iter()) {
            for label in group.iter() {
                endpoints.push(Endpoint {
                    io_id: next,
                    label: (*label).to_string(),
                    kind: *kind,
                });
                next += 1;
            }
        }
        ModulePackage {
            name: name.to_string(),
            vendor_id,
            endpoints,
            init,
        }
    }

    pub fn endpoints_of(&self, kind: IoKind) -> impl Iterator<Item = &Endpoint> {
        self.endpoints.iter().filter(move |e| e.kind == kind)
    }

    pub fn endpoint(&self, label: &str) -> Option<&Endpoint> {
        self.endpoints.iter().find(|e| e.label == label)
    }

    pub fn endpoint_by_id(&self, io_id: u16) -> Option<&Endpoint> {
        self.endpoints.iter().find(|e| e.io_id == io_id)
    }

    /// Rejects repeated io ids.
    pub fn check_io_ids(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.endpoints {
            if !seen.insert(e.io_id) {
                return Err(Error::new(
                    ErrorKind::DuplicateIoId,
                    format!("io id {} declared twice in {}", e.io_id, self.name),
                ));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_str8(&mut out, &self.name);
        out.extend_from_slice(&self.vendor_id.to_be_bytes());
        for kind in IoKind::ALL {
            out.push(self.endpoints_of(kind).count() as u8);
        }
        for kind in IoKind::ALL {
            for e in self.endpoints_of(kind) {
                out.extend_from_slice(&e.io_id.to_be_bytes());
                put_str8(&mut out, &e.label);
            }
        }
        out.extend_from_slice(&(self.init.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.init);
        out
    }

    /// Strict parse: truncation, trailing bytes, invalid UTF-8 and duplicate
    /// io ids are all rejected.
    pub fn parse(bytes: &[u8]) -> Result<ModulePackage> {
        let mut r = Reader::new(bytes);
        let name = r.str8()?;
        let vendor_id = r.u16()?;
        let mut counts = [0usize; 4];
        for c in counts.iter_mut() {
            *c = r.u8()? as usize;
        }
        let mut endpoints = Vec::new();
        for (kind, count) in IoKind::ALL.iter().zip(counts) {
            for _ in 0..count {
                let io_id = r.u16()?;
                let label = r.str8()?;
                endpoints.push(Endpoint {
                    io_id,
                    label,
                    kind: *kind,
                });
            }
        }
        let init_len = r.u16()? as usize;
        let init = r.take(init_len)?.to_vec();
        if !r.is_empty() {
            return Err(malformed("trailing bytes after init section"));
        }
        let package = ModulePackage {
            name,
            vendor_id,
            endpoints,
            init,
        };
        package
            .check_io_ids()
            .map_err(|e| Error::new(ErrorKind::MalformedPackage, e.detail))?;
        Ok(package)
    }

    pub fn identity(&self) -> Identity {
        sha256(&self.encode())
    }
}

/// SHA-256 over the exact package bytes.
pub fn identity_of(bytes: &[u8]) -> Identity {
    sha256(bytes)
}

fn put_str8(out: &mut Vec<u8>, s: &str) {
    let bytes = s.as_bytes();
    let len = bytes.len().min(u8::MAX as usize);
    out.push(len as u8);
    out.extend_from_slice(&bytes[..len]);
}

fn malformed(detail: &str) -> Error {
    Error::new(ErrorKind::MalformedPackage, detail)
}

/// Big-endian cursor used by the package and wire parsers.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    kind: ErrorKind,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader {
            buf,
            pos: 0,
            kind: ErrorKind::MalformedPackage,
        }
    }

    pub(crate) fn with_kind(buf: &'a [u8], kind: ErrorKind) -> Self {
        Reader { buf, pos: 0, kind }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::new(
                self.kind,
                format!("truncated at offset {} (need {} bytes)", self.pos, n),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub(crate) fn str8(&mut self) -> Result<String> {
        let len = self.u8()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::new(self.kind, "label is not UTF-8"))
    }

    pub(crate) fn rest(&mut self) -> &'a [u8] {
        let out = &self.buf[self.pos..];
        self.pos = self.buf.len();
        out
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }
}
