//! Timestamped record of one run: inputs, frames, firings, actuations.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    /// Physical input sensed on an input device.
    Input {
        ts: u64,
        node: String,
        device: String,
        value: Vec<u8>,
    },
    /// Event sent by the deployer on a direct connection.
    Direct {
        ts: u64,
        connection: String,
        payload: Vec<u8>,
    },
    Frame {
        ts: u64,
        from: String,
        to: String,
        opcode: u8,
        len: usize,
        hash: String,
        action: String,
    },
    /// An input accepted by a module after authentication.
    Firing {
        ts: u64,
        node: String,
        module: u16,
        conn: u16,
        label: String,
        payload: Vec<u8>,
    },
    /// A write observed on an output device.
    Actuation {
        ts: u64,
        node: String,
        device: String,
        value: Vec<u8>,
        attribution: String,
    },
}

impl TraceRecord {
    pub fn ts(&self) -> u64 {
        match self {
            TraceRecord::Input { ts, .. }
            | TraceRecord::Direct { ts, .. }
            | TraceRecord::Frame { ts, .. }
            | TraceRecord::Firing { ts, .. }
            | TraceRecord::Actuation { ts, .. } => *ts,
        }
    }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceRecord::Input { ts, node, device, value } => {
                write!(f, "{ts} input {node}.{device} {}", hex::encode(value))
            }
            TraceRecord::Direct { ts, connection, payload } => {
                write!(f, "{ts} direct {connection} {}", hex::encode(payload))
            }
            TraceRecord::Frame {
                ts,
                from,
                to,
                opcode,
                len,
                hash,
                action,
            } => write!(f, "{ts} frame {from}->{to} op={opcode} len={len} {hash} {action}"),
            TraceRecord::Firing {
                ts,
                node,
                module,
                conn,
                label,
                payload,
            } => write!(f, "{ts} fire {node}:{module} conn={conn} {label} {}", hex::encode(payload)),
            TraceRecord::Actuation {
                ts,
                node,
                device,
                value,
                attribution,
            } => write!(f, "{ts} actuate {node}.{device} {} [{attribution}]", hex::encode(value)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalTrace {
    records: Vec<TraceRecord>,
}

impl CausalTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn actuations(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| matches!(r, TraceRecord::Actuation { .. }))
    }

    pub fn firings(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| matches!(r, TraceRecord::Firing { .. }))
    }

    pub fn frames(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| matches!(r, TraceRecord::Frame { .. }))
    }

    /// One line per record.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn export_is_line_per_record() {
        let mut t = CausalTrace::new();
        t.push(TraceRecord::Input {
            ts: 5,
            node: "n".into(),
            device: "d".into(),
            value: vec![1],
        });
        t.push(TraceRecord::Actuation {
            ts: 9,
            node: "n".into(),
            device: "led".into(),
            value: vec![0, 1],
            attribution: "conn=1 key=ab".into(),
        });
        assert_eq!(t.export(), "5 input n.d 01\n9 actuate n.led 0001 [conn=1 key=ab]\n");
        assert_eq!(t.actuations().count(), 1);
        let back: CausalTrace = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(back, t);
    }
}
