//! Stream records: the unit of data flowing up response streams.
//!
//! Every stream carries the same record grammar: zero or more `Snapshot`
//! records, exactly one `EndOfSnapshot` marker, then zero or more delta
//! records. `Error` records are in-band failures and may appear at any
//! point before the stream closes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::simnet::SimTime;

/// Fixed per-record framing overhead used for byte metering.
pub const RECORD_OVERHEAD_BYTES: u64 = 24;

/// Size charged for control messages (query open, stream close).
pub const CONTROL_MESSAGE_BYTES: u64 = 32;

/// Commit timestamp assigned by the storage tier per committed write.
///
/// `value` is strictly increasing per store instance; `wall` is the virtual
/// clock time of the commit and is non-decreasing in `value`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LogicalTimestamp {
    pub value: u64,
    pub origin_site: String,
    pub wall: SimTime,
}

impl LogicalTimestamp {
    pub fn new(value: u64, origin_site: impl Into<String>, wall: SimTime) -> Self {
        Self {
            value,
            origin_site: origin_site.into(),
            wall,
        }
    }

    /// Timestamp for rows that predate any committed write (initial state).
    pub fn zero() -> Self {
        Self {
            value: 0,
            origin_site: String::new(),
            wall: SimTime::ZERO,
        }
    }
}

/// A single attribute value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeValue {
    Str(String),
    Int(i64),
    /// Price in integer cents.
    Price(i64),
    /// Tag set; `BTreeSet` keeps it duplicate-free and ordered.
    Tags(BTreeSet<String>),
}

impl AttributeValue {
    /// Numeric view for comparisons; `Int` and `Price` compare interchangeably.
    fn as_num(&self) -> Option<i64> {
        match self {
            AttributeValue::Int(v) | AttributeValue::Price(v) => Some(*v),
            _ => None,
        }
    }

    /// Total-order comparison where both sides are comparable kinds.
    /// Mismatched kinds yield `None` (predicates treat that as no-match).
    pub fn compare(&self, other: &AttributeValue) -> Option<std::cmp::Ordering> {
        match (self, other) {
            (AttributeValue::Str(a), AttributeValue::Str(b)) => Some(a.cmp(b)),
            (a, b) => match (a.as_num(), b.as_num()) {
                (Some(x), Some(y)) => Some(x.cmp(&y)),
                _ => None,
            },
        }
    }

    /// Metered size: 8 bytes per integer/price, string length in bytes,
    /// sum of tag lengths for tag sets.
    pub fn wire_size(&self) -> u64 {
        match self {
            AttributeValue::Str(s) => s.len() as u64,
            AttributeValue::Int(_) | AttributeValue::Price(_) => 8,
            AttributeValue::Tags(tags) => tags.iter().map(|t| t.len() as u64).sum(),
        }
    }
}

/// A keyed row flowing through streams.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tuple {
    pub key: String,
    pub attributes: BTreeMap<String, AttributeValue>,
    /// Timestamp of the newest base write this tuple reflects.
    pub ts: LogicalTimestamp,
}

impl Tuple {
    pub fn new(key: impl Into<String>, ts: LogicalTimestamp) -> Self {
        Self {
            key: key.into(),
            attributes: BTreeMap::new(),
            ts,
        }
    }

    pub fn with_attr(mut self, name: impl Into<String>, value: AttributeValue) -> Self {
        self.attributes.insert(name.into(), value);
        self
    }

    pub fn tags(&self) -> Option<&BTreeSet<String>> {
        match self.attributes.get("tags") {
            Some(AttributeValue::Tags(t)) => Some(t),
            _ => None,
        }
    }

    pub fn price(&self) -> Option<i64> {
        match self.attributes.get("price") {
            Some(AttributeValue::Price(p)) | Some(AttributeValue::Int(p)) => Some(*p),
            _ => None,
        }
    }

    /// Keep only the listed attributes (the key always survives projection).
    pub fn project(&self, names: &[String]) -> Tuple {
        let mut out = Tuple::new(self.key.clone(), self.ts.clone());
        for name in names {
            if let Some(v) = self.attributes.get(name) {
                out.attributes.insert(name.clone(), v.clone());
            }
        }
        out
    }

    pub fn wire_size(&self) -> u64 {
        self.key.len() as u64 + self.attributes.values().map(|v| v.wire_size()).sum::<u64>()
    }
}

/// Error codes carried by in-band `Error` stream records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StreamErrorCode {
    CapabilityMismatch,
    UnknownTable,
    ConfigError,
    Internal,
}

impl std::fmt::Display for StreamErrorCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StreamErrorCode::CapabilityMismatch => "CAPABILITY_MISMATCH",
            StreamErrorCode::UnknownTable => "UNKNOWN_TABLE",
            StreamErrorCode::ConfigError => "CONFIG_ERROR",
            StreamErrorCode::Internal => "INTERNAL",
        };
        f.write_str(s)
    }
}

/// One record on a stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StreamRecord {
    /// Part of the initial result set.
    Snapshot(Tuple),
    /// Marks the end of the snapshot phase.
    EndOfSnapshot,
    /// Incremental upsert; `origin` is the base write that caused it.
    DeltaUpsert {
        tuple: Tuple,
        origin: LogicalTimestamp,
    },
    /// Incremental delete; carries the key and timestamps only.
    DeltaDelete {
        key: String,
        ts: LogicalTimestamp,
        origin: LogicalTimestamp,
    },
    /// In-band failure; closes the stream after delivery.
    Error {
        code: StreamErrorCode,
        detail: String,
    },
}

impl StreamRecord {
    pub fn is_delta(&self) -> bool {
        matches!(
            self,
            StreamRecord::DeltaUpsert { .. } | StreamRecord::DeltaDelete { .. }
        )
    }

    /// The base write that caused this record, where applicable.
    pub fn origin(&self) -> Option<&LogicalTimestamp> {
        match self {
            StreamRecord::DeltaUpsert { origin, .. } | StreamRecord::DeltaDelete { origin, .. } => {
                Some(origin)
            }
            _ => None,
        }
    }

    /// Deterministic serialized size used for byte metering.
    pub fn wire_size(&self) -> u64 {
        match self {
            StreamRecord::Snapshot(t) => RECORD_OVERHEAD_BYTES + t.wire_size(),
            StreamRecord::EndOfSnapshot => RECORD_OVERHEAD_BYTES,
            StreamRecord::DeltaUpsert { tuple, .. } => RECORD_OVERHEAD_BYTES + tuple.wire_size(),
            StreamRecord::DeltaDelete { key, .. } => RECORD_OVERHEAD_BYTES + key.len() as u64,
            StreamRecord::Error { detail, .. } => RECORD_OVERHEAD_BYTES + detail.len() as u64,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            StreamRecord::Snapshot(_) => "SNAPSHOT",
            StreamRecord::EndOfSnapshot => "END_OF_SNAPSHOT",
            StreamRecord::DeltaUpsert { .. } => "DELTA_UPSERT",
            StreamRecord::DeltaDelete { .. } => "DELTA_DELETE",
            StreamRecord::Error { .. } => "ERROR",
        }
    }
}
