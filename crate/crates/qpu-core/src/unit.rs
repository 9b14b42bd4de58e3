//! The unit contract: every query processing unit is an isolated event
//! handler that reacts to query invocations and stream records.
//!
//! Handlers never touch the runtime directly. They receive a [`Ctx`] that
//! buffers effects (emissions, downstream opens, closes); the runtime
//! applies them after the handler returns. That keeps each unit a pure
//! function of (state, event) and makes the whole system single-threaded
//! and deterministic under the event scheduler.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::query::{Capability, Query};
use crate::record::{StreamRecord, Tuple};
use crate::simnet::SimTime;

/// Unique unit identifier within one topology.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitId(pub String);

impl UnitId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for UnitId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for UnitId {
    fn from(s: &str) -> Self {
        UnitId(s.to_string())
    }
}

/// Client endpoint identifier (query issuers and advertisers).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClientId(pub u32);

impl std::fmt::Display for ClientId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "client-{}", self.0)
    }
}

/// Anything that can sit at either end of a stream.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Endpoint {
    Store,
    Unit(UnitId),
    Client(ClientId),
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Store => f.write_str("store"),
            Endpoint::Unit(id) => write!(f, "{id}"),
            Endpoint::Client(id) => write!(f, "{id}"),
        }
    }
}

/// Deployed-unit reference: identity, placement, and what it can answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QpuRef {
    pub id: UnitId,
    pub site: String,
    pub capability: Capability,
}

/// Stream identifier; minted by the runtime in scheduling order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StreamId(pub u64);

impl std::fmt::Display for StreamId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Stream end state. `SnapshotDone` means the end-of-snapshot marker has
/// passed this end; only deltas may follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandleState {
    Open,
    SnapshotDone,
    Closed,
}

/// A declared child edge as seen by a parent unit.
#[derive(Debug, Clone)]
pub struct ChildRef {
    pub id: UnitId,
    pub capability: Capability,
}

/// Buffered effect emitted by a handler; applied in order by the runtime.
#[derive(Debug, Clone)]
pub enum Effect {
    Emit {
        stream: StreamId,
        record: StreamRecord,
    },
    OpenChild {
        child: UnitId,
        query: Query,
        stream: StreamId,
    },
    /// Open a raw table feed from the storage tier (drivers only).
    OpenStore {
        table: String,
        live: bool,
        stream: StreamId,
    },
    Close {
        stream: StreamId,
    },
}

/// Handler context: read-only view of the unit's surroundings plus the
/// effect buffer. Stream ids for opens are minted eagerly so handlers can
/// record them in their own state before returning.
pub struct Ctx<'a> {
    now: SimTime,
    unit: &'a UnitId,
    children: &'a [ChildRef],
    next_stream: u64,
    effects: Vec<Effect>,
}

impl<'a> Ctx<'a> {
    pub(crate) fn new(
        now: SimTime,
        unit: &'a UnitId,
        children: &'a [ChildRef],
        next_stream: u64,
    ) -> Self {
        Ctx {
            now,
            unit,
            children,
            next_stream,
            effects: Vec::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn unit_id(&self) -> &UnitId {
        self.unit
    }

    pub fn children(&self) -> &[ChildRef] {
        self.children
    }

    pub fn child(&self, index: usize) -> Option<&ChildRef> {
        self.children.get(index)
    }

    pub fn emit(&mut self, stream: StreamId, record: StreamRecord) {
        self.effects.push(Effect::Emit { stream, record });
    }

    /// Open a downstream query to a declared child. The runtime rejects
    /// targets outside the declared child set.
    pub fn open_child(&mut self, child: &UnitId, query: Query) -> StreamId {
        let stream = self.mint();
        self.effects.push(Effect::OpenChild {
            child: child.clone(),
            query,
            stream,
        });
        stream
    }

    /// Open a table feed from the storage tier. `live` keeps the feed
    /// subscribed after the snapshot; otherwise it closes at end-of-snapshot.
    pub fn open_store(&mut self, table: &str, live: bool) -> StreamId {
        let stream = self.mint();
        self.effects.push(Effect::OpenStore {
            table: table.into(),
            live,
            stream,
        });
        stream
    }

    pub fn close(&mut self, stream: StreamId) {
        self.effects.push(Effect::Close { stream });
    }

    fn mint(&mut self) -> StreamId {
        let id = StreamId(self.next_stream);
        self.next_stream += 1;
        id
    }

    pub(crate) fn finish(self) -> (Vec<Effect>, u64) {
        (self.effects, self.next_stream)
    }
}

/// Read-only view of a unit's internal state, for convergence checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateView {
    Stateless,
    /// tag -> keys, plus key -> full tuple.
    Index {
        by_tag: BTreeMap<String, BTreeSet<String>>,
        rows: BTreeMap<String, Tuple>,
    },
    Join {
        left: BTreeMap<String, Tuple>,
        right: BTreeMap<String, Tuple>,
        output: BTreeMap<String, Tuple>,
    },
    /// tag -> full descending (price, key) order, plus row lookup.
    TopK {
        k: u32,
        per_tag: BTreeMap<String, Vec<(i64, String)>>,
        rows: BTreeMap<String, Tuple>,
    },
    Cache {
        entries: u64,
        hits: u64,
        misses: u64,
    },
}

/// The behavior contract implemented by every unit class.
///
/// The runtime delivers at most one event at a time per unit; handlers may
/// only read and write their own state and buffer effects on the context.
pub trait UnitBehavior {
    fn class_name(&self) -> &'static str;

    /// Invoked once right after deployment; stateful classes open their
    /// build-time downstream subscriptions here.
    fn on_deploy(&mut self, _ctx: &mut Ctx) {}

    /// A query arrived on the unit's query API; `response` is the stream
    /// back to the caller.
    fn on_query(&mut self, query: Query, response: StreamId, ctx: &mut Ctx);

    /// A record arrived on a stream this unit consumes.
    fn on_record(&mut self, stream: StreamId, record: StreamRecord, ctx: &mut Ctx);

    /// A stream this unit touches (either end) reached the closed state.
    fn on_closed(&mut self, _stream: StreamId, _ctx: &mut Ctx) {}

    /// False while a stateful unit is still building its initial state.
    fn is_built(&self) -> bool {
        true
    }

    fn state_view(&self) -> StateView {
        StateView::Stateless
    }
}
