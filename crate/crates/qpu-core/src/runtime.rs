//! The single-threaded event runtime.
//!
//! One [`Sim`] owns the virtual clock, the network model, the storage
//! tier, every deployed unit, and every stream. All interaction is message
//! passing: handlers buffer effects, the runtime turns them into scheduled
//! deliveries, and events execute strictly in `(due, seq)` order. Given
//! the same inputs, two runs produce identical event traces.

use std::collections::BTreeMap;

use crate::query::{match_capability, Query, QueryMode};
use crate::record::{LogicalTimestamp, StreamErrorCode, StreamRecord, CONTROL_MESSAGE_BYTES};
use crate::simnet::{EventQueue, Meter, NetworkModel, SimTime};
use crate::storage::{StorageError, Store, WriteKind, WriteOp, WriteRequest};
use crate::unit::{
    ChildRef, ClientId, Ctx, Effect, Endpoint, HandleState, QpuRef, StateView, StreamId,
    UnitBehavior, UnitId,
};

/// Hard runtime failures. In-band data-path failures travel as `Error`
/// stream records instead.
#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("target unit not deployed: {0}")]
    TargetDown(UnitId),
    #[error("clients may only query root units: {0}")]
    NotARoot(UnitId),
    #[error("capability mismatch: {reason}")]
    CapabilityMismatch { reason: String },
    #[error("unit {unit} opened a downstream query to undeclared child {child}")]
    ChildNotDeclared { unit: UnitId, child: String },
    #[error("emit on closed stream {0}")]
    StreamClosed(StreamId),
    #[error("protocol violation on stream {stream}: {detail}")]
    ProtocolViolation { stream: StreamId, detail: String },
    #[error("unknown stream {0}")]
    UnknownStream(StreamId),
    #[error("unknown client {0}")]
    UnknownClient(ClientId),
    #[error("duplicate unit id {0}")]
    DuplicateUnit(UnitId),
    #[error("unknown site {0}")]
    UnknownSite(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Debug, Clone)]
enum Action {
    IssueQuery {
        client: ClientId,
        target: UnitId,
        query: Query,
    },
    IssueWrite {
        client: ClientId,
        request: WriteRequest,
    },
    DeliverOpen {
        stream: StreamId,
    },
    DeliverStoreOpen {
        stream: StreamId,
    },
    DeliverRecord {
        stream: StreamId,
        record: StreamRecord,
    },
    DeliverClose {
        stream: StreamId,
        to_upstream: bool,
    },
    DeliverWrite {
        request: WriteRequest,
    },
    Noop,
}

#[derive(Debug, Clone)]
enum StreamKind {
    Query(Query),
    StoreFeed {
        table: String,
        live: bool,
        since: Option<u64>,
    },
}

#[derive(Debug)]
struct StreamEntry {
    upstream: Endpoint,
    downstream: Endpoint,
    kind: StreamKind,
    up_state: HandleState,
    down_state: HandleState,
}

impl StreamEntry {
    fn closes_after_snapshot(&self) -> bool {
        match &self.kind {
            StreamKind::Query(q) => q.mode == QueryMode::Snapshot,
            StreamKind::StoreFeed { live, .. } => !live,
        }
    }
}

struct UnitSlot {
    site: String,
    capability: crate::query::Capability,
    children: Vec<ChildRef>,
    store_access: bool,
    is_root: bool,
    behavior: Option<Box<dyn UnitBehavior>>,
}

struct ClientSlot {
    site: String,
    queries: BTreeMap<StreamId, QueryProbe>,
}

/// Per-query bookkeeping at the issuing client.
#[derive(Debug, Clone)]
pub struct QueryProbe {
    pub query: Query,
    pub issued_at: SimTime,
    /// Snapshot tuples in arrival order.
    pub rows: Vec<crate::record::Tuple>,
    /// Deltas received after the snapshot (subscribe mode).
    pub deltas: Vec<StreamRecord>,
    /// Arrival time of the end-of-snapshot marker.
    pub completed_at: Option<SimTime>,
    pub error: Option<(StreamErrorCode, String)>,
    pub closed: bool,
}

impl QueryProbe {
    /// Ranked (key, price) pairs of the snapshot, in arrival order.
    pub fn ranked_result(&self) -> Vec<(String, i64)> {
        self.rows
            .iter()
            .map(|t| (t.key.clone(), t.price().unwrap_or(0)))
            .collect()
    }
}

/// One line of the event trace (`--trace`): every processed event.
#[derive(Debug, Clone)]
pub struct TraceLine {
    pub time: SimTime,
    pub src: String,
    pub dst: String,
    pub kind: String,
    pub bytes: u64,
}

impl std::fmt::Display for TraceLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:.3} {} {} {} {}",
            self.time.as_ms(),
            self.src,
            self.dst,
            self.kind,
            self.bytes
        )
    }
}

/// Outcome of driving the event loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOutcome {
    pub final_time: SimTime,
    /// False iff the virtual-time limit was hit with events still queued.
    pub quiescent: bool,
}

/// Propagation-lag sample: commit wall time vs first visibility at the
/// instrumented view unit.
#[derive(Debug, Clone, Copy)]
pub struct LagSample {
    pub write_ts: u64,
    pub committed_at: SimTime,
    pub visible_at: SimTime,
}

impl LagSample {
    pub fn lag(&self) -> SimTime {
        SimTime(self.visible_at.0.saturating_sub(self.committed_at.0))
    }
}

/// The deterministic multi-site world.
pub struct Sim {
    queue: EventQueue<Action>,
    net: NetworkModel,
    meter: Meter,
    store: Store,
    store_subs: BTreeMap<StreamId, String>,
    units: BTreeMap<UnitId, UnitSlot>,
    clients: BTreeMap<ClientId, ClientSlot>,
    streams: BTreeMap<StreamId, StreamEntry>,
    next_stream: u64,
    next_client: u32,
    events_processed: u64,
    protocol_violations: u64,
    dropped_records: u64,
    tracing: bool,
    trace: Vec<TraceLine>,
    lag_view: Option<UnitId>,
    lag_samples: BTreeMap<u64, LagSample>,
}

impl Sim {
    /// Build a world over a validated network model; the store lives at
    /// `store_site`.
    pub fn new(net: NetworkModel, store_site: &str) -> Result<Self, SimError> {
        if !net.has_site(store_site) {
            return Err(SimError::UnknownSite(store_site.into()));
        }
        Ok(Sim {
            queue: EventQueue::new(),
            net,
            meter: Meter::default(),
            store: Store::new(store_site),
            store_subs: BTreeMap::new(),
            units: BTreeMap::new(),
            clients: BTreeMap::new(),
            streams: BTreeMap::new(),
            next_stream: 0,
            next_client: 0,
            events_processed: 0,
            protocol_violations: 0,
            dropped_records: 0,
            tracing: false,
            trace: Vec::new(),
            lag_view: None,
            lag_samples: BTreeMap::new(),
        })
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn net(&self) -> &NetworkModel {
        &self.net
    }

    pub fn meter(&self) -> &Meter {
        &self.meter
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut Store {
        &mut self.store
    }

    pub fn events_processed(&self) -> u64 {
        self.events_processed
    }

    pub fn protocol_violations(&self) -> u64 {
        self.protocol_violations
    }

    pub fn dropped_records(&self) -> u64 {
        self.dropped_records
    }

    pub fn enable_trace(&mut self) {
        self.tracing = true;
    }

    pub fn trace(&self) -> &[TraceLine] {
        &self.trace
    }

    /// Instrument a unit for propagation-lag sampling: every first delta
    /// arrival per base write is recorded against its commit time.
    pub fn set_lag_view(&mut self, unit: UnitId) {
        self.lag_view = Some(unit);
    }

    pub fn lag_samples(&self) -> impl Iterator<Item = &LagSample> {
        self.lag_samples.values()
    }

    // ---- registration ----------------------------------------------------

    pub fn add_client(&mut self, site: &str) -> Result<ClientId, SimError> {
        if !self.net.has_site(site) {
            return Err(SimError::UnknownSite(site.into()));
        }
        let id = ClientId(self.next_client);
        self.next_client += 1;
        self.clients.insert(
            id,
            ClientSlot {
                site: site.into(),
                queries: BTreeMap::new(),
            },
        );
        Ok(id)
    }

    /// Install a unit and run its deploy hook (build-time subscriptions
    /// open immediately at the current virtual time).
    #[allow(clippy::too_many_arguments)]
    pub fn deploy_unit(
        &mut self,
        id: UnitId,
        site: &str,
        capability: crate::query::Capability,
        children: Vec<ChildRef>,
        store_access: bool,
        is_root: bool,
        behavior: Box<dyn UnitBehavior>,
    ) -> Result<(), SimError> {
        if !self.net.has_site(site) {
            return Err(SimError::UnknownSite(site.into()));
        }
        if self.units.contains_key(&id) {
            return Err(SimError::DuplicateUnit(id));
        }
        self.units.insert(
            id.clone(),
            UnitSlot {
                site: site.into(),
                capability,
                children,
                store_access,
                is_root,
                behavior: Some(behavior),
            },
        );
        self.invoke(&id, |b, ctx| b.on_deploy(ctx))
    }

    pub fn unit_ref(&self, id: &UnitId) -> Option<QpuRef> {
        self.units.get(id).map(|slot| QpuRef {
            id: id.clone(),
            site: slot.site.clone(),
            capability: slot.capability.clone(),
        })
    }

    pub fn unit_ids(&self) -> impl Iterator<Item = &UnitId> {
        self.units.keys()
    }

    pub fn unit_state(&self, id: &UnitId) -> Option<StateView> {
        self.units
            .get(id)
            .and_then(|s| s.behavior.as_ref())
            .map(|b| b.state_view())
    }

    pub fn unit_class(&self, id: &UnitId) -> Option<&'static str> {
        self.units
            .get(id)
            .and_then(|s| s.behavior.as_ref())
            .map(|b| b.class_name())
    }

    /// True once every deployed unit has finished its initial build.
    pub fn all_built(&self) -> bool {
        self.units
            .values()
            .all(|s| s.behavior.as_ref().map(|b| b.is_built()).unwrap_or(true))
    }

    /// Streams with at least one end still open.
    pub fn open_stream_count(&self) -> usize {
        self.streams
            .values()
            .filter(|s| s.up_state != HandleState::Closed || s.down_state != HandleState::Closed)
            .count()
    }

    // ---- client surface --------------------------------------------------

    /// Open a query from a client against a root unit, now.
    ///
    /// Shape violations and capability rejections surface as
    /// `CapabilityMismatch` before any message is sent.
    pub fn client_open_query(
        &mut self,
        client: ClientId,
        target: &UnitId,
        query: Query,
    ) -> Result<StreamId, SimError> {
        if let Err(e) = query.validate() {
            return Err(SimError::CapabilityMismatch {
                reason: format!("invalid query: {e}"),
            });
        }
        let client_site = self
            .clients
            .get(&client)
            .ok_or(SimError::UnknownClient(client))?
            .site
            .clone();
        let slot = self
            .units
            .get(target)
            .ok_or_else(|| SimError::TargetDown(target.clone()))?;
        if !slot.is_root {
            return Err(SimError::NotARoot(target.clone()));
        }
        if !match_capability(&query, &slot.capability) {
            return Err(SimError::CapabilityMismatch {
                reason: format!("unit {target} cannot answer this query"),
            });
        }
        let target_site = slot.site.clone();
        let stream = self.mint_stream();
        self.streams.insert(
            stream,
            StreamEntry {
                upstream: Endpoint::Unit(target.clone()),
                downstream: Endpoint::Client(client),
                kind: StreamKind::Query(query.clone()),
                up_state: HandleState::Open,
                down_state: HandleState::Open,
            },
        );
        self.clients.get_mut(&client).unwrap().queries.insert(
            stream,
            QueryProbe {
                query: query.clone(),
                issued_at: self.queue.now(),
                rows: Vec::new(),
                deltas: Vec::new(),
                completed_at: None,
                error: None,
                closed: false,
            },
        );
        self.send(
            &client_site,
            &target_site,
            query.wire_size(),
            Action::DeliverOpen { stream },
        );
        Ok(stream)
    }

    /// Close a client-held stream; the producer is notified after the
    /// network delay. Closing twice is a no-op.
    pub fn client_close(&mut self, stream: StreamId) -> Result<(), SimError> {
        let entry = self
            .streams
            .get_mut(&stream)
            .ok_or(SimError::UnknownStream(stream))?;
        if entry.down_state == HandleState::Closed {
            return Ok(());
        }
        entry.down_state = HandleState::Closed;
        let (down, up) = (entry.downstream.clone(), entry.upstream.clone());
        if let Endpoint::Client(c) = &down {
            if let Some(p) = self
                .clients
                .get_mut(c)
                .and_then(|cs| cs.queries.get_mut(&stream))
            {
                p.closed = true;
            }
        }
        let from = self.endpoint_site(&down).to_string();
        let to = self.endpoint_site(&up).to_string();
        self.send(
            &from,
            &to,
            CONTROL_MESSAGE_BYTES,
            Action::DeliverClose {
                stream,
                to_upstream: true,
            },
        );
        Ok(())
    }

    /// Subscribe a client directly to a raw store change feed (test and
    /// tooling surface; units go through their driver instead).
    pub fn client_store_subscribe(
        &mut self,
        client: ClientId,
        table: &str,
        since: Option<u64>,
    ) -> Result<StreamId, SimError> {
        let client_site = self
            .clients
            .get(&client)
            .ok_or(SimError::UnknownClient(client))?
            .site
            .clone();
        let stream = self.mint_stream();
        self.streams.insert(
            stream,
            StreamEntry {
                upstream: Endpoint::Store,
                downstream: Endpoint::Client(client),
                kind: StreamKind::StoreFeed {
                    table: table.into(),
                    live: true,
                    since,
                },
                up_state: HandleState::Open,
                down_state: HandleState::Open,
            },
        );
        self.clients.get_mut(&client).unwrap().queries.insert(
            stream,
            QueryProbe {
                query: Query::subscribe(table),
                issued_at: self.queue.now(),
                rows: Vec::new(),
                deltas: Vec::new(),
                completed_at: None,
                error: None,
                closed: false,
            },
        );
        let store_site = self.store.site().to_string();
        self.send(
            &client_site,
            &store_site,
            CONTROL_MESSAGE_BYTES,
            Action::DeliverStoreOpen { stream },
        );
        Ok(stream)
    }

    pub fn client_probes(
        &self,
        client: ClientId,
    ) -> impl Iterator<Item = (&StreamId, &QueryProbe)> {
        self.clients
            .get(&client)
            .into_iter()
            .flat_map(|c| c.queries.iter())
    }

    pub fn probe(&self, stream: StreamId) -> Option<&QueryProbe> {
        self.clients.values().find_map(|c| c.queries.get(&stream))
    }

    // ---- scheduled client actions (workload driving) ----------------------

    pub fn schedule_query(&mut self, at: SimTime, client: ClientId, target: UnitId, query: Query) {
        self.queue.schedule_at(
            at,
            Action::IssueQuery {
                client,
                target,
                query,
            },
        );
    }

    pub fn schedule_write(&mut self, at: SimTime, client: ClientId, request: WriteRequest) {
        self.queue
            .schedule_at(at, Action::IssueWrite { client, request });
    }

    /// Keep the clock alive up to `at` (used to expire caches before
    /// quiescent probing).
    pub fn schedule_noop(&mut self, at: SimTime) {
        self.queue.schedule_at(at, Action::Noop);
    }

    /// Commit a row directly at the store, bypassing the network. Used for
    /// initial data loads before deployment.
    pub fn seed_write(&mut self, request: WriteRequest) -> Result<LogicalTimestamp, SimError> {
        let now = self.queue.now();
        let ts = self.store.write(request.clone(), now)?;
        self.fan_out_store_delta(&request, &ts);
        Ok(ts)
    }

    // ---- event loop --------------------------------------------------------

    /// Process events in `(due, seq)` order until the queue drains or the
    /// virtual-time limit is reached.
    pub fn run_until_quiescent(&mut self, limit: SimTime) -> Result<RunOutcome, SimError> {
        loop {
            match self.queue.peek_due() {
                None => {
                    return Ok(RunOutcome {
                        final_time: self.queue.now(),
                        quiescent: true,
                    })
                }
                Some(due) if due > limit => {
                    self.queue.advance_to(limit);
                    return Ok(RunOutcome {
                        final_time: limit,
                        quiescent: false,
                    });
                }
                Some(_) => self.step()?,
            }
        }
    }

    fn step(&mut self) -> Result<(), SimError> {
        let (now, action) = match self.queue.pop() {
            Some(x) => x,
            None => return Ok(()),
        };
        self.events_processed += 1;
        if self.tracing {
            self.trace_event(now, &action);
        }
        match action {
            Action::Noop => Ok(()),
            Action::IssueQuery {
                client,
                target,
                query,
            } => {
                // workload schedules are pre-validated; a rejected open is a
                // configuration bug worth failing loudly on
                self.client_open_query(client, &target, query).map(|_| ())
            }
            Action::IssueWrite { client, request } => {
                let site = self
                    .clients
                    .get(&client)
                    .ok_or(SimError::UnknownClient(client))?
                    .site
                    .clone();
                let store_site = self.store.site().to_string();
                self.send(
                    &site,
                    &store_site,
                    request.wire_size(),
                    Action::DeliverWrite { request },
                );
                Ok(())
            }
            Action::DeliverWrite { request } => {
                let ts = self.store.write(request.clone(), self.queue.now())?;
                self.fan_out_store_delta(&request, &ts);
                Ok(())
            }
            Action::DeliverOpen { stream } => self.deliver_open(stream),
            Action::DeliverStoreOpen { stream } => self.deliver_store_open(stream),
            Action::DeliverRecord { stream, record } => self.deliver_record(stream, record),
            Action::DeliverClose {
                stream,
                to_upstream,
            } => self.deliver_close(stream, to_upstream),
        }
    }

    // ---- internals ---------------------------------------------------------

    fn mint_stream(&mut self) -> StreamId {
        let id = StreamId(self.next_stream);
        self.next_stream += 1;
        id
    }

    fn endpoint_site(&self, ep: &Endpoint) -> &str {
        match ep {
            Endpoint::Store => self.store.site(),
            Endpoint::Unit(id) => self
                .units
                .get(id)
                .map(|s| s.site.as_str())
                .unwrap_or_else(|| self.store.site()),
            Endpoint::Client(id) => self
                .clients
                .get(id)
                .map(|c| c.site.as_str())
                .unwrap_or_else(|| self.store.site()),
        }
    }

    /// Meter a payload and schedule its delivery after the pairwise latency.
    fn send(&mut self, from_site: &str, to_site: &str, bytes: u64, action: Action) {
        self.meter.record(from_site, to_site, bytes);
        let latency = self.net.latency(from_site, to_site);
        self.queue.schedule(latency, action);
    }

    /// Run a handler on a unit and apply its buffered effects.
    fn invoke<F>(&mut self, id: &UnitId, f: F) -> Result<(), SimError>
    where
        F: FnOnce(&mut dyn UnitBehavior, &mut Ctx),
    {
        let mut behavior = match self.units.get_mut(id).and_then(|s| s.behavior.take()) {
            Some(b) => b,
            None => return Ok(()), // unit vanished; nothing to do
        };
        let slot = self.units.get(id).expect("slot exists");
        let children = slot.children.clone();
        let mut ctx = Ctx::new(self.queue.now(), id, &children, self.next_stream);
        f(behavior.as_mut(), &mut ctx);
        let (effects, next_stream) = ctx.finish();
        self.next_stream = next_stream;
        self.units.get_mut(id).unwrap().behavior = Some(behavior);
        self.apply_effects(id, effects)
    }

    fn apply_effects(&mut self, unit: &UnitId, effects: Vec<Effect>) -> Result<(), SimError> {
        for effect in effects {
            match effect {
                Effect::Emit { stream, record } => {
                    self.apply_emit(Endpoint::Unit(unit.clone()), stream, record)?
                }
                Effect::OpenChild {
                    child,
                    query,
                    stream,
                } => self.apply_open_child(unit, child, query, stream)?,
                Effect::OpenStore {
                    table,
                    live,
                    stream,
                } => self.apply_open_store(unit, table, live, stream)?,
                Effect::Close { stream } => self.apply_unit_close(unit, stream)?,
            }
        }
        Ok(())
    }

    /// Emission-side protocol enforcement plus delivery scheduling.
    fn apply_emit(
        &mut self,
        from: Endpoint,
        stream: StreamId,
        record: StreamRecord,
    ) -> Result<(), SimError> {
        let entry = self
            .streams
            .get_mut(&stream)
            .ok_or(SimError::UnknownStream(stream))?;
        if entry.upstream != from {
            return Err(SimError::ProtocolViolation {
                stream,
                detail: format!("{from} is not the producer of this stream"),
            });
        }
        match entry.up_state {
            HandleState::Closed => return Err(SimError::StreamClosed(stream)),
            HandleState::Open => match &record {
                StreamRecord::Snapshot(_) | StreamRecord::Error { .. } => {}
                StreamRecord::EndOfSnapshot => entry.up_state = HandleState::SnapshotDone,
                r => {
                    return Err(SimError::ProtocolViolation {
                        stream,
                        detail: format!("{} before END_OF_SNAPSHOT", r.kind_name()),
                    })
                }
            },
            HandleState::SnapshotDone => match &record {
                StreamRecord::DeltaUpsert { .. }
                | StreamRecord::DeltaDelete { .. }
                | StreamRecord::Error { .. } => {}
                r => {
                    return Err(SimError::ProtocolViolation {
                        stream,
                        detail: format!("{} after END_OF_SNAPSHOT", r.kind_name()),
                    })
                }
            },
        }
        // snapshot-only streams and errored streams end at the producer here
        let ends_stream = matches!(record, StreamRecord::Error { .. })
            || (matches!(record, StreamRecord::EndOfSnapshot) && entry.closes_after_snapshot());
        if ends_stream {
            entry.up_state = HandleState::Closed;
            if matches!(entry.upstream, Endpoint::Store) {
                self.store_subs.remove(&stream);
            }
        }
        let from_site = self
            .endpoint_site(&self.streams[&stream].upstream)
            .to_string();
        let to_site = self
            .endpoint_site(&self.streams[&stream].downstream)
            .to_string();
        self.send(
            &from_site,
            &to_site,
            record.wire_size(),
            Action::DeliverRecord { stream, record },
        );
        Ok(())
    }

    fn apply_open_child(
        &mut self,
        opener: &UnitId,
        child: UnitId,
        query: Query,
        stream: StreamId,
    ) -> Result<(), SimError> {
        let slot = self.units.get(opener).expect("opener exists");
        let declared = slot.children.iter().find(|c| c.id == child).cloned();
        let opener_site = slot.site.clone();
        let declared = match declared {
            Some(c) => c,
            None => {
                return Err(SimError::ChildNotDeclared {
                    unit: opener.clone(),
                    child: child.0,
                })
            }
        };
        self.streams.insert(
            stream,
            StreamEntry {
                upstream: Endpoint::Unit(child.clone()),
                downstream: Endpoint::Unit(opener.clone()),
                kind: StreamKind::Query(query.clone()),
                up_state: HandleState::Open,
                down_state: HandleState::Open,
            },
        );
        if query.validate().is_err() || !match_capability(&query, &declared.capability) {
            // locally determined from configured child capabilities: fail
            // in-band without touching the network
            let entry = self.streams.get_mut(&stream).unwrap();
            entry.up_state = HandleState::Closed;
            self.queue.schedule(
                SimTime::ZERO,
                Action::DeliverRecord {
                    stream,
                    record: StreamRecord::Error {
                        code: StreamErrorCode::CapabilityMismatch,
                        detail: format!("child {child} cannot answer this query"),
                    },
                },
            );
            return Ok(());
        }
        let child_site = self
            .units
            .get(&child)
            .map(|s| s.site.clone())
            .unwrap_or_else(|| opener_site.clone());
        self.send(
            &opener_site,
            &child_site,
            query.wire_size(),
            Action::DeliverOpen { stream },
        );
        Ok(())
    }

    fn apply_open_store(
        &mut self,
        opener: &UnitId,
        table: String,
        live: bool,
        stream: StreamId,
    ) -> Result<(), SimError> {
        let slot = self.units.get(opener).expect("opener exists");
        if !slot.store_access {
            return Err(SimError::ChildNotDeclared {
                unit: opener.clone(),
                child: "store".into(),
            });
        }
        let opener_site = slot.site.clone();
        self.streams.insert(
            stream,
            StreamEntry {
                upstream: Endpoint::Store,
                downstream: Endpoint::Unit(opener.clone()),
                kind: StreamKind::StoreFeed {
                    table,
                    live,
                    since: None,
                },
                up_state: HandleState::Open,
                down_state: HandleState::Open,
            },
        );
        let store_site = self.store.site().to_string();
        self.send(
            &opener_site,
            &store_site,
            CONTROL_MESSAGE_BYTES,
            Action::DeliverStoreOpen { stream },
        );
        Ok(())
    }

    fn apply_unit_close(&mut self, unit: &UnitId, stream: StreamId) -> Result<(), SimError> {
        let entry = match self.streams.get_mut(&stream) {
            Some(e) => e,
            None => return Ok(()),
        };
        // a unit may sit at either end; close its own end and notify the peer
        let (is_up, peer) = if entry.upstream == Endpoint::Unit(unit.clone()) {
            (true, entry.downstream.clone())
        } else if entry.downstream == Endpoint::Unit(unit.clone()) {
            (false, entry.upstream.clone())
        } else {
            return Ok(());
        };
        let my_state = if is_up {
            &mut entry.up_state
        } else {
            &mut entry.down_state
        };
        if *my_state == HandleState::Closed {
            return Ok(());
        }
        *my_state = HandleState::Closed;
        let from = self
            .endpoint_site(&Endpoint::Unit(unit.clone()))
            .to_string();
        let to = self.endpoint_site(&peer).to_string();
        self.send(
            &from,
            &to,
            CONTROL_MESSAGE_BYTES,
            Action::DeliverClose {
                stream,
                to_upstream: !is_up,
            },
        );
        Ok(())
    }

    fn deliver_open(&mut self, stream: StreamId) -> Result<(), SimError> {
        let (target, query) = {
            let entry = self
                .streams
                .get(&stream)
                .ok_or(SimError::UnknownStream(stream))?;
            let target = match &entry.upstream {
                Endpoint::Unit(id) => id.clone(),
                other => {
                    return Err(SimError::ProtocolViolation {
                        stream,
                        detail: format!("open delivered to non-unit endpoint {other}"),
                    })
                }
            };
            let query = match &entry.kind {
                StreamKind::Query(q) => q.clone(),
                _ => unreachable!("unit opens carry queries"),
            };
            (target, query)
        };
        self.invoke(&target, |b, ctx| b.on_query(query, stream, ctx))
    }

    fn deliver_store_open(&mut self, stream: StreamId) -> Result<(), SimError> {
        let (table, live, since) = {
            let entry = self
                .streams
                .get(&stream)
                .ok_or(SimError::UnknownStream(stream))?;
            match &entry.kind {
                StreamKind::StoreFeed { table, live, since } => (table.clone(), *live, *since),
                _ => unreachable!("store opens carry feeds"),
            }
        };
        if !self.store.has_table(&table) {
            return self.apply_emit(
                Endpoint::Store,
                stream,
                StreamRecord::Error {
                    code: StreamErrorCode::UnknownTable,
                    detail: table,
                },
            );
        }
        match since {
            None => {
                // snapshot phase: current rows in key order, then the marker
                let rows = self.store.scan(&table)?;
                for tuple in rows {
                    self.apply_emit(Endpoint::Store, stream, StreamRecord::Snapshot(tuple))?;
                }
                self.apply_emit(Endpoint::Store, stream, StreamRecord::EndOfSnapshot)?;
            }
            Some(since) => {
                // replay form: no snapshot, log suffix as deltas
                self.apply_emit(Endpoint::Store, stream, StreamRecord::EndOfSnapshot)?;
                for op in self.store.log_after(&table, since) {
                    let rec = delta_from_op(&op);
                    self.apply_emit(Endpoint::Store, stream, rec)?;
                }
            }
        }
        if live {
            self.store_subs.insert(stream, table);
        }
        Ok(())
    }

    fn fan_out_store_delta(&mut self, request: &WriteRequest, ts: &LogicalTimestamp) {
        let subs: Vec<StreamId> = self
            .store_subs
            .iter()
            .filter(|(_, t)| **t == request.table)
            .map(|(s, _)| *s)
            .collect();
        for stream in subs {
            let rec = match request.kind {
                WriteKind::Upsert => {
                    let mut tuple = crate::record::Tuple::new(request.key.clone(), ts.clone());
                    tuple.attributes = request.attributes.clone();
                    StreamRecord::DeltaUpsert {
                        tuple,
                        origin: ts.clone(),
                    }
                }
                WriteKind::Delete => StreamRecord::DeltaDelete {
                    key: request.key.clone(),
                    ts: ts.clone(),
                    origin: ts.clone(),
                },
            };
            // the store is the producer; emission failures here are bugs
            self.apply_emit(Endpoint::Store, stream, rec)
                .expect("store feed emission");
        }
    }

    fn deliver_record(&mut self, stream: StreamId, record: StreamRecord) -> Result<(), SimError> {
        let entry = match self.streams.get_mut(&stream) {
            Some(e) => e,
            None => return Ok(()),
        };
        if entry.down_state == HandleState::Closed {
            self.dropped_records += 1;
            return Ok(());
        }
        // delivery-side grammar check: counts violations instead of failing,
        // so the acceptance suite can assert the count stayed zero
        let ok = match (entry.down_state, &record) {
            (HandleState::Open, StreamRecord::Snapshot(_)) => true,
            (HandleState::Open, StreamRecord::EndOfSnapshot) => {
                entry.down_state = HandleState::SnapshotDone;
                true
            }
            (HandleState::Open, StreamRecord::Error { .. }) => true,
            (HandleState::SnapshotDone, StreamRecord::DeltaUpsert { .. }) => true,
            (HandleState::SnapshotDone, StreamRecord::DeltaDelete { .. }) => true,
            (HandleState::SnapshotDone, StreamRecord::Error { .. }) => true,
            _ => false,
        };
        if !ok {
            self.protocol_violations += 1;
            return Ok(());
        }
        let ends_stream = matches!(record, StreamRecord::Error { .. })
            || (matches!(record, StreamRecord::EndOfSnapshot) && entry.closes_after_snapshot());
        if ends_stream {
            entry.down_state = HandleState::Closed;
        }
        let consumer = entry.downstream.clone();
        match consumer {
            Endpoint::Client(client) => {
                let now = self.queue.now();
                if let Some(probe) = self
                    .clients
                    .get_mut(&client)
                    .and_then(|c| c.queries.get_mut(&stream))
                {
                    match record {
                        StreamRecord::Snapshot(t) => probe.rows.push(t),
                        StreamRecord::EndOfSnapshot => probe.completed_at = Some(now),
                        StreamRecord::Error { code, detail } => {
                            probe.error = Some((code, detail));
                            probe.closed = true;
                        }
                        delta => probe.deltas.push(delta),
                    }
                    if ends_stream {
                        probe.closed = true;
                    }
                }
                Ok(())
            }
            Endpoint::Unit(unit) => {
                if self.lag_view.as_ref() == Some(&unit) {
                    if let Some(origin) = record.origin() {
                        let now = self.queue.now();
                        self.lag_samples.entry(origin.value).or_insert(LagSample {
                            write_ts: origin.value,
                            committed_at: origin.wall,
                            visible_at: now,
                        });
                    }
                }
                self.invoke(&unit, |b, ctx| b.on_record(stream, record, ctx))
            }
            Endpoint::Store => Err(SimError::ProtocolViolation {
                stream,
                detail: "store does not consume records".into(),
            }),
        }
    }

    fn deliver_close(&mut self, stream: StreamId, to_upstream: bool) -> Result<(), SimError> {
        let entry = match self.streams.get_mut(&stream) {
            Some(e) => e,
            None => return Ok(()),
        };
        let state = if to_upstream {
            &mut entry.up_state
        } else {
            &mut entry.down_state
        };
        if *state == HandleState::Closed {
            return Ok(());
        }
        *state = HandleState::Closed;
        let owner = if to_upstream {
            entry.upstream.clone()
        } else {
            entry.downstream.clone()
        };
        match owner {
            Endpoint::Store => {
                self.store_subs.remove(&stream);
                Ok(())
            }
            Endpoint::Unit(unit) => self.invoke(&unit, |b, ctx| b.on_closed(stream, ctx)),
            Endpoint::Client(client) => {
                if let Some(p) = self
                    .clients
                    .get_mut(&client)
                    .and_then(|c| c.queries.get_mut(&stream))
                {
                    p.closed = true;
                }
                Ok(())
            }
        }
    }

    fn trace_event(&mut self, now: SimTime, action: &Action) {
        let (src, dst, kind, bytes) = match action {
            Action::IssueQuery { client, target, .. } => (
                Endpoint::Client(*client).to_string(),
                target.to_string(),
                "issue_query".to_string(),
                0,
            ),
            // issue events are local client steps; the transfer itself is
            // traced at the matching deliver event
            Action::IssueWrite { client, .. } => (
                Endpoint::Client(*client).to_string(),
                "store".to_string(),
                "issue_write".to_string(),
                0,
            ),
            Action::DeliverWrite { request } => (
                "-".to_string(),
                "store".to_string(),
                "write".to_string(),
                request.wire_size(),
            ),
            Action::DeliverOpen { stream } => {
                let (s, d) = self.stream_sites(*stream);
                (s, d, "open".to_string(), CONTROL_MESSAGE_BYTES)
            }
            Action::DeliverStoreOpen { stream } => {
                let (s, d) = self.stream_sites(*stream);
                (s, d, "store_open".to_string(), CONTROL_MESSAGE_BYTES)
            }
            Action::DeliverRecord { stream, record } => {
                let (d, s) = self.stream_sites(*stream); // records flow up
                (
                    s,
                    d,
                    format!("record:{}", record.kind_name()),
                    record.wire_size(),
                )
            }
            Action::DeliverClose { stream, .. } => {
                let (s, d) = self.stream_sites(*stream);
                (s, d, "close".to_string(), CONTROL_MESSAGE_BYTES)
            }
            Action::Noop => ("-".to_string(), "-".to_string(), "noop".to_string(), 0),
        };
        self.trace.push(TraceLine {
            time: now,
            src,
            dst,
            kind,
            bytes,
        });
    }

    fn stream_sites(&self, stream: StreamId) -> (String, String) {
        match self.streams.get(&stream) {
            Some(e) => (e.downstream.to_string(), e.upstream.to_string()),
            None => ("-".to_string(), "-".to_string()),
        }
    }
}

fn delta_from_op(op: &WriteOp) -> StreamRecord {
    match op.kind {
        WriteKind::Upsert => {
            let mut tuple = crate::record::Tuple::new(op.key.clone(), op.ts.clone());
            tuple.attributes = op.attributes.clone();
            StreamRecord::DeltaUpsert {
                tuple,
                origin: op.ts.clone(),
            }
        }
        WriteKind::Delete => StreamRecord::DeltaDelete {
            key: op.key.clone(),
            ts: op.ts.clone(),
            origin: op.ts.clone(),
        },
    }
}
