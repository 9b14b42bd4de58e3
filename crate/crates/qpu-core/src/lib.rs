//! Composable query processing units over a deterministic multi-site
//! network simulation.
//!
//! A query system is a DAG of small units (drivers, indexes, joins, top-K
//! views, caches, filters) that all speak one stream protocol: snapshot
//! records, an end-of-snapshot marker, then incremental deltas. Queries
//! flow down the graph, results and state updates flow back up, and every
//! unit can be placed on any site. The simulator makes placement trade-offs
//! (latency vs freshness vs cross-site traffic) measurable and exactly
//! reproducible.
//!
//! Module map:
//! - [`record`], [`query`]: the wire types and the routing capability model.
//! - [`unit`]: the behavior contract each unit class implements.
//! - [`simnet`]: virtual time, the event queue, latency/cost model, meter.
//! - [`storage`]: in-memory tables with a committed write log.
//! - [`runtime`]: the single-threaded world tying it all together.
//! - [`classes`]: the unit class library.
//! - [`topology`]: declarative graph parsing, validation, deployment.
//! - [`oracle`]: independent brute-force query evaluator (ground truth).
//! - [`workload`], [`metrics`], [`experiment`]: schedule generation,
//!   measurement, and end-to-end runs.

pub mod classes;
pub mod experiment;
pub mod metrics;
pub mod oracle;
pub mod query;
pub mod record;
pub mod runtime;
pub mod simnet;
pub mod storage;
pub mod topology;
pub mod unit;
pub mod workload;

pub use query::{match_capability, Capability, Query, QueryMode};
pub use record::{AttributeValue, LogicalTimestamp, StreamRecord, Tuple};
pub use runtime::{Sim, SimError};
pub use simnet::{NetworkModel, SimTime, SiteKind};
pub use unit::{ClientId, QpuRef, StreamId, UnitBehavior, UnitId};
