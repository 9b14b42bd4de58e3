//! Deterministic discrete-event machinery: virtual time, the event queue,
//! the inter-site latency/cost model, and the cross-site byte meter.
//!
//! Everything here is a pure function of its inputs. Events are totally
//! ordered by `(due, seq)` where `seq` is assigned in scheduling order, so
//! two runs over the same schedule replay identically.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

/// Virtual time in integer microseconds.
///
/// Millisecond values with fractional parts round to the nearest
/// microsecond; all arithmetic stays in integers so event ordering never
/// depends on float behavior.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_ms(ms: f64) -> Self {
        SimTime((ms * 1000.0).round() as u64)
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn micros(self) -> u64 {
        self.0
    }
}

impl std::ops::Add<SimTime> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl std::fmt::Display for SimTime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3}ms", self.as_ms())
    }
}

/// Site classification; intra-site links are fast, cross-site links slow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    DataCenter,
    Edge,
}

/// Default intra-site latency in milliseconds.
pub const DEFAULT_INTRA_SITE_MS: f64 = 1.0;
/// Default cross-site (edge to data center) latency in milliseconds.
pub const DEFAULT_CROSS_SITE_MS: f64 = 50.0;
/// Default per-byte transfer cost within a site.
pub const DEFAULT_INTRA_COST_PER_BYTE: f64 = 0.0;
/// Default per-byte transfer cost across sites.
pub const DEFAULT_CROSS_COST_PER_BYTE: f64 = 1.0;

/// Site set plus pairwise latency and per-byte cost functions.
///
/// Latencies are symmetric and strictly positive; the intra-site latency
/// must be lower than any cross-site latency involving that site.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    sites: BTreeMap<String, SiteKind>,
    intra_latency: SimTime,
    cross_latency: SimTime,
    latency_overrides: BTreeMap<(String, String), SimTime>,
    intra_cost: f64,
    cross_cost: f64,
    cost_overrides: BTreeMap<(String, String), f64>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum NetworkModelError {
    #[error("duplicate site name: {0}")]
    DuplicateSite(String),
    #[error("unknown site in latency or cost entry: {0}")]
    UnknownSite(String),
    #[error("latency must be positive and finite for pair ({0}, {1})")]
    BadLatency(String, String),
    #[error("intra-site latency at {site} must be lower than cross-site latency to {other}")]
    IntraNotFaster { site: String, other: String },
}

impl NetworkModel {
    pub fn new(sites: Vec<(String, SiteKind)>) -> Result<Self, NetworkModelError> {
        let mut map = BTreeMap::new();
        for (name, kind) in sites {
            if map.insert(name.clone(), kind).is_some() {
                return Err(NetworkModelError::DuplicateSite(name));
            }
        }
        Ok(NetworkModel {
            sites: map,
            intra_latency: SimTime::from_ms(DEFAULT_INTRA_SITE_MS),
            cross_latency: SimTime::from_ms(DEFAULT_CROSS_SITE_MS),
            latency_overrides: BTreeMap::new(),
            intra_cost: DEFAULT_INTRA_COST_PER_BYTE,
            cross_cost: DEFAULT_CROSS_COST_PER_BYTE,
            cost_overrides: BTreeMap::new(),
        })
    }

    pub fn with_default_latencies(mut self, intra_ms: f64, cross_ms: f64) -> Self {
        self.intra_latency = SimTime::from_ms(intra_ms);
        self.cross_latency = SimTime::from_ms(cross_ms);
        self
    }

    pub fn with_default_costs(mut self, intra: f64, cross: f64) -> Self {
        self.intra_cost = intra;
        self.cross_cost = cross;
        self
    }

    /// Install a symmetric latency override for one site pair.
    pub fn set_latency(&mut self, a: &str, b: &str, ms: f64) -> Result<(), NetworkModelError> {
        self.check_site(a)?;
        self.check_site(b)?;
        if !(ms.is_finite() && ms > 0.0) {
            return Err(NetworkModelError::BadLatency(a.into(), b.into()));
        }
        let key = ordered_pair(a, b);
        self.latency_overrides.insert(key, SimTime::from_ms(ms));
        Ok(())
    }

    pub fn set_cost(&mut self, a: &str, b: &str, per_byte: f64) -> Result<(), NetworkModelError> {
        self.check_site(a)?;
        self.check_site(b)?;
        self.cost_overrides.insert(ordered_pair(a, b), per_byte);
        Ok(())
    }

    fn check_site(&self, name: &str) -> Result<(), NetworkModelError> {
        if self.sites.contains_key(name) {
            Ok(())
        } else {
            Err(NetworkModelError::UnknownSite(name.into()))
        }
    }

    /// Validate the intra-faster-than-cross invariant over all pairs.
    pub fn validate(&self) -> Result<(), NetworkModelError> {
        for a in self.sites.keys() {
            for b in self.sites.keys() {
                if a == b {
                    continue;
                }
                if self.latency(a, a) >= self.latency(a, b) {
                    return Err(NetworkModelError::IntraNotFaster {
                        site: a.clone(),
                        other: b.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn sites(&self) -> impl Iterator<Item = (&String, &SiteKind)> {
        self.sites.iter()
    }

    pub fn has_site(&self, name: &str) -> bool {
        self.sites.contains_key(name)
    }

    pub fn latency(&self, from: &str, to: &str) -> SimTime {
        if let Some(t) = self.latency_overrides.get(&ordered_pair(from, to)) {
            return *t;
        }
        if from == to {
            self.intra_latency
        } else {
            self.cross_latency
        }
    }

    pub fn cost_per_byte(&self, from: &str, to: &str) -> f64 {
        if let Some(c) = self.cost_overrides.get(&ordered_pair(from, to)) {
            return *c;
        }
        if from == to {
            self.intra_cost
        } else {
            self.cross_cost
        }
    }
}

fn ordered_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.into(), b.into())
    } else {
        (b.into(), a.into())
    }
}

/// Per-pair byte and message accounting for every sent payload.
///
/// All pairs are recorded, intra-site included, so that the sum over the
/// meter equals the sum of all sent payload sizes.
#[derive(Debug, Clone, Default)]
pub struct Meter {
    by_pair: BTreeMap<(String, String), PairMeter>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PairMeter {
    pub bytes: u64,
    pub messages: u64,
}

impl Meter {
    pub fn record(&mut self, from: &str, to: &str, bytes: u64) {
        let entry = self
            .by_pair
            .entry((from.to_string(), to.to_string()))
            .or_default();
        entry.bytes += bytes;
        entry.messages += 1;
    }

    pub fn pair(&self, from: &str, to: &str) -> PairMeter {
        self.by_pair
            .get(&(from.to_string(), to.to_string()))
            .copied()
            .unwrap_or_default()
    }

    /// Total bytes over ordered pairs with distinct endpoints.
    pub fn cross_site_bytes(&self) -> u64 {
        self.by_pair
            .iter()
            .filter(|((a, b), _)| a != b)
            .map(|(_, m)| m.bytes)
            .sum()
    }

    /// Total bytes over all pairs, intra-site included.
    pub fn total_bytes(&self) -> u64 {
        self.by_pair.values().map(|m| m.bytes).sum()
    }

    pub fn total_cost(&self, net: &NetworkModel) -> f64 {
        self.by_pair
            .iter()
            .map(|((a, b), m)| m.bytes as f64 * net.cost_per_byte(a, b))
            .sum()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&(String, String), &PairMeter)> {
        self.by_pair.iter()
    }
}

/// Priority queue of scheduled events, ordered by `(due, seq)`.
#[derive(Debug)]
pub struct EventQueue<A> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Reverse<Scheduled<A>>>,
}

#[derive(Debug)]
struct Scheduled<A> {
    due: SimTime,
    seq: u64,
    action: A,
}

impl<A> PartialEq for Scheduled<A> {
    fn eq(&self, other: &Self) -> bool {
        self.due == other.due && self.seq == other.seq
    }
}
impl<A> Eq for Scheduled<A> {}
impl<A> PartialOrd for Scheduled<A> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<A> Ord for Scheduled<A> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.due, self.seq).cmp(&(other.due, other.seq))
    }
}

impl<A> Default for EventQueue<A> {
    fn default() -> Self {
        Self::new()
    }
}

impl<A> EventQueue<A> {
    pub fn new() -> Self {
        EventQueue {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Enqueue an action `delay` after the current virtual time.
    pub fn schedule(&mut self, delay: SimTime, action: A) {
        self.schedule_at(self.now + delay, action);
    }

    pub fn schedule_at(&mut self, due: SimTime, action: A) {
        debug_assert!(due >= self.now, "cannot schedule into the past");
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Scheduled { due, seq, action }));
    }

    /// Pop the next event and advance the clock to its due time.
    pub fn pop(&mut self) -> Option<(SimTime, A)> {
        let Reverse(ev) = self.heap.pop()?;
        self.now = ev.due;
        Some((ev.due, ev.action))
    }

    /// Due time of the next event without popping it.
    pub fn peek_due(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse(ev)| ev.due)
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    /// Move the clock forward with an empty queue (used between runs).
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }
}
