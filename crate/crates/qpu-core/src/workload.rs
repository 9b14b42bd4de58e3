//! Ad-serving workload generation: the canonical fixture, a tiny
//! deterministic PRNG, and pseudo-random schedules of timed queries and
//! writes that are a pure function of the seed.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::oracle::BaseSnapshot;
use crate::query::Query;
use crate::record::AttributeValue;
use crate::simnet::SimTime;
use crate::storage::WriteRequest;

/// SplitMix64; hand-rolled so schedules never shift under dependency
/// upgrades.
#[derive(Debug, Clone)]
pub struct Rng(u64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `0..n`; modulo bias is irrelevant at these ranges.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }

    pub fn range_i64(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(hi >= lo);
        lo + self.below((hi - lo + 1) as u64) as i64
    }

    /// Uniform in `[0, 1)`.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// The canonical 5-ad dataset used across unit tests.
pub fn fixture_rows() -> Vec<(String, BTreeSet<String>, i64)> {
    let row = |key: &str, tags: &[&str], price: i64| {
        (
            key.to_string(),
            tags.iter().map(|t| t.to_string()).collect::<BTreeSet<_>>(),
            price,
        )
    };
    vec![
        row("a1", &["sports", "cars"], 10),
        row("a2", &["sports"], 50),
        row("a3", &["news"], 30),
        row("a4", &["cars", "news"], 40),
        row("a5", &["sports", "news"], 20),
    ]
}

pub fn fixture_snapshot() -> BaseSnapshot {
    BaseSnapshot::from_rows(&fixture_rows())
}

/// Row shape of data files fed to the oracle command and fixture loading.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataRow {
    pub ad: String,
    pub tags: Vec<String>,
    pub price_cents: i64,
}

pub fn rows_from_data(rows: &[DataRow]) -> Vec<(String, BTreeSet<String>, i64)> {
    rows.iter()
        .map(|r| {
            (
                r.ad.clone(),
                r.tags.iter().cloned().collect::<BTreeSet<_>>(),
                r.price_cents,
            )
        })
        .collect()
}

/// Write requests that load one catalog row (Ads row plus Prices row).
pub fn row_writes(key: &str, tags: &BTreeSet<String>, price: i64) -> Vec<WriteRequest> {
    vec![
        WriteRequest::upsert(
            "Ads",
            key,
            vec![("tags", AttributeValue::Tags(tags.clone()))],
        ),
        WriteRequest::upsert("Prices", key, vec![("price", AttributeValue::Price(price))]),
    ]
}

/// Workload shape: fixed-rate arrivals with per-event jitter, all derived
/// from the seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadSpec {
    #[serde(default = "defaults::num_ads")]
    pub num_ads: u32,
    #[serde(default = "defaults::tag_universe")]
    pub tag_universe: u32,
    /// Tags per ad are uniform in `1..=tags_per_ad_max`.
    #[serde(default = "defaults::tags_per_ad_max")]
    pub tags_per_ad_max: u32,
    #[serde(default = "defaults::price_range")]
    pub price_range_cents: (i64, i64),
    #[serde(default = "defaults::duration_ms")]
    pub duration_ms: f64,
    #[serde(default = "defaults::query_rate")]
    pub query_rate_per_s: f64,
    #[serde(default = "defaults::update_rate")]
    pub update_rate_per_s: f64,
    /// Query tag sets are uniform in `1..=query_tags_max`.
    #[serde(default = "defaults::query_tags_max")]
    pub query_tags_max: u32,
    #[serde(default = "defaults::query_limit")]
    pub query_limit: u32,
    #[serde(default = "defaults::client_site")]
    pub client_site: String,
    #[serde(default = "defaults::advertiser_site")]
    pub advertiser_site: String,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
}

mod defaults {
    pub fn num_ads() -> u32 {
        30
    }
    pub fn tag_universe() -> u32 {
        8
    }
    pub fn tags_per_ad_max() -> u32 {
        3
    }
    pub fn price_range() -> (i64, i64) {
        (1, 100)
    }
    pub fn duration_ms() -> f64 {
        10_000.0
    }
    pub fn query_rate() -> f64 {
        100.0
    }
    pub fn update_rate() -> f64 {
        1.0
    }
    pub fn query_tags_max() -> u32 {
        2
    }
    pub fn query_limit() -> u32 {
        5
    }
    pub fn client_site() -> String {
        "edge".into()
    }
    pub fn advertiser_site() -> String {
        "dc".into()
    }
    pub fn seed() -> u64 {
        1
    }
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduledOp {
    Query(Query),
    Write(WriteRequest),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedEvent {
    pub at: SimTime,
    pub op: ScheduledOp,
}

/// A fully materialized run plan: initial catalog plus timed events sorted
/// by time.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub initial_rows: Vec<(String, BTreeSet<String>, i64)>,
    pub events: Vec<TimedEvent>,
}

impl Schedule {
    pub fn query_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.op, ScheduledOp::Query(_)))
            .count()
    }

    pub fn write_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.op, ScheduledOp::Write(_)))
            .count()
    }
}

/// Generate the deterministic event schedule for a spec.
///
/// Arrivals are fixed-rate with uniform jitter inside each interval, so
/// `floor(rate * duration)` events occur per process. Writes are price
/// adjustments, re-tags, ad additions (Ads plus Prices rows), and ad
/// removals over an evolving key population.
pub fn generate(spec: &WorkloadSpec) -> Schedule {
    let mut rng = Rng::new(spec.seed);
    let tags: Vec<String> = (0..spec.tag_universe.max(1))
        .map(|i| format!("tag{i:02}"))
        .collect();

    let mut initial_rows = Vec::new();
    let mut population: Vec<String> = Vec::new();
    for i in 0..spec.num_ads {
        let key = format!("ad{i:04}");
        let tag_set = sample_tags(&mut rng, &tags, spec.tags_per_ad_max);
        let price = rng.range_i64(spec.price_range_cents.0, spec.price_range_cents.1);
        initial_rows.push((key.clone(), tag_set, price));
        population.push(key);
    }
    let mut next_ad = spec.num_ads;

    let mut events = Vec::new();
    for at in arrival_times(&mut rng, spec.query_rate_per_s, spec.duration_ms) {
        let tag_set = sample_tags(&mut rng, &tags, spec.query_tags_max);
        let query = Query::scan("Ads").with_tags(tag_set).with_limit(
            "price",
            true,
            spec.query_limit.max(1),
        );
        events.push(TimedEvent {
            at,
            op: ScheduledOp::Query(query),
        });
    }
    for at in arrival_times(&mut rng, spec.update_rate_per_s, spec.duration_ms) {
        let roll = rng.below(100);
        let kind = if population.is_empty() {
            WriteChoice::Add
        } else if roll < 55 {
            WriteChoice::AdjustPrice
        } else if roll < 80 {
            WriteChoice::Add
        } else if roll < 95 {
            WriteChoice::Retag
        } else {
            WriteChoice::Remove
        };
        match kind {
            WriteChoice::AdjustPrice => {
                let key = population[rng.below(population.len() as u64) as usize].clone();
                let price = rng.range_i64(spec.price_range_cents.0, spec.price_range_cents.1);
                events.push(TimedEvent {
                    at,
                    op: ScheduledOp::Write(WriteRequest::upsert(
                        "Prices",
                        &key,
                        vec![("price", AttributeValue::Price(price))],
                    )),
                });
            }
            WriteChoice::Retag => {
                let key = population[rng.below(population.len() as u64) as usize].clone();
                let tag_set = sample_tags(&mut rng, &tags, spec.tags_per_ad_max);
                events.push(TimedEvent {
                    at,
                    op: ScheduledOp::Write(WriteRequest::upsert(
                        "Ads",
                        &key,
                        vec![("tags", AttributeValue::Tags(tag_set))],
                    )),
                });
            }
            WriteChoice::Add => {
                let key = format!("ad{next_ad:04}");
                next_ad += 1;
                let tag_set = sample_tags(&mut rng, &tags, spec.tags_per_ad_max);
                let price = rng.range_i64(spec.price_range_cents.0, spec.price_range_cents.1);
                for w in row_writes(&key, &tag_set, price) {
                    events.push(TimedEvent {
                        at,
                        op: ScheduledOp::Write(w),
                    });
                }
                population.push(key);
            }
            WriteChoice::Remove => {
                let idx = rng.below(population.len() as u64) as usize;
                let key = population.remove(idx);
                events.push(TimedEvent {
                    at,
                    op: ScheduledOp::Write(WriteRequest::delete("Ads", &key)),
                });
                events.push(TimedEvent {
                    at,
                    op: ScheduledOp::Write(WriteRequest::delete("Prices", &key)),
                });
            }
        }
    }
    // stable order: by time, queries and writes interleaved as scheduled
    events.sort_by_key(|e| e.at);
    Schedule {
        initial_rows,
        events,
    }
}

enum WriteChoice {
    AdjustPrice,
    Retag,
    Add,
    Remove,
}

fn sample_tags(rng: &mut Rng, universe: &[String], max: u32) -> BTreeSet<String> {
    let max = max.max(1).min(universe.len() as u32);
    let count = 1 + rng.below(max as u64) as u32;
    let mut out = BTreeSet::new();
    while (out.len() as u32) < count {
        let tag = &universe[rng.below(universe.len() as u64) as usize];
        out.insert(tag.clone());
    }
    out
}

fn arrival_times(rng: &mut Rng, rate_per_s: f64, duration_ms: f64) -> Vec<SimTime> {
    if rate_per_s <= 0.0 || duration_ms <= 0.0 {
        return Vec::new();
    }
    let count = (rate_per_s * duration_ms / 1000.0).floor() as u64;
    let interval_ms = 1000.0 / rate_per_s;
    (0..count)
        .map(|i| SimTime::from_ms((i as f64 + rng.unit_f64()) * interval_ms))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_schedule() {
        let spec = WorkloadSpec::default();
        assert_eq!(generate(&spec), generate(&spec));
    }

    #[test]
    fn different_seeds_differ() {
        let a = WorkloadSpec::default();
        let b = WorkloadSpec {
            seed: 2,
            ..WorkloadSpec::default()
        };
        assert_ne!(generate(&a), generate(&b));
    }

    #[test]
    fn query_count_is_rate_times_duration() {
        let spec = WorkloadSpec {
            query_rate_per_s: 10.0,
            duration_ms: 10_000.0,
            ..WorkloadSpec::default()
        };
        assert_eq!(generate(&spec).query_count(), 100);
    }

    #[test]
    fn zero_update_rate_means_no_writes() {
        let spec = WorkloadSpec {
            update_rate_per_s: 0.0,
            ..WorkloadSpec::default()
        };
        let schedule = generate(&spec);
        assert_eq!(schedule.write_count(), 0);
        assert_eq!(schedule.initial_rows.len(), 30);
    }

    #[test]
    fn events_are_time_ordered_within_duration() {
        let spec = WorkloadSpec::default();
        let schedule = generate(&spec);
        let times: Vec<SimTime> = schedule.events.iter().map(|e| e.at).collect();
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
        assert!(times.iter().all(|t| t.as_ms() < spec.duration_ms));
    }

    #[test]
    fn generated_ads_always_carry_a_tag() {
        let schedule = generate(&WorkloadSpec::default());
        assert!(schedule
            .initial_rows
            .iter()
            .all(|(_, tags, _)| !tags.is_empty()));
    }
}
