//! The unit class library: data-store driver, inverted tag index, key
//! join, top-K view, result cache, and stateless filter/projection.
//!
//! Every class implements [`crate::unit::UnitBehavior`] and speaks the
//! snapshot-then-subscribe stream contract, so any class composes with any
//! other.

mod cache;
mod dsd;
mod filter;
mod index;
mod join;
mod topk;

pub use cache::CacheUnit;
pub use dsd::DataStoreDriver;
pub use filter::FilterUnit;
pub use index::IndexUnit;
pub use join::JoinUnit;
pub use topk::{brute_force_top_k, view_from_rows, TopKUnit, TopKView};

use serde::{Deserialize, Serialize};

use crate::query::{Comparison, OrderBy};
use crate::record::Tuple;

/// Class discriminator as written in topology documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitClass {
    Dsd,
    Index,
    Join,
    Topk,
    Cache,
    Filter,
}

impl std::fmt::Display for UnitClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            UnitClass::Dsd => "dsd",
            UnitClass::Index => "index",
            UnitClass::Join => "join",
            UnitClass::Topk => "topk",
            UnitClass::Cache => "cache",
            UnitClass::Filter => "filter",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsdConfig {
    pub table: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub table: String,
    #[serde(default = "default_index_attribute")]
    pub attribute: String,
}

fn default_index_attribute() -> String {
    "tags".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinConfig {
    /// Join key attribute; both children must key their rows by it.
    #[serde(default = "default_join_key")]
    pub key: String,
}

fn default_join_key() -> String {
    "ad_id".into()
}

impl Default for JoinConfig {
    fn default() -> Self {
        JoinConfig {
            key: default_join_key(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKConfig {
    #[serde(default = "default_k")]
    pub k: u32,
    #[serde(default = "default_order_attribute")]
    pub order_attribute: String,
}

fn default_k() -> u32 {
    10
}

fn default_order_attribute() -> String {
    "price".into()
}

impl Default for TopKConfig {
    fn default() -> Self {
        TopKConfig {
            k: default_k(),
            order_attribute: default_order_attribute(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheConfig {
    #[serde(default = "default_ttl_ms")]
    pub ttl_ms: f64,
    #[serde(default = "default_capacity")]
    pub capacity: u32,
}

fn default_ttl_ms() -> f64 {
    500.0
}

fn default_capacity() -> u32 {
    128
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            ttl_ms: default_ttl_ms(),
            capacity: default_capacity(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FilterConfig {
    #[serde(default)]
    pub predicate: Vec<Comparison>,
    #[serde(default)]
    pub projection: Option<Vec<String>>,
}

/// Snapshot ordering helper: sort by the order attribute, ties by
/// ascending key; tuples lacking the attribute sort last.
pub(crate) fn sort_tuples(tuples: &mut [Tuple], order: &OrderBy) {
    tuples.sort_by(|a, b| {
        let av = a.attributes.get(&order.attribute);
        let bv = b.attributes.get(&order.attribute);
        let ord = match (av, bv) {
            (Some(x), Some(y)) => {
                let base = x.compare(y).unwrap_or(std::cmp::Ordering::Equal);
                if order.descending {
                    base.reverse()
                } else {
                    base
                }
            }
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        };
        ord.then_with(|| a.key.cmp(&b.key))
    });
}
