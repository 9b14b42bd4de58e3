//! Independent brute-force evaluator of the ad-catalog query.
//!
//! This is the ground truth every other answer path is compared against.
//! It deliberately shares no evaluation logic with the unit classes or the
//! query helpers: it works on plain key/tag/price maps, filters by tag
//! intersection, inner-joins prices, sorts by descending price with
//! ascending-key ties, and truncates to the limit.

use std::collections::{BTreeMap, BTreeSet};

use crate::query::{CmpOp, Query};
use crate::record::AttributeValue;
use crate::simnet::SimTime;
use crate::storage::Store;

/// A quiesced view of the base tables.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BaseSnapshot {
    /// ad key -> tag set
    pub ads: BTreeMap<String, BTreeSet<String>>,
    /// ad key -> price in cents
    pub prices: BTreeMap<String, i64>,
}

impl BaseSnapshot {
    pub fn from_rows(rows: &[(String, BTreeSet<String>, i64)]) -> Self {
        let mut snap = BaseSnapshot::default();
        for (key, tags, price) in rows {
            snap.ads.insert(key.clone(), tags.clone());
            snap.prices.insert(key.clone(), *price);
        }
        snap
    }

    /// Current state of the store's Ads and Prices tables.
    pub fn from_store(store: &Store) -> Self {
        Self::from_store_as_of(store, store.max_ts())
    }

    /// State as of a commit timestamp, reconstructed from the write log.
    pub fn from_store_as_of(store: &Store, as_of: u64) -> Self {
        let mut snap = BaseSnapshot::default();
        if let Ok(rows) = store.scan_as_of("Ads", as_of) {
            for row in rows {
                if let Some(tags) = row.tags() {
                    snap.ads.insert(row.key.clone(), tags.clone());
                }
            }
        }
        if let Ok(rows) = store.scan_as_of("Prices", as_of) {
            for row in rows {
                if let Some(p) = row.price() {
                    snap.prices.insert(row.key.clone(), p);
                }
            }
        }
        snap
    }

    /// State visible at the store at virtual time `t`.
    pub fn from_store_at_wall(store: &Store, t: SimTime) -> Self {
        Self::from_store_as_of(store, store.max_ts_at_wall(t))
    }
}

/// Brute-force evaluation: ranked (key, price) pairs.
pub fn oracle_eval(snapshot: &BaseSnapshot, q: &Query) -> Vec<(String, i64)> {
    let mut matched: Vec<(String, i64)> = Vec::new();
    for (key, tags) in &snapshot.ads {
        if !q.tag_filter.is_empty() && tags.intersection(&q.tag_filter).next().is_none() {
            continue;
        }
        let price = match snapshot.prices.get(key) {
            Some(p) => *p,
            None => continue, // inner join: no price, no result row
        };
        if !predicate_holds(q, tags, price) {
            continue;
        }
        matched.push((key.clone(), price));
    }
    matched.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if let Some(limit) = q.limit {
        matched.truncate(limit as usize);
    }
    matched
}

fn predicate_holds(q: &Query, _tags: &BTreeSet<String>, price: i64) -> bool {
    q.predicate.iter().all(|cmp| {
        let lhs = match cmp.attribute.as_str() {
            "price" => price,
            _ => return false, // unknown attribute never matches
        };
        let rhs = match &cmp.value {
            AttributeValue::Price(v) | AttributeValue::Int(v) => *v,
            _ => return false,
        };
        match cmp.op {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Ge => lhs >= rhs,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::fixture_snapshot;

    #[test]
    fn sports_top2_from_fixture() {
        let q = Query::scan("Ads")
            .with_tags(["sports"])
            .with_limit("price", true, 2);
        let result = oracle_eval(&fixture_snapshot(), &q);
        assert_eq!(result, vec![("a2".into(), 50), ("a5".into(), 20)]);
    }

    #[test]
    fn cars_news_top2_from_fixture() {
        let q = Query::scan("Ads")
            .with_tags(["cars", "news"])
            .with_limit("price", true, 2);
        let result = oracle_eval(&fixture_snapshot(), &q);
        assert_eq!(result, vec![("a4".into(), 40), ("a3".into(), 30)]);
    }

    #[test]
    fn empty_snapshot_yields_empty_result() {
        let q = Query::scan("Ads").with_tags(["sports"]);
        assert!(oracle_eval(&BaseSnapshot::default(), &q).is_empty());
    }

    #[test]
    fn missing_price_rows_are_excluded() {
        let mut snap = fixture_snapshot();
        snap.prices.remove("a2");
        let q = Query::scan("Ads")
            .with_tags(["sports"])
            .with_limit("price", true, 2);
        assert_eq!(
            oracle_eval(&snap, &q),
            vec![("a5".into(), 20), ("a1".into(), 10)]
        );
    }

    #[test]
    fn ties_break_by_ascending_key() {
        let mut snap = BaseSnapshot::default();
        for key in ["b", "a", "c"] {
            snap.ads
                .insert(key.into(), BTreeSet::from(["x".to_string()]));
            snap.prices.insert(key.into(), 7);
        }
        let q = Query::scan("Ads").with_limit("price", true, 2);
        assert_eq!(
            oracle_eval(&snap, &q),
            vec![("a".into(), 7), ("b".into(), 7)]
        );
    }
}
