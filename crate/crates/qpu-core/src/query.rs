//! The declarative query shape flowing down the graph, and the capability
//! descriptors used to route it.
//!
//! The query language is deliberately small: tag containment, attribute
//! comparisons, optional projection, and order/limit. An empty tag filter
//! matches everything.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::record::{AttributeValue, Tuple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    #[default]
    Snapshot,
    SnapshotAndSubscribe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Eq,
    Lt,
    Gt,
    Le,
    Ge,
}

impl CmpOp {
    fn eval(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Gt => ord == Greater,
            CmpOp::Le => ord != Greater,
            CmpOp::Ge => ord != Less,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
        }
    }
}

/// One attribute comparison; predicates are conjunctions of these.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub attribute: String,
    pub op: CmpOp,
    pub value: AttributeValue,
}

impl Comparison {
    /// True iff the tuple has the attribute and the comparison holds.
    /// Missing attributes and kind mismatches never match.
    pub fn matches(&self, tuple: &Tuple) -> bool {
        tuple
            .attributes
            .get(&self.attribute)
            .and_then(|v| v.compare(&self.value))
            .map(|ord| self.op.eval(ord))
            .unwrap_or(false)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderBy {
    pub attribute: String,
    #[serde(default)]
    pub descending: bool,
}

/// A declarative request flowing down the graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub table: String,
    /// Match = tuple's tag set intersects this set; empty = match all.
    #[serde(default)]
    pub tag_filter: BTreeSet<String>,
    /// Conjunction of comparisons; empty = no predicate.
    #[serde(default)]
    pub predicate: Vec<Comparison>,
    #[serde(default)]
    pub projection: Option<Vec<String>>,
    #[serde(default)]
    pub order_by: Option<OrderBy>,
    #[serde(default)]
    pub limit: Option<u32>,
    #[serde(default)]
    pub mode: QueryMode,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("limit requires order_by")]
    LimitWithoutOrder,
    #[error("limit must be at least 1")]
    ZeroLimit,
}

impl Query {
    /// A snapshot query over a whole table, the shape build-time
    /// subscriptions use with mode switched to subscribe.
    pub fn scan(table: impl Into<String>) -> Self {
        Query {
            table: table.into(),
            tag_filter: BTreeSet::new(),
            predicate: Vec::new(),
            projection: None,
            order_by: None,
            limit: None,
            mode: QueryMode::Snapshot,
        }
    }

    pub fn subscribe(table: impl Into<String>) -> Self {
        Query {
            mode: QueryMode::SnapshotAndSubscribe,
            ..Query::scan(table)
        }
    }

    pub fn with_tags<I: IntoIterator<Item = S>, S: Into<String>>(mut self, tags: I) -> Self {
        self.tag_filter = tags.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_limit(mut self, attribute: &str, descending: bool, limit: u32) -> Self {
        self.order_by = Some(OrderBy {
            attribute: attribute.into(),
            descending,
        });
        self.limit = Some(limit);
        self
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        match self.limit {
            Some(0) => Err(QueryError::ZeroLimit),
            Some(_) if self.order_by.is_none() => Err(QueryError::LimitWithoutOrder),
            _ => Ok(()),
        }
    }

    /// Attribute names this query reads, for capability checks.
    pub fn referenced_attributes(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        if !self.tag_filter.is_empty() {
            out.insert("tags".to_string());
        }
        for cmp in &self.predicate {
            out.insert(cmp.attribute.clone());
        }
        if let Some(ord) = &self.order_by {
            out.insert(ord.attribute.clone());
        }
        out
    }

    /// True iff the tuple satisfies the tag filter and predicate.
    pub fn matches(&self, tuple: &Tuple) -> bool {
        if !self.tag_filter.is_empty() {
            match tuple.tags() {
                Some(tags) if tags.intersection(&self.tag_filter).next().is_some() => {}
                _ => return false,
            }
        }
        self.predicate.iter().all(|cmp| cmp.matches(tuple))
    }

    /// Apply the projection, if any.
    pub fn project(&self, tuple: &Tuple) -> Tuple {
        match &self.projection {
            Some(names) => tuple.project(names),
            None => tuple.clone(),
        }
    }

    /// Normalized textual form; tag sets and predicate terms are sorted, so
    /// equivalent queries share a key. Used by the result cache.
    pub fn canonical_key(&self) -> String {
        let mut parts = vec![format!("table={}", self.table)];
        if !self.tag_filter.is_empty() {
            let tags: Vec<&str> = self.tag_filter.iter().map(String::as_str).collect();
            parts.push(format!("tags={}", tags.join(",")));
        }
        if !self.predicate.is_empty() {
            let mut terms: Vec<String> = self
                .predicate
                .iter()
                .map(|c| format!("{}{}{:?}", c.attribute, c.op.symbol(), c.value))
                .collect();
            terms.sort();
            parts.push(format!("pred={}", terms.join("&")));
        }
        if let Some(p) = &self.projection {
            let mut names = p.clone();
            names.sort();
            parts.push(format!("proj={}", names.join(",")));
        }
        if let Some(o) = &self.order_by {
            parts.push(format!(
                "order={}:{}",
                o.attribute,
                if o.descending { "desc" } else { "asc" }
            ));
        }
        if let Some(k) = self.limit {
            parts.push(format!("limit={k}"));
        }
        parts.join(";")
    }

    /// Byte size charged when the query rides an open message.
    pub fn wire_size(&self) -> u64 {
        crate::record::CONTROL_MESSAGE_BYTES
    }
}

/// What a unit can answer: advertised per instance, derived bottom-up
/// during topology validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capability {
    pub table: String,
    pub indexed_attributes: BTreeSet<String>,
    pub supports_order_limit: bool,
    pub supports_subscribe: bool,
}

impl Capability {
    pub fn new(table: impl Into<String>) -> Self {
        Capability {
            table: table.into(),
            indexed_attributes: BTreeSet::new(),
            supports_order_limit: false,
            supports_subscribe: false,
        }
    }

    pub fn with_attributes<I: IntoIterator<Item = S>, S: Into<String>>(mut self, attrs: I) -> Self {
        self.indexed_attributes = attrs.into_iter().map(Into::into).collect();
        self
    }

    pub fn order_limit(mut self, yes: bool) -> Self {
        self.supports_order_limit = yes;
        self
    }

    pub fn subscribe(mut self, yes: bool) -> Self {
        self.supports_subscribe = yes;
        self
    }
}

/// True iff the capability accepts the query: same table, all referenced
/// attributes indexed, order/limit and subscribe support as required.
pub fn match_capability(q: &Query, c: &Capability) -> bool {
    if q.table != c.table {
        return false;
    }
    if !q.referenced_attributes().is_subset(&c.indexed_attributes) {
        return false;
    }
    if q.limit.is_some() && !c.supports_order_limit {
        return false;
    }
    if q.mode == QueryMode::SnapshotAndSubscribe && !c.supports_subscribe {
        return false;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::LogicalTimestamp;

    fn ads_capability() -> Capability {
        Capability::new("Ads")
            .with_attributes(["tags"])
            .subscribe(true)
    }

    #[test]
    fn tag_query_matches_tag_index() {
        let q = Query::scan("Ads").with_tags(["sports"]);
        assert!(match_capability(&q, &ads_capability()));
    }

    #[test]
    fn wrong_table_is_rejected() {
        let q = Query::scan("Prices");
        assert!(!match_capability(&q, &ads_capability()));
    }

    #[test]
    fn limit_requires_order_limit_support() {
        let q = Query::scan("Ads").with_limit("price", true, 2);
        let c = Capability::new("Ads")
            .with_attributes(["tags", "price"])
            .order_limit(false);
        assert!(!match_capability(&q, &c));
        let c = c.order_limit(true);
        assert!(match_capability(&q, &c));
    }

    #[test]
    fn subscribe_requires_subscribe_support() {
        let q = Query::subscribe("Ads");
        let c = Capability::new("Ads").subscribe(false);
        assert!(!match_capability(&q, &c));
    }

    #[test]
    fn limit_without_order_is_invalid() {
        let mut q = Query::scan("Ads");
        q.limit = Some(2);
        assert_eq!(q.validate(), Err(QueryError::LimitWithoutOrder));
        q.limit = Some(0);
        q.order_by = Some(OrderBy {
            attribute: "price".into(),
            descending: true,
        });
        assert_eq!(q.validate(), Err(QueryError::ZeroLimit));
    }

    #[test]
    fn empty_tag_filter_matches_all() {
        let q = Query::scan("Ads");
        let t = Tuple::new("a1", LogicalTimestamp::zero());
        assert!(q.matches(&t));
    }

    #[test]
    fn predicate_on_missing_attribute_never_matches() {
        let mut q = Query::scan("Ads");
        q.predicate.push(Comparison {
            attribute: "price".into(),
            op: CmpOp::Gt,
            value: AttributeValue::Price(25),
        });
        let t = Tuple::new("a1", LogicalTimestamp::zero());
        assert!(!q.matches(&t));
        let t = t.with_attr("price", AttributeValue::Price(30));
        assert!(q.matches(&t));
    }

    #[test]
    fn canonical_key_is_order_insensitive() {
        let a = Query::scan("Ads").with_tags(["sports", "news"]);
        let b = Query::scan("Ads").with_tags(["news", "sports"]);
        assert_eq!(a.canonical_key(), b.canonical_key());
    }
}
