//! Per-run measurement report: query latency percentiles, propagation
//! lag, stale-result fraction, cross-site traffic, cost, cache hit rate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Nearest-rank percentile over unsorted samples. `p` in `[0, 100]`.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.saturating_sub(1).min(sorted.len() - 1)]
}

pub fn mean(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// The measured outcome of one experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub topology: String,
    pub seed: u64,
    pub query_rate_per_s: f64,
    pub update_rate_per_s: f64,
    pub queries_issued: u64,
    pub queries_completed: u64,
    pub latency_p50_ms: f64,
    pub latency_p95_ms: f64,
    pub latency_max_ms: f64,
    /// Write-commit to view-visibility lag.
    pub lag_mean_ms: f64,
    pub lag_p95_ms: f64,
    pub lag_samples: u64,
    /// Fraction of queries whose answer differed from the oracle evaluated
    /// at issue time.
    pub stale_result_fraction: f64,
    /// Bytes per ordered site pair, cross-site pairs only.
    pub cross_site_bytes: BTreeMap<String, u64>,
    pub total_cross_site_bytes: u64,
    pub total_bytes: u64,
    pub total_cost: f64,
    /// Present when the topology contains at least one cache.
    pub cache_hit_rate: Option<f64>,
    pub final_virtual_ms: f64,
    pub events_processed: u64,
    /// Stream-grammar violations observed by the delivery-side checker;
    /// always zero for well-behaved unit classes.
    pub protocol_violations: u64,
}

/// Column order of the metrics CSV; stable contract for scripts.
pub const CSV_HEADER: &str = "topology,seed,query_rate_per_s,update_rate_per_s,queries_issued,queries_completed,latency_p50_ms,latency_p95_ms,latency_max_ms,lag_mean_ms,lag_p95_ms,lag_samples,stale_result_fraction,total_cross_site_bytes,total_cost,cache_hit_rate,protocol_violations";

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.topology,
            self.seed,
            self.query_rate_per_s,
            self.update_rate_per_s,
            self.queries_issued,
            self.queries_completed,
            self.latency_p50_ms,
            self.latency_p95_ms,
            self.latency_max_ms,
            self.lag_mean_ms,
            self.lag_p95_ms,
            self.lag_samples,
            self.stale_result_fraction,
            self.total_cross_site_bytes,
            self.total_cost,
            self.cache_hit_rate
                .map(|r| r.to_string())
                .unwrap_or_default(),
            self.protocol_violations,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-oriented one-run summary.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "topology {} seed {}: {}/{} queries, p50 {:.3} ms, p95 {:.3} ms, max {:.3} ms\n",
            self.topology,
            self.seed,
            self.queries_completed,
            self.queries_issued,
            self.latency_p50_ms,
            self.latency_p95_ms,
            self.latency_max_ms
        );
        out.push_str(&format!(
            "  lag mean {:.3} ms (p95 {:.3} ms, {} samples), stale fraction {:.4}\n",
            self.lag_mean_ms, self.lag_p95_ms, self.lag_samples, self.stale_result_fraction
        ));
        out.push_str(&format!(
            "  cross-site bytes {} (cost {:.3}){}\n",
            self.total_cross_site_bytes,
            self.total_cost,
            match self.cache_hit_rate {
                Some(r) => format!(", cache hit rate {r:.3}"),
                None => String::new(),
            }
        ));
        out
    }
}
