//! End-to-end graph behavior over the shipped topology documents.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use qpu_core::classes::{
    CacheConfig, FilterConfig, IndexConfig, JoinConfig, TopKConfig, UnitClass,
};
use qpu_core::experiment::drain_and_probe;
use qpu_core::oracle::{oracle_eval, BaseSnapshot};
use qpu_core::query::{CmpOp, Comparison, Query, QueryMode};
use qpu_core::record::{AttributeValue, StreamRecord, Tuple};
use qpu_core::runtime::Sim;
use qpu_core::simnet::SimTime;
use qpu_core::storage::WriteRequest;
use qpu_core::topology::{
    build_sim, deploy, parse_topology, validate, TopologySpec, UnitConfig, UnitSpec,
};
use qpu_core::workload::{fixture_rows, row_writes, Rng};
use qpu_core::{StreamId, UnitId};

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn load_topology(name: &str) -> TopologySpec {
    let text = std::fs::read_to_string(config_path(name)).expect("config file readable");
    parse_topology(&text).expect("config file parses")
}

fn fixture_sim(spec: &TopologySpec) -> (Sim, UnitId) {
    let mut sim = build_sim(spec).unwrap();
    for (key, tags, price) in fixture_rows() {
        for w in row_writes(&key, &tags, price) {
            sim.seed_write(w).unwrap();
        }
    }
    let handle = deploy(&mut sim, spec).unwrap();
    let root = handle.roots[0].id.clone();
    sim.run_until_quiescent(SimTime::from_ms(60_000.0)).unwrap();
    assert!(sim.all_built());
    (sim, root)
}

fn top2(tags: &[&str]) -> Query {
    Query::scan("Ads")
        .with_tags(tags.iter().copied())
        .with_limit("price", true, 2)
}

#[test]
fn shipped_topologies_validate_cleanly() {
    for name in ["topk_edge.json", "cache_edge.json"] {
        let spec = load_topology(name);
        let report = validate(&spec);
        assert!(report.is_deployable(), "{name}: {report}");
    }
}

#[test]
fn edge_view_answers_fixture_queries_in_rank_order() {
    let spec = load_topology("topk_edge.json");
    let (mut sim, root) = fixture_sim(&spec);
    let client = sim.add_client("edge").unwrap();
    let s1 = sim
        .client_open_query(client, &root, top2(&["sports"]))
        .unwrap();
    let s2 = sim
        .client_open_query(client, &root, top2(&["cars", "news"]))
        .unwrap();
    sim.run_until_quiescent(SimTime::from_ms(60_000.0)).unwrap();
    assert_eq!(
        sim.probe(s1).unwrap().ranked_result(),
        vec![("a2".to_string(), 50), ("a5".to_string(), 20)]
    );
    assert_eq!(
        sim.probe(s2).unwrap().ranked_result(),
        vec![("a4".to_string(), 40), ("a3".to_string(), 30)]
    );
    assert_eq!(sim.protocol_violations(), 0);
}

#[test]
fn query_issued_before_readiness_is_queued_until_the_build_completes() {
    let spec = load_topology("topk_edge.json");
    let mut sim = build_sim(&spec).unwrap();
    for (key, tags, price) in fixture_rows() {
        for w in row_writes(&key, &tags, price) {
            sim.seed_write(w).unwrap();
        }
    }
    let handle = deploy(&mut sim, &spec).unwrap();
    let root = handle.roots[0].id.clone();
    // no run yet: the graph is still building when the query goes out
    let client = sim.add_client("edge").unwrap();
    let stream = sim
        .client_open_query(client, &root, top2(&["sports"]))
        .unwrap();
    assert!(!sim.all_built());
    sim.run_until_quiescent(SimTime::from_ms(60_000.0)).unwrap();
    let probe = sim.probe(stream).unwrap();
    assert_eq!(
        probe.ranked_result(),
        vec![("a2".to_string(), 50), ("a5".to_string(), 20)]
    );
}

#[test]
fn deploy_on_empty_tables_becomes_ready() {
    let spec = load_topology("topk_edge.json");
    let mut sim = build_sim(&spec).unwrap();
    let handle = deploy(&mut sim, &spec).unwrap();
    sim.run_until_quiescent(SimTime::from_ms(60_000.0)).unwrap();
    assert!(sim.all_built());
    let root = handle.roots[0].id.clone();
    let client = sim.add_client("edge").unwrap();
    let stream = sim
        .client_open_query(client, &root, top2(&["sports"]))
        .unwrap();
    sim.run_until_quiescent(SimTime::from_ms(60_000.0)).unwrap();
    let probe = sim.probe(stream).unwrap();
    assert!(probe.rows.is_empty());
    assert!(probe.completed_at.is_some());
}

#[test]
fn limit_above_configured_k_is_an_in_band_capability_error() {
    let spec = load_topology("topk_edge.json");
    let (mut sim, root) = fixture_sim(&spec);
    let client = sim.add_client("edge").unwrap();
    let q = Query::scan("Ads")
        .with_tags(["sports"])
        .with_limit("price", true, 11); // K is 10
    let stream = sim.client_open_query(client, &root, q).unwrap();
    sim.run_until_quiescent(SimTime::from_ms(60_000.0)).unwrap();
    let probe = sim.probe(stream).unwrap();
    assert!(probe.error.is_some());
}

#[test]
fn unmatched_tag_set_yields_end_of_snapshot_only() {
    let spec = load_topology("topk_edge.json");
    let (mut sim, root) = fixture_sim(&spec);
    let client = sim.add_client("edge").unwrap();
    let stream = sim
        .client_open_query(client, &root, top2(&["nonexistent"]))
        .unwrap();
    sim.run_until_quiescent(SimTime::from_ms(60_000.0)).unwrap();
    let probe = sim.probe(stream).unwrap();
    assert!(probe.rows.is_empty());
    assert!(probe.completed_at.is_some());
}

#[test]
fn cache_serves_bounded_stale_results_within_ttl() {
    let spec = load_topology("cache_edge.json");
    let (mut sim, root) = fixture_sim(&spec);
    let client = sim.add_client("edge").unwrap();

    // fill the cache
    let fill = sim
        .client_open_query(client, &root, top2(&["sports"]))
        .unwrap();
    sim.run_until_quiescent(SimTime::from_ms(60_000.0)).unwrap();
    let filled = sim.probe(fill).unwrap().ranked_result();
    let fill_time = sim.probe(fill).unwrap().completed_at.unwrap();

    // price change lands after the fill
    let advertiser = sim.add_client("dc").unwrap();
    sim.schedule_write(
        sim.now() + SimTime::from_ms(10.0),
        advertiser,
        WriteRequest::upsert("Prices", "a2", vec![("price", AttributeValue::Price(99))]),
    );
    sim.run_until_quiescent(SimTime::from_ms(60_000.0)).unwrap();

    // hit within ttl: the stale price is served
    let hit = sim
        .client_open_query(client, &root, top2(&["sports"]))
        .unwrap();
    sim.run_until_quiescent(SimTime::from_ms(60_000.0)).unwrap();
    let hit_result = sim.probe(hit).unwrap().ranked_result();
    let hit_issue = sim.probe(hit).unwrap().issued_at;
    assert!(hit_issue.micros() - fill_time.micros() <= SimTime::from_ms(500.0).micros());

    assert_eq!(hit_result, filled, "hit replays the cached entry");
    let oracle_now = oracle_eval(&BaseSnapshot::from_store(sim.store()), &top2(&["sports"]));
    assert_ne!(hit_result, oracle_now, "cached answer lags the base data");
    // bounded staleness: the served result is the oracle answer at fill time
    let oracle_at_fill = oracle_eval(
        &BaseSnapshot::from_store_at_wall(sim.store(), fill_time),
        &top2(&["sports"]),
    );
    assert_eq!(hit_result, oracle_at_fill);
}

// ---- routing soundness over randomized small graphs -------------------------

fn unit(id: &str, site: &str, config: UnitConfig, children: &[&str]) -> UnitSpec {
    UnitSpec {
        id: UnitId::from(id),
        site: site.into(),
        config,
        children: children.iter().map(|c| UnitId::from(*c)).collect(),
    }
}

/// Assemble a random valid graph over the fixture schema: drivers at the
/// bottom, then optionally index, join, topk, and a cache or filter on top.
fn random_spec(rng: &mut Rng) -> TopologySpec {
    let base = load_topology("topk_edge.json");
    let site = |rng: &mut Rng| if rng.below(2) == 0 { "dc" } else { "edge" };

    let mut units = vec![
        unit(
            "ads",
            "dc",
            UnitConfig::Dsd(qpu_core::classes::DsdConfig {
                table: "Ads".into(),
            }),
            &[],
        ),
        unit(
            "prices",
            "dc",
            UnitConfig::Dsd(qpu_core::classes::DsdConfig {
                table: "Prices".into(),
            }),
            &[],
        ),
    ];
    // ads side: direct driver or through an index
    let ads_top = if rng.below(2) == 0 {
        units.push(unit(
            "idx",
            site(rng),
            UnitConfig::Index(IndexConfig {
                table: "Ads".into(),
                attribute: "tags".into(),
            }),
            &["ads"],
        ));
        "idx"
    } else {
        "ads"
    };
    units.push(unit(
        "join",
        site(rng),
        UnitConfig::Join(JoinConfig::default()),
        &[ads_top, "prices"],
    ));
    let mut top = "join".to_string();
    if rng.below(2) == 0 {
        let k = 3 + rng.below(8) as u32;
        units.push(unit(
            "topk",
            site(rng),
            UnitConfig::Topk(TopKConfig {
                k,
                order_attribute: "price".into(),
            }),
            &["join"],
        ));
        top = "topk".into();
    }
    match rng.below(3) {
        0 => {
            units.push(unit(
                "cache",
                site(rng),
                UnitConfig::Cache(CacheConfig::default()),
                &[top.as_str()],
            ));
            top = "cache".into();
        }
        1 => {
            units.push(unit(
                "filter",
                site(rng),
                UnitConfig::Filter(FilterConfig {
                    predicate: vec![Comparison {
                        attribute: "price".into(),
                        op: CmpOp::Gt,
                        value: AttributeValue::Price(rng.range_i64(0, 30)),
                    }],
                    projection: None,
                }),
                &[top.as_str()],
            ));
            top = "filter".into();
        }
        _ => {}
    }

    TopologySpec {
        network: base.network.clone(),
        roots: vec![UnitId::from(top.as_str())],
        units,
        tables: base.tables.clone(),
    }
}

#[test]
fn matching_queries_complete_on_randomized_graphs() {
    for seed in 0..25 {
        let mut rng = Rng::new(seed);
        let spec = random_spec(&mut rng);
        let report = validate(&spec);
        assert!(report.is_deployable(), "seed {seed}: {report}");
        let root_id = spec.roots[0].clone();
        let root_cap = report.capabilities[root_id.as_str()].clone();

        let (mut sim, root) = fixture_sim(&spec);
        let client = sim.add_client("edge").unwrap();
        let mut queries = vec![
            Query::scan("Ads"),
            Query::scan("Ads").with_tags(["sports"]),
            Query::scan("Ads").with_tags(["cars", "news"]),
        ];
        if root_cap.supports_order_limit {
            queries.push(top2(&["sports"]));
        }
        let streams: Vec<StreamId> = queries
            .into_iter()
            .map(|q| {
                assert!(qpu_core::match_capability(&q, &root_cap), "seed {seed}");
                sim.client_open_query(client, &root, q).unwrap()
            })
            .collect();
        sim.run_until_quiescent(SimTime::from_ms(120_000.0))
            .unwrap();
        for stream in streams {
            let probe = sim.probe(stream).unwrap();
            assert!(
                probe.completed_at.is_some(),
                "seed {seed}: query hung without end-of-snapshot"
            );
            assert!(probe.error.is_none(), "seed {seed}");
        }
        assert_eq!(sim.protocol_violations(), 0, "seed {seed}");
    }
}

// ---- isolation under interleaved queries and writes --------------------------

#[test]
fn concurrent_queries_observe_only_whole_prefixes_of_the_write_log() {
    let spec = load_topology("topk_edge.json");
    let (mut sim, root) = fixture_sim(&spec);
    let edge_client = sim.add_client("edge").unwrap();
    let dc_client = sim.add_client("dc").unwrap();
    let advertiser = sim.add_client("dc").unwrap();
    let mut rng = Rng::new(9);

    let start = sim.now();
    for i in 0..20 {
        let at = start + SimTime::from_ms(rng.unit_f64() * 200.0);
        let price = rng.range_i64(1, 99);
        let key = format!("a{}", 1 + rng.below(5));
        sim.schedule_write(
            at,
            advertiser,
            WriteRequest::upsert(
                "Prices",
                &key,
                vec![("price", AttributeValue::Price(price))],
            ),
        );
        let client = if i % 2 == 0 { edge_client } else { dc_client };
        let at = start + SimTime::from_ms(rng.unit_f64() * 250.0);
        sim.schedule_query(at, client, root.clone(), top2(&["sports"]));
    }
    sim.run_until_quiescent(SimTime::from_ms(120_000.0))
        .unwrap();

    // every answer equals the oracle at some whole log prefix: a torn
    // answer (mixing two writes' effects inconsistently) matches none
    let prefixes: Vec<Vec<(String, i64)>> = (0..=sim.store().max_ts())
        .map(|ts| {
            oracle_eval(
                &BaseSnapshot::from_store_as_of(sim.store(), ts),
                &top2(&["sports"]),
            )
        })
        .collect();
    let mut checked = 0;
    for client in [edge_client, dc_client] {
        for (_, probe) in sim.client_probes(client) {
            if probe.completed_at.is_none() {
                continue;
            }
            let answer = probe.ranked_result();
            assert!(
                prefixes.contains(&answer),
                "answer {answer:?} matches no log prefix"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 20);
    assert_eq!(sim.protocol_violations(), 0);
}

// ---- filter/projection commutes with snapshot+delta --------------------------

fn fold_stream(rows: &[Tuple], deltas: &[StreamRecord]) -> BTreeMap<String, Tuple> {
    let mut state: BTreeMap<String, Tuple> =
        rows.iter().map(|t| (t.key.clone(), t.clone())).collect();
    for delta in deltas {
        match delta {
            StreamRecord::DeltaUpsert { tuple, .. } => {
                state.insert(tuple.key.clone(), tuple.clone());
            }
            StreamRecord::DeltaDelete { key, .. } => {
                state.remove(key);
            }
            _ => {}
        }
    }
    state
}

#[test]
fn filtering_the_folded_state_equals_folding_the_filtered_stream() {
    // one graph with both a filtered and an unfiltered subscription to the
    // same join, driven by the same writes
    let base = load_topology("topk_edge.json");
    let threshold = 25;
    let mut units: Vec<UnitSpec> = base
        .units
        .iter()
        .filter(|u| u.config.class() != UnitClass::Topk)
        .cloned()
        .collect();
    units.push(unit(
        "filter",
        "dc",
        UnitConfig::Filter(FilterConfig {
            predicate: vec![Comparison {
                attribute: "price".into(),
                op: CmpOp::Gt,
                value: AttributeValue::Price(threshold),
            }],
            projection: None,
        }),
        &["ad_price_join"],
    ));
    let spec = TopologySpec {
        network: base.network.clone(),
        roots: vec![UnitId::from("filter"), UnitId::from("ad_price_join")],
        units,
        tables: base.tables.clone(),
    };
    let (mut sim, _) = fixture_sim(&spec);
    let client = sim.add_client("dc").unwrap();
    let filtered = sim
        .client_open_query(client, &UnitId::from("filter"), Query::subscribe("Ads"))
        .unwrap();
    let raw = sim
        .client_open_query(
            client,
            &UnitId::from("ad_price_join"),
            Query::subscribe("Ads"),
        )
        .unwrap();
    sim.run_until_quiescent(SimTime::from_ms(60_000.0)).unwrap();

    let advertiser = sim.add_client("dc").unwrap();
    let mut rng = Rng::new(3);
    let start = sim.now();
    for _ in 0..30 {
        let at = start + SimTime::from_ms(rng.unit_f64() * 100.0);
        let key = format!("a{}", 1 + rng.below(5));
        if rng.below(5) == 0 {
            sim.schedule_write(at, advertiser, WriteRequest::delete("Prices", &key));
        } else {
            let price = rng.range_i64(1, 60);
            sim.schedule_write(
                at,
                advertiser,
                WriteRequest::upsert(
                    "Prices",
                    &key,
                    vec![("price", AttributeValue::Price(price))],
                ),
            );
        }
    }
    sim.run_until_quiescent(SimTime::from_ms(120_000.0))
        .unwrap();

    let filtered_probe = sim.probe(filtered).unwrap();
    let raw_probe = sim.probe(raw).unwrap();
    let folded_filtered = fold_stream(&filtered_probe.rows, &filtered_probe.deltas);
    let folded_raw = fold_stream(&raw_probe.rows, &raw_probe.deltas);
    let filtered_fold: BTreeMap<String, Tuple> = folded_raw
        .into_iter()
        .filter(|(_, t)| t.price().map(|p| p > threshold).unwrap_or(false))
        .collect();
    assert_eq!(folded_filtered, filtered_fold);
}

// ---- top-K delta minimality ---------------------------------------------------

#[test]
fn writes_outside_the_visible_view_emit_nothing_to_subscribers() {
    let spec = load_topology("topk_edge.json");
    let (mut sim, root) = fixture_sim(&spec);
    let client = sim.add_client("edge").unwrap();
    // live view of the sports top-2: [a2:50, a5:20]
    let q = Query {
        mode: QueryMode::SnapshotAndSubscribe,
        ..top2(&["sports"])
    };
    let stream = sim.client_open_query(client, &root, q).unwrap();
    sim.run_until_quiescent(SimTime::from_ms(60_000.0)).unwrap();
    assert_eq!(sim.probe(stream).unwrap().rows.len(), 2);

    let advertiser = sim.add_client("dc").unwrap();
    // a3 is news-only: invisible to this subscription
    sim.schedule_write(
        sim.now() + SimTime::from_ms(10.0),
        advertiser,
        WriteRequest::upsert("Prices", "a3", vec![("price", AttributeValue::Price(90))]),
    );
    // a1 stays below the sports top-2 (10 -> 12)
    sim.schedule_write(
        sim.now() + SimTime::from_ms(20.0),
        advertiser,
        WriteRequest::upsert("Prices", "a1", vec![("price", AttributeValue::Price(12))]),
    );
    sim.run_until_quiescent(SimTime::from_ms(60_000.0)).unwrap();
    assert!(
        sim.probe(stream).unwrap().deltas.is_empty(),
        "view-neutral writes must not reach subscribers"
    );

    // a1 enters the top-2: exactly that change flows up
    sim.schedule_write(
        sim.now() + SimTime::from_ms(10.0),
        advertiser,
        WriteRequest::upsert("Prices", "a1", vec![("price", AttributeValue::Price(60))]),
    );
    sim.run_until_quiescent(SimTime::from_ms(60_000.0)).unwrap();
    let deltas = &sim.probe(stream).unwrap().deltas;
    assert_eq!(deltas.len(), 2); // a1 enters, a5 leaves
    assert!(matches!(&deltas[0], StreamRecord::DeltaUpsert { tuple, .. } if tuple.key == "a1"));
    assert!(matches!(&deltas[1], StreamRecord::DeltaDelete { key, .. } if key == "a5"));
}

// ---- byte conservation ---------------------------------------------------------

#[test]
fn metered_bytes_equal_the_sum_of_all_delivered_payloads() {
    let spec = load_topology("cache_edge.json");
    let mut sim = build_sim(&spec).unwrap();
    sim.enable_trace();
    for (key, tags, price) in fixture_rows() {
        for w in row_writes(&key, &tags, price) {
            sim.seed_write(w).unwrap();
        }
    }
    let handle = deploy(&mut sim, &spec).unwrap();
    sim.run_until_quiescent(SimTime::from_ms(60_000.0)).unwrap();
    let root = handle.roots[0].id.clone();
    let client = sim.add_client("edge").unwrap();
    let advertiser = sim.add_client("dc").unwrap();
    let start = sim.now();
    for i in 0..10 {
        sim.schedule_query(
            start + SimTime::from_ms(i as f64 * 7.0),
            client,
            root.clone(),
            top2(&["sports"]),
        );
        sim.schedule_write(
            start + SimTime::from_ms(i as f64 * 11.0),
            advertiser,
            WriteRequest::upsert(
                "Prices",
                "a2",
                vec![("price", AttributeValue::Price(40 + i))],
            ),
        );
    }
    sim.run_until_quiescent(SimTime::from_ms(60_000.0)).unwrap();
    let traced: u64 = sim.trace().iter().map(|l| l.bytes).sum();
    assert_eq!(sim.meter().total_bytes(), traced);
}

// ---- per-sample staleness lower bound -------------------------------------------

#[test]
fn propagation_lag_never_beats_the_one_way_latency() {
    let spec = load_topology("topk_edge.json");
    let (mut sim, _root) = fixture_sim(&spec);
    let advertiser = sim.add_client("dc").unwrap();
    let start = sim.now();
    for i in 0..15 {
        sim.schedule_write(
            start + SimTime::from_ms(1.0 + i as f64 * 13.0),
            advertiser,
            WriteRequest::upsert(
                "Prices",
                &format!("a{}", 1 + i % 5),
                vec![("price", AttributeValue::Price(10 + i))],
            ),
        );
    }
    sim.run_until_quiescent(SimTime::from_ms(60_000.0)).unwrap();
    // view state sits on the edge; the store is in the data center
    let one_way = sim.net().latency("dc", "edge");
    let samples: Vec<_> = sim.lag_samples().collect();
    assert!(!samples.is_empty());
    for sample in samples {
        assert!(
            sample.lag() >= one_way,
            "lag {} undercuts the {} one-way latency",
            sample.lag(),
            one_way
        );
    }
}

// ---- no writes means nothing can go stale ----------------------------------------

#[test]
fn stale_fraction_is_zero_without_writes() {
    use qpu_core::experiment::{run_experiment, RunOptions};
    use qpu_core::workload::WorkloadSpec;
    let workload = WorkloadSpec {
        update_rate_per_s: 0.0,
        query_rate_per_s: 40.0,
        duration_ms: 3_000.0,
        ..WorkloadSpec::default()
    };
    for name in ["topk_edge.json", "cache_edge.json"] {
        let spec = load_topology(name);
        let report = run_experiment(name, &spec, &workload, &RunOptions::default())
            .unwrap()
            .report;
        assert_eq!(report.stale_result_fraction, 0.0, "{name}");
        assert_eq!(report.queries_completed, report.queries_issued, "{name}");
    }
}

// ---- warm cache latency profile --------------------------------------------------

#[test]
fn cache_hits_answer_at_intra_site_speed_while_misses_pay_the_round_trip() {
    use qpu_core::experiment::{run_experiment, RunOptions};
    use qpu_core::workload::WorkloadSpec;
    let spec = load_topology("cache_edge.json");
    let workload = WorkloadSpec {
        query_rate_per_s: 100.0,
        update_rate_per_s: 0.0,
        duration_ms: 10_000.0,
        ..WorkloadSpec::default()
    };
    let report = run_experiment("cache_edge", &spec, &workload, &RunOptions::default())
        .unwrap()
        .report;
    // repeats hit within the 500 ms ttl: the median query never leaves the edge
    assert!(report.cache_hit_rate.unwrap() > 0.5, "{report:?}");
    assert!(report.latency_p50_ms <= 5.0);
    // the cold first query per key pays both cross-site hops
    assert!(report.latency_max_ms >= 100.0);
}

// ---- quiescent oracle equivalence shortcut used by several suites ------------

#[test]
fn quiesced_roots_agree_with_the_oracle_after_writes() {
    let tags: BTreeSet<String> = ["sports", "cars", "news"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for name in ["topk_edge.json", "cache_edge.json"] {
        let spec = load_topology(name);
        let (mut sim, root) = fixture_sim(&spec);
        let advertiser = sim.add_client("dc").unwrap();
        let start = sim.now();
        sim.schedule_write(
            start + SimTime::from_ms(5.0),
            advertiser,
            WriteRequest::upsert("Prices", "a1", vec![("price", AttributeValue::Price(70))]),
        );
        sim.schedule_write(
            start + SimTime::from_ms(9.0),
            advertiser,
            WriteRequest::delete("Ads", "a4"),
        );
        let queries: Vec<Query> = tags.iter().map(|t| top2(&[t.as_str()])).collect();
        let results = drain_and_probe(
            &mut sim,
            &root,
            &queries,
            SimTime::from_ms(501.0),
            SimTime::from_ms(300_000.0),
        )
        .unwrap();
        let snapshot = BaseSnapshot::from_store(sim.store());
        for (q, actual) in queries.iter().zip(results) {
            assert_eq!(actual, oracle_eval(&snapshot, q), "{name}");
        }
    }
}
