mod common;

use std::collections::BTreeSet;
use std::time::Duration;

use axum::http::{Method, StatusCode};
use serde_json::{json, Value};

use common::{call, clock_to, get, post};
use swaas_api::{ServerConfig, StatusDocument, TopologyDocument};
use swaas_core::fixtures::{f1_links, f1_oracle, f1_providers, t_map};
use swaas_core::mesh::MeshTopology;
use swaas_core::placement::{exhaustive_oracle, OracleOutcome, PlacementProblem};
use swaas_core::rm::EnsembleState;

async fn instantiate(router: &axum::Router) -> String {
    let r = post(router, "/v1/instances", json!({ "template": "T-MAP" })).await;
    assert_eq!(r.status, StatusCode::ACCEPTED, "{}", r.text);
    r.json()["instance"].as_str().unwrap().to_string()
}

async fn status(router: &axum::Router, id: &str, placement: bool) -> StatusDocument {
    let q = if placement { "?detail=placement" } else { "" };
    let r = get(router, &format!("/v1/instances/{id}{q}")).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text);
    serde_json::from_str(&r.text).unwrap()
}

fn lines(ndjson: &str) -> Vec<Value> {
    ndjson.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[tokio::test]
async fn templates_come_from_the_directory() {
    let router = common::swarm();
    let r = get(&router, "/v1/templates").await;
    assert_eq!(r.status, StatusCode::OK);
    let v = r.json();
    let ids: Vec<&str> = v["templates"].as_array().unwrap().iter().map(|t| t["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["T-MAP", "T-SURVEY"]);
    assert_eq!(v["templates"][0]["services"], 4);
    assert_eq!(v["errors"], json!([]));
}

#[tokio::test]
async fn broken_template_files_are_named() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(common::fixtures().join("templates/t-map.json"), dir.path().join("t-map.json")).unwrap();
    std::fs::write(dir.path().join("broken.json"), "{ \"id\": ").unwrap();
    let router = common::server(ServerConfig {
        template_dir: Some(dir.path().to_path_buf()),
        ..ServerConfig::new(common::scenario("api/swarm.json"))
    });
    let v = get(&router, "/v1/templates").await.json();
    assert_eq!(v["templates"].as_array().unwrap().len(), 1);
    assert_eq!(v["errors"][0]["file"], "broken.json");
    assert!(v["errors"][0]["error"].as_str().unwrap().contains("syntax"));
}

#[tokio::test]
async fn instantiate_reply_carries_no_placement() {
    let router = common::swarm();
    let r = post(&router, "/v1/instances", json!({ "template": "T-MAP" })).await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    let keys: BTreeSet<String> = r.json().as_object().unwrap().keys().cloned().collect();
    assert_eq!(keys, ["at_ms", "command_id", "instance"].map(String::from).into());
    for word in ["provider", "assignment", "placement", "slot", "accel", "\"d1\"", "\"d2\"", "\"d3\"", "\"d4\""] {
        assert!(!r.text.contains(word), "{word} in {}", r.text);
    }
    let id = r.json()["instance"].as_str().unwrap().to_string();
    let doc = status(&router, &id, false).await;
    assert!(matches!(doc.state, EnsembleState::Pending | EnsembleState::Provisioning));
    assert!(doc.placement.is_none());
    assert!(!get(&router, &format!("/v1/instances/{id}")).await.text.contains("assignment"));
}

#[tokio::test]
async fn bad_commands_are_rejected_before_the_simulator() {
    let router = common::swarm();
    let cases = [
        (json!({ "template": "T-NOPE" }), StatusCode::NOT_FOUND, "UnknownTemplate"),
        (json!({ "template": "T-MAP", "qor": { "max_latency_ms": -1 } }), StatusCode::UNPROCESSABLE_ENTITY, "InvalidOverride"),
        (json!({ "template": "T-MAP", "qor": { "min_sensing_nodes": 9 } }), StatusCode::UNPROCESSABLE_ENTITY, "InvalidOverride"),
        (json!({ "template": "T-MAP", "placement": {} }), StatusCode::BAD_REQUEST, "BadRequest"),
        (json!({ "qor": {} }), StatusCode::BAD_REQUEST, "BadRequest"),
    ];
    for (body, code, error) in cases {
        let r = post(&router, "/v1/instances", body.clone()).await;
        assert_eq!(r.status, code, "{body}: {}", r.text);
        assert_eq!(r.json()["error"], error, "{body}");
        assert!(!r.json()["message"].as_str().unwrap().is_empty());
    }
    let r = post(&router, "/v1/events", json!({ "kind": "node-fail", "provider": "d9" })).await;
    assert_eq!((r.status, r.json()["error"].clone()), (StatusCode::NOT_FOUND, json!("UnknownProvider")));
    let r = post(&router, "/v1/events", json!({ "kind": "explode" })).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = get(&router, "/v1/instances/ghost").await;
    assert_eq!((r.status, r.json()["error"].clone()), (StatusCode::NOT_FOUND, json!("UnknownInstance")));
    let r = call(&router, Method::DELETE, "/v1/instances/ghost", None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let r = get(&router, "/v1/instances/x?detail=everything").await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    // nothing above reached the trace
    clock_to(&router, 30_000).await;
    let trace = common::stream_all(&router, 0).await;
    assert!(!trace.contains("\"scripted\""));
}

#[tokio::test]
async fn steady_state_placement_matches_the_oracle() {
    let router = common::swarm();
    let id = instantiate(&router).await;
    clock_to(&router, 5_000).await;
    let doc = status(&router, &id, true).await;
    assert_eq!(doc.state, EnsembleState::Active);
    let placement = doc.placement.unwrap();
    let golden = f1_oracle().nominal;
    assert_eq!(placement.assignment, golden.assignment);
    assert_eq!(placement.running, golden.assignment);
    assert_eq!(doc.history.len(), 2);
}

#[tokio::test]
async fn tightened_latency_follows_oracle_feasibility() {
    let mut template = t_map();
    template.qor.max_end_to_end_latency_ms = 50.0;
    let topology = MeshTopology::new(f1_providers().iter().map(|p| p.id.clone()), f1_links()).unwrap();
    let problem = PlacementProblem::new(template, f1_providers(), topology).unwrap();
    let feasible = matches!(exhaustive_oracle(&problem).unwrap(), OracleOutcome::Optimal(_));

    let router = common::swarm();
    let r = post(&router, "/v1/instances", json!({ "template": "T-MAP", "qor": { "max_latency_ms": 50 } })).await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    let id = r.json()["instance"].as_str().unwrap().to_string();
    clock_to(&router, 5_000).await;
    let state = status(&router, &id, false).await.state;
    if feasible {
        assert_eq!(state, EnsembleState::Active);
    } else {
        assert!(matches!(state, EnsembleState::Degraded | EnsembleState::Failed), "{state}");
    }
}

#[tokio::test]
async fn torn_down_instances_stay_torn_down() {
    let router = common::swarm();
    let id = instantiate(&router).await;
    clock_to(&router, 3_000).await;
    let r = call(&router, Method::DELETE, &format!("/v1/instances/{id}"), None).await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    assert!(r.json()["command_id"].is_string());
    let before = status(&router, &id, true).await;
    assert_eq!(before.state, EnsembleState::TornDown);
    assert!(before.placement.unwrap().running.is_empty());

    post(&router, "/v1/events", json!({ "kind": "qor-violated", "instance": id, "violation": "late" })).await;
    post(&router, "/v1/events", json!({ "kind": "node-fail", "provider": "d4" })).await;
    clock_to(&router, 20_000).await;
    let after = status(&router, &id, false).await;
    assert_eq!(after.state, EnsembleState::TornDown);
    assert_eq!(after.history, before.history);
}

#[tokio::test]
async fn failure_shows_up_in_trace_order() {
    let router = common::swarm();
    let id = instantiate(&router).await;
    clock_to(&router, 10_000).await;
    let r = post(&router, "/v1/events", json!({ "kind": "node-fail", "provider": "d4" })).await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    let command = r.json()["command_id"].as_str().unwrap().to_string();
    clock_to(&router, 30_000).await;
    let trace = lines(&common::stream_all(&router, 0).await);

    let find = |pred: &dyn Fn(&Value) -> bool| trace.iter().position(|l| pred(l)).expect("line present");
    let p = |l: &Value, k: &str| l["payload"][k].as_str().map(String::from);
    let injected = find(&|l| l["kind"] == "scripted" && p(l, "command_id").as_deref() == Some(command.as_str()));
    let crashed = find(&|l| l["kind"] == "node-crashed" && p(l, "provider").as_deref() == Some("d4"));
    let detected = find(&|l| l["kind"] == "failure-detected" && p(l, "provider").as_deref() == Some("d4"));
    let delivered = find(&|l| l["kind"] == "rm-event" && p(l, "event").as_deref() == Some("node-failed"));
    let reconf = find(&|l| l["kind"] == "transition" && p(l, "to").as_deref() == Some("Reconfiguring"));
    let recovered = trace
        .iter()
        .rposition(|l| l["kind"] == "transition" && p(l, "to").as_deref() == Some("Active"))
        .unwrap();
    assert!(injected < crashed && crashed < detected && detected < delivered && delivered < reconf && reconf < recovered);
    assert_eq!(p(&trace[reconf], "cause").as_deref(), Some("node-failed:d4"));

    let doc = status(&router, &id, true).await;
    assert_eq!(doc.state, EnsembleState::Active);
    assert_eq!(doc.placement.unwrap().assignment, f1_oracle().without_d4.assignment);
    let seq: Vec<u64> = trace.iter().map(|l| l["seq"].as_u64().unwrap()).collect();
    assert_eq!(seq, (1..=seq.len() as u64).collect::<Vec<_>>());
}

#[tokio::test]
async fn every_mutation_is_correlated_by_command_id() {
    let router = common::swarm();
    let mut accepted = Vec::new();
    let push = |r: common::Reply| {
        assert_eq!(r.status, StatusCode::ACCEPTED, "{}", r.text);
        r.json()["command_id"].as_str().unwrap().to_string()
    };
    accepted.push((push(post(&router, "/v1/instances", json!({ "template": "T-MAP" })).await), "instantiate"));
    clock_to(&router, 2_000).await;
    accepted.push((push(post(&router, "/v1/events", json!({ "kind": "link-down", "a": "d1", "b": "d2", "at_ms": 4_000 })).await), "link-down"));
    accepted.push((push(post(&router, "/v1/events", json!({ "kind": "link-up", "a": "d1", "b": "d2", "at_ms": 6_000 })).await), "link-up"));
    clock_to(&router, 8_000).await;
    accepted.push((push(call(&router, Method::DELETE, "/v1/instances/t-map-1", None).await), "teardown"));
    clock_to(&router, 30_000).await;

    let trace = lines(&common::stream_all(&router, 0).await);
    let scripted: Vec<(String, String)> = trace
        .iter()
        .filter(|l| l["kind"] == "scripted")
        .map(|l| (l["payload"]["command_id"].as_str().unwrap().into(), l["payload"]["kind"].as_str().unwrap().into()))
        .collect();
    let want: Vec<(String, String)> = accepted.into_iter().map(|(c, k)| (c, k.to_string())).collect();
    assert_eq!(scripted, want);
    let ids: BTreeSet<&String> = want.iter().map(|(c, _)| c).collect();
    assert_eq!(ids.len(), want.len());
}

#[tokio::test]
async fn stream_waits_at_the_tip_and_resumes_from_any_seq() {
    let router = common::swarm();
    instantiate(&router).await;
    let mut body = common::open_stream(&router, 0).await;
    let head = common::first_chunk(&mut body, Duration::from_secs(5)).await.unwrap();
    let tip = *common::seqs(&head).last().unwrap();
    assert_eq!(common::seqs(&head), (1..=tip).collect::<Vec<_>>());

    let mut live = common::open_stream(&router, tip).await;
    assert!(common::first_chunk(&mut live, Duration::from_millis(200)).await.is_none());
    clock_to(&router, 1_000).await;
    let next = common::first_chunk(&mut live, Duration::from_secs(5)).await.unwrap();
    assert_eq!(common::seqs(&next)[0], tip + 1);

    clock_to(&router, 30_000).await;
    let full = common::stream_all(&router, 0).await;
    let n = common::seqs(&full).len() as u64;
    for k in [0, 1, tip, n - 1, n] {
        let rest = common::seqs(&common::stream_all(&router, k).await);
        assert_eq!(rest, (k + 1..=n).collect::<Vec<_>>(), "since={k}");
    }
    assert_eq!(common::stream_all(&router, n + 5).await, "");
}

#[tokio::test]
async fn clock_is_explicit_and_monotone() {
    let router = common::swarm();
    let now = get(&router, "/v1/clock").await.json();
    assert_eq!(now, json!({ "now_ms": 0, "duration_ms": 30_000 }));
    let r = post(&router, "/v1/clock", json!({ "advance_ms": 1_500 })).await;
    assert_eq!(r.json()["now_ms"], 1_500);
    assert_eq!(clock_to(&router, 2_000).await.json()["now_ms"], 2_000);

    for (body, code) in [
        (json!({}), StatusCode::BAD_REQUEST),
        (json!({ "advance_ms": 1, "to_ms": 5 }), StatusCode::BAD_REQUEST),
        (json!({ "to_ms": 1_000 }), StatusCode::UNPROCESSABLE_ENTITY),
        (json!({ "to_ms": 30_001 }), StatusCode::UNPROCESSABLE_ENTITY),
    ] {
        assert_eq!(post(&router, "/v1/clock", body.clone()).await.status, code, "{body}");
    }
    let r = post(&router, "/v1/events", json!({ "kind": "node-fail", "provider": "d4", "at_ms": 1_000 })).await;
    assert_eq!((r.status, r.json()["error"].clone()), (StatusCode::UNPROCESSABLE_ENTITY, json!("TimeRegression")));
    assert_eq!(get(&router, "/v1/clock").await.json()["now_ms"], 2_000);
}

#[tokio::test]
async fn future_instantiate_is_pending_until_due() {
    let router = common::swarm();
    let r = post(&router, "/v1/events", json!({ "kind": "instantiate", "template": "T-SURVEY", "at_ms": 5_000 })).await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    let id = r.json()["instance"].as_str().unwrap().to_string();
    assert_eq!(r.json()["at_ms"], 5_000);
    let doc = status(&router, &id, false).await;
    assert_eq!((doc.state, doc.template.as_str()), (EnsembleState::Pending, "T-SURVEY"));
    clock_to(&router, 5_000).await;
    assert_ne!(status(&router, &id, false).await.state, EnsembleState::Pending);
}

#[tokio::test]
async fn topology_and_instances_reflect_detection() {
    let router = common::swarm();
    let topo: TopologyDocument = serde_json::from_str(&get(&router, "/v1/topology").await.text).unwrap();
    assert_eq!(topo.providers.len(), 4);
    assert_eq!(topo.links.len(), 4);
    assert!(topo.providers.iter().all(|p| p.alive));

    let id = instantiate(&router).await;
    clock_to(&router, 10_000).await;
    // injected after the 10 s beats went out, so d4 was last heard at 10 s and
    // is declared dead at the first tick more than 3 s later
    post(&router, "/v1/events", json!({ "kind": "node-fail", "provider": "d4" })).await;
    clock_to(&router, 13_000).await;
    let topo: TopologyDocument = serde_json::from_str(&get(&router, "/v1/topology").await.text).unwrap();
    assert!(topo.providers.iter().all(|p| p.alive), "not detected yet");
    clock_to(&router, 14_000).await;
    let topo: TopologyDocument = serde_json::from_str(&get(&router, "/v1/topology").await.text).unwrap();
    assert_eq!(topo.now_ms, 14_000);
    let dead: Vec<&str> = topo.providers.iter().filter(|p| !p.alive).map(|p| p.id.as_str()).collect();
    assert_eq!(dead, ["d4"]);

    let list = get(&router, "/v1/instances").await.json();
    assert_eq!(list, json!([{ "instance": id, "template": "T-MAP", "state": "Reconfiguring" }]));
}

#[tokio::test]
async fn server_runs_the_f1_scenario_to_its_golden_hash() {
    let router = common::server(ServerConfig::new(common::scenario("f1/scenario.json")));
    let mid = clock_to(&router, 12_345).await;
    assert_eq!(mid.status, StatusCode::OK);
    clock_to(&router, 30_000).await;
    let trace = common::stream_all(&router, 0).await;
    let golden = std::fs::read_to_string(common::fixtures().join("f1/trace.sha256")).unwrap();
    assert_eq!(common::sha256_hex(trace.as_bytes()), golden.trim());
}

#[tokio::test]
async fn recorded_sessions_replay_to_the_same_trace() {
    let dir = tempfile::tempdir().unwrap();
    let record = dir.path().join("session.jsonl");
    let config = ServerConfig {
        template_dir: Some(common::fixtures().join("templates")),
        record: Some(record.clone()),
        ..ServerConfig::new(common::scenario("api/swarm.json"))
    };
    let session = common::session("api/f1-session.jsonl");
    let first = common::replay(&common::server(config), &session).await;

    let recorded = swaas_api::parse_session(&std::fs::read_to_string(&record).unwrap()).unwrap();
    let mutations: Vec<_> = session.iter().filter(|c| c.is_mutation()).cloned().collect();
    assert_eq!(recorded, mutations);

    let again = common::replay(&common::swarm(), &recorded).await;
    assert_eq!(common::sha256_hex(again.as_bytes()), common::sha256_hex(first.as_bytes()));
    assert!(first.contains("\"node-crashed\""));
}

#[tokio::test]
async fn console_bundle_is_served_beside_the_api() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<title>console</title>").unwrap();
    let router = common::server(ServerConfig {
        console_dir: Some(dir.path().to_path_buf()),
        ..ServerConfig::new(common::scenario("api/swarm.json"))
    });
    let r = get(&router, "/").await;
    assert_eq!((r.status, r.text.as_str()), (StatusCode::OK, "<title>console</title>"));
    assert_eq!(get(&router, "/v1/clock").await.status, StatusCode::OK);
    assert_eq!(get(&router, "/missing.js").await.status, StatusCode::NOT_FOUND);
}
