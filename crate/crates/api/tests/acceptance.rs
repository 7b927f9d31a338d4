//! Primary acceptance criteria, one PASS/FAIL line each. Runs without the
//! libtest harness so the lines always reach the console.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use swaas_api::ApiCommand;
use swaas_core::mesh::{MeshEvent, MeshTopology};
use swaas_core::placement::{exhaustive_oracle, solve, OracleOutcome, PlacementProblem};
use swaas_core::random::{random_links, random_problem, ProblemShape};
use swaas_sim::{audit, Scenario, Simulation, Trace};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn oracle_agreement() -> Outcome {
    let started = Instant::now();
    let shape = ProblemShape { max_providers: 5, max_services: 5, max_instances: 6 };
    let (mut instances, mut feasible, mut missed, mut beaten, mut within) = (0, 0, 0, 0, 0);
    for seed in 0..300u64 {
        let problem = random_problem(&mut ChaCha8Rng::seed_from_u64(seed), shape);
        instances += 1;
        let heuristic = solve(&problem).map_err(|e| format!("seed {seed}: {e}"))?;
        let OracleOutcome::Optimal(best) = exhaustive_oracle(&problem).map_err(|e| format!("seed {seed}: {e}"))?
        else {
            continue;
        };
        feasible += 1;
        if !heuristic.feasible {
            missed += 1;
            continue;
        }
        let (h, o) = (heuristic.cost.total, best.cost.total);
        if h < o - 1e-9 * o.abs().max(1.0) {
            beaten += 1;
        }
        if h <= 1.25 * o + 1e-9 * o.abs().max(1.0) {
            within += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let share = within as f64 / feasible.max(1) as f64;
    check(
        instances >= 200 && feasible > 0 && missed == 0 && beaten == 0 && share >= 0.95 && secs < 60.0,
        format!(
            "{instances} instances, {feasible} feasible, {missed} heuristic misses, {beaten} below oracle, \
             {:.1}% within 1.25x, {secs:.1}s",
            100.0 * share
        ),
    )
}

/// Independent model of the mesh: link list plus alive flags.
struct PlainMesh {
    nodes: Vec<String>,
    alive: BTreeMap<String, bool>,
    links: Vec<(String, String, f64, f64, bool)>,
}

impl PlainMesh {
    fn usable(&self) -> Vec<(usize, usize, f64, f64)> {
        let idx = |n: &str| self.nodes.iter().position(|x| x == n).unwrap();
        self.links
            .iter()
            .filter(|(a, b, _, _, up)| *up && self.alive[a] && self.alive[b])
            .map(|(a, b, l, w, _)| (idx(a), idx(b), *l, *w))
            .collect()
    }

    fn floyd_warshall(&self) -> Vec<Vec<f64>> {
        let n = self.nodes.len();
        let mut d = vec![vec![f64::INFINITY; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        for (a, b, l, _) in self.usable() {
            d[a][b] = d[a][b].min(l);
            d[b][a] = d[b][a].min(l);
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        d
    }

    /// Every simple path from `a` to `b` as (latency, bottleneck).
    fn all_paths(&self, a: usize, b: usize) -> Vec<(f64, f64)> {
        fn walk(
            u: usize,
            b: usize,
            edges: &[(usize, usize, f64, f64)],
            seen: &mut Vec<bool>,
            lat: f64,
            width: f64,
            out: &mut Vec<(f64, f64)>,
        ) {
            if u == b {
                out.push((lat, width));
                return;
            }
            for &(x, y, l, w) in edges {
                let v = if x == u { y } else if y == u { x } else { continue };
                if !seen[v] {
                    seen[v] = true;
                    walk(v, b, edges, seen, lat + l, width.min(w), out);
                    seen[v] = false;
                }
            }
        }
        let edges = self.usable();
        let mut seen = vec![false; self.nodes.len()];
        seen[a] = true;
        let mut out = Vec::new();
        walk(a, b, &edges, &mut seen, 0.0, f64::INFINITY, &mut out);
        out
    }

    fn transfer(&self, a: usize, b: usize, size_kb: f64) -> Option<f64> {
        if a == b {
            return Some(0.0);
        }
        let paths = self.all_paths(a, b);
        let best = paths.iter().map(|p| p.0).min_by(f64::total_cmp)?;
        let width = paths.iter().filter(|p| p.0 == best).map(|p| p.1).max_by(f64::total_cmp)?;
        Some(best + size_kb / (width / 1000.0))
    }
}

fn mesh_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut pairs, mut events) = (0, 0);
    for graph in 0..50 {
        let n = rng.random_range(2..=8);
        let nodes: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
        let density = *[0.3, 0.5, 0.8].choose(&mut rng).unwrap();
        let links = random_links(&mut rng, &nodes, density);
        let mut topo = MeshTopology::new(nodes.clone(), links.clone()).map_err(|e| e.to_string())?;
        let mut plain = PlainMesh {
            nodes: nodes.clone(),
            alive: nodes.iter().map(|n| (n.clone(), true)).collect(),
            links: links.iter().map(|l| (l.a.clone(), l.b.clone(), l.latency_ms, l.bandwidth_kbps, true)).collect(),
        };
        for _ in 0..rng.random_range(0..=3) {
            let event = match rng.random_range(0..3) {
                0 | 1 if !plain.links.is_empty() => {
                    let i = rng.random_range(0..plain.links.len());
                    let up = rng.random_bool(0.3);
                    plain.links[i].4 = up;
                    let (a, b) = (plain.links[i].0.clone(), plain.links[i].1.clone());
                    if up {
                        MeshEvent::LinkUp { a, b }
                    } else {
                        MeshEvent::LinkDown { a, b }
                    }
                }
                _ => {
                    let p = nodes.choose(&mut rng).unwrap().clone();
                    plain.alive.insert(p.clone(), false);
                    MeshEvent::NodeLeave { provider: p }
                }
            };
            topo = topo.apply(&event).map_err(|e| e.to_string())?;
            events += 1;
        }
        let fw = plain.floyd_warshall();
        for (i, a) in nodes.iter().enumerate() {
            for (j, b) in nodes.iter().enumerate() {
                pairs += 1;
                let want = (fw[i][j].is_finite() && (i == j || (plain.alive[a] && plain.alive[b]))).then_some(fw[i][j]);
                let got = topo.path_latency(a, b).map_err(|e| e.to_string())?;
                if got != want {
                    return Err(format!("graph {graph}: latency {a}->{b} {got:?}, Floyd-Warshall {want:?}"));
                }
                for size in [0.0, 1.0, 512.0, 1500.5] {
                    let want = if i == j || (plain.alive[a] && plain.alive[b]) { plain.transfer(i, j, size) } else { None };
                    let got = topo.transfer_time(a, b, size).map_err(|e| e.to_string())?;
                    if got != want {
                        return Err(format!("graph {graph}: transfer {a}->{b} {size} kb {got:?}, paths {want:?}"));
                    }
                }
            }
        }
    }
    Ok(format!("50 graphs, {pairs} ordered pairs, {events} topology events, exact match"))
}

fn f1_trace() -> Trace {
    swaas_sim::run(&common::scenario("f1/scenario.json")).expect("F1 runs").0
}

fn determinism() -> Outcome {
    let (a, b) = (f1_trace(), f1_trace());
    let golden = std::fs::read_to_string(common::fixtures().join("f1/trace.sha256")).map_err(|e| e.to_string())?;
    check(
        a.hash() == b.hash() && a.hash() == golden.trim(),
        format!("run 1 {}, run 2 {}, committed {}", a.hash(), b.hash(), golden.trim()),
    )
}

fn recovery() -> Outcome {
    let scenario = common::scenario("f1/scenario.json");
    let p = &scenario.params;
    let trace = f1_trace();
    let crash = trace
        .of_kind("node-crashed")
        .find(|l| l.str_field("provider") == Some("d4"))
        .ok_or("no crash of d4 in the trace")?;
    let back = trace
        .of_kind("transition")
        .find(|l| l.seq > crash.seq && l.str_field("instance") == Some("map-1") && l.str_field("to") == Some("Active"))
        .ok_or("map-1 never returns to Active")?;
    let rounds = trace
        .of_kind("rm-event")
        .filter(|l| l.seq > crash.seq && l.seq <= back.seq)
        .filter(|l| l.str_field("event") == Some("replan-due") && l.str_field("instance") == Some("map-1"))
        .count();
    let bound = p.timeout_ms() + 2 * p.heartbeat_interval_ms + p.replan_latency_ms();
    let took = back.t - crash.t;

    let mut running: BTreeMap<String, String> = BTreeMap::new();
    let mut started_on_d4_after = 0;
    for l in trace.of_kind("action").filter(|l| l.str_field("ensemble") == Some("map-1")) {
        let (Some(inst), Some(prov)) = (l.str_field("instance"), l.str_field("provider")) else { continue };
        match l.str_field("action") {
            Some("start-container") => {
                if l.seq > back.seq && prov == "d4" {
                    started_on_d4_after += 1;
                }
                running.insert(inst.to_string(), prov.to_string());
            }
            Some("stop-container") => {
                running.remove(inst);
            }
            _ => {}
        }
    }
    let on_d4 = running.values().filter(|p| *p == "d4").count();
    check(
        crash.t == 10_000 && (1..=3).contains(&rounds) && took <= bound && started_on_d4_after == 0 && on_d4 == 0,
        format!(
            "crash at {} ms, Active again at {} ms: {took} ms <= {bound} ms, {rounds} replan round(s), \
             {on_d4} containers on d4 afterwards",
            crash.t, back.t
        ),
    )
}

fn role_split() -> Outcome {
    let scenario = common::scenario("scenarios/role-split.json");
    let mut sim = Simulation::new(&scenario).map_err(|e| e.to_string())?;
    sim.run_to_end().map_err(|e| e.to_string())?;
    let instance = sim.ensemble("survey-1").ok_or("survey-1 missing")?;
    let placement = instance.placement.as_ref().ok_or("survey-1 has no placement")?;
    let template = &scenario.templates[0];
    let cameras: BTreeSet<&str> =
        scenario.providers.iter().filter(|p| !p.profile.sensors.is_empty()).map(|p| p.id.as_str()).collect();

    let split = |assignment: &swaas_core::placement::Assignment| -> (bool, usize) {
        let mut pinned = true;
        let mut offloaded = 0;
        for (id, slot) in assignment {
            let sensing = template.service(&id.service).is_some_and(|s| s.is_sensing());
            let on_camera = cameras.contains(slot.provider.as_str());
            if sensing && !on_camera {
                pinned = false;
            }
            if !sensing && !on_camera {
                offloaded += 1;
            }
        }
        (pinned, offloaded)
    };
    let (pinned, offloaded) = split(&placement.assignment);

    let topology = MeshTopology::new(scenario.providers.iter().map(|p| p.id.clone()), scenario.links.clone())
        .map_err(|e| e.to_string())?;
    let problem = PlacementProblem::new(template.clone(), scenario.providers.clone(), topology).map_err(|e| e.to_string())?;
    let OracleOutcome::Optimal(best) = exhaustive_oracle(&problem).map_err(|e| e.to_string())? else {
        return Err("oracle finds role-split infeasible".into());
    };
    let (oracle_pinned, oracle_offloaded) = split(&best.assignment);
    let same_cost = (placement.cost.total - best.cost.total).abs() <= 1e-9 * best.cost.total.abs().max(1.0);
    check(
        instance.state == swaas_core::rm::EnsembleState::Active
            && pinned
            && offloaded >= 1
            && oracle_pinned
            && oracle_offloaded >= 1
            && same_cost,
        format!(
            "{} cameras, sensing pinned: {pinned}, {offloaded} compute instance(s) off camera drones, \
             total {:.4} vs oracle {:.4}",
            cameras.len(),
            placement.cost.total,
            best.cost.total
        ),
    )
}

fn shipped_scenarios() -> Vec<(String, Scenario)> {
    let mut out = vec![("f1".to_string(), common::scenario("f1/scenario.json"))];
    let mut paths: Vec<_> = std::fs::read_dir(common::fixtures().join("scenarios"))
        .expect("scenario directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    for p in paths {
        let name = p.file_stem().unwrap().to_string_lossy().into_owned();
        out.push((name, Scenario::load(&p).expect("shipped scenario loads")));
    }
    out
}

fn safety_sweep() -> Outcome {
    let mut names = Vec::new();
    let mut lines = 0;
    for (name, scenario) in shipped_scenarios() {
        let (trace, _) = swaas_sim::run(&scenario).map_err(|e| format!("{name}: {e}"))?;
        lines += trace.lines.len();
        let found = audit(&scenario.all_profiles(), &trace);
        if let Some(v) = found.first() {
            return Err(format!("{name}: {} violation(s), first: {v}", found.len()));
        }
        names.push(name);
    }
    Ok(format!("{} scenarios ({}), {lines} trace lines, no violations", names.len(), names.join(", ")))
}

fn api_replay() -> Outcome {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let session = common::session("api/f1-session.jsonl");
    rt.block_on(async {
        let mut hashes = Vec::new();
        let mut bodies_checked = 0;
        for _ in 0..2 {
            let router = common::swarm();
            for command in &session {
                let reply = common::apply(&router, command).await;
                if !reply.status.is_success() {
                    return Err(format!("{command:?}: {} {}", reply.status, reply.text));
                }
                if matches!(command, ApiCommand::Instantiate { .. }) {
                    let v: Value = reply.json();
                    let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
                    let leaks = ["provider", "assignment", "placement", "\"d1\"", "\"d2\"", "\"d3\"", "\"d4\""]
                        .iter()
                        .any(|w| reply.text.contains(w));
                    if keys != BTreeSet::from(["at_ms", "command_id", "instance"]) || leaks {
                        return Err(format!("instantiate reply exposes placement: {}", reply.text));
                    }
                    bodies_checked += 1;
                }
            }
            let trace = common::stream_all(&router, 0).await;
            hashes.push(common::sha256_hex(trace.as_bytes()));
        }
        check(
            hashes[0] == hashes[1] && bodies_checked == 2,
            format!("{} commands replayed on 2 fresh servers, hash {}, {bodies_checked} instantiate bodies clean", session.len(), hashes[0]),
        )
    })
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("oracle agreement", oracle_agreement),
        ("mesh correctness", mesh_correctness),
        ("determinism", determinism),
        ("recovery", recovery),
        ("role split", role_split),
        ("safety sweep", safety_sweep),
        ("api replay", api_replay),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
