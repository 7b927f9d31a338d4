//! Intra-swarm mesh: link latencies, bandwidths and reachability.
//!
//! Communication cost between two providers is the propagation latency of the
//! latency-minimal path plus serialization of the payload at that path's
//! bottleneck bandwidth. Among equal-latency paths the widest one wins, then
//! the lexicographically smallest hop sequence. There is no congestion model.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("unknown provider {0:?}")]
    UnknownProvider(String),
    #[error("unknown entity {0}")]
    UnknownEntity(String),
    #[error("duplicate entity {0}")]
    DuplicateEntity(String),
    #[error("invalid link {0}")]
    InvalidLink(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub a: String,
    pub b: String,
    pub latency_ms: f64,
    pub bandwidth_kbps: f64,
    #[serde(default = "up_default")]
    pub up: bool,
}

fn up_default() -> bool {
    true
}

impl Link {
    pub fn new(a: impl Into<String>, b: impl Into<String>, latency_ms: f64, bandwidth_kbps: f64) -> Self {
        Link { a: a.into(), b: b.into(), latency_ms, bandwidth_kbps, up: true }
    }

    fn key(&self) -> (String, String) {
        link_key(&self.a, &self.b)
    }

    fn other(&self, end: &str) -> &str {
        if self.a == end {
            &self.b
        } else {
            &self.a
        }
    }
}

fn link_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Topology change. Applying an event is a pure function of the topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeshEvent {
    LinkUp { a: String, b: String },
    LinkDown { a: String, b: String },
    NodeLeave { provider: String },
    /// Adds (or revives) a provider together with its incident links.
    NodeJoin {
        provider: String,
        #[serde(default)]
        links: Vec<Link>,
    },
}

impl MeshEvent {
    /// The event undoing this one, as far as reachability is concerned.
    pub fn inverse(&self) -> MeshEvent {
        match self {
            MeshEvent::LinkUp { a, b } => MeshEvent::LinkDown { a: a.clone(), b: b.clone() },
            MeshEvent::LinkDown { a, b } => MeshEvent::LinkUp { a: a.clone(), b: b.clone() },
            MeshEvent::NodeLeave { provider } => {
                MeshEvent::NodeJoin { provider: provider.clone(), links: Vec::new() }
            }
            MeshEvent::NodeJoin { provider, .. } => MeshEvent::NodeLeave { provider: provider.clone() },
        }
    }
}

/// A latency-minimal route, widest among equals.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub latency_ms: f64,
    /// `f64::INFINITY` for the empty route.
    pub bottleneck_kbps: f64,
    pub hops: Vec<String>,
}

impl Route {
    pub fn transfer_ms(&self, size_kb: f64) -> f64 {
        if self.hops.len() <= 1 {
            0.0
        } else {
            self.latency_ms + size_kb / (self.bottleneck_kbps / 1000.0)
        }
    }
}

/// Link graph among providers. A link carries traffic only when it is up and
/// both endpoints are alive, so a provider leaving and re-joining restores
/// its links.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeshTopology {
    providers: BTreeMap<String, bool>,
    links: BTreeMap<(String, String), Link>,
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

impl MeshTopology {
    pub fn new<I, S>(providers: I, links: Vec<Link>) -> Result<Self, MeshError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut topo = MeshTopology {
            providers: providers.into_iter().map(|p| (p.into(), true)).collect(),
            links: BTreeMap::new(),
        };
        for link in links {
            topo.insert_link(link, false)?;
        }
        Ok(topo)
    }

    fn insert_link(&mut self, link: Link, replace: bool) -> Result<(), MeshError> {
        if link.a == link.b {
            return Err(MeshError::InvalidLink(format!("self-loop on {}", link.a)));
        }
        for end in [&link.a, &link.b] {
            if !self.providers.contains_key(end) {
                return Err(MeshError::UnknownProvider(end.clone()));
            }
        }
        if !(link.latency_ms.is_finite() && link.latency_ms >= 0.0) {
            return Err(MeshError::InvalidLink(format!("{}-{} latency {}", link.a, link.b, link.latency_ms)));
        }
        if !(link.bandwidth_kbps.is_finite() && link.bandwidth_kbps > 0.0) {
            return Err(MeshError::InvalidLink(format!(
                "{}-{} bandwidth {}",
                link.a, link.b, link.bandwidth_kbps
            )));
        }
        let key = link.key();
        if !replace && self.links.contains_key(&key) {
            return Err(MeshError::DuplicateEntity(format!("link {}-{}", key.0, key.1)));
        }
        self.links.insert(key, link);
        Ok(())
    }

    pub fn providers(&self) -> impl Iterator<Item = &str> {
        self.providers.keys().map(String::as_str)
    }

    pub fn links(&self) -> impl Iterator<Item = &Link> {
        self.links.values()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.providers.contains_key(id)
    }

    pub fn is_alive(&self, id: &str) -> bool {
        self.providers.get(id).copied().unwrap_or(false)
    }

    pub fn link(&self, a: &str, b: &str) -> Option<&Link> {
        self.links.get(&link_key(a, b))
    }

    /// Whether the link currently carries traffic.
    pub fn link_usable(&self, a: &str, b: &str) -> bool {
        self.link(a, b).is_some_and(|l| self.usable(l))
    }

    fn usable(&self, l: &Link) -> bool {
        l.up && self.is_alive(&l.a) && self.is_alive(&l.b)
    }

    fn check(&self, id: &str) -> Result<(), MeshError> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(MeshError::UnknownProvider(id.to_string()))
        }
    }

    fn adjacency(&self) -> BTreeMap<&str, Vec<&Link>> {
        let mut adj: BTreeMap<&str, Vec<&Link>> = self.providers.keys().map(|p| (p.as_str(), Vec::new())).collect();
        for l in self.links.values().filter(|l| self.usable(l)) {
            adj.get_mut(l.a.as_str()).unwrap().push(l);
            adj.get_mut(l.b.as_str()).unwrap().push(l);
        }
        for links in adj.values_mut() {
            links.sort_by(|x, y| x.key().cmp(&y.key()));
        }
        adj
    }

    fn distances<'a>(&'a self, adj: &BTreeMap<&'a str, Vec<&'a Link>>, from: &'a str) -> BTreeMap<&'a str, f64> {
        let mut dist: BTreeMap<&str, f64> = BTreeMap::new();
        let mut done: BTreeSet<&str> = BTreeSet::new();
        dist.insert(from, 0.0);
        loop {
            let next = dist
                .iter()
                .filter(|(n, _)| !done.contains(*n))
                .min_by(|x, y| x.1.total_cmp(y.1).then(x.0.cmp(y.0)))
                .map(|(n, d)| (*n, *d));
            let Some((u, du)) = next else { break };
            done.insert(u);
            for l in &adj[u] {
                let v = l.other(u);
                let cand = du + l.latency_ms;
                if dist.get(v).is_none_or(|d| cand < *d) {
                    dist.insert(v, cand);
                }
            }
        }
        dist
    }

    /// Minimum summed latency over paths of usable links; `None` when
    /// unreachable.
    pub fn path_latency(&self, a: &str, b: &str) -> Result<Option<f64>, MeshError> {
        Ok(self.route(a, b)?.map(|r| r.latency_ms))
    }

    /// Latency plus payload serialization at the bottleneck bandwidth of the
    /// chosen route; 0 for co-located endpoints.
    pub fn transfer_time(&self, a: &str, b: &str, size_kb: f64) -> Result<Option<f64>, MeshError> {
        Ok(self.route(a, b)?.map(|r| r.transfer_ms(size_kb)))
    }

    pub fn route(&self, a: &str, b: &str) -> Result<Option<Route>, MeshError> {
        self.check(a)?;
        self.check(b)?;
        if a == b {
            return Ok(Some(Route { latency_ms: 0.0, bottleneck_kbps: f64::INFINITY, hops: vec![a.to_string()] }));
        }
        let adj = self.adjacency();
        let dist = self.distances(&adj, a);
        let Some(&target) = dist.get(b) else { return Ok(None) };

        let tight = |u: &str, l: &Link| -> bool {
            let v = l.other(u);
            match (dist.get(u), dist.get(v)) {
                (Some(du), Some(dv)) => near(du + l.latency_ms, *dv),
                _ => false,
            }
        };

        // widest path restricted to latency-tight links
        let mut width: BTreeMap<&str, f64> = BTreeMap::new();
        let mut done: BTreeSet<&str> = BTreeSet::new();
        width.insert(a, f64::INFINITY);
        loop {
            let next = width
                .iter()
                .filter(|(n, _)| !done.contains(*n))
                .max_by(|x, y| x.1.total_cmp(y.1).then(y.0.cmp(x.0)))
                .map(|(n, w)| (*n, *w));
            let Some((u, wu)) = next else { break };
            done.insert(u);
            for l in adj[u].iter().filter(|l| tight(u, l)) {
                let v = l.other(u);
                let cand = wu.min(l.bandwidth_kbps);
                if width.get(v).is_none_or(|w| cand > *w) {
                    width.insert(v, cand);
                }
            }
        }
        let bottleneck = width[b];

        // nodes that can still reach b over admissible links
        let admissible = |u: &str, l: &Link| tight(u, l) && l.bandwidth_kbps >= bottleneck;
        let mut can_reach: BTreeSet<&str> = BTreeSet::from([b]);
        let mut queue = VecDeque::from([b]);
        while let Some(v) = queue.pop_front() {
            for l in &adj[v] {
                let u = l.other(v);
                if admissible(u, l) && can_reach.insert(u) {
                    queue.push_back(u);
                }
            }
        }
        // depth-first in id order yields the lexicographically smallest hop list
        fn dfs<'a>(
            u: &'a str,
            b: &str,
            adj: &BTreeMap<&'a str, Vec<&'a Link>>,
            can_reach: &BTreeSet<&str>,
            admissible: &dyn Fn(&str, &Link) -> bool,
            path: &mut Vec<&'a str>,
        ) -> bool {
            if u == b {
                return true;
            }
            let mut next: Vec<&'a str> = adj[u]
                .iter()
                .filter(|l| admissible(u, l))
                .map(|l| l.other(u))
                .filter(|v| can_reach.contains(v) && !path.contains(v))
                .collect();
            next.sort();
            for v in next {
                path.push(v);
                if dfs(v, b, adj, can_reach, admissible, path) {
                    return true;
                }
                path.pop();
            }
            false
        }
        let mut path = vec![a];
        let found = dfs(a, b, &adj, &can_reach, &admissible, &mut path);
        debug_assert!(found);
        Ok(Some(Route {
            latency_ms: target,
            bottleneck_kbps: bottleneck,
            hops: path.into_iter().map(str::to_string).collect(),
        }))
    }

    /// Providers reachable from `a` over usable links, including `a`.
    pub fn reachable_from(&self, a: &str) -> Result<BTreeSet<String>, MeshError> {
        self.check(a)?;
        let adj = self.adjacency();
        let mut seen = BTreeSet::from([a]);
        let mut queue = VecDeque::from([a]);
        while let Some(u) = queue.pop_front() {
            for l in &adj[u] {
                let v = l.other(u);
                if seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        Ok(seen.into_iter().map(str::to_string).collect())
    }

    /// True iff every pair in `subset` is mutually reachable.
    pub fn is_connected<'a, I>(&self, subset: I) -> Result<bool, MeshError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let subset: BTreeSet<&str> = subset.into_iter().collect();
        for p in &subset {
            self.check(p)?;
        }
        let Some(first) = subset.first() else { return Ok(true) };
        if subset.len() == 1 {
            return Ok(true);
        }
        let reach = self.reachable_from(first)?;
        Ok(subset.iter().all(|p| reach.contains(*p)))
    }

    pub fn apply(&self, event: &MeshEvent) -> Result<MeshTopology, MeshError> {
        let mut next = self.clone();
        match event {
            MeshEvent::LinkUp { a, b } | MeshEvent::LinkDown { a, b } => {
                let up = matches!(event, MeshEvent::LinkUp { .. });
                let link = next
                    .links
                    .get_mut(&link_key(a, b))
                    .ok_or_else(|| MeshError::UnknownEntity(format!("link {a}-{b}")))?;
                link.up = up;
            }
            MeshEvent::NodeLeave { provider } => {
                let alive = next
                    .providers
                    .get_mut(provider)
                    .ok_or_else(|| MeshError::UnknownEntity(format!("provider {provider}")))?;
                *alive = false;
            }
            MeshEvent::NodeJoin { provider, links } => {
                if next.is_alive(provider) {
                    return Err(MeshError::DuplicateEntity(format!("provider {provider}")));
                }
                next.providers.insert(provider.clone(), true);
                for l in links {
                    if l.a != *provider && l.b != *provider {
                        return Err(MeshError::InvalidLink(format!(
                            "{}-{} is not incident to joining provider {provider}",
                            l.a, l.b
                        )));
                    }
                    next.insert_link(l.clone(), true)?;
                }
            }
        }
        Ok(next)
    }
}
