#![allow(dead_code)]

use std::path::PathBuf;

use swaas_sim::{Scenario, Trace};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn load(relative: &str) -> Scenario {
    Scenario::load(&fixtures().join(relative)).unwrap_or_else(|e| panic!("{relative}: {e}"))
}

pub fn f1() -> Scenario {
    load("f1/scenario.json")
}

/// `(t, from, to, cause)` for every transition of `instance`.
pub fn transitions(trace: &Trace, instance: &str) -> Vec<(u64, String, String, String)> {
    trace
        .of_kind("transition")
        .filter(|l| l.str_field("instance") == Some(instance))
        .map(|l| {
            let f = |k: &str| l.str_field(k).unwrap().to_string();
            (l.t, f("from"), f("to"), f("cause"))
        })
        .collect()
}
