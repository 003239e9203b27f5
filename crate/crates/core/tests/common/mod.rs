#![allow(dead_code)]

use std::path::PathBuf;

use safe_cbf_lab::harness::LoadedConfig;
use safe_cbf_lab::learner::Scenario;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

pub fn load(name: &str) -> LoadedConfig {
    LoadedConfig::load(&config_path(name)).expect("shipped config parses")
}

/// Scenario from a shipped config with a shorter horizon.
pub fn short_scenario(name: &str, t_max: f64) -> Scenario {
    let mut sc = load(name).scenario().expect("scenario builds");
    sc.learner.t_max = t_max;
    sc
}
