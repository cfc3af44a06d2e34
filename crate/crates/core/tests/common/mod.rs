#![allow(dead_code)]

pub mod oracles;

use fbtrain::config::{build_drop, parse_config, DropSetup, RunConfig};
use fbtrain::linalg::{cn_vector, CVec};
use fbtrain::protocol::{run, FbTrace, Scenario};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const CELL_EDGE: &str = include_str!("../../../../configs/cell_edge_pair.json");
pub const DYNAMIC_TDD: &str = include_str!("../../../../configs/dynamic_tdd_19cell.json");

pub fn config(text: &str, overrides: &[&str]) -> RunConfig {
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let cfg = parse_config(text, &overrides).expect("config parses");
    cfg.validate().expect("config is valid");
    cfg
}

pub fn drops(cfg: &RunConfig, n: usize) -> Vec<DropSetup> {
    let base = cfg.topology.build().unwrap();
    (0..n).map(|i| build_drop(cfg, &base, i).unwrap()).collect()
}

pub fn train(setup: &DropSetup, scenario: &Scenario) -> FbTrace {
    run(scenario, setup.input()).unwrap()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vectors(rng: &mut ChaCha8Rng, count: usize, len: usize) -> Vec<CVec> {
    (0..count).map(|_| cn_vector(rng, len, 1.0)).collect()
}
