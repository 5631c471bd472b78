//! Independent reference computations for the integration tests.
//!
//! Nothing here calls into the crate's scoring code: the payoff tables are
//! typed in again and every quantity is found by scanning all four options.

#![allow(dead_code)]

use std::path::Path;

use envy_harness::agents::{AgentSpec, PolicyName, PolicySpec};
use envy_harness::manifest::{validate, Experiment, MatrixSource, RunManifest, ValidatedManifest};
use envy_harness::payoff::OptionId;
use envy_harness::protocol_point::PairMode;

/// (self, peer) per option A-D.
pub type Table = [(i64, i64); 4];

pub const M1: Table = [(5, 7), (4, 2), (1, -1), (-3, -5)];
pub const M2: Table = [(5, 7), (4, 1), (2, -2), (-1, -6)];
pub const M3: Table = [(5, 9), (4, 1), (1, -2), (-3, -4)];

pub fn tables() -> [(&'static str, Table); 3] {
    [("M1", M1), ("M2", M2), ("M3", M3)]
}

pub struct Terms {
    pub delta: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

/// Advantage, T1, T2 and T3 of option `k`, by exhaustive scan.
pub fn oracle(table: &Table, k: usize) -> Terms {
    let mut self_max = i64::MIN;
    let mut self_min = i64::MAX;
    let mut peer_max = i64::MIN;
    let mut peer_min = i64::MAX;
    let mut gap_max = i64::MIN;
    for &(s, p) in table {
        self_max = self_max.max(s);
        self_min = self_min.min(s);
        peer_max = peer_max.max(p);
        peer_min = peer_min.min(p);
        gap_max = gap_max.max(s - p);
    }
    let adv = |(s, p): (i64, i64)| 0.5 * ((s - p) as f64 / gap_max as f64) + 0.5;
    let mut delta_max = f64::MIN;
    for &o in table {
        delta_max = delta_max.max(adv(o));
    }
    let (s, p) = table[k];
    Terms {
        delta: adv(table[k]),
        t1: (self_max - s) as f64 / (self_max - self_min) as f64,
        t2: adv(table[k]) / delta_max,
        t3: (peer_max - p) as f64 / (peer_max - peer_min) as f64,
    }
}

/// Turn-aligned terms for three parsed choices (option indices).
pub fn oracle_game(table: &Table, choices: [usize; 3]) -> (f64, f64, f64) {
    (oracle(table, choices[0]).t1, oracle(table, choices[1]).t2, oracle(table, choices[2]).t3)
}

/// Pearson r by the single-pass sums formula.
pub fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

pub fn option(k: usize) -> OptionId {
    OptionId::ALL[k]
}

/// Eight scripted game players with distinct behavior.
pub fn game_pool() -> Vec<AgentSpec> {
    let mut noise = PolicySpec::new(PolicyName::SeededRandom);
    noise.seed = Some(3);
    vec![
        AgentSpec::scripted("always-b", PolicySpec::constant_choice(OptionId::B)),
        AgentSpec::scripted("greedy", PolicySpec::new(PolicyName::MaxSelf)),
        AgentSpec::scripted("gap", PolicySpec::new(PolicyName::MaxGap)),
        AgentSpec::scripted("spoiler", PolicySpec::new(PolicyName::MinPeer)),
        AgentSpec::scripted("coop", PolicySpec::new(PolicyName::Cooperative)),
        AgentSpec::scripted("averse", PolicySpec::fehr_schmidt(2.0, 0.25)),
        AgentSpec::scripted("reactive", PolicySpec::new(PolicyName::EnviousWhenBehind)),
        AgentSpec::scripted("noise", noise),
    ]
}

/// Eight scripted raters.
pub fn rater_pool() -> Vec<AgentSpec> {
    let mut pool: Vec<AgentSpec> =
        (1..=5).map(|r| AgentSpec::scripted(format!("steady-{r}"), PolicySpec::constant_rater(r))).collect();
    pool.push(AgentSpec::scripted("grudge", PolicySpec::new(PolicyName::GrudgeRater)));
    let mut a = PolicySpec::new(PolicyName::SeededRandom);
    a.seed = Some(1);
    let mut b = PolicySpec::new(PolicyName::SeededRandom);
    b.seed = Some(2);
    pool.push(AgentSpec::scripted("noise-a", a));
    pool.push(AgentSpec::scripted("noise-b", b));
    pool
}

pub fn manifest(experiment: Experiment, pool: Vec<AgentSpec>, matrices: &[&str], out: &Path) -> ValidatedManifest {
    let m = RunManifest {
        schema_version: 1,
        experiment,
        pool,
        matrices: matrices.iter().map(|m| MatrixSource::Named(m.to_string())).collect(),
        pair_mode: PairMode::Ordered,
        concurrency: 8,
        attribution: Default::default(),
        turn3_mapping: Default::default(),
        seed: 1729,
        output_dir: out.to_path_buf(),
    };
    validate(m, out).expect("test manifest is valid")
}
