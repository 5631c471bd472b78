//! Run manifests: the JSON document that fully describes an experiment.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "experiment": "point_allocation",
//!   "pool": [
//!     {"id": "always-b", "kind": "scripted",
//!      "policy": {"name": "constant_choice", "params": {"option": "B"}}},
//!     {"id": "greedy", "kind": "scripted", "policy": {"name": "max_self"}}
//!   ],
//!   "matrices": ["M1", "M2", "M3"]
//! }
//! ```
//!
//! `matrices` entries are built-in ids, paths to a matrix JSON file
//! (relative to the manifest), or inline matrix objects.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentKind, AgentSpec};
use crate::error::{Error, Result};
use crate::payoff::{builtin_matrix, PayoffMatrix, BUILTIN_IDS};
use crate::protocol_point::{PairMode, Turn3Mapping};
use crate::scoring::AttributionPolicy;
use crate::seed::fnv1a;

pub const SCHEMA_VERSION: u32 = 1;

/// Seed used when a manifest does not set one.
pub const DEFAULT_SEED: u64 = 1729;

pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    PointAllocation,
    Workplace,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::PointAllocation => "point_allocation",
            Experiment::Workplace => "workplace",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSource {
    /// A built-in id or a path to a matrix file.
    Named(String),
    Inline(serde_json::Value),
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_concurrency() -> usize {
    DEFAULT_CONCURRENCY
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    pub experiment: Experiment,
    pub pool: Vec<AgentSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub matrices: Vec<MatrixSource>,
    #[serde(default)]
    pub pair_mode: PairMode,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub attribution: AttributionPolicy,
    #[serde(default)]
    pub turn3_mapping: Turn3Mapping,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Parent directory of run directories.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

/// One validation failure, located by a JSON path such as
/// `$.pool[2].policy.params.alpha`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// A manifest that passed validation, with its matrices loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedManifest {
    pub manifest: RunManifest,
    pub matrices: Vec<PayoffMatrix>,
}

impl ValidatedManifest {
    /// The manifest with every matrix written inline, so the run directory
    /// does not depend on files next to the original manifest.
    pub fn snapshot(&self) -> RunManifest {
        let mut m = self.manifest.clone();
        m.matrices = self
            .matrices
            .iter()
            .map(|mx| {
                if mx.is_builtin() {
                    MatrixSource::Named(mx.id().to_string())
                } else {
                    MatrixSource::Inline(serde_json::to_value(mx).unwrap_or_default())
                }
            })
            .collect();
        m
    }

    /// Deterministic run id derived from everything that affects records.
    /// Concurrency and output location are excluded.
    pub fn default_run_id(&self) -> String {
        let mut m = self.snapshot();
        m.concurrency = 1;
        m.output_dir = default_output_dir();
        let canonical = serde_json::to_string(&m).unwrap_or_default();
        format!("{}-{:016x}", m.experiment, fnv1a(canonical.as_bytes()))
    }
}

fn schema_path(path: &serde_path_to_error::Path) -> String {
    let p = path.to_string();
    if p == "." || p.is_empty() {
        "$".into()
    } else {
        format!("$.{p}")
    }
}

/// Parses manifest text. Schema errors carry the offending path.
pub fn parse_manifest(text: &str) -> std::result::Result<RunManifest, Vec<Violation>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = schema_path(e.path());
        vec![Violation::new(path, e.into_inner().to_string())]
    })
}

/// Reads, parses and validates a manifest file. Relative matrix paths are
/// resolved against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<ValidatedManifest> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
    let manifest = parse_manifest(&text).map_err(Error::InvalidManifest)?;
    let base = path.parent().unwrap_or(Path::new("."));
    validate(manifest, base).map_err(Error::InvalidManifest)
}

/// Checks everything that can be checked without network or disk writes.
pub fn validate(manifest: RunManifest, base_dir: &Path) -> std::result::Result<ValidatedManifest, Vec<Violation>> {
    let mut v = Vec::new();

    if manifest.schema_version != SCHEMA_VERSION {
        v.push(Violation::new(
            "$.schema_version",
            format!("unsupported schema version {} (expected {SCHEMA_VERSION})", manifest.schema_version),
        ));
    }
    if manifest.concurrency == 0 {
        v.push(Violation::new("$.concurrency", "concurrency must be at least 1"));
    }
    check_pool(&manifest, &mut v);
    let matrices = check_matrices(&manifest, base_dir, &mut v);

    if v.is_empty() {
        Ok(ValidatedManifest { manifest, matrices })
    } else {
        Err(v)
    }
}

fn check_pool(manifest: &RunManifest, v: &mut Vec<Violation>) {
    let min = match manifest.experiment {
        Experiment::PointAllocation => 2,
        Experiment::Workplace => 1,
    };
    if manifest.pool.len() < min {
        v.push(Violation::new(
            "$.pool",
            format!("{} runs need at least {min} agent(s), got {}", manifest.experiment, manifest.pool.len()),
        ));
    }

    for (i, agent) in manifest.pool.iter().enumerate() {
        let at = |field: &str| format!("$.pool[{i}]{field}");
        if agent.id.is_empty()
            || !agent.id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        {
            v.push(Violation::new(at(".id"), format!("agent id `{}` must be non-empty ASCII letters, digits, `-`, `_` or `.`", agent.id)));
        }
        if manifest.pool[..i].iter().any(|a| a.id == agent.id) {
            v.push(Violation::new(at(".id"), format!("duplicate agent id `{}`", agent.id)));
        }

        match agent.kind {
            AgentKind::Scripted => {
                if agent.endpoint.is_some() {
                    v.push(Violation::new(at(".endpoint"), "scripted agents take no endpoint"));
                }
                let Some(policy) = &agent.policy else {
                    v.push(Violation::new(at(".policy"), "scripted agents require a policy"));
                    continue;
                };
                if let Err(errs) = policy.resolve() {
                    for (field, msg) in errs {
                        v.push(Violation::new(at(&format!(".policy.{field}")), msg));
                    }
                }
                let supported = match manifest.experiment {
                    Experiment::PointAllocation => policy.name.plays_games(),
                    Experiment::Workplace => policy.name.rates_workplace(),
                };
                if !supported {
                    v.push(Violation::new(
                        at(".policy.name"),
                        format!("policy {:?} cannot take part in a {} run", policy.name, manifest.experiment),
                    ));
                }
            }
            AgentKind::Remote => {
                if agent.policy.is_some() {
                    v.push(Violation::new(at(".policy"), "remote agents take no policy"));
                }
                let Some(ep) = &agent.endpoint else {
                    v.push(Violation::new(at(".endpoint"), "remote agents require an endpoint"));
                    continue;
                };
                if !(ep.base_url.starts_with("http://") || ep.base_url.starts_with("https://")) {
                    v.push(Violation::new(at(".endpoint.base_url"), "base_url must start with http:// or https://"));
                }
                if ep.model.trim().is_empty() {
                    v.push(Violation::new(at(".endpoint.model"), "model must not be empty"));
                }
                if let Some(var) = &ep.token_env {
                    if std::env::var_os(var).is_none() {
                        v.push(Violation::new(at(".endpoint.token_env"), format!("environment variable `{var}` is not set")));
                    }
                }
                if !(ep.timeout_secs.is_finite() && ep.timeout_secs > 0.0) {
                    v.push(Violation::new(at(".endpoint.timeout_secs"), "timeout_secs must be positive"));
                }
                if !(ep.backoff_factor.is_finite() && ep.backoff_factor >= 1.0) {
                    v.push(Violation::new(at(".endpoint.backoff_factor"), "backoff_factor must be >= 1"));
                }
                if !(0.0..1.0).contains(&ep.jitter) {
                    v.push(Violation::new(at(".endpoint.jitter"), "jitter must be in [0, 1)"));
                }
                if ep.max_concurrent_requests == Some(0) {
                    v.push(Violation::new(at(".endpoint.max_concurrent_requests"), "must be at least 1"));
                }
                if let Some(t) = ep.temperature {
                    if !(t.is_finite() && t >= 0.0) {
                        v.push(Violation::new(at(".endpoint.temperature"), "temperature must be a non-negative number"));
                    }
                }
            }
        }
    }
}

fn check_matrices(manifest: &RunManifest, base_dir: &Path, v: &mut Vec<Violation>) -> Vec<PayoffMatrix> {
    match manifest.experiment {
        Experiment::Workplace => {
            if !manifest.matrices.is_empty() {
                v.push(Violation::new("$.matrices", "workplace runs do not use payoff matrices"));
            }
            return Vec::new();
        }
        Experiment::PointAllocation if manifest.matrices.is_empty() => {
            v.push(Violation::new("$.matrices", "point_allocation runs need at least one matrix"));
            return Vec::new();
        }
        Experiment::PointAllocation => {}
    }

    let mut out: Vec<PayoffMatrix> = Vec::new();
    for (i, source) in manifest.matrices.iter().enumerate() {
        let at = format!("$.matrices[{i}]");
        let loaded = match source {
            MatrixSource::Named(name) if BUILTIN_IDS.contains(&name.as_str()) => builtin_matrix(name),
            MatrixSource::Named(name) if name.ends_with(".json") => load_matrix_file(&base_dir.join(name)),
            MatrixSource::Named(name) => Err(Error::Config(format!(
                "`{name}` is neither a built-in matrix ({}) nor a .json path",
                BUILTIN_IDS.join(", ")
            ))),
            MatrixSource::Inline(value) => {
                serde_json::from_value::<PayoffMatrix>(value.clone()).map_err(Error::Json)
            }
        };
        match loaded {
            Ok(m) if out.iter().any(|o| o.id() == m.id()) => {
                v.push(Violation::new(at, format!("duplicate matrix id `{}`", m.id())));
            }
            Ok(m) if m.id().contains('/') || m.id().is_empty() => {
                v.push(Violation::new(at, format!("matrix id `{}` must be non-empty and contain no `/`", m.id())));
            }
            Ok(m) => out.push(m),
            Err(e) => v.push(Violation::new(at, e.to_string())),
        }
    }
    out
}

fn load_matrix_file(path: &Path) -> Result<PayoffMatrix> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading matrix file {}", path.display()), e))?;
    Ok(serde_json::from_str(&text)?)
}
