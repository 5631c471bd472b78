//! Plans and executes a run: a point-allocation tournament or a workplace
//! sweep.
//!
//! Conversations run on a bounded pool of worker threads. Finished records
//! pass through a channel to a single writer that persists them in plan
//! order, so the record file is always a prefix of the full plan and two
//! runs with the same manifest produce identical files.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use crate::agents::{Agent, AgentSpec};
use crate::error::{Error, Result};
use crate::manifest::{validate, Experiment, MatrixSource, RunManifest, ValidatedManifest, DEFAULT_CONCURRENCY, SCHEMA_VERSION};
use crate::payoff::PayoffMatrix;
use crate::protocol_point::{conversation_id, pairs, run_conversation, scenario_grid, ConversationSetup, PairMode, Scenario};
use crate::protocol_workplace::{run_workplace, workplace_conversation_id, WorkplaceSetup};
use crate::store::{run_dir, ConversationRecord, RunCounts, RunWriter};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JobKind {
    Point { focal: usize, peer: usize, matrix: usize, scenario: Scenario },
    Workplace { focal: usize, competitor: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Job {
    pub sequence: u64,
    pub conversation_id: String,
    pub kind: JobKind,
}

/// Every conversation of the run in persistence order: matrix, then pair,
/// then scenario for point runs; focal-major over all n² pairs (self
/// included) for workplace runs.
pub fn plan(validated: &ValidatedManifest) -> Vec<Job> {
    let m = &validated.manifest;
    let mut jobs = Vec::new();
    match m.experiment {
        Experiment::PointAllocation => {
            for (mi, matrix) in validated.matrices.iter().enumerate() {
                for (focal, peer) in pairs(m.pool.len(), m.pair_mode) {
                    for scenario in scenario_grid(matrix.id()) {
                        jobs.push(Job {
                            sequence: jobs.len() as u64,
                            conversation_id: conversation_id(&scenario, &m.pool[focal].id, &m.pool[peer].id),
                            kind: JobKind::Point { focal, peer, matrix: mi, scenario },
                        });
                    }
                }
            }
        }
        Experiment::Workplace => {
            let n = m.pool.len();
            for focal in 0..n {
                for competitor in 0..n {
                    jobs.push(Job {
                        sequence: jobs.len() as u64,
                        conversation_id: workplace_conversation_id(&m.pool[focal].id, &m.pool[competitor].id),
                        kind: JobKind::Workplace { focal, competitor },
                    });
                }
            }
        }
    }
    jobs
}

/// Closed-form conversation count for a pool of `n` agents.
pub fn expected_conversations(experiment: Experiment, n: usize, matrices: usize, mode: PairMode) -> usize {
    match experiment {
        Experiment::PointAllocation => pairs(n, mode).len() * 16 * matrices,
        Experiment::Workplace => n * n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    /// Records persisted, including those from earlier sessions.
    pub persisted: usize,
    pub planned: usize,
    pub parse_failures: usize,
    pub agent_errors: usize,
}

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Overrides the manifest-derived run id.
    pub run_id: Option<String>,
    /// Persist at most this many new conversations, then stop cleanly.
    pub stop_after: Option<usize>,
    pub progress: Option<&'a (dyn Fn(&Progress) + Sync)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub run_id: String,
    pub dir: PathBuf,
    pub planned: usize,
    /// Conversations found on disk and skipped.
    pub resumed: usize,
    /// Conversations executed in this session.
    pub executed: usize,
    pub complete: bool,
    pub counts: RunCounts,
}

/// Runs (or resumes) the manifest. Per-conversation failures are recorded,
/// not raised; only store failures abort.
pub fn execute(validated: &ValidatedManifest, options: RunOptions<'_>) -> Result<RunOutcome> {
    let manifest = &validated.manifest;
    let run_id = options.run_id.clone().unwrap_or_else(|| validated.default_run_id());
    let dir = run_dir(&manifest.output_dir, &run_id);
    let jobs = plan(validated);
    let planned = jobs.len();

    let agents: Vec<Arc<dyn Agent>> = manifest.pool.iter().map(|a| a.build()).collect::<Result<_>>()?;
    let (mut writer, existing) = RunWriter::open(&dir, &run_id, &validated.snapshot(), planned)?;
    let done: HashSet<&str> = existing.iter().map(|r| r.conversation_id.as_str()).collect();
    let mut todo: Vec<&Job> = jobs.iter().filter(|j| !done.contains(j.conversation_id.as_str())).collect();
    if let Some(limit) = options.stop_after {
        todo.truncate(limit);
    }
    let resumed = existing.len();

    let report = |w: &RunWriter| {
        if let Some(cb) = options.progress {
            let c = w.counts();
            cb(&Progress {
                persisted: c.conversations,
                planned,
                parse_failures: c.parse_failures,
                agent_errors: c.agent_errors,
            });
        }
    };

    let displays: Vec<&str> = manifest.pool.iter().map(|a| a.display_name()).collect();
    let run_job = |job: &Job| -> ConversationRecord {
        match &job.kind {
            JobKind::Point { focal, peer, matrix, scenario } => {
                let setup = ConversationSetup {
                    focal_id: &manifest.pool[*focal].id,
                    peer_id: &manifest.pool[*peer].id,
                    peer_display: displays[*peer],
                    matrix: &validated.matrices[*matrix],
                    scenario: scenario.clone(),
                    mapping: manifest.turn3_mapping,
                    run_seed: manifest.seed,
                };
                let t = run_conversation(agents[*focal].as_ref(), &setup);
                ConversationRecord::point(job.sequence, t, manifest.attribution)
            }
            JobKind::Workplace { focal, competitor } => {
                let colleagues: Vec<String> = displays
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i != focal)
                    .map(|(_, d)| d.to_string())
                    .collect();
                let setup = WorkplaceSetup {
                    focal_id: &manifest.pool[*focal].id,
                    focal_display: displays[*focal],
                    competitor_id: &manifest.pool[*competitor].id,
                    competitor_display: displays[*competitor],
                    colleagues: &colleagues,
                    run_seed: manifest.seed,
                };
                ConversationRecord::workplace(job.sequence, run_workplace(agents[*focal].as_ref(), &setup))
            }
        }
    };

    let workers = manifest.concurrency.max(1).min(todo.len().max(1));
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let mut executed = 0;

    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::channel::<(usize, ConversationRecord)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, abort, todo, run_job) = (&next, &abort, &todo, &run_job);
            scope.spawn(move || loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = todo.get(i) else { break };
                if tx.send((i, run_job(job))).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending = BTreeMap::new();
        let mut want = 0usize;
        for (i, record) in rx {
            pending.insert(i, record);
            while let Some(record) = pending.remove(&want) {
                if let Err(e) = writer.append(&record) {
                    abort.store(true, Ordering::Relaxed);
                    return Err(e);
                }
                want += 1;
                executed += 1;
                report(&writer);
            }
        }
        Ok(())
    })?;

    let summary = writer.finish()?;
    Ok(RunOutcome {
        run_id,
        dir,
        planned,
        resumed,
        executed,
        complete: summary.complete,
        counts: summary.counts,
    })
}

fn adhoc(
    experiment: Experiment,
    pool: Vec<AgentSpec>,
    matrices: &[PayoffMatrix],
    mode: PairMode,
    output_dir: &Path,
    seed: u64,
) -> Result<RunOutcome> {
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        experiment,
        pool,
        matrices: matrices
            .iter()
            .map(|m| serde_json::to_value(m).map(MatrixSource::Inline))
            .collect::<std::result::Result<_, _>>()?,
        pair_mode: mode,
        concurrency: DEFAULT_CONCURRENCY,
        attribution: Default::default(),
        turn3_mapping: Default::default(),
        seed,
        output_dir: output_dir.to_path_buf(),
    };
    let validated = validate(manifest, output_dir).map_err(Error::InvalidManifest)?;
    execute(&validated, RunOptions::default())
}

/// Point-allocation tournament over `pool` with default settings, persisted
/// under `output_dir`.
pub fn run_tournament(
    pool: Vec<AgentSpec>,
    matrices: &[PayoffMatrix],
    mode: PairMode,
    output_dir: &Path,
    seed: u64,
) -> Result<RunOutcome> {
    adhoc(Experiment::PointAllocation, pool, matrices, mode, output_dir, seed)
}

/// Workplace dialogue for every ordered pair of `pool`, self-pairs included.
pub fn run_workplace_sweep(pool: Vec<AgentSpec>, output_dir: &Path, seed: u64) -> Result<RunOutcome> {
    adhoc(Experiment::Workplace, pool, &[], PairMode::Ordered, output_dir, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{PolicyName, PolicySpec};
    use crate::payoff::{builtin_matrix, OptionId};
    use crate::store::load_run;

    fn pool(n: usize) -> Vec<AgentSpec> {
        (0..n)
            .map(|i| {
                let policy = match i % 4 {
                    0 => PolicySpec::constant_choice(OptionId::B),
                    1 => PolicySpec::new(PolicyName::MaxSelf),
                    2 => PolicySpec::fehr_schmidt(1.0, 0.5),
                    _ => PolicySpec::new(PolicyName::SeededRandom),
                };
                AgentSpec::scripted(format!("agent{i}"), policy)
            })
            .collect()
    }

    fn manifest(n: usize, matrices: &[&str], out: &std::path::Path) -> ValidatedManifest {
        let m = RunManifest {
            schema_version: 1,
            experiment: Experiment::PointAllocation,
            pool: pool(n),
            matrices: matrices.iter().map(|m| MatrixSource::Named(m.to_string())).collect(),
            pair_mode: PairMode::Ordered,
            concurrency: 3,
            attribution: Default::default(),
            turn3_mapping: Default::default(),
            seed: 5,
            output_dir: out.to_path_buf(),
        };
        validate(m, out).unwrap()
    }

    #[test]
    fn plan_counts_match_closed_form() {
        let tmp = tempfile::tempdir().unwrap();
        for n in 2..=8 {
            for k in 1..=3 {
                let v = manifest(n, &["M1", "M2", "M3"][..k], tmp.path());
                assert_eq!(plan(&v).len(), expected_conversations(Experiment::PointAllocation, n, k, PairMode::Ordered));
                assert_eq!(plan(&v).len(), n * (n - 1) * 16 * k);
            }
        }
        let mut v = manifest(3, &["M1"], tmp.path());
        v.manifest.pair_mode = PairMode::Unordered;
        assert_eq!(plan(&v).len(), 48);
    }

    #[test]
    fn plan_ids_unique() {
        let tmp = tempfile::tempdir().unwrap();
        let v = manifest(4, &["M1", "M3"], tmp.path());
        let jobs = plan(&v);
        let ids: HashSet<_> = jobs.iter().map(|j| &j.conversation_id).collect();
        assert_eq!(ids.len(), jobs.len());
    }

    #[test]
    fn stop_and_resume_matches_uninterrupted() {
        let tmp = tempfile::tempdir().unwrap();
        let v = manifest(3, &["M1"], tmp.path());

        let full = execute(&v, RunOptions { run_id: Some("full".into()), ..Default::default() }).unwrap();
        assert!(full.complete);
        assert_eq!(full.executed, 96);

        let part = execute(&v, RunOptions { run_id: Some("split".into()), stop_after: Some(40), ..Default::default() }).unwrap();
        assert!(!part.complete);
        assert_eq!(part.executed, 40);
        let rest = execute(&v, RunOptions { run_id: Some("split".into()), ..Default::default() }).unwrap();
        assert_eq!(rest.resumed, 40);
        assert_eq!(rest.executed, 56);
        assert!(rest.complete);

        let a = std::fs::read(full.dir.join("records.jsonl")).unwrap();
        let b = std::fs::read(rest.dir.join("records.jsonl")).unwrap();
        assert_eq!(a, b);
        assert_eq!(load_run(&rest.dir).unwrap().summary.counts.conversations, 96);
    }

    #[test]
    fn adhoc_wrappers() {
        let tmp = tempfile::tempdir().unwrap();
        let m1 = builtin_matrix("M1").unwrap();
        let out = run_tournament(pool(3), &[m1], PairMode::Unordered, tmp.path(), 1).unwrap();
        assert_eq!(out.counts.conversations, 48);
        let raters = (0..3)
            .map(|i| AgentSpec::scripted(format!("r{i}"), PolicySpec::constant_rater(2)))
            .collect();
        let out = run_workplace_sweep(raters, tmp.path(), 1).unwrap();
        assert_eq!(out.counts.conversations, 9);
    }

    #[test]
    fn progress_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        let v = manifest(2, &["M2"], tmp.path());
        let seen = std::sync::Mutex::new(Vec::new());
        let cb = |p: &Progress| seen.lock().unwrap().push(p.persisted);
        execute(&v, RunOptions { progress: Some(&cb), ..Default::default() }).unwrap();
        assert_eq!(*seen.lock().unwrap(), (1..=32).collect::<Vec<_>>());
    }
}
