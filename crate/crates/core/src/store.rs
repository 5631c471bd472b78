//! Run directories and the append-only record log.
//!
//! ```text
//! <output_dir>/<run_id>/
//!     manifest.json    validated manifest, matrices inline
//!     records.jsonl    one ConversationRecord per line, in plan order
//!     summary.json     RunRecord, rewritten at start and finish
//!     run.lock         PID of the process writing the run
//! ```

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{Experiment, RunManifest};
use crate::protocol_point::GameTranscript;
use crate::protocol_workplace::WorkplaceTranscript;
use crate::scoring::{score_game, score_workplace, AttributionPolicy, EnvyTerms, WorkplaceScore};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const LOCK_FILE: &str = "run.lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPayload {
    pub attribution: AttributionPolicy,
    pub transcript: GameTranscript,
    pub scores: Option<EnvyTerms>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkplacePayload {
    pub transcript: WorkplaceTranscript,
    pub scores: Option<WorkplaceScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum Payload {
    PointAllocation(PointPayload),
    Workplace(WorkplacePayload),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordStatus {
    pub turns: usize,
    pub parse_failures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationRecord {
    pub schema_version: u32,
    /// Position in the run plan.
    pub sequence: u64,
    pub conversation_id: String,
    pub status: RecordStatus,
    pub payload: Payload,
}

/// Scores recomputed from a stored transcript.
#[derive(Debug, Clone, PartialEq)]
pub enum Rescored {
    Point(std::result::Result<EnvyTerms, String>),
    Workplace(std::result::Result<WorkplaceScore, String>),
}

fn score_point(t: &GameTranscript, attribution: AttributionPolicy) -> std::result::Result<EnvyTerms, String> {
    score_game(t, &t.matrix, attribution).map_err(|e| e.to_string())
}

fn score_dialogue(t: &WorkplaceTranscript) -> std::result::Result<WorkplaceScore, String> {
    score_workplace(&t.parsed_ratings()).map_err(|_| format!("no parsed ratings in `{}`", t.conversation_id))
}

impl ConversationRecord {
    pub fn point(sequence: u64, transcript: GameTranscript, attribution: AttributionPolicy) -> Self {
        let scored = score_point(&transcript, attribution);
        let status = RecordStatus {
            turns: transcript.turns.len(),
            parse_failures: transcript.parse_failures(),
            agent_error: transcript.failure.clone(),
        };
        let (scores, score_error) = split(scored);
        Self {
            schema_version: RECORD_SCHEMA_VERSION,
            sequence,
            conversation_id: transcript.conversation_id.clone(),
            status,
            payload: Payload::PointAllocation(PointPayload { attribution, transcript, scores, score_error }),
        }
    }

    pub fn workplace(sequence: u64, transcript: WorkplaceTranscript) -> Self {
        let scored = score_dialogue(&transcript);
        let status = RecordStatus {
            turns: transcript.turns.len(),
            parse_failures: transcript.parse_failures(),
            agent_error: transcript.failure.clone(),
        };
        let (scores, score_error) = split(scored);
        Self {
            schema_version: RECORD_SCHEMA_VERSION,
            sequence,
            conversation_id: transcript.conversation_id.clone(),
            status,
            payload: Payload::Workplace(WorkplacePayload { transcript, scores, score_error }),
        }
    }

    pub fn experiment(&self) -> Experiment {
        match self.payload {
            Payload::PointAllocation(_) => Experiment::PointAllocation,
            Payload::Workplace(_) => Experiment::Workplace,
        }
    }

    pub fn as_point(&self) -> Option<&PointPayload> {
        match &self.payload {
            Payload::PointAllocation(p) => Some(p),
            Payload::Workplace(_) => None,
        }
    }

    pub fn as_workplace(&self) -> Option<&WorkplacePayload> {
        match &self.payload {
            Payload::Workplace(p) => Some(p),
            Payload::PointAllocation(_) => None,
        }
    }

    /// Recomputes the scores from the stored transcript with the stored
    /// attribution policy.
    pub fn rescore(&self) -> Rescored {
        match &self.payload {
            Payload::PointAllocation(p) => Rescored::Point(score_point(&p.transcript, p.attribution)),
            Payload::Workplace(p) => Rescored::Workplace(score_dialogue(&p.transcript)),
        }
    }

    /// Fails with an integrity error if rescoring differs from the stored
    /// scores in any bit.
    pub fn verify(&self) -> Result<()> {
        let same = match (&self.payload, self.rescore()) {
            (Payload::PointAllocation(p), Rescored::Point(r)) => {
                let (scores, err) = split(r);
                scores == p.scores && err == p.score_error
            }
            (Payload::Workplace(p), Rescored::Workplace(r)) => {
                let (scores, err) = split(r);
                scores == p.scores && err == p.score_error
            }
            _ => false,
        };
        if same {
            Ok(())
        } else {
            Err(Error::Integrity(format!(
                "stored scores for `{}` differ from a fresh rescore of its transcript",
                self.conversation_id
            )))
        }
    }
}

fn split<T>(r: std::result::Result<T, String>) -> (Option<T>, Option<String>) {
    match r {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e)),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub conversations: usize,
    /// Turns whose response did not parse.
    pub parse_failures: usize,
    /// Conversations cut short by an agent error.
    pub agent_errors: usize,
    /// Conversations that could not be scored.
    pub unscored: usize,
}

impl RunCounts {
    pub fn add(&mut self, record: &ConversationRecord) {
        self.conversations += 1;
        self.parse_failures += record.status.parse_failures;
        self.agent_errors += usize::from(record.status.agent_error.is_some());
        let unscored = match &record.payload {
            Payload::PointAllocation(p) => p.scores.is_none(),
            Payload::Workplace(p) => p.scores.is_none(),
        };
        self.unscored += usize::from(unscored);
    }

    pub fn from_records(records: &[ConversationRecord]) -> Self {
        let mut c = Self::default();
        records.iter().for_each(|r| c.add(r));
        c
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub experiment: Experiment,
    pub started_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    /// Conversations in the full plan.
    pub planned: usize,
    pub complete: bool,
    pub counts: RunCounts,
    pub manifest: RunManifest,
}

/// A run read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub summary: RunRecord,
    pub records: Vec<ConversationRecord>,
    /// Non-fatal findings, such as a dropped trailing partial line.
    pub warnings: Vec<String>,
}

impl LoadedRun {
    pub fn manifest(&self) -> &RunManifest {
        &self.summary.manifest
    }

    pub fn record(&self, conversation_id: &str) -> Option<&ConversationRecord> {
        self.records.iter().find(|r| r.conversation_id == conversation_id)
    }
}

pub fn run_dir(output_dir: &Path, run_id: &str) -> PathBuf {
    output_dir.join(run_id)
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let ctx = || format!("writing {}", path.display());
    let mut f = File::create(&tmp).map_err(|e| Error::io(ctx(), e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(ctx(), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(ctx(), e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::CorruptRecord {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

struct RecordScan {
    records: Vec<ConversationRecord>,
    /// Byte length of the complete-line prefix.
    valid_len: u64,
    partial_tail: bool,
}

fn scan_records(path: &Path) -> Result<RecordScan> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(Error::io(format!("reading {}", path.display()), e)),
    };
    let mut records = Vec::new();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') {
        line_no += 1;
        let line = &bytes[offset..offset + nl];
        offset += nl + 1;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let record: ConversationRecord = serde_json::from_slice(line).map_err(|e| Error::CorruptRecord {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(RecordScan { records, valid_len: offset as u64, partial_tail: offset < bytes.len() })
}

/// Reads a run directory. A trailing unterminated line is reported in
/// `warnings` and excluded.
pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let summary_path = dir.join(SUMMARY_FILE);
    if !summary_path.is_file() {
        return Err(Error::RunNotFound(dir.to_path_buf()));
    }
    let summary: RunRecord = read_json(&summary_path)?;
    let records_path = dir.join(RECORDS_FILE);
    let scan = scan_records(&records_path)?;
    let mut warnings = Vec::new();
    if scan.partial_tail {
        warnings.push(format!(
            "{}: ignoring trailing partial line after record {}",
            records_path.display(),
            scan.records.len()
        ));
    }
    let counts = RunCounts::from_records(&scan.records);
    if counts != summary.counts {
        warnings.push(format!(
            "summary counts {:?} differ from the records on disk {:?}; the run did not finish cleanly",
            summary.counts, counts
        ));
    }
    Ok(LoadedRun { dir: dir.to_path_buf(), summary, records: scan.records, warnings })
}

/// Exclusive ownership of a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

fn pid_alive(pid: u32) -> bool {
    if cfg!(target_os = "linux") {
        Path::new(&format!("/proc/{pid}")).exists()
    } else {
        true
    }
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    write!(f, "{}", std::process::id()).map_err(|e| Error::io("writing lock file", e))?;
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path).ok().and_then(|s| s.trim().parse::<u32>().ok());
                    match holder {
                        Some(pid) if pid_alive(pid) => return Err(Error::RunLocked(path)),
                        // Stale: the holder is gone.
                        _ => fs::remove_file(&path).map_err(|e| Error::io("removing stale lock", e))?,
                    }
                }
                Err(e) => return Err(Error::io(format!("creating {}", path.display()), e)),
            }
        }
        Err(Error::RunLocked(path))
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// The single writer of a run directory.
pub struct RunWriter {
    dir: PathBuf,
    file: BufWriter<File>,
    summary: RunRecord,
    ids: HashSet<String>,
    _lock: RunLock,
}

impl RunWriter {
    /// Creates the run directory, or reopens it for resumption. Returns the
    /// writer and the records already persisted.
    ///
    /// Reopening with a manifest that differs from the stored one is an
    /// error, except for `concurrency` and `output_dir`.
    pub fn open(
        dir: &Path,
        run_id: &str,
        manifest: &RunManifest,
        planned: usize,
    ) -> Result<(Self, Vec<ConversationRecord>)> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let lock = RunLock::acquire(dir)?;

        let manifest_path = dir.join(MANIFEST_FILE);
        if manifest_path.is_file() {
            let stored: RunManifest = read_json(&manifest_path)?;
            let comparable = |m: &RunManifest| {
                let mut m = m.clone();
                m.concurrency = 1;
                m.output_dir = PathBuf::new();
                m
            };
            if comparable(&stored) != comparable(manifest) {
                return Err(Error::Config(format!(
                    "run `{run_id}` already exists with a different manifest; choose another run id"
                )));
            }
        } else {
            write_atomic(&manifest_path, &pretty(manifest)?)?;
        }

        let records_path = dir.join(RECORDS_FILE);
        let scan = scan_records(&records_path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&records_path)
            .map_err(|e| Error::io(format!("opening {}", records_path.display()), e))?;
        if scan.partial_tail {
            file.set_len(scan.valid_len).map_err(|e| Error::io("truncating partial record", e))?;
        }

        let started_at = match read_json::<RunRecord>(&dir.join(SUMMARY_FILE)) {
            Ok(s) => s.started_at,
            Err(_) => Utc::now(),
        };
        let summary = RunRecord {
            schema_version: RECORD_SCHEMA_VERSION,
            run_id: run_id.to_string(),
            experiment: manifest.experiment,
            started_at,
            finished_at: None,
            planned,
            complete: false,
            counts: RunCounts::from_records(&scan.records),
            manifest: manifest.clone(),
        };
        let ids = scan.records.iter().map(|r| r.conversation_id.clone()).collect();
        let writer = Self { dir: dir.to_path_buf(), file: BufWriter::new(file), summary, ids, _lock: lock };
        writer.write_summary()?;
        Ok((writer, scan.records))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn counts(&self) -> RunCounts {
        self.summary.counts
    }

    /// Appends one record and flushes it. Returns the number of records now
    /// in the file.
    pub fn append(&mut self, record: &ConversationRecord) -> Result<usize> {
        if !self.ids.insert(record.conversation_id.clone()) {
            return Err(Error::Integrity(format!("conversation `{}` is already persisted", record.conversation_id)));
        }
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(format!("appending to {}", self.dir.join(RECORDS_FILE).display()), e))?;
        self.summary.counts.add(record);
        Ok(self.summary.counts.conversations)
    }

    fn write_summary(&self) -> Result<()> {
        write_atomic(&self.dir.join(SUMMARY_FILE), &pretty(&self.summary)?)
    }

    /// Syncs the record file and rewrites the summary.
    pub fn finish(mut self) -> Result<RunRecord> {
        self.file.flush().map_err(|e| Error::io("flushing records", e))?;
        self.file.get_ref().sync_all().map_err(|e| Error::io("syncing records", e))?;
        self.summary.complete = self.summary.counts.conversations >= self.summary.planned;
        self.summary.finished_at = Some(Utc::now());
        self.write_summary()?;
        Ok(self.summary.clone())
    }
}

fn pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}
