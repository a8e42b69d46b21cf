//! Job directories and the pipeline stages that fill them.
//!
//! A job directory holds every artifact of one grading run:
//!
//! | path | written by |
//! |---|---|
//! | `job.json` | every stage (manifest) |
//! | `crops/`, `crops.json`, `ids.csv`, `roster.json` | ingest |
//! | `cache/`, `passes.jsonl`, `requests.log.jsonl` | grade |
//! | `summaries.json` | aggregate |
//! | `ledger.jsonl` | review decisions |
//! | `report/` | report |
//! | `export/` | export |
//!
//! The pseudonym map never lives here. Stages are idempotent: rerunning a
//! stage with unchanged inputs reproduces its outputs, and the grade stage
//! only calls the provider for passes missing from its cache.

mod aggregate;
pub mod config;
mod export;
mod grade;
mod ingest;
mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bubble::IdError;
use crate::geometry::Rect;
use crate::grader::{PassResult, ProviderError};
use crate::keybank::KeyError;
use crate::ledger::{AggregationRule, Ledger, LedgerError, ScoreSummary};
use crate::sheet::SheetError;

pub use aggregate::run_aggregate;
pub use config::{JobConfig, ProviderKind};
pub use export::{collect_outcomes, decisions_csv, run_export, ExportOptions, ExportSummary};
pub use grade::{build_provider, run_grade, run_grade_with, GradeSummary};
pub use ingest::{digest_files, run_ingest, IngestSummary, PageStatus};
pub use manifest::{Manifest, StageRecord, StageStatus, SubmissionState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Grade,
    Aggregate,
    Report,
    Export,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Grade => "grade",
            Stage::Aggregate => "aggregate",
            Stage::Report => "report",
            Stage::Export => "export",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum JobError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Malformed { path: PathBuf, message: String },
    #[error("{} is missing; run the {stage} stage first", path.display())]
    MissingStage { path: PathBuf, stage: Stage },
    #[error("environment variable {0} is not set")]
    MissingEnv(String),
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("{failed} of {total} passes failed; first failure: {first}")]
    GradingIncomplete {
        failed: usize,
        total: usize,
        first: String,
    },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Sheet(#[from] SheetError),
    #[error(transparent)]
    Id(#[from] IdError),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

impl JobError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        JobError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            JobError::Config(_) => "CONFIG",
            JobError::Io { .. } => "IO",
            JobError::Malformed { .. } => "MALFORMED_ARTIFACT",
            JobError::MissingStage { .. } => "MISSING_STAGE",
            JobError::MissingEnv(_) => "MISSING_ENV",
            JobError::Integrity(_) => "INTEGRITY",
            JobError::GradingIncomplete { .. } => "GRADING_INCOMPLETE",
            JobError::Provider(_) => "PROVIDER",
            JobError::Sheet(_) => "SHEET",
            JobError::Id(_) => "BUBBLE_ID",
            JobError::Key(KeyError::LintFailed { .. }) => "KEY_LINT",
            JobError::Key(_) => "KEYBANK",
            JobError::Ledger(LedgerError::Undecided { .. }) => "UNDECIDED",
            JobError::Ledger(LedgerError::MapCrypto(_)) => "PSEUDONYM_MAP",
            JobError::Ledger(_) => "LEDGER",
        }
    }
}

/// One anonymised answer crop, as indexed in `crops.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropRecord {
    pub submission_ref: String,
    pub pseudonym: String,
    pub test_id: String,
    pub question_id: String,
    /// File name under `crops/`.
    pub file: String,
    /// SHA-256 over the raw pixel bytes.
    pub content_hash: String,
    /// Template coordinates of the answer box.
    pub source_rect: Rect,
    /// Scan file name the crop came from.
    pub page: String,
}

/// One line of `passes.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassRecord {
    pub submission_ref: String,
    pub test_id: String,
    pub question_id: String,
    #[serde(flatten)]
    pub pass: PassResult,
}

/// Aggregated passes of one submission, as stored in `summaries.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionSummary {
    pub submission_ref: String,
    pub pseudonym: String,
    pub test_id: String,
    pub question_id: String,
    pub crop_file: String,
    pub rule: AggregationRule,
    pub provisional_score: u8,
    pub provisional_max: u8,
    pub provisional_median: u8,
    pub summary: ScoreSummary,
    /// Passes that reported an alternative solution approach.
    pub alt_flags: usize,
    pub model_id: String,
}

/// Paths and loaders for one job directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobDir {
    root: PathBuf,
}

impl JobDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        JobDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("job.json")
    }

    pub fn crops_dir(&self) -> PathBuf {
        self.root.join("crops")
    }

    pub fn crops_index(&self) -> PathBuf {
        self.root.join("crops.json")
    }

    pub fn ids_csv(&self) -> PathBuf {
        self.root.join("ids.csv")
    }

    /// Sorted pseudonyms of everyone on the roster.
    pub fn roster_path(&self) -> PathBuf {
        self.root.join("roster.json")
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn passes_path(&self) -> PathBuf {
        self.root.join("passes.jsonl")
    }

    pub fn request_log(&self) -> PathBuf {
        self.root.join("requests.log.jsonl")
    }

    pub fn summaries_path(&self) -> PathBuf {
        self.root.join("summaries.json")
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.root.join("ledger.jsonl")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn export_dir(&self) -> PathBuf {
        self.root.join("export")
    }

    pub fn manifest(&self) -> Result<Manifest, JobError> {
        read_json(&self.manifest_path(), Stage::Ingest)
    }

    pub fn crops(&self) -> Result<Vec<CropRecord>, JobError> {
        read_json(&self.crops_index(), Stage::Ingest)
    }

    pub fn roster_pseudonyms(&self) -> Result<Vec<String>, JobError> {
        read_json(&self.roster_path(), Stage::Ingest)
    }

    pub fn passes(&self) -> Result<Vec<PassRecord>, JobError> {
        let path = self.passes_path();
        let text = read_required(&path, Stage::Grade)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l).map_err(|e| JobError::Malformed {
                    path: path.clone(),
                    message: e.to_string(),
                })
            })
            .collect()
    }

    pub fn summaries(&self) -> Result<Vec<SubmissionSummary>, JobError> {
        read_json(&self.summaries_path(), Stage::Aggregate)
    }

    /// The decision ledger, keyed to the aggregated provisional scores.
    pub fn ledger(&self) -> Result<Ledger, JobError> {
        let provisional: BTreeMap<String, u8> = self
            .summaries()?
            .into_iter()
            .map(|s| (s.submission_ref, s.provisional_score))
            .collect();
        Ok(Ledger::open(self.ledger_path(), provisional)?)
    }

    /// Absolute path of a crop file, refusing anything outside `crops/`.
    pub fn crop_file(&self, file: &str) -> Option<PathBuf> {
        let valid = !file.is_empty()
            && file
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
            && !file.starts_with('.')
            && !file.contains("..");
        valid.then(|| self.crops_dir().join(file))
    }
}

fn read_required(path: &Path, stage: Stage) -> Result<String, JobError> {
    match std::fs::read_to_string(path) {
        Ok(t) => Ok(t),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(JobError::MissingStage {
            path: path.to_path_buf(),
            stage,
        }),
        Err(e) => Err(JobError::io(path, e)),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path, stage: Stage) -> Result<T, JobError> {
    let text = read_required(path, stage)?;
    serde_json::from_str(&text).map_err(|e| JobError::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Write via a temporary sibling and rename, so readers never see a
/// half-written file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), JobError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| JobError::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| JobError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| JobError::io(path, e))
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), JobError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serialises");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Worker count: the configured value, or the machine's parallelism for 0.
pub(crate) fn worker_count(configured: usize, jobs: usize) -> usize {
    let n = if configured == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        configured
    };
    n.clamp(1, jobs.max(1))
}

/// Run `f` over `items` on `workers` threads; results keep input order.
pub(crate) fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_file_stays_inside_crops() {
        let j = JobDir::new("/job");
        assert_eq!(
            j.crop_file("ab12_q1.png"),
            Some(PathBuf::from("/job/crops/ab12_q1.png"))
        );
        for bad in ["../job.json", "a/b.png", "", ".hidden", "x..png", "%2e%2e"] {
            assert_eq!(j.crop_file(bad), None, "{bad}");
        }
    }

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u32> = (0..100).collect();
        let out = parallel_map(&items, 7, |x| x * 2);
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn missing_artifacts_name_their_stage() {
        let dir = tempfile::tempdir().unwrap();
        let j = JobDir::new(dir.path());
        assert!(matches!(
            j.summaries(),
            Err(JobError::MissingStage {
                stage: Stage::Aggregate,
                ..
            })
        ));
        assert!(matches!(
            j.passes(),
            Err(JobError::MissingStage {
                stage: Stage::Grade,
                ..
            })
        ));
    }
}
