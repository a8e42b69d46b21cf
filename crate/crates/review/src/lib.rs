//! Human verification of provisional grades.
//!
//! [`ReviewState`] loads an aggregated job and exposes its submissions as
//! [`ReviewItem`]s; decisions go through the job's append-only ledger.
//! [`router`] puts the state behind a small JSON API, and
//! [`build_review_report`] renders the same information as static HTML.
//!
//! Items carry pseudonyms only. The service never opens the pseudonym map.

mod report;
mod server;

use std::collections::BTreeMap;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use scangrade::grader::PassResult;
use scangrade::job::{decisions_csv, JobDir, JobError, SubmissionSummary};
use scangrade::ledger::{
    AggregationRule, Decision, DecisionAction, DecisionRecord, Ledger, LedgerError, ScoreSummary,
};

pub use report::{build_review_report, ReportSummary};
pub use server::{router, serve, ServeOptions, DEFAULT_BIND};

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("OVERRIDE needs a final_score")]
    MissingScore,
    #[error("crop `{0}` is missing")]
    MissingCrop(String),
    #[error("cannot serve: {0}")]
    Bind(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Job(#[from] JobError),
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

impl ReviewError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            ReviewError::UnknownItem(_) => "UnknownItem",
            ReviewError::MissingScore => "MissingScore",
            ReviewError::MissingCrop(_) => "MissingCrop",
            ReviewError::Ledger(LedgerError::NoteRequired) => "NoteRequired",
            ReviewError::Ledger(LedgerError::ScoreOutOfRange(_)) => "ScoreOutOfRange",
            ReviewError::Ledger(LedgerError::AcceptMismatch { .. }) => "AcceptMismatch",
            ReviewError::Ledger(LedgerError::UnknownSubmission(_)) => "UnknownItem",
            ReviewError::Ledger(_) => "Ledger",
            ReviewError::Job(e) => e.code(),
            ReviewError::Io { .. } => "Io",
            ReviewError::Bind(_) => "Bind",
        }
    }
}

/// The latest decision on an item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionView {
    pub action: DecisionAction,
    pub final_score: u8,
    pub reviewer_id: String,
    pub note: String,
    pub timestamp: DateTime<Utc>,
    /// Ledger records for this item so far, superseded ones included.
    pub revisions: usize,
}

/// One submission as shown to a reviewer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub submission_ref: String,
    pub pseudonym: String,
    pub test_id: String,
    pub question_id: String,
    /// Service-relative URL of the answer crop.
    pub crop_url: String,
    pub crop_file: String,
    pub pass_scores: Vec<u8>,
    pub rationales: Vec<String>,
    pub alt_flags: Vec<bool>,
    pub summary: ScoreSummary,
    pub provisional_score: u8,
    pub rule: AggregationRule,
    pub decision: Option<DecisionView>,
}

impl ReviewItem {
    pub fn flagged(&self) -> bool {
        self.summary.flagged
    }

    pub fn decided(&self) -> bool {
        self.decision.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueFilter {
    #[default]
    All,
    #[serde(alias = "flagged")]
    FlaggedOnly,
    #[serde(alias = "undecided")]
    UndecidedOnly,
}

impl QueueFilter {
    fn admits(self, item: &ReviewItem) -> bool {
        match self {
            QueueFilter::All => true,
            QueueFilter::FlaggedOnly => item.flagged(),
            QueueFilter::UndecidedOnly => !item.decided(),
        }
    }
}

/// Counters over the whole job, whatever the filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub decided: usize,
    pub undecided: usize,
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewQueue {
    pub filter: QueueFilter,
    pub items: Vec<ReviewItem>,
    pub progress: Progress,
}

/// Body of `POST /api/items/{id}/decision`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPayload {
    pub action: DecisionAction,
    /// Optional for ACCEPT, where it defaults to the provisional score.
    #[serde(default)]
    pub final_score: Option<u8>,
    #[serde(default)]
    pub reviewer_id: Option<String>,
    #[serde(default)]
    pub note: String,
}

pub const DEFAULT_REVIEWER: &str = "reviewer";

/// Review order: flagged first, then larger spread, then submission ref.
pub fn review_order(a: &ReviewItem, b: &ReviewItem) -> std::cmp::Ordering {
    b.flagged()
        .cmp(&a.flagged())
        .then(b.summary.spread.cmp(&a.summary.spread))
        .then(a.submission_ref.cmp(&b.submission_ref))
}

struct Submission {
    summary: SubmissionSummary,
    passes: Vec<PassResult>,
}

/// An aggregated job opened for review.
pub struct ReviewState {
    job: JobDir,
    submissions: BTreeMap<String, Submission>,
    ledger: Mutex<Ledger>,
}

impl ReviewState {
    /// Open a job whose aggregate stage has run.
    pub fn open(job: JobDir) -> Result<Self, ReviewError> {
        let summaries = job.summaries()?;
        let mut passes: BTreeMap<String, Vec<PassResult>> = BTreeMap::new();
        if !summaries.is_empty() {
            for p in job.passes()? {
                passes.entry(p.submission_ref).or_default().push(p.pass);
            }
        }
        let ledger = job.ledger()?;
        let submissions = summaries
            .into_iter()
            .map(|s| {
                let mut p = passes.remove(&s.submission_ref).unwrap_or_default();
                p.sort_by_key(|p| p.pass_index);
                (
                    s.submission_ref.clone(),
                    Submission {
                        summary: s,
                        passes: p,
                    },
                )
            })
            .collect();
        Ok(ReviewState {
            job,
            submissions,
            ledger: Mutex::new(ledger),
        })
    }

    pub fn job(&self) -> &JobDir {
        &self.job
    }

    pub fn len(&self) -> usize {
        self.submissions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.submissions.is_empty()
    }

    /// Whether `file` is the crop of some submission in this job.
    pub fn serves_crop(&self, file: &str) -> bool {
        self.submissions
            .values()
            .any(|s| s.summary.crop_file == file)
    }

    fn build_item(s: &Submission, ledger: &Ledger) -> ReviewItem {
        let sum = &s.summary;
        let decision = ledger
            .latest(&sum.submission_ref)
            .map(|r: &DecisionRecord| DecisionView {
                action: r.action,
                final_score: r.final_score,
                reviewer_id: r.reviewer_id.clone(),
                note: r.note.clone(),
                timestamp: r.timestamp,
                revisions: ledger.history(&sum.submission_ref).len(),
            });
        ReviewItem {
            submission_ref: sum.submission_ref.clone(),
            pseudonym: sum.pseudonym.clone(),
            test_id: sum.test_id.clone(),
            question_id: sum.question_id.clone(),
            crop_url: format!("/crops/{}", sum.crop_file),
            crop_file: sum.crop_file.clone(),
            pass_scores: s.passes.iter().map(|p| p.score).collect(),
            rationales: s.passes.iter().map(|p| p.raw_text.clone()).collect(),
            alt_flags: s.passes.iter().map(|p| p.alt_flag).collect(),
            summary: sum.summary.clone(),
            provisional_score: sum.provisional_score,
            rule: sum.rule,
            decision,
        }
    }

    pub fn item(&self, id: &str) -> Option<ReviewItem> {
        let ledger = self.ledger.lock().unwrap();
        self.submissions
            .get(id)
            .map(|s| Self::build_item(s, &ledger))
    }

    /// Every item in review order.
    pub fn items(&self) -> Vec<ReviewItem> {
        let ledger = self.ledger.lock().unwrap();
        let mut items: Vec<_> = self
            .submissions
            .values()
            .map(|s| Self::build_item(s, &ledger))
            .collect();
        items.sort_by(review_order);
        items
    }

    pub fn queue(&self, filter: QueueFilter) -> ReviewQueue {
        let all = self.items();
        let decided = all.iter().filter(|i| i.decided()).count();
        let progress = Progress {
            total: all.len(),
            decided,
            undecided: all.len() - decided,
            flagged: all.iter().filter(|i| i.flagged()).count(),
        };
        ReviewQueue {
            filter,
            items: all.into_iter().filter(|i| filter.admits(i)).collect(),
            progress,
        }
    }

    /// Record a reviewer's decision. Re-sending the latest payload is a
    /// no-op that returns the same item.
    pub fn apply_decision(
        &self,
        id: &str,
        payload: DecisionPayload,
    ) -> Result<ReviewItem, ReviewError> {
        let submission = self
            .submissions
            .get(id)
            .ok_or_else(|| ReviewError::UnknownItem(id.to_string()))?;
        let provisional = submission.summary.provisional_score;
        let final_score = match (payload.action, payload.final_score) {
            (_, Some(s)) => s,
            (DecisionAction::Accept, None) => provisional,
            (DecisionAction::Override, None) => return Err(ReviewError::MissingScore),
        };
        let reviewer_id = payload
            .reviewer_id
            .filter(|r| !r.trim().is_empty())
            .unwrap_or_else(|| DEFAULT_REVIEWER.to_string());
        let mut ledger = self.ledger.lock().unwrap();
        ledger.record_decision(Decision {
            submission_ref: id.to_string(),
            action: payload.action,
            final_score,
            reviewer_id,
            note: payload.note,
            timestamp: Utc::now(),
        })?;
        Ok(Self::build_item(submission, &ledger))
    }

    /// Every decision recorded for `id`, oldest first.
    pub fn history(&self, id: &str) -> Vec<DecisionRecord> {
        self.ledger
            .lock()
            .unwrap()
            .history(id)
            .into_iter()
            .cloned()
            .collect()
    }

    /// `pseudonym,question,provisional,final,action,reviewer,timestamp`.
    pub fn export_decisions(&self) -> Result<String, ReviewError> {
        let _guard = self.ledger.lock().unwrap();
        Ok(decisions_csv(&self.job)?)
    }
}

/// Decisions CSV of a job directory, see [`ReviewState::export_decisions`].
pub fn export_decisions(job: &JobDir) -> Result<String, ReviewError> {
    Ok(decisions_csv(job)?)
}
