use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::LedgerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DecisionAction {
    Accept,
    Override,
}

impl std::fmt::Display for DecisionAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DecisionAction::Accept => "ACCEPT",
            DecisionAction::Override => "OVERRIDE",
        })
    }
}

/// A reviewer's verdict on one submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub submission_ref: String,
    pub action: DecisionAction,
    pub final_score: u8,
    pub reviewer_id: String,
    #[serde(default)]
    pub note: String,
    pub timestamp: DateTime<Utc>,
}

/// One line of the ledger file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub sequence: u64,
    pub submission_ref: String,
    pub action: DecisionAction,
    pub provisional_score: u8,
    pub final_score: u8,
    pub reviewer_id: String,
    pub note: String,
    pub timestamp: DateTime<Utc>,
}

impl DecisionRecord {
    fn same_payload(&self, d: &Decision) -> bool {
        self.action == d.action
            && self.final_score == d.final_score
            && self.reviewer_id == d.reviewer_id
            && self.note == d.note
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Recorded {
    Appended(DecisionRecord),
    /// The latest decision already had this payload; nothing was written.
    Unchanged(DecisionRecord),
}

impl Recorded {
    pub fn record(&self) -> &DecisionRecord {
        match self {
            Recorded::Appended(r) | Recorded::Unchanged(r) => r,
        }
    }
}

/// Append-only decision log for one job. The latest record per submission
/// is authoritative; earlier ones stay in the file as the audit trail.
#[derive(Debug)]
pub struct Ledger {
    path: PathBuf,
    provisional: BTreeMap<String, u8>,
    records: Vec<DecisionRecord>,
}

impl Ledger {
    /// Open (or start) the ledger at `path` for submissions with the given
    /// provisional scores.
    pub fn open(
        path: impl Into<PathBuf>,
        provisional: BTreeMap<String, u8>,
    ) -> Result<Self, LedgerError> {
        let path = path.into();
        let records = Self::read_records(&path)?;
        Ok(Ledger {
            path,
            provisional,
            records,
        })
    }

    /// All records in file order. A missing file is an empty ledger.
    pub fn read_records(path: &Path) -> Result<Vec<DecisionRecord>, LedgerError> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(vec![]),
            Err(e) => return Err(e.into()),
        };
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| LedgerError::Corrupt {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn provisional(&self, submission_ref: &str) -> Option<u8> {
        self.provisional.get(submission_ref).copied()
    }

    pub fn records(&self) -> &[DecisionRecord] {
        &self.records
    }

    pub fn history(&self, submission_ref: &str) -> Vec<&DecisionRecord> {
        self.records
            .iter()
            .filter(|r| r.submission_ref == submission_ref)
            .collect()
    }

    pub fn latest(&self, submission_ref: &str) -> Option<&DecisionRecord> {
        self.records
            .iter()
            .rev()
            .find(|r| r.submission_ref == submission_ref)
    }

    pub fn latest_decisions(&self) -> BTreeMap<String, DecisionRecord> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            out.insert(r.submission_ref.clone(), r.clone());
        }
        out
    }

    pub fn record_decision(&mut self, decision: Decision) -> Result<Recorded, LedgerError> {
        let provisional = self
            .provisional(&decision.submission_ref)
            .ok_or_else(|| LedgerError::UnknownSubmission(decision.submission_ref.clone()))?;
        if decision.final_score > 10 {
            return Err(LedgerError::ScoreOutOfRange(decision.final_score));
        }
        match decision.action {
            DecisionAction::Accept if decision.final_score != provisional => {
                return Err(LedgerError::AcceptMismatch {
                    provisional,
                    final_score: decision.final_score,
                })
            }
            DecisionAction::Override if decision.note.trim().is_empty() => {
                return Err(LedgerError::NoteRequired)
            }
            _ => {}
        }
        if let Some(latest) = self.latest(&decision.submission_ref) {
            if latest.same_payload(&decision) {
                return Ok(Recorded::Unchanged(latest.clone()));
            }
        }
        let record = DecisionRecord {
            sequence: self.records.last().map_or(1, |r| r.sequence + 1),
            submission_ref: decision.submission_ref,
            action: decision.action,
            provisional_score: provisional,
            final_score: decision.final_score,
            reviewer_id: decision.reviewer_id,
            note: decision.note,
            timestamp: decision.timestamp,
        };
        if let Some(parent) = self.path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        let line = serde_json::to_string(&record).expect("record serialises");
        writeln!(file, "{line}")?;
        file.sync_data()?;
        self.records.push(record.clone());
        Ok(Recorded::Appended(record))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger(dir: &Path) -> Ledger {
        let provisional = [("a_Q1".to_string(), 7), ("b_Q1".to_string(), 3)]
            .into_iter()
            .collect();
        Ledger::open(dir.join("ledger.jsonl"), provisional).unwrap()
    }

    fn decision(r: &str, action: DecisionAction, score: u8, note: &str) -> Decision {
        Decision {
            submission_ref: r.into(),
            action,
            final_score: score,
            reviewer_id: "rev1".into(),
            note: note.into(),
            timestamp: DateTime::from_timestamp(1_700_000_000, 0).unwrap(),
        }
    }

    #[test]
    fn accept_keeps_provisional() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = ledger(dir.path());
        let r = l
            .record_decision(decision("a_Q1", DecisionAction::Accept, 7, ""))
            .unwrap();
        assert_eq!(r.record().final_score, 7);
        assert!(matches!(
            l.record_decision(decision("a_Q1", DecisionAction::Accept, 6, "")),
            Err(LedgerError::AcceptMismatch {
                provisional: 7,
                final_score: 6
            })
        ));
    }

    #[test]
    fn override_needs_note_and_keeps_audit() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = ledger(dir.path());
        assert!(matches!(
            l.record_decision(decision("a_Q1", DecisionAction::Override, 4, "  ")),
            Err(LedgerError::NoteRequired)
        ));
        l.record_decision(decision("a_Q1", DecisionAction::Accept, 7, ""))
            .unwrap();
        l.record_decision(decision(
            "a_Q1",
            DecisionAction::Override,
            4,
            "sign error in step 2",
        ))
        .unwrap();
        l.record_decision(decision("a_Q1", DecisionAction::Override, 5, "second look"))
            .unwrap();
        let latest = l.latest("a_Q1").unwrap();
        assert_eq!((latest.final_score, latest.provisional_score), (5, 7));
        assert_eq!(l.history("a_Q1").len(), 3);

        let reopened = ledger(dir.path());
        assert_eq!(reopened.records(), l.records());
    }

    #[test]
    fn identical_payload_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = ledger(dir.path());
        let d = decision("b_Q1", DecisionAction::Override, 5, "x");
        assert!(matches!(
            l.record_decision(d.clone()).unwrap(),
            Recorded::Appended(_)
        ));
        assert!(matches!(
            l.record_decision(d).unwrap(),
            Recorded::Unchanged(_)
        ));
        assert_eq!(l.records().len(), 1);
    }

    #[test]
    fn unknown_submission() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = ledger(dir.path());
        assert!(matches!(
            l.record_decision(decision("zz_Q9", DecisionAction::Accept, 1, "")),
            Err(LedgerError::UnknownSubmission(_))
        ));
    }

    #[test]
    fn earlier_lines_are_never_rewritten() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = ledger(dir.path());
        l.record_decision(decision("a_Q1", DecisionAction::Accept, 7, ""))
            .unwrap();
        let before = std::fs::read_to_string(l.path()).unwrap();
        l.record_decision(decision("a_Q1", DecisionAction::Override, 2, "n"))
            .unwrap();
        let after = std::fs::read_to_string(l.path()).unwrap();
        assert!(after.starts_with(&before));
    }
}
