//! Pseudonyms, score aggregation, consistency flags, reviewer decisions and
//! the final grade export.

mod decisions;
mod export;
mod pseudonym;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use decisions::{Decision, DecisionAction, DecisionRecord, Ledger, Recorded};
pub use export::{
    bonus_csv, export_final_grades, grades_csv, FinalGradeExport, FinalGradeRow, GradeStructure,
    SubmissionOutcome, UndecidedPolicy,
};
pub use pseudonym::{read_roster, PseudonymMap, MAP_PASSPHRASE_ENV};

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("student number is not on the roster")]
    UnknownStudent,
    #[error("duplicate student number on the roster: {0}")]
    DuplicateStudent(String),
    #[error("pseudonym collision on the roster; choose a new salt")]
    PseudonymCollision,
    #[error("expected {expected} pass scores, found {found}")]
    WrongPassCount { expected: usize, found: usize },
    #[error("pass score {0} is outside 0..=10")]
    ScoreOutOfRange(u8),
    #[error("flag thresholds must be positive")]
    InvalidThresholds,
    #[error("unknown submission {0}")]
    UnknownSubmission(String),
    #[error("ACCEPT must keep the provisional score {provisional}, got {final_score}")]
    AcceptMismatch { provisional: u8, final_score: u8 },
    #[error("an OVERRIDE needs a non-empty note")]
    NoteRequired,
    #[error("{count} submissions have no decision")]
    Undecided { count: usize, refs: Vec<String> },
    #[error("corrupt ledger line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("pseudonym map: {0}")]
    MapCrypto(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How the passes of one submission become its provisional score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AggregationRule {
    /// Deployed default, in the student's favour.
    #[default]
    Max,
    Median,
}

impl std::str::FromStr for AggregationRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "MAX" => Ok(AggregationRule::Max),
            "MEDIAN" => Ok(AggregationRule::Median),
            other => Err(format!(
                "unknown aggregation rule `{other}` (MAX or MEDIAN)"
            )),
        }
    }
}

impl std::fmt::Display for AggregationRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AggregationRule::Max => "MAX",
            AggregationRule::Median => "MEDIAN",
        })
    }
}

fn check_scores(passes: &[u8]) -> Result<(), LedgerError> {
    if passes.is_empty() {
        return Err(LedgerError::WrongPassCount {
            expected: 1,
            found: 0,
        });
    }
    match passes.iter().find(|&&s| s > 10) {
        Some(&s) => Err(LedgerError::ScoreOutOfRange(s)),
        None => Ok(()),
    }
}

/// Middle order statistic; the lower middle for an even count.
fn median(passes: &[u8]) -> u8 {
    let mut sorted = passes.to_vec();
    sorted.sort_unstable();
    sorted[(sorted.len() - 1) / 2]
}

/// Provisional score of one submission.
pub fn aggregate(passes: &[u8], rule: AggregationRule) -> Result<u8, LedgerError> {
    check_scores(passes)?;
    Ok(match rule {
        AggregationRule::Max => *passes.iter().max().unwrap(),
        AggregationRule::Median => median(passes),
    })
}

/// [`aggregate`] for a fixed pass count.
pub fn aggregate_exact(
    passes: &[u8],
    expected: usize,
    rule: AggregationRule,
) -> Result<u8, LedgerError> {
    if passes.len() != expected {
        return Err(LedgerError::WrongPassCount {
            expected,
            found: passes.len(),
        });
    }
    aggregate(passes, rule)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlagThresholds {
    pub spread_max: u8,
    pub variance_max: f64,
}

impl Default for FlagThresholds {
    fn default() -> Self {
        FlagThresholds {
            spread_max: 3,
            variance_max: 2.0,
        }
    }
}

impl FlagThresholds {
    pub fn validate(&self) -> Result<(), LedgerError> {
        if self.spread_max == 0 || self.variance_max.is_nan() || self.variance_max <= 0.0 {
            return Err(LedgerError::InvalidThresholds);
        }
        Ok(())
    }
}

const ANOMALY_EPSILON: f64 = 1e-9;

/// Agreement statistics over the passes of one submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub passes: Vec<u8>,
    pub min: u8,
    pub max: u8,
    pub median: u8,
    pub mean: f64,
    /// Sample variance (n - 1 denominator); 0 for a single pass.
    pub variance: f64,
    pub spread: u8,
    /// Largest absolute deviation from the mean in standard deviations.
    pub anomaly: f64,
    pub flagged: bool,
}

impl ScoreSummary {
    pub fn provisional(&self, rule: AggregationRule) -> u8 {
        match rule {
            AggregationRule::Max => self.max,
            AggregationRule::Median => self.median,
        }
    }
}

/// Consistency measures, unflagged. See [`flag`].
pub fn consistency(passes: &[u8]) -> Result<ScoreSummary, LedgerError> {
    check_scores(passes)?;
    let n = passes.len() as f64;
    let mean = passes.iter().map(|&x| x as f64).sum::<f64>() / n;
    let variance = if passes.len() > 1 {
        passes
            .iter()
            .map(|&x| (x as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    let max_dev = passes
        .iter()
        .map(|&x| (x as f64 - mean).abs())
        .fold(0.0, f64::max);
    let min = *passes.iter().min().unwrap();
    let max = *passes.iter().max().unwrap();
    Ok(ScoreSummary {
        passes: passes.to_vec(),
        min,
        max,
        median: median(passes),
        mean,
        variance,
        spread: max - min,
        anomaly: max_dev / (variance.sqrt() + ANOMALY_EPSILON),
        flagged: false,
    })
}

pub fn flag(summary: &ScoreSummary, thresholds: &FlagThresholds) -> bool {
    summary.spread >= thresholds.spread_max || summary.variance >= thresholds.variance_max
}

/// [`consistency`] followed by [`flag`].
pub fn summarize(passes: &[u8], thresholds: &FlagThresholds) -> Result<ScoreSummary, LedgerError> {
    let mut summary = consistency(passes)?;
    summary.flagged = flag(&summary, thresholds);
    Ok(summary)
}
