//! Agreement and timing statistics.

mod kappa;
mod scores;
mod timing;

pub use kappa::{qwk, ContingencyTable, KappaError, SCORE_CATEGORIES};
pub use scores::{
    deviation_stats, kappa_csv, kappa_report, position_of, positioning, DeviationStats, KappaRow,
    Position, PositioningBreakdown, QuestionVectors, ScoreDataset, ScoresError, SubmissionScores,
};
pub use timing::{
    pairs_csv, parse_mmss, parse_timings, timing_analysis, GradingOrder, Medium, PairRatio,
    QuestionLogMean, RatioAnalysis, TimingError, TimingRecord,
};
