//! Grading pipeline for short handwritten assessments.
//!
//! Scanned answer sheets are aligned to a declarative template, student IDs
//! are read from bubble grids, and each answer box is cropped into an
//! anonymous image. Every crop is then graded several times by a multimodal
//! model against a structured grading key; the passes are aggregated,
//! checked for consistency, and handed to a human reviewer whose decisions
//! end up in an append-only ledger. A separate analytics layer computes
//! agreement and timing statistics.
//!
//! | module | concern |
//! |---|---|
//! | [`sheet`] | templates, alignment, cropping |
//! | [`bubble`] | ID bubbles and error-correcting codebooks |
//! | [`keybank`] | questions, grading keys, prompt assembly |
//! | [`grader`] | providers, output parsing, pass cache |
//! | [`ledger`] | pseudonyms, aggregation, decisions, export |
//! | [`analytics`] | weighted kappa, timing ratios, deviations |
//! | [`job`] | job directory, configuration and pipeline stages |

pub mod analytics;
pub mod bubble;
pub mod digest;
pub mod fixture;
pub mod geometry;
pub mod grader;
pub mod job;
pub mod keybank;
pub mod ledger;
pub mod sheet;

#[cfg(test)]
mod test_support;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/sheets.md")]
    mod sheets {}
    #[doc = include_str!("../../../book/src/student-ids.md")]
    mod student_ids {}
    #[doc = include_str!("../../../book/src/grading-keys.md")]
    mod grading_keys {}
    #[doc = include_str!("../../../book/src/grading.md")]
    mod grading {}
    #[doc = include_str!("../../../book/src/aggregation.md")]
    mod aggregation {}
    #[doc = include_str!("../../../book/src/review.md")]
    mod review {}
    #[doc = include_str!("../../../book/src/analytics.md")]
    mod analytics {}
    #[doc = include_str!("../../../book/src/jobs.md")]
    mod jobs {}
}
