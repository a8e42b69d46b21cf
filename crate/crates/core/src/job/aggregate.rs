use std::collections::BTreeMap;

use chrono::Utc;

use super::ingest::digest_files;
use super::manifest::{Manifest, StageStatus};
use super::{write_json, JobConfig, JobDir, JobError, PassRecord, Stage, SubmissionSummary};
use crate::ledger::{aggregate_exact, summarize, AggregationRule};
use crate::sheet::SheetTemplate;

/// Summarise the passes of every crop into `summaries.json`.
///
/// Every crop must have exactly `pass_count` passes with indices
/// `0..pass_count`; otherwise the stage fails and asks for a regrade.
pub fn run_aggregate(config: &JobConfig) -> Result<Vec<SubmissionSummary>, JobError> {
    let started = Utc::now();
    let job = JobDir::new(config.job_dir());
    let crops = job.crops()?;
    let passes = job.passes()?;
    let n = config.provider.pass_count;
    let thresholds = config.aggregation.thresholds();
    thresholds.validate()?;

    let mut by_ref: BTreeMap<&str, Vec<&PassRecord>> = BTreeMap::new();
    for p in &passes {
        by_ref.entry(p.submission_ref.as_str()).or_default().push(p);
    }

    let mut summaries = Vec::with_capacity(crops.len());
    let mut incomplete = Vec::new();
    for crop in &crops {
        let mut these = by_ref
            .remove(crop.submission_ref.as_str())
            .unwrap_or_default();
        these.sort_by_key(|p| p.pass.pass_index);
        let complete = these.len() == n
            && these
                .iter()
                .enumerate()
                .all(|(i, p)| p.pass.pass_index == i);
        if !complete {
            incomplete.push(crop.submission_ref.clone());
            continue;
        }
        let scores: Vec<u8> = these.iter().map(|p| p.pass.score).collect();
        let summary = summarize(&scores, &thresholds)?;
        summaries.push(SubmissionSummary {
            submission_ref: crop.submission_ref.clone(),
            pseudonym: crop.pseudonym.clone(),
            test_id: crop.test_id.clone(),
            question_id: crop.question_id.clone(),
            crop_file: crop.file.clone(),
            rule: config.aggregation.rule,
            provisional_score: summary.provisional(config.aggregation.rule),
            provisional_max: aggregate_exact(&scores, n, AggregationRule::Max)?,
            provisional_median: aggregate_exact(&scores, n, AggregationRule::Median)?,
            alt_flags: these.iter().filter(|p| p.pass.alt_flag).count(),
            model_id: these[0].pass.model_id.clone(),
            summary,
        });
    }
    if !incomplete.is_empty() {
        return Err(JobError::Integrity(format!(
            "{} submissions lack {n} complete passes (first: {}); rerun the grade stage",
            incomplete.len(),
            incomplete[0]
        )));
    }
    if !by_ref.is_empty() {
        return Err(JobError::Integrity(format!(
            "passes.jsonl lists {} submissions that are not in crops.json",
            by_ref.len()
        )));
    }
    write_json(&job.summaries_path(), &summaries)?;

    let template = SheetTemplate::load_file(config.resolve(&config.template))?;
    let mut manifest = Manifest::open(&job, config, &template.template_id, &template.digest())?;
    let flagged = summaries.iter().filter(|s| s.summary.flagged).count();
    manifest.record_stage(
        Stage::Aggregate,
        StageStatus::Complete,
        started,
        BTreeMap::from([(
            "passes.jsonl".to_string(),
            digest_files(&[job.passes_path()])?,
        )]),
        BTreeMap::from([(
            "summaries.json".to_string(),
            digest_files(&[job.summaries_path()])?,
        )]),
        Some(format!(
            "{} submissions, {flagged} flagged",
            summaries.len()
        )),
    );
    manifest.save(&job)?;
    Ok(summaries)
}
