use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::Utc;
use serde::Serialize;

use super::ingest::digest_files;
use super::manifest::{Manifest, StageStatus};
use super::{write_atomic, JobConfig, JobDir, JobError, Stage};
use crate::ledger::{
    bonus_csv, export_final_grades, grades_csv, GradeStructure, SubmissionOutcome, UndecidedPolicy,
};
use crate::sheet::SheetTemplate;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportOptions {
    /// Further jobs (other tests of the same course) rolled into the export.
    pub extra_jobs: Vec<JobDir>,
    pub policy: UndecidedPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExportSummary {
    pub students: usize,
    pub tests: Vec<String>,
    pub max_points: u32,
    pub excluded: Vec<String>,
    pub files: Vec<PathBuf>,
}

/// Latest decision per aggregated submission of one job.
pub fn collect_outcomes(job: &JobDir) -> Result<Vec<SubmissionOutcome>, JobError> {
    let summaries = job.summaries()?;
    let latest = job.ledger()?.latest_decisions();
    Ok(summaries
        .into_iter()
        .map(|s| SubmissionOutcome {
            final_score: latest.get(&s.submission_ref).map(|d| d.final_score),
            pseudonym: s.pseudonym,
            test_id: s.test_id,
            question_id: s.question_id,
        })
        .collect())
}

/// `pseudonym,question,provisional,final,action,reviewer,timestamp`, one
/// line per submission; the decision columns stay empty while undecided.
/// A job that has not been aggregated yet gives a header-only file.
pub fn decisions_csv(job: &JobDir) -> Result<String, JobError> {
    let summaries = match job.summaries() {
        Err(JobError::MissingStage { .. }) => vec![],
        other => other?,
    };
    let latest = if summaries.is_empty() {
        BTreeMap::new()
    } else {
        job.ledger()?.latest_decisions()
    };
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record([
        "pseudonym",
        "question",
        "provisional",
        "final",
        "action",
        "reviewer",
        "timestamp",
    ])
    .expect("in-memory csv");
    for s in &summaries {
        let d = latest.get(&s.submission_ref);
        w.write_record([
            s.pseudonym.clone(),
            s.question_id.clone(),
            s.provisional_score.to_string(),
            d.map(|d| d.final_score.to_string()).unwrap_or_default(),
            d.map(|d| d.action.to_string()).unwrap_or_default(),
            d.map(|d| d.reviewer_id.clone()).unwrap_or_default(),
            d.map(|d| d.timestamp.to_rfc3339()).unwrap_or_default(),
        ])
        .expect("in-memory csv");
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8"))
}

/// Write `grades.csv`, `bonus.csv` and `decisions.csv` under the job's
/// `export/` directory.
pub fn run_export(config: &JobConfig, options: &ExportOptions) -> Result<ExportSummary, JobError> {
    let started = Utc::now();
    let job = JobDir::new(config.job_dir());
    let template = SheetTemplate::load_file(config.resolve(&config.template))?;
    let jobs: Vec<&JobDir> = std::iter::once(&job).chain(&options.extra_jobs).collect();

    let mut outcomes = Vec::new();
    let mut roster = Vec::new();
    for j in &jobs {
        outcomes.extend(collect_outcomes(j)?);
        roster.extend(j.roster_pseudonyms()?);
    }
    roster.sort();
    roster.dedup();

    let structure = GradeStructure {
        tests: match config.export.tests {
            0 => jobs.len(),
            n => n,
        },
        questions_per_test: match config.export.questions_per_test {
            0 => template.answer_boxes().count(),
            n => n,
        },
    };
    let export = export_final_grades(&outcomes, &roster, structure, options.policy)?;

    let dir = job.export_dir();
    let files = vec![
        dir.join("grades.csv"),
        dir.join("bonus.csv"),
        dir.join("decisions.csv"),
    ];
    write_atomic(&files[0], grades_csv(&export).as_bytes())?;
    write_atomic(&files[1], bonus_csv(&export).as_bytes())?;
    write_atomic(&files[2], decisions_csv(&job)?.as_bytes())?;

    let mut manifest = Manifest::open(&job, config, &template.template_id, &template.digest())?;
    let mut inputs = BTreeMap::new();
    for j in &jobs {
        inputs.insert(
            format!("{}/summaries.json", j.manifest()?.test_id),
            digest_files(&[j.summaries_path()])?,
        );
    }
    // decisions.csv carries review timestamps and is left out.
    let outputs = files[..2]
        .iter()
        .map(|f| {
            let name = f.file_name().unwrap().to_string_lossy().into_owned();
            digest_files(std::slice::from_ref(f)).map(|d| (name, d))
        })
        .collect::<Result<BTreeMap<_, _>, _>>()?;
    manifest.record_stage(
        Stage::Export,
        StageStatus::Complete,
        started,
        inputs,
        outputs,
        (!export.excluded.is_empty())
            .then(|| format!("{} undecided submissions excluded", export.excluded.len())),
    );
    manifest.save(&job)?;

    Ok(ExportSummary {
        students: export.rows.len(),
        tests: export.test_ids,
        max_points: structure.max_points(),
        excluded: export.excluded,
        files,
    })
}
