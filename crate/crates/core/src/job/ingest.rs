use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::Utc;
use serde::Serialize;

use super::manifest::{Manifest, StageStatus};
use super::{
    parallel_map, worker_count, write_atomic, write_json, CropRecord, JobConfig, JobDir, JobError,
    Stage,
};
use crate::bubble::{correct_id, decode_id_with, Codebook, IdStatus};
use crate::digest::{sha256_fields, sha256_hex};
use crate::ledger::{read_roster, PseudonymMap};
use crate::sheet::{align_page, anonymised_crops, load_gray, AnswerCrop, SheetTemplate};

/// Outcome of one scanned page, as listed in `ids.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PageStatus {
    Ok,
    /// Empty or ambiguous bubble columns, or no unique codeword.
    NeedsReview,
    /// Fiducials not found or residual above tolerance.
    AlignFailed,
    /// A clean ID that is not on the roster.
    UnknownStudent,
    /// A second page for a student already ingested.
    Duplicate,
}

impl PageStatus {
    fn as_str(self) -> &'static str {
        match self {
            PageStatus::Ok => "OK",
            PageStatus::NeedsReview => "NEEDS_REVIEW",
            PageStatus::AlignFailed => "ALIGN_FAILED",
            PageStatus::UnknownStudent => "UNKNOWN_STUDENT",
            PageStatus::Duplicate => "DUPLICATE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub pages: usize,
    pub by_status: BTreeMap<&'static str, usize>,
    pub crops: usize,
}

struct PageResult {
    page: String,
    status: PageStatus,
    /// Decoded digits for pages that need a human; never filled for OK pages.
    digits: String,
    pseudonym: Option<String>,
    crops: Vec<AnswerCrop>,
}

fn page_files(dir: &Path) -> Result<Vec<PathBuf>, JobError> {
    let mut pages: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| JobError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    pages.sort();
    Ok(pages)
}

/// Load the pseudonym map, creating it on first use and extending it with
/// students added to the roster since.
fn load_or_create_map(
    path: &Path,
    roster: &[String],
    passphrase: &str,
) -> Result<PseudonymMap, JobError> {
    if path.exists() {
        let map = PseudonymMap::load_encrypted(path, passphrase)?;
        let known: BTreeSet<&str> = map.student_numbers().collect();
        if roster.iter().all(|r| known.contains(r.as_str())) {
            return Ok(map);
        }
        let extended = map.extended(roster)?;
        extended.save_encrypted(path, passphrase)?;
        return Ok(extended);
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| JobError::io(parent, e))?;
    }
    let map = PseudonymMap::generate(roster)?;
    map.save_encrypted(path, passphrase)?;
    Ok(map)
}

fn process_page(
    path: &Path,
    template: &SheetTemplate,
    config: &JobConfig,
    codebook: Option<&Codebook>,
    map: &PseudonymMap,
) -> PageResult {
    let page = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let result = |status, digits: String| PageResult {
        page: page.clone(),
        status,
        digits,
        pseudonym: None,
        crops: vec![],
    };
    let aligned =
        match load_gray(path).and_then(|img| align_page(&img, template, &config.align_config())) {
            Ok(a) => a,
            Err(e) => {
                log::warn!("{page}: {e}");
                return result(PageStatus::AlignFailed, String::new());
            }
        };
    let Some((grid, _)) = template.id_grid() else {
        return result(PageStatus::NeedsReview, String::new());
    };
    let decoded = match decode_id_with(
        &aligned,
        &grid,
        config.ingest.fill_threshold,
        config.ingest.binarization,
    ) {
        Ok(d) => d,
        Err(e) => {
            log::warn!("{page}: {e}");
            return result(PageStatus::NeedsReview, String::new());
        }
    };
    let number = match codebook {
        Some(book) => match correct_id(&decoded.digits, book) {
            Ok(c) if c.status == IdStatus::Ok => Some(c.code),
            Ok(_) => None,
            Err(e) => {
                log::warn!("{page}: {e}");
                None
            }
        },
        None => decoded.number(),
    };
    let Some(number) = number else {
        return result(PageStatus::NeedsReview, decoded.text());
    };
    let Ok(pseudonym) = map.pseudonymise(&number) else {
        return result(PageStatus::UnknownStudent, number);
    };
    match anonymised_crops(&aligned, pseudonym) {
        Ok(crops) => PageResult {
            page,
            status: PageStatus::Ok,
            digits: String::new(),
            pseudonym: Some(pseudonym.to_string()),
            crops,
        },
        Err(e) => {
            log::warn!("{page}: {e}");
            result(PageStatus::AlignFailed, String::new())
        }
    }
}

/// Digest over the names and contents of files, in the given order.
/// Digest over the names and contents of `paths`, as recorded in the manifest.
pub fn digest_files(paths: &[PathBuf]) -> Result<String, JobError> {
    let mut parts = Vec::with_capacity(paths.len() * 2);
    for p in paths {
        let name = p
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let bytes = std::fs::read(p).map_err(|e| JobError::io(p, e))?;
        parts.push(name.into_bytes());
        parts.push(sha256_hex(&bytes).into_bytes());
    }
    Ok(sha256_fields(parts.iter().map(Vec::as_slice)))
}

/// Align every scanned page, read student IDs, and write anonymised
/// answer crops into the job directory.
///
/// `passphrase` unlocks (or creates) the pseudonym map.
pub fn run_ingest(config: &JobConfig, passphrase: &str) -> Result<IngestSummary, JobError> {
    let started = Utc::now();
    config.validate()?;
    let job = JobDir::new(config.job_dir());
    let template_path = config.resolve(&config.template);
    let template = SheetTemplate::load_file(&template_path)?;
    let roster_path = config.resolve(&config.roster);
    let roster_text =
        std::fs::read_to_string(&roster_path).map_err(|e| JobError::io(&roster_path, e))?;
    let roster = read_roster(&roster_text);
    if roster.is_empty() {
        return Err(JobError::Config(format!(
            "roster {} lists no students",
            roster_path.display()
        )));
    }
    let map = load_or_create_map(&config.resolve(&config.pseudonym_map), &roster, passphrase)?;
    let codebook = match &config.codebook {
        Some(p) => Some(Codebook::load(config.resolve(p))?),
        None => None,
    };
    let pages = page_files(&config.resolve(&config.pages))?;
    if pages.is_empty() {
        return Err(JobError::Config("no PNG pages found".into()));
    }

    let workers = worker_count(config.ingest.threads, pages.len());
    let mut results = parallel_map(&pages, workers, |p| {
        process_page(p, &template, config, codebook.as_ref(), &map)
    });

    let mut seen = BTreeSet::new();
    for r in &mut results {
        if let Some(p) = &r.pseudonym {
            if !seen.insert(p.clone()) {
                log::warn!("{}: second sheet for an already ingested student", r.page);
                r.status = PageStatus::Duplicate;
                r.pseudonym = None;
                r.crops.clear();
            }
        }
    }

    let crops_dir = job.crops_dir();
    if crops_dir.exists() {
        std::fs::remove_dir_all(&crops_dir).map_err(|e| JobError::io(&crops_dir, e))?;
    }
    std::fs::create_dir_all(&crops_dir).map_err(|e| JobError::io(&crops_dir, e))?;

    let mut records = Vec::new();
    for r in &results {
        for crop in &r.crops {
            let file = crop.file_name();
            write_atomic(&crops_dir.join(&file), &crop.png_bytes())?;
            records.push(CropRecord {
                submission_ref: crop.submission_ref(),
                pseudonym: crop.pseudonym.clone(),
                test_id: config.test_id.clone(),
                question_id: crop.question_id.clone(),
                file,
                content_hash: crop.content_hash.clone(),
                source_rect: crop.source_rect,
                page: r.page.clone(),
            });
        }
    }
    records.sort_by(|a, b| a.submission_ref.cmp(&b.submission_ref));
    write_json(&job.crops_index(), &records)?;

    let mut ids = csv::Writer::from_writer(vec![]);
    ids.write_record(["page", "pseudonym", "digits", "status"])
        .expect("in-memory csv");
    for r in &results {
        ids.write_record([
            r.page.as_str(),
            r.pseudonym.as_deref().unwrap_or(""),
            r.digits.as_str(),
            r.status.as_str(),
        ])
        .expect("in-memory csv");
    }
    write_atomic(&job.ids_csv(), &ids.into_inner().expect("in-memory csv"))?;

    let mut roster_pseudonyms: Vec<String> = roster
        .iter()
        .map(|n| map.pseudonymise(n).map(str::to_string))
        .collect::<Result<_, _>>()?;
    roster_pseudonyms.sort();
    write_json(&job.roster_path(), &roster_pseudonyms)?;

    let mut by_status = BTreeMap::new();
    for r in &results {
        *by_status.entry(r.status.as_str()).or_insert(0) += 1;
    }
    let summary = IngestSummary {
        pages: results.len(),
        by_status,
        crops: records.len(),
    };

    let mut manifest = Manifest::open(&job, config, &template.template_id, &template.digest())?;
    manifest
        .submissions
        .retain(|k, _| records.iter().any(|r| &r.submission_ref == k));
    for r in &records {
        manifest
            .submissions
            .entry(r.submission_ref.clone())
            .or_insert(super::SubmissionState::Pending);
    }
    let inputs = BTreeMap::from([
        ("template".to_string(), template.digest()),
        ("roster".to_string(), sha256_hex(roster_text.as_bytes())),
        ("pages".to_string(), digest_files(&pages)?),
    ]);
    let outputs = BTreeMap::from([
        (
            "crops.json".to_string(),
            digest_files(&[job.crops_index()])?,
        ),
        ("ids.csv".to_string(), digest_files(&[job.ids_csv()])?),
    ]);
    manifest.record_stage(
        Stage::Ingest,
        StageStatus::Complete,
        started,
        inputs,
        outputs,
        Some(format!("{} pages, {} crops", summary.pages, summary.crops)),
    );
    manifest.save(&job)?;
    Ok(summary)
}
