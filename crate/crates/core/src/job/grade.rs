use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;
use std::time::Duration;

use chrono::Utc;
use serde::Serialize;
use serde_json::json;

use super::config::ProviderKind;
use super::ingest::digest_files;
use super::manifest::{Manifest, StageStatus, SubmissionState};
use super::{parallel_map, write_atomic, JobConfig, JobDir, JobError, PassRecord, Stage};
use crate::digest::sha256_hex;
use crate::grader::{
    cached_grade, GradingProvider, HttpProvider, HttpProviderConfig, MockProvider, PassCache,
};
use crate::keybank::{assemble_with_attachment, load_key_bank, Attachment, KeyError, PromptBundle};
use crate::sheet::SheetTemplate;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GradeSummary {
    pub submissions: usize,
    pub passes: usize,
    pub cache_hits: usize,
    pub provider_calls: usize,
}

/// Concrete mock provider, kept so its requests can be written out.
pub type MockHandle = Arc<MockProvider>;

/// The provider named by the configuration. For the mock, the concrete
/// handle is returned too so its requests can be logged.
pub fn build_provider(
    config: &JobConfig,
    job: &JobDir,
) -> Result<(Arc<dyn GradingProvider>, Option<MockHandle>), JobError> {
    let p = &config.provider;
    match p.kind {
        ProviderKind::Mock => {
            let mock = Arc::new(MockProvider::new(p.seed));
            Ok((mock.clone(), Some(mock)))
        }
        ProviderKind::Http => {
            let api_key = std::env::var(&p.api_key_env).ok().filter(|k| !k.is_empty());
            if api_key.is_none() {
                log::warn!(
                    "{} is not set; sending requests without credentials",
                    p.api_key_env
                );
            }
            std::fs::create_dir_all(job.root()).map_err(|e| JobError::io(job.root(), e))?;
            let http = HttpProvider::new(HttpProviderConfig {
                endpoint: p.endpoint.clone().unwrap_or_default(),
                api_key,
                timeout: Duration::from_secs(p.timeout_s),
                log_path: Some(job.request_log()),
            })?;
            Ok((Arc::new(http), None))
        }
    }
}

/// Grade every crop with the configured provider.
pub fn run_grade(config: &JobConfig) -> Result<GradeSummary, JobError> {
    let job = JobDir::new(config.job_dir());
    let (provider, mock) = build_provider(config, &job)?;
    let outcome = run_grade_with(config, provider.as_ref());
    if let Some(mock) = mock {
        append_mock_log(&job, &mock, config.provider.temperature)?;
    }
    outcome
}

/// Redacted request bodies in the same shape the HTTP provider logs,
/// sorted so that concurrent runs produce identical files.
fn append_mock_log(
    job: &JobDir,
    mock: &MockProvider,
    temperature: Option<f64>,
) -> Result<(), JobError> {
    let mut requests = mock.requests();
    if requests.is_empty() {
        return Ok(());
    }
    requests.sort_by(|a, b| {
        (&a.image_hash, a.pass_index, &a.prompt).cmp(&(&b.image_hash, b.pass_index, &b.prompt))
    });
    let path = job.request_log();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| JobError::io(&path, e))?;
    for r in requests {
        let mut body = json!({
            "model": r.model_id,
            "messages": [{
                "role": "user",
                "content": [
                    { "type": "text", "text": r.prompt },
                    { "type": "image_url", "image_url": { "url": format!("<image sha256={}>", r.image_hash) } }
                ]
            }]
        });
        if let Some(t) = temperature {
            body["temperature"] = json!(t);
        }
        writeln!(f, "{}", json!({ "direction": "request", "body": body }))
            .map_err(|e| JobError::io(&path, e))?;
    }
    Ok(())
}

/// Load a crop back from disk and check it against its recorded digest.
fn load_attachment(job: &JobDir, file: &str, content_hash: &str) -> Result<Attachment, JobError> {
    let path = job
        .crop_file(file)
        .ok_or_else(|| JobError::Integrity(format!("invalid crop file name `{file}`")))?;
    let bytes = std::fs::read(&path).map_err(|e| JobError::io(&path, e))?;
    let pixels = image::load_from_memory(&bytes)
        .map_err(|e| JobError::Malformed {
            path: path.clone(),
            message: e.to_string(),
        })?
        .into_luma8();
    if sha256_hex(pixels.as_raw()) != content_hash {
        return Err(JobError::Integrity(format!(
            "{file} does not match its recorded content hash"
        )));
    }
    Ok(Attachment {
        media_type: "image/png".into(),
        bytes: Arc::new(bytes),
        content_hash: content_hash.to_string(),
    })
}

/// Grade every crop of the job `pass_count` times with `provider`.
///
/// Passes already in the cache are not requested again, so an interrupted
/// or partially failed run resumes where it stopped. `passes.jsonl` lists
/// every completed pass, sorted by submission and pass index.
pub fn run_grade_with(
    config: &JobConfig,
    provider: &dyn GradingProvider,
) -> Result<GradeSummary, JobError> {
    let started = Utc::now();
    config.validate()?;
    let job = JobDir::new(config.job_dir());
    let crops = job.crops()?;
    let bank_root = config.resolve(&config.key_bank);
    let bank = load_key_bank(&bank_root)?;
    let template = SheetTemplate::load_file(config.resolve(&config.template))?;

    let mut bundles: Vec<PromptBundle> = Vec::with_capacity(crops.len());
    for c in &crops {
        let entry = bank
            .get(&c.test_id, &c.question_id)
            .ok_or_else(|| KeyError::MissingKey {
                question_id: format!("{}/{}", c.test_id, c.question_id),
                what: "bank entry".into(),
            })?;
        let attachment = load_attachment(&job, &c.file, &c.content_hash)?;
        bundles.push(assemble_with_attachment(
            &entry.question,
            &entry.solution,
            &entry.key,
            attachment,
        )?);
    }

    let cache = PassCache::open(job.cache_dir()).map_err(|e| JobError::io(job.cache_dir(), e))?;
    let settings = config.provider.grade_settings();
    let n = config.provider.pass_count;
    let work: Vec<(usize, usize)> = (0..crops.len())
        .flat_map(|c| (0..n).map(move |p| (c, p)))
        .collect();
    let workers = config.provider.concurrency.clamp(1, work.len().max(1));
    let results = parallel_map(&work, workers, |&(c, p)| {
        cached_grade(&cache, provider, &bundles[c], p, &settings)
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut hits = 0;
    let mut state: BTreeMap<String, SubmissionState> = BTreeMap::new();
    for (&(c, _), r) in work.iter().zip(results) {
        let crop = &crops[c];
        match r {
            Ok((pass, hit)) => {
                hits += usize::from(hit);
                state
                    .entry(crop.submission_ref.clone())
                    .or_insert(SubmissionState::Graded);
                records.push(PassRecord {
                    submission_ref: crop.submission_ref.clone(),
                    test_id: crop.test_id.clone(),
                    question_id: crop.question_id.clone(),
                    pass,
                });
            }
            Err(e) => {
                state.insert(crop.submission_ref.clone(), SubmissionState::Failed);
                failures.push(format!("{}: {e}", crop.submission_ref));
            }
        }
    }
    records.sort_by(|a, b| {
        (&a.submission_ref, a.pass.pass_index).cmp(&(&b.submission_ref, b.pass.pass_index))
    });
    let mut lines = String::new();
    for r in &records {
        lines.push_str(&serde_json::to_string(r).expect("pass record serialises"));
        lines.push('\n');
    }
    write_atomic(&job.passes_path(), lines.as_bytes())?;

    let mut manifest = Manifest::open(&job, config, &template.template_id, &template.digest())?;
    for (k, v) in &state {
        manifest.submissions.insert(k.clone(), *v);
    }
    let inputs = BTreeMap::from([
        (
            "crops.json".to_string(),
            digest_files(&[job.crops_index()])?,
        ),
        ("key_bank".to_string(), bank_digest(&bundles)),
    ]);
    let outputs = BTreeMap::from([(
        "passes.jsonl".to_string(),
        digest_files(&[job.passes_path()])?,
    )]);
    let summary = GradeSummary {
        submissions: crops.len(),
        passes: records.len(),
        cache_hits: hits,
        provider_calls: records.len() - hits,
    };
    let status = if failures.is_empty() {
        StageStatus::Complete
    } else {
        StageStatus::Failed
    };
    manifest.record_stage(
        Stage::Grade,
        status,
        started,
        inputs,
        outputs,
        Some(format!(
            "{} passes, {} from cache, {} failed",
            summary.passes,
            summary.cache_hits,
            failures.len()
        )),
    );
    manifest.save(&job)?;
    if let Some(first) = failures.first() {
        return Err(JobError::GradingIncomplete {
            failed: failures.len(),
            total: work.len(),
            first: first.clone(),
        });
    }
    Ok(summary)
}

fn bank_digest(bundles: &[PromptBundle]) -> String {
    let mut hashes: Vec<&str> = bundles.iter().map(|b| b.prompt_hash.as_str()).collect();
    hashes.sort_unstable();
    hashes.dedup();
    sha256_hex(hashes.join("\n").as_bytes())
}
