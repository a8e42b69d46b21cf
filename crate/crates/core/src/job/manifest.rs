use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{write_json, JobConfig, JobDir, JobError, Stage};
use crate::keybank::{preamble_digest, PREAMBLE_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StageStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SubmissionState {
    Pending,
    Graded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: StageStatus,
    pub config_digest: String,
    pub input_digests: BTreeMap<String, String>,
    pub output_digests: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

/// `job.json`: identity, provenance and per-stage status of a job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub job_id: String,
    pub test_id: String,
    pub template_id: String,
    pub template_digest: String,
    pub preamble_version: String,
    pub preamble_digest: String,
    pub model_id: String,
    pub temperature: Option<f64>,
    pub pass_count: usize,
    pub config_digest: String,
    pub created_at: DateTime<Utc>,
    pub stages: BTreeMap<Stage, StageRecord>,
    pub submissions: BTreeMap<String, SubmissionState>,
}

impl Manifest {
    /// Load the job's manifest, or start one, and refresh the provenance
    /// fields from `config`.
    pub fn open(
        job: &JobDir,
        config: &JobConfig,
        template_id: &str,
        template_digest: &str,
    ) -> Result<Self, JobError> {
        let mut m = if job.manifest_path().exists() {
            job.manifest()?
        } else {
            Manifest {
                job_id: String::new(),
                test_id: String::new(),
                template_id: String::new(),
                template_digest: String::new(),
                preamble_version: String::new(),
                preamble_digest: String::new(),
                model_id: String::new(),
                temperature: None,
                pass_count: 0,
                config_digest: String::new(),
                created_at: Utc::now(),
                stages: BTreeMap::new(),
                submissions: BTreeMap::new(),
            }
        };
        m.job_id = config.job_id();
        m.test_id = config.test_id.clone();
        m.template_id = template_id.to_string();
        m.template_digest = template_digest.to_string();
        m.preamble_version = PREAMBLE_VERSION.to_string();
        m.preamble_digest = preamble_digest();
        m.model_id = config.provider.model_id.clone();
        m.temperature = config.provider.temperature;
        m.pass_count = config.provider.pass_count;
        m.config_digest = config.digest();
        Ok(m)
    }

    pub fn record_stage(
        &mut self,
        stage: Stage,
        status: StageStatus,
        started_at: DateTime<Utc>,
        input_digests: BTreeMap<String, String>,
        output_digests: BTreeMap<String, String>,
        message: Option<String>,
    ) {
        self.stages.insert(
            stage,
            StageRecord {
                status,
                config_digest: self.config_digest.clone(),
                input_digests,
                output_digests,
                message,
                started_at,
                finished_at: Utc::now(),
            },
        );
    }

    pub fn save(&self, job: &JobDir) -> Result<(), JobError> {
        write_json(&job.manifest_path(), self)
    }
}
