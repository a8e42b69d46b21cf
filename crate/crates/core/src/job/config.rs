use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::JobError;
use crate::bubble::DEFAULT_FILL_THRESHOLD;
use crate::digest::sha256_hex;
use crate::grader::{GradeSettings, RetryPolicy, DEFAULT_PASS_COUNT};
use crate::ledger::{AggregationRule, FlagThresholds};
use crate::sheet::{AlignConfig, DEFAULT_BINARIZATION};

/// Default environment variable for the provider API key.
pub const API_KEY_ENV: &str = "SCANGRADE_API_KEY";

/// Job configuration file (TOML). Relative paths resolve against the
/// directory holding the file. Secrets never appear here; the API key and
/// the pseudonym-map passphrase come from the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    /// Stable identifier recorded in the manifest; defaults to `test_id`.
    #[serde(default)]
    pub job_id: Option<String>,
    pub test_id: String,
    pub job_dir: PathBuf,
    pub template: PathBuf,
    pub key_bank: PathBuf,
    pub roster: PathBuf,
    pub pages: PathBuf,
    /// Encrypted pseudonym map; must lie outside `job_dir`.
    pub pseudonym_map: PathBuf,
    #[serde(default)]
    pub codebook: Option<PathBuf>,
    #[serde(default)]
    pub ingest: IngestSettings,
    #[serde(default)]
    pub provider: ProviderSettings,
    #[serde(default)]
    pub aggregation: AggregationSettings,
    #[serde(default)]
    pub export: ExportSettings,
    #[serde(skip)]
    base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSettings {
    pub tolerance_px: f64,
    pub search_radius: f64,
    pub binarization: f64,
    pub fill_threshold: f64,
    /// Worker threads; 0 picks the machine's parallelism.
    pub threads: usize,
}

impl Default for IngestSettings {
    fn default() -> Self {
        let align = AlignConfig::default();
        IngestSettings {
            tolerance_px: align.tolerance_px,
            search_radius: align.search_radius,
            binarization: DEFAULT_BINARIZATION,
            fill_threshold: DEFAULT_FILL_THRESHOLD,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    /// Seeded offline stand-in.
    Mock,
    /// Chat-completions compatible HTTP endpoint.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderSettings {
    pub kind: ProviderKind,
    pub model_id: String,
    pub endpoint: Option<String>,
    pub api_key_env: String,
    pub temperature: Option<f64>,
    pub pass_count: usize,
    pub retries: u32,
    pub retry_base_ms: u64,
    pub concurrency: usize,
    pub timeout_s: u64,
    /// Mock provider seed.
    pub seed: u64,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        ProviderSettings {
            kind: ProviderKind::Mock,
            model_id: "mock-grader".into(),
            endpoint: None,
            api_key_env: API_KEY_ENV.into(),
            temperature: None,
            pass_count: DEFAULT_PASS_COUNT,
            retries: RetryPolicy::default().retries,
            retry_base_ms: RetryPolicy::default().base_delay.as_millis() as u64,
            concurrency: 4,
            timeout_s: 120,
            seed: 0,
        }
    }
}

impl ProviderSettings {
    pub fn grade_settings(&self) -> GradeSettings {
        GradeSettings {
            model_id: self.model_id.clone(),
            temperature: self.temperature,
            retry: RetryPolicy {
                retries: self.retries,
                base_delay: Duration::from_millis(self.retry_base_ms),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationSettings {
    pub rule: AggregationRule,
    pub spread_max: u8,
    pub variance_max: f64,
}

impl Default for AggregationSettings {
    fn default() -> Self {
        let t = FlagThresholds::default();
        AggregationSettings {
            rule: AggregationRule::Max,
            spread_max: t.spread_max,
            variance_max: t.variance_max,
        }
    }
}

impl AggregationSettings {
    pub fn thresholds(&self) -> FlagThresholds {
        FlagThresholds {
            spread_max: self.spread_max,
            variance_max: self.variance_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportSettings {
    /// Tests in the bonus scheme; 0 means "as many as jobs exported".
    pub tests: usize,
    /// Questions per test; 0 means "answer boxes on the template".
    pub questions_per_test: usize,
    /// Refuse to export while submissions are undecided.
    pub strict: bool,
}

impl Default for ExportSettings {
    fn default() -> Self {
        ExportSettings {
            tests: 0,
            questions_per_test: 0,
            strict: true,
        }
    }
}

impl JobConfig {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, JobError> {
        let mut config: JobConfig =
            toml::from_str(text).map_err(|e| JobError::Config(e.to_string()))?;
        config.base_dir = base_dir.into();
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, JobError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                JobError::Config(format!("no configuration file at {}", path.display()))
            }
            _ => JobError::io(path, e),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn job_dir(&self) -> PathBuf {
        self.resolve(&self.job_dir)
    }

    pub fn set_job_dir(&mut self, dir: impl Into<PathBuf>) {
        self.job_dir = dir.into();
    }

    pub fn job_id(&self) -> String {
        self.job_id.clone().unwrap_or_else(|| self.test_id.clone())
    }

    pub fn align_config(&self) -> AlignConfig {
        AlignConfig {
            tolerance_px: self.ingest.tolerance_px,
            search_radius: self.ingest.search_radius,
            binarization: self.ingest.binarization,
        }
    }

    /// Digest of every setting that influences outputs; paths excluded.
    pub fn digest(&self) -> String {
        let settings = serde_json::json!({
            "test_id": self.test_id,
            "job_id": self.job_id(),
            "ingest": self.ingest,
            "provider": self.provider,
            "aggregation": self.aggregation,
            "export": self.export,
        });
        sha256_hex(settings.to_string().as_bytes())
    }

    /// Check the invariants that do not need the job to exist yet.
    pub fn validate(&self) -> Result<(), JobError> {
        if self.provider.pass_count == 0 {
            return Err(JobError::Config(
                "provider.pass_count must be at least 1".into(),
            ));
        }
        if self.provider.concurrency == 0 {
            return Err(JobError::Config(
                "provider.concurrency must be at least 1".into(),
            ));
        }
        if self.provider.kind == ProviderKind::Http && self.provider.endpoint.is_none() {
            return Err(JobError::Config(
                "provider.endpoint is required for kind = \"http\"".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.ingest.fill_threshold) || self.ingest.fill_threshold == 0.0 {
            return Err(JobError::Config(
                "ingest.fill_threshold must lie in (0, 1)".into(),
            ));
        }
        self.aggregation
            .thresholds()
            .validate()
            .map_err(|e| JobError::Config(e.to_string()))?;
        let job = self.job_dir();
        let map = self.resolve(&self.pseudonym_map);
        if map.starts_with(&job) {
            return Err(JobError::Config(
                "pseudonym_map must live outside job_dir".into(),
            ));
        }
        for (name, p) in [
            ("template", &self.template),
            ("key_bank", &self.key_bank),
            ("roster", &self.roster),
            ("pages", &self.pages),
        ] {
            if !self.resolve(p).exists() {
                return Err(JobError::Config(format!(
                    "{name} path {} does not exist",
                    self.resolve(p).display()
                )));
            }
        }
        Ok(())
    }
}
