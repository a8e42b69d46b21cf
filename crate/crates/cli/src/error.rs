use serde_json::json;

use scangrade::job::JobError;
use scangrade_review::ReviewError;

/// A failed subcommand: printed as one JSON object on stderr.
#[derive(Debug)]
pub struct CliError {
    pub stage: &'static str,
    pub code: String,
    pub message: String,
}

/// Exit status per error class.
///
/// | status | meaning |
/// |---|---|
/// | 1 | other failure |
/// | 2 | configuration or environment |
/// | 3 | invalid or missing input |
/// | 4 | provider failure, grading incomplete |
/// | 5 | undecided submissions at strict export |
pub fn exit_status(code: &str) -> u8 {
    match code {
        "CONFIG" | "MISSING_ENV" | "PSEUDONYM_MAP" | "USAGE" | "BIND" => 2,
        "PROVIDER" | "GRADING_INCOMPLETE" => 4,
        "UNDECIDED" => 5,
        "SHEET" | "BUBBLE_ID" | "KEYBANK" | "KEY_LINT" | "MALFORMED_ARTIFACT" | "MISSING_STAGE"
        | "INTEGRITY" | "IO" | "INPUT" | "UNKNOWN_ITEM" | "MISSING_CROP" | "DECISION" => 3,
        _ => 1,
    }
}

impl CliError {
    pub fn new(stage: &'static str, code: &str, message: impl Into<String>) -> Self {
        CliError {
            stage,
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn job(stage: &'static str, e: JobError) -> Self {
        Self::new(stage, e.code(), e.to_string())
    }

    pub fn review(stage: &'static str, e: ReviewError) -> Self {
        let code = match &e {
            ReviewError::Job(j) => j.code(),
            ReviewError::UnknownItem(_) => "UNKNOWN_ITEM",
            ReviewError::MissingCrop(_) => "MISSING_CROP",
            ReviewError::Bind(_) => "BIND",
            ReviewError::Io { .. } => "IO",
            _ => "DECISION",
        };
        let detail = e.code();
        let mut err = Self::new(stage, code, e.to_string());
        if code == "DECISION" {
            err.message = format!("{detail}: {}", err.message);
        }
        err
    }

    pub fn input(stage: &'static str, e: impl std::fmt::Display) -> Self {
        Self::new(stage, "INPUT", e.to_string())
    }

    /// `<STAGE>_<CODE>`, e.g. `GRADE_PROVIDER`.
    pub fn qualified_code(&self) -> String {
        format!(
            "{}_{}",
            self.stage.to_ascii_uppercase().replace('-', "_"),
            self.code
        )
    }

    pub fn exit_status(&self) -> u8 {
        exit_status(&self.code)
    }

    pub fn to_json(&self) -> String {
        json!({
            "error": {
                "stage": self.stage,
                "code": self.qualified_code(),
                "message": self.message,
                "exit_status": self.exit_status(),
            }
        })
        .to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_stage_prefixed() {
        let e = CliError::new("lint-keys", "KEY_LINT", "x");
        assert_eq!(e.qualified_code(), "LINT_KEYS_KEY_LINT");
        assert_eq!(e.exit_status(), 3);
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["error"]["stage"], "lint-keys");
    }

    #[test]
    fn grading_failures_have_their_own_status() {
        assert_eq!(exit_status("GRADING_INCOMPLETE"), 4);
        assert_eq!(exit_status("UNDECIDED"), 5);
        assert_eq!(exit_status("SOMETHING_NEW"), 1);
    }
}
