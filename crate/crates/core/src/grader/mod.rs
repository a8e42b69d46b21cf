//! Multi-pass grading against a chat-completions style provider.
//!
//! Every pass is an independent request carrying the same prompt and image;
//! nothing from earlier passes is ever sent back to the model. Completions
//! must end with the footer contract rendered into every grading key:
//!
//! ```text
//! Total: 7/10
//! Flag: 0
//! ```
//!
//! When a completion restates its score, the last matching line wins.

mod cache;
mod provider;

use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keybank::PromptBundle;

pub use cache::{cache_key, cached_grade, PassCache};
pub use provider::{
    Completion, GradingProvider, HttpProvider, HttpProviderConfig, LoggedRequest, MockProvider,
    ProviderError, ProviderRequest, ScriptedProvider,
};

pub const DEFAULT_PASS_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no `Total: <n>/10` line")]
    MissingTotalLine,
    #[error("score {0} is outside 0..=10")]
    ScoreOutOfRange(i64),
    #[error("score `{0}` is not an integer")]
    NonIntegerScore(String),
    #[error("no `Flag: 0` or `Flag: 1` line")]
    MissingFlagLine,
}

#[derive(Debug, Error)]
pub enum GradeError {
    #[error("provider unavailable after {attempts} attempts: {last}")]
    ProviderUnavailable { attempts: u32, last: ProviderError },
    #[error("unparseable output after {attempts} attempts: {last}")]
    ParseFailed { attempts: u32, last: ParseError },
    #[error("pass count must be at least 1")]
    InvalidPassCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraderOutput {
    pub score: u8,
    pub alt_flag: bool,
}

fn total_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?m)^[\s*_>#]*Total:[\s*_]*([+-]?\d+(?:[.,]\d+)?)[\s*_]*/[\s*_]*10[\s*_.]*$")
            .unwrap()
    })
}

fn flag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^[\s*_>#]*Flag:[\s*_]*([01])[\s*_.]*$").unwrap())
}

/// Extract the score and alternative-approach flag from a completion.
pub fn parse_grader_output(text: &str) -> Result<GraderOutput, ParseError> {
    let total = total_re()
        .captures_iter(text)
        .last()
        .ok_or(ParseError::MissingTotalLine)?;
    let raw = &total[1];
    let score: i64 = raw
        .parse()
        .map_err(|_| ParseError::NonIntegerScore(raw.to_string()))?;
    if !(0..=10).contains(&score) {
        return Err(ParseError::ScoreOutOfRange(score));
    }
    let flag = flag_re()
        .captures_iter(text)
        .last()
        .ok_or(ParseError::MissingFlagLine)?;
    Ok(GraderOutput {
        score: score as u8,
        alt_flag: &flag[1] == "1",
    })
}

/// One evaluation of one submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassResult {
    pub pass_index: usize,
    pub raw_text: String,
    pub score: u8,
    pub alt_flag: bool,
    pub model_id: String,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Extra attempts after the first one.
    pub retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(retries: u32) -> Self {
        RetryPolicy {
            retries,
            base_delay: Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradeSettings {
    pub model_id: String,
    /// `None` leaves the provider default in place.
    pub temperature: Option<f64>,
    pub retry: RetryPolicy,
}

impl GradeSettings {
    pub fn new(model_id: impl Into<String>) -> Self {
        GradeSettings {
            model_id: model_id.into(),
            temperature: None,
            retry: RetryPolicy::default(),
        }
    }
}

/// Request one completion and parse it, retrying transport and parse
/// failures with fresh, independent calls.
pub fn grade_once(
    provider: &dyn GradingProvider,
    bundle: &PromptBundle,
    pass_index: usize,
    settings: &GradeSettings,
) -> Result<PassResult, GradeError> {
    let prompt = bundle.text();
    let request = ProviderRequest {
        prompt: &prompt,
        image: &bundle.attachment,
        model_id: &settings.model_id,
        temperature: settings.temperature,
        pass_index,
    };
    let attempts = settings.retry.retries + 1;
    let mut last_error = None;
    for attempt in 0..attempts {
        if attempt > 0 {
            let delay = settings.retry.base_delay * 2u32.saturating_pow(attempt - 1);
            if !delay.is_zero() {
                std::thread::sleep(delay);
            }
        }
        match provider.submit(&request) {
            Ok(completion) => match parse_grader_output(&completion.text) {
                Ok(out) => {
                    return Ok(PassResult {
                        pass_index,
                        raw_text: completion.text,
                        score: out.score,
                        alt_flag: out.alt_flag,
                        model_id: settings.model_id.clone(),
                        latency_ms: completion.latency_ms,
                    })
                }
                Err(e) => {
                    log::warn!(
                        "pass {pass_index}: attempt {} unparseable: {e}",
                        attempt + 1
                    );
                    last_error = Some(Err(e));
                }
            },
            Err(e) => {
                log::warn!("pass {pass_index}: attempt {} failed: {e}", attempt + 1);
                last_error = Some(Ok(e));
            }
        }
    }
    Err(match last_error.expect("at least one attempt") {
        Ok(provider_error) => GradeError::ProviderUnavailable {
            attempts,
            last: provider_error,
        },
        Err(parse_error) => GradeError::ParseFailed {
            attempts,
            last: parse_error,
        },
    })
}

/// `n` independent passes over the same bundle, ordered by pass index.
pub fn grade_response(
    provider: &dyn GradingProvider,
    bundle: &PromptBundle,
    n: usize,
    settings: &GradeSettings,
) -> Result<Vec<PassResult>, GradeError> {
    if n == 0 {
        return Err(GradeError::InvalidPassCount);
    }
    (0..n)
        .map(|i| grade_once(provider, bundle, i, settings))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::bundle;

    #[test]
    fn parses_the_contract_footer() {
        let out =
            parse_grader_output("Step 1 fine.\nTotal: 7/10\nFlag: 0\nMotivation: clear work.")
                .unwrap();
        assert_eq!(
            out,
            GraderOutput {
                score: 7,
                alt_flag: false
            }
        );
    }

    #[test]
    fn out_of_range_score() {
        assert_eq!(
            parse_grader_output("Total: 11/10\nFlag: 0"),
            Err(ParseError::ScoreOutOfRange(11))
        );
        assert_eq!(
            parse_grader_output("Total: -1/10\nFlag: 0"),
            Err(ParseError::ScoreOutOfRange(-1))
        );
    }

    #[test]
    fn last_total_line_wins() {
        let text = "Total: 6/10\nFlag: 1\nOn reflection the cancellation is valid.\nTotal: 8/10\nFlag: 0\nMotivation.";
        assert_eq!(
            parse_grader_output(text).unwrap(),
            GraderOutput {
                score: 8,
                alt_flag: false
            }
        );
    }

    #[test]
    fn missing_lines_and_fractions() {
        assert_eq!(
            parse_grader_output("Score 7"),
            Err(ParseError::MissingTotalLine)
        );
        assert_eq!(
            parse_grader_output("Total: 7/10"),
            Err(ParseError::MissingFlagLine)
        );
        assert_eq!(
            parse_grader_output("Total: 7/10\nFlag: 0/1"),
            Err(ParseError::MissingFlagLine)
        );
        assert_eq!(
            parse_grader_output("Total: 7.5/10\nFlag: 0"),
            Err(ParseError::NonIntegerScore("7.5".into()))
        );
        // The template line itself is not a score.
        assert_eq!(
            parse_grader_output("Total: X/10\nFlag: 0"),
            Err(ParseError::MissingTotalLine)
        );
    }

    #[test]
    fn tolerates_markdown_emphasis() {
        let out = parse_grader_output("**Total: 10/10**\n**Flag: 1**").unwrap();
        assert_eq!(
            out,
            GraderOutput {
                score: 10,
                alt_flag: true
            }
        );
    }

    #[test]
    fn scripted_success() {
        let provider = ScriptedProvider::new(vec![Ok("Total: 10/10\nFlag: 0".into())]);
        let r = grade_once(&provider, &bundle(), 0, &GradeSettings::new("m")).unwrap();
        assert_eq!(r.score, 10);
        assert!(!r.alt_flag);
    }

    #[test]
    fn retries_malformed_output() {
        let provider = ScriptedProvider::new(vec![
            Ok("I think it is fine".into()),
            Ok("Total: 12/10\nFlag: 0".into()),
            Ok("Total: 4/10\nFlag: 1".into()),
        ]);
        let settings = GradeSettings {
            retry: RetryPolicy::immediate(3),
            ..GradeSettings::new("m")
        };
        let r = grade_once(&provider, &bundle(), 2, &settings).unwrap();
        assert_eq!((r.score, r.alt_flag, r.pass_index), (4, true, 2));
        assert_eq!(provider.calls(), 3);
    }

    #[test]
    fn always_failing_provider() {
        let provider = ScriptedProvider::failing();
        let settings = GradeSettings {
            retry: RetryPolicy::immediate(3),
            ..GradeSettings::new("m")
        };
        let err = grade_once(&provider, &bundle(), 0, &settings).unwrap_err();
        assert!(matches!(
            err,
            GradeError::ProviderUnavailable { attempts: 4, .. }
        ));
        assert_eq!(provider.calls(), 4);
    }

    #[test]
    fn persistent_garbage_is_a_parse_failure() {
        let provider = ScriptedProvider::new(vec![Ok("no score".into()); 4]);
        let settings = GradeSettings {
            retry: RetryPolicy::immediate(3),
            ..GradeSettings::new("m")
        };
        let err = grade_once(&provider, &bundle(), 0, &settings).unwrap_err();
        assert!(matches!(
            err,
            GradeError::ParseFailed {
                last: ParseError::MissingTotalLine,
                ..
            }
        ));
    }

    #[test]
    fn deterministic_mock_gives_identical_passes() {
        let provider = MockProvider::deterministic(3);
        let passes = grade_response(&provider, &bundle(), 5, &GradeSettings::new("mock")).unwrap();
        assert_eq!(passes.len(), 5);
        assert!(passes.iter().all(|p| p.score == passes[0].score));
        assert_eq!(
            passes.iter().map(|p| p.pass_index).collect::<Vec<_>>(),
            vec![0, 1, 2, 3, 4]
        );
    }

    #[test]
    fn scripted_passes_are_recorded_in_order() {
        let script = [5, 6, 6, 7, 6]
            .iter()
            .map(|s| Ok(format!("Total: {s}/10\nFlag: 0")))
            .collect();
        let provider = ScriptedProvider::new(script);
        let passes = grade_response(&provider, &bundle(), 5, &GradeSettings::new("m")).unwrap();
        assert_eq!(
            passes.iter().map(|p| p.score).collect::<Vec<_>>(),
            vec![5, 6, 6, 7, 6]
        );
    }

    #[test]
    fn zero_passes_is_rejected() {
        let provider = MockProvider::deterministic(0);
        assert!(matches!(
            grade_response(&provider, &bundle(), 0, &GradeSettings::new("m")),
            Err(GradeError::InvalidPassCount)
        ));
    }

    #[test]
    fn passes_never_see_each_other() {
        let provider = MockProvider::new(11);
        let b = bundle();
        grade_response(&provider, &b, 5, &GradeSettings::new("mock")).unwrap();
        let log = provider.requests();
        assert_eq!(log.len(), 5);
        let prompt = b.text();
        for entry in &log {
            assert_eq!(entry.prompt, prompt);
            assert_eq!(entry.image_hash, b.attachment.content_hash);
            // No score line from an earlier pass may appear in the prompt.
            assert_eq!(
                parse_grader_output(&entry.prompt),
                Err(ParseError::MissingTotalLine)
            );
        }
    }
}
