//! Questions, worked solutions and grading keys, and the fixed grading prompt.
//!
//! Grading keys are authored as JSON so that their structure can be checked
//! mechanically ([`lint_grading_key`]); [`render_key_text`] turns a key into
//! the prose the model reads, ending with the output contract that
//! [`crate::grader::parse_grader_output`] enforces.
//!
//! Bank layout on disk:
//!
//! ```text
//! questions/<test_id>/<question_id>/question.txt
//! questions/<test_id>/<question_id>/solution.txt   (or solution.tex)
//! questions/<test_id>/<question_id>/grading_key.json
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{sha256_fields, sha256_hex};
use crate::sheet::AnswerCrop;

/// Course-level grading instructions placed before every prompt.
pub const GRADING_PREAMBLE: &str = include_str!("../assets/grading_preamble.txt");
pub const PREAMBLE_VERSION: &str = "v1";
pub const TOTAL_POINTS: u32 = 10;
/// Placeholder standing in for the attached answer image.
pub const IMAGE_PLACEHOLDER: &str = "[attached image]";

pub const FOOTER_LINES: [&str; 5] = [
    "Finally, on a new line at the very end, write exactly:",
    "Total: X/10",
    "(where X is the numeric score).",
    "Flag: 0/1 (Where 1 means the student used a different approach)",
    "Finally motivate your grade.",
];

const OVERRULE_LINE: &str =
    "If the student's approach is mathematically sound but not covered above, \
you may overrule this grading scheme and assign your own sub-grades; in that case, also flag that \
the student used a different approach.";

const BANNED_PHRASES: [&str; 2] = ["partial credit", "partially correct"];

#[derive(Debug, Error)]
pub enum KeyError {
    #[error("{question_id}: missing {what}")]
    MissingKey { question_id: String, what: String },
    #[error("{question_id}: more than one {what}")]
    DuplicateKey { question_id: String, what: String },
    #[error("question id mismatch: {0}")]
    KeyMismatch(String),
    #[error("grading key for {question_id} fails lint: {}", summarize(.findings))]
    LintFailed {
        question_id: String,
        findings: Vec<LintFinding>,
    },
    #[error("malformed {path}: {message}")]
    Malformed { path: String, message: String },
    #[error("empty {0}")]
    Empty(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn summarize(findings: &[LintFinding]) -> String {
    findings
        .iter()
        .filter(|f| f.severity == Severity::Error)
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub test_id: String,
    pub question_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionKey {
    pub question_id: String,
    /// Worked solution, LaTeX allowed.
    pub solution_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyStep {
    pub description: String,
    pub points: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AltPath {
    /// Names the alternative method, e.g. "l'Hôpital's rule".
    pub description: String,
    pub steps: Vec<KeyStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradingKey {
    pub question_id: String,
    pub steps: Vec<KeyStep>,
    #[serde(default)]
    pub alt_paths: Vec<AltPath>,
    /// Explicit statements of what must not cost points.
    #[serde(default)]
    pub no_deduction: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Severity {
    Info,
    Warn,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintFinding {
    pub code: LintCode,
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for LintFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} {}: {}",
            self.severity,
            self.code.as_str(),
            self.message
        )
    }
}

/// Grading-key lint rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LintCode {
    /// A path's step points do not add up to 10.
    PointSum,
    /// A step is worth zero points.
    ZeroPointStep,
    /// A path has no steps, or a step has no description.
    MissingSteps,
    /// A single step carries more than 3 points.
    OversizedStep,
    /// Vague wording such as "partial credit".
    VaguePhrase,
    /// No alternative solution path is spelled out.
    NoAlternativePath,
    /// No statement of which deviations must not be penalised.
    NoDeductionClause,
}

impl LintCode {
    pub fn as_str(self) -> &'static str {
        match self {
            LintCode::PointSum => "point-sum",
            LintCode::ZeroPointStep => "zero-point-step",
            LintCode::MissingSteps => "missing-steps",
            LintCode::OversizedStep => "oversized-step",
            LintCode::VaguePhrase => "vague-phrase",
            LintCode::NoAlternativePath => "no-alternative-path",
            LintCode::NoDeductionClause => "no-deduction-clause",
        }
    }
}

fn finding(code: LintCode, severity: Severity, message: String) -> LintFinding {
    LintFinding {
        code,
        severity,
        message,
    }
}

fn lint_path(label: &str, steps: &[KeyStep], out: &mut Vec<LintFinding>) {
    if steps.is_empty() {
        out.push(finding(
            LintCode::MissingSteps,
            Severity::Error,
            format!("{label} has no steps"),
        ));
        return;
    }
    let sum: u32 = steps.iter().map(|s| s.points).sum();
    if sum != TOTAL_POINTS {
        out.push(finding(
            LintCode::PointSum,
            Severity::Error,
            format!("{label} awards {sum} points, expected {TOTAL_POINTS}"),
        ));
    }
    for (i, step) in steps.iter().enumerate() {
        let which = format!("{label} step {}", i + 1);
        if step.description.trim().is_empty() {
            out.push(finding(
                LintCode::MissingSteps,
                Severity::Error,
                format!("{which} has no description"),
            ));
        }
        if step.points == 0 {
            out.push(finding(
                LintCode::ZeroPointStep,
                Severity::Error,
                format!("{which} is worth 0 points"),
            ));
        }
        if step.points > 3 {
            out.push(finding(
                LintCode::OversizedStep,
                Severity::Warn,
                format!(
                    "{which} is worth {} points; keep steps at 2-3 points",
                    step.points
                ),
            ));
        }
        let lower = step.description.to_lowercase();
        for phrase in BANNED_PHRASES {
            if lower.contains(phrase) {
                out.push(finding(
                    LintCode::VaguePhrase,
                    Severity::Warn,
                    format!("{which} uses \"{phrase}\"; state the concrete criterion instead"),
                ));
            }
        }
    }
}

/// Check a grading key against the construction rules.
pub fn lint_grading_key(key: &GradingKey) -> Vec<LintFinding> {
    let mut out = Vec::new();
    lint_path("main path", &key.steps, &mut out);
    for alt in &key.alt_paths {
        lint_path(
            &format!("alternative `{}`", alt.description),
            &alt.steps,
            &mut out,
        );
    }
    if key.alt_paths.is_empty() {
        out.push(finding(
            LintCode::NoAlternativePath,
            Severity::Warn,
            "no alternative solution path is allowed for explicitly".into(),
        ));
    }
    let mentions_no_deduction = key
        .steps
        .iter()
        .chain(key.alt_paths.iter().flat_map(|a| &a.steps))
        .any(|s| s.description.to_lowercase().contains("do not deduct"));
    if key.no_deduction.is_empty() && !mentions_no_deduction {
        out.push(finding(
            LintCode::NoDeductionClause,
            Severity::Info,
            "no statement of deviations that should not cost points".into(),
        ));
    }
    out
}

fn points(n: u32) -> String {
    if n == 1 {
        "1 point".into()
    } else {
        format!("{n} points")
    }
}

fn render_steps(steps: &[KeyStep], out: &mut Vec<String>) {
    for step in steps {
        out.push(format!(
            "Give {} for {}",
            points(step.points),
            step.description.trim()
        ));
    }
}

/// The prose form of a grading key, as shown to the model.
pub fn render_key_text(key: &GradingKey) -> String {
    let mut lines = vec![format!(
        "Give a score out of {TOTAL_POINTS} for the student's explanation."
    )];
    render_steps(&key.steps, &mut lines);
    for alt in &key.alt_paths {
        lines.push(format!(
            "If the student uses a different approach ({}) instead:",
            alt.description.trim()
        ));
        render_steps(&alt.steps, &mut lines);
    }
    for clause in &key.no_deduction {
        lines.push(clause.trim().to_string());
    }
    lines.push(OVERRULE_LINE.to_string());
    lines.extend(FOOTER_LINES.iter().map(|s| s.to_string()));
    lines.join("\n")
}

/// PNG image attached to a grading request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attachment {
    pub media_type: String,
    pub bytes: Arc<Vec<u8>>,
    /// Digest of the crop's pixel bytes, see [`AnswerCrop::content_hash`].
    pub content_hash: String,
}

impl Attachment {
    pub fn from_crop(crop: &AnswerCrop) -> Attachment {
        Attachment {
            media_type: "image/png".into(),
            bytes: Arc::new(crop.png_bytes()),
            content_hash: crop.content_hash.clone(),
        }
    }
}

/// Everything sent to the model for one evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub question_id: String,
    pub system_text: String,
    pub question_text: String,
    pub solution_text: String,
    pub key_text: String,
    pub attachment: Attachment,
    pub prompt_hash: String,
}

impl PromptBundle {
    /// The complete prompt text, preamble first.
    pub fn text(&self) -> String {
        format!(
            "{}\n\nQuestion:\n{}\n\nCorrect solution:\n{}\n\nGrading key:\n{}\n\nStudent answer:\n{}",
            self.system_text.trim_end(),
            self.question_text.trim(),
            self.solution_text.trim(),
            self.key_text,
            IMAGE_PLACEHOLDER
        )
    }
}

pub fn assemble_prompt(
    question: &Question,
    solution: &SolutionKey,
    key: &GradingKey,
    crop: &AnswerCrop,
) -> Result<PromptBundle, KeyError> {
    assemble_with_attachment(question, solution, key, Attachment::from_crop(crop))
}

pub fn assemble_with_attachment(
    question: &Question,
    solution: &SolutionKey,
    key: &GradingKey,
    attachment: Attachment,
) -> Result<PromptBundle, KeyError> {
    let qid = &question.question_id;
    if &solution.question_id != qid || &key.question_id != qid {
        return Err(KeyError::KeyMismatch(format!(
            "question {qid}, solution {}, grading key {}",
            solution.question_id, key.question_id
        )));
    }
    let key_text = render_key_text(key);
    let prompt_hash = sha256_fields([
        GRADING_PREAMBLE.as_bytes(),
        question.text.as_bytes(),
        solution.solution_text.as_bytes(),
        key_text.as_bytes(),
    ]);
    Ok(PromptBundle {
        question_id: qid.clone(),
        system_text: GRADING_PREAMBLE.to_string(),
        question_text: question.text.clone(),
        solution_text: solution.solution_text.clone(),
        key_text,
        attachment,
        prompt_hash,
    })
}

pub fn preamble_digest() -> String {
    sha256_hex(GRADING_PREAMBLE.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BankEntry {
    pub question: Question,
    pub solution: SolutionKey,
    pub key: GradingKey,
    pub findings: Vec<LintFinding>,
}

impl BankEntry {
    pub fn prompt_for(&self, crop: &AnswerCrop) -> Result<PromptBundle, KeyError> {
        assemble_prompt(&self.question, &self.solution, &self.key, crop)
    }
}

/// Validated questions keyed by `(test_id, question_id)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyBank {
    entries: BTreeMap<(String, String), BankEntry>,
}

impl KeyBank {
    pub fn get(&self, test_id: &str, question_id: &str) -> Option<&BankEntry> {
        self.entries
            .get(&(test_id.to_string(), question_id.to_string()))
    }

    pub fn entries(&self) -> impl Iterator<Item = &BankEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn test_ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.entries.keys().map(|(t, _)| t.clone()).collect();
        ids.dedup();
        ids
    }

    pub fn insert(&mut self, entry: BankEntry) -> Result<(), KeyError> {
        let findings = lint_grading_key(&entry.key);
        if findings.iter().any(|f| f.severity == Severity::Error) {
            return Err(KeyError::LintFailed {
                question_id: entry.question.question_id.clone(),
                findings,
            });
        }
        let k = (
            entry.question.test_id.clone(),
            entry.question.question_id.clone(),
        );
        if self.entries.contains_key(&k) {
            return Err(KeyError::DuplicateKey {
                question_id: k.1,
                what: "question".into(),
            });
        }
        self.entries.insert(k, BankEntry { findings, ..entry });
        Ok(())
    }
}

fn read_nonempty(path: &Path, question_id: &str, what: &str) -> Result<String, KeyError> {
    if !path.exists() {
        return Err(KeyError::MissingKey {
            question_id: question_id.into(),
            what: what.into(),
        });
    }
    let text = std::fs::read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(KeyError::Empty(format!("{what} for {question_id}")));
    }
    Ok(text)
}

fn sorted_dirs(dir: &Path) -> Result<Vec<std::path::PathBuf>, KeyError> {
    let mut out: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

/// Load and lint every question under `<root>/questions`. Any lint error
/// aborts the load.
pub fn load_key_bank(root: impl AsRef<Path>) -> Result<KeyBank, KeyError> {
    let questions_dir = root.as_ref().join("questions");
    let mut bank = KeyBank::default();
    for test_dir in sorted_dirs(&questions_dir)? {
        let test_id = dir_name(&test_dir);
        for qdir in sorted_dirs(&test_dir)? {
            let question_id = dir_name(&qdir);
            let text = read_nonempty(&qdir.join("question.txt"), &question_id, "question.txt")?;

            let candidates: Vec<_> = ["solution.txt", "solution.tex"]
                .iter()
                .map(|f| qdir.join(f))
                .filter(|p| p.exists())
                .collect();
            let solution_path = match candidates.as_slice() {
                [one] => one.clone(),
                [] => {
                    return Err(KeyError::MissingKey {
                        question_id,
                        what: "solution".into(),
                    })
                }
                _ => {
                    return Err(KeyError::DuplicateKey {
                        question_id,
                        what: "solution".into(),
                    })
                }
            };
            let solution_text = read_nonempty(&solution_path, &question_id, "solution")?;

            let key_path = qdir.join("grading_key.json");
            let key_doc = read_nonempty(&key_path, &question_id, "grading_key.json")?;
            let key: GradingKey =
                serde_json::from_str(&key_doc).map_err(|e| KeyError::Malformed {
                    path: key_path.display().to_string(),
                    message: e.to_string(),
                })?;
            if key.question_id != question_id {
                return Err(KeyError::KeyMismatch(format!(
                    "{} declares question_id {}",
                    key_path.display(),
                    key.question_id
                )));
            }
            bank.insert(BankEntry {
                question: Question {
                    test_id: test_id.clone(),
                    question_id: question_id.clone(),
                    text: text.trim().to_string(),
                },
                solution: SolutionKey {
                    question_id: question_id.clone(),
                    solution_text: solution_text.trim().to_string(),
                },
                key,
                findings: vec![],
            })?;
        }
    }
    Ok(bank)
}

fn dir_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Write one bank entry in the on-disk layout.
pub fn write_entry(
    root: impl AsRef<Path>,
    question: &Question,
    solution: &SolutionKey,
    key: &GradingKey,
) -> Result<(), KeyError> {
    let dir = root
        .as_ref()
        .join("questions")
        .join(&question.test_id)
        .join(&question.question_id);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("question.txt"), format!("{}\n", question.text))?;
    std::fs::write(
        dir.join("solution.txt"),
        format!("{}\n", solution.solution_text),
    )?;
    let json = serde_json::to_string_pretty(key).expect("key serialises");
    std::fs::write(dir.join("grading_key.json"), json + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;
    use image::GrayImage;

    fn step(description: &str, points: u32) -> KeyStep {
        KeyStep {
            description: description.into(),
            points,
        }
    }

    fn good_key() -> GradingKey {
        GradingKey {
            question_id: "Q1".into(),
            steps: vec![
                step("recognising the 0/0 form", 2),
                step("factoring x^2 - 1 as (x - 1)(x + 1)", 3),
                step("cancelling the common factor x - 1", 3),
                step("the final value 2", 2),
            ],
            alt_paths: vec![AltPath {
                description: "l'Hôpital's rule".into(),
                steps: vec![
                    step("recognising the 0/0 form", 2),
                    step("stating that l'Hôpital's rule applies", 2),
                    step("differentiating numerator and denominator", 3),
                    step("the final value 2", 3),
                ],
            }],
            no_deduction: vec!["Do not deduct points for omitting the domain.".into()],
        }
    }

    fn crop() -> AnswerCrop {
        AnswerCrop::new(
            "p1",
            "Q1",
            GrayImage::new(4, 4),
            Rect::new(0.0, 0.0, 4.0, 4.0),
        )
    }

    fn triple() -> (Question, SolutionKey, GradingKey) {
        (
            Question {
                test_id: "T1".into(),
                question_id: "Q1".into(),
                text: "Compute lim_{x->1} (x^2-1)/(x-1).".into(),
            },
            SolutionKey {
                question_id: "Q1".into(),
                solution_text: "Factor and cancel: the limit is 2.".into(),
            },
            good_key(),
        )
    }

    #[test]
    fn four_point_step_is_flagged() {
        let mut key = good_key();
        key.steps = vec![
            step("recognising that numerator and denominator vanish", 2),
            step("factoring correctly", 4),
            step("cancelling the common part", 2),
            step("the final solution", 2),
        ];
        let findings = lint_grading_key(&key);
        assert_eq!(findings.len(), 1, "{findings:?}");
        assert_eq!(findings[0].code, LintCode::OversizedStep);
        assert_eq!(findings[0].severity, Severity::Warn);
    }

    #[test]
    fn well_formed_key_has_no_findings() {
        assert!(lint_grading_key(&good_key()).is_empty());
    }

    #[test]
    fn nine_points_is_an_error() {
        let mut key = good_key();
        key.steps[0].points = 1;
        let findings = lint_grading_key(&key);
        assert!(findings
            .iter()
            .any(|f| f.code == LintCode::PointSum && f.severity == Severity::Error));
    }

    #[test]
    fn vague_phrases_and_missing_sections() {
        let mut key = good_key();
        key.steps[1].description = "Partial credit for an attempt at factoring".into();
        key.alt_paths.clear();
        key.no_deduction.clear();
        let codes: Vec<_> = lint_grading_key(&key)
            .iter()
            .map(|f| (f.code, f.severity))
            .collect();
        assert!(codes.contains(&(LintCode::VaguePhrase, Severity::Warn)));
        assert!(codes.contains(&(LintCode::NoAlternativePath, Severity::Warn)));
        assert!(codes.contains(&(LintCode::NoDeductionClause, Severity::Info)));
    }

    #[test]
    fn zero_point_step_is_an_error() {
        let mut key = good_key();
        key.steps.push(step("neat handwriting", 0));
        assert!(lint_grading_key(&key)
            .iter()
            .any(|f| f.code == LintCode::ZeroPointStep));
    }

    #[test]
    fn rendered_key_carries_the_footer_contract() {
        let text = render_key_text(&good_key());
        assert!(text.lines().any(|l| l == "Total: X/10"));
        assert!(text.lines().any(|l| l.starts_with("Flag: 0/1")));
        assert_eq!(
            text.matches("If the student uses a different approach")
                .count(),
            1
        );
        assert!(text.contains("Give 3 points for factoring"));

        let mut plain = good_key();
        plain.alt_paths.clear();
        let text = render_key_text(&plain);
        assert_eq!(
            text.matches("If the student uses a different approach")
                .count(),
            0
        );
        assert!(text.lines().any(|l| l == "Total: X/10"));
    }

    #[test]
    fn prompt_starts_with_preamble_and_is_stable() {
        let (q, s, k) = triple();
        let bundle = assemble_prompt(&q, &s, &k, &crop()).unwrap();
        let text = bundle.text();
        assert!(text.starts_with("You are grading a student's solution."));
        assert!(text.starts_with(GRADING_PREAMBLE.trim_end()));
        assert!(text.contains("$\\mathbb{R}$"));
        assert!(text.contains("\n\nQuestion:\nCompute"));
        assert!(text.ends_with("Student answer:\n[attached image]"));
        for placeholder in ["{question", "{solution", "{grading", "{student"] {
            assert!(!text.contains(placeholder), "unsubstituted {placeholder}");
        }
        let again = assemble_prompt(&q, &s, &k, &crop()).unwrap();
        assert_eq!(bundle.prompt_hash, again.prompt_hash);
    }

    #[test]
    fn prompt_hash_tracks_every_text_field() {
        let (q, s, k) = triple();
        let base = assemble_prompt(&q, &s, &k, &crop()).unwrap().prompt_hash;
        let mut q2 = q.clone();
        q2.text.push('!');
        let mut s2 = s.clone();
        s2.solution_text.push('!');
        let mut k2 = k.clone();
        k2.steps[0].description.push('!');
        for (q, s, k) in [
            (q2, s.clone(), k.clone()),
            (q.clone(), s2, k.clone()),
            (q, s, k2),
        ] {
            assert_ne!(
                assemble_prompt(&q, &s, &k, &crop()).unwrap().prompt_hash,
                base
            );
        }
    }

    #[test]
    fn mismatched_solution_is_rejected() {
        let (q, mut s, k) = triple();
        s.question_id = "Q2".into();
        assert!(matches!(
            assemble_prompt(&q, &s, &k, &crop()),
            Err(KeyError::KeyMismatch(_))
        ));
    }

    #[test]
    fn bank_round_trip_and_failures() {
        let dir = tempfile::tempdir().unwrap();
        let (q, s, k) = triple();
        write_entry(dir.path(), &q, &s, &k).unwrap();
        let mut q2 = q.clone();
        q2.question_id = "Q2".into();
        let mut s2 = s.clone();
        s2.question_id = "Q2".into();
        let mut k2 = k.clone();
        k2.question_id = "Q2".into();
        write_entry(dir.path(), &q2, &s2, &k2).unwrap();
        let bank = load_key_bank(dir.path()).unwrap();
        assert_eq!(bank.len(), 2);
        assert_eq!(bank.get("T1", "Q2").unwrap().key, k2);

        let key_path = dir.path().join("questions/T1/Q2/grading_key.json");
        k2.steps[0].points = 1;
        std::fs::write(&key_path, serde_json::to_string(&k2).unwrap()).unwrap();
        assert!(matches!(
            load_key_bank(dir.path()),
            Err(KeyError::LintFailed { .. })
        ));

        std::fs::remove_file(&key_path).unwrap();
        assert!(matches!(
            load_key_bank(dir.path()),
            Err(KeyError::MissingKey { .. })
        ));
    }
}
