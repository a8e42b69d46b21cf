use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimingError {
    #[error("line {line}: malformed time `{value}` (expected mm:ss)")]
    MalformedTime { line: usize, value: String },
    #[error("line {line}: {message}")]
    MalformedRow { line: usize, message: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error(
        "{test_id} {question_id} annotator {annotator}: needs one manual and one digital time"
    )]
    IncompletePair {
        test_id: String,
        question_id: String,
        annotator: String,
    },
    #[error("time must be positive ({0} s)")]
    NonPositive(f64),
    #[error("{0} question(s); a confidence interval needs at least 2")]
    TooFewQuestions(usize),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Medium {
    Manual,
    Digital,
}

/// Which medium the annotator used first for this question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GradingOrder {
    MFirst,
    DFirst,
}

impl GradingOrder {
    pub fn label(self) -> &'static str {
        match self {
            GradingOrder::MFirst => "M->D",
            GradingOrder::DFirst => "D->M",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub annotator: String,
    pub test_id: String,
    pub question_id: String,
    pub medium: Medium,
    pub order: GradingOrder,
    pub seconds: f64,
}

/// `"13:27"` → 807.0
pub fn parse_mmss(value: &str) -> Option<f64> {
    let (m, s) = value.trim().split_once(':')?;
    let m: u32 = m.trim().parse().ok()?;
    let s: u32 = s.trim().parse().ok()?;
    (s < 60).then_some((m * 60 + s) as f64)
}

fn parse_order(value: &str) -> Option<GradingOrder> {
    let v: String = value
        .to_ascii_uppercase()
        .chars()
        .filter(|c| c.is_ascii_alphabetic())
        .collect();
    match v.as_str() {
        "MD" | "MFIRST" | "MANUALFIRST" => Some(GradingOrder::MFirst),
        "DM" | "DFIRST" | "DIGITALFIRST" => Some(GradingOrder::DFirst),
        _ => None,
    }
}

fn parse_medium(value: &str) -> Option<Medium> {
    match value.trim().to_ascii_uppercase().as_str() {
        "M" | "MANUAL" => Some(Medium::Manual),
        "D" | "DIGITAL" => Some(Medium::Digital),
        _ => None,
    }
}

/// Parse a timings table.
///
/// With a `medium` column every row says what it measured. Without one, rows
/// come in blocks of two per (test, question, annotator): the first row is
/// the manual time, the second the digital time, and the first row's order
/// label is the annotator's order for that question.
pub fn parse_timings(text: &str) -> Result<Vec<TimingRecord>, TimingError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| TimingError::Csv(e.to_string()))?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let col = |names: &[&str]| headers.iter().position(|h| names.contains(&h.as_str()));
    let need =
        |names: &[&str]| col(names).ok_or_else(|| TimingError::MissingColumn(names[0].into()));
    let test = need(&["bonus", "test", "test_id"])?;
    let question = need(&["question", "question_id"])?;
    let annotator = need(&["annotator"])?;
    let order = need(&["order"])?;
    let time = need(&["mm:ss", "time", "time (mm:ss)"])?;
    let medium = col(&["medium"]);

    struct Row {
        line: usize,
        test: String,
        question: String,
        annotator: String,
        order: GradingOrder,
        medium: Option<Medium>,
        seconds: f64,
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| TimingError::Csv(e.to_string()))?;
        let field = |idx: usize| record.get(idx).unwrap_or("").to_string();
        let raw_time = field(time);
        let seconds = parse_mmss(&raw_time).ok_or(TimingError::MalformedTime {
            line,
            value: raw_time,
        })?;
        if seconds <= 0.0 {
            return Err(TimingError::NonPositive(seconds));
        }
        let order = parse_order(&field(order)).ok_or_else(|| TimingError::MalformedRow {
            line,
            message: format!("unknown order `{}`", field(order)),
        })?;
        let medium = match medium {
            Some(m) => Some(
                parse_medium(&field(m)).ok_or_else(|| TimingError::MalformedRow {
                    line,
                    message: format!("unknown medium `{}`", field(m)),
                })?,
            ),
            None => None,
        };
        rows.push(Row {
            line,
            test: field(test),
            question: field(question),
            annotator: field(annotator),
            order,
            medium,
            seconds,
        });
    }

    let incomplete = |r: &Row| TimingError::IncompletePair {
        test_id: r.test.clone(),
        question_id: r.question.clone(),
        annotator: r.annotator.clone(),
    };
    let record = |r: &Row, medium: Medium, order: GradingOrder| TimingRecord {
        annotator: r.annotator.clone(),
        test_id: r.test.clone(),
        question_id: r.question.clone(),
        medium,
        order,
        seconds: r.seconds,
    };

    let mut out = Vec::with_capacity(rows.len());
    if medium.is_some() {
        for r in &rows {
            out.push(record(r, r.medium.unwrap(), r.order));
        }
    } else {
        let mut i = 0;
        while i < rows.len() {
            let first = &rows[i];
            let second = rows.get(i + 1).filter(|s| {
                (s.test.as_str(), s.question.as_str(), s.annotator.as_str())
                    == (
                        first.test.as_str(),
                        first.question.as_str(),
                        first.annotator.as_str(),
                    )
            });
            let Some(second) = second else {
                return Err(incomplete(first));
            };
            log::debug!("lines {}-{}: manual then digital", first.line, second.line);
            out.push(record(first, Medium::Manual, first.order));
            out.push(record(second, Medium::Digital, first.order));
            i += 2;
        }
    }
    check_pairs(&out)?;
    Ok(out)
}

fn check_pairs(records: &[TimingRecord]) -> Result<(), TimingError> {
    let mut seen: BTreeMap<(&str, &str, &str), Vec<Medium>> = BTreeMap::new();
    for r in records {
        seen.entry((&r.test_id, &r.question_id, &r.annotator))
            .or_default()
            .push(r.medium);
    }
    for ((t, q, a), mut media) in seen {
        media.sort();
        if media != [Medium::Manual, Medium::Digital] {
            return Err(TimingError::IncompletePair {
                test_id: t.into(),
                question_id: q.into(),
                annotator: a.into(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRatio {
    pub test_id: String,
    pub question_id: String,
    pub annotator: String,
    pub order: GradingOrder,
    pub manual_seconds: f64,
    pub digital_seconds: f64,
    /// digital / manual
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionLogMean {
    pub test_id: String,
    pub question_id: String,
    pub annotators: usize,
    pub log_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioAnalysis {
    pub per_pair_ratios: Vec<PairRatio>,
    pub per_question_log_means: Vec<QuestionLogMean>,
    /// exp of the mean per-question log ratio
    pub geomean: f64,
    /// Two-sided 95% t-interval, back-transformed.
    pub ci: (f64, f64),
    pub reduction_pct: f64,
    pub reduction_ci_pct: (f64, f64),
    pub df: usize,
    pub t_critical: f64,
}

/// Digital-to-manual time ratios, analysed on the log scale per question.
pub fn timing_analysis(records: &[TimingRecord]) -> Result<RatioAnalysis, TimingError> {
    check_pairs(records)?;
    let mut pairs: Vec<PairRatio> = Vec::new();
    for r in records {
        if r.seconds <= 0.0 {
            return Err(TimingError::NonPositive(r.seconds));
        }
        let existing = pairs.iter_mut().find(|p| {
            (
                p.test_id.as_str(),
                p.question_id.as_str(),
                p.annotator.as_str(),
            ) == (&r.test_id, &r.question_id, &r.annotator)
        });
        let pair = match existing {
            Some(p) => p,
            None => {
                pairs.push(PairRatio {
                    test_id: r.test_id.clone(),
                    question_id: r.question_id.clone(),
                    annotator: r.annotator.clone(),
                    order: r.order,
                    manual_seconds: 0.0,
                    digital_seconds: 0.0,
                    ratio: 0.0,
                });
                pairs.last_mut().unwrap()
            }
        };
        match r.medium {
            Medium::Manual => pair.manual_seconds = r.seconds,
            Medium::Digital => pair.digital_seconds = r.seconds,
        }
    }
    for p in &mut pairs {
        p.ratio = p.digital_seconds / p.manual_seconds;
    }

    let mut questions: Vec<(String, String, Vec<f64>)> = Vec::new();
    for p in &pairs {
        let log_ratio = p.ratio.ln();
        match questions
            .iter_mut()
            .find(|(t, q, _)| *t == p.test_id && *q == p.question_id)
        {
            Some((_, _, logs)) => logs.push(log_ratio),
            None => questions.push((p.test_id.clone(), p.question_id.clone(), vec![log_ratio])),
        }
    }
    let per_question: Vec<QuestionLogMean> = questions
        .into_iter()
        .map(|(test_id, question_id, logs)| QuestionLogMean {
            test_id,
            question_id,
            annotators: logs.len(),
            log_mean: logs.iter().sum::<f64>() / logs.len() as f64,
        })
        .collect();
    let n = per_question.len();
    if n < 2 {
        return Err(TimingError::TooFewQuestions(n));
    }
    let means: Vec<f64> = per_question.iter().map(|q| q.log_mean).collect();
    let mean = means.iter().sum::<f64>() / n as f64;
    let sd = (means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let se = sd / (n as f64).sqrt();
    let df = n - 1;
    let t = StudentsT::new(0.0, 1.0, df as f64)
        .expect("df >= 1")
        .inverse_cdf(0.975);
    let geomean = mean.exp();
    let ci = ((mean - t * se).exp(), (mean + t * se).exp());
    Ok(RatioAnalysis {
        per_pair_ratios: pairs,
        per_question_log_means: per_question,
        geomean,
        ci,
        reduction_pct: 100.0 * (1.0 - geomean),
        reduction_ci_pct: (100.0 * (1.0 - ci.1), 100.0 * (1.0 - ci.0)),
        df,
        t_critical: t,
    })
}

/// Per-pair ratios as CSV.
pub fn pairs_csv(analysis: &RatioAnalysis) -> String {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record([
        "test_id",
        "question_id",
        "annotator",
        "order",
        "manual_s",
        "digital_s",
        "ratio",
    ])
    .unwrap();
    for p in &analysis.per_pair_ratios {
        w.write_record([
            p.test_id.clone(),
            p.question_id.clone(),
            p.annotator.clone(),
            p.order.label().to_string(),
            p.manual_seconds.to_string(),
            p.digital_seconds.to_string(),
            format!("{:.3}", p.ratio),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}


#[cfg(test)]
mod study_fixture {
    use super::*;

    const TIMES: &str = include_str!("../../../../fixtures/grading_times.csv");

    #[test]
    fn reproduces_reference_ratios_and_interval() {
        let a = timing_analysis(&parse_timings(TIMES).unwrap()).unwrap();
        let expected = [
            0.705, 1.323, 0.998, 1.165, 0.907, 0.696, 0.596, 0.632, 0.577, 0.675, 0.629, 0.655,
        ];
        let got: Vec<f64> = a.per_pair_ratios.iter().map(|p| p.ratio).collect();
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() <= 0.0005 + 1e-9, "{got:?}");
        }
        let bold: Vec<bool> = a
            .per_pair_ratios
            .iter()
            .map(|p| p.order == GradingOrder::MFirst)
            .collect();
        assert_eq!(
            bold,
            [true, false, true, false, false, true, false, true, false, true, true, false]
        );
        assert!((a.geomean - 0.767).abs() <= 0.001);
        assert!((a.ci.0 - 0.595).abs() <= 0.002);
        assert!((a.ci.1 - 0.989).abs() <= 0.002);
        assert!((a.reduction_pct - 23.3).abs() <= 0.1);
        assert_eq!(a.df, 5);
    }
}
