use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use super::kappa::{qwk, KappaError, SCORE_CATEGORIES};
use crate::ledger::{aggregate, AggregationRule};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoresError {
    #[error("vectors differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("no observations")]
    Empty,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("question {question}, submission {submission}: missing score from {grader}")]
    Incomplete {
        question: String,
        submission: String,
        grader: String,
    },
    #[error("csv: {0}")]
    Csv(String),
    #[error("question {question}: {source}")]
    Kappa {
        question: String,
        #[source]
        source: KappaError,
    },
}

fn same_len(a: usize, b: usize) -> Result<(), ScoresError> {
    if a != b {
        return Err(ScoresError::LengthMismatch { left: a, right: b });
    }
    if a == 0 {
        return Err(ScoresError::Empty);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationStats {
    pub n: usize,
    pub mean_abs_dev: f64,
    pub median_abs_dev: f64,
    /// Counts of |Δ| = 0, 1, ..., 10.
    pub histogram: [u32; SCORE_CATEGORIES],
}

/// Element-wise absolute score differences.
pub fn deviation_stats(a: &[u8], b: &[u8]) -> Result<DeviationStats, ScoresError> {
    same_len(a.len(), b.len())?;
    let mut deltas: Vec<u8> = a.iter().zip(b).map(|(&x, &y)| x.abs_diff(y)).collect();
    deltas.sort_unstable();
    let n = deltas.len();
    let mut histogram = [0u32; SCORE_CATEGORIES];
    for &d in &deltas {
        histogram[(d as usize).min(SCORE_CATEGORIES - 1)] += 1;
    }
    let median = if n % 2 == 1 {
        deltas[n / 2] as f64
    } else {
        (deltas[n / 2 - 1] as f64 + deltas[n / 2] as f64) / 2.0
    };
    Ok(DeviationStats {
        n,
        mean_abs_dev: deltas.iter().map(|&d| d as f64).sum::<f64>() / n as f64,
        median_abs_dev: median,
        histogram,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Position {
    Below,
    /// Inside the human range, including a tie with exactly one human.
    Between,
    /// Both humans gave the same score and so did the model.
    Equal,
    Above,
}

/// Where a model score falls relative to two human scores, and how far it
/// is from the nearest human score.
pub fn position_of(g: u8, a: u8, b: u8) -> (Position, u8) {
    let (lo, hi) = (a.min(b), a.max(b));
    if g < lo {
        (Position::Below, lo - g)
    } else if g > hi {
        (Position::Above, g - hi)
    } else if lo == hi {
        (Position::Equal, 0)
    } else {
        (Position::Between, (g - lo).min(hi - g))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositioningBreakdown {
    pub n: usize,
    pub below: usize,
    pub between: usize,
    pub equal: usize,
    pub above: usize,
    pub proportions: BTreeMap<String, f64>,
    pub mean_distance: f64,
    /// Sample standard deviation; 0 for fewer than 2 items.
    pub stddev_distance: f64,
}

pub fn positioning(
    llm: &[u8],
    human_a: &[u8],
    human_b: &[u8],
) -> Result<PositioningBreakdown, ScoresError> {
    same_len(llm.len(), human_a.len())?;
    same_len(llm.len(), human_b.len())?;
    let n = llm.len();
    let mut counts = [0usize; 4];
    let mut distances = Vec::with_capacity(n);
    for i in 0..n {
        let (pos, d) = position_of(llm[i], human_a[i], human_b[i]);
        counts[pos as usize] += 1;
        distances.push(d as f64);
    }
    let mean = distances.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let names = ["BELOW", "BETWEEN", "EQUAL", "ABOVE"];
    Ok(PositioningBreakdown {
        n,
        below: counts[0],
        between: counts[1],
        equal: counts[2],
        above: counts[3],
        proportions: names
            .iter()
            .zip(counts)
            .map(|(k, c)| (k.to_string(), c as f64 / n as f64))
            .collect(),
        mean_distance: mean,
        stddev_distance: sd,
    })
}

/// Scores of one submission from two annotators and the model passes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SubmissionScores {
    pub a1: Option<u8>,
    pub a2: Option<u8>,
    pub llm: BTreeMap<usize, u8>,
}

/// `question -> submission -> scores`, read from
/// `question,submission,grader,score` with grader in
/// `A1`, `A2`, `LLM_pass_<i>`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreDataset {
    pub questions: BTreeMap<String, BTreeMap<String, SubmissionScores>>,
}

/// Per-question vectors aligned by submission.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionVectors {
    pub a1: Vec<u8>,
    pub a2: Vec<u8>,
    pub passes: Vec<Vec<u8>>,
}

impl QuestionVectors {
    pub fn llm(&self, rule: AggregationRule) -> Vec<u8> {
        self.passes
            .iter()
            .map(|p| aggregate(p, rule).expect("validated passes"))
            .collect()
    }
}

impl ScoreDataset {
    pub fn parse_csv(text: &str) -> Result<Self, ScoresError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut out = ScoreDataset::default();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| ScoresError::Csv(e.to_string()))?;
            if rec.len() < 4 {
                return Err(ScoresError::Malformed {
                    line,
                    message: "expected question,submission,grader,score".into(),
                });
            }
            let score: u8 =
                rec[3]
                    .parse()
                    .ok()
                    .filter(|s| *s <= 10)
                    .ok_or_else(|| ScoresError::Malformed {
                        line,
                        message: format!("score `{}` is not an integer in 0..=10", &rec[3]),
                    })?;
            let entry = out
                .questions
                .entry(rec[0].to_string())
                .or_default()
                .entry(rec[1].to_string())
                .or_default();
            let grader = &rec[2];
            match grader {
                "A1" => entry.a1 = Some(score),
                "A2" => entry.a2 = Some(score),
                g => {
                    let idx = g
                        .strip_prefix("LLM_pass_")
                        .and_then(|i| i.parse::<usize>().ok())
                        .ok_or_else(|| ScoresError::Malformed {
                            line,
                            message: format!("unknown grader `{g}`"),
                        })?;
                    entry.llm.insert(idx, score);
                }
            }
        }
        Ok(out)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(["question", "submission", "grader", "score"])
            .unwrap();
        for (q, subs) in &self.questions {
            for (s, scores) in subs {
                let mut row = |g: String, v: u8| {
                    w.write_record([q.as_str(), s.as_str(), &g, &v.to_string()])
                        .unwrap()
                };
                if let Some(v) = scores.a1 {
                    row("A1".into(), v);
                }
                if let Some(v) = scores.a2 {
                    row("A2".into(), v);
                }
                for (i, v) in &scores.llm {
                    row(format!("LLM_pass_{i}"), *v);
                }
            }
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    /// Aligned vectors for one question; every submission needs both
    /// annotators and passes `0..n` with the same `n` throughout.
    pub fn vectors(&self, question: &str) -> Result<QuestionVectors, ScoresError> {
        let subs = self.questions.get(question).ok_or(ScoresError::Empty)?;
        let pass_count = subs.values().map(|s| s.llm.len()).max().unwrap_or(0);
        let mut v = QuestionVectors {
            a1: vec![],
            a2: vec![],
            passes: vec![],
        };
        for (sub, s) in subs {
            let missing = |grader: String| ScoresError::Incomplete {
                question: question.into(),
                submission: sub.clone(),
                grader,
            };
            v.a1.push(s.a1.ok_or_else(|| missing("A1".into()))?);
            v.a2.push(s.a2.ok_or_else(|| missing("A2".into()))?);
            let passes = (0..pass_count)
                .map(|i| {
                    s.llm
                        .get(&i)
                        .copied()
                        .ok_or_else(|| missing(format!("LLM_pass_{i}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if passes.is_empty() {
                return Err(missing("LLM_pass_0".into()));
            }
            v.passes.push(passes);
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaRow {
    pub question: String,
    pub n: usize,
    pub a1_a2: f64,
    pub a1_llm: f64,
    pub a2_llm: f64,
}

/// Per-question weighted kappa: the annotators against each other and each
/// against the aggregated model score.
pub fn kappa_report(
    dataset: &ScoreDataset,
    rule: AggregationRule,
) -> Result<Vec<KappaRow>, ScoresError> {
    let widen = |v: &[u8]| v.iter().map(|&x| x as u32).collect::<Vec<u32>>();
    dataset
        .questions
        .keys()
        .map(|q| {
            let v = dataset.vectors(q)?;
            let llm = widen(&v.llm(rule));
            let (a1, a2) = (widen(&v.a1), widen(&v.a2));
            let k = |x: &[u32], y: &[u32]| {
                qwk(x, y, SCORE_CATEGORIES).map_err(|source| ScoresError::Kappa {
                    question: q.clone(),
                    source,
                })
            };
            Ok(KappaRow {
                question: q.clone(),
                n: a1.len(),
                a1_a2: k(&a1, &a2)?,
                a1_llm: k(&a1, &llm)?,
                a2_llm: k(&a2, &llm)?,
            })
        })
        .collect()
}

pub fn kappa_csv(rows: &[KappaRow]) -> String {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(["question", "n", "a1_vs_a2", "a1_vs_llm", "a2_vs_llm"])
        .unwrap();
    for r in rows {
        w.write_record([
            r.question.clone(),
            r.n.to_string(),
            format!("{:.6}", r.a1_a2),
            format!("{:.6}", r.a1_llm),
            format!("{:.6}", r.a2_llm),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deviation_examples() {
        let s = deviation_stats(&[3, 4], &[3, 4]).unwrap();
        assert_eq!((s.mean_abs_dev, s.median_abs_dev), (0.0, 0.0));
        let s = deviation_stats(&[0, 10], &[10, 0]).unwrap();
        assert_eq!((s.mean_abs_dev, s.median_abs_dev), (10.0, 10.0));
        assert_eq!(s.histogram[10], 2);
        let s = deviation_stats(&[5, 5, 5, 9], &[5, 6, 5, 5]).unwrap();
        assert_eq!((s.mean_abs_dev, s.median_abs_dev), (1.25, 0.5));
        assert_eq!(&s.histogram[..5], &[2, 1, 0, 0, 1]);
        assert!(matches!(
            deviation_stats(&[1], &[]),
            Err(ScoresError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn positions() {
        assert_eq!(position_of(7, 6, 8), (Position::Between, 1));
        assert_eq!(position_of(6, 6, 8), (Position::Between, 0));
        assert_eq!(position_of(6, 6, 6), (Position::Equal, 0));
        assert_eq!(position_of(9, 6, 8), (Position::Above, 1));
        assert_eq!(position_of(2, 8, 6), (Position::Below, 4));
    }

    #[test]
    fn positioning_summary() {
        let p = positioning(&[7, 6, 9, 2], &[6, 6, 6, 8], &[8, 6, 8, 6]).unwrap();
        assert_eq!((p.below, p.between, p.equal, p.above), (1, 1, 1, 1));
        assert_eq!(p.mean_distance, 1.5);
        // distances 1, 0, 1, 4: sample sd
        let sd = ((0.25 + 2.25 + 0.25 + 6.25) / 3.0f64).sqrt();
        assert!((p.stddev_distance - sd).abs() < 1e-12);
    }

    fn dataset(rng: &mut ChaCha8Rng, questions: usize, n: usize) -> ScoreDataset {
        let mut d = ScoreDataset::default();
        for q in 0..questions {
            let subs = d.questions.entry(format!("Q{q}")).or_default();
            for s in 0..n {
                let mut scores = SubmissionScores {
                    a1: Some(rng.random_range(0..=10)),
                    a2: Some(rng.random_range(0..=10)),
                    ..Default::default()
                };
                for i in 0..5 {
                    scores.llm.insert(i, rng.random_range(0..=10));
                }
                subs.insert(format!("s{s:03}"), scores);
            }
        }
        d
    }

    /// Brute-force kappa: direct double sum over observation pairs.
    fn brute_kappa(a: &[u8], b: &[u8]) -> f64 {
        let n = a.len() as f64;
        let mut within = 0.0;
        let mut across = 0.0;
        for (i, &x) in a.iter().enumerate() {
            within += (x as f64 - b[i] as f64).powi(2);
            for &y in b {
                across += (x as f64 - y as f64).powi(2);
            }
        }
        1.0 - (within / n) / (across / (n * n))
    }

    #[test]
    fn report_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = dataset(&mut rng, 6, 30);
        let d = ScoreDataset::parse_csv(&d.to_csv()).unwrap();
        for rule in [AggregationRule::Median, AggregationRule::Max] {
            for row in kappa_report(&d, rule).unwrap() {
                let v = d.vectors(&row.question).unwrap();
                let llm = v.llm(rule);
                assert!((row.a1_a2 - brute_kappa(&v.a1, &v.a2)).abs() < 1e-12);
                assert!((row.a1_llm - brute_kappa(&v.a1, &llm)).abs() < 1e-12);
                assert!((row.a2_llm - brute_kappa(&v.a2, &llm)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn annotators_equal_to_median_give_unit_kappa() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut d = dataset(&mut rng, 2, 10);
        for subs in d.questions.values_mut() {
            for s in subs.values_mut() {
                let passes: Vec<u8> = s.llm.values().copied().collect();
                let m = aggregate(&passes, AggregationRule::Median).unwrap();
                s.a1 = Some(m);
                s.a2 = Some(m);
            }
        }
        for row in kappa_report(&d, AggregationRule::Median).unwrap() {
            assert_eq!((row.a1_a2, row.a1_llm, row.a2_llm), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn aggregation_changes_kappa() {
        let mut d = ScoreDataset::default();
        let subs = d.questions.entry("Q1".into()).or_default();
        for (i, (a, passes)) in [
            (0u8, [0u8, 0, 0, 0, 10]),
            (5, [5, 5, 5, 5, 5]),
            (9, [9, 9, 9, 9, 9]),
        ]
        .into_iter()
        .enumerate()
        {
            subs.insert(
                format!("s{i}"),
                SubmissionScores {
                    a1: Some(a),
                    a2: Some(a),
                    llm: passes.into_iter().enumerate().collect(),
                },
            );
        }
        let med = kappa_report(&d, AggregationRule::Median).unwrap();
        let max = kappa_report(&d, AggregationRule::Max).unwrap();
        assert_eq!(med[0].a1_llm, 1.0);
        assert!(max[0].a1_llm < 1.0);
    }

    #[test]
    fn incomplete_rows_are_rejected() {
        let text = "question,submission,grader,score\nQ1,s1,A1,3\nQ1,s1,LLM_pass_0,4\n";
        let d = ScoreDataset::parse_csv(text).unwrap();
        assert!(matches!(
            d.vectors("Q1"),
            Err(ScoresError::Incomplete { .. })
        ));
        assert!(matches!(
            ScoreDataset::parse_csv("question,submission,grader,score\nQ1,s1,A3,3\n"),
            Err(ScoresError::Malformed { line: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn positioning_is_total(rows in proptest::collection::vec((0u8..=10, 0u8..=10, 0u8..=10), 1..50)) {
            let g: Vec<_> = rows.iter().map(|r| r.0).collect();
            let a: Vec<_> = rows.iter().map(|r| r.1).collect();
            let b: Vec<_> = rows.iter().map(|r| r.2).collect();
            let p = positioning(&g, &a, &b).unwrap();
            prop_assert_eq!(p.below + p.between + p.equal + p.above, rows.len());
            let total: f64 = p.proportions.values().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
