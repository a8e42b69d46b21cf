use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::LedgerError;

/// Shape of the bonus scheme: how many tests, each with how many questions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GradeStructure {
    pub tests: usize,
    pub questions_per_test: usize,
}

impl GradeStructure {
    pub fn max_points(&self) -> u32 {
        (self.tests * self.questions_per_test * 10) as u32
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubmissionOutcome {
    pub pseudonym: String,
    pub test_id: String,
    pub question_id: String,
    /// `None` while undecided.
    pub final_score: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UndecidedPolicy {
    /// Refuse to export while anything is undecided.
    Strict,
    /// Leave undecided submissions out (they count as 0) and warn.
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalGradeRow {
    pub pseudonym: String,
    /// `(test_id, question_id) -> final score`
    pub scores: BTreeMap<(String, String), u8>,
    pub test_totals: BTreeMap<String, u32>,
    pub total: u32,
    /// Total over the maximum attainable, clamped to [0, 1].
    pub bonus: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalGradeExport {
    pub rows: Vec<FinalGradeRow>,
    pub test_ids: Vec<String>,
    /// Undecided submissions left out under [`UndecidedPolicy::Exclude`].
    pub excluded: Vec<String>,
}

/// Roll decided submissions up into per-student rows, sorted by pseudonym.
/// Students on the roster without submissions get a zero row.
pub fn export_final_grades(
    outcomes: &[SubmissionOutcome],
    roster_pseudonyms: &[String],
    structure: GradeStructure,
    policy: UndecidedPolicy,
) -> Result<FinalGradeExport, LedgerError> {
    let undecided: Vec<String> = outcomes
        .iter()
        .filter(|o| o.final_score.is_none())
        .map(|o| format!("{}_{}", o.pseudonym, o.question_id))
        .collect();
    if !undecided.is_empty() {
        match policy {
            UndecidedPolicy::Strict => {
                return Err(LedgerError::Undecided {
                    count: undecided.len(),
                    refs: undecided,
                })
            }
            UndecidedPolicy::Exclude => {
                log::warn!(
                    "excluding {} undecided submissions from the export",
                    undecided.len()
                )
            }
        }
    }
    let test_ids: Vec<String> = outcomes
        .iter()
        .map(|o| o.test_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rows: BTreeMap<String, FinalGradeRow> = roster_pseudonyms
        .iter()
        .chain(outcomes.iter().map(|o| &o.pseudonym))
        .map(|p| {
            (
                p.clone(),
                FinalGradeRow {
                    pseudonym: p.clone(),
                    scores: BTreeMap::new(),
                    test_totals: test_ids.iter().map(|t| (t.clone(), 0)).collect(),
                    total: 0,
                    bonus: 0.0,
                },
            )
        })
        .collect();
    for o in outcomes {
        let Some(score) = o.final_score else { continue };
        let row = rows.get_mut(&o.pseudonym).expect("row created above");
        row.scores
            .insert((o.test_id.clone(), o.question_id.clone()), score);
        *row.test_totals.entry(o.test_id.clone()).or_default() += score as u32;
        row.total += score as u32;
    }
    let max = structure.max_points();
    for row in rows.values_mut() {
        row.bonus = if max == 0 {
            0.0
        } else {
            (row.total as f64 / max as f64).clamp(0.0, 1.0)
        };
    }
    Ok(FinalGradeExport {
        rows: rows.into_values().collect(),
        test_ids,
        excluded: undecided,
    })
}

/// `pseudonym,test_id,question_id,final_score`, one line per decided submission.
pub fn grades_csv(export: &FinalGradeExport) -> String {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(["pseudonym", "test_id", "question_id", "final_score"])
        .unwrap();
    for row in &export.rows {
        for ((test, question), score) in &row.scores {
            w.write_record([row.pseudonym.as_str(), test, question, &score.to_string()])
                .unwrap();
        }
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Per-student test totals, overall total and bonus.
pub fn bonus_csv(export: &FinalGradeExport) -> String {
    let mut w = csv::Writer::from_writer(vec![]);
    let mut header = vec!["pseudonym".to_string()];
    header.extend(export.test_ids.iter().cloned());
    header.extend(["total".to_string(), "bonus".to_string()]);
    w.write_record(&header).unwrap();
    for row in &export.rows {
        let mut record = vec![row.pseudonym.clone()];
        record.extend(
            export
                .test_ids
                .iter()
                .map(|t| row.test_totals.get(t).copied().unwrap_or(0).to_string()),
        );
        record.push(row.total.to_string());
        record.push(format!("{:.4}", row.bonus));
        w.write_record(&record).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SIX_BY_TWO: GradeStructure = GradeStructure {
        tests: 6,
        questions_per_test: 2,
    };

    fn outcomes(pseudonym: &str, scores: &[u8]) -> Vec<SubmissionOutcome> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| SubmissionOutcome {
                pseudonym: pseudonym.into(),
                test_id: format!("T{}", i / 2 + 1),
                question_id: format!("Q{}", i % 2 + 1),
                final_score: Some(s),
            })
            .collect()
    }

    fn bonus_of(scores: &[u8]) -> f64 {
        let e = export_final_grades(
            &outcomes("p", scores),
            &[],
            SIX_BY_TWO,
            UndecidedPolicy::Strict,
        )
        .unwrap();
        e.rows[0].bonus
    }

    #[test]
    fn linear_bonus() {
        assert_eq!(bonus_of(&[10; 12]), 1.0);
        assert_eq!(bonus_of(&[0; 12]), 0.0);
        // 96 of 120
        assert!((bonus_of(&[8; 12]) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn strict_mode_refuses_undecided() {
        let mut o = outcomes("p", &[5, 5]);
        o[1].final_score = None;
        assert!(matches!(
            export_final_grades(&o, &[], SIX_BY_TWO, UndecidedPolicy::Strict),
            Err(LedgerError::Undecided { count: 1, .. })
        ));
        let e = export_final_grades(&o, &[], SIX_BY_TWO, UndecidedPolicy::Exclude).unwrap();
        assert_eq!(e.rows[0].total, 5);
        assert_eq!(e.excluded, vec!["p_Q2"]);
    }

    #[test]
    fn rows_sorted_and_absent_students_listed() {
        let mut o = outcomes("zz", &[4, 6]);
        o.extend(outcomes("aa", &[1, 2]));
        let e =
            export_final_grades(&o, &["mm".into()], SIX_BY_TWO, UndecidedPolicy::Strict).unwrap();
        let names: Vec<_> = e.rows.iter().map(|r| r.pseudonym.as_str()).collect();
        assert_eq!(names, ["aa", "mm", "zz"]);
        assert_eq!(e.rows[1].total, 0);
        let csv = grades_csv(&e);
        assert_eq!(
            csv.lines().next().unwrap(),
            "pseudonym,test_id,question_id,final_score"
        );
        assert_eq!(csv.lines().nth(1).unwrap(), "aa,T1,Q1,1");
        assert_eq!(csv.lines().count(), 5);
        let bonus = bonus_csv(&e);
        assert_eq!(bonus.lines().next().unwrap(), "pseudonym,T1,total,bonus");
        assert_eq!(bonus.lines().nth(3).unwrap(), "zz,10,10,0.0833");
    }

    proptest! {
        #[test]
        fn bonus_is_bounded(scores in proptest::collection::vec(0u8..=10, 0..20), tests in 0usize..4, q in 0usize..3) {
            let o = outcomes("p", &scores);
            let e = export_final_grades(&o, &["p".into()], GradeStructure { tests, questions_per_test: q }, UndecidedPolicy::Strict).unwrap();
            for row in e.rows {
                prop_assert!((0.0..=1.0).contains(&row.bonus));
            }
        }
    }
}
