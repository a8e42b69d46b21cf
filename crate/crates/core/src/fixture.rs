//! Synthetic inputs: a reference sheet template, scribbled answers, a small
//! question bank and whole scanned batches with known ground truth.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bubble::BubbleLayout;
use crate::geometry::{Point, Rect, Similarity};
use crate::job::{write_atomic, JobError};
use crate::keybank::{write_entry, AltPath, GradingKey, KeyStep, Question, SolutionKey};
use crate::sheet::{encode_png, Region, RegionKind, SheetTemplate, SyntheticSheet};

pub const FIXTURE_TEST_ID: &str = "bonus1";
pub const ID_COLUMNS: usize = 7;

fn region(id: &str, kind: RegionKind, question_id: Option<&str>, rect: Rect) -> Region {
    Region {
        region_id: id.into(),
        kind,
        question_id: question_id.map(str::to_string),
        rect,
    }
}

/// A4 portrait at 100 dpi with a 7-digit ID grid and two answer boxes.
pub fn default_template() -> SheetTemplate {
    SheetTemplate {
        template_id: "two-box-a4-v1".into(),
        page_width: 827,
        page_height: 1169,
        fiducials: vec![
            Point::new(120.0, 120.0),
            Point::new(707.0, 120.0),
            Point::new(120.0, 1049.0),
        ],
        fiducial_size: 30.0,
        regions: vec![
            region(
                "id",
                RegionKind::IdGrid,
                None,
                Rect::new(170.0, 165.0, 200.0, 280.0),
            ),
            region(
                "group",
                RegionKind::Group,
                None,
                Rect::new(420.0, 165.0, 150.0, 60.0),
            ),
            region(
                "version",
                RegionKind::Version,
                None,
                Rect::new(420.0, 245.0, 150.0, 60.0),
            ),
            region(
                "q1",
                RegionKind::AnswerBox,
                Some("Q1"),
                Rect::new(170.0, 480.0, 490.0, 260.0),
            ),
            region(
                "q2",
                RegionKind::AnswerBox,
                Some("Q2"),
                Rect::new(170.0, 770.0, 490.0, 260.0),
            ),
        ],
        bubble_grid: Some(BubbleLayout {
            region_id: "id".into(),
            columns: ID_COLUMNS,
            rows: 10,
            origin: Point::new(186.0, 181.0),
            column_pitch: 26.0,
            row_pitch: 26.0,
            radius: 9.0,
        }),
    }
}

fn stamp(img: &mut GrayImage, x: f64, y: f64, ink: u8) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (px, py) = (x as i64 + dx, y as i64 + dy);
            if px >= 0 && py >= 0 && px < w && py < h {
                img.put_pixel(px as u32, py as u32, Luma([ink]));
            }
        }
    }
}

/// Deterministic pen strokes on white paper, kept clear of the edges.
pub fn synthetic_answer(seed: u64, width: u32, height: u32) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = GrayImage::from_pixel(width, height, Luma([255]));
    let margin = 12.0;
    let (w, h) = (width as f64 - 2.0 * margin, height as f64 - 2.0 * margin);
    if w <= 0.0 || h <= 0.0 {
        return img;
    }
    let lines = rng.random_range(3..=6);
    for line in 0..lines {
        let baseline = margin + h * (line as f64 + 0.7) / (lines as f64 + 0.5);
        let mut x = margin + rng.random_range(0.0..w * 0.1);
        let end = margin + rng.random_range(w * 0.5..w);
        let ink = rng.random_range(10..70);
        while x < end {
            // one glyph: a short wobbly loop
            let size = rng.random_range(6.0..14.0);
            let turns = rng.random_range(1.0..2.5) * std::f64::consts::TAU;
            let steps = (size * 4.0) as usize;
            for s in 0..steps {
                let t = s as f64 / steps as f64;
                let a = t * turns;
                let px = x + size * 0.5 * (1.0 + a.cos()) + t * size;
                let py = baseline - size * 0.5 * (1.0 + a.sin());
                stamp(
                    &mut img,
                    px.clamp(margin, margin + w),
                    py.clamp(margin, margin + h),
                    ink,
                );
            }
            x += size * 1.6 + rng.random_range(0.0..6.0);
        }
    }
    img
}

/// Random similarity within the supported scan envelope: |rotation| ≤ 5°,
/// |translation| ≤ 30 px, scale in [0.95, 1.05], about the page center.
pub fn random_scan_transform(rng: &mut impl Rng, template: &SheetTemplate) -> Similarity {
    let center = Point::new(
        template.page_width as f64 / 2.0,
        template.page_height as f64 / 2.0,
    );
    Similarity::about_center(
        rng.random_range(0.95..=1.05),
        rng.random_range(-5.0f64..=5.0).to_radians(),
        rng.random_range(-30.0..=30.0),
        rng.random_range(-30.0..=30.0),
        center,
    )
}

/// `n` distinct 7-digit student numbers.
pub fn synthetic_roster(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = std::collections::BTreeSet::new();
    while out.len() < n {
        out.insert(format!("{:07}", rng.random_range(1_000_000..10_000_000u32)));
    }
    out.into_iter().collect()
}

fn step(description: &str, points: u32) -> KeyStep {
    KeyStep {
        description: description.into(),
        points,
    }
}

/// Two questions with lint-clean grading keys.
pub fn sample_bank() -> Vec<(Question, SolutionKey, GradingKey)> {
    let q1 = Question {
        test_id: FIXTURE_TEST_ID.into(),
        question_id: "Q1".into(),
        text: "Differentiate $f(x) = x^2 \\sin x$ and evaluate $f'(\\pi)$.".into(),
    };
    let s1 = SolutionKey {
        question_id: "Q1".into(),
        solution_text: "By the product rule $f'(x) = 2x \\sin x + x^2 \\cos x$. \
                        At $x = \\pi$: $f'(\\pi) = 0 + \\pi^2 \\cdot (-1) = -\\pi^2$."
            .into(),
    };
    let k1 = GradingKey {
        question_id: "Q1".into(),
        steps: vec![
            step("stating the product rule for $x^2$ and $\\sin x$", 2),
            step(
                "the derivative $2x$ of $x^2$ and $\\cos x$ of $\\sin x$, both correct",
                3,
            ),
            step("the combined expression $2x \\sin x + x^2 \\cos x$", 3),
            step("the value $-\\pi^2$ at $x = \\pi$", 2),
        ],
        alt_paths: vec![AltPath {
            description: "logarithmic differentiation".into(),
            steps: vec![
                step("taking logarithms of $|f|$ correctly", 2),
                step("differentiating $2 \\ln|x| + \\ln|\\sin x|$", 3),
                step(
                    "multiplying back by $f(x)$ to reach $2x \\sin x + x^2 \\cos x$",
                    3,
                ),
                step("the value $-\\pi^2$ at $x = \\pi$", 2),
            ],
        }],
        no_deduction: vec![
            "Do not deduct points for leaving $-\\pi^2$ unsimplified, e.g. as $\\pi^2 \\cos \\pi$."
                .into(),
        ],
    };
    let q2 = Question {
        test_id: FIXTURE_TEST_ID.into(),
        question_id: "Q2".into(),
        text: "Compute $\\int_0^1 x e^x \\, dx$.".into(),
    };
    let s2 = SolutionKey {
        question_id: "Q2".into(),
        solution_text: "Integrate by parts with $u = x$, $dv = e^x dx$: \
                        $\\int_0^1 x e^x dx = [x e^x]_0^1 - \\int_0^1 e^x dx = e - (e - 1) = 1$."
            .into(),
    };
    let k2 = GradingKey {
        question_id: "Q2".into(),
        steps: vec![
            step("choosing $u = x$ and $dv = e^x dx$", 2),
            step("the boundary term $[x e^x]_0^1 = e$", 3),
            step("the remaining integral $\\int_0^1 e^x dx = e - 1$", 3),
            step("the final value 1", 2),
        ],
        alt_paths: vec![AltPath {
            description: "an antiderivative guessed and verified by differentiation".into(),
            steps: vec![
                step("proposing $F(x) = (x - 1) e^x$", 3),
                step("showing $F'(x) = x e^x$", 3),
                step("evaluating $F(1) - F(0) = 0 - (-1)$", 2),
                step("the final value 1", 2),
            ],
        }],
        no_deduction: vec!["Do not deduct points for omitting the constant of integration.".into()],
    };
    vec![(q1, s1, k1), (q2, s2, k2)]
}

/// Shape of a synthetic scanned batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSpec {
    /// Scanned sheets, one per student.
    pub sheets: usize,
    /// Roster students without a sheet.
    pub absent: usize,
    pub seed: u64,
}

impl Default for BatchSpec {
    fn default() -> Self {
        BatchSpec {
            sheets: 8,
            absent: 1,
            seed: 42,
        }
    }
}

/// Ground truth of a batch written by [`write_batch`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticBatch {
    pub root: PathBuf,
    pub config_path: PathBuf,
    pub roster: Vec<String>,
    /// `(page file name, student number)` per sheet.
    pub sheets: Vec<(String, String)>,
}

/// Job configuration matching the layout written by [`write_batch`].
pub fn batch_config_toml(seed: u64) -> String {
    format!(
        r#"test_id = "{FIXTURE_TEST_ID}"
job_dir = "job"
template = "template.json"
key_bank = "bank"
roster = "roster.csv"
pages = "pages"
pseudonym_map = "private/pseudonyms.enc.json"

[provider]
kind = "mock"
model_id = "mock-grader"
pass_count = 5
concurrency = 4
seed = {seed}

[aggregation]
rule = "MAX"
spread_max = 3
variance_max = 2.0
"#
    )
}

/// Write a complete synthetic batch under `root`: template, question bank,
/// roster, scanned pages, ground truth (`truth.csv`) and `job.toml`.
pub fn write_batch(root: impl AsRef<Path>, spec: BatchSpec) -> Result<SyntheticBatch, JobError> {
    let root = root.as_ref().to_path_buf();
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| JobError::io(p, e)
    };
    let pages_dir = root.join("pages");
    std::fs::create_dir_all(&pages_dir).map_err(io(&pages_dir))?;
    let template = default_template();
    std::fs::write(root.join("template.json"), template.to_json()).map_err(io(&root))?;
    for (q, s, k) in sample_bank() {
        write_entry(root.join("bank"), &q, &s, &k)?;
    }

    let roster = synthetic_roster(spec.sheets + spec.absent, spec.seed);
    let mut csv = String::from("student_number\n");
    for r in &roster {
        csv.push_str(r);
        csv.push('\n');
    }
    std::fs::write(root.join("roster.csv"), csv).map_err(io(&root))?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed);
    let mut order: Vec<&String> = roster.iter().collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut sheets = Vec::with_capacity(spec.sheets);
    let mut truth = String::from("page,student_number\n");
    for (i, number) in order.into_iter().take(spec.sheets).enumerate() {
        let boxes = template
            .answer_boxes()
            .enumerate()
            .map(|(b, r)| {
                let seed = spec
                    .seed
                    .wrapping_mul(1_000_003)
                    .wrapping_add((i * 16 + b) as u64);
                let qid = r.question_id.clone().unwrap_or_default();
                (
                    qid,
                    synthetic_answer(seed, r.rect.w as u32, r.rect.h as u32),
                )
            })
            .collect();
        let page = SyntheticSheet::new(&template, number)?
            .with_boxes(boxes)
            .with_transform(random_scan_transform(&mut rng, &template))
            .render()?;
        let name = format!("page_{:03}.png", i + 1);
        write_atomic(&pages_dir.join(&name), &encode_png(&page))?;
        truth.push_str(&format!("{name},{number}\n"));
        sheets.push((name, number.clone()));
    }
    std::fs::write(root.join("truth.csv"), truth).map_err(io(&root))?;

    let config_path = root.join("job.toml");
    std::fs::write(&config_path, batch_config_toml(spec.seed)).map_err(io(&root))?;
    Ok(SyntheticBatch {
        root,
        config_path,
        roster,
        sheets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keybank::{lint_grading_key, Severity};

    #[test]
    fn template_is_valid() {
        default_template().validate().unwrap();
    }

    #[test]
    fn sample_keys_have_no_warnings() {
        for (_, _, key) in sample_bank() {
            let findings = lint_grading_key(&key);
            assert!(
                findings.iter().all(|f| f.severity < Severity::Warn),
                "{findings:?}"
            );
        }
    }

    #[test]
    fn answers_are_deterministic_and_inked() {
        let a = synthetic_answer(4, 490, 260);
        assert_eq!(a, synthetic_answer(4, 490, 260));
        assert_ne!(a, synthetic_answer(5, 490, 260));
        assert!(a.pixels().filter(|p| p[0] < 128).count() > 200);
        // margins stay blank
        assert!((0..490).all(|x| a.get_pixel(x, 0)[0] == 255 && a.get_pixel(x, 259)[0] == 255));
    }

    #[test]
    fn roster_is_distinct() {
        let r = synthetic_roster(200, 1);
        assert_eq!(r.len(), 200);
        assert!(r.iter().all(|s| s.len() == 7));
    }
}
