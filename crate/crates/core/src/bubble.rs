//! Bubble-coded student identifiers.
//!
//! Reading is done per column: each column of the ID grid holds ten bubbles
//! (digits 0-9) and should contain exactly one filled bubble. Anything else
//! is surfaced for manual review rather than guessed.
//!
//! [`Codebook`]s provide identifiers with a guaranteed minimum pairwise
//! Hamming distance, so a sheet with a misread column can still be assigned
//! to the right student by [`correct_id`].

use std::fmt;
use std::path::Path;

use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, Rect};
use crate::sheet::{extract_region, AlignedSheet, SheetError};

pub const DEFAULT_FILL_THRESHOLD: f64 = 0.35;

#[derive(Debug, Error)]
pub enum IdError {
    #[error("bubble disc at ({x:.1}, {y:.1}) r={radius} is not inside the image")]
    DiscOutOfBounds { x: f64, y: f64, radius: f64 },
    #[error("template has no bubble grid")]
    NoGrid,
    #[error("could not find {wanted} codes within {attempts} proposals")]
    BudgetExhausted { wanted: usize, attempts: u64 },
    #[error("invalid codebook parameters: {0}")]
    InvalidParameters(String),
    #[error("codebook is empty")]
    EmptyCodebook,
    #[error("observed id has {found} columns, codebook codes have {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("malformed codebook file: {0}")]
    MalformedCodebook(String),
    #[error(transparent)]
    Sheet(#[from] SheetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Compact, regular description of an ID grid as stored in templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleLayout {
    /// The ID_GRID region the bubbles are printed in.
    pub region_id: String,
    pub columns: usize,
    #[serde(default = "ten")]
    pub rows: usize,
    /// Center of the digit-0 bubble of the first column.
    pub origin: Point,
    pub column_pitch: f64,
    pub row_pitch: f64,
    pub radius: f64,
}

fn ten() -> usize {
    10
}

/// Bubble centers per column (outer index) and digit (inner index).
#[derive(Debug, Clone, PartialEq)]
pub struct BubbleGrid {
    pub region_id: String,
    pub centers: Vec<Vec<Point>>,
    pub radius: f64,
}

impl BubbleGrid {
    pub fn from_layout(layout: &BubbleLayout) -> Result<BubbleGrid, SheetError> {
        let bad = |m: &str| SheetError::InvalidBubbleGrid(m.to_string());
        if layout.columns == 0 {
            return Err(bad("no columns"));
        }
        if layout.rows != 10 {
            return Err(bad("a digit column has exactly 10 rows"));
        }
        if layout.radius.is_nan() || layout.radius <= 0.0 {
            return Err(bad("radius must be positive"));
        }
        let min_pitch = layout.column_pitch.abs().min(layout.row_pitch.abs());
        if min_pitch < 2.0 * layout.radius {
            return Err(bad("bubble discs overlap"));
        }
        let centers = (0..layout.columns)
            .map(|c| {
                (0..layout.rows)
                    .map(|r| {
                        Point::new(
                            layout.origin.x + c as f64 * layout.column_pitch,
                            layout.origin.y + r as f64 * layout.row_pitch,
                        )
                    })
                    .collect()
            })
            .collect();
        Ok(BubbleGrid {
            region_id: layout.region_id.clone(),
            centers,
            radius: layout.radius,
        })
    }

    pub fn columns(&self) -> usize {
        self.centers.len()
    }

    pub(crate) fn check_inside(&self, rect: &Rect) -> Result<(), SheetError> {
        let r = self.radius;
        for p in self.centers.iter().flatten() {
            let disc = Rect::new(p.x - r, p.y - r, 2.0 * r, 2.0 * r);
            if !rect.contains_rect(&disc) {
                return Err(SheetError::InvalidBubbleGrid(format!(
                    "bubble at ({}, {}) leaves region `{}`",
                    p.x, p.y, self.region_id
                )));
            }
        }
        Ok(())
    }
}

/// Fraction of a disc's pixels darker than `binarization` of full scale.
pub fn fill_ratio(
    image: &GrayImage,
    center: Point,
    radius: f64,
    binarization: f64,
) -> Result<f64, IdError> {
    let inside = center.x - radius >= 0.0
        && center.y - radius >= 0.0
        && center.x + radius <= image.width() as f64
        && center.y + radius <= image.height() as f64;
    if !inside || radius <= 0.0 {
        return Err(IdError::DiscOutOfBounds {
            x: center.x,
            y: center.y,
            radius,
        });
    }
    let cutoff = binarization * 255.0;
    let pixels = crate::sheet::disc_pixels(center, radius, image.width(), image.height());
    let dark = pixels
        .iter()
        .filter(|&&(x, y)| (image.get_pixel(x, y)[0] as f64) < cutoff)
        .count();
    Ok(dark as f64 / pixels.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColumnReading {
    Digit(u8),
    Empty,
    Ambiguous,
}

impl ColumnReading {
    fn symbol(self) -> char {
        match self {
            ColumnReading::Digit(d) => char::from(b'0' + d),
            ColumnReading::Empty => '_',
            ColumnReading::Ambiguous => '*',
        }
    }
}

/// Read one column: a single bubble at or above the threshold is a digit.
pub fn decode_column(ratios: &[f64], fill_threshold: f64) -> ColumnReading {
    let mut marked = ratios
        .iter()
        .enumerate()
        .filter(|(_, &r)| r >= fill_threshold)
        .map(|(i, _)| i);
    match (marked.next(), marked.next()) {
        (None, _) => ColumnReading::Empty,
        (Some(d), None) => ColumnReading::Digit(d as u8),
        _ => ColumnReading::Ambiguous,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IdStatus {
    Ok,
    NeedsReview,
}

impl fmt::Display for IdStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IdStatus::Ok => "OK",
            IdStatus::NeedsReview => "NEEDS_REVIEW",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedId {
    pub digits: Vec<ColumnReading>,
    /// Per column, per digit.
    pub fill_ratios: Vec<Vec<f64>>,
    pub status: IdStatus,
}

impl DecodedId {
    fn from_ratios(fill_ratios: Vec<Vec<f64>>, fill_threshold: f64) -> DecodedId {
        let digits: Vec<_> = fill_ratios
            .iter()
            .map(|col| decode_column(col, fill_threshold))
            .collect();
        let status = if digits.iter().all(|d| matches!(d, ColumnReading::Digit(_))) {
            IdStatus::Ok
        } else {
            IdStatus::NeedsReview
        };
        DecodedId {
            digits,
            fill_ratios,
            status,
        }
    }

    /// Digits as text; `_` marks an empty column and `*` an ambiguous one.
    pub fn text(&self) -> String {
        self.digits.iter().map(|d| d.symbol()).collect()
    }

    /// The plain identifier, only when every column read cleanly.
    pub fn number(&self) -> Option<String> {
        (self.status == IdStatus::Ok).then(|| self.text())
    }
}

pub fn decode_id(
    sheet: &AlignedSheet<'_>,
    grid: &BubbleGrid,
    fill_threshold: f64,
) -> Result<DecodedId, IdError> {
    decode_id_with(
        sheet,
        grid,
        fill_threshold,
        crate::sheet::DEFAULT_BINARIZATION,
    )
}

pub fn decode_id_with(
    sheet: &AlignedSheet<'_>,
    grid: &BubbleGrid,
    fill_threshold: f64,
    binarization: f64,
) -> Result<DecodedId, IdError> {
    let region = sheet
        .template
        .region(&grid.region_id)
        .ok_or(IdError::NoGrid)?;
    let rectified = extract_region(sheet, region)?;
    let origin = Point::new(region.rect.x, region.rect.y);
    let fill_ratios = grid
        .centers
        .iter()
        .map(|column| {
            column
                .iter()
                .map(|c| {
                    let local = Point::new(c.x - origin.x, c.y - origin.y);
                    fill_ratio(&rectified, local, grid.radius, binarization)
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DecodedId::from_ratios(fill_ratios, fill_threshold))
}

/// A set of equal-length digit strings with a guaranteed minimum pairwise
/// Hamming distance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    codes: Vec<String>,
    length: usize,
    min_distance: usize,
    seed: u64,
}

pub fn hamming(a: &str, b: &str) -> usize {
    a.bytes().zip(b.bytes()).filter(|(x, y)| x != y).count()
}

impl Codebook {
    /// Validate an explicit list of codes.
    pub fn new(codes: Vec<String>, min_distance: usize, seed: u64) -> Result<Codebook, IdError> {
        let length = codes.first().map_or(0, |c| c.len());
        if min_distance == 0 {
            return Err(IdError::InvalidParameters(
                "min_distance must be at least 1".into(),
            ));
        }
        for (i, code) in codes.iter().enumerate() {
            if code.len() != length || !code.bytes().all(|b| b.is_ascii_digit()) {
                return Err(IdError::InvalidParameters(format!(
                    "code `{code}` is malformed"
                )));
            }
            for other in &codes[..i] {
                if hamming(code, other) < min_distance {
                    return Err(IdError::InvalidParameters(format!(
                        "`{other}` and `{code}` are closer than {min_distance}"
                    )));
                }
            }
        }
        Ok(Codebook {
            codes,
            length,
            min_distance,
            seed,
        })
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn min_distance(&self) -> usize {
        self.min_distance
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Columns that can be misread while still decoding uniquely.
    pub fn correction_radius(&self) -> usize {
        (self.min_distance - 1) / 2
    }

    /// Text form: a header line followed by one code per line.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# length={} min_distance={} seed={}\n",
            self.length, self.min_distance, self.seed
        );
        for code in &self.codes {
            out.push_str(code);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Codebook, IdError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix('#'))
            .ok_or_else(|| IdError::MalformedCodebook("missing header line".into()))?;
        let mut length = None;
        let mut min_distance = None;
        let mut seed = None;
        for field in header.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| IdError::MalformedCodebook(format!("bad header field `{field}`")))?;
            let parse = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| IdError::MalformedCodebook(format!("bad number `{v}`")))
            };
            match key {
                "length" => length = Some(parse(value)? as usize),
                "min_distance" => min_distance = Some(parse(value)? as usize),
                "seed" => seed = Some(parse(value)?),
                _ => {}
            }
        }
        let (Some(length), Some(min_distance), Some(seed)) = (length, min_distance, seed) else {
            return Err(IdError::MalformedCodebook(
                "header needs length, min_distance and seed".into(),
            ));
        };
        let codes: Vec<String> = lines
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        if codes.iter().any(|c| c.len() != length) {
            return Err(IdError::MalformedCodebook(format!(
                "codes must have length {length}"
            )));
        }
        let mut book = Codebook::new(codes, min_distance, seed)?;
        book.length = length;
        Ok(book)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Codebook, IdError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Greedy randomized construction: draw uniform digit strings from a seeded
/// generator and keep each one that is at least `min_distance` away from all
/// codes accepted so far.
pub fn generate_codebook(
    n: usize,
    length: usize,
    min_distance: usize,
    seed: u64,
    attempt_budget: u64,
) -> Result<Codebook, IdError> {
    if n == 0 {
        return Err(IdError::InvalidParameters("n must be at least 1".into()));
    }
    if length == 0 || min_distance == 0 || min_distance > length {
        return Err(IdError::InvalidParameters(format!(
            "need 1 <= min_distance ({min_distance}) <= length ({length})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut codes: Vec<Vec<u8>> = Vec::with_capacity(n);
    let mut attempts = 0u64;
    while codes.len() < n {
        if attempts == attempt_budget {
            return Err(IdError::BudgetExhausted {
                wanted: n,
                attempts,
            });
        }
        attempts += 1;
        let candidate: Vec<u8> = (0..length)
            .map(|_| b'0' + rng.random_range(0..10u8))
            .collect();
        let far_enough = codes
            .iter()
            .all(|c| c.iter().zip(&candidate).filter(|(a, b)| a != b).count() >= min_distance);
        if far_enough {
            codes.push(candidate);
        }
    }
    let codes = codes
        .into_iter()
        .map(|c| String::from_utf8(c).expect("ascii digits"))
        .collect();
    Ok(Codebook {
        codes,
        length,
        min_distance,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectedId {
    pub code: String,
    pub distance: usize,
    pub status: IdStatus,
}

/// Nearest-codeword decoding of an observed ID.
///
/// Empty and ambiguous columns mismatch every digit. The result is OK only
/// within the correction radius and when the nearest codeword is unique.
pub fn correct_id(observed: &[ColumnReading], codebook: &Codebook) -> Result<CorrectedId, IdError> {
    if codebook.codes.is_empty() {
        return Err(IdError::EmptyCodebook);
    }
    if observed.len() != codebook.length {
        return Err(IdError::LengthMismatch {
            expected: codebook.length,
            found: observed.len(),
        });
    }
    let distance = |code: &str| {
        code.bytes()
            .zip(observed)
            .filter(|(c, o)| !matches!(o, ColumnReading::Digit(d) if *d == c - b'0'))
            .count()
    };
    let mut best: Option<(&String, usize)> = None;
    let mut tied = false;
    for code in &codebook.codes {
        let d = distance(code);
        match best {
            Some((_, bd)) if d > bd => {}
            Some((_, bd)) if d == bd => tied = true,
            _ => {
                best = Some((code, d));
                tied = false;
            }
        }
    }
    let (code, distance) = best.expect("non-empty codebook");
    let status = if !tied && distance <= codebook.correction_radius() {
        IdStatus::Ok
    } else {
        IdStatus::NeedsReview
    };
    Ok(CorrectedId {
        code: code.clone(),
        distance,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::default_template;
    use crate::geometry::Similarity;
    use crate::sheet::{align_page, AlignConfig, ColumnMark, SyntheticSheet};
    use image::Luma;
    use proptest::prelude::*;

    fn reading(s: &str) -> Vec<ColumnReading> {
        s.chars()
            .map(|c| match c {
                '_' => ColumnReading::Empty,
                '*' => ColumnReading::Ambiguous,
                d => ColumnReading::Digit(d.to_digit(10).unwrap() as u8),
            })
            .collect()
    }

    /// Nearest codewords by exhaustive scan, kept apart from `correct_id`.
    fn nearest_oracle(observed: &str, codes: &[String]) -> (usize, Vec<String>) {
        let dist = |c: &String| {
            c.chars()
                .zip(observed.chars())
                .filter(|(a, b)| a != b)
                .count()
        };
        let best = codes.iter().map(dist).min().unwrap();
        (
            best,
            codes.iter().filter(|c| dist(c) == best).cloned().collect(),
        )
    }

    #[test]
    fn saturated_and_blank_discs() {
        let black = GrayImage::from_pixel(40, 40, Luma([0]));
        let white = GrayImage::from_pixel(40, 40, Luma([255]));
        let c = Point::new(20.0, 20.0);
        assert!(fill_ratio(&black, c, 9.0, 0.5).unwrap() >= 0.95);
        assert!(fill_ratio(&white, c, 9.0, 0.5).unwrap() <= 0.05);
    }

    #[test]
    fn half_filled_disc_pixel_count() {
        let mut img = GrayImage::from_pixel(40, 40, Luma([255]));
        let c = Point::new(20.0, 20.0);
        crate::sheet::fill_disc(&mut img, c, 9.0, 0.5);
        // Oracle: count dark pixels inside the disc directly.
        let disc = crate::sheet::disc_pixels(c, 9.0, 40, 40);
        let dark = disc
            .iter()
            .filter(|&&(x, y)| img.get_pixel(x, y)[0] < 128)
            .count();
        let expected = dark as f64 / disc.len() as f64;
        let ratio = fill_ratio(&img, c, 9.0, 0.5).unwrap();
        assert_eq!(ratio, expected);
        assert!((0.4..=0.6).contains(&ratio));
    }

    #[test]
    fn disc_outside_image() {
        let img = GrayImage::new(10, 10);
        assert!(matches!(
            fill_ratio(&img, Point::new(2.0, 5.0), 4.0, 0.5),
            Err(IdError::DiscOutOfBounds { .. })
        ));
    }

    #[test]
    fn column_decoding() {
        let mut r = [0.05; 10];
        r[3] = 0.9;
        assert_eq!(decode_column(&r, 0.5), ColumnReading::Digit(3));
        assert_eq!(decode_column(&[0.1; 10], 0.5), ColumnReading::Empty);
        let mut r = [0.0; 10];
        r[2] = 0.8;
        r[7] = 0.8;
        assert_eq!(decode_column(&r, 0.5), ColumnReading::Ambiguous);
    }

    fn decode_rendered(sheet: SyntheticSheet<'_>) -> DecodedId {
        let page = sheet.render().unwrap();
        let aligned = align_page(&page, sheet.template, &AlignConfig::default()).unwrap();
        let (grid, _) = sheet.template.id_grid().unwrap();
        decode_id(&aligned, &grid, DEFAULT_FILL_THRESHOLD).unwrap()
    }

    #[test]
    fn render_decode_round_trip() {
        let t = default_template();
        let decoded = decode_rendered(SyntheticSheet::new(&t, "0123456").unwrap());
        assert_eq!(decoded.text(), "0123456");
        assert_eq!(decoded.status, IdStatus::Ok);
        assert_eq!(decoded.number().as_deref(), Some("0123456"));
    }

    #[test]
    fn unfilled_column_needs_review() {
        let t = default_template();
        let sheet = SyntheticSheet::new(&t, "0123456")
            .unwrap()
            .with_mark(2, ColumnMark::Blank);
        let decoded = decode_rendered(sheet);
        assert_eq!(decoded.digits[2], ColumnReading::Empty);
        assert_eq!(decoded.status, IdStatus::NeedsReview);
        assert_eq!(decoded.number(), None);
    }

    #[test]
    fn doubled_column_needs_review() {
        let t = default_template();
        let center = Point::new(400.0, 580.0);
        let sheet = SyntheticSheet::new(&t, "9876543")
            .unwrap()
            .with_mark(5, ColumnMark::Double(4, 8))
            .with_transform(Similarity::about_center(0.98, -0.04, 9.0, 3.0, center));
        let decoded = decode_rendered(sheet);
        assert_eq!(decoded.digits[5], ColumnReading::Ambiguous);
        assert_eq!(decoded.text(), "98765*3");
        assert_eq!(decoded.status, IdStatus::NeedsReview);
    }

    #[test]
    fn single_code_book() {
        let book = generate_codebook(1, 6, 4, 9, 10).unwrap();
        assert_eq!(book.codes().len(), 1);
        assert_eq!(book.codes()[0].len(), 6);
    }

    #[test]
    fn five_hundred_codes_are_pairwise_far() {
        let book = generate_codebook(500, 8, 3, 42, 1_000_000).unwrap();
        assert_eq!(book.codes().len(), 500);
        let codes = book.codes();
        for i in 0..codes.len() {
            for j in i + 1..codes.len() {
                assert!(hamming(&codes[i], &codes[j]) >= 3);
            }
        }
        let again = generate_codebook(500, 8, 3, 42, 1_000_000).unwrap();
        assert_eq!(book, again);
    }

    #[test]
    fn pigeonhole_exhausts_budget() {
        let err = generate_codebook(11, 1, 1, 0, 10_000).unwrap_err();
        assert!(matches!(err, IdError::BudgetExhausted { wanted: 11, .. }));
    }

    #[test]
    fn codebook_text_round_trip() {
        let book = generate_codebook(20, 6, 3, 7, 100_000).unwrap();
        let text = book.to_text();
        assert!(text.starts_with("# length=6 min_distance=3 seed=7\n"));
        assert_eq!(Codebook::from_text(&text).unwrap(), book);
        assert!(Codebook::from_text("123\n").is_err());
    }

    #[test]
    fn exact_codeword_decodes() {
        let book = generate_codebook(50, 8, 3, 1, 100_000).unwrap();
        let code = &book.codes()[17];
        let out = correct_id(&reading(code), &book).unwrap();
        assert_eq!(
            (&out.code, out.distance, out.status),
            (code, 0, IdStatus::Ok)
        );
    }

    #[test]
    fn one_corrupted_column_is_recovered() {
        let book = generate_codebook(200, 8, 3, 5, 1_000_000).unwrap();
        let code = book.codes()[42].clone();
        let mut corrupted: Vec<char> = code.chars().collect();
        corrupted[4] = if corrupted[4] == '0' { '1' } else { '0' };
        let corrupted: String = corrupted.into_iter().collect();
        let (best, nearest) = nearest_oracle(&corrupted, book.codes());
        assert_eq!((best, nearest.as_slice()), (1, std::slice::from_ref(&code)));
        let out = correct_id(&reading(&corrupted), &book).unwrap();
        assert_eq!(
            (out.code, out.distance, out.status),
            (code, 1, IdStatus::Ok)
        );
    }

    #[test]
    fn equidistant_observation_needs_review() {
        // A tie exactly at the correction radius cannot exist for a valid
        // codebook (two codewords would be closer than min_distance), so the
        // constructed ties sit just outside it.
        let book = Codebook::new(vec!["0000".into(), "1100".into(), "0011".into()], 2, 0).unwrap();
        let observed = "1000";
        let (best, nearest) = nearest_oracle(observed, book.codes());
        assert_eq!((best, nearest.len()), (1, 2));
        let out = correct_id(&reading(observed), &book).unwrap();
        assert_eq!(out.status, IdStatus::NeedsReview);

        let book = Codebook::new(vec!["000".into(), "111".into()], 3, 0).unwrap();
        let observed = reading("0_1");
        let out = correct_id(&observed, &book).unwrap();
        assert_eq!(out.distance, 2);
        assert_eq!(out.status, IdStatus::NeedsReview);
    }

    #[test]
    fn empty_codebook_and_length_mismatch() {
        let empty = Codebook::new(vec![], 1, 0).unwrap();
        assert!(matches!(
            correct_id(&reading("12"), &empty),
            Err(IdError::EmptyCodebook)
        ));
        let book = Codebook::new(vec!["123".into()], 1, 0).unwrap();
        assert!(matches!(
            correct_id(&reading("12"), &book),
            Err(IdError::LengthMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn lowering_threshold_keeps_single_digits(
            ratios in proptest::collection::vec(0.0f64..=1.0, 10),
            threshold in 0.05f64..0.95,
            drop in 0.0f64..0.5,
        ) {
            if let ColumnReading::Digit(_) = decode_column(&ratios, threshold) {
                let lower = (threshold - drop).max(0.01);
                prop_assert_ne!(decode_column(&ratios, lower), ColumnReading::Empty);
            }
        }

        #[test]
        fn corruption_within_radius_is_corrected(
            seed in 0u64..1000,
            index in 0usize..40,
            column in 0usize..8,
            digit in 0u8..10,
        ) {
            let book = generate_codebook(40, 8, 3, seed, 1_000_000).unwrap();
            let code = &book.codes()[index];
            let mut observed = reading(code);
            observed[column] = ColumnReading::Digit(digit);
            let out = correct_id(&observed, &book).unwrap();
            prop_assert_eq!(&out.code, code);
            prop_assert_eq!(out.status, IdStatus::Ok);
        }
    }
}
