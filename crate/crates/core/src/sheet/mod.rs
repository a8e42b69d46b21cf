//! Answer-sheet templates, page alignment and anonymised answer-box crops.
//!
//! A [`SheetTemplate`] declares the geometry of one sheet layout at reference
//! resolution. Scanned pages are registered against it with
//! [`align_page`], which locates the printed corner fiducials and fits a
//! similarity transform. Regions are then resampled through that transform
//! with [`extract_region`]; [`anonymised_crops`] produces exactly the answer
//! boxes and nothing that could identify the student.

mod align;
mod render;

use std::path::Path;

use image::GrayImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bubble::{BubbleGrid, BubbleLayout};
use crate::digest::sha256_hex;
use crate::geometry::{Point, Rect};

pub use align::{align_page, extract_region, AlignConfig, AlignedSheet};
pub(crate) use render::disc_pixels;
#[cfg(test)]
pub(crate) use render::fill_disc;
pub use render::{render_synthetic_sheet, ColumnMark, SyntheticSheet};

/// Darkness cut-off as a fraction of the 8-bit dynamic range.
pub const DEFAULT_BINARIZATION: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SheetError {
    #[error("malformed template document: {0}")]
    Malformed(String),
    #[error("template declares {found} fiducials, at least 3 are required")]
    TooFewFiducials { found: usize },
    #[error("template fiducials are collinear")]
    DegenerateFiducials,
    #[error("region `{region_id}`: {reason}")]
    InvalidRegion { region_id: String, reason: String },
    #[error("answer box `{answer}` overlaps identifying region `{identifying}`")]
    OverlapViolation { answer: String, identifying: String },
    #[error("bubble grid: {0}")]
    InvalidBubbleGrid(String),
    #[error("only {found} of {expected} fiducials detected")]
    FiducialNotFound { found: usize, expected: usize },
    #[error("fiducial residual {residual:.2}px exceeds tolerance {tolerance:.2}px")]
    ResidualTooLarge { residual: f64, tolerance: f64 },
    #[error("region `{0}` falls outside the source image")]
    OutOfBounds(String),
    #[error("id has {found} digits, the grid has {expected} columns")]
    DigitCountMismatch { expected: usize, found: usize },
    #[error("no box content may be supplied for `{0}`")]
    UnknownQuestion(String),
    #[error("crop for `{0}` intersects an identifying region")]
    AnonymityViolation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RegionKind {
    IdGrid,
    Group,
    Version,
    AnswerBox,
}

impl RegionKind {
    /// Regions that carry student-identifying or administrative information.
    pub fn is_identifying(self) -> bool {
        !matches!(self, RegionKind::AnswerBox)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub region_id: String,
    pub kind: RegionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_id: Option<String>,
    pub rect: Rect,
}

fn default_fiducial_size() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheetTemplate {
    pub template_id: String,
    pub page_width: u32,
    pub page_height: u32,
    /// Expected fiducial centers, template pixels.
    pub fiducials: Vec<Point>,
    /// Side length of the printed square fiducials.
    #[serde(default = "default_fiducial_size")]
    pub fiducial_size: f64,
    pub regions: Vec<Region>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bubble_grid: Option<BubbleLayout>,
}

impl SheetTemplate {
    /// Parse and validate a JSON template document.
    pub fn load(document: &str) -> Result<SheetTemplate, SheetError> {
        let template: SheetTemplate =
            serde_json::from_str(document).map_err(|e| SheetError::Malformed(e.to_string()))?;
        template.validate()?;
        Ok(template)
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<SheetTemplate, SheetError> {
        Self::load(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("template serialises")
    }

    pub fn page_rect(&self) -> Rect {
        Rect::new(0.0, 0.0, self.page_width as f64, self.page_height as f64)
    }

    pub fn validate(&self) -> Result<(), SheetError> {
        if self.page_width == 0 || self.page_height == 0 {
            return Err(SheetError::Malformed("page has zero area".into()));
        }
        if self.fiducials.len() < 3 {
            return Err(SheetError::TooFewFiducials {
                found: self.fiducials.len(),
            });
        }
        if !has_non_collinear_triple(&self.fiducials) {
            return Err(SheetError::DegenerateFiducials);
        }
        if self.fiducial_size.is_nan() || self.fiducial_size <= 0.0 {
            return Err(SheetError::Malformed(
                "fiducial_size must be positive".into(),
            ));
        }
        let page = self.page_rect();
        let mut seen = std::collections::HashSet::new();
        for region in &self.regions {
            let invalid = |reason: &str| SheetError::InvalidRegion {
                region_id: region.region_id.clone(),
                reason: reason.to_string(),
            };
            if !seen.insert(region.region_id.as_str()) {
                return Err(invalid("duplicate region id"));
            }
            if !(region.rect.w > 0.0 && region.rect.h > 0.0) {
                return Err(invalid("rectangle has no area"));
            }
            if !page.contains_rect(&region.rect) {
                return Err(invalid("rectangle extends past the page"));
            }
            match (region.kind, &region.question_id) {
                (RegionKind::AnswerBox, None) => {
                    return Err(invalid("answer box without question_id"))
                }
                (RegionKind::AnswerBox, Some(q)) if q.is_empty() => {
                    return Err(invalid("answer box without question_id"))
                }
                (kind, Some(_)) if kind.is_identifying() => {
                    return Err(invalid("question_id is only allowed on answer boxes"))
                }
                _ => {}
            }
        }
        for answer in self.answer_boxes() {
            for ident in self.regions.iter().filter(|r| r.kind.is_identifying()) {
                if answer.rect.intersection(&ident.rect).is_some() {
                    return Err(SheetError::OverlapViolation {
                        answer: answer.region_id.clone(),
                        identifying: ident.region_id.clone(),
                    });
                }
            }
        }
        if let Some(layout) = &self.bubble_grid {
            let region = self.region(&layout.region_id).ok_or_else(|| {
                SheetError::InvalidBubbleGrid(format!("unknown region `{}`", layout.region_id))
            })?;
            if region.kind != RegionKind::IdGrid {
                return Err(SheetError::InvalidBubbleGrid(format!(
                    "region `{}` is not an ID_GRID",
                    layout.region_id
                )));
            }
            BubbleGrid::from_layout(layout)?.check_inside(&region.rect)?;
        }
        Ok(())
    }

    pub fn region(&self, region_id: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.region_id == region_id)
    }

    pub fn answer_boxes(&self) -> impl Iterator<Item = &Region> {
        self.regions
            .iter()
            .filter(|r| r.kind == RegionKind::AnswerBox)
    }

    pub fn answer_box(&self, question_id: &str) -> Option<&Region> {
        self.answer_boxes()
            .find(|r| r.question_id.as_deref() == Some(question_id))
    }

    pub fn identifying_regions(&self) -> impl Iterator<Item = &Region> {
        self.regions.iter().filter(|r| r.kind.is_identifying())
    }

    /// The ID bubble grid with its ID_GRID region.
    pub fn id_grid(&self) -> Option<(BubbleGrid, &Region)> {
        let layout = self.bubble_grid.as_ref()?;
        let region = self.region(&layout.region_id)?;
        BubbleGrid::from_layout(layout).ok().map(|g| (g, region))
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }
}

fn has_non_collinear_triple(points: &[Point]) -> bool {
    let extent = points
        .iter()
        .flat_map(|p| [p.x.abs(), p.y.abs()])
        .fold(1.0_f64, f64::max);
    let eps = 1e-9 * extent * extent;
    for (i, a) in points.iter().enumerate() {
        for (j, b) in points.iter().enumerate().skip(i + 1) {
            for c in points.iter().skip(j + 1) {
                let cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
                if cross.abs() > eps {
                    return true;
                }
            }
        }
    }
    false
}

/// One anonymised answer-box image, ready for grading.
#[derive(Debug, Clone)]
pub struct AnswerCrop {
    pub pseudonym: String,
    pub question_id: String,
    pub image: GrayImage,
    /// SHA-256 over the raw pixel bytes.
    pub content_hash: String,
    /// Source rectangle in template coordinates.
    pub source_rect: Rect,
}

impl AnswerCrop {
    pub fn new(pseudonym: &str, question_id: &str, image: GrayImage, source_rect: Rect) -> Self {
        let content_hash = sha256_hex(image.as_raw());
        AnswerCrop {
            pseudonym: pseudonym.to_string(),
            question_id: question_id.to_string(),
            image,
            content_hash,
            source_rect,
        }
    }

    /// `<pseudonym>_<question_id>`, the unit the ledger and review queue track.
    pub fn submission_ref(&self) -> String {
        submission_ref(&self.pseudonym, &self.question_id)
    }

    pub fn file_name(&self) -> String {
        format!("{}.png", self.submission_ref())
    }

    pub fn png_bytes(&self) -> Vec<u8> {
        encode_png(&self.image)
    }
}

pub fn submission_ref(pseudonym: &str, question_id: &str) -> String {
    format!("{pseudonym}_{question_id}")
}

/// Crop every answer box of an aligned sheet.
///
/// Identifying regions are never sampled; the geometric separation from
/// the template is re-checked for every crop.
pub fn anonymised_crops(
    sheet: &AlignedSheet<'_>,
    pseudonym: &str,
) -> Result<Vec<AnswerCrop>, SheetError> {
    let template = sheet.template;
    let mut crops = Vec::new();
    for region in template.answer_boxes() {
        if template
            .identifying_regions()
            .any(|ident| ident.rect.intersection(&region.rect).is_some())
        {
            return Err(SheetError::AnonymityViolation(region.region_id.clone()));
        }
        let image = extract_region(sheet, region)?;
        let question_id = region.question_id.as_deref().unwrap_or_default();
        crops.push(AnswerCrop::new(pseudonym, question_id, image, region.rect));
    }
    Ok(crops)
}

/// Deterministic PNG encoding of a grayscale raster.
pub fn encode_png(image: &GrayImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    image
        .write_to(&mut out, image::ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage, SheetError> {
    Ok(image::open(path)?.into_luma8())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_box_template() -> SheetTemplate {
        crate::fixture::default_template()
    }

    #[test]
    fn two_boxes_and_id_grid_is_valid() {
        let t = two_box_template();
        assert!(t.validate().is_ok());
        assert_eq!(t.answer_boxes().count(), 2);
        let reparsed = SheetTemplate::load(&t.to_json()).unwrap();
        assert_eq!(reparsed, t);
    }

    #[test]
    fn overlapping_answer_box_is_rejected() {
        let mut t = two_box_template();
        let id_rect = t.region("id").unwrap().rect;
        let q1 = t.regions.iter_mut().find(|r| r.region_id == "q1").unwrap();
        q1.rect = Rect::new(id_rect.x + 10.0, id_rect.y + 10.0, 100.0, 100.0);
        assert!(matches!(
            t.validate(),
            Err(SheetError::OverlapViolation { .. })
        ));
    }

    #[test]
    fn collinear_fiducials_are_rejected() {
        let mut t = two_box_template();
        t.fiducials = vec![
            Point::new(100.0, 100.0),
            Point::new(300.0, 300.0),
            Point::new(500.0, 500.0),
        ];
        assert!(matches!(t.validate(), Err(SheetError::DegenerateFiducials)));
        // Perturbing one point off the line by a pixel makes the set usable.
        t.fiducials[2].y += 1.0;
        assert!(t.validate().is_ok());
    }

    #[test]
    fn too_few_fiducials() {
        let mut t = two_box_template();
        t.fiducials.truncate(2);
        assert!(matches!(
            t.validate(),
            Err(SheetError::TooFewFiducials { found: 2 })
        ));
    }

    #[test]
    fn question_id_rules() {
        let mut t = two_box_template();
        t.regions[0].question_id = Some("Q9".into());
        assert!(matches!(
            t.validate(),
            Err(SheetError::InvalidRegion { .. })
        ));

        let mut t = two_box_template();
        let q1 = t.regions.iter_mut().find(|r| r.region_id == "q1").unwrap();
        q1.question_id = None;
        assert!(matches!(
            t.validate(),
            Err(SheetError::InvalidRegion { .. })
        ));
    }

    #[test]
    fn region_outside_page_is_rejected() {
        let mut t = two_box_template();
        t.regions[0].rect.x = t.page_width as f64 - 5.0;
        assert!(matches!(
            t.validate(),
            Err(SheetError::InvalidRegion { .. })
        ));
    }

    #[test]
    fn malformed_document() {
        assert!(matches!(
            SheetTemplate::load("{\"template_id\": 3}"),
            Err(SheetError::Malformed(_))
        ));
    }
}
