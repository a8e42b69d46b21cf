use std::collections::BTreeMap;

use image::{GrayImage, Luma};

use super::align::sample_bilinear;
use super::{SheetError, SheetTemplate};
use crate::bubble::BubbleGrid;
use crate::geometry::{Point, Rect, Similarity};

// Printed guides stay lighter than the binarisation cut-off.
const OUTLINE_GRAY: u8 = 150;
const BUBBLE_RING_GRAY: u8 = 170;

/// What a student wrote in one ID column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnMark {
    Digit(u8),
    Blank,
    Double(u8, u8),
}

/// Deterministic renderer for test pages.
#[derive(Debug, Clone)]
pub struct SyntheticSheet<'t> {
    pub template: &'t SheetTemplate,
    pub marks: Vec<ColumnMark>,
    /// Fraction of each marked bubble's disc that is filled in.
    pub fill: f64,
    /// Answer-box contents keyed by question id.
    pub boxes: BTreeMap<String, GrayImage>,
    pub transform: Similarity,
}

impl<'t> SyntheticSheet<'t> {
    pub fn new(template: &'t SheetTemplate, id_digits: &str) -> Result<Self, SheetError> {
        let columns = template.bubble_grid.as_ref().map_or(0, |g| g.columns);
        let found = id_digits.chars().count();
        if found != columns {
            return Err(SheetError::DigitCountMismatch {
                expected: columns,
                found,
            });
        }
        let marks = id_digits
            .chars()
            .map(|c| {
                c.to_digit(10)
                    .map(|d| ColumnMark::Digit(d as u8))
                    .ok_or_else(|| SheetError::Malformed(format!("`{c}` is not a digit")))
            })
            .collect::<Result<_, _>>()?;
        Ok(SyntheticSheet {
            template,
            marks,
            fill: 1.0,
            boxes: BTreeMap::new(),
            transform: Similarity::identity(),
        })
    }

    pub fn with_fill(mut self, fill: f64) -> Self {
        self.fill = fill;
        self
    }

    pub fn with_transform(mut self, transform: Similarity) -> Self {
        self.transform = transform;
        self
    }

    pub fn with_boxes(mut self, boxes: BTreeMap<String, GrayImage>) -> Self {
        self.boxes = boxes;
        self
    }

    pub fn with_mark(mut self, column: usize, mark: ColumnMark) -> Self {
        self.marks[column] = mark;
        self
    }

    /// The page in template coordinates, before the transform.
    pub fn render_canvas(&self) -> Result<GrayImage, SheetError> {
        let t = self.template;
        let mut canvas = GrayImage::from_pixel(t.page_width, t.page_height, Luma([255]));

        for region in &t.regions {
            draw_frame(&mut canvas, &region.rect, 2.0, 2.0, OUTLINE_GRAY);
        }

        if let Some((grid, _)) = t.id_grid() {
            draw_bubbles(&mut canvas, &grid, &self.marks, self.fill);
        }

        let half = t.fiducial_size / 2.0;
        for f in &t.fiducials {
            fill_rect(
                &mut canvas,
                &Rect::new(f.x - half, f.y - half, t.fiducial_size, t.fiducial_size),
                0,
            );
        }

        for (question_id, content) in &self.boxes {
            let region = t
                .answer_box(question_id)
                .ok_or_else(|| SheetError::UnknownQuestion(question_id.clone()))?;
            let (x0, y0) = (region.rect.x as u32, region.rect.y as u32);
            let w = content.width().min(region.rect.w as u32);
            let h = content.height().min(region.rect.h as u32);
            for v in 0..h {
                for u in 0..w {
                    canvas.put_pixel(x0 + u, y0 + v, *content.get_pixel(u, v));
                }
            }
        }
        Ok(canvas)
    }

    pub fn render(&self) -> Result<GrayImage, SheetError> {
        let canvas = self.render_canvas()?;
        if self.transform == Similarity::identity() {
            return Ok(canvas);
        }
        let inverse = self.transform.inverse();
        let mut page = GrayImage::new(canvas.width(), canvas.height());
        for (x, y, px) in page.enumerate_pixels_mut() {
            let q = inverse.apply(Point::new(x as f64 + 0.5, y as f64 + 0.5));
            let value = sample_bilinear(&canvas, q, 255.0);
            *px = Luma([value.round().clamp(0.0, 255.0) as u8]);
        }
        Ok(page)
    }
}

/// Render a page with the given ID digits (bubbles fully filled), answer-box
/// contents and template-to-page transform.
pub fn render_synthetic_sheet(
    template: &SheetTemplate,
    id_digits: &str,
    box_contents: &BTreeMap<String, GrayImage>,
    transform: Similarity,
) -> Result<GrayImage, SheetError> {
    SyntheticSheet::new(template, id_digits)?
        .with_boxes(box_contents.clone())
        .with_transform(transform)
        .render()
}

fn pixel_span(lo: f64, hi: f64, limit: u32) -> std::ops::Range<u32> {
    let a = lo.round().max(0.0) as u32;
    let b = (hi.round().max(0.0) as u32).min(limit);
    a.min(b)..b
}

fn fill_rect(img: &mut GrayImage, rect: &Rect, value: u8) {
    for y in pixel_span(rect.y, rect.bottom(), img.height()) {
        for x in pixel_span(rect.x, rect.right(), img.width()) {
            img.put_pixel(x, y, Luma([value]));
        }
    }
}

/// Frame of `thickness` drawn `gap` pixels outside `rect`.
fn draw_frame(img: &mut GrayImage, rect: &Rect, gap: f64, thickness: f64, value: u8) {
    let outer = Rect::new(
        rect.x - gap - thickness,
        rect.y - gap - thickness,
        rect.w + 2.0 * (gap + thickness),
        rect.h + 2.0 * (gap + thickness),
    );
    let t = thickness;
    fill_rect(img, &Rect::new(outer.x, outer.y, outer.w, t), value);
    fill_rect(
        img,
        &Rect::new(outer.x, outer.bottom() - t, outer.w, t),
        value,
    );
    fill_rect(img, &Rect::new(outer.x, outer.y, t, outer.h), value);
    fill_rect(
        img,
        &Rect::new(outer.right() - t, outer.y, t, outer.h),
        value,
    );
}

/// Pixels whose centers lie within `radius` of `center`, in row-major order.
pub(crate) fn disc_pixels(center: Point, radius: f64, width: u32, height: u32) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    let y0 = (center.y - radius).floor().max(0.0) as u32;
    let y1 = ((center.y + radius).ceil().max(0.0) as u32).min(height);
    let x0 = (center.x - radius).floor().max(0.0) as u32;
    let x1 = ((center.x + radius).ceil().max(0.0) as u32).min(width);
    let r2 = radius * radius;
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = x as f64 + 0.5 - center.x;
            let dy = y as f64 + 0.5 - center.y;
            if dx * dx + dy * dy <= r2 {
                out.push((x, y));
            }
        }
    }
    out
}

/// Fill the leftmost `fill` fraction of a disc's pixels.
pub(crate) fn fill_disc(img: &mut GrayImage, center: Point, radius: f64, fill: f64) {
    let mut pixels = disc_pixels(center, radius, img.width(), img.height());
    pixels.sort_by_key(|&(x, y)| (x, y));
    let n = (fill.clamp(0.0, 1.0) * pixels.len() as f64).round() as usize;
    for &(x, y) in &pixels[..n] {
        img.put_pixel(x, y, Luma([0]));
    }
}

fn draw_ring(img: &mut GrayImage, center: Point, inner: f64, outer: f64, value: u8) {
    for (x, y) in disc_pixels(center, outer, img.width(), img.height()) {
        let d = (x as f64 + 0.5 - center.x).hypot(y as f64 + 0.5 - center.y);
        if d > inner {
            img.put_pixel(x, y, Luma([value]));
        }
    }
}

fn draw_bubbles(img: &mut GrayImage, grid: &BubbleGrid, marks: &[ColumnMark], fill: f64) {
    for (col, column) in grid.centers.iter().enumerate() {
        for center in column {
            draw_ring(
                img,
                *center,
                grid.radius + 1.5,
                grid.radius + 2.5,
                BUBBLE_RING_GRAY,
            );
        }
        let filled: &[u8] = match marks.get(col) {
            Some(ColumnMark::Digit(d)) => &[*d],
            Some(ColumnMark::Double(a, b)) => &[*a, *b],
            _ => &[],
        };
        for &digit in filled {
            if let Some(center) = column.get(digit as usize) {
                fill_disc(img, *center, grid.radius, fill);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::default_template;

    #[test]
    fn renders_are_byte_identical() {
        let t = default_template();
        let center = Point::new(400.0, 600.0);
        let transform = Similarity::about_center(1.02, 0.03, 5.0, -4.0, center);
        let a = render_synthetic_sheet(&t, "7654321", &BTreeMap::new(), transform).unwrap();
        let b = render_synthetic_sheet(&t, "7654321", &BTreeMap::new(), transform).unwrap();
        assert_eq!(a.as_raw(), b.as_raw());
    }

    #[test]
    fn empty_identity_page_is_dark_only_at_fiducials_and_bubbles() {
        let t = default_template();
        let page = render_synthetic_sheet(&t, "0000000", &BTreeMap::new(), Similarity::identity())
            .unwrap();
        let (grid, _) = t.id_grid().unwrap();
        let half = t.fiducial_size / 2.0;
        for (x, y, px) in page.enumerate_pixels() {
            if px[0] >= 128 {
                continue;
            }
            let p = Point::new(x as f64 + 0.5, y as f64 + 0.5);
            let in_fiducial = t
                .fiducials
                .iter()
                .any(|f| (p.x - f.x).abs() <= half && (p.y - f.y).abs() <= half);
            let in_filled_bubble = grid
                .centers
                .iter()
                .any(|col| col[0].distance(&p) <= grid.radius);
            assert!(
                in_fiducial || in_filled_bubble,
                "stray dark pixel at ({x}, {y})"
            );
        }
    }

    #[test]
    fn digit_count_must_match_columns() {
        let t = default_template();
        let err = render_synthetic_sheet(&t, "123", &BTreeMap::new(), Similarity::identity())
            .unwrap_err();
        assert!(matches!(
            err,
            SheetError::DigitCountMismatch {
                expected: 7,
                found: 3
            }
        ));
    }

    #[test]
    fn half_filled_disc_has_half_the_pixels() {
        let mut img = GrayImage::from_pixel(40, 40, Luma([255]));
        let c = Point::new(20.0, 20.0);
        fill_disc(&mut img, c, 10.0, 0.5);
        let disc = disc_pixels(c, 10.0, 40, 40);
        let dark = disc
            .iter()
            .filter(|&&(x, y)| img.get_pixel(x, y)[0] == 0)
            .count();
        assert_eq!(dark, (disc.len() as f64 * 0.5).round() as usize);
    }
}
