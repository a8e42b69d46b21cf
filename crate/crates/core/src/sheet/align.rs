use image::{GrayImage, Luma};

use super::{Region, SheetError, SheetTemplate, DEFAULT_BINARIZATION};
use crate::geometry::{Point, Rect, Similarity};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignConfig {
    /// Maximum fiducial reprojection error accepted, pixels.
    pub tolerance_px: f64,
    /// Half-width of the square window searched around each expected
    /// fiducial position, template pixels.
    pub search_radius: f64,
    pub binarization: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            tolerance_px: 3.0,
            search_radius: 160.0,
            binarization: DEFAULT_BINARIZATION,
        }
    }
}

impl AlignConfig {
    pub fn with_tolerance(tolerance_px: f64) -> Self {
        AlignConfig {
            tolerance_px,
            ..Default::default()
        }
    }
}

/// A scanned page registered against its template.
#[derive(Debug, Clone)]
pub struct AlignedSheet<'t> {
    pub template: &'t SheetTemplate,
    pub page: GrayImage,
    /// Maps template coordinates to page coordinates.
    pub transform: Similarity,
    /// Largest fiducial reprojection error, pixels.
    pub residual: f64,
    pub detected: Vec<Point>,
}

impl AlignedSheet<'_> {
    /// Where a template point lands on the scanned page.
    pub fn to_page(&self, p: Point) -> Point {
        self.transform.apply(p)
    }
}

struct Blob {
    area: usize,
    centroid: Point,
}

/// Locate the template fiducials on `page` and fit the template-to-page
/// similarity transform.
///
/// Expected positions are first scaled by the page/template size ratio.
/// Each fiducial is then searched for as a dark, square-sized connected
/// component inside a window around its expected position; the closest
/// qualifying component wins.
pub fn align_page<'t>(
    page: &GrayImage,
    template: &'t SheetTemplate,
    config: &AlignConfig,
) -> Result<AlignedSheet<'t>, SheetError> {
    let sx = page.width() as f64 / template.page_width as f64;
    let sy = page.height() as f64 / template.page_height as f64;
    let coarse = (sx + sy) / 2.0;
    let cutoff = (config.binarization * 255.0) as u8;

    let mut from = Vec::new();
    let mut to = Vec::new();
    for fid in &template.fiducials {
        let expected = Point::new(fid.x * sx, fid.y * sy);
        let radius = config.search_radius * coarse;
        let side = template.fiducial_size * coarse;
        if let Some(found) = find_fiducial(page, expected, radius, side, cutoff) {
            from.push(*fid);
            to.push(found);
        }
    }
    if from.len() < 3 {
        return Err(SheetError::FiducialNotFound {
            found: from.len(),
            expected: template.fiducials.len(),
        });
    }
    let transform = Similarity::fit(&from, &to).ok_or(SheetError::FiducialNotFound {
        found: from.len(),
        expected: template.fiducials.len(),
    })?;
    let residual = from
        .iter()
        .zip(&to)
        .map(|(f, t)| transform.apply(*f).distance(t))
        .fold(0.0, f64::max);
    if residual > config.tolerance_px {
        return Err(SheetError::ResidualTooLarge {
            residual,
            tolerance: config.tolerance_px,
        });
    }
    Ok(AlignedSheet {
        template,
        page: page.clone(),
        transform,
        residual,
        detected: to,
    })
}

fn find_fiducial(
    page: &GrayImage,
    expected: Point,
    radius: f64,
    side: f64,
    cutoff: u8,
) -> Option<Point> {
    let (w, h) = (page.width() as i64, page.height() as i64);
    let x0 = ((expected.x - radius).floor() as i64).clamp(0, w);
    let y0 = ((expected.y - radius).floor() as i64).clamp(0, h);
    let x1 = ((expected.x + radius).ceil() as i64).clamp(0, w);
    let y1 = ((expected.y + radius).ceil() as i64).clamp(0, h);
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    let expected_area = side * side;
    // Rotation widens the bounding box by at most cos + sin of the angle.
    let (min_side, max_side) = (0.7 * side, 1.5 * side);

    dark_components(page, (x0, y0, x1, y1), cutoff)
        .into_iter()
        .filter(|(blob, bbox)| {
            let (bw, bh) = bbox;
            let area = blob.area as f64;
            area >= 0.5 * expected_area
                && area <= 1.8 * expected_area
                && (min_side..=max_side).contains(bw)
                && (min_side..=max_side).contains(bh)
                && area / (bw * bh) >= 0.55
        })
        .map(|(blob, _)| blob.centroid)
        .min_by(|a, b| {
            a.distance(&expected)
                .partial_cmp(&b.distance(&expected))
                .unwrap()
        })
}

/// 4-connected components of pixels darker than `cutoff` inside the window,
/// skipping components that touch the window border.
fn dark_components(
    page: &GrayImage,
    window: (i64, i64, i64, i64),
    cutoff: u8,
) -> Vec<(Blob, (f64, f64))> {
    let (x0, y0, x1, y1) = window;
    let ww = (x1 - x0) as usize;
    let wh = (y1 - y0) as usize;
    let dark = |x: usize, y: usize| {
        page.get_pixel((x0 as usize + x) as u32, (y0 as usize + y) as u32)[0] < cutoff
    };
    let mut seen = vec![false; ww * wh];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..ww * wh {
        let (sx, sy) = (start % ww, start / ww);
        if seen[start] || !dark(sx, sy) {
            continue;
        }
        seen[start] = true;
        stack.push((sx, sy));
        let (mut area, mut sum_x, mut sum_y) = (0usize, 0.0, 0.0);
        let (mut min_x, mut min_y, mut max_x, mut max_y) = (sx, sy, sx, sy);
        let mut touches_border = false;
        while let Some((x, y)) = stack.pop() {
            area += 1;
            sum_x += x as f64 + 0.5;
            sum_y += y as f64 + 0.5;
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            min_y = min_y.min(y);
            max_y = max_y.max(y);
            if x == 0 || y == 0 || x + 1 == ww || y + 1 == wh {
                touches_border = true;
            }
            let neighbours = [
                (x.wrapping_sub(1), y),
                (x + 1, y),
                (x, y.wrapping_sub(1)),
                (x, y + 1),
            ];
            for (nx, ny) in neighbours {
                if nx < ww && ny < wh {
                    let idx = ny * ww + nx;
                    if !seen[idx] && dark(nx, ny) {
                        seen[idx] = true;
                        stack.push((nx, ny));
                    }
                }
            }
        }
        if touches_border {
            continue;
        }
        let centroid = Point::new(
            x0 as f64 + sum_x / area as f64,
            y0 as f64 + sum_y / area as f64,
        );
        let bbox = ((max_x - min_x + 1) as f64, (max_y - min_y + 1) as f64);
        out.push((Blob { area, centroid }, bbox));
    }
    out
}

/// Bilinear sample at a continuous point, pixel centers at half-integers.
/// Points outside the image read as `background`.
pub(crate) fn sample_bilinear(img: &GrayImage, p: Point, background: f64) -> f64 {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x = p.x - 0.5;
    let y = p.y - 0.5;
    let xf = x.floor();
    let yf = y.floor();
    let (fx, fy) = (x - xf, y - yf);
    let (xi, yi) = (xf as i64, yf as i64);
    let at = |px: i64, py: i64| -> f64 {
        if px < 0 || py < 0 || px >= w || py >= h {
            background
        } else {
            img.get_pixel(px as u32, py as u32)[0] as f64
        }
    };
    let top = at(xi, yi) * (1.0 - fx) + at(xi + 1, yi) * fx;
    if fy == 0.0 {
        return if fx == 0.0 { at(xi, yi) } else { top };
    }
    let bottom = at(xi, yi + 1) * (1.0 - fx) + at(xi + 1, yi + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resample one template region from the scanned page at template resolution.
pub fn extract_region(sheet: &AlignedSheet<'_>, region: &Region) -> Result<GrayImage, SheetError> {
    extract_rect(sheet, &region.rect, &region.region_id)
}

pub(crate) fn extract_rect(
    sheet: &AlignedSheet<'_>,
    rect: &Rect,
    label: &str,
) -> Result<GrayImage, SheetError> {
    let bounds = Rect::new(
        0.0,
        0.0,
        sheet.page.width() as f64,
        sheet.page.height() as f64,
    );
    if rect
        .corners()
        .iter()
        .any(|c| !bounds.contains_point(&sheet.transform.apply(*c)))
    {
        return Err(SheetError::OutOfBounds(label.to_string()));
    }
    let (w, h) = (rect.w.round() as u32, rect.h.round() as u32);
    let mut out = GrayImage::new(w, h);
    for (u, v, px) in out.enumerate_pixels_mut() {
        let q = Point::new(rect.x + u as f64 + 0.5, rect.y + v as f64 + 0.5);
        let value = sample_bilinear(&sheet.page, sheet.transform.apply(q), 255.0);
        *px = Luma([value.round().clamp(0.0, 255.0) as u8]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::default_template;
    use crate::sheet::render_synthetic_sheet;
    use std::collections::BTreeMap;

    fn blank(t: &SheetTemplate) -> GrayImage {
        GrayImage::from_pixel(t.page_width, t.page_height, Luma([255]))
    }

    #[test]
    fn identity_render_aligns_to_identity() {
        let t = default_template();
        let page = render_synthetic_sheet(&t, "0123456", &BTreeMap::new(), Similarity::identity())
            .unwrap();
        let sheet = align_page(&page, &t, &AlignConfig::default()).unwrap();
        assert!(sheet.residual < 1e-6, "residual {}", sheet.residual);
        assert!((sheet.transform.scale - 1.0).abs() < 1e-9);
        assert!(sheet.transform.rotation.abs() < 1e-9);
        assert!(sheet.transform.tx.abs() < 1e-6 && sheet.transform.ty.abs() < 1e-6);
    }

    #[test]
    fn rotated_and_shifted_render_recovers_region_centers() {
        let t = default_template();
        let center = Point::new(t.page_width as f64 / 2.0, t.page_height as f64 / 2.0);
        let truth = Similarity::about_center(1.0, 2f64.to_radians(), 12.0, -7.0, center);
        let page = render_synthetic_sheet(&t, "0123456", &BTreeMap::new(), truth).unwrap();
        let sheet = align_page(&page, &t, &AlignConfig::default()).unwrap();
        for region in &t.regions {
            let c = region.rect.center();
            let err = sheet.to_page(c).distance(&truth.apply(c));
            assert!(err <= 2.0, "{}: {err}", region.region_id);
        }
    }

    #[test]
    fn blank_page_has_no_fiducials() {
        let t = default_template();
        let err = align_page(&blank(&t), &t, &AlignConfig::default()).unwrap_err();
        assert!(matches!(err, SheetError::FiducialNotFound { found: 0, .. }));
    }

    #[test]
    fn tight_tolerance_reports_residual() {
        let t = default_template();
        let mut page =
            render_synthetic_sheet(&t, "0123456", &BTreeMap::new(), Similarity::identity())
                .unwrap();
        // Smear one fiducial sideways so its centroid moves by several pixels.
        let f = t.fiducials[1];
        let half = t.fiducial_size / 2.0;
        for y in (f.y - half) as u32..(f.y + half) as u32 {
            for x in (f.x + half) as u32..(f.x + half + 12.0) as u32 {
                page.put_pixel(x, y, Luma([0]));
            }
        }
        let err = align_page(&page, &t, &AlignConfig::with_tolerance(0.5)).unwrap_err();
        assert!(matches!(err, SheetError::ResidualTooLarge { .. }));
    }

    #[test]
    fn identity_extraction_is_pixel_exact() {
        let t = default_template();
        let mut page = blank(&t);
        for (x, y, px) in page.enumerate_pixels_mut() {
            *px = Luma([((x * 7 + y * 13) % 251) as u8]);
        }
        let sheet = AlignedSheet {
            template: &t,
            page: page.clone(),
            transform: Similarity::identity(),
            residual: 0.0,
            detected: vec![],
        };
        let region = t.region("q1").unwrap();
        let crop = extract_region(&sheet, region).unwrap();
        let (rx, ry) = (region.rect.x as u32, region.rect.y as u32);
        assert_eq!(crop.width(), region.rect.w as u32);
        for (u, v, px) in crop.enumerate_pixels() {
            assert_eq!(px, page.get_pixel(rx + u, ry + v));
        }
    }

    #[test]
    fn region_past_page_edge_is_out_of_bounds() {
        let t = default_template();
        let sheet = AlignedSheet {
            template: &t,
            page: blank(&t),
            transform: Similarity {
                tx: 500.0,
                ..Similarity::identity()
            },
            residual: 0.0,
            detected: vec![],
        };
        let region = t.region("q1").unwrap();
        assert!(matches!(
            extract_region(&sheet, region),
            Err(SheetError::OutOfBounds(_))
        ));
    }

    #[test]
    fn bilinear_sampling_is_exact_on_pixel_centers() {
        let mut img = GrayImage::new(3, 3);
        img.put_pixel(1, 1, Luma([200]));
        assert_eq!(sample_bilinear(&img, Point::new(1.5, 1.5), 255.0), 200.0);
        assert_eq!(sample_bilinear(&img, Point::new(1.0, 1.5), 255.0), 100.0);
        assert_eq!(sample_bilinear(&img, Point::new(-3.0, 1.5), 255.0), 255.0);
    }
}
