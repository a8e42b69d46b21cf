//! Plane geometry shared by the sheet template, alignment and rendering code.
//!
//! Coordinates are continuous pixel coordinates: pixel `(i, j)` covers the
//! unit square `[i, i + 1) x [j, j + 1)` and its center sits at
//! `(i + 0.5, j + 0.5)`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned rectangle, origin at the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Rect { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> Point {
        Point::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn corners(&self) -> [Point; 4] {
        [
            Point::new(self.x, self.y),
            Point::new(self.right(), self.y),
            Point::new(self.right(), self.bottom()),
            Point::new(self.x, self.bottom()),
        ]
    }

    /// Overlap of the two rectangles, `None` when the interiors are disjoint.
    /// Rectangles that only share an edge do not intersect.
    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x1 > x0 && y1 > y0).then(|| Rect::new(x0, y0, x1 - x0, y1 - y0))
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn contains_point(&self, p: &Point) -> bool {
        p.x >= self.x && p.y >= self.y && p.x <= self.right() && p.y <= self.bottom()
    }
}

/// Similarity transform `p' = scale * R(rotation) * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    /// Counter-clockwise in image coordinates (y down), radians.
    pub rotation: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Default for Similarity {
    fn default() -> Self {
        Similarity::identity()
    }
}

impl Similarity {
    pub const fn identity() -> Self {
        Similarity {
            scale: 1.0,
            rotation: 0.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    /// Rotate and scale about `center`, then translate by `(tx, ty)`.
    pub fn about_center(scale: f64, rotation: f64, tx: f64, ty: f64, center: Point) -> Self {
        let (sin, cos) = rotation.sin_cos();
        let (a, b) = (scale * cos, scale * sin);
        // p' = A (p - c) + c + t
        let ox = center.x - (a * center.x - b * center.y) + tx;
        let oy = center.y - (b * center.x + a * center.y) + ty;
        Similarity {
            scale,
            rotation,
            tx: ox,
            ty: oy,
        }
    }

    fn coefficients(&self) -> (f64, f64) {
        let (sin, cos) = self.rotation.sin_cos();
        (self.scale * cos, self.scale * sin)
    }

    pub fn apply(&self, p: Point) -> Point {
        let (a, b) = self.coefficients();
        Point::new(a * p.x - b * p.y + self.tx, b * p.x + a * p.y + self.ty)
    }

    pub fn inverse(&self) -> Similarity {
        let s = 1.0 / self.scale;
        let r = -self.rotation;
        let (sin, cos) = r.sin_cos();
        let (a, b) = (s * cos, s * sin);
        Similarity {
            scale: s,
            rotation: r,
            tx: -(a * self.tx - b * self.ty),
            ty: -(b * self.tx + a * self.ty),
        }
    }

    /// Least-squares similarity mapping `from[i]` onto `to[i]`.
    ///
    /// Closed form over the centred point sets; needs at least two distinct
    /// source points.
    pub fn fit(from: &[Point], to: &[Point]) -> Option<Similarity> {
        if from.len() != to.len() || from.len() < 2 {
            return None;
        }
        let n = from.len() as f64;
        let mean = |pts: &[Point]| {
            let (sx, sy) = pts
                .iter()
                .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
            Point::new(sx / n, sy / n)
        };
        let (mf, mt) = (mean(from), mean(to));
        let (mut num_a, mut num_b, mut den) = (0.0, 0.0, 0.0);
        for (f, t) in from.iter().zip(to) {
            let (fx, fy) = (f.x - mf.x, f.y - mf.y);
            let (gx, gy) = (t.x - mt.x, t.y - mt.y);
            num_a += fx * gx + fy * gy;
            num_b += fx * gy - fy * gx;
            den += fx * fx + fy * fy;
        }
        if den <= f64::EPSILON {
            return None;
        }
        let (a, b) = (num_a / den, num_b / den);
        let scale = a.hypot(b);
        if scale <= f64::EPSILON {
            return None;
        }
        Some(Similarity {
            scale,
            rotation: b.atan2(a),
            tx: mt.x - (a * mf.x - b * mf.y),
            ty: mt.y - (b * mf.x + a * mf.y),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Point, b: Point) -> bool {
        a.distance(&b) < 1e-9
    }

    #[test]
    fn inverse_round_trips() {
        let t = Similarity::about_center(1.03, 0.05, 12.0, -7.0, Point::new(400.0, 500.0));
        let p = Point::new(123.0, 456.0);
        assert!(close(t.inverse().apply(t.apply(p)), p));
    }

    #[test]
    fn about_center_fixes_center_without_translation() {
        let c = Point::new(300.0, 200.0);
        let t = Similarity::about_center(0.97, -0.08, 0.0, 0.0, c);
        assert!(close(t.apply(c), c));
    }

    #[test]
    fn fit_recovers_exact_transform() {
        let t = Similarity::about_center(1.04, 0.07, -20.0, 15.0, Point::new(400.0, 600.0));
        let from = [
            Point::new(100.0, 100.0),
            Point::new(700.0, 100.0),
            Point::new(100.0, 1000.0),
        ];
        let to: Vec<Point> = from.iter().map(|p| t.apply(*p)).collect();
        let fitted = Similarity::fit(&from, &to).unwrap();
        for p in from {
            assert!(close(fitted.apply(p), t.apply(p)));
        }
        assert!((fitted.scale - 1.04).abs() < 1e-12);
        assert!((fitted.rotation - 0.07).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_coincident_points() {
        let p = Point::new(1.0, 1.0);
        assert!(Similarity::fit(&[p, p], &[p, p]).is_none());
    }

    #[test]
    fn rect_intersection_excludes_shared_edges() {
        let a = Rect::new(0.0, 0.0, 10.0, 10.0);
        assert!(a.intersection(&Rect::new(10.0, 0.0, 5.0, 5.0)).is_none());
        let i = a.intersection(&Rect::new(5.0, 5.0, 10.0, 10.0)).unwrap();
        assert_eq!(i, Rect::new(5.0, 5.0, 5.0, 5.0));
    }
}
