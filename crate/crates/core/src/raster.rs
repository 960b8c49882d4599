//! Binary rasters and the silhouette rasterizer.
//!
//! A pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)` and is set iff that
//! center lies inside a projected triangle. Centers exactly on an edge belong
//! to the triangle only when the edge is a top or left edge, so two triangles
//! sharing an edge never both claim (or both miss) a pixel on it. There is no
//! depth buffer: the silhouette is the union of all filled triangles.

use crate::camera::{CameraParams, IntrinsicConventions, Point2, Projector};
use crate::mesh::DentalMesh;

/// Row-major binary image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

/// Rasterized silhouette of a projected mesh.
pub type SilhouetteImage = Bitmask;

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0 + 1
    }

    pub fn union(&self, o: &PixelBox) -> PixelBox {
        PixelBox {
            x0: self.x0.min(o.x0),
            y0: self.y0.min(o.y0),
            x1: self.x1.max(o.x1),
            y1: self.y1.max(o.y1),
        }
    }
}

impl Bitmask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.bits[(y * width + x) as usize] = f(x, y);
            }
        }
        m
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width as usize * height as usize);
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub(crate) fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[(y * self.width + x) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn clear(&mut self) {
        self.bits.fill(false);
    }

    /// Tight bounding box of the set pixels.
    pub fn bounding_box(&self) -> Option<PixelBox> {
        let mut bb: Option<PixelBox> = None;
        for y in 0..self.height {
            let row = &self.bits[(y * self.width) as usize..((y + 1) * self.width) as usize];
            let Some(first) = row.iter().position(|&b| b) else {
                continue;
            };
            let last = row.iter().rposition(|&b| b).unwrap();
            let rb = PixelBox {
                x0: first as u32,
                y0: y,
                x1: last as u32,
                y1: y,
            };
            bb = Some(bb.map_or(rb, |b| b.union(&rb)));
        }
        bb
    }

    /// `self AND NOT other`.
    pub fn minus(&self, other: &Bitmask) -> Bitmask {
        assert_eq!(self.dims(), other.dims());
        Bitmask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && !b).collect(),
        }
    }

    pub fn and(&self, other: &Bitmask) -> Bitmask {
        assert_eq!(self.dims(), other.dims());
        Bitmask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && b).collect(),
        }
    }

    pub fn or(&self, other: &Bitmask) -> Bitmask {
        assert_eq!(self.dims(), other.dims());
        Bitmask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect(),
        }
    }

    /// Whether every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Bitmask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Set pixels with at least one unset (or out-of-image) 4-neighbor.
    pub fn boundary(&self) -> Bitmask {
        let (w, h) = (self.width as i64, self.height as i64);
        Bitmask::from_fn(self.width, self.height, |x, y| {
            if !self.get(x, y) {
                return false;
            }
            [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)].iter().any(|(dx, dy)| {
                let nx = x as i64 + dx;
                let ny = y as i64 + dy;
                nx < 0 || ny < 0 || nx >= w || ny >= h || !self.get(nx as u32, ny as u32)
            })
        })
    }
}

#[inline]
fn edge(a: Point2, b: Point2, px: f64, py: f64) -> f64 {
    (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x)
}

#[inline]
fn is_top_left(a: Point2, b: Point2) -> bool {
    let dy = b.y - a.y;
    let dx = b.x - a.x;
    dy < 0.0 || (dy == 0.0 && dx > 0.0)
}

/// Fills one screen-space triangle into `mask`, returning the touched box.
pub fn fill_triangle(mask: &mut Bitmask, a: Point2, b: Point2, c: Point2) -> Option<PixelBox> {
    let area = edge(a, b, c.x, c.y);
    if !(area.abs() > 0.0) {
        return None;
    }
    // interior is on the positive side of every edge
    let (a, b, c) = if area > 0.0 { (a, b, c) } else { (a, c, b) };

    let w = mask.width as f64;
    let h = mask.height as f64;
    let min_x = a.x.min(b.x).min(c.x);
    let max_x = a.x.max(b.x).max(c.x);
    let min_y = a.y.min(b.y).min(c.y);
    let max_y = a.y.max(b.y).max(c.y);
    // pixel x covers center x + 0.5
    let x0 = (min_x - 0.5).ceil().max(0.0);
    let x1 = (max_x - 0.5).floor().min(w - 1.0);
    let y0 = (min_y - 0.5).ceil().max(0.0);
    let y1 = (max_y - 0.5).floor().min(h - 1.0);
    if x0 > x1 || y0 > y1 {
        return None;
    }
    let (x0, x1, y0, y1) = (x0 as u32, x1 as u32, y0 as u32, y1 as u32);

    let edges = [(b, c), (c, a), (a, b)];
    let tl = edges.map(|(p, q)| is_top_left(p, q));
    let slope = edges.map(|(p, q)| (q.x - p.x) / (q.y - p.y));
    let inside = |e: f64, top_left: bool| e > 0.0 || (e == 0.0 && top_left);

    let mut touched = false;
    let width = mask.width;
    for y in y0..=y1 {
        let py = y as f64 + 0.5;
        // Along a row each edge function is monotone in x, so every edge
        // admits an interval of pixels; intersect the three intervals.
        let (mut lo, mut hi) = (x0 as i64, x1 as i64);
        for (k, &(p, q)) in edges.iter().enumerate() {
            let pred = |x: i64| inside(edge(p, q, x as f64 + 0.5, py), tl[k]);
            let dy = q.y - p.y;
            if dy == 0.0 {
                if !pred(lo) {
                    hi = lo - 1;
                }
                continue;
            }
            let cross = p.x + slope[k] * (py - p.y);
            // the exact scan below fixes any rounding in this estimate
            let guess = (cross - 0.5).clamp(lo as f64 - 1.0, hi as f64 + 1.0) as i64;
            if dy < 0.0 {
                // inside to the right of the crossing
                let mut xs = guess.clamp(lo, hi + 1);
                while xs > lo && pred(xs - 1) {
                    xs -= 1;
                }
                while xs <= hi && !pred(xs) {
                    xs += 1;
                }
                lo = xs;
            } else {
                let mut xe = (guess - 1).clamp(lo - 1, hi);
                while xe < hi && pred(xe + 1) {
                    xe += 1;
                }
                while xe >= lo && !pred(xe) {
                    xe -= 1;
                }
                hi = xe;
            }
            if lo > hi {
                break;
            }
        }
        if lo <= hi {
            let row = (y * width) as usize;
            mask.bits[row + lo as usize..=row + hi as usize].fill(true);
            touched = true;
        }
    }
    touched.then_some(PixelBox { x0, y0, x1, y1 })
}

/// Rasterizes into an existing mask without clearing it first. Triangles
/// with any vertex in front of the near plane only partially are skipped.
/// Returns the box of touched rows and columns, `None` if nothing was drawn.
pub fn rasterize_into(
    mask: &mut Bitmask,
    mesh: &DentalMesh,
    c: &CameraParams,
    ic: &IntrinsicConventions,
    projected: &mut Vec<Option<Point2>>,
) -> Option<PixelBox> {
    let proj = Projector::new(c, ic);
    projected.clear();
    projected.extend(mesh.vertices.iter().map(|v| proj.project(v).ok()));

    let mut bb: Option<PixelBox> = None;
    for t in &mesh.triangles {
        let (Some(a), Some(b), Some(cc)) = (
            projected[t[0] as usize],
            projected[t[1] as usize],
            projected[t[2] as usize],
        ) else {
            continue;
        };
        if let Some(tb) = fill_triangle(mask, a, b, cc) {
            bb = Some(bb.map_or(tb, |x| x.union(&tb)));
        }
    }
    bb
}

/// Silhouette of `mesh` under camera `c`, sized to the intrinsics' image.
pub fn rasterize_silhouette(
    mesh: &DentalMesh,
    c: &CameraParams,
    ic: &IntrinsicConventions,
) -> SilhouetteImage {
    let mut mask = Bitmask::new(ic.image_width_px, ic.image_height_px);
    let mut scratch = Vec::with_capacity(mesh.vertices.len());
    rasterize_into(&mut mask, mesh, c, ic, &mut scratch);
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Point3;

    /// Axis-aligned square of side `s` mm in the model plane z = 0.
    fn square(s: f64) -> DentalMesh {
        let h = s / 2.0;
        DentalMesh::new(
            vec![
                Point3::new(-h, -h, 0.0),
                Point3::new(h, -h, 0.0),
                Point3::new(h, h, 0.0),
                Point3::new(-h, h, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn centered_square_covers_principal_point() {
        let ic = IntrinsicConventions::for_image(201, 151);
        let s = rasterize_silhouette(&square(20.0), &CameraParams::default(), &ic);
        let (cx, cy) = (ic.principal_point[0] as u32, ic.principal_point[1] as u32);
        assert!(s.get(cx, cy));
    }

    #[test]
    fn behind_camera_is_empty() {
        let ic = IntrinsicConventions::for_image(100, 100);
        let c = CameraParams {
            tz: -600.0,
            ..CameraParams::default()
        };
        assert!(rasterize_silhouette(&square(20.0), &c, &ic).is_empty());
    }

    #[test]
    fn projected_area_matches_closed_form() {
        // side in pixels = m * f * s / Z
        let ic = IntrinsicConventions::for_image(640, 480);
        for (s, f, tz) in [(36.0, 50.0, 0.0), (20.0, 85.0, -100.0), (12.0, 135.0, 50.0)] {
            let c = CameraParams {
                f,
                tz,
                ..CameraParams::default()
            };
            let z = 400.0 + tz;
            let side = ic.pixel_scale() * f * s / z;
            let expected = side * side;
            let got = rasterize_silhouette(&square(s), &c, &ic).count() as f64;
            assert!(
                (got - expected).abs() / expected < 0.02,
                "s={s} f={f}: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn shared_edge_pixels_counted_once() {
        // two triangles whose diagonal passes exactly through pixel centers
        let mut a = Bitmask::new(10, 10);
        let p = |x, y| Point2::new(x, y);
        fill_triangle(&mut a, p(0.5, 0.5), p(8.5, 0.5), p(8.5, 8.5));
        let n1 = a.count();
        let mut b = Bitmask::new(10, 10);
        fill_triangle(&mut b, p(0.5, 0.5), p(8.5, 8.5), p(0.5, 8.5));
        let n2 = b.count();
        assert!(a.and(&b).is_empty(), "pixels on the shared diagonal claimed twice");
        let mut both = Bitmask::new(10, 10);
        fill_triangle(&mut both, p(0.5, 0.5), p(8.5, 0.5), p(8.5, 8.5));
        fill_triangle(&mut both, p(0.5, 0.5), p(8.5, 8.5), p(0.5, 8.5));
        assert_eq!(both.count(), n1 + n2);
        // the 8x8 center square from 0.5..8.5 contains pixel centers 0.5..7.5 on
        // its closed top/left edges and excludes 8.5 on the bottom/right
        assert_eq!(both.count(), 64);
    }

    #[test]
    fn winding_does_not_matter() {
        let p = |x, y| Point2::new(x, y);
        let mut a = Bitmask::new(20, 20);
        fill_triangle(&mut a, p(1.0, 1.0), p(17.3, 3.1), p(5.2, 16.8));
        let mut b = Bitmask::new(20, 20);
        fill_triangle(&mut b, p(1.0, 1.0), p(5.2, 16.8), p(17.3, 3.1));
        assert_eq!(a, b);
        assert!(a.count() > 0);
    }

    #[test]
    fn boundary_of_block() {
        let m = Bitmask::from_fn(6, 6, |x, y| (1..5).contains(&x) && (1..5).contains(&y));
        let b = m.boundary();
        assert_eq!(b.count(), 12);
        assert!(!b.get(2, 2));
        assert!(b.is_subset_of(&m));
    }

    #[test]
    fn bounding_box_tight() {
        let m = Bitmask::from_fn(10, 8, |x, y| x == 3 && y == 2 || x == 7 && y == 5);
        assert_eq!(
            m.bounding_box(),
            Some(PixelBox {
                x0: 3,
                y0: 2,
                x1: 7,
                y1: 5
            })
        );
        assert_eq!(Bitmask::new(3, 3).bounding_box(), None);
    }

    /// Per-pixel reference: test every pixel center against all three edges.
    fn fill_reference(mask: &mut Bitmask, a: Point2, b: Point2, c: Point2) {
        let area = edge(a, b, c.x, c.y);
        if !(area.abs() > 0.0) {
            return;
        }
        let (a, b, c) = if area > 0.0 { (a, b, c) } else { (a, c, b) };
        let tl = [is_top_left(b, c), is_top_left(c, a), is_top_left(a, b)];
        let inside = |e: f64, t: bool| e > 0.0 || (e == 0.0 && t);
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                if inside(edge(b, c, px, py), tl[0])
                    && inside(edge(c, a, px, py), tl[1])
                    && inside(edge(a, b, px, py), tl[2])
                {
                    mask.set(x, y, true);
                }
            }
        }
    }

    #[test]
    fn span_fill_matches_per_pixel_reference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for i in 0..3000 {
            // mix of continuous and half-integer-snapped vertices so edges
            // pass exactly through pixel centers
            let mut pt = |snap: bool| {
                let (x, y) = (rng.random_range(-8.0..40.0), rng.random_range(-8.0..40.0));
                if snap {
                    Point2::new((x * 2.0f64).round() / 2.0, (y * 2.0f64).round() / 2.0)
                } else {
                    Point2::new(x, y)
                }
            };
            let snap = i % 2 == 0;
            let (a, b, c) = (pt(snap), pt(snap), pt(snap));
            let mut fast = Bitmask::new(32, 32);
            let mut slow = Bitmask::new(32, 32);
            fill_triangle(&mut fast, a, b, c);
            fill_reference(&mut slow, a, b, c);
            assert_eq!(fast, slow, "triangle {a:?} {b:?} {c:?}");
        }
    }
}
