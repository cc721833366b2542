//! Plane points, convex polygons and axis-parallel squares.

use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pt {
    pub x: f64,
    pub y: f64,
}

pub const fn pt(x: f64, y: f64) -> Pt {
    Pt { x, y }
}

impl Pt {
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
    pub fn norm2(self) -> f64 {
        self.x * self.x + self.y * self.y
    }
    pub fn dot(self, o: Pt) -> f64 {
        self.x * o.x + self.y * o.y
    }
    pub fn cross(self, o: Pt) -> f64 {
        self.x * o.y - self.y * o.x
    }
    pub fn dist(self, o: Pt) -> f64 {
        (self - o).norm()
    }
    pub fn arg(self) -> f64 {
        self.y.atan2(self.x)
    }
    pub fn rotate(self, theta: f64) -> Pt {
        let (s, c) = theta.sin_cos();
        pt(c * self.x - s * self.y, s * self.x + c * self.y)
    }
    pub fn polar(r: f64, theta: f64) -> Pt {
        pt(r * theta.cos(), r * theta.sin())
    }
    pub fn lerp(self, o: Pt, t: f64) -> Pt {
        self + (o - self) * t
    }
}

impl Add for Pt {
    type Output = Pt;
    fn add(self, o: Pt) -> Pt {
        pt(self.x + o.x, self.y + o.y)
    }
}
impl AddAssign for Pt {
    fn add_assign(&mut self, o: Pt) {
        self.x += o.x;
        self.y += o.y;
    }
}
impl Sub for Pt {
    type Output = Pt;
    fn sub(self, o: Pt) -> Pt {
        pt(self.x - o.x, self.y - o.y)
    }
}
impl Mul<f64> for Pt {
    type Output = Pt;
    fn mul(self, k: f64) -> Pt {
        pt(self.x * k, self.y * k)
    }
}
impl Div<f64> for Pt {
    type Output = Pt;
    fn div(self, k: f64) -> Pt {
        pt(self.x / k, self.y / k)
    }
}
impl Neg for Pt {
    type Output = Pt;
    fn neg(self) -> Pt {
        pt(-self.x, -self.y)
    }
}

/// 2x2 matrix in row-major order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);
    pub fn rotation(theta: f64) -> Mat2 {
        let (s, c) = theta.sin_cos();
        Mat2([[c, -s], [s, c]])
    }
    pub fn diag(a: f64, b: f64) -> Mat2 {
        Mat2([[a, 0.0], [0.0, b]])
    }
    pub fn apply(&self, p: Pt) -> Pt {
        let m = &self.0;
        pt(m[0][0] * p.x + m[0][1] * p.y, m[1][0] * p.x + m[1][1] * p.y)
    }
    pub fn mul(&self, o: &Mat2) -> Mat2 {
        let (a, b) = (&self.0, &o.0);
        let mut r = [[0.0; 2]; 2];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Mat2(r)
    }
    pub fn transpose(&self) -> Mat2 {
        let m = &self.0;
        Mat2([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }
    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }
    pub fn scale(&self, k: f64) -> Mat2 {
        let m = &self.0;
        Mat2([[m[0][0] * k, m[0][1] * k], [m[1][0] * k, m[1][1] * k]])
    }
    pub fn frobenius2(&self) -> f64 {
        self.0.iter().flatten().map(|x| x * x).sum()
    }
    pub fn sub(&self, o: &Mat2) -> Mat2 {
        let (a, b) = (&self.0, &o.0);
        Mat2([[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]])
    }
    pub fn inverse(&self) -> Option<Mat2> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let m = &self.0;
        Some(Mat2([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]))
    }
    /// Eigen-decomposition of a symmetric matrix: (eigenvalues, unit eigenvectors as columns).
    pub fn sym_eigen(&self) -> ([f64; 2], Mat2) {
        let m = &self.0;
        let (a, b, d) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
        let tr = a + d;
        let disc = ((a - d) * (a - d) / 4.0 + b * b).sqrt();
        let l1 = tr / 2.0 + disc;
        let l2 = tr / 2.0 - disc;
        let phi = 0.5 * (2.0 * b).atan2(a - d);
        let (s, c) = phi.sin_cos();
        ([l1, l2], Mat2([[c, -s], [s, c]]))
    }
    /// Symmetric matrix power via eigen-decomposition (needs positive eigenvalues).
    pub fn sym_pow(&self, p: f64) -> Mat2 {
        let ([l1, l2], q) = self.sym_eigen();
        q.mul(&Mat2::diag(l1.powf(p), l2.powf(p))).mul(&q.transpose())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Square {
    pub min: Pt,
    pub side: f64,
}

impl Square {
    pub fn new(min: Pt, side: f64) -> Self {
        Square { min, side }
    }
    pub fn centered(c: Pt, side: f64) -> Self {
        Square { min: c - pt(side / 2.0, side / 2.0), side }
    }
    pub fn max(&self) -> Pt {
        self.min + pt(self.side, self.side)
    }
    pub fn center(&self) -> Pt {
        self.min + pt(self.side / 2.0, self.side / 2.0)
    }
    pub fn area(&self) -> f64 {
        self.side * self.side
    }
    pub fn contains(&self, p: Pt) -> bool {
        p.x >= self.min.x && p.y >= self.min.y && p.x <= self.min.x + self.side && p.y <= self.min.y + self.side
    }
    pub fn contains_square(&self, o: &Square) -> bool {
        self.contains(o.min) && self.contains(o.max())
    }
    pub fn polygon(&self) -> Vec<Pt> {
        let (a, b) = (self.min, self.max());
        vec![a, pt(b.x, a.y), b, pt(a.x, b.y)]
    }
    /// Concentric square of the given side.
    pub fn concentric(&self, side: f64) -> Square {
        Square::centered(self.center(), side)
    }
    pub fn expand(&self, by: f64) -> Square {
        Square { min: self.min - pt(by, by), side: self.side + 2.0 * by }
    }
    pub fn translate(&self, t: Pt) -> Square {
        Square { min: self.min + t, side: self.side }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min: Pt,
    pub max: Pt,
}

impl BBox {
    pub fn of(points: &[Pt]) -> BBox {
        let mut b = BBox { min: pt(f64::INFINITY, f64::INFINITY), max: pt(f64::NEG_INFINITY, f64::NEG_INFINITY) };
        for p in points {
            b.min.x = b.min.x.min(p.x);
            b.min.y = b.min.y.min(p.y);
            b.max.x = b.max.x.max(p.x);
            b.max.y = b.max.y.max(p.y);
        }
        b
    }
    pub fn union(&self, o: &BBox) -> BBox {
        BBox {
            min: pt(self.min.x.min(o.min.x), self.min.y.min(o.min.y)),
            max: pt(self.max.x.max(o.max.x), self.max.y.max(o.max.y)),
        }
    }
    pub fn intersects(&self, o: &BBox) -> bool {
        self.min.x <= o.max.x && o.min.x <= self.max.x && self.min.y <= o.max.y && o.min.y <= self.max.y
    }
    pub fn of_square(s: &Square) -> BBox {
        BBox { min: s.min, max: s.max() }
    }
    pub fn contains(&self, p: Pt) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

pub fn orient(a: Pt, b: Pt, c: Pt) -> f64 {
    (b - a).cross(c - a)
}

pub fn signed_area(poly: &[Pt]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        s += poly[i].cross(poly[(i + 1) % n]);
    }
    0.5 * s
}

/// Area-weighted centroid and (unsigned) area of a simple polygon.
pub fn centroid_area(poly: &[Pt]) -> (Pt, f64) {
    let n = poly.len();
    if n == 0 {
        return (Pt::default(), 0.0);
    }
    let o = poly[0];
    let mut a = 0.0;
    let mut c = Pt::default();
    for i in 1..n.saturating_sub(1) {
        let (p, q) = (poly[i] - o, poly[i + 1] - o);
        let w = p.cross(q);
        a += w;
        c += (p + q) * w;
    }
    if a == 0.0 {
        let mean = poly.iter().fold(Pt::default(), |s, &p| s + p) / n as f64;
        return (mean, 0.0);
    }
    (o + c / (3.0 * a), 0.5 * a.abs())
}

/// Clips a convex or simple polygon against a convex CCW polygon (Sutherland-Hodgman).
pub fn clip_convex(subject: &[Pt], clip: &[Pt]) -> Vec<Pt> {
    let mut out: Vec<Pt> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % n]);
        let input = std::mem::take(&mut out);
        let m = input.len();
        for j in 0..m {
            let p = input[j];
            let q = input[(j + 1) % m];
            let sp = orient(a, b, p);
            let sq = orient(a, b, q);
            if sp >= 0.0 {
                out.push(p);
                if sq < 0.0 {
                    out.push(p + (q - p) * (sp / (sp - sq)));
                }
            } else if sq >= 0.0 {
                out.push(p + (q - p) * (sp / (sp - sq)));
            }
        }
    }
    out
}

pub fn clip_to_square(poly: &[Pt], s: &Square) -> Vec<Pt> {
    clip_convex(poly, &s.polygon())
}

pub fn point_in_convex(poly: &[Pt], p: Pt) -> bool {
    let n = poly.len();
    (0..n).all(|i| orient(poly[i], poly[(i + 1) % n], p) >= 0.0)
}

/// Diameter of a point set (O(n^2), cells are small).
pub fn diameter(points: &[Pt]) -> f64 {
    let mut d2: f64 = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d2 = d2.max((points[i] - points[j]).norm2());
        }
    }
    d2.sqrt()
}

pub fn point_segment_distance(p: Pt, a: Pt, b: Pt) -> f64 {
    let ab = b - a;
    let l2 = ab.norm2();
    if l2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / l2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

pub fn segments_intersect(a: Pt, b: Pt, c: Pt, d: Pt) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    let on = |p: Pt, q: Pt, r: Pt, o: f64| {
        o == 0.0 && r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    on(a, b, c, o1) || on(a, b, d, o2) || on(c, d, a, o3) || on(c, d, b, o4)
}

/// Distance from a point to a convex polygon (0 inside).
pub fn point_convex_distance(poly: &[Pt], p: Pt) -> f64 {
    if point_in_convex(poly, p) {
        return 0.0;
    }
    let n = poly.len();
    (0..n).map(|i| point_segment_distance(p, poly[i], poly[(i + 1) % n])).fold(f64::INFINITY, f64::min)
}

/// Circumcenter of a triangle.
pub fn circumcenter(a: Pt, b: Pt, c: Pt) -> Pt {
    let (b, c) = (b - a, c - a);
    let d = 2.0 * b.cross(c);
    let (bb, cc) = (b.norm2(), c.norm2());
    a + pt((c.y * bb - b.y * cc) / d, (b.x * cc - c.x * bb) / d)
}

/// Incircle center and radius of a triangle.
pub fn incircle(a: Pt, b: Pt, c: Pt) -> (Pt, f64) {
    let la = b.dist(c);
    let lb = c.dist(a);
    let lc = a.dist(b);
    let p = la + lb + lc;
    let center = (a * la + b * lb + c * lc) / p;
    let area = 0.5 * orient(a, b, c).abs();
    (center, 2.0 * area / p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_centroid() {
        let sq = Square::new(pt(0.0, 0.0), 1.0).polygon();
        let (c, a) = centroid_area(&sq);
        assert!((a - 1.0).abs() < 1e-15);
        assert!((c.x - 0.5).abs() < 1e-15 && (c.y - 0.5).abs() < 1e-15);
    }

    #[test]
    fn clip_half() {
        let sq = Square::new(pt(0.0, 0.0), 2.0).polygon();
        let clip = Square::new(pt(1.0, -1.0), 4.0);
        let (_, a) = centroid_area(&clip_to_square(&sq, &clip));
        assert!((a - 2.0).abs() < 1e-12);
    }

    #[test]
    fn incircle_equilateral() {
        let (c, r) = incircle(pt(0.0, 0.0), pt(1.0, 0.0), pt(0.5, 3f64.sqrt() / 2.0));
        assert!((r - 1.0 / (2.0 * 3f64.sqrt())).abs() < 1e-15);
        assert!((c.x - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sym_pow_inverse_sqrt() {
        let m = Mat2([[4.0, 1.0], [1.0, 3.0]]);
        let h = m.sym_pow(-0.5);
        let back = h.mul(&m).mul(&h);
        assert!(back.sub(&Mat2::IDENTITY).frobenius2() < 1e-24);
    }
}
