//! Circle packings of disk triangulations.
//!
//! Radii are found by driving interior angle sums to 2π: a Gauss-Seidel
//! uniform-neighbour sweep gets close, then damped Newton steps with a CG inner
//! solve finish. Euclidean packings fix the boundary radii; maximal packings
//! in the unit disk work with hyperbolic radii and boundary horocycles.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pt, Pt};
use crate::linalg::{pcg, Csr};
use crate::planar_map::HalfEdgeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Geometry {
    Euclidean,
    Hyperbolic,
}

#[derive(Clone, Debug)]
pub enum BoundaryCondition {
    /// Euclidean radii for boundary vertices (indexed by vertex id; interior entries ignored).
    FixedRadii(Vec<f64>),
    /// Boundary circles are horocycles: the maximal packing in the unit disk.
    MaximalInDisk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    FixedPoint,
    Hybrid,
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    pub method: Method,
    pub max_sweeps: usize,
    pub max_newton: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-10, method: Method::Hybrid, max_sweeps: 200_000, max_newton: 100 }
    }
}

/// Radius labels: Euclidean radii, or hyperbolic radii (infinite on horocycles).
#[derive(Clone, Debug)]
pub struct Radii {
    pub geometry: Geometry,
    pub labels: Vec<f64>,
    pub sweeps: usize,
    pub newton_steps: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CirclePacking {
    pub tri: HalfEdgeMap,
    pub centers: Vec<Pt>,
    pub radii: Vec<f64>,
    pub root: usize,
    pub geometry: Geometry,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PackingCheck {
    pub max_tangency_rel: f64,
    pub max_angle_residual: f64,
    pub max_overlap_rel: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FourthCircle {
    /// A circle of positive radius.
    Circle(f64),
    /// Zero curvature.
    Line,
    /// Negative curvature: a circle of this radius enclosing the other three.
    Enclosing(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DescartesSign {
    Inner,
    Outer,
}

/// Radius of a circle tangent to three mutually tangent circles. Pass
/// `f64::INFINITY` for a line.
pub fn descartes_fourth(r1: f64, r2: f64, r3: f64, sign: DescartesSign) -> Result<FourthCircle> {
    if !(r1 > 0.0 && r2 > 0.0 && r3 > 0.0) {
        return Err(Error::Invalid("radii must be positive".into()));
    }
    let (k1, k2, k3) = (1.0 / r1, 1.0 / r2, 1.0 / r3);
    let root = 2.0 * (k1 * k2 + k2 * k3 + k3 * k1).sqrt();
    let k = k1 + k2 + k3 + if sign == DescartesSign::Inner { root } else { -root };
    let scale = k1 + k2 + k3;
    Ok(if k.abs() <= 1e-14 * scale {
        FourthCircle::Line
    } else if k > 0.0 {
        FourthCircle::Circle(1.0 / k)
    } else {
        FourthCircle::Enclosing(-1.0 / k)
    })
}

/// Radii of the chain D_3, D_4, ... where D_0 is the unit disk, D_1 and D_2 the
/// lines `Im z = ±1`, and each new disk touches D_0 and the previous two.
pub fn fibonacci_chain(last: usize) -> Vec<f64> {
    let mut r = vec![1.0, f64::INFINITY, f64::INFINITY];
    while r.len() <= last {
        let n = r.len();
        match descartes_fourth(r[0], r[n - 2], r[n - 1], DescartesSign::Inner).unwrap() {
            FourthCircle::Circle(x) => r.push(x),
            other => unreachable!("chain produced {other:?}"),
        }
    }
    r
}

#[inline]
fn om(x: f64) -> f64 {
    // 1 - exp(-2x), accurate for small x
    -(-2.0 * x).exp_m1()
}

/// Half-angle data at `v` in the triangle (v; a, b): returns (F, dlnF/dv, dlnF/da, dlnF/db)
/// with F = sin²(angle/2) and derivatives in the raw label (r or h).
#[inline]
fn corner(geom: Geometry, lv: f64, la: f64, lb: f64) -> (f64, f64, f64, f64) {
    match geom {
        Geometry::Euclidean => {
            let (sa, sb) = (lv + la, lv + lb);
            let f = la * lb / (sa * sb);
            (f, -1.0 / sa - 1.0 / sb, 1.0 / la - 1.0 / sa, 1.0 / lb - 1.0 / sb)
        }
        Geometry::Hyperbolic => {
            let (oa, ob) = (om(la), om(lb));
            let (ova, ovb) = (om(lv + la), om(lv + lb));
            let f = (-2.0 * lv).exp() * oa * ob / (ova * ovb);
            let gva = 2.0 * (-2.0 * (lv + la)).exp() / ova;
            let gvb = 2.0 * (-2.0 * (lv + lb)).exp() / ovb;
            let ga = if la.is_finite() { 2.0 * (-2.0 * la).exp() / oa } else { 0.0 };
            let gb = if lb.is_finite() { 2.0 * (-2.0 * lb).exp() / ob } else { 0.0 };
            (f, -2.0 - gva - gvb, ga - gva, gb - gvb)
        }
    }
}

/// Angle at `v` in the triangle of mutually tangent circles with labels (v; a, b).
pub fn corner_angle(geom: Geometry, lv: f64, la: f64, lb: f64) -> f64 {
    let f = corner(geom, lv, la, lb).0;
    2.0 * f.clamp(0.0, 1.0).sqrt().asin()
}

/// Angle sum at every vertex.
pub fn angle_sums(tri: &HalfEdgeMap, geom: Geometry, labels: &[f64]) -> Vec<f64> {
    let mut sums = vec![0.0; tri.num_vertices()];
    for t in tri.triangles() {
        for k in 0..3 {
            let (v, a, b) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
            sums[v] += corner_angle(geom, labels[v], labels[a], labels[b]);
        }
    }
    sums
}

fn petals(tri: &HalfEdgeMap, v: usize) -> Vec<usize> {
    tri.neighbors(v).collect()
}

fn max_residual(tri: &HalfEdgeMap, geom: Geometry, labels: &[f64], interior: &[usize]) -> f64 {
    let sums = angle_sums(tri, geom, labels);
    interior.iter().map(|&v| (sums[v] - TAU).abs()).fold(0.0, f64::max)
}

fn flower_sum(geom: Geometry, labels: &[f64], v: usize, pet: &[usize]) -> f64 {
    let k = pet.len();
    (0..k).map(|i| corner_angle(geom, labels[v], labels[pet[i]], labels[pet[(i + 1) % k]])).sum()
}

fn uniform_neighbor_update(geom: Geometry, label: f64, theta: f64, k: usize) -> f64 {
    let beta = (theta / (2.0 * k as f64)).sin();
    let delta = (PI / k as f64).sin();
    match geom {
        Geometry::Euclidean => {
            let rho = label * beta / (1.0 - beta);
            rho * (1.0 - delta) / delta
        }
        Geometry::Hyperbolic => {
            let sy = (-label).exp();
            let y = sy * sy;
            let big_y = ((sy - beta) / (sy - beta * y)).max(0.0);
            let t = if big_y <= 0.0 {
                delta
            } else {
                let b = 1.0 - big_y;
                let a = delta * big_y;
                // stable root of a t² + b t - δ = 0
                2.0 * delta / (b + (b * b + 4.0 * a * delta).sqrt())
            };
            -t.ln()
        }
    }
}

/// Solves for packing radii of a simple disk triangulation.
pub fn solve_radii(tri: &HalfEdgeMap, bc: &BoundaryCondition, opts: &SolveOptions) -> Result<Radii> {
    tri.require_disk_triangulation()?;
    if !(opts.tol > 1e-14 && opts.tol < 1e-4) {
        return Err(Error::Invalid(format!("tolerance {} outside (1e-14, 1e-4)", opts.tol)));
    }
    let n = tri.num_vertices();
    let interior = tri.interior_vertices();
    let (geom, mut labels) = match bc {
        BoundaryCondition::FixedRadii(b) => {
            if b.len() != n {
                return Err(Error::Invalid("boundary radii vector has wrong length".into()));
            }
            let bv = tri.boundary_vertices();
            if bv.iter().any(|&v| !(b[v] > 0.0 && b[v].is_finite())) {
                return Err(Error::Invalid("boundary radii must be positive and finite".into()));
            }
            let mean = bv.iter().map(|&v| b[v]).sum::<f64>() / bv.len() as f64;
            let mut l = b.clone();
            for &v in &interior {
                l[v] = mean;
            }
            (Geometry::Euclidean, l)
        }
        BoundaryCondition::MaximalInDisk => {
            let mut l = vec![f64::INFINITY; n];
            let guess = (4.0 / (n as f64).sqrt()).min(0.5);
            for &v in &interior {
                l[v] = guess;
            }
            (Geometry::Hyperbolic, l)
        }
    };
    let petal_lists: Vec<Vec<usize>> = interior.iter().map(|&v| petals(tri, v)).collect();
    let mut history = Vec::new();
    let mut residual = max_residual(tri, geom, &labels, &interior);
    history.push(residual);
    let sweep_target = match opts.method {
        Method::FixedPoint => opts.tol,
        Method::Hybrid => opts.tol.max(0.3),
    };
    let mut sweeps = 0;
    while residual > sweep_target && sweeps < opts.max_sweeps {
        for (idx, &v) in interior.iter().enumerate() {
            let pet = &petal_lists[idx];
            let theta = flower_sum(geom, &labels, v, pet);
            labels[v] = uniform_neighbor_update(geom, labels[v], theta, pet.len());
        }
        sweeps += 1;
        if sweeps % 10 == 0 || opts.method == Method::FixedPoint {
            residual = max_residual(tri, geom, &labels, &interior);
            history.push(residual);
        }
    }
    residual = max_residual(tri, geom, &labels, &interior);
    let mut newton_steps = 0;
    if opts.method == Method::Hybrid {
        while residual > opts.tol {
            if newton_steps >= opts.max_newton {
                break;
            }
            labels = newton_step(tri, geom, &labels, &interior, residual)?;
            newton_steps += 1;
            residual = max_residual(tri, geom, &labels, &interior);
            history.push(residual);
        }
    }
    if residual > opts.tol || !residual.is_finite() {
        return Err(Error::NoConvergence { iterations: sweeps + newton_steps, residual });
    }
    Ok(Radii { geometry: geom, labels, sweeps, newton_steps, residual, history })
}

/// Jacobian of interior angle sums with respect to u (log r, or log tanh(h/2)),
/// negated so that it is positive definite. Also returns the residuals.
pub fn angle_jacobian(tri: &HalfEdgeMap, geom: Geometry, labels: &[f64], interior: &[usize]) -> (Csr, Vec<f64>) {
    let n = tri.num_vertices();
    let mut index = vec![usize::MAX; n];
    for (i, &v) in interior.iter().enumerate() {
        index[v] = i;
    }
    let dl_du = |l: f64| match geom {
        Geometry::Euclidean => l,
        Geometry::Hyperbolic => l.sinh(),
    };
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); interior.len()];
    let mut g = vec![-TAU; interior.len()];
    for t in tri.triangles() {
        for k in 0..3 {
            let (v, a, b) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
            let iv = index[v];
            if iv == usize::MAX {
                continue;
            }
            let (f, dv, da, db) = corner(geom, labels[v], labels[a], labels[b]);
            let f = f.clamp(0.0, 1.0);
            g[iv] += 2.0 * f.sqrt().asin();
            let tan_half = (f / (1.0 - f).max(1e-300)).sqrt();
            rows[iv].push((iv, -tan_half * dv * dl_du(labels[v])));
            for (w, dw) in [(a, da), (b, db)] {
                let iw = index[w];
                if iw != usize::MAX {
                    rows[iv].push((iw, -tan_half * dw * dl_du(labels[w])));
                }
            }
        }
    }
    (Csr::from_rows(rows), g)
}

fn to_u(geom: Geometry, l: f64) -> f64 {
    match geom {
        Geometry::Euclidean => l.ln(),
        Geometry::Hyperbolic => (0.5 * l).tanh().ln(),
    }
}

fn from_u(geom: Geometry, u: f64) -> f64 {
    match geom {
        Geometry::Euclidean => u.exp(),
        Geometry::Hyperbolic => 2.0 * u.exp().atanh(),
    }
}

fn newton_step(tri: &HalfEdgeMap, geom: Geometry, labels: &[f64], interior: &[usize], res: f64) -> Result<Vec<f64>> {
    let (jac, g) = angle_jacobian(tri, geom, labels, interior);
    let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut delta = vec![0.0; interior.len()];
    let rel = (res * 0.1).clamp(1e-12, 1e-2);
    pcg(&jac, &g, &mut delta, rel, 1e-15, 20 * interior.len() + 100)?;
    let cap = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let mut step = if cap > 1.0 { 1.0 / cap } else { 1.0 };
    let u0: Vec<f64> = interior.iter().map(|&v| to_u(geom, labels[v])).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..40 {
        let mut trial = labels.to_vec();
        let mut ok = true;
        for (i, &v) in interior.iter().enumerate() {
            let u = u0[i] + step * delta[i];
            if geom == Geometry::Hyperbolic && u >= 0.0 {
                ok = false;
                break;
            }
            trial[v] = from_u(geom, u);
            if !(trial[v] > 0.0 && trial[v].is_finite()) {
                ok = false;
                break;
            }
        }
        if ok {
            let sums = angle_sums(tri, geom, &trial);
            let nn = interior.iter().map(|&v| (sums[v] - TAU).powi(2)).sum::<f64>().sqrt();
            if nn < gnorm {
                return Ok(trial);
            }
            if best.as_ref().is_none_or(|b| nn < b.0) {
                best = Some((nn, trial));
            }
        }
        step *= 0.5;
    }
    Err(Error::NoConvergence { iterations: 0, residual: res })
}

/// Third circle of radius `r` tangent to (c1, r1) and (c2, r2), to the left of c1 -> c2.
fn third_center(c1: Pt, r1: f64, c2: Pt, r2: f64, r: f64) -> Pt {
    let d = c1.dist(c2);
    let a = r1 + r;
    let c = r2 + r;
    let cos_t = ((a * a + d * d - c * c) / (2.0 * a * d)).clamp(-1.0, 1.0);
    let dir = (c2 - c1) / d;
    c1 + dir.rotate(cos_t.acos()) * a
}

/// Hyperbolic radius of a Euclidean circle inside the unit disk.
fn hyp_radius(c: Pt, r: f64) -> f64 {
    let m = c.norm();
    (m + r).atanh() - (m - r).atanh()
}

fn place_hyperbolic(c1: Pt, r1: f64, c2: Pt, r2: f64, h: f64) -> (Pt, f64) {
    // f(r) > 0 means the candidate circle is too large
    let f = |r: f64| -> f64 {
        let c = third_center(c1, r1, c2, r2, r);
        let outer = c.norm() + r;
        if h.is_infinite() {
            outer - 1.0
        } else if outer >= 1.0 {
            1.0
        } else {
            hyp_radius(c, r) - h
        }
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let r = 0.5 * (lo + hi);
    (third_center(c1, r1, c2, r2, r), r)
}

/// Lays out circles from solved labels: root at the origin and the given
/// neighbour (default: first in rotation) on the positive real axis.
pub fn layout(tri: &HalfEdgeMap, radii: &Radii, root: usize, root_neighbor: Option<usize>) -> Result<CirclePacking> {
    let n = tri.num_vertices();
    let interior = tri.interior_vertices();
    let res = max_residual(tri, radii.geometry, &radii.labels, &interior);
    if res > 1e-6 {
        return Err(Error::Invalid(format!("angle sums off by {res:e}; radii inconsistent")));
    }
    let geom = radii.geometry;
    let l = &radii.labels;
    if geom == Geometry::Hyperbolic && tri.is_boundary_vertex(root) {
        return Err(Error::Invalid("hyperbolic layout needs an interior root".into()));
    }
    let first = match root_neighbor {
        Some(w) => tri.find_half_edge(root, w).ok_or_else(|| Error::Invalid(format!("{w} is not adjacent to the root")))?,
        None => *tri.out_edges(root).first().ok_or_else(|| Error::Invalid("isolated root".into()))?,
    };
    let nb = tri.target(first);
    let mut centers = vec![pt(f64::NAN, f64::NAN); n];
    let mut rad = vec![f64::NAN; n];
    match geom {
        Geometry::Euclidean => {
            centers[root] = pt(0.0, 0.0);
            rad[root] = l[root];
            centers[nb] = pt(l[root] + l[nb], 0.0);
            rad[nb] = l[nb];
        }
        Geometry::Hyperbolic => {
            let rho = (0.5 * l[root]).tanh();
            centers[root] = pt(0.0, 0.0);
            rad[root] = rho;
            let right = if l[nb].is_infinite() { 1.0 } else { (0.5 * l[root] + l[nb]).tanh() };
            centers[nb] = pt(0.5 * (rho + right), 0.0);
            rad[nb] = 0.5 * (right - rho);
        }
    }
    let outer = tri.outer_face();
    let mut queue = VecDeque::new();
    queue.push_back(first);
    queue.push_back(first ^ 1);
    let mut visited = vec![false; tri.num_faces()];
    while let Some(h) = queue.pop_front() {
        let f = tri.face_of(h);
        if Some(f) == outer || visited[f] {
            continue;
        }
        visited[f] = true;
        let (a, b) = (tri.origin(h), tri.target(h));
        let hw = tri.next(tri.next(h));
        let w = tri.origin(hw);
        if rad[w].is_nan() {
            let (c, r) = match geom {
                Geometry::Euclidean => (third_center(centers[a], rad[a], centers[b], rad[b], l[w]), l[w]),
                Geometry::Hyperbolic => place_hyperbolic(centers[a], rad[a], centers[b], rad[b], l[w]),
            };
            centers[w] = c;
            rad[w] = r;
        }
        queue.push_back(tri.next(h) ^ 1);
        queue.push_back(hw ^ 1);
    }
    if rad.iter().any(|r| r.is_nan()) {
        return Err(Error::Invalid("layout did not reach every vertex".into()));
    }
    Ok(CirclePacking { tri: tri.clone(), centers, radii: rad, root, geometry: geom })
}

/// Solve + layout in one call.
pub fn pack(tri: &HalfEdgeMap, bc: &BoundaryCondition, root: usize, opts: &SolveOptions) -> Result<CirclePacking> {
    let r = solve_radii(tri, bc, opts)?;
    layout(tri, &r, root, None)
}

impl CirclePacking {
    /// Tangency, angle-sum and overlap residuals, scanned exhaustively.
    pub fn check(&self) -> PackingCheck {
        let tri = &self.tri;
        let mut tang: f64 = 0.0;
        for e in 0..tri.num_edges() {
            let (u, v) = (tri.origin(2 * e), tri.origin(2 * e + 1));
            let s = self.radii[u] + self.radii[v];
            tang = tang.max((self.centers[u].dist(self.centers[v]) - s).abs() / s);
        }
        let mut sums = vec![0.0; tri.num_vertices()];
        for t in tri.triangles() {
            for k in 0..3 {
                let (v, a, b) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
                let (p, q) = (self.centers[a] - self.centers[v], self.centers[b] - self.centers[v]);
                sums[v] += p.cross(q).atan2(p.dot(q));
            }
        }
        let ang = tri.interior_vertices().iter().map(|&v| (sums[v] - TAU).abs()).fold(0.0, f64::max);
        PackingCheck { max_tangency_rel: tang, max_angle_residual: ang, max_overlap_rel: self.max_overlap() }
    }

    fn max_overlap(&self) -> f64 {
        let n = self.centers.len();
        if n == 0 {
            return 0.0;
        }
        let rmax = self.radii.iter().cloned().fold(0.0, f64::max);
        let cell = 2.0 * rmax;
        let mut grid: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
        let key = |p: Pt| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64);
        for (i, &c) in self.centers.iter().enumerate() {
            grid.entry(key(c)).or_default().push(i);
        }
        let mut worst: f64 = 0.0;
        for u in 0..n {
            let (kx, ky) = key(self.centers[u]);
            let nbrs: Vec<usize> = self.tri.neighbors(u).collect();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    if let Some(list) = grid.get(&(kx + dx, ky + dy)) {
                        for &v in list {
                            if v <= u || nbrs.contains(&v) {
                                continue;
                            }
                            let s = self.radii[u] + self.radii[v];
                            let d = self.centers[u].dist(self.centers[v]);
                            worst = worst.max((s - d) / s);
                        }
                    }
                }
            }
        }
        worst.max(0.0)
    }

    /// Same packing translated and scaled so that vertex `v` sits at the origin with unit radius.
    pub fn normalized_at(&self, v: usize) -> CirclePacking {
        let (c, s) = (self.centers[v], 1.0 / self.radii[v]);
        CirclePacking {
            tri: self.tri.clone(),
            centers: self.centers.iter().map(|&p| (p - c) * s).collect(),
            radii: self.radii.iter().map(|&r| r * s).collect(),
            root: v,
            geometry: Geometry::Euclidean,
        }
    }

    /// Per-vertex `id x y r` lines with full double precision.
    pub fn to_text(&self) -> String {
        let mut s = String::from("id x y r\n");
        for (i, (c, r)) in self.centers.iter().zip(&self.radii).enumerate() {
            s.push_str(&format!("{i} {:?} {:?} {:?}\n", c.x, c.y, r));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowerReport {
    pub vertex: usize,
    pub degree: usize,
    pub min_ratio: f64,
    pub worst_three_circle: f64,
    pub bound: f64,
    pub violations: usize,
}

impl FlowerReport {
    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

/// Ring-lemma ratio and three-circle check on an explicit flower. Petal radii
/// are cyclic and may be infinite (lines). Both orientations are checked.
pub fn flower_checks_radii(r0: f64, petals: &[f64], cyclic: bool) -> FlowerReport {
    let d = petals.len();
    let bound = 0.01 / (d as f64 * d as f64);
    let min_ratio = petals.iter().map(|r| r / r0).fold(f64::INFINITY, f64::min);
    let mut worst = f64::INFINITY;
    let mut violations = 0;
    let pairs = if cyclic { d } else { d.saturating_sub(1) };
    for j in 0..pairs {
        let (p, q) = (petals[j], petals[(j + 1) % d]);
        for (a, b) in [(p, q), (q, p)] {
            let m = r0.min(a);
            if !m.is_finite() {
                continue;
            }
            let ratio = b / m;
            worst = worst.min(ratio);
            if b < bound * m {
                violations += 1;
            }
        }
    }
    FlowerReport { vertex: usize::MAX, degree: d, min_ratio, worst_three_circle: worst, bound, violations }
}

pub fn flower_checks(packing: &CirclePacking, v: usize) -> Result<FlowerReport> {
    if packing.tri.is_boundary_vertex(v) {
        return Err(Error::Invalid(format!("vertex {v} is on the boundary and has no full flower")));
    }
    let pet: Vec<f64> = packing.tri.neighbors(v).map(|w| packing.radii[w]).collect();
    let mut r = flower_checks_radii(packing.radii[v], &pet, true);
    r.vertex = v;
    Ok(r)
}

#[derive(Clone, Debug)]
pub struct StabilityTable {
    /// Global ids of the ball vertices, sorted.
    pub ball: Vec<usize>,
    /// One row per truncation: radii of `ball` normalized by the root radius.
    pub radii: Vec<Vec<f64>>,
    /// Max relative difference between consecutive rows.
    pub differences: Vec<f64>,
}

/// A truncation: triangulation, global vertex ids, and local root.
pub struct Truncation {
    pub tri: HalfEdgeMap,
    pub ids: Vec<usize>,
    pub root: usize,
}

/// Maximal packings of nested truncations compared on the combinatorial k-ball of the root.
pub fn nested_radii_stability(seq: &[Truncation], k: usize, opts: &SolveOptions) -> Result<StabilityTable> {
    let mut ball_ref: Option<Vec<usize>> = None;
    let mut rows = Vec::new();
    for t in seq {
        let dist = t.tri.bfs_distances(t.root);
        let mut local: Vec<(usize, usize)> =
            (0..t.tri.num_vertices()).filter(|&v| dist[v] <= k).map(|v| (t.ids[v], v)).collect();
        local.sort_unstable();
        let ids: Vec<usize> = local.iter().map(|p| p.0).collect();
        if let Some(b) = &ball_ref {
            if *b != ids {
                return Err(Error::Invalid("truncations do not agree on the k-ball".into()));
            }
        } else {
            ball_ref = Some(ids);
        }
        let p = pack(&t.tri, &BoundaryCondition::MaximalInDisk, t.root, opts)?;
        let r0 = p.radii[t.root];
        rows.push(local.iter().map(|&(_, v)| p.radii[v] / r0).collect::<Vec<f64>>());
    }
    let differences = rows
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max))
        .collect();
    Ok(StabilityTable { ball: ball_ref.unwrap_or_default(), radii: rows, differences })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planar_map::bs_ball;
    use crate::generators::triangular_patch;

    fn tri_lattice(m: usize) -> HalfEdgeMap {
        triangular_patch(m).0
    }

    #[test]
    fn descartes_equal_unit() {
        let FourthCircle::Circle(r) = descartes_fourth(1.0, 1.0, 1.0, DescartesSign::Inner).unwrap() else {
            panic!()
        };
        assert!((1.0 / r - (3.0 + 2.0 * 3f64.sqrt())).abs() < 1e-12);
        assert!((r - 0.154700538).abs() < 1e-9);
        assert_eq!(descartes_fourth(1.0, f64::INFINITY, f64::INFINITY, DescartesSign::Inner).unwrap(), FourthCircle::Circle(1.0));
        assert!(matches!(descartes_fourth(1.0, 1.0, 1.0, DescartesSign::Outer).unwrap(), FourthCircle::Enclosing(_)));
    }

    #[test]
    fn hyperbolic_corner_matches_law_of_cosines() {
        for &(hv, ha, hb) in &[(0.3, 0.7, 1.1), (2.0, 0.1, 0.5), (0.01, 0.02, 0.015)] {
            let (a, b, c): (f64, f64, f64) = (hv + ha, hv + hb, ha + hb);
            let cos = (a.cosh() * b.cosh() - c.cosh()) / (a.sinh() * b.sinh());
            let want = cos.acos();
            let got = corner_angle(Geometry::Hyperbolic, hv, ha, hb);
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_and_is_symmetric() {
        let ball = bs_ball(&tri_lattice(6), 0, 3);
        let tri = ball.map;
        let interior = tri.interior_vertices();
        for geom in [Geometry::Euclidean, Geometry::Hyperbolic] {
            let mut labels: Vec<f64> = (0..tri.num_vertices()).map(|i| 0.3 + 0.05 * ((i * 7) % 5) as f64).collect();
            if geom == Geometry::Hyperbolic {
                for v in tri.boundary_vertices() {
                    labels[v] = f64::INFINITY;
                }
            }
            let (jac, g) = angle_jacobian(&tri, geom, &labels, &interior);
            assert!(jac.asymmetry() < 1e-10, "{geom:?} asymmetry {}", jac.asymmetry());
            let v = interior[2];
            let eps = 1e-6;
            let mut l2 = labels.clone();
            l2[v] = from_u(geom, to_u(geom, labels[v]) + eps);
            let (_, g2) = angle_jacobian(&tri, geom, &l2, &interior);
            let mut col = vec![0.0; interior.len()];
            let mut e = vec![0.0; interior.len()];
            e[2] = 1.0;
            jac.mul_vec(&e, &mut col);
            for i in 0..interior.len() {
                let fd = -(g2[i] - g[i]) / eps;
                assert!((fd - col[i]).abs() < 1e-5, "{geom:?} row {i}: {fd} vs {}", col[i]);
            }
        }
    }

    #[test]
    fn hex_flower_interior_radius_one() {
        let ball = bs_ball(&tri_lattice(4), 0, 1);
        let bc = BoundaryCondition::FixedRadii(vec![1.0; 7]);
        for method in [Method::FixedPoint, Method::Hybrid] {
            let r = solve_radii(&ball.map, &bc, &SolveOptions { method, ..Default::default() }).unwrap();
            assert!((r.labels[ball.root] - 1.0).abs() < 1e-10);
        }
        let p = pack(&ball.map, &bc, ball.root, &SolveOptions::default()).unwrap();
        for w in ball.map.neighbors(ball.root) {
            let a = p.centers[w].arg().rem_euclid(PI / 3.0);
            assert!(a.min(PI / 3.0 - a) < 1e-9);
        }
        assert!(p.check().max_tangency_rel < 1e-12);
    }

    #[test]
    fn two_ring_patch_all_unit() {
        let ball = bs_ball(&tri_lattice(5), 0, 2);
        let n = ball.map.num_vertices();
        let p = pack(&ball.map, &BoundaryCondition::FixedRadii(vec![1.0; n]), ball.root, &SolveOptions::default()).unwrap();
        assert!(p.radii.iter().all(|r| (r - 1.0).abs() < 1e-10));
    }

    #[test]
    fn maximal_packing_of_flower_is_symmetric() {
        let ball = bs_ball(&tri_lattice(4), 0, 1);
        let p = pack(&ball.map, &BoundaryCondition::MaximalInDisk, ball.root, &SolveOptions::default()).unwrap();
        let c = p.check();
        assert!(c.max_tangency_rel < 1e-8, "{c:?}");
        for v in ball.map.boundary_vertices() {
            assert!((p.centers[v].norm() + p.radii[v] - 1.0).abs() < 1e-9);
        }
        // six equal horocycles around a central circle: sin(pi/6) = rho/(r + rho), r + 2 rho = 1
        let r = p.radii[ball.root];
        assert!((r - 1.0 / 3.0).abs() < 1e-9, "{r}");
    }

    #[test]
    fn scaling_boundary_scales_solution() {
        let ball = bs_ball(&tri_lattice(6), 0, 3);
        let n = ball.map.num_vertices();
        let b: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i * 13) % 7) as f64 / 7.0).collect();
        let opts = SolveOptions { tol: 1e-13, ..Default::default() };
        let r1 = solve_radii(&ball.map, &BoundaryCondition::FixedRadii(b.clone()), &opts).unwrap();
        let lam = 3.7;
        let b2: Vec<f64> = b.iter().map(|x| x * lam).collect();
        let r2 = solve_radii(&ball.map, &BoundaryCondition::FixedRadii(b2), &opts).unwrap();
        for v in ball.map.interior_vertices() {
            assert!((r2.labels[v] / (lam * r1.labels[v]) - 1.0).abs() < 1e-12);
        }
    }
}
