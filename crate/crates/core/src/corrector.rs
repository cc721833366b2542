//! The a-priori embedding φ₀, Dirichlet energies on the glued surface,
//! harmonic extensions φₘ over the squares of 𝔖ₘ, SE statistics and the
//! linear gauge ã·A·R_θ.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell_config::{Cell, CellConfiguration, DyadicSystem, DYADIC_LEVELS};
use crate::error::{Error, Result};
use crate::geometry::{centroid_area, clip_convex, orient, Mat2, Pt, Square};
use crate::linalg::{pcg, Csr};
use crate::surface::{barycentric, EquilateralSurface, Subdivision};
use crate::walks::walk_rng;

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Phi0 { seed: u64 },
    Harmonic { mass: f64, n: usize, regions: usize, max_residual: f64 },
    Uniformization { n: usize },
    Other(String),
}

/// Per-subdivision-vertex images, extended linearly on each triangle.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PLMap {
    pub values: Vec<Pt>,
    pub n: usize,
    pub provenance: Provenance,
    /// Triangles whose image has zero area.
    pub degenerate_faces: usize,
}

impl PLMap {
    pub fn new(sub: &Subdivision, values: Vec<Pt>, provenance: Provenance) -> Result<PLMap> {
        if values.len() != sub.num_vertices() {
            return Err(Error::Invalid(format!("{} values for {} vertices", values.len(), sub.num_vertices())));
        }
        let degenerate_faces =
            sub.triangles.iter().filter(|t| orient(values[t[0]], values[t[1]], values[t[2]]) == 0.0).count();
        Ok(PLMap { values, n: sub.n, provenance, degenerate_faces })
    }

    fn check(&self, sub: &Subdivision) -> Result<()> {
        if self.values.len() != sub.num_vertices() {
            return Err(Error::Invalid("map and subdivision do not match".into()));
        }
        Ok(())
    }

    /// Vertex image table with a provenance header.
    pub fn to_table(&self) -> Result<String> {
        let mut s = format!("# {}\nvertex x y\n", serde_json::to_string(&self.provenance)?);
        for (i, p) in self.values.iter().enumerate() {
            s.push_str(&format!("{i} {:?} {:?}\n", p.x, p.y));
        }
        Ok(s)
    }
}

/// One uniform point per cell (rejection sampling in the bounding box),
/// cell `i` drawing from stream `i` of `seed`.
pub fn sample_cell_points(config: &CellConfiguration, seed: u64) -> Vec<Pt> {
    config
        .cells
        .par_iter()
        .enumerate()
        .map(|(i, c)| sample_in_cell(c, seed, i as u64))
        .collect()
}

fn sample_in_cell(c: &Cell, seed: u64, stream: u64) -> Pt {
    let mut rng = walk_rng(seed, stream);
    let b = c.bbox;
    loop {
        let p = Pt { x: rng.random_range(b.min.x..=b.max.x), y: rng.random_range(b.min.y..=b.max.y) };
        if c.contains(p) {
            return p;
        }
    }
}

/// Value at a chart point of face `f` of the piecewise linear map sending
/// each surface vertex to `points[v]`. Larger faces use the fan around the
/// centre, whose image is the mean of the corner images.
pub fn face_pl_value(surface: &EquilateralSurface, points: &[Pt], f: usize, x: Pt) -> Pt {
    let vs = &surface.faces[f];
    let chart = surface.chart(f);
    if vs.len() == 3 {
        let w = barycentric([chart[0], chart[1], chart[2]], x);
        return points[vs[0]] * w[0] + points[vs[1]] * w[1] + points[vs[2]] * w[2];
    }
    let c = surface.face_center(f);
    let ci = vs.iter().fold(Pt::default(), |a, &v| a + points[v]) / vs.len() as f64;
    let mut best = (f64::NEG_INFINITY, Pt::default());
    for k in 0..vs.len() {
        let k1 = (k + 1) % vs.len();
        let w = barycentric([c, chart[k], chart[k1]], x);
        let m = w[0].min(w[1]).min(w[2]);
        if m > best.0 {
            best = (m, ci * w[0] + points[vs[k]] * w[1] + points[vs[k1]] * w[2]);
        }
    }
    best.1
}

/// φ₀ on the subdivision: cell points sampled with `seed`, extended linearly.
pub fn sample_phi0(config: &CellConfiguration, surface: &EquilateralSurface, sub: &Subdivision, seed: u64) -> Result<PLMap> {
    if config.cells.iter().any(|c| !(c.area > 0.0)) {
        return Err(Error::Degenerate("a cell has non-positive area".into()));
    }
    if surface.num_vertices() != config.len() {
        return Err(Error::Invalid("surface vertices do not match the cells".into()));
    }
    let points = sample_cell_points(config, seed);
    let values = pl_extension(surface, sub, &points);
    PLMap::new(sub, values, Provenance::Phi0 { seed })
}

/// Piecewise linear extension of per-surface-vertex points to the subdivision.
pub fn pl_extension(surface: &EquilateralSurface, sub: &Subdivision, points: &[Pt]) -> Vec<Pt> {
    sub.vertex_home
        .par_iter()
        .enumerate()
        .map(|(i, &(f, x))| match sub.original[i] {
            Some(v) => points[v],
            None => face_pl_value(surface, points, f, x),
        })
        .collect()
}

/// Energy of the linear map on the unit equilateral triangle with images
/// (q0, q1, q2), from the gradient entries x₁, (2x₂ − x₁)/√3, y₁, (2y₂ − y₁)/√3.
pub fn face_energy_closed_form(q: [Pt; 3]) -> f64 {
    let (a, b) = (q[1] - q[0], q[2] - q[0]);
    let g = [a.x, (2.0 * b.x - a.x) / SQRT3, a.y, (2.0 * b.y - a.y) / SQRT3];
    SQRT3 / 4.0 * g.iter().map(|v| v * v).sum::<f64>()
}

/// The same energy by 7-point quadrature of central-difference gradients of
/// the barycentric interpolant.
pub fn face_energy_quadrature(q: [Pt; 3]) -> f64 {
    let c = [Pt { x: 0.0, y: 0.0 }, Pt { x: 1.0, y: 0.0 }, Pt { x: 0.5, y: SQRT3 / 2.0 }];
    let f = |x: Pt| {
        let w = barycentric(c, x);
        q[0] * w[0] + q[1] * w[1] + q[2] * w[2]
    };
    let area = SQRT3 / 4.0;
    let h = 1e-3;
    let (a, b, w0, w1, w2) = (0.059_715_871_789_77, 0.470_142_064_105_11, 0.225, 0.132_394_152_788_51, 0.125_939_180_544_83);
    let (c1, d1) = (0.797_426_985_353_09, 0.101_286_507_323_46);
    let nodes = [
        ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], w0),
        ([a, b, b], w1),
        ([b, a, b], w1),
        ([b, b, a], w1),
        ([c1, d1, d1], w2),
        ([d1, c1, d1], w2),
        ([d1, d1, c1], w2),
    ];
    let mut total = 0.0;
    for (l, w) in nodes {
        let x = c[0] * l[0] + c[1] * l[1] + c[2] * l[2];
        let dx = (f(x + Pt { x: h, y: 0.0 }) - f(x - Pt { x: h, y: 0.0 })) / (2.0 * h);
        let dy = (f(x + Pt { x: 0.0, y: h }) - f(x - Pt { x: 0.0, y: h })) / (2.0 * h);
        total += w * (dx.norm2() + dy.norm2());
    }
    total * area
}

/// 3(ℓ₁² + ℓ₂² + ℓ₃²) for the image side lengths.
pub fn face_energy_bound(q: [Pt; 3]) -> f64 {
    3.0 * ((q[1] - q[0]).norm2() + (q[2] - q[1]).norm2() + (q[0] - q[2]).norm2())
}

/// Jacobian (rows = image coordinates) of the linear map local → image.
pub fn jacobian(local: [Pt; 3], q: [Pt; 3]) -> Mat2 {
    let (e1, e2) = (local[1] - local[0], local[2] - local[0]);
    let (f1, f2) = (q[1] - q[0], q[2] - q[0]);
    let det = e1.cross(e2);
    // J [e1 e2] = [f1 f2]
    let inv = [[e2.y / det, -e2.x / det], [-e1.y / det, e1.x / det]];
    Mat2([
        [f1.x * inv[0][0] + f2.x * inv[1][0], f1.x * inv[0][1] + f2.x * inv[1][1]],
        [f1.y * inv[0][0] + f2.y * inv[1][0], f1.y * inv[0][1] + f2.y * inv[1][1]],
    ])
}

fn tri_area(local: [Pt; 3]) -> f64 {
    0.5 * orient(local[0], local[1], local[2]).abs()
}

fn gather(values: &[Pt], t: [usize; 3]) -> [Pt; 3] {
    [values[t[0]], values[t[1]], values[t[2]]]
}

/// Σ area·‖∇f‖²_F over the listed subdivision triangles.
pub fn dirichlet_energy(sub: &Subdivision, map: &PLMap, tris: &[usize]) -> Result<f64> {
    map.check(sub)?;
    Ok(tris
        .iter()
        .map(|&t| tri_area(sub.tri_local[t]) * jacobian(sub.tri_local[t], gather(&map.values, sub.triangles[t])).frobenius2())
        .sum())
}

/// Dirichlet inner product Σ area·⟨∇f, ∇g⟩_F over the listed triangles.
pub fn dirichlet_inner(sub: &Subdivision, f: &[Pt], g: &[Pt], tris: &[usize]) -> f64 {
    tris.iter()
        .map(|&t| {
            let l = sub.tri_local[t];
            let a = jacobian(l, gather(f, sub.triangles[t])).0;
            let b = jacobian(l, gather(g, sub.triangles[t])).0;
            tri_area(l) * (a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1])
        })
        .sum()
}

/// Memoised search for the squares Ŝₘ^z.
pub struct HatIndex<'a> {
    config: &'a CellConfiguration,
    dyadic: &'a DyadicSystem,
    m: f64,
    mass: HashMap<(i32, i64, i64), f64>,
}

/// Identifier of a dyadic square: (level, column, row).
pub type SquareKey = (i32, i64, i64);

impl<'a> HatIndex<'a> {
    pub fn new(config: &'a CellConfiguration, dyadic: &'a DyadicSystem, m: f64) -> Self {
        HatIndex { config, dyadic, m, mass: HashMap::new() }
    }

    fn key(&self, sq: &Square, level: i32) -> SquareKey {
        (level, (sq.min.x / sq.side).round() as i64, (sq.min.y / sq.side).round() as i64)
    }

    fn mass_at(&mut self, z: Pt, level: i32) -> Result<(Square, SquareKey, f64)> {
        let sq = self.dyadic.square_at(z, level);
        let k = self.key(&sq, level);
        if let Some(&m) = self.mass.get(&k) {
            return Ok((sq, k, m));
        }
        let m = self.config.mass(&sq)?;
        self.mass.insert(k, m);
        Ok((sq, k, m))
    }

    /// The square Ŝₘ^z and its key.
    pub fn hat(&mut self, z: Pt) -> Result<(Square, SquareKey)> {
        if !(self.m > 0.0) {
            return Err(Error::Invalid("mass must be positive".into()));
        }
        let mut level = 0i32;
        let (mut sq, mut key, mut mass) = self.mass_at(z, level)?;
        if mass <= self.m {
            loop {
                if level as usize + 1 >= DYADIC_LEVELS {
                    return Err(Error::InsufficientWindow("dyadic levels exhausted".into()));
                }
                let (up, up_key, up_mass) = self.mass_at(z, level + 1)?;
                if up_mass > self.m {
                    return Ok((sq, key));
                }
                level += 1;
                (sq, key) = (up, up_key);
            }
        }
        while mass > self.m {
            level -= 1;
            if level < -60 {
                return Err(Error::Degenerate("no dyadic square has small enough mass".into()));
            }
            (sq, key, mass) = self.mass_at(z, level)?;
        }
        Ok((sq, key))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegionReport {
    pub key: SquareKey,
    pub square: Square,
    pub free: usize,
    pub fixed: usize,
    pub energy_before: f64,
    pub energy_after: f64,
    pub max_principle: bool,
    pub cg_iterations: usize,
    pub residual: f64,
    /// Triangles with at least one free vertex.
    #[serde(skip)]
    pub triangles: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct HarmonicExtension {
    pub map: PLMap,
    pub regions: Vec<RegionReport>,
    /// Region key of each subdivision vertex.
    pub region_of: Vec<SquareKey>,
    /// Whether the vertex value was solved for.
    pub free: Vec<bool>,
}

/// Symmetric cotangent weights of the subdivision edges.
pub fn cotangent_weights(sub: &Subdivision) -> Vec<Vec<(usize, f64)>> {
    let mut w: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); sub.num_vertices()];
    for (t, tr) in sub.triangles.iter().enumerate() {
        let l = sub.tri_local[t];
        for k in 0..3 {
            let (a, b) = ((k + 1) % 3, (k + 2) % 3);
            let (u, v) = (l[a] - l[k], l[b] - l[k]);
            let cot = u.dot(v) / u.cross(v).abs();
            *w[tr[a]].entry(tr[b]).or_default() += 0.5 * cot;
            *w[tr[b]].entry(tr[a]).or_default() += 0.5 * cot;
        }
    }
    w.into_iter().map(|m| m.into_iter().collect()).collect()
}

/// φₘ: on each square S of 𝔖ₘ, the discrete harmonic extension (cotangent
/// weights of the flat subdivision) of φ₀ into the vertices whose whole
/// star maps into S; φ₀ elsewhere.
pub fn harmonic_extend(
    config: &CellConfiguration,
    sub: &Subdivision,
    phi0: &PLMap,
    dyadic: &DyadicSystem,
    m: f64,
) -> Result<HarmonicExtension> {
    phi0.check(sub)?;
    let nv = sub.num_vertices();
    let mut index = HatIndex::new(config, dyadic, m);
    let mut region_of = Vec::with_capacity(nv);
    let mut squares: BTreeMap<SquareKey, Square> = BTreeMap::new();
    for &z in &phi0.values {
        let (sq, key) = index.hat(z)?;
        squares.insert(key, sq);
        region_of.push(key);
    }
    let tri = &sub.tri;
    let free: Vec<bool> =
        (0..nv).map(|v| !tri.is_boundary_vertex(v) && tri.neighbors(v).all(|w| region_of[w] == region_of[v])).collect();
    let weights = cotangent_weights(sub);
    let mut members: BTreeMap<SquareKey, Vec<usize>> = BTreeMap::new();
    for v in 0..nv {
        if free[v] {
            members.entry(region_of[v]).or_default().push(v);
        }
    }
    let mut region_tris: BTreeMap<SquareKey, Vec<usize>> = BTreeMap::new();
    for (t, tr) in sub.triangles.iter().enumerate() {
        if let Some(&v) = tr.iter().find(|&&v| free[v]) {
            region_tris.entry(region_of[v]).or_default().push(t);
        }
    }
    let solved: Vec<Result<(SquareKey, Vec<(usize, Pt)>, RegionReport)>> = members
        .into_par_iter()
        .map(|(key, verts)| {
            let local: HashMap<usize, usize> = verts.iter().enumerate().map(|(i, &v)| (v, i)).collect();
            let mut rows = Vec::with_capacity(verts.len());
            let mut bx = vec![0.0; verts.len()];
            let mut by = vec![0.0; verts.len()];
            let mut boundary: BTreeMap<usize, Pt> = BTreeMap::new();
            for (i, &v) in verts.iter().enumerate() {
                let mut row = Vec::new();
                let mut diag = 0.0;
                for &(w, c) in &weights[v] {
                    diag += c;
                    match local.get(&w) {
                        Some(&j) => row.push((j, -c)),
                        None => {
                            bx[i] += c * phi0.values[w].x;
                            by[i] += c * phi0.values[w].y;
                            boundary.insert(w, phi0.values[w]);
                        }
                    }
                }
                row.push((i, diag));
                rows.push(row);
            }
            if boundary.is_empty() {
                return Err(Error::Degenerate(format!("region {key:?} does not touch its boundary")));
            }
            let a = Csr::from_rows(rows);
            let mut x: Vec<f64> = verts.iter().map(|&v| phi0.values[v].x).collect();
            let mut y: Vec<f64> = verts.iter().map(|&v| phi0.values[v].y).collect();
            let scale = boundary.values().map(|p| p.norm()).fold(1.0, f64::max);
            let rx = pcg(&a, &bx, &mut x, 1e-14, 1e-13 * scale, 20 * verts.len() + 1000)?;
            let ry = pcg(&a, &by, &mut y, 1e-14, 1e-13 * scale, 20 * verts.len() + 1000)?;
            let (mut lo, mut hi) = (Pt { x: f64::INFINITY, y: f64::INFINITY }, Pt { x: f64::NEG_INFINITY, y: f64::NEG_INFINITY });
            for p in boundary.values() {
                lo = Pt { x: lo.x.min(p.x), y: lo.y.min(p.y) };
                hi = Pt { x: hi.x.max(p.x), y: hi.y.max(p.y) };
            }
            let tol = 1e-9 * scale;
            let max_principle = x.iter().all(|&v| v >= lo.x - tol && v <= hi.x + tol)
                && y.iter().all(|&v| v >= lo.y - tol && v <= hi.y + tol);
            let vals: Vec<(usize, Pt)> = verts.iter().enumerate().map(|(i, &v)| (v, Pt { x: x[i], y: y[i] })).collect();
            let report = RegionReport {
                key,
                square: Square::new(Pt::default(), 0.0),
                free: verts.len(),
                fixed: boundary.len(),
                energy_before: 0.0,
                energy_after: 0.0,
                max_principle,
                cg_iterations: rx.iterations + ry.iterations,
                residual: rx.residual.max(ry.residual),
                triangles: Vec::new(),
            };
            Ok((key, vals, report))
        })
        .collect();
    let mut values = phi0.values.clone();
    let mut regions = Vec::new();
    for r in solved {
        let (key, vals, mut report) = r?;
        for (v, p) in vals {
            values[v] = p;
        }
        report.square = squares[&key];
        report.triangles = region_tris.remove(&key).unwrap_or_default();
        regions.push(report);
    }
    let max_residual = regions.iter().map(|r| r.residual).fold(0.0, f64::max);
    let map = PLMap::new(sub, values, Provenance::Harmonic { mass: m, n: sub.n, regions: regions.len(), max_residual })?;
    for r in regions.iter_mut() {
        r.energy_before = dirichlet_energy(sub, phi0, &r.triangles)?;
        r.energy_after = dirichlet_energy(sub, &map, &r.triangles)?;
    }
    Ok(HarmonicExtension { map, regions, region_of, free })
}

/// ∫ over φ₀⁻¹(H ∩ clip) of |∇a − ∇b|², divided by area(H ∩ clip). The
/// preimage area of each subdivision triangle is its image overlap divided
/// by the Jacobian determinant of φ₀.
pub fn se_statistic(sub: &Subdivision, phi0: &PLMap, a: &PLMap, b: &PLMap, cell: &Cell, clip: &Square) -> Result<f64> {
    phi0.check(sub)?;
    a.check(sub)?;
    b.check(sub)?;
    let denom = cell.area_in_square(clip);
    if !(denom > 0.0) {
        return Err(Error::Invalid("cell does not meet the clip square".into()));
    }
    let clip_poly = clip.polygon();
    let regions: Vec<Vec<Pt>> = cell.pieces.iter().map(|p| clip_convex(p, &clip_poly)).filter(|p| p.len() >= 3).collect();
    let bb = cell.bbox;
    let mut total = 0.0;
    for (t, tr) in sub.triangles.iter().enumerate() {
        let mut img = gather(&phi0.values, *tr);
        let lo = img.iter().fold(img[0], |m, p| Pt { x: m.x.min(p.x), y: m.y.min(p.y) });
        let hi = img.iter().fold(img[0], |m, p| Pt { x: m.x.max(p.x), y: m.y.max(p.y) });
        if hi.x < bb.min.x || lo.x > bb.max.x || hi.y < bb.min.y || lo.y > bb.max.y {
            continue;
        }
        let det = orient(img[0], img[1], img[2]);
        if det == 0.0 {
            continue;
        }
        if det < 0.0 {
            img.swap(1, 2);
        }
        let overlap: f64 = regions.iter().map(|r| centroid_area(&clip_convex(&img, r)).1).sum();
        if overlap <= 0.0 {
            continue;
        }
        let l = sub.tri_local[t];
        let pre = overlap * tri_area(l) / (0.5 * det.abs());
        let d = jacobian(l, gather(&a.values, *tr)).sub(&jacobian(l, gather(&b.values, *tr)));
        total += pre * d.frobenius2();
    }
    Ok(total / denom)
}

/// A linear gauge ã·A·R_θ with det A = 1 and θ ∈ [0, π).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeFit {
    pub matrix: Mat2,
    pub theta: f64,
    pub scale: f64,
    /// RMS error of the fitted map on its calibration pairs.
    pub residual: f64,
}

impl GaugeFit {
    pub fn identity() -> GaugeFit {
        GaugeFit { matrix: Mat2::IDENTITY, theta: 0.0, scale: 1.0, residual: 0.0 }
    }

    pub fn linear(&self) -> Mat2 {
        self.matrix.mul(&Mat2::rotation(self.theta)).scale(self.scale)
    }

    pub fn apply(&self, p: Pt) -> Pt {
        self.linear().apply(p)
    }

    /// Factors an orientation-preserving matrix.
    pub fn decompose(l: &Mat2) -> Result<GaugeFit> {
        let det = l.det();
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::Degenerate(format!("linear map has determinant {det:e}")));
        }
        // closed-form 2x2 polar factor: L = P·R_θ with P symmetric positive
        let m = l.0;
        let mut theta = (m[1][0] - m[0][1]).atan2(m[0][0] + m[1][1]);
        let p = l.mul(&Mat2::rotation(-theta));
        let off = 0.5 * (p.0[0][1] + p.0[1][0]);
        let p = Mat2([[p.0[0][0], off], [off, p.0[1][1]]]);
        let scale = det.sqrt();
        let mut a = p.scale(1.0 / scale);
        if theta < 0.0 {
            theta += 2.0 * PI;
        }
        if theta >= PI {
            theta -= PI;
            a = a.scale(-1.0);
        }
        Ok(GaugeFit { matrix: a, theta, scale, residual: 0.0 })
    }
}

/// Least-squares linear map L (no translation) with L·s ≈ t, factored as ã·A·R_θ.
pub fn fit_linear_gauge(pairs: &[(Pt, Pt)]) -> Result<GaugeFit> {
    if pairs.len() < 3 {
        return Err(Error::Degenerate("need at least three pairs".into()));
    }
    let (mut ss, mut ts) = ([[0.0; 2]; 2], [[0.0; 2]; 2]);
    let mut norm = 0.0;
    for &(s, t) in pairs {
        let (sv, tv) = ([s.x, s.y], [t.x, t.y]);
        for i in 0..2 {
            for j in 0..2 {
                ss[i][j] += sv[i] * sv[j];
                ts[i][j] += tv[i] * sv[j];
            }
        }
        norm += s.norm2();
    }
    let ssm = Mat2(ss);
    if ssm.det().abs() <= 1e-12 * norm * norm {
        return Err(Error::Degenerate("source points are collinear".into()));
    }
    let l = Mat2(ts).mul(&ssm.inverse().unwrap());
    let mut g = GaugeFit::decompose(&l)?;
    let sq: f64 = pairs.iter().map(|&(s, t)| (l.apply(s) - t).norm2()).sum();
    g.residual = (sq / pairs.len() as f64).sqrt();
    Ok(g)
}

/// (1/2^k)·max |gauge(s) − t| over the pairs.
pub fn sublinearity_metric(pairs: &[(Pt, Pt)], gauge: &GaugeFit, k: i32) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InsufficientWindow("no vertices to compare".into()));
    }
    let m = pairs.iter().map(|&(s, t)| (gauge.apply(s) - t).norm()).fold(0.0, f64::max);
    Ok(m / 2f64.powi(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{lattice_config, poisson_voronoi, GeneratorSpec, LatticeKind};
    use crate::surface::{build_M_S, build_surface, hexagonal_surface, subdivide};
    use crate::geometry::pt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn congruent_face_energy() {
        let q = [pt(0.0, 0.0), pt(1.0, 0.0), pt(0.5, SQRT3 / 2.0)];
        assert!((face_energy_closed_form(q) - SQRT3 / 2.0).abs() < 1e-15);
        let z = [pt(2.0, 3.0); 3];
        assert_eq!(face_energy_closed_form(z), 0.0);
    }

    #[test]
    fn closed_form_matches_quadrature_and_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let q: [Pt; 3] = std::array::from_fn(|_| pt(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)));
            let e = face_energy_closed_form(q);
            assert!((e - face_energy_quadrature(q)).abs() <= 1e-10 * e.max(1.0));
            assert!(e <= face_energy_bound(q));
        }
    }

    #[test]
    fn gauge_factorisations() {
        let a = 0.7;
        let pairs: Vec<(Pt, Pt)> = (0..10).map(|i| pt(i as f64, (i * i % 7) as f64)).map(|s| (s, s.rotate(a))).collect();
        let g = fit_linear_gauge(&pairs).unwrap();
        assert!(g.matrix.sub(&Mat2::IDENTITY).frobenius2() < 1e-20);
        assert!((g.theta - a).abs() < 1e-12 && (g.scale - 1.0).abs() < 1e-12 && g.residual < 1e-12);
        let g = GaugeFit::decompose(&Mat2::diag(2.0, 0.5)).unwrap();
        assert!(g.matrix.sub(&Mat2::diag(2.0, 0.5)).frobenius2() < 1e-24 && g.theta.abs() < 1e-15);
        let l = Mat2::rotation(2.0).mul(&Mat2::diag(2.0, 0.5)).scale(3.0);
        let g = GaugeFit::decompose(&l).unwrap();
        assert!(g.linear().sub(&l).frobenius2().sqrt() < 1e-10);
        assert!((g.matrix.det() - 1.0).abs() < 1e-12 && (0.0..PI).contains(&g.theta));
        let line: Vec<(Pt, Pt)> = (0..5).map(|i| (pt(i as f64, 2.0 * i as f64), pt(0.0, 0.0))).collect();
        assert!(fit_linear_gauge(&line).is_err());
    }

    #[test]
    fn sublinearity_closed_forms() {
        let pairs: Vec<(Pt, Pt)> = (0..4).map(|i| (pt(i as f64, 1.0), pt(i as f64, 1.0))).collect();
        assert_eq!(sublinearity_metric(&pairs, &GaugeFit::identity(), 3).unwrap(), 0.0);
        let v = pt(3.0, 4.0);
        let shifted: Vec<(Pt, Pt)> = pairs.iter().map(|&(s, t)| (s, t + v)).collect();
        assert!((sublinearity_metric(&shifted, &GaugeFit::identity(), 3).unwrap() - 5.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn phi0_points_in_cells_and_deterministic() {
        let config = poisson_voronoi(&GeneratorSpec::voronoi(1.0, 20.0, 2)).unwrap();
        let a = sample_cell_points(&config, 9);
        assert_eq!(a, sample_cell_points(&config, 9));
        for (c, p) in config.cells.iter().zip(&a) {
            assert!(c.contains(*p));
        }
    }

    #[test]
    fn phi0_mean_is_centroid() {
        let cell = Cell::new(0, vec![vec![pt(0.0, 0.0), pt(3.0, 0.0), pt(1.0, 2.0)]], None);
        let n = 10_000;
        let pts: Vec<Pt> = (0..n).map(|s| sample_in_cell(&cell, s, 0)).collect();
        let mean = pts.iter().fold(Pt::default(), |a, &b| a + b) / n as f64;
        let var = pts.iter().map(|p| (*p - mean).norm2()).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!(mean.dist(cell.centroid) < 3.0 * se);
    }

    #[test]
    fn affine_phi0_is_harmonic() {
        // flat lattice surface with an affine φ₀: the extension changes nothing
        let (surface, portion) = hexagonal_surface(4).unwrap();
        let sub = subdivide(&surface, &portion, 3).unwrap();
        let config = lattice_config(LatticeKind::Triangular, 48.0);
        let l = Mat2([[1.3, 0.2], [-0.4, 0.9]]);
        let (_, pos) = crate::generators::triangular_patch(4);
        let points: Vec<Pt> = pos.iter().map(|&p| l.apply(p)).collect();
        let values = pl_extension(&surface, &sub, &points);
        let phi0 = PLMap::new(&sub, values, Provenance::Other("affine".into())).unwrap();
        let dy = DyadicSystem::sample(1);
        let ext = harmonic_extend(&config, &sub, &phi0, &dy, 40.0).unwrap();
        let d = ext.map.values.iter().zip(&phi0.values).map(|(a, b)| a.dist(*b)).fold(0.0, f64::max);
        assert!(d < 1e-9, "{d}");
    }

    #[test]
    fn harmonic_extension_invariants() {
        let config = poisson_voronoi(&GeneratorSpec::voronoi(1.0, 64.0, 4)).unwrap();
        let surface = build_surface(&config.map).unwrap();
        let p = build_M_S(&config, &surface, &Square::centered(Pt::default(), 24.0)).unwrap();
        let sub = subdivide(&surface, &p, 2).unwrap();
        let phi0 = sample_phi0(&config, &surface, &sub, 3).unwrap();
        let dy = DyadicSystem::sample(8);
        let e1 = harmonic_extend(&config, &sub, &phi0, &dy, 2.0).unwrap();
        let e2 = harmonic_extend(&config, &sub, &phi0, &dy, 8.0).unwrap();
        let e3 = harmonic_extend(&config, &sub, &phi0, &dy, 32.0).unwrap();
        for e in [&e1, &e2, &e3] {
            for r in &e.regions {
                assert!(r.max_principle);
                assert!(r.energy_after <= r.energy_before * (1.0 + 1e-12) + 1e-12);
            }
        }
        let diff: Vec<Pt> = e2.map.values.iter().zip(&e1.map.values).map(|(a, b)| *a - *b).collect();
        for r in &e3.regions {
            let ip = dirichlet_inner(&sub, &e3.map.values, &diff, &r.triangles);
            let na = dirichlet_inner(&sub, &e3.map.values, &e3.map.values, &r.triangles).sqrt();
            let nd = dirichlet_inner(&sub, &diff, &diff, &r.triangles).sqrt();
            assert!(ip.abs() <= 1e-8 * (na * nd).max(1e-300), "{ip} {na} {nd}");
        }
    }

    #[test]
    fn se_statistic_closed_forms() {
        let (surface, portion) = hexagonal_surface(3).unwrap();
        let sub = subdivide(&surface, &portion, 2).unwrap();
        let (_, pos) = crate::generators::triangular_patch(3);
        let values = pl_extension(&surface, &sub, &pos);
        let a = PLMap::new(&sub, values.clone(), Provenance::Other("id".into())).unwrap();
        let shifted = PLMap::new(&sub, values.iter().map(|&p| p + pt(1.0, 2.0)).collect(), Provenance::Other("t".into())).unwrap();
        let lam = 1.5;
        let scaled = PLMap::new(&sub, values.iter().map(|&p| p * lam).collect(), Provenance::Other("s".into())).unwrap();
        let cell = Cell::new(0, vec![vec![pt(-0.4, -0.4), pt(0.4, -0.4), pt(0.4, 0.4), pt(-0.4, 0.4)]], None);
        let clip = Square::centered(Pt::default(), 10.0);
        assert_eq!(se_statistic(&sub, &a, &a, &a, &cell, &clip).unwrap(), 0.0);
        assert!(se_statistic(&sub, &a, &a, &shifted, &cell, &clip).unwrap() < 1e-20);
        // identity-shaped map has |∇|² = 2 everywhere
        let se = se_statistic(&sub, &a, &a, &scaled, &cell, &clip).unwrap();
        assert!((se - (lam - 1.0) * (lam - 1.0) * 2.0).abs() < 1e-9, "{se}");
    }
}
