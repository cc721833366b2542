//! Cell configurations, dyadic systems and the ergodic-average statistics.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    centroid_area, clip_to_square, diameter, point_convex_distance, point_in_convex, pt, segments_intersect, BBox,
    Pt, Square,
};
use crate::planar_map::HalfEdgeMap;

/// A compact cell given as a union of convex CCW pieces with disjoint interiors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: usize,
    pub pieces: Vec<Vec<Pt>>,
    pub area: f64,
    pub diameter: f64,
    pub centroid: Pt,
    pub bbox: BBox,
    /// Generator point (Voronoi site), when there is one.
    pub site: Option<Pt>,
}

impl Cell {
    pub fn new(id: usize, pieces: Vec<Vec<Pt>>, site: Option<Pt>) -> Cell {
        let mut area = 0.0;
        let mut moment = Pt::default();
        let mut all = Vec::new();
        for p in &pieces {
            let (c, a) = centroid_area(p);
            area += a;
            moment += c * a;
            all.extend_from_slice(p);
        }
        let hull = convex_hull(&all);
        Cell { id, area, diameter: diameter(&hull), centroid: moment / area, bbox: BBox::of(&all), pieces, site }
    }

    pub fn contains(&self, p: Pt) -> bool {
        self.bbox.contains(p) && self.pieces.iter().any(|q| point_in_convex(q, p))
    }

    pub fn distance_to(&self, p: Pt) -> f64 {
        self.pieces.iter().map(|q| point_convex_distance(q, p)).fold(f64::INFINITY, f64::min)
    }

    /// area(H ∩ S).
    pub fn area_in_square(&self, s: &Square) -> f64 {
        if !self.bbox.intersects(&BBox::of_square(s)) {
            return 0.0;
        }
        if s.contains(self.bbox.min) && s.contains(self.bbox.max) {
            return self.area;
        }
        self.pieces.iter().map(|q| centroid_area(&clip_to_square(q, s)).1).sum()
    }

    pub fn meets_segment(&self, a: Pt, b: Pt) -> bool {
        self.pieces.iter().any(|q| {
            point_in_convex(q, a)
                || point_in_convex(q, b)
                || (0..q.len()).any(|i| segments_intersect(a, b, q[i], q[(i + 1) % q.len()]))
        })
    }

    pub fn meets_disk(&self, c: Pt, r: f64) -> bool {
        self.distance_to(c) <= r
    }

    /// Boundary-and-interior sample points with spacing about `step`.
    pub fn sample_points(&self, step: f64) -> Vec<Pt> {
        let mut out = Vec::new();
        for q in &self.pieces {
            for i in 0..q.len() {
                let (a, b) = (q[i], q[(i + 1) % q.len()]);
                let k = ((a.dist(b) / step).ceil() as usize).max(1);
                for j in 0..k {
                    out.push(a.lerp(b, j as f64 / k as f64));
                }
            }
            let bb = BBox::of(q);
            let nx = (((bb.max.x - bb.min.x) / step).ceil() as usize).min(256);
            let ny = (((bb.max.y - bb.min.y) / step).ceil() as usize).min(256);
            for i in 1..nx {
                for j in 1..ny {
                    let p = pt(
                        bb.min.x + (bb.max.x - bb.min.x) * i as f64 / nx as f64,
                        bb.min.y + (bb.max.y - bb.min.y) * j as f64 / ny as f64,
                    );
                    if point_in_convex(q, p) {
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

/// Andrew's monotone chain; CCW without collinear points.
pub fn convex_hull(points: &[Pt]) -> Vec<Pt> {
    let mut p: Vec<Pt> = points.to_vec();
    p.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut lower: Vec<Pt> = Vec::new();
    for &q in &p {
        while lower.len() >= 2 && crate::geometry::orient(lower[lower.len() - 2], lower[lower.len() - 1], q) <= 0.0 {
            lower.pop();
        }
        lower.push(q);
    }
    let mut upper: Vec<Pt> = Vec::new();
    for &q in p.iter().rev() {
        while upper.len() >= 2 && crate::geometry::orient(upper[upper.len() - 2], upper[upper.len() - 1], q) <= 0.0 {
            upper.pop();
        }
        upper.push(q);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Adjacency {
    /// Edges of the associated map only.
    #[default]
    Map,
    /// Any two cells that touch geometrically.
    Geometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct GeneratorMeta {
    pub kind: String,
    pub seed: u64,
    pub params: BTreeMap<String, f64>,
}

/// Cells, associated map (vertex i is cell i) and per-edge conductances.
#[derive(Clone, Debug)]
pub struct CellConfiguration {
    pub cells: Vec<Cell>,
    pub map: HalfEdgeMap,
    pub conductance: Vec<f64>,
    /// Square on which the configuration is certified.
    pub carrier: Square,
    /// Cells whose full neighbourhood is present.
    pub complete: Vec<bool>,
    pub meta: GeneratorMeta,
    grid: Grid,
}

#[derive(Clone, Debug)]
struct Grid {
    origin: Pt,
    step: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl Grid {
    fn build(cells: &[Cell]) -> Grid {
        if cells.is_empty() {
            return Grid { origin: Pt::default(), step: 1.0, nx: 1, ny: 1, buckets: vec![Vec::new()] };
        }
        let mut bb = cells[0].bbox;
        let mut mean_d = 0.0;
        for c in cells {
            bb = bb.union(&c.bbox);
            mean_d += c.diameter;
        }
        mean_d /= cells.len() as f64;
        let step = (2.0 * mean_d).max(1e-9);
        let nx = (((bb.max.x - bb.min.x) / step).ceil() as usize).clamp(1, 4096);
        let ny = (((bb.max.y - bb.min.y) / step).ceil() as usize).clamp(1, 4096);
        let step = ((bb.max.x - bb.min.x) / nx as f64).max((bb.max.y - bb.min.y) / ny as f64).max(1e-9);
        let mut g = Grid { origin: bb.min, step, nx, ny, buckets: vec![Vec::new(); nx * ny] };
        for (i, c) in cells.iter().enumerate() {
            let (x0, y0, x1, y1) = g.range(&c.bbox);
            for x in x0..=x1 {
                for y in y0..=y1 {
                    g.buckets[y * g.nx + x].push(i);
                }
            }
        }
        g
    }

    fn range(&self, b: &BBox) -> (usize, usize, usize, usize) {
        let f = |v: f64, o: f64, n: usize| (((v - o) / self.step).floor().max(0.0) as usize).min(n - 1);
        (
            f(b.min.x, self.origin.x, self.nx),
            f(b.min.y, self.origin.y, self.ny),
            f(b.max.x, self.origin.x, self.nx),
            f(b.max.y, self.origin.y, self.ny),
        )
    }

    fn query(&self, b: &BBox) -> Vec<usize> {
        let (x0, y0, x1, y1) = self.range(b);
        let mut out = Vec::new();
        for x in x0..=x1 {
            for y in y0..=y1 {
                out.extend_from_slice(&self.buckets[y * self.nx + x]);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[derive(Serialize, Deserialize)]
struct ConfigFile {
    meta: GeneratorMeta,
    carrier: Square,
    cells: Vec<FileCell>,
    complete: Vec<bool>,
    map: String,
    conductance: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FileCell {
    pieces: Vec<Vec<Pt>>,
    site: Option<Pt>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigValidation {
    pub adjacent_without_contact: Vec<(usize, usize)>,
    pub overlapping_pairs: Vec<(usize, usize)>,
    pub nonpositive_conductance: usize,
}

impl ConfigValidation {
    pub fn ok(&self) -> bool {
        self.adjacent_without_contact.is_empty() && self.overlapping_pairs.is_empty() && self.nonpositive_conductance == 0
    }
}

impl CellConfiguration {
    pub fn new(cells: Vec<Cell>, map: HalfEdgeMap, carrier: Square, complete: Vec<bool>, meta: GeneratorMeta) -> Result<Self> {
        if map.num_vertices() != cells.len() {
            return Err(Error::Invalid("map vertex count differs from cell count".into()));
        }
        if complete.len() != cells.len() {
            return Err(Error::Invalid("completeness flags have the wrong length".into()));
        }
        let grid = Grid::build(&cells);
        let conductance = vec![1.0; map.num_edges()];
        Ok(CellConfiguration { cells, map, conductance, carrier, complete, meta, grid })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn degree(&self, h: usize) -> usize {
        self.map.degree(h)
    }

    pub fn cells_in_bbox(&self, b: &BBox) -> Vec<usize> {
        self.grid.query(b).into_iter().filter(|&i| self.cells[i].bbox.intersects(b)).collect()
    }

    fn require_carrier(&self, s: &Square, what: &str) -> Result<()> {
        let eps = 1e-9 * self.carrier.side;
        if !self.carrier.expand(eps).contains_square(s) {
            return Err(Error::InsufficientWindow(format!(
                "{what}: square at ({}, {}) side {} leaves the carrier",
                s.min.x, s.min.y, s.side
            )));
        }
        Ok(())
    }

    fn require_complete(&self, ids: &[usize], what: &str) -> Result<()> {
        if let Some(&i) = ids.iter().find(|&&i| !self.complete[i]) {
            return Err(Error::InsufficientWindow(format!("{what}: cell {i} has an incomplete neighbourhood")));
        }
        Ok(())
    }

    /// H(S) with the areas of H ∩ S; cells with zero-area contact are dropped.
    pub fn cells_meeting_square(&self, s: &Square) -> Result<Vec<(usize, f64)>> {
        self.require_carrier(s, "H(S)")?;
        Ok(self
            .cells_in_bbox(&BBox::of_square(s))
            .into_iter()
            .filter_map(|i| {
                let a = self.cells[i].area_in_square(s);
                (a > 1e-12 * self.cells[i].area).then_some((i, a))
            })
            .collect())
    }

    /// Σ_{H ∈ H(S)} area(H ∩ S) / area(H).
    pub fn mass(&self, s: &Square) -> Result<f64> {
        Ok(self.cells_meeting_square(s)?.iter().map(|&(i, a)| a / self.cells[i].area).sum())
    }

    /// H(B(c; r)).
    pub fn cells_meeting_disk(&self, c: Pt, r: f64) -> Result<Vec<usize>> {
        self.require_carrier(&Square::centered(c, 2.0 * r), "H(B)")?;
        let b = BBox { min: c - pt(r, r), max: c + pt(r, r) };
        Ok(self.cells_in_bbox(&b).into_iter().filter(|&i| self.cells[i].meets_disk(c, r)).collect())
    }

    /// Cell containing `p` (lowest id on ties).
    pub fn cell_containing(&self, p: Pt) -> Option<usize> {
        self.cells_in_bbox(&BBox { min: p, max: p }).into_iter().find(|&i| self.cells[i].contains(p))
    }

    /// Checks contact along edges and zero-area overlaps.
    pub fn validate(&self) -> ConfigValidation {
        let tol = 1e-9;
        let mut adjacent_without_contact = Vec::new();
        for e in 0..self.map.num_edges() {
            let (u, v) = (self.map.origin(2 * e), self.map.origin(2 * e + 1));
            let scale = self.cells[u].diameter.max(self.cells[v].diameter);
            if !self.cells_touch(u, v, tol * scale) {
                adjacent_without_contact.push((u.min(v), u.max(v)));
            }
        }
        adjacent_without_contact.sort_unstable();
        adjacent_without_contact.dedup();
        let mut overlapping_pairs = Vec::new();
        for u in 0..self.cells.len() {
            for v in self.cells_in_bbox(&self.cells[u].bbox) {
                if v <= u {
                    continue;
                }
                let mut a = 0.0;
                for p in &self.cells[u].pieces {
                    for q in &self.cells[v].pieces {
                        a += centroid_area(&crate::geometry::clip_convex(p, q)).1;
                    }
                }
                if a > tol * self.cells[u].area.min(self.cells[v].area) {
                    overlapping_pairs.push((u, v));
                }
            }
        }
        ConfigValidation {
            adjacent_without_contact,
            overlapping_pairs,
            nonpositive_conductance: self.conductance.iter().filter(|&&c| !(c > 0.0 && c.is_finite())).count(),
        }
    }

    fn cells_touch(&self, u: usize, v: usize, tol: f64) -> bool {
        let (a, b) = (&self.cells[u], &self.cells[v]);
        let grow = |bb: &BBox| BBox { min: bb.min - pt(tol, tol), max: bb.max + pt(tol, tol) };
        if !grow(&a.bbox).intersects(&b.bbox) {
            return false;
        }
        a.pieces.iter().any(|p| p.iter().any(|&x| b.distance_to(x) <= tol))
            || b.pieces.iter().any(|q| q.iter().any(|&x| a.distance_to(x) <= tol))
    }

    /// Neighbour lists under the chosen adjacency notion.
    pub fn adjacency_lists(&self, mode: &Adjacency, subset: &[usize]) -> BTreeMap<usize, Vec<usize>> {
        let set: std::collections::HashSet<usize> = subset.iter().copied().collect();
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &u in subset {
            let mut list: Vec<usize> = match mode {
                Adjacency::Map => self.map.neighbors(u).filter(|w| set.contains(w)).collect(),
                Adjacency::Geometric => {
                    let tol = 1e-9 * self.cells[u].diameter;
                    subset.iter().copied().filter(|&w| w != u && self.cells_touch(u, w, tol)).collect()
                }
            };
            list.sort_unstable();
            list.dedup();
            out.insert(u, list);
        }
        out
    }

    /// Whether the cells meeting the axis-parallel segment `a b` induce a
    /// connected subgraph; returns the number of components.
    pub fn line_connectivity_check(&self, a: Pt, b: Pt, mode: &Adjacency) -> Result<(bool, usize)> {
        if a.x != b.x && a.y != b.y {
            return Err(Error::Invalid("segment must be axis-parallel".into()));
        }
        let bb = BBox::of(&[a, b]);
        if !self.carrier.contains(a) || !self.carrier.contains(b) {
            return Err(Error::InsufficientWindow("segment leaves the carrier".into()));
        }
        let ids: Vec<usize> = self.cells_in_bbox(&bb).into_iter().filter(|&i| self.cells[i].meets_segment(a, b)).collect();
        let comps = components(&self.adjacency_lists(mode, &ids));
        Ok((comps <= 1, comps))
    }

    /// (1/r) max over H ∈ H(B(0;r)) and edges e at H of the Hausdorff distance
    /// between the curve γ_e and H.
    pub fn almost_planarity_gap(&self, emb: &Embedding, r: f64) -> Result<f64> {
        let ids = self.cells_meeting_disk(Pt::default(), r)?;
        let mut worst: f64 = 0.0;
        for &h in &ids {
            let cell = &self.cells[h];
            let samples = cell.sample_points(cell.diameter / 64.0);
            for &he in self.map.out_edges(h) {
                let curve = emb.curve(&self.map, he)?;
                worst = worst.max(hausdorff_cell_polyline(cell, &samples, &curve));
            }
        }
        Ok(worst / r)
    }

    /// (1/|S|²) Σ_{H ∈ H(S)} diam(H)² deg(H)^p.
    pub fn moment_statistic(&self, s: &Square, p: f64) -> Result<f64> {
        if !(s.side > 0.0) {
            return Err(Error::Invalid("square of zero side".into()));
        }
        let hs = self.cells_meeting_square(s)?;
        let ids: Vec<usize> = hs.iter().map(|x| x.0).collect();
        self.require_complete(&ids, "moment statistic")?;
        let sum: f64 = ids
            .iter()
            .map(|&i| self.cells[i].diameter.powi(2) * (self.degree(i) as f64).powf(p))
            .sum();
        Ok(sum / (s.side * s.side))
    }

    /// (max diam over H(S), ratio to |S|).
    pub fn max_cell_diameter(&self, s: &Square) -> Result<(f64, f64)> {
        let hs = self.cells_meeting_square(s)?;
        let m = hs.iter().map(|&(i, _)| self.cells[i].diameter).fold(0.0, f64::max);
        Ok((m, m / s.side))
    }

    /// Translated copy (cells, carrier and sites moved by `t`).
    pub fn translate(&self, t: Pt) -> CellConfiguration {
        let cells = self
            .cells
            .iter()
            .map(|c| Cell::new(c.id, c.pieces.iter().map(|q| q.iter().map(|&p| p + t).collect()).collect(), c.site.map(|s| s + t)))
            .collect();
        let mut out = CellConfiguration::new(cells, self.map.clone(), self.carrier.translate(t), self.complete.clone(), self.meta.clone())
            .expect("translation preserves shape");
        out.conductance = self.conductance.clone();
        out
    }

    /// Deterministic JSON serialization.
    pub fn to_json(&self) -> Result<String> {
        let f = ConfigFile {
            meta: self.meta.clone(),
            carrier: self.carrier,
            cells: self.cells.iter().map(|c| FileCell { pieces: c.pieces.clone(), site: c.site }).collect(),
            complete: self.complete.clone(),
            map: self.map.to_text(),
            conductance: self.conductance.clone(),
        };
        Ok(serde_json::to_string(&f)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: ConfigFile = serde_json::from_str(s)?;
        let cells = f.cells.into_iter().enumerate().map(|(i, c)| Cell::new(i, c.pieces, c.site)).collect();
        let map = HalfEdgeMap::from_text(&f.map)?;
        let mut out = CellConfiguration::new(cells, map, f.carrier, f.complete, f.meta)?;
        if f.conductance.len() != out.map.num_edges() {
            return Err(Error::Parse("conductance count differs from edge count".into()));
        }
        out.conductance = f.conductance;
        Ok(out)
    }
}

fn components(adj: &BTreeMap<usize, Vec<usize>>) -> usize {
    let mut seen = std::collections::HashSet::new();
    let mut comps = 0;
    for &s in adj.keys() {
        if !seen.insert(s) {
            continue;
        }
        comps += 1;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for &w in &adj[&u] {
                if seen.insert(w) {
                    q.push_back(w);
                }
            }
        }
    }
    comps
}

fn point_polyline_distance(p: Pt, curve: &[Pt]) -> f64 {
    if curve.len() == 1 {
        return p.dist(curve[0]);
    }
    curve.windows(2).map(|w| crate::geometry::point_segment_distance(p, w[0], w[1])).fold(f64::INFINITY, f64::min)
}

fn hausdorff_cell_polyline(cell: &Cell, samples: &[Pt], curve: &[Pt]) -> f64 {
    let a = samples.iter().map(|&p| point_polyline_distance(p, curve)).fold(0.0, f64::max);
    let step = cell.diameter / 64.0;
    let mut b: f64 = 0.0;
    for w in curve.windows(2) {
        let k = ((w[0].dist(w[1]) / step).ceil() as usize).clamp(1, 4096);
        for j in 0..=k {
            b = b.max(cell.distance_to(w[0].lerp(w[1], j as f64 / k as f64)));
        }
    }
    if curve.len() == 1 {
        b = cell.distance_to(curve[0]);
    }
    a.max(b)
}

/// Points z_H and edge curves γ_e; edges default to straight segments.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub points: Vec<Pt>,
    pub curves: Option<Vec<Vec<Pt>>>,
}

impl Embedding {
    pub fn straight(points: Vec<Pt>) -> Embedding {
        Embedding { points, curves: None }
    }

    fn curve(&self, map: &HalfEdgeMap, h: usize) -> Result<Vec<Pt>> {
        let (u, v) = (map.origin(h), map.target(h));
        if u >= self.points.len() || v >= self.points.len() {
            return Err(Error::Invalid(format!("embedding lacks a point for cell {}", u.max(v))));
        }
        match &self.curves {
            Some(c) => c.get(h / 2).cloned().ok_or_else(|| Error::Invalid(format!("embedding lacks edge {}", h / 2))),
            None => Ok(vec![self.points[u], self.points[v]]),
        }
    }
}

/// Uniform dyadic system: side of S_0 is 2^s, S_0 = [0, 2^s]² - w, and each
/// S_k is one of the four dyadic parents of S_{k-1}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadicSystem {
    pub s: f64,
    pub w: Pt,
    pub choices: Vec<u8>,
    pub seed: u64,
}

pub const DYADIC_LEVELS: usize = 64;

impl DyadicSystem {
    pub fn sample(seed: u64) -> DyadicSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1AD_1C00);
        let s: f64 = rng.random();
        let side = 2f64.powf(s);
        let w = pt(rng.random::<f64>() * side, rng.random::<f64>() * side);
        let choices = (0..DYADIC_LEVELS).map(|_| rng.random_range(0..4u8)).collect();
        DyadicSystem { s, w, choices, seed }
    }

    pub fn side(&self, level: i32) -> f64 {
        2f64.powf(self.s + level as f64)
    }

    /// The chosen ancestor S_k (k >= 0).
    pub fn chain(&self, k: usize) -> Square {
        let mut sq = Square::new(-self.w, self.side(0));
        for j in 0..k.min(DYADIC_LEVELS) {
            let c = self.choices[j];
            let (dx, dy) = ((c & 1) as f64, (c >> 1) as f64);
            sq = Square::new(sq.min - pt(dx * sq.side, dy * sq.side), 2.0 * sq.side);
        }
        sq
    }

    /// The square of level `level` containing `z`.
    pub fn square_at(&self, z: Pt, level: i32) -> Square {
        let origin = self.chain(level.max(0) as usize).min;
        let side = self.side(level);
        let f = |v: f64, o: f64| o + side * ((v - o) / side).floor();
        Square::new(pt(f(z.x, origin.x), f(z.y, origin.y)), side)
    }

    /// The largest square of the system containing `z` with mass ≤ m,
    /// returned with its mass and level.
    pub fn hat_square(&self, config: &CellConfiguration, z: Pt, m: f64) -> Result<(Square, f64, i32)> {
        if !(m > 0.0) {
            return Err(Error::Invalid("mass must be positive".into()));
        }
        let mut level = 0i32;
        let mut sq = self.square_at(z, level);
        let mut mass = config.mass(&sq)?;
        if mass <= m {
            loop {
                if level as usize + 1 >= DYADIC_LEVELS {
                    return Err(Error::InsufficientWindow("dyadic levels exhausted".into()));
                }
                let up = self.square_at(z, level + 1);
                let up_mass = config.mass(&up)?;
                if up_mass > m {
                    return Ok((sq, mass, level));
                }
                level += 1;
                sq = up;
                mass = up_mass;
            }
        }
        while mass > m {
            level -= 1;
            if level < -60 {
                return Err(Error::Degenerate("no dyadic square has small enough mass".into()));
            }
            sq = self.square_at(z, level);
            mass = config.mass(&sq)?;
        }
        Ok((sq, mass, level))
    }
}

/// Surrogate of the configuration metric: for each grid radius r, D(r) is the
/// sup over matched cells of H(B(0;r)) of centroid displacement plus the sup of
/// conductance mismatch over matched edges; the result is the left-endpoint
/// sum of D(r_i)(e^{-r_i} - e^{-r_{i+1}}) with r_{n} = ∞.
pub fn config_correspondence_distance(
    a: &CellConfiguration,
    b: &CellConfiguration,
    bijection: &[usize],
    radii: &[f64],
) -> Result<f64> {
    if bijection.len() != a.len() {
        return Err(Error::Invalid("bijection must cover every cell".into()));
    }
    let mut total = 0.0;
    for (i, &r) in radii.iter().enumerate() {
        let ids = a.cells_meeting_disk(Pt::default(), r)?;
        let set: std::collections::HashSet<usize> = ids.iter().copied().collect();
        let mut d_cells: f64 = 0.0;
        let mut d_cond: f64 = 0.0;
        for &u in &ids {
            let su = bijection[u];
            d_cells = d_cells.max(a.cells[u].centroid.dist(b.cells[su].centroid));
            let mut ea: Vec<(usize, f64)> = a
                .map
                .out_edges(u)
                .iter()
                .filter(|&&h| set.contains(&a.map.target(h)))
                .map(|&h| (bijection[a.map.target(h)], a.conductance[h / 2]))
                .collect();
            let image: std::collections::HashSet<usize> = ids.iter().map(|&x| bijection[x]).collect();
            let mut eb: Vec<(usize, f64)> = b
                .map
                .out_edges(su)
                .iter()
                .filter(|&&h| image.contains(&b.map.target(h)))
                .map(|&h| (b.map.target(h), b.conductance[h / 2]))
                .collect();
            ea.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
            eb.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
            if ea.len() != eb.len() || ea.iter().zip(&eb).any(|(x, y)| x.0 != y.0) {
                return Err(Error::Invalid(format!("bijection breaks adjacency at cell {u} (radius {r})")));
            }
            for (x, y) in ea.iter().zip(&eb) {
                d_cond = d_cond.max((x.1 - y.1).abs());
            }
        }
        let next = radii.get(i + 1).map(|&q| (-q).exp()).unwrap_or(0.0);
        total += (d_cells + d_cond) * ((-r).exp() - next);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::lattice_config;
    use crate::generators::LatticeKind;

    #[test]
    fn hull_of_square_with_interior_point() {
        let h = convex_hull(&[pt(0.0, 0.0), pt(1.0, 0.0), pt(1.0, 1.0), pt(0.0, 1.0), pt(0.5, 0.5)]);
        assert_eq!(h.len(), 4);
    }

    #[test]
    fn dyadic_chain_nests() {
        let d = DyadicSystem::sample(5);
        for k in 0..10 {
            assert!(d.chain(k + 1).expand(1e-9).contains_square(&d.chain(k)));
        }
        assert!(d.chain(0).contains(pt(0.0, 0.0)));
        let z = pt(0.3, -0.7);
        for level in -5..8 {
            let a = d.square_at(z, level);
            let b = d.square_at(z, level + 1);
            assert!(b.expand(1e-9).contains_square(&a));
        }
    }

    #[test]
    fn unit_square_mass_and_hat() {
        let cfg = lattice_config(LatticeKind::UnitSquare, 40.0);
        let d = DyadicSystem::sample(11);
        let z = pt(0.123, 0.456);
        let (sq, mass, level) = d.hat_square(&cfg, z, 0.5).unwrap();
        assert!(mass <= 0.5 && sq.contains(z));
        assert!((mass - sq.area()).abs() < 1e-9, "unit cells: mass equals area");
        assert!(cfg.mass(&d.square_at(z, level + 1)).unwrap() > 0.5);
        let err = d.hat_square(&cfg, z, 1e9).unwrap_err();
        assert!(matches!(err, Error::InsufficientWindow(_)));
    }

    #[test]
    fn moment_statistic_unit_squares_p0() {
        let cfg = lattice_config(LatticeKind::UnitSquare, 40.0);
        // square with integer corners: exactly k² cells, each diam² = 2
        let k = 10.0;
        let s = Square::new(pt(0.0, 0.0), k);
        let v = cfg.moment_statistic(&s, 0.0).unwrap();
        assert!((v - 2.0).abs() < 1e-9, "{v}");
        let s2 = Square::new(pt(0.5, 0.5), k);
        let v2 = cfg.moment_statistic(&s2, 0.0).unwrap();
        assert!((v2 - 2.0 * (k + 1.0) * (k + 1.0) / (k * k)).abs() < 1e-9, "{v2}");
        assert!(cfg.moment_statistic(&Square::new(pt(0.0, 0.0), 0.0), 0.0).is_err());
    }

    #[test]
    fn translation_covariance_of_moment() {
        let cfg = lattice_config(LatticeKind::Triangular, 30.0);
        let t = pt(3.25, -1.5);
        let moved = cfg.translate(t);
        let s = Square::new(pt(-5.3, -4.1), 9.0);
        let a = cfg.moment_statistic(&s, 4.0).unwrap();
        let b = moved.moment_statistic(&s.translate(t), 4.0).unwrap();
        assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn serialization_round_trip() {
        let cfg = lattice_config(LatticeKind::Triangular, 8.0);
        let j = cfg.to_json().unwrap();
        let back = CellConfiguration::from_json(&j).unwrap();
        assert_eq!(back.to_json().unwrap(), j);
    }
}
