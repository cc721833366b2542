//! The glued surface M(T): every bounded face of a planar map becomes a
//! regular polygon with unit sides. Portions M(S), semi-flowers, the
//! subdivision mesh and the circle-packing approximation of the
//! uniformization map live here.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell_config::{convex_hull, CellConfiguration};
use crate::circle_pack::{self, BoundaryCondition, SolveOptions};
use crate::error::{Error, Result};
use crate::geometry::{diameter, orient, point_segment_distance, pt, Pt, Square};
use crate::planar_map::HalfEdgeMap;

/// Subdivisions larger than this are refused.
pub const MAX_SUBDIVISION_VERTICES: usize = 5_000_000;
/// Number of grid levels for the parameter a of M(S; a).
pub const M_S_GRID: usize = 32;

/// Interior angle of the regular p-gon.
pub fn polygon_angle(p: usize) -> f64 {
    (p as f64 - 2.0) * PI / p as f64
}

/// Area of the regular p-gon with unit sides.
pub fn polygon_area(p: usize) -> f64 {
    p as f64 / (4.0 * (PI / p as f64).tan())
}

/// Corners of the unit-side regular p-gon with corner 0 at the origin and
/// corner 1 at (1, 0), counter-clockwise.
pub fn polygon_chart(p: usize) -> Vec<Pt> {
    let mut out = Vec::with_capacity(p);
    let mut c = pt(0.0, 0.0);
    for k in 0..p {
        out.push(c);
        c += Pt::polar(1.0, TAU * k as f64 / p as f64);
    }
    out
}

#[derive(Clone, Debug)]
pub struct EquilateralSurface {
    pub map: HalfEdgeMap,
    /// Vertex cycles of the bounded faces (CCW).
    pub faces: Vec<Vec<usize>>,
    /// Map face id of each surface face.
    pub face_ids: Vec<usize>,
    /// Surface face index of each map face (None for the outer face).
    pub face_index: Vec<Option<usize>>,
    pub cone_angle: Vec<f64>,
    pub boundary: Vec<bool>,
}

fn largest_component(map: &HalfEdgeMap) -> Vec<bool> {
    let n = map.num_vertices();
    let mut label = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    for v0 in 0..n {
        if label[v0] != usize::MAX {
            continue;
        }
        let c = sizes.len();
        let mut stack = vec![v0];
        label[v0] = c;
        let mut size = 0;
        while let Some(u) = stack.pop() {
            size += 1;
            for w in map.neighbors(u) {
                if label[w] == usize::MAX {
                    label[w] = c;
                    stack.push(w);
                }
            }
        }
        sizes.push(size);
    }
    let best = (0..sizes.len()).max_by_key(|&c| (sizes[c], usize::MAX - c)).unwrap_or(0);
    label.iter().map(|&l| l == best).collect()
}

/// Glues unit regular polygons along the bounded faces of `map` that lie in
/// its largest connected component.
pub fn build_surface(map: &HalfEdgeMap) -> Result<EquilateralSurface> {
    let rep = map.validate();
    if rep.loops > 0 {
        return Err(Error::Degenerate(format!("{} loop edge(s)", rep.loops)));
    }
    let main = largest_component(map);
    let mut faces = Vec::new();
    let mut face_ids = Vec::new();
    let mut face_index = vec![None; map.num_faces()];
    for f in map.bounded_faces() {
        let vs = map.face_vertices(f);
        // stray clusters cut off at the carrier edge have their own outer faces
        if !vs.iter().all(|&v| main[v]) {
            continue;
        }
        if vs.len() < 3 {
            return Err(Error::Degenerate(format!("face {f} has degree {}", vs.len())));
        }
        face_index[f] = Some(faces.len());
        face_ids.push(f);
        faces.push(vs);
    }
    let mut cone_angle = vec![0.0; map.num_vertices()];
    for vs in &faces {
        let a = polygon_angle(vs.len());
        for &v in vs {
            cone_angle[v] += a;
        }
    }
    let boundary = (0..map.num_vertices()).map(|v| map.is_boundary_vertex(v)).collect();
    Ok(EquilateralSurface { map: map.clone(), faces, face_ids, face_index, cone_angle, boundary })
}

impl EquilateralSurface {
    pub fn num_vertices(&self) -> usize {
        self.map.num_vertices()
    }

    /// 2π minus the cone angle.
    pub fn curvature(&self, v: usize) -> f64 {
        TAU - self.cone_angle[v]
    }

    /// Corner positions of face `f` in its flat chart.
    pub fn chart(&self, f: usize) -> Vec<Pt> {
        polygon_chart(self.faces[f].len())
    }

    pub fn face_center(&self, f: usize) -> Pt {
        let c = self.chart(f);
        c.iter().fold(Pt::default(), |a, &b| a + b) / c.len() as f64
    }

    /// Position of the corner of `f` at vertex `v` (first occurrence).
    fn corner(&self, f: usize, v: usize) -> Option<usize> {
        self.faces[f].iter().position(|&x| x == v)
    }

    /// Shortest path length between a point of face `f` and a point of face
    /// `g` (chart coordinates), staying inside the two faces, which must share an edge.
    pub fn face_pair_distance(&self, f: usize, x: Pt, g: usize, y: Pt) -> Result<f64> {
        if f == g {
            return Ok(x.dist(y));
        }
        let hf = self.map.face_half_edges(self.face_ids[f]);
        let h = hf
            .iter()
            .copied()
            .find(|&h| self.map.face_of(h ^ 1) == self.face_ids[g])
            .ok_or_else(|| Error::Invalid(format!("faces {f} and {g} share no edge")))?;
        let cf = self.chart(f);
        let cg = self.chart(g);
        let kf = hf.iter().position(|&e| e == h).unwrap();
        let (a, b) = (cf[kf], cf[(kf + 1) % cf.len()]);
        // in g the same edge runs b -> a
        let hg = self.map.face_half_edges(self.face_ids[g]);
        let kg = hg.iter().position(|&e| e == h ^ 1).unwrap();
        let (gb, ga) = (cg[kg], cg[(kg + 1) % cg.len()]);
        // rigid motion taking (gb, ga) to (b, a)
        let rot = (a - b).arg() - (ga - gb).arg();
        let y2 = b + (y - gb).rotate(rot);
        let d = b - a;
        let denom = d.cross(y2 - x);
        if denom.abs() > 1e-15 {
            let t = (x - a).cross(y2 - x) / denom;
            if (0.0..=1.0).contains(&t) {
                return Ok(x.dist(y2));
            }
        }
        Ok((x.dist(a) + a.dist(y2)).min(x.dist(b) + b.dist(y2)))
    }

    /// Sum of kite areas around each vertex over the given faces.
    pub fn semi_flower_areas(&self, faces: &[usize]) -> BTreeMap<usize, f64> {
        let mut out = BTreeMap::new();
        for &f in faces {
            let p = self.faces[f].len();
            let share = polygon_area(p) / p as f64;
            for &v in &self.faces[f] {
                *out.entry(v).or_insert(0.0) += share;
            }
        }
        out
    }

    pub fn area(&self, faces: &[usize]) -> f64 {
        faces.iter().map(|&f| polygon_area(self.faces[f].len())).sum()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurfacePortion {
    /// Indices into the surface's face list, increasing.
    pub faces: Vec<usize>,
    /// Boundary loop, counter-clockwise.
    pub boundary: Vec<usize>,
    pub vertices: Vec<usize>,
    pub square: Option<Square>,
    pub a: f64,
    /// Vertex used to normalise maps of this portion.
    pub root: Option<usize>,
    pub diagnostic: Option<String>,
    #[serde(skip)]
    boundary_set: BTreeSet<usize>,
}

impl SurfacePortion {
    fn index_boundary(mut self) -> Self {
        self.boundary_set = self.boundary.iter().copied().collect();
        self
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str::<SurfacePortion>(s)?.index_boundary())
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    fn empty(square: Option<Square>, msg: String) -> Self {
        SurfacePortion {
            faces: Vec::new(),
            boundary: Vec::new(),
            vertices: Vec::new(),
            square,
            a: 0.0,
            root: None,
            diagnostic: Some(msg),
            boundary_set: BTreeSet::new(),
        }
    }

    pub fn is_interior(&self, v: usize) -> bool {
        self.vertices.binary_search(&v).is_ok() && !self.boundary_set.contains(&v)
    }

    /// Discrete Gauss-Bonnet: interior curvature plus boundary turning, minus 2π.
    pub fn gauss_bonnet_defect(&self, surface: &EquilateralSurface) -> f64 {
        let mut angle: BTreeMap<usize, f64> = BTreeMap::new();
        for &f in &self.faces {
            let a = polygon_angle(surface.faces[f].len());
            for &v in &surface.faces[f] {
                *angle.entry(v).or_default() += a;
            }
        }
        let on_boundary: BTreeSet<usize> = self.boundary.iter().copied().collect();
        let mut total = 0.0;
        for (&v, &a) in &angle {
            total += if on_boundary.contains(&v) { PI - a } else { TAU - a };
        }
        total - TAU
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Portion spanned by the given faces; errors unless it is a topological disk.
pub fn portion_from_faces(surface: &EquilateralSurface, faces: &[usize]) -> Result<SurfacePortion> {
    let mut faces: Vec<usize> = faces.to_vec();
    faces.sort_unstable();
    faces.dedup();
    if faces.is_empty() {
        return Err(Error::Invalid("no faces".into()));
    }
    let map = &surface.map;
    let mut inside = vec![false; map.num_faces()];
    for &f in &faces {
        inside[surface.face_ids[f]] = true;
    }
    let mut verts = BTreeSet::new();
    let mut edges = 0usize;
    let mut boundary_out: HashMap<usize, usize> = HashMap::new();
    for &f in &faces {
        for h in map.face_half_edges(surface.face_ids[f]) {
            verts.insert(map.origin(h));
            let other = inside[map.face_of(h ^ 1)];
            if !other {
                edges += 2;
                if boundary_out.insert(map.origin(h), h).is_some() {
                    return Err(Error::NotDiskTriangulation(format!("vertex {} is a pinch point", map.origin(h))));
                }
            } else {
                edges += 1;
            }
        }
    }
    let e = edges / 2;
    let euler = verts.len() as i64 - e as i64 + faces.len() as i64;
    if euler != 1 {
        return Err(Error::NotDiskTriangulation(format!("Euler characteristic {euler}")));
    }
    let start = *boundary_out.values().min().ok_or_else(|| Error::NotDiskTriangulation("no boundary".into()))?;
    let mut boundary = Vec::new();
    let mut h = start;
    loop {
        boundary.push(map.origin(h));
        h = boundary_out[&map.target(h)];
        if h == start {
            break;
        }
        if boundary.len() > boundary_out.len() {
            break;
        }
    }
    if boundary.len() != boundary_out.len() {
        return Err(Error::NotDiskTriangulation("boundary has several components".into()));
    }
    Ok(SurfacePortion {
        faces,
        boundary,
        vertices: verts.into_iter().collect(),
        square: None,
        a: 0.0,
        root: None,
        diagnostic: None,
        boundary_set: BTreeSet::new(),
    }
    .index_boundary())
}

/// Faces of M₀(S; a) together with the bounded complementary components,
/// or None if H(S̊^a) is empty or disconnected.
pub fn m_s_a_faces(config: &CellConfiguration, surface: &EquilateralSurface, s: &Square, a: f64) -> Result<Option<Vec<usize>>> {
    let inner = s.concentric(a);
    let core: BTreeSet<usize> = config.cells_meeting_square(&inner)?.into_iter().filter(|&(_, ar)| ar > 0.0).map(|(i, _)| i).collect();
    if core.is_empty() {
        return Ok(None);
    }
    // connectivity of H(S̊^a) in the map
    let first = *core.iter().next().unwrap();
    let mut seen = BTreeSet::from([first]);
    let mut stack = vec![first];
    while let Some(u) = stack.pop() {
        for w in surface.map.neighbors(u) {
            if core.contains(&w) && seen.insert(w) {
                stack.push(w);
            }
        }
    }
    if seen.len() != core.len() {
        return Ok(None);
    }
    let map = &surface.map;
    let nf = surface.faces.len();
    let mut in_m0 = vec![false; nf];
    for (f, vs) in surface.faces.iter().enumerate() {
        in_m0[f] = vs.iter().any(|v| core.contains(v));
    }
    // complement components; node nf stands for infinity (the outer face)
    let mut vert_in = vec![false; map.num_vertices()];
    for f in 0..nf {
        if in_m0[f] {
            for &v in &surface.faces[f] {
                vert_in[v] = true;
            }
        }
    }
    let node = |mf: usize| surface.face_index[mf].unwrap_or(nf);
    let mut uf = UnionFind::new(nf + 1);
    for h in (0..map.num_half_edges()).step_by(2) {
        let (f, g) = (node(map.face_of(h)), node(map.face_of(h ^ 1)));
        let f_in = f < nf && in_m0[f];
        let g_in = g < nf && in_m0[g];
        if !f_in && !g_in {
            uf.union(f, g);
        }
    }
    for v in 0..map.num_vertices() {
        if vert_in[v] {
            continue;
        }
        let ids: Vec<usize> = map.out_edges(v).iter().map(|&h| node(map.face_of(h))).collect();
        for w in ids.windows(2) {
            uf.union(w[0], w[1]);
        }
    }
    let outer = uf.find(nf);
    let faces = (0..nf).filter(|&f| in_m0[f] || uf.find(f) != outer).collect();
    Ok(Some(faces))
}

/// M(S): the largest M(S; a) on the grid a = i|S|/32 whose vertex cells all lie in S.
#[allow(non_snake_case)]
pub fn build_M_S(config: &CellConfiguration, surface: &EquilateralSurface, s: &Square) -> Result<SurfacePortion> {
    let mut notes = Vec::new();
    for i in (1..M_S_GRID).rev() {
        let a = i as f64 * s.side / M_S_GRID as f64;
        let Some(faces) = m_s_a_faces(config, surface, s, a)? else {
            notes.push(format!("a={a}: H(S̊^a) empty or disconnected"));
            continue;
        };
        let verts: BTreeSet<usize> = faces.iter().flat_map(|&f| surface.faces[f].iter().copied()).collect();
        if let Some(&bad) = verts.iter().find(|&&v| {
            let b = config.cells[v].bbox;
            !(s.contains(b.min) && s.contains(b.max))
        }) {
            notes.push(format!("a={a}: cell {bad} leaves S"));
            continue;
        }
        match portion_from_faces(surface, &faces) {
            Ok(mut p) => {
                p.square = Some(*s);
                p.a = a;
                p.root = Some(portion_root(config, &p, s.center()));
                return Ok(p);
            }
            Err(e) => notes.push(format!("a={a}: {e}")),
        }
    }
    let last = notes.first().cloned().unwrap_or_default();
    Ok(SurfacePortion::empty(Some(*s), format!("no valid a on the grid ({last})")))
}

/// Vertex whose cell contains `z`, or the one with the nearest centroid.
fn portion_root(config: &CellConfiguration, p: &SurfacePortion, z: Pt) -> usize {
    if let Some(c) = config.cell_containing(z) {
        if p.is_interior(c) {
            return c;
        }
    }
    let mut best = (f64::INFINITY, p.vertices[0]);
    for &v in &p.vertices {
        let d = config.cells[v].centroid.dist(z);
        if p.is_interior(v) && d < best.0 {
            best = (d, v);
        }
    }
    best.1
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }
    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a != b {
            self.0[a.max(b)] = a.min(b);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Corner {
    Vertex(usize),
    Center(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Key {
    Corner(Corner),
    Edge(Corner, Corner, usize),
    Inner(usize, usize, usize),
}

/// Flat triangle of the subdivision before refinement: a whole triangular
/// face, or one fan triangle of a larger face.
#[derive(Clone, Debug)]
pub struct MacroTriangle {
    pub face: usize,
    pub corners: [Pt; 3],
    up: Vec<usize>,
    down: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Subdivision {
    pub n: usize,
    pub tri: HalfEdgeMap,
    pub triangles: Vec<[usize; 3]>,
    /// Surface face of each triangle.
    pub tri_face: Vec<usize>,
    /// Chart coordinates of each triangle's corners.
    pub tri_local: Vec<[Pt; 3]>,
    /// A (face, chart point) representative of each vertex.
    pub vertex_home: Vec<(usize, Pt)>,
    /// Surface vertex of each subdivision vertex, if any.
    pub original: Vec<Option<usize>>,
    pub index_of: BTreeMap<usize, usize>,
    pub macros: Vec<MacroTriangle>,
    face_macros: Vec<Vec<usize>>,
}

/// Refines each face: triangles into n² triangles of side 1/n, larger faces
/// first into a fan around the centre.
pub fn subdivide(surface: &EquilateralSurface, portion: &SurfacePortion, n: usize) -> Result<Subdivision> {
    if n == 0 {
        return Err(Error::Invalid("subdivision level must be ≥ 1".into()));
    }
    let estimate: usize = portion
        .faces
        .iter()
        .map(|&f| {
            let p = surface.faces[f].len();
            if p == 3 {
                n * n / 2 + n
            } else {
                p * (n * n / 2 + n)
            }
        })
        .sum();
    if estimate > MAX_SUBDIVISION_VERTICES {
        return Err(Error::Invalid(format!("subdivision would have about {estimate} vertices")));
    }
    let mut keys: HashMap<Key, usize> = HashMap::new();
    let mut vertex_home = Vec::new();
    let mut original = Vec::new();
    let mut triangles = Vec::new();
    let mut tri_face = Vec::new();
    let mut tri_local = Vec::new();
    let mut macros: Vec<MacroTriangle> = Vec::new();
    let mut face_macros = vec![Vec::new(); surface.faces.len()];
    for &f in &portion.faces {
        let vs = &surface.faces[f];
        let chart = surface.chart(f);
        let mut pieces: Vec<([Corner; 3], [Pt; 3])> = Vec::new();
        if vs.len() == 3 {
            pieces.push((
                [Corner::Vertex(vs[0]), Corner::Vertex(vs[1]), Corner::Vertex(vs[2])],
                [chart[0], chart[1], chart[2]],
            ));
        } else {
            let c = surface.face_center(f);
            for k in 0..vs.len() {
                let k1 = (k + 1) % vs.len();
                pieces.push(([Corner::Center(f), Corner::Vertex(vs[k]), Corner::Vertex(vs[k1])], [c, chart[k], chart[k1]]));
            }
        }
        for (cs, ps) in pieces {
            let mid = macros.len();
            let mut grid = vec![usize::MAX; (n + 1) * (n + 1)];
            for i in 0..=n {
                for j in 0..=(n - i) {
                    let key = grid_key(&cs, mid, n, i, j);
                    let local = ps[0] + (ps[1] - ps[0]) * (i as f64 / n as f64) + (ps[2] - ps[0]) * (j as f64 / n as f64);
                    let id = *keys.entry(key).or_insert_with(|| {
                        vertex_home.push((f, local));
                        original.push(match key {
                            Key::Corner(Corner::Vertex(v)) => Some(v),
                            _ => None,
                        });
                        vertex_home.len() - 1
                    });
                    grid[i * (n + 1) + j] = id;
                }
            }
            let g = |i: usize, j: usize| grid[i * (n + 1) + j];
            let loc = |i: usize, j: usize| {
                ps[0] + (ps[1] - ps[0]) * (i as f64 / n as f64) + (ps[2] - ps[0]) * (j as f64 / n as f64)
            };
            let mut up = vec![usize::MAX; n * n];
            let mut down = vec![usize::MAX; n * n];
            for i in 0..n {
                for j in 0..(n - i) {
                    up[i * n + j] = triangles.len();
                    triangles.push([g(i, j), g(i + 1, j), g(i, j + 1)]);
                    tri_local.push([loc(i, j), loc(i + 1, j), loc(i, j + 1)]);
                    tri_face.push(f);
                    if i + j + 2 <= n {
                        down[i * n + j] = triangles.len();
                        triangles.push([g(i + 1, j), g(i + 1, j + 1), g(i, j + 1)]);
                        tri_local.push([loc(i + 1, j), loc(i + 1, j + 1), loc(i, j + 1)]);
                        tri_face.push(f);
                    }
                }
            }
            face_macros[f].push(mid);
            macros.push(MacroTriangle { face: f, corners: ps, up, down });
        }
    }
    let tri = HalfEdgeMap::from_triangles(vertex_home.len(), &triangles)?;
    let index_of = original.iter().enumerate().filter_map(|(i, o)| o.map(|v| (v, i))).collect();
    Ok(Subdivision { n, tri, triangles, tri_face, tri_local, vertex_home, original, index_of, macros, face_macros })
}

fn grid_key(cs: &[Corner; 3], mid: usize, n: usize, i: usize, j: usize) -> Key {
    let edge = |a: Corner, b: Corner, t: usize| {
        if t == 0 {
            Key::Corner(a)
        } else if t == n {
            Key::Corner(b)
        } else if a < b {
            Key::Edge(a, b, t)
        } else {
            Key::Edge(b, a, n - t)
        }
    };
    if j == 0 {
        edge(cs[0], cs[1], i)
    } else if i == 0 {
        edge(cs[0], cs[2], j)
    } else if i + j == n {
        edge(cs[1], cs[2], j)
    } else {
        Key::Inner(mid, i, j)
    }
}

impl Subdivision {
    pub fn num_vertices(&self) -> usize {
        self.vertex_home.len()
    }

    /// Locates a chart point of face `f`: (triangle, barycentric weights).
    pub fn locate(&self, f: usize, x: Pt) -> Option<(usize, [f64; 3])> {
        let n = self.n as f64;
        let mut best: Option<(f64, usize, [f64; 3])> = None;
        for &m in self.face_macros.get(f)? {
            let mac = &self.macros[m];
            let w = barycentric(mac.corners, x);
            let worst = w.iter().cloned().fold(f64::INFINITY, f64::min);
            if best.as_ref().is_none_or(|b| worst > b.0) {
                let (s, t) = (w[1] * n, w[2] * n);
                let nn = self.n;
                let mut i = (s.floor().max(0.0) as usize).min(nn - 1);
                let mut j = (t.floor().max(0.0) as usize).min(nn - 1);
                while i + j > nn - 1 {
                    if i >= j {
                        i -= 1;
                    } else {
                        j -= 1;
                    }
                }
                let (fs, ft) = (s - i as f64, t - j as f64);
                let t_id = if fs + ft > 1.0 && i + j + 2 <= nn { mac.down[i * nn + j] } else { mac.up[i * nn + j] };
                let bw = barycentric(self.tri_local[t_id], x);
                best = Some((worst, t_id, bw));
            }
        }
        best.map(|(_, t, w)| (t, w))
    }

    /// Linear interpolation of per-vertex values at a chart point.
    pub fn eval(&self, values: &[Pt], f: usize, x: Pt) -> Option<Pt> {
        let (t, w) = self.locate(f, x)?;
        let tr = self.triangles[t];
        Some(values[tr[0]] * w[0] + values[tr[1]] * w[1] + values[tr[2]] * w[2])
    }

    pub fn vertex_of(&self, v: usize) -> Option<usize> {
        self.index_of.get(&v).copied()
    }
}

pub fn barycentric(c: [Pt; 3], x: Pt) -> [f64; 3] {
    let d = orient(c[0], c[1], c[2]);
    let w1 = orient(c[0], x, c[2]) / d;
    let w2 = orient(c[0], c[1], x) / d;
    [1.0 - w1 - w2, w1, w2]
}

#[derive(Clone, Debug)]
pub struct DiscreteConformalMap {
    pub sub: Subdivision,
    pub images: Vec<Pt>,
    pub radii: Vec<f64>,
    /// Target disk radius |S|.
    pub radius: f64,
    /// Subdivision vertex sent to 0.
    pub root: usize,
    pub residual: f64,
}

/// Maximal circle packing of the n-subdivision in the unit disk, scaled to
/// radius |S|, with the portion root at 0 and its smallest-id neighbour on
/// the positive real axis.
pub fn uniformize_approx(
    surface: &EquilateralSurface,
    portion: &SurfacePortion,
    n: usize,
    opts: &SolveOptions,
) -> Result<DiscreteConformalMap> {
    let root_v = portion.root.ok_or_else(|| Error::Invalid("portion has no root".into()))?;
    let radius = portion.square.map(|s| s.side).unwrap_or(1.0);
    let sub = subdivide(surface, portion, n)?;
    let root = sub.vertex_of(root_v).ok_or_else(|| Error::Invalid("root not in the portion".into()))?;
    let radii = circle_pack::solve_radii(&sub.tri, &BoundaryCondition::MaximalInDisk, opts)?;
    let packing = circle_pack::layout(&sub.tri, &radii, root, None)?;
    let anchor = surface
        .map
        .neighbors(root_v)
        .filter(|w| sub.vertex_of(*w).is_some())
        .min()
        .ok_or_else(|| Error::Invalid("root has no neighbour in the portion".into()))?;
    let theta = -packing.centers[sub.vertex_of(anchor).unwrap()].arg();
    let images = packing.centers.iter().map(|&c| c.rotate(theta) * radius).collect();
    let radii_out = packing.radii.iter().map(|&r| r * radius).collect();
    Ok(DiscreteConformalMap { sub, images, radii: radii_out, radius, root, residual: radii.residual })
}

impl DiscreteConformalMap {
    pub fn image_of(&self, v: usize) -> Option<Pt> {
        self.sub.vertex_of(v).map(|i| self.images[i])
    }

    /// Triangles whose image has non-positive signed area.
    pub fn orientation_violations(&self) -> usize {
        self.sub
            .triangles
            .iter()
            .filter(|t| orient(self.images[t[0]], self.images[t[1]], self.images[t[2]]) <= 0.0)
            .count()
    }

    /// |image(root)| and max |image| / radius − 1.
    pub fn normalization_error(&self) -> (f64, f64) {
        let m = self.images.iter().map(|p| p.norm()).fold(0.0, f64::max);
        (self.images[self.root].norm(), m / self.radius - 1.0)
    }

    /// Sup distance between images of shared surface vertices.
    pub fn displacement(&self, other: &DiscreteConformalMap) -> f64 {
        self.displacement_where(other, |_| true)
    }

    /// Max displacement over the surface vertices accepted by `keep`.
    pub fn displacement_where(&self, other: &DiscreteConformalMap, keep: impl Fn(usize) -> bool) -> f64 {
        self.sub
            .index_of
            .iter()
            .filter(|(&v, _)| keep(v))
            .filter_map(|(&v, &i)| other.image_of(v).map(|q| self.images[i].dist(q)))
            .fold(0.0, f64::max)
    }

    /// Per surface vertex image table.
    pub fn to_table(&self) -> String {
        let mut s = String::from("vertex x y\n");
        for (&v, &i) in &self.sub.index_of {
            s.push_str(&format!("{v} {:?} {:?}\n", self.images[i].x, self.images[i].y));
        }
        s
    }
}

/// Ordered image of the boundary of P_v (interior vertices), sampled on each
/// bisector segment.
pub fn semi_flower_image(surface: &EquilateralSurface, sub: &Subdivision, values: &[Pt], v: usize) -> Result<Vec<Pt>> {
    let map = &surface.map;
    let first = *map.out_edges(v).first().ok_or_else(|| Error::Invalid("isolated vertex".into()))?;
    let samples = 2 * sub.n + 2;
    let mut out = Vec::new();
    let mut h_out = first;
    loop {
        let mf = map.face_of(h_out);
        let f = surface.face_index[mf].filter(|&f| !sub.face_macros[f].is_empty()).ok_or_else(|| {
            Error::DomainTooSmall(format!("semi-flower of {v} is clipped by the boundary"))
        })?;
        let h_in = map.prev(h_out);
        let hs = map.face_half_edges(mf);
        let chart = surface.chart(f);
        let p = chart.len();
        let ko = hs.iter().position(|&e| e == h_out).unwrap();
        let ki = hs.iter().position(|&e| e == h_in).unwrap();
        let m_out = (chart[ko] + chart[(ko + 1) % p]) * 0.5;
        let m_in = (chart[ki] + chart[(ki + 1) % p]) * 0.5;
        let c = surface.face_center(f);
        for (a, b) in [(m_out, c), (c, m_in)] {
            for s in 0..samples {
                let x = a.lerp(b, s as f64 / samples as f64);
                out.push(sub.eval(values, f, x).ok_or_else(|| Error::Invalid("point outside the subdivision".into()))?);
            }
        }
        h_out = h_in ^ 1;
        if h_out == first {
            break;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SemiFlowerGeometry {
    pub vertex: usize,
    pub outradius: f64,
    pub inradius: f64,
    pub degree: usize,
}

impl SemiFlowerGeometry {
    /// (outradius / inradius) / deg².
    pub fn koebe_ratio(&self) -> f64 {
        self.outradius / self.inradius / (self.degree * self.degree) as f64
    }
}

/// Out- and in-radius of φ(P_v) about φ(v); the inradius is 0 if φ(v) is not enclosed.
pub fn semi_flower_geometry(
    surface: &EquilateralSurface,
    portion: &SurfacePortion,
    map: &DiscreteConformalMap,
    v: usize,
) -> Result<SemiFlowerGeometry> {
    if !portion.is_interior(v) {
        return Err(Error::DomainTooSmall(format!("vertex {v} is not interior to the portion")));
    }
    let poly = semi_flower_image(surface, &map.sub, &map.images, v)?;
    let z = map.image_of(v).unwrap();
    let outradius = poly.iter().map(|p| p.dist(z)).fold(0.0, f64::max);
    let n = poly.len();
    let mut inradius = (0..n).map(|i| point_segment_distance(z, poly[i], poly[(i + 1) % n])).fold(f64::INFINITY, f64::min);
    if winding(&poly, z) == 0 {
        inradius = 0.0;
    }
    Ok(SemiFlowerGeometry { vertex: v, outradius, inradius, degree: surface.map.degree(v) })
}

/// Semi-flower geometry of every interior vertex whose flower lies in the portion.
pub fn koebe_scan(surface: &EquilateralSurface, portion: &SurfacePortion, map: &DiscreteConformalMap) -> Vec<SemiFlowerGeometry> {
    portion
        .vertices
        .par_iter()
        .filter_map(|&v| semi_flower_geometry(surface, portion, map, v).ok())
        .collect()
}

fn winding(poly: &[Pt], z: Pt) -> i32 {
    let mut w = 0;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if a.y <= z.y {
            if b.y > z.y && orient(a, b, z) > 0.0 {
                w += 1;
            }
        } else if b.y <= z.y && orient(a, b, z) < 0.0 {
            w -= 1;
        }
    }
    w
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LengthAreaRow {
    /// "square" for the union over cells of a square, "ball" for the union of
    /// cells whose semi-flower image meets a ball.
    pub kind: String,
    pub delta: f64,
    pub sample: usize,
    pub center: Pt,
    pub normalized_diameter: f64,
    /// (−log δ)^{-1/2} or (log(1−λ) − log 16δ)^{-1/2}.
    pub scale: f64,
}

/// Image points of P_v restricted to the portion (vertex image included).
fn flower_points(surface: &EquilateralSurface, portion: &SurfacePortion, map: &DiscreteConformalMap, v: usize) -> Vec<Pt> {
    let mut pts = vec![map.image_of(v).unwrap()];
    if portion.is_interior(v) {
        if let Ok(p) = semi_flower_image(surface, &map.sub, &map.images, v) {
            pts.extend(p);
            return pts;
        }
    }
    // boundary vertex: kites of the faces present
    for &mf in surface.map.out_edges(v).iter().map(|h| surface.map.face_of(*h)).collect::<Vec<_>>().iter() {
        if let Some(f) = surface.face_index[mf] {
            if map.sub.face_macros[f].is_empty() {
                continue;
            }
            let chart = surface.chart(f);
            let p = chart.len();
            let Some(k) = surface.corner(f, v) else { continue };
            let c = surface.face_center(f);
            for x in [(chart[k] + chart[(k + 1) % p]) * 0.5, c, (chart[k] + chart[(k + p - 1) % p]) * 0.5] {
                if let Some(y) = map.sub.eval(&map.images, f, x) {
                    pts.push(y);
                }
            }
        }
    }
    pts
}

fn hull_diameter(points: &[Pt]) -> f64 {
    diameter(&convex_hull(points))
}

/// Length-area tables: squares of side δ|S| centred at `centers`, and balls
/// of radius δ|S| about image points λ|S|·(unit directions).
pub fn length_area_diagnostic(
    config: &CellConfiguration,
    surface: &EquilateralSurface,
    portion: &SurfacePortion,
    map: &DiscreteConformalMap,
    deltas: &[f64],
    centers: &[Pt],
    lambda: f64,
) -> Result<Vec<LengthAreaRow>> {
    let s = portion.square.ok_or_else(|| Error::Invalid("portion has no square".into()))?;
    let side = s.side;
    let in_portion: BTreeSet<usize> = portion.vertices.iter().copied().collect();
    let flowers: BTreeMap<usize, Vec<Pt>> =
        portion.vertices.par_iter().map(|&v| (v, flower_points(surface, portion, map, v))).collect();
    let mut rows = Vec::new();
    for &delta in deltas {
        for (k, &c) in centers.iter().enumerate() {
            let sq = Square::centered(c, delta * side);
            if !s.contains_square(&sq) {
                return Err(Error::InsufficientWindow(format!("square at {c:?} of side {} leaves S", sq.side)));
            }
            let cells = config.cells_meeting_square(&sq)?;
            let pts: Vec<Pt> =
                cells.iter().filter(|(i, _)| in_portion.contains(i)).flat_map(|(i, _)| flowers[i].iter().copied()).collect();
            rows.push(LengthAreaRow {
                kind: "square".into(),
                delta,
                sample: k,
                center: c,
                normalized_diameter: hull_diameter(&pts) / side,
                scale: (-delta.ln()).powf(-0.5),
            });
        }
        let r = delta * side;
        let dirs = centers.len().max(1);
        for k in 0..dirs {
            let z = Pt::polar(lambda * side, TAU * k as f64 / dirs as f64);
            let mut pts = Vec::new();
            for (&v, fl) in &flowers {
                if fl.iter().any(|p| p.dist(z) <= r) || winding(&fl[1..], z) != 0 {
                    for piece in &config.cells[v].pieces {
                        pts.extend_from_slice(piece);
                    }
                }
            }
            let arg = (1.0 - lambda).ln() - (16.0 * delta).ln();
            rows.push(LengthAreaRow {
                kind: "ball".into(),
                delta,
                sample: k,
                center: z,
                normalized_diameter: hull_diameter(&pts) / side,
                scale: if arg > 0.0 { arg.powf(-0.5) } else { f64::NAN },
            });
        }
    }
    Ok(rows)
}

/// Flat equilateral surface: the triangular lattice patch of `m` rings.
pub fn hexagonal_surface(m: usize) -> Result<(EquilateralSurface, SurfacePortion)> {
    let (map, _) = crate::generators::triangular_patch(m);
    let surface = build_surface(&map)?;
    let faces: Vec<usize> = (0..surface.faces.len()).collect();
    let mut p = portion_from_faces(&surface, &faces)?;
    p.root = Some(0);
    p.square = Some(Square::centered(Pt::default(), 2.0 * m as f64));
    Ok((surface, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{lattice_config, poisson_voronoi, GeneratorSpec, LatticeKind};

    fn single_triangle() -> EquilateralSurface {
        let map = HalfEdgeMap::from_triangles(3, &[[0, 1, 2]]).unwrap();
        build_surface(&map).unwrap()
    }

    #[test]
    fn cone_angles() {
        let s = single_triangle();
        assert_eq!(s.faces.len(), 1);
        for v in 0..3 {
            assert!((s.cone_angle[v] - PI / 3.0).abs() < 1e-15);
        }
        let (hex, _) = hexagonal_surface(2).unwrap();
        assert!((hex.cone_angle[0] - TAU).abs() < 1e-12);
    }

    #[test]
    fn degree_seven_negative_curvature() {
        let k = 7;
        let mut tris = Vec::new();
        for i in 0..k {
            tris.push([0, 1 + i, 1 + (i + 1) % k]);
        }
        let map = HalfEdgeMap::from_triangles(k + 1, &tris).unwrap();
        let s = build_surface(&map).unwrap();
        assert!((s.cone_angle[0] - 7.0 * PI / 3.0).abs() < 1e-12);
        assert!(s.curvature(0) < 0.0);
    }

    #[test]
    fn loops_rejected() {
        let map = HalfEdgeMap::from_rotations(&[vec![0, 0, 1], vec![0]]);
        if let Ok(m) = map {
            assert!(build_surface(&m).is_err());
        }
    }

    #[test]
    fn subdivision_counts() {
        let s = single_triangle();
        let p = portion_from_faces(&s, &[0]).unwrap();
        assert_eq!(subdivide(&s, &p, 1).unwrap().triangles.len(), 1);
        assert_eq!(subdivide(&s, &p, 2).unwrap().triangles.len(), 4);
        let (hex, hp) = hexagonal_surface(3).unwrap();
        let sub = subdivide(&hex, &hp, 4).unwrap();
        assert_eq!(sub.triangles.len(), 16 * hp.faces.len());
        sub.tri.require_disk_triangulation().unwrap();
    }

    #[test]
    fn gauss_bonnet_and_partition() {
        let (hex, hp) = hexagonal_surface(3).unwrap();
        assert!(hp.gauss_bonnet_defect(&hex).abs() < 1e-9);
        let areas = hex.semi_flower_areas(&hp.faces);
        let total: f64 = areas.values().sum();
        assert!((total - hex.area(&hp.faces)).abs() < 1e-9);
    }

    #[test]
    fn face_pair_distance_unfolds() {
        let (hex, _) = hexagonal_surface(1).unwrap();
        // two faces sharing an edge: centres are 1/√3 apart when unfolded
        let map = &hex.map;
        let h = map.out_edges(0)[0];
        let (f, g) = (hex.face_index[map.face_of(h)].unwrap(), hex.face_index[map.face_of(h ^ 1)].unwrap());
        let d = hex.face_pair_distance(f, hex.face_center(f), g, hex.face_center(g)).unwrap();
        assert!((d - 1.0 / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn triangle_uniformization_is_symmetric() {
        // one triangle subdivided: rotating the corner labels permutes the images
        let s = single_triangle();
        let mut p = portion_from_faces(&s, &[0]).unwrap();
        let n = 6;
        let sub = subdivide(&s, &p, n).unwrap();
        // root at the centroid grid vertex
        let c = (0..sub.num_vertices()).find(|&i| sub.vertex_home[i].1.dist(s.face_center(0)) < 1e-12).unwrap();
        let radii = circle_pack::solve_radii(&sub.tri, &BoundaryCondition::MaximalInDisk, &SolveOptions::default()).unwrap();
        let pk = circle_pack::layout(&sub.tri, &radii, c, None).unwrap();
        let corners: Vec<Pt> = (0..3).map(|v| pk.centers[sub.vertex_of(v).unwrap()]).collect();
        let d: Vec<f64> = corners.iter().map(|q| q.norm()).collect();
        assert!((d[0] - d[1]).abs() < 1e-8 && (d[1] - d[2]).abs() < 1e-8);
        let ang = (corners[1].arg() - corners[0].arg()).rem_euclid(TAU);
        assert!((ang - TAU / 3.0).abs() < 1e-8);
        p.root = Some(0);
    }

    #[test]
    fn hexagon_map_normalised_and_oriented() {
        let (hex, hp) = hexagonal_surface(4).unwrap();
        let m = uniformize_approx(&hex, &hp, 2, &SolveOptions::default()).unwrap();
        let (r0, over) = m.normalization_error();
        assert!(r0 < 1e-12 * m.radius);
        assert!(over < 1e-9);
        assert_eq!(m.orientation_violations(), 0);
        let g = semi_flower_geometry(&hex, &hp, &m, 0).unwrap();
        assert!(g.inradius > 0.0);
        assert!(g.outradius / g.inradius <= 2.0 * 2.0 / 3f64.sqrt());
    }

    #[test]
    fn lattice_m_s_is_disk() {
        let config = lattice_config(LatticeKind::Triangular, 40.0);
        let surface = build_surface(&config.map).unwrap();
        let s = Square::centered(Pt::default(), 20.0);
        let p = build_M_S(&config, &surface, &s).unwrap();
        assert!(!p.is_empty(), "{:?}", p.diagnostic);
        assert!(p.gauss_bonnet_defect(&surface).abs() < 1e-9);
        for &v in &p.vertices {
            let b = config.cells[v].bbox;
            assert!(s.contains(b.min) && s.contains(b.max));
        }
        let tiny = build_M_S(&config, &surface, &Square::centered(Pt::default(), 0.5)).unwrap();
        assert!(tiny.is_empty() && tiny.diagnostic.is_some());
    }

    #[test]
    fn voronoi_m_s_inclusion() {
        let config = poisson_voronoi(&GeneratorSpec::voronoi(1.0, 112.0, 3)).unwrap();
        let surface = build_surface(&config.map).unwrap();
        let s = Square::centered(Pt::default(), 96.0);
        let p = build_M_S(&config, &surface, &s).unwrap();
        assert!(!p.is_empty(), "{:?}", p.diagnostic);
        assert!(p.a >= 0.9 * s.side, "a = {}", p.a);
        let inner = m_s_a_faces(&config, &surface, &s, 0.9 * s.side).unwrap().unwrap();
        let all: BTreeSet<usize> = p.faces.iter().copied().collect();
        assert!(inner.iter().all(|f| all.contains(f)));
    }
}
