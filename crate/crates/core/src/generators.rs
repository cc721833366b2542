//! Example cell configurations: Poisson-Voronoi, hexagonal percolation and lattices.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::cell_config::{Cell, CellConfiguration, GeneratorMeta};
use crate::circle_pack::Truncation;
use crate::delaunay::triangulate;
use crate::error::{Error, Result};
use crate::geometry::{circumcenter, pt, Pt, Square};
use crate::planar_map::{compact_triangles, disk_core, HalfEdgeMap};

/// Bond percolation threshold of the triangular lattice, 2 sin(π/18).
pub const P_CRITICAL: f64 = 0.347_296_355_333_860_7;

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LatticeKind {
    /// Hexagonal cells; the associated map is the triangular lattice.
    #[default]
    Triangular,
    UnitSquare,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    #[default]
    PoissonVoronoi,
    HexPercolation,
    Lattice,
}

fn one() -> f64 {
    1.0
}
fn default_p() -> f64 {
    0.2
}
fn default_window() -> f64 {
    64.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    #[serde(default)]
    pub kind: GeneratorKind,
    /// Poisson intensity λ.
    #[serde(default = "one")]
    pub intensity: f64,
    /// Bond probability for percolation.
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub lattice: LatticeKind,
    /// Side of the window square centred at the origin.
    #[serde(default = "default_window")]
    pub window: f64,
    /// Buffer width; defaults to 10 λ^{-1/2} (Voronoi) or 10 hexagons.
    #[serde(default)]
    pub buffer: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub collapse: bool,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            kind: GeneratorKind::PoissonVoronoi,
            intensity: 1.0,
            p: 0.2,
            lattice: LatticeKind::Triangular,
            window: 64.0,
            buffer: None,
            seed: 0,
            collapse: false,
        }
    }
}

impl GeneratorSpec {
    pub fn voronoi(intensity: f64, window: f64, seed: u64) -> Self {
        GeneratorSpec { kind: GeneratorKind::PoissonVoronoi, intensity, window, seed, ..Default::default() }
    }

    pub fn percolation(p: f64, window: f64, seed: u64, collapse: bool) -> Self {
        GeneratorSpec { kind: GeneratorKind::HexPercolation, p, window, seed, collapse, ..Default::default() }
    }

    fn cell_scale(&self) -> f64 {
        match self.kind {
            GeneratorKind::PoissonVoronoi => self.intensity.powf(-0.5),
            _ => 1.0,
        }
    }

    pub fn buffer_width(&self) -> f64 {
        self.buffer.unwrap_or(10.0 * self.cell_scale())
    }

    pub fn check(&self) -> Result<()> {
        if !(self.window > 0.0 && self.window.is_finite()) {
            return Err(Error::Config("window must be positive".into()));
        }
        match self.kind {
            GeneratorKind::PoissonVoronoi if !(self.intensity > 0.0 && self.intensity.is_finite()) => {
                return Err(Error::Config("intensity must be positive".into()))
            }
            GeneratorKind::HexPercolation if !(0.0..P_CRITICAL).contains(&self.p) => {
                return Err(Error::Config(format!("p must lie in [0, {P_CRITICAL:.4}) (subcritical)")))
            }
            _ => {}
        }
        if self.kind != GeneratorKind::Lattice && self.buffer_width() < 4.0 * self.cell_scale() {
            return Err(Error::Config("buffer must be at least 4 expected cell diameters".into()));
        }
        Ok(())
    }
}

pub fn generate(spec: &GeneratorSpec) -> Result<CellConfiguration> {
    spec.check()?;
    match spec.kind {
        GeneratorKind::PoissonVoronoi => poisson_voronoi(spec),
        GeneratorKind::HexPercolation => hex_percolation(spec),
        GeneratorKind::Lattice => Ok(lattice_config(spec.lattice, spec.window)),
    }
}

fn meta(spec: &GeneratorSpec, kind: &str) -> GeneratorMeta {
    let mut params = BTreeMap::new();
    params.insert("window".to_string(), spec.window);
    params.insert("buffer".to_string(), spec.buffer_width());
    match spec.kind {
        GeneratorKind::PoissonVoronoi => {
            params.insert("intensity".to_string(), spec.intensity);
        }
        GeneratorKind::HexPercolation => {
            params.insert("p".to_string(), spec.p);
            params.insert("collapse".to_string(), if spec.collapse { 1.0 } else { 0.0 });
        }
        GeneratorKind::Lattice => {}
    }
    GeneratorMeta { kind: kind.to_string(), seed: spec.seed, params }
}

/// Poisson points on `region`, sampled tile by tile on a fixed grid so that
/// enlarging the region leaves the points of the smaller one unchanged.
pub fn poisson_points(intensity: f64, region: &Square, seed: u64) -> Vec<Pt> {
    let t = 4.0 / intensity.sqrt();
    let lo = |v: f64| (v / t).floor() as i64;
    let hi = |v: f64| (v / t).ceil() as i64;
    let (i0, i1, j0, j1) = (lo(region.min.x), hi(region.max().x), lo(region.min.y), hi(region.max().y));
    let poisson = Poisson::new(intensity * t * t).expect("positive mean");
    let mut out = Vec::new();
    for j in j0..j1 {
        for i in i0..i1 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((i as i32 as u32 as u64) << 32) | (j as i32 as u32 as u64));
            let n = poisson.sample(&mut rng) as usize;
            for _ in 0..n {
                let p = pt((i as f64 + rng.random::<f64>()) * t, (j as f64 + rng.random::<f64>()) * t);
                if region.contains(p) {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Voronoi tessellation of a Poisson process (window centred at the origin).
pub fn poisson_voronoi(spec: &GeneratorSpec) -> Result<CellConfiguration> {
    spec.check()?;
    let window = Square::centered(Pt::default(), spec.window);
    let region = window.expand(spec.buffer_width());
    let base = poisson_points(spec.intensity, &region, spec.seed);
    const BUDGET: u64 = 8;
    let mut last_err = None;
    for attempt in 0..BUDGET {
        let points = if attempt == 0 {
            base.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(attempt)));
            let eps = 1e-9 * spec.cell_scale();
            base.iter().map(|&p| p + pt(eps * (rng.random::<f64>() - 0.5), eps * (rng.random::<f64>() - 0.5))).collect()
        };
        match triangulate(&points) {
            Ok(d) if d.cocircular_edges == 0 => return voronoi_from_delaunay(spec, &window, &region, &points, &d.triangles),
            Ok(d) => last_err = Some(Error::Degenerate(format!("{} cocircular edges", d.cocircular_edges))),
            Err(e) => last_err = Some(e),
        }
    }
    Err(Error::Degenerate(format!(
        "perturbation budget exhausted: {}",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

fn voronoi_from_delaunay(
    spec: &GeneratorSpec,
    window: &Square,
    region: &Square,
    points: &[Pt],
    tris: &[[usize; 3]],
) -> Result<CellConfiguration> {
    let n = points.len();
    let centers: Vec<Pt> = tris.iter().map(|t| circumcenter(points[t[0]], points[t[1]], points[t[2]])).collect();
    let inside: Vec<bool> = tris
        .iter()
        .zip(&centers)
        .map(|(t, &c)| {
            let r = c.dist(points[t[0]]);
            let m = region.min;
            let x = region.max();
            c.x - r >= m.x && c.y - r >= m.y && c.x + r <= x.x && c.y + r <= x.y
        })
        .collect();
    // fan around each vertex: b -> (c, triangle) for CCW triangles (v, b, c)
    let mut fans: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); n];
    for (t, tri) in tris.iter().enumerate() {
        for k in 0..3 {
            fans[tri[k]].push((tri[(k + 1) % 3], tri[(k + 2) % 3], t));
        }
    }
    let mut ring: Vec<Option<Vec<(usize, usize)>>> = vec![None; n];
    for v in 0..n {
        let f = &fans[v];
        if f.len() < 3 || f.iter().any(|&(_, _, t)| !inside[t]) {
            continue;
        }
        let succ: HashMap<usize, (usize, usize)> = f.iter().map(|&(b, c, t)| (b, (c, t))).collect();
        let start = f.iter().map(|x| x.0).min().unwrap();
        let mut order = Vec::with_capacity(f.len());
        let mut b = start;
        loop {
            let Some(&(c, t)) = succ.get(&b) else { break };
            order.push((b, t));
            b = c;
            if b == start || order.len() > f.len() {
                break;
            }
        }
        if b == start && order.len() == f.len() {
            ring[v] = Some(order);
        }
    }
    let mut id = vec![usize::MAX; n];
    let mut kept = Vec::new();
    for v in 0..n {
        if ring[v].is_some() {
            id[v] = kept.len();
            kept.push(v);
        }
    }
    let mut cells = Vec::with_capacity(kept.len());
    let mut rotations = Vec::with_capacity(kept.len());
    let mut complete = Vec::with_capacity(kept.len());
    for (i, &v) in kept.iter().enumerate() {
        let order = ring[v].as_ref().unwrap();
        let poly: Vec<Pt> = order.iter().map(|&(_, t)| centers[t]).collect();
        cells.push(Cell::new(i, vec![poly], Some(points[v])));
        // neighbour b sits between the triangles before and after it
        rotations.push(order.iter().filter(|&&(b, _)| id[b] != usize::MAX).map(|&(b, _)| id[b]).collect::<Vec<_>>());
        complete.push(order.iter().all(|&(b, _)| id[b] != usize::MAX));
    }
    let map = HalfEdgeMap::from_rotations(&rotations)?;
    let config = CellConfiguration::new(cells, map, *window, complete, meta(spec, "poisson-voronoi"))?;
    let bb = crate::geometry::BBox::of_square(window);
    let covered: f64 = config.cells_in_bbox(&bb).iter().map(|&i| config.cells[i].area_in_square(window)).sum();
    if (covered - window.area()).abs() > 1e-6 * window.area() {
        return Err(Error::InsufficientWindow(format!(
            "certified cells cover {covered} of the window area {}; enlarge the buffer",
            window.area()
        )));
    }
    if let Some(i) = config.cells_in_bbox(&bb).into_iter().find(|&i| !config.complete[i] && config.cells[i].area_in_square(window) > 0.0) {
        return Err(Error::InsufficientWindow(format!("cell {i} meets the window with an uncertified neighbour")));
    }
    Ok(config)
}

/// Axial neighbour offsets in CCW order (0°, 60°, ..., 300°).
const HEX_DIRS: [(i64, i64); 6] = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)];

/// Hexagon of inradius 1/2 centred at `c`, CCW; edge k faces direction 60k°.
pub fn hex_polygon(c: Pt) -> Vec<Pt> {
    let rho = 1.0 / 3f64.sqrt();
    (0..6)
        .map(|k| {
            let a = std::f64::consts::PI / 6.0 * (2 * k as i64 - 1) as f64;
            c + Pt::polar(rho, a)
        })
        .collect()
}

fn axial_center(q: i64, r: i64, shift: Pt) -> Pt {
    shift + pt(q as f64 + 0.5 * r as f64, SQRT3_2 * r as f64)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Bond state from a hash of (seed, hexagon, direction), so states do not
/// depend on the sampled region.
fn bond_open(seed: u64, q: i64, r: i64, d: usize, p: f64) -> bool {
    let h = splitmix(seed ^ splitmix((q as u64).wrapping_mul(0x1000_0000_01B3) ^ splitmix(r as u64 ^ ((d as u64) << 60))));
    ((h >> 11) as f64) * (1.0 / (1u64 << 53) as f64) < p
}

struct HexRegion {
    coords: Vec<(i64, i64)>,
    index: HashMap<(i64, i64), usize>,
    shift: Pt,
}

impl HexRegion {
    fn nb(&self, a: usize, d: usize) -> Option<usize> {
        let (q, r) = self.coords[a];
        let (dq, dr) = HEX_DIRS[d % 6];
        self.index.get(&(q + dq, r + dr)).copied()
    }

    fn center(&self, a: usize) -> Pt {
        let (q, r) = self.coords[a];
        axial_center(q, r, self.shift)
    }

    fn edge_key(&self, a: usize, d: usize) -> usize {
        if d < 3 {
            3 * a + d
        } else {
            3 * self.nb(a, d).expect("interior edge") + (d - 3)
        }
    }

    /// Hexagons of `members` plus everything they separate from infinity.
    fn fill(&self, members: &[usize], inside: &dyn Fn(usize) -> bool) -> Vec<usize> {
        let (mut q0, mut q1, mut r0, mut r1) = (i64::MAX, i64::MIN, i64::MAX, i64::MIN);
        for &a in members {
            let (q, r) = self.coords[a];
            q0 = q0.min(q);
            q1 = q1.max(q);
            r0 = r0.min(r);
            r1 = r1.max(r);
        }
        let (q0, q1, r0, r1) = (q0 - 1, q1 + 1, r0 - 1, r1 + 1);
        let w = (q1 - q0 + 1) as usize;
        let h = (r1 - r0 + 1) as usize;
        let blocked = |q: i64, r: i64| self.index.get(&(q, r)).is_some_and(|&a| inside(a));
        let mut seen = vec![false; w * h];
        let mut queue = VecDeque::new();
        for q in q0..=q1 {
            for r in r0..=r1 {
                if (q == q0 || q == q1 || r == r0 || r == r1) && !blocked(q, r) {
                    seen[(r - r0) as usize * w + (q - q0) as usize] = true;
                    queue.push_back((q, r));
                }
            }
        }
        while let Some((q, r)) = queue.pop_front() {
            for (dq, dr) in HEX_DIRS {
                let (a, b) = (q + dq, r + dr);
                if a < q0 || a > q1 || b < r0 || b > r1 {
                    continue;
                }
                let s = (b - r0) as usize * w + (a - q0) as usize;
                if !seen[s] && !blocked(a, b) {
                    seen[s] = true;
                    queue.push_back((a, b));
                }
            }
        }
        let mut out = members.to_vec();
        for q in q0..=q1 {
            for r in r0..=r1 {
                if !seen[(r - r0) as usize * w + (q - q0) as usize] && !blocked(q, r) {
                    if let Some(&a) = self.index.get(&(q, r)) {
                        out.push(a);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

struct HexCells {
    /// Per hexagon: cell label, or None when excluded.
    label: Vec<Option<usize>>,
    members: Vec<Vec<usize>>,
    rotations: Vec<Vec<(usize, usize)>>,
    complete: Vec<bool>,
}

/// Boundary arcs of every cell; consecutive boundary edges facing the same
/// neighbour form one component of the intersection, hence one map edge.
fn hex_cells(reg: &HexRegion, label: Vec<Option<usize>>, ncells: usize) -> Result<HexCells> {
    let mut members = vec![Vec::new(); ncells];
    for (a, l) in label.iter().enumerate() {
        if let Some(c) = *l {
            members[c].push(a);
        }
    }
    let lab = |a: Option<usize>| a.and_then(|a| label[a]);
    let mut rotations = Vec::with_capacity(ncells);
    let mut complete = Vec::with_capacity(ncells);
    for (c, hexes) in members.iter().enumerate() {
        let mut boundary = 0usize;
        let mut start = None;
        for &a in hexes {
            for d in 0..6 {
                if lab(reg.nb(a, d)) != Some(c) {
                    boundary += 1;
                    if start.is_none() {
                        start = Some((a, d));
                    }
                }
            }
        }
        let Some(start) = start else {
            rotations.push(Vec::new());
            complete.push(false);
            continue;
        };
        let mut seq: Vec<(Option<usize>, usize)> = Vec::with_capacity(boundary);
        let (mut a, mut d) = start;
        loop {
            let n = reg.nb(a, d);
            let other = lab(n);
            let key = if n.is_some() { reg.edge_key(a, d) } else { usize::MAX };
            seq.push((other, key));
            let d1 = (d + 1) % 6;
            match reg.nb(a, d1) {
                Some(b) if label[b] == Some(c) => {
                    a = b;
                    d = (d + 5) % 6;
                }
                _ => d = d1,
            }
            if (a, d) == start || seq.len() > boundary {
                break;
            }
        }
        if seq.len() != boundary {
            return Err(Error::Inconsistent(format!("cell {c} has a boundary with several components")));
        }
        let cut = (0..seq.len()).find(|&i| seq[i].0 != seq[(i + seq.len() - 1) % seq.len()].0).unwrap_or(0);
        seq.rotate_left(cut);
        let mut row: Vec<(usize, usize)> = Vec::new();
        let mut ok = true;
        let mut i = 0;
        while i < seq.len() {
            let who = seq[i].0;
            let mut key = seq[i].1;
            let mut j = i + 1;
            while j < seq.len() && seq[j].0 == who {
                key = key.min(seq[j].1);
                j += 1;
            }
            match who {
                Some(o) => row.push((o, key)),
                None => ok = false,
            }
            i = j;
        }
        rotations.push(row);
        complete.push(ok);
    }
    Ok(HexCells { label, members, rotations, complete })
}

/// Bernoulli bond percolation on the hexagon adjacency graph; cells are
/// clusters with the hexagons they separate from infinity.
pub fn hex_percolation(spec: &GeneratorSpec) -> Result<CellConfiguration> {
    spec.check()?;
    let window = Square::centered(Pt::default(), spec.window);
    let region = window.expand(spec.buffer_width());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x4E58_5045_5243);
    // uniform point of a fundamental domain of the lattice
    let (u, v): (f64, f64) = (rng.random(), rng.random());
    let shift = pt(u + 0.5 * v, SQRT3_2 * v);
    let rmin = ((region.min.y - shift.y) / SQRT3_2).floor() as i64 - 1;
    let rmax = ((region.max().y - shift.y) / SQRT3_2).ceil() as i64 + 1;
    let mut coords = Vec::new();
    for r in rmin..=rmax {
        let off = shift.x + 0.5 * r as f64;
        for q in ((region.min.x - off).floor() as i64 - 1)..=((region.max().x - off).ceil() as i64 + 1) {
            if region.contains(axial_center(q, r, shift)) {
                coords.push((q, r));
            }
        }
    }
    let index: HashMap<(i64, i64), usize> = coords.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let reg = HexRegion { coords, index, shift };
    let n = reg.coords.len();

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for a in 0..n {
        for d in 0..3 {
            if let Some(b) = reg.nb(a, d) {
                let (q, r) = reg.coords[a];
                if bond_open(spec.seed, q, r, d, spec.p) {
                    let (x, y) = (find(&mut parent, a), find(&mut parent, b));
                    if x != y {
                        parent[x.max(y)] = x.min(y);
                    }
                }
            }
        }
    }
    let mut cluster_of = vec![0; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut root_id: HashMap<usize, usize> = HashMap::new();
    for a in 0..n {
        let r = find(&mut parent, a);
        let c = *root_id.entry(r).or_insert_with(|| {
            clusters.push(Vec::new());
            clusters.len() - 1
        });
        cluster_of[a] = c;
        clusters[c].push(a);
    }
    let touching: Vec<bool> =
        clusters.iter().map(|m| m.iter().any(|&a| (0..6).any(|d| reg.nb(a, d).is_none()))).collect();

    // laminar hole filling: larger filled regions claim hexagons first
    let filled: Vec<Vec<usize>> = clusters.iter().enumerate().map(|(c, m)| reg.fill(m, &|a| cluster_of[a] == c)).collect();
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by(|&a, &b| filled[b].len().cmp(&filled[a].len()).then(a.cmp(&b)));
    let mut owner = vec![usize::MAX; n];
    for &c in &order {
        for &a in &filled[c] {
            if owner[a] == usize::MAX {
                owner[a] = c;
            }
        }
    }
    let mut label = relabel(&owner.iter().map(|&c| (!touching[c]).then_some(c)).collect::<Vec<_>>());
    let mut cells = hex_cells(&reg, label.0, label.1)?;

    if spec.collapse {
        let mut crng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xC011_A95E);
        let mut stuck = std::collections::HashSet::new();
        for _round in 0..100_000 {
            let Some((h1, h2)) = first_multi_edge(&cells.rotations, &stuck) else { break };
            let mut lab = cells.label.clone();
            if !collapse_pocket(&reg, &mut lab, h1, h2, &mut crng) {
                stuck.insert((h1, h2));
                continue;
            }
            label = relabel(&lab);
            cells = hex_cells(&reg, label.0, label.1)?;
            stuck.clear();
        }
    }

    // carrier: shrink the window until it avoids excluded and incomplete cells
    let bad: Vec<Pt> = (0..n)
        .filter(|&a| match cells.label[a] {
            None => true,
            Some(c) => !cells.complete[c],
        })
        .map(|a| reg.center(a))
        .collect();
    let mut carrier = window;
    let reach = 1.0 / 3f64.sqrt();
    while carrier.side > 0.0 && bad.iter().any(|&p| carrier.expand(reach).contains(p)) {
        carrier = carrier.concentric(carrier.side - 1.0);
    }
    if carrier.side <= 0.0 {
        return Err(Error::InsufficientWindow("no carrier square survives the boundary clusters".into()));
    }

    let out_cells: Vec<Cell> = cells
        .members
        .iter()
        .enumerate()
        .map(|(i, m)| Cell::new(i, m.iter().map(|&a| hex_polygon(reg.center(a))).collect(), None))
        .collect();
    let map = HalfEdgeMap::from_rotation_entries(&cells.rotations)?;
    CellConfiguration::new(out_cells, map, carrier, cells.complete, meta(spec, "hex-percolation"))
}

/// Compacts labels to 0..k in order of first appearance.
fn relabel(labels: &[Option<usize>]) -> (Vec<Option<usize>>, usize) {
    let mut ids = HashMap::new();
    let out = labels
        .iter()
        .map(|l| {
            l.map(|c| {
                let k = ids.len();
                *ids.entry(c).or_insert(k)
            })
        })
        .collect();
    (out, ids.len())
}

fn first_multi_edge(rot: &[Vec<(usize, usize)>], skip: &std::collections::HashSet<(usize, usize)>) -> Option<(usize, usize)> {
    for (u, row) in rot.iter().enumerate() {
        let mut count: BTreeMap<usize, usize> = BTreeMap::new();
        for &(v, _) in row {
            *count.entry(v).or_default() += 1;
        }
        if let Some((&v, _)) = count.iter().find(|&(&v, &k)| k > 1 && v > u && !skip.contains(&(u, v))) {
            return Some((u, v));
        }
    }
    None
}

/// Joins every cell separated from infinity by `h1 ∪ h2` into one of them,
/// with a fair coin when it touches both. Returns false if there is no pocket.
fn collapse_pocket(reg: &HexRegion, label: &mut [Option<usize>], h1: usize, h2: usize, rng: &mut ChaCha8Rng) -> bool {
    let both: Vec<usize> = (0..label.len()).filter(|&a| label[a] == Some(h1) || label[a] == Some(h2)).collect();
    let filled = reg.fill(&both, &|a| label[a] == Some(h1) || label[a] == Some(h2));
    let mut pocket: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &a in &filled {
        if let Some(c) = label[a] {
            if c != h1 && c != h2 {
                pocket.entry(c).or_default().push(a);
            }
        }
    }
    if pocket.is_empty() {
        return false;
    }
    loop {
        let mut progress = false;
        let mut remaining = false;
        let keys: Vec<usize> = pocket.keys().copied().collect();
        for c in keys {
            let hexes = &pocket[&c];
            let touches = |h: usize| hexes.iter().any(|&a| (0..6).any(|d| reg.nb(a, d).is_some_and(|b| label[b] == Some(h))));
            let (t1, t2) = (touches(h1), touches(h2));
            let target = match (t1, t2) {
                (true, true) => {
                    if rng.random::<bool>() {
                        h1
                    } else {
                        h2
                    }
                }
                (true, false) => h1,
                (false, true) => h2,
                (false, false) => {
                    remaining = true;
                    continue;
                }
            };
            for &a in hexes {
                label[a] = Some(target);
            }
            pocket.remove(&c);
            progress = true;
        }
        if !remaining || !progress {
            return progress || pocket.is_empty();
        }
    }
}

/// Deterministic lattice configuration on a window centred at the origin.
pub fn lattice_config(kind: LatticeKind, window: f64) -> CellConfiguration {
    let sq = Square::centered(Pt::default(), window);
    let spec = GeneratorSpec { kind: GeneratorKind::Lattice, lattice: kind, window, ..Default::default() };
    let mut m = meta(&spec, "lattice");
    m.params.insert("unit-square".into(), if kind == LatticeKind::UnitSquare { 1.0 } else { 0.0 });
    let carrier = sq.concentric((window - 4.0).max(0.0));
    match kind {
        LatticeKind::Triangular => {
            let rr = (window / SQRT3_2).ceil() as i64 + 1;
            let qq = window.ceil() as i64 + rr;
            let mut coords = Vec::new();
            for r in -rr..=rr {
                for q in -qq..=qq {
                    if sq.contains(axial_center(q, r, Pt::default())) {
                        coords.push((q, r));
                    }
                }
            }
            // the origin cell first
            coords.sort_by_key(|&(q, r)| (q != 0 || r != 0, r, q));
            let index: HashMap<(i64, i64), usize> = coords.iter().enumerate().map(|(i, &c)| (c, i)).collect();
            let mut rot = Vec::with_capacity(coords.len());
            let mut complete = Vec::with_capacity(coords.len());
            let mut cells = Vec::with_capacity(coords.len());
            for (i, &(q, r)) in coords.iter().enumerate() {
                let nb: Vec<usize> = HEX_DIRS.iter().filter_map(|&(dq, dr)| index.get(&(q + dq, r + dr)).copied()).collect();
                complete.push(nb.len() == 6);
                rot.push(nb);
                let c = axial_center(q, r, Pt::default());
                cells.push(Cell::new(i, vec![hex_polygon(c)], Some(c)));
            }
            let map = HalfEdgeMap::from_rotations(&rot).expect("lattice rotations are consistent");
            CellConfiguration::new(cells, map, carrier, complete, m).expect("lattice shape")
        }
        LatticeKind::UnitSquare => {
            let lo = (-window / 2.0).floor() as i64;
            let hi = (window / 2.0).ceil() as i64;
            let k = (hi - lo) as usize;
            let id = |i: i64, j: i64| ((j - lo) as usize) * k + (i - lo) as usize;
            let mut rot = Vec::with_capacity(k * k);
            let mut complete = Vec::with_capacity(k * k);
            let mut cells = Vec::with_capacity(k * k);
            for j in lo..hi {
                for i in lo..hi {
                    let nb: Vec<usize> = [(1, 0), (0, 1), (-1, 0), (0, -1)]
                        .iter()
                        .filter(|&&(di, dj)| (lo..hi).contains(&(i + di)) && (lo..hi).contains(&(j + dj)))
                        .map(|&(di, dj)| id(i + di, j + dj))
                        .collect();
                    complete.push(nb.len() == 4);
                    rot.push(nb);
                    let s = Square::new(pt(i as f64, j as f64), 1.0);
                    cells.push(Cell::new(id(i, j), vec![s.polygon()], Some(s.center())));
                }
            }
            let map = HalfEdgeMap::from_rotations(&rot).expect("grid rotations are consistent");
            CellConfiguration::new(cells, map, carrier, complete, m).expect("grid shape")
        }
    }
}

/// Disk triangulation spanned by the cells meeting B(center; radius): the
/// triangular faces of the associated map among those cells, cut down to the
/// disk-like core around the cell containing `center`.
pub fn disk_truncation(config: &CellConfiguration, center: Pt, radius: f64) -> Result<Truncation> {
    let ids = config.cells_meeting_disk(center, radius)?;
    let root_cell = config
        .cell_containing(center)
        .ok_or_else(|| Error::InsufficientWindow("no cell contains the centre".into()))?;
    let mut keep = vec![false; config.len()];
    for &i in &ids {
        keep[i] = true;
    }
    let tris: Vec<[usize; 3]> =
        config.map.triangles().into_iter().filter(|t| t.iter().all(|&v| keep[v])).collect();
    let core = disk_core(&tris, root_cell);
    if core.is_empty() {
        return Err(Error::InsufficientWindow("the root cell has no triangular face".into()));
    }
    let (local, original) = compact_triangles(&core);
    let tri = HalfEdgeMap::from_triangles(original.len(), &local)?;
    let root = original.iter().position(|&v| v == root_cell).unwrap();
    Ok(Truncation { tri, ids: original, root })
}

/// Hexagonal patch of the triangular lattice with `m` rings around vertex 0,
/// together with unit-spaced vertex positions.
pub fn triangular_patch(m: usize) -> (HalfEdgeMap, Vec<Pt>) {
    let m = m as i64;
    let mut coords = vec![(0i64, 0i64)];
    for q in -m..=m {
        for r in -m..=m {
            if (q, r) != (0, 0) && (q + r).abs() <= m {
                coords.push((q, r));
            }
        }
    }
    let index: HashMap<(i64, i64), usize> = coords.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut tris = Vec::new();
    for &(q, r) in &coords {
        let a = index[&(q, r)];
        if let (Some(&b), Some(&c)) = (index.get(&(q + 1, r)), index.get(&(q, r + 1))) {
            tris.push([a, b, c]);
        }
        if let (Some(&b), Some(&c)) = (index.get(&(q + 1, r - 1)), index.get(&(q + 1, r))) {
            tris.push([a, b, c]);
        }
    }
    let pos = coords.iter().map(|&(q, r)| axial_center(q, r, Pt::default())).collect();
    (HalfEdgeMap::from_triangles(coords.len(), &tris).expect("lattice patch is a disk"), pos)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangular_lattice_interior_degree_six() {
        let c = lattice_config(LatticeKind::Triangular, 10.0);
        for (v, &ok) in c.complete.iter().enumerate() {
            if ok {
                assert_eq!(c.degree(v), 6);
            }
        }
        assert!(c.validate().ok());
        assert_eq!(c.cell_containing(pt(0.01, 0.02)), Some(0));
    }

    #[test]
    fn voronoi_mean_area_and_validation() {
        let c = poisson_voronoi(&GeneratorSpec::voronoi(1.0, 24.0, 7)).unwrap();
        let w = c.carrier;
        let inside: Vec<usize> = (0..c.len()).filter(|&i| w.contains(c.cells[i].site.unwrap())).collect();
        let mean = inside.iter().map(|&i| c.cells[i].area).sum::<f64>() / inside.len() as f64;
        assert!((mean - 1.0).abs() < 0.15, "{mean}");
        let v = c.validate();
        assert!(v.ok(), "{:?}", v);
        let r = c.map.validate();
        assert!(r.type_iii);
    }

    #[test]
    fn voronoi_is_deterministic() {
        let a = poisson_voronoi(&GeneratorSpec::voronoi(1.0, 12.0, 3)).unwrap().to_json().unwrap();
        let b = poisson_voronoi(&GeneratorSpec::voronoi(1.0, 12.0, 3)).unwrap().to_json().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn percolation_p0_is_hex_lattice() {
        let c = hex_percolation(&GeneratorSpec::percolation(0.0, 12.0, 1, false)).unwrap();
        assert!(c.cells.iter().all(|x| x.pieces.len() == 1));
        for v in 0..c.len() {
            if c.complete[v] {
                assert_eq!(c.degree(v), 6);
            }
        }
        assert!(c.map.validate().type_iii);
    }

    #[test]
    fn percolation_cells_are_valid() {
        for seed in 0..4 {
            let c = hex_percolation(&GeneratorSpec::percolation(0.2, 16.0, seed, false)).unwrap();
            let v = c.validate();
            assert!(v.ok(), "{:?}", v);
            assert!(c.map.validate().loops == 0);
        }
    }

    #[test]
    fn collapse_gives_simple_map() {
        for seed in 0..6 {
            let c = hex_percolation(&GeneratorSpec::percolation(0.2, 24.0, seed, true)).unwrap();
            let r = c.map.validate();
            assert!(r.type_iii, "seed {seed}: {:?}", r.problems);
        }
    }

    #[test]
    fn truncation_of_voronoi_is_disk() {
        let c = poisson_voronoi(&GeneratorSpec::voronoi(1.0, 24.0, 2)).unwrap();
        let t = disk_truncation(&c, Pt::default(), 8.0).unwrap();
        t.tri.require_disk_triangulation().unwrap();
        assert!(t.tri.num_vertices() > 150);
    }
}
