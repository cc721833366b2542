//! Half-edge planar maps with explicit rotation systems.
//!
//! Half-edges `2e` and `2e + 1` are the two orientations of edge `e`, so
//! `twin(h) = h ^ 1`. Bounded faces are traversed counter-clockwise, i.e. each
//! half-edge has its face on the left.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct HalfEdgeMap {
    origin: Vec<usize>,
    next: Vec<usize>,
    face: Vec<usize>,
    pos: Vec<usize>,
    rot: Vec<Vec<usize>>,
    face_start: Vec<usize>,
    face_len: Vec<usize>,
    outer: Option<usize>,
    root: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub vertices: usize,
    pub edges: usize,
    pub faces: usize,
    pub euler: i64,
    pub loops: usize,
    pub multi_edges: usize,
    pub face_degree_histogram: BTreeMap<usize, usize>,
    pub outer_face_degree: Option<usize>,
    pub type_iii: bool,
    pub connected: bool,
    pub disk_triangulation: bool,
    pub problems: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RootedBall {
    pub map: HalfEdgeMap,
    pub root: usize,
    pub radius: usize,
    /// `original[i]` is the vertex of the parent map that became vertex `i`.
    pub original: Vec<usize>,
}

impl HalfEdgeMap {
    /// Builds a map from plain cyclic neighbour lists (CCW).
    ///
    /// With parallel edges between `u` and `v`, the k-th occurrence of `v`
    /// in `rot(u)` is paired with the (c-1-k)-th occurrence of `u` in `rot(v)`,
    /// which is the planar pairing for a bundle of parallel edges.
    pub fn from_rotations(rotations: &[Vec<usize>]) -> Result<Self> {
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        for (u, list) in rotations.iter().enumerate() {
            for &v in list {
                if v >= rotations.len() {
                    return Err(Error::Inconsistent(format!("vertex {u} lists unknown neighbour {v}")));
                }
                *counts.entry((u, v)).or_default() += 1;
            }
        }
        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        let mut keys: HashMap<(usize, usize, usize), usize> = HashMap::new();
        let mut next_key = 0usize;
        let mut entries = Vec::with_capacity(rotations.len());
        for (u, list) in rotations.iter().enumerate() {
            let mut row = Vec::with_capacity(list.len());
            for &v in list {
                let c_uv = counts[&(u, v)];
                let c_vu = counts.get(&(v, u)).copied().unwrap_or(0);
                if c_uv != c_vu {
                    return Err(Error::Inconsistent(format!(
                        "vertex pair ({u}, {v}): {c_uv} entries one way, {c_vu} the other"
                    )));
                }
                let k = seen.entry((u, v)).or_default();
                let idx = *k;
                *k += 1;
                let key = if u < v {
                    *keys.entry((u, v, idx)).or_insert_with(|| {
                        next_key += 1;
                        next_key - 1
                    })
                } else {
                    *keys.entry((v, u, c_uv - 1 - idx)).or_insert_with(|| {
                        next_key += 1;
                        next_key - 1
                    })
                };
                row.push((v, key));
            }
            entries.push(row);
        }
        Self::from_rotation_entries(&entries)
    }

    /// Builds a map from `(neighbour, edge key)` rotation entries. Every key must
    /// occur exactly twice: once at each endpoint.
    pub fn from_rotation_entries(rotations: &[Vec<(usize, usize)>]) -> Result<Self> {
        let n = rotations.len();
        let mut by_key: BTreeMap<usize, Vec<(usize, usize, usize)>> = BTreeMap::new();
        for (u, list) in rotations.iter().enumerate() {
            for (i, &(v, key)) in list.iter().enumerate() {
                if v >= n {
                    return Err(Error::Inconsistent(format!("vertex {u} lists unknown neighbour {v}")));
                }
                if v == u {
                    return Err(Error::Inconsistent(format!("loop at vertex {u}")));
                }
                by_key.entry(key).or_default().push((u, v, i));
            }
        }
        let m = by_key.len();
        let mut origin = vec![0; 2 * m];
        let mut slot = vec![vec![usize::MAX; 0]; n];
        for (u, list) in rotations.iter().enumerate() {
            slot[u] = vec![usize::MAX; list.len()];
        }
        for (e, (key, occ)) in by_key.iter().enumerate() {
            if occ.len() != 2 {
                return Err(Error::Inconsistent(format!("edge key {key} occurs {} times", occ.len())));
            }
            let (u, v, iu) = occ[0];
            let (u2, v2, iv) = occ[1];
            if u2 != v || v2 != u {
                return Err(Error::Inconsistent(format!(
                    "edge key {key} joins ({u}, {v}) at one end and ({u2}, {v2}) at the other"
                )));
            }
            origin[2 * e] = u;
            origin[2 * e + 1] = v;
            slot[u][iu] = 2 * e;
            slot[v][iv] = 2 * e + 1;
        }
        Ok(Self::assemble(origin, slot))
    }

    fn assemble(origin: Vec<usize>, rot: Vec<Vec<usize>>) -> Self {
        let h_count = origin.len();
        let mut pos = vec![0; h_count];
        for list in &rot {
            for (i, &h) in list.iter().enumerate() {
                pos[h] = i;
            }
        }
        let mut next = vec![0; h_count];
        for h in 0..h_count {
            let t = h ^ 1;
            let v = origin[t];
            let d = rot[v].len();
            next[h] = rot[v][(pos[t] + d - 1) % d];
        }
        let mut face = vec![usize::MAX; h_count];
        let mut face_start = Vec::new();
        let mut face_len = Vec::new();
        for h in 0..h_count {
            if face[h] != usize::MAX {
                continue;
            }
            let f = face_start.len();
            let mut g = h;
            let mut len = 0;
            loop {
                face[g] = f;
                len += 1;
                g = next[g];
                if g == h {
                    break;
                }
            }
            face_start.push(h);
            face_len.push(len);
        }
        let outer = face_len
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(f, _)| f);
        HalfEdgeMap { origin, next, face, pos, rot, face_start, face_len, outer, root: None }
    }

    /// Builds a map from CCW-oriented triangles. Edges with one incident
    /// triangle form the boundary; the longest boundary cycle is the outer face.
    pub fn from_triangles(n: usize, tris: &[[usize; 3]]) -> Result<Self> {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(tris.len() * 3);
        for (t, tri) in tris.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                if a >= n || b >= n || a == b {
                    return Err(Error::Inconsistent(format!("triangle {t} has bad vertices {tri:?}")));
                }
                if directed.insert((a, b), t).is_some() {
                    return Err(Error::Inconsistent(format!("directed edge ({a}, {b}) used twice")));
                }
            }
        }
        // successor of (a,b) around a's triangles: triangle (a,b,c) gives the
        // CCW-next edge (a,c).
        let mut ccw_next: HashMap<(usize, usize), usize> = HashMap::with_capacity(tris.len() * 3);
        for tri in tris {
            for k in 0..3 {
                ccw_next.insert((tri[k], tri[(k + 1) % 3]), tri[(k + 2) % 3]);
            }
        }
        let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(a, b) in directed.keys() {
            nbrs[a].push(b);
            if !directed.contains_key(&(b, a)) {
                nbrs[b].push(a);
            }
        }
        let mut rotations = Vec::with_capacity(n);
        for v in 0..n {
            let mut list = std::mem::take(&mut nbrs[v]);
            list.sort_unstable();
            list.dedup();
            if list.is_empty() {
                rotations.push(Vec::new());
                continue;
            }
            // start from the neighbour that has no CCW predecessor (boundary), if any
            let has_pred: std::collections::HashSet<usize> =
                list.iter().filter_map(|&b| ccw_next.get(&(v, b)).copied()).collect();
            let starts: Vec<usize> = list.iter().copied().filter(|b| !has_pred.contains(b)).collect();
            if starts.len() > 1 {
                return Err(Error::Inconsistent(format!("vertex {v} is a pinch point")));
            }
            let start = starts.first().copied().unwrap_or(list[0]);
            let mut order = vec![start];
            let mut cur = start;
            while let Some(&nx) = ccw_next.get(&(v, cur)) {
                if nx == start {
                    break;
                }
                order.push(nx);
                cur = nx;
                if order.len() > list.len() {
                    return Err(Error::Inconsistent(format!("vertex {v} has a non-manifold fan")));
                }
            }
            if order.len() != list.len() {
                return Err(Error::Inconsistent(format!("vertex {v} has a non-manifold fan")));
            }
            rotations.push(order);
        }
        let mut map = Self::from_rotations(&rotations)?;
        let outer = (0..map.num_faces())
            .filter(|&f| {
                let h = map.face_start[f];
                let (a, b) = (map.origin[h], map.origin[h ^ 1]);
                !directed.contains_key(&(a, b))
            })
            .max_by(|&a, &b| map.face_len[a].cmp(&map.face_len[b]).then(b.cmp(&a)));
        map.outer = outer;
        Ok(map)
    }

    pub fn num_vertices(&self) -> usize {
        self.rot.len()
    }
    pub fn num_half_edges(&self) -> usize {
        self.origin.len()
    }
    pub fn num_edges(&self) -> usize {
        self.origin.len() / 2
    }
    pub fn num_faces(&self) -> usize {
        self.face_start.len()
    }
    pub fn origin(&self, h: usize) -> usize {
        self.origin[h]
    }
    pub fn target(&self, h: usize) -> usize {
        self.origin[h ^ 1]
    }
    pub fn twin(&self, h: usize) -> usize {
        h ^ 1
    }
    pub fn next(&self, h: usize) -> usize {
        self.next[h]
    }
    pub fn prev(&self, h: usize) -> usize {
        // prev(h) = twin of the CCW successor of h at its origin
        let v = self.origin[h];
        let d = self.rot[v].len();
        self.rot[v][(self.pos[h] + 1) % d] ^ 1
    }
    pub fn face_of(&self, h: usize) -> usize {
        self.face[h]
    }
    pub fn degree(&self, v: usize) -> usize {
        self.rot[v].len()
    }
    /// Outgoing half-edges of `v` in CCW order.
    pub fn out_edges(&self, v: usize) -> &[usize] {
        &self.rot[v]
    }
    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.rot[v].iter().map(move |&h| self.origin[h ^ 1])
    }
    /// CCW successor of out-edge `h` around its origin.
    pub fn rot_next(&self, h: usize) -> usize {
        let v = self.origin[h];
        self.rot[v][(self.pos[h] + 1) % self.rot[v].len()]
    }
    pub fn outer_face(&self) -> Option<usize> {
        self.outer
    }
    pub fn set_outer_face(&mut self, f: Option<usize>) {
        self.outer = f;
    }
    pub fn root(&self) -> Option<usize> {
        self.root
    }
    pub fn set_root(&mut self, h: Option<usize>) {
        self.root = h;
    }
    pub fn face_degree(&self, f: usize) -> usize {
        self.face_len[f]
    }
    pub fn face_half_edges(&self, f: usize) -> Vec<usize> {
        let start = self.face_start[f];
        let mut out = Vec::with_capacity(self.face_len[f]);
        let mut h = start;
        loop {
            out.push(h);
            h = self.next[h];
            if h == start {
                break;
            }
        }
        out
    }
    pub fn face_vertices(&self, f: usize) -> Vec<usize> {
        self.face_half_edges(f).into_iter().map(|h| self.origin[h]).collect()
    }
    pub fn bounded_faces(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_faces()).filter(move |&f| Some(f) != self.outer)
    }
    /// Vertex triples of all bounded faces of degree 3.
    pub fn triangles(&self) -> Vec<[usize; 3]> {
        self.bounded_faces()
            .filter(|&f| self.face_len[f] == 3)
            .map(|f| {
                let h = self.face_start[f];
                [self.origin[h], self.origin[self.next[h]], self.origin[self.next[self.next[h]]]]
            })
            .collect()
    }
    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        match self.outer {
            Some(o) => self.rot[v].iter().any(|&h| self.face[h] == o || self.face[h ^ 1] == o),
            None => false,
        }
    }
    pub fn is_boundary_edge(&self, h: usize) -> bool {
        self.outer.is_some_and(|o| self.face[h] == o || self.face[h ^ 1] == o)
    }
    pub fn boundary_vertices(&self) -> Vec<usize> {
        match self.outer {
            Some(o) => self.face_vertices(o),
            None => Vec::new(),
        }
    }
    pub fn interior_vertices(&self) -> Vec<usize> {
        (0..self.num_vertices()).filter(|&v| !self.is_boundary_vertex(v)).collect()
    }
    /// Half-edge `u -> v`, if present (first in rotation order).
    pub fn find_half_edge(&self, u: usize, v: usize) -> Option<usize> {
        self.rot[u].iter().copied().find(|&h| self.origin[h ^ 1] == v)
    }
    /// Graph distances from `v0` (usize::MAX when unreachable).
    pub fn bfs_distances(&self, v0: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.num_vertices()];
        let mut queue = VecDeque::new();
        dist[v0] = 0;
        queue.push_back(v0);
        while let Some(u) = queue.pop_front() {
            for w in self.neighbors(u) {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Submap induced by `keep` (a vertex mask), rotations inherited.
    pub fn induced(&self, keep: &[bool]) -> (HalfEdgeMap, Vec<usize>) {
        let mut new_id = vec![usize::MAX; self.num_vertices()];
        let mut original = Vec::new();
        for v in 0..self.num_vertices() {
            if keep[v] {
                new_id[v] = original.len();
                original.push(v);
            }
        }
        let entries: Vec<Vec<(usize, usize)>> = original
            .iter()
            .map(|&v| {
                self.rot[v]
                    .iter()
                    .filter(|&&h| keep[self.origin[h ^ 1]])
                    .map(|&h| (new_id[self.origin[h ^ 1]], h / 2))
                    .collect()
            })
            .collect();
        let map = Self::from_rotation_entries(&entries).expect("induced submap of a valid map is valid");
        (map, original)
    }

    pub fn validate(&self) -> ValidationReport {
        let v = self.num_vertices();
        let e = self.num_edges();
        let isolated = (0..v).filter(|&x| self.rot[x].is_empty()).count();
        let f = self.num_faces() + isolated;
        let mut problems = Vec::new();
        let mut pair_count: HashMap<(usize, usize), usize> = HashMap::new();
        for ed in 0..e {
            let (a, b) = (self.origin[2 * ed], self.origin[2 * ed + 1]);
            *pair_count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
        let multi_edges = pair_count.values().filter(|&&c| c > 1).map(|c| c - 1).sum();
        let loops = (0..e).filter(|&ed| self.origin[2 * ed] == self.origin[2 * ed + 1]).count();
        let mut hist = BTreeMap::new();
        for fc in self.bounded_faces() {
            *hist.entry(self.face_len[fc]).or_default() += 1;
        }
        let comps = self.components();
        let connected = comps <= 1;
        let euler = v as i64 - e as i64 + f as i64;
        for h in 0..self.num_half_edges() {
            if self.origin[self.next[h]] != self.origin[h ^ 1] {
                problems.push(format!("next of half-edge {h} does not start at its target"));
            }
        }
        let sum_faces: usize = self.face_len.iter().sum();
        if sum_faces != self.num_half_edges() {
            problems.push("face degrees do not sum to the half-edge count".into());
        }
        let sum_deg: usize = self.rot.iter().map(|r| r.len()).sum();
        if sum_deg != self.num_half_edges() {
            problems.push("vertex degrees do not sum to the half-edge count".into());
        }
        if connected && euler != 2 * comps.max(1) as i64 {
            problems.push(format!("Euler characteristic {euler} on a connected map"));
        }
        let type_iii = loops == 0 && multi_edges == 0;
        let disk_triangulation = self.outer.is_some()
            && connected
            && euler == 2
            && type_iii
            && hist.keys().all(|&d| d == 3)
            && !hist.is_empty()
            && {
                let bv = self.boundary_vertices();
                let mut s = bv.clone();
                s.sort_unstable();
                s.dedup();
                s.len() == bv.len()
            };
        ValidationReport {
            vertices: v,
            edges: e,
            faces: f,
            euler,
            loops,
            multi_edges,
            face_degree_histogram: hist,
            outer_face_degree: self.outer.map(|o| self.face_len[o]),
            type_iii,
            connected,
            disk_triangulation,
            problems,
        }
    }

    fn components(&self) -> usize {
        let n = self.num_vertices();
        let mut seen = vec![false; n];
        let mut comps = 0;
        for s in 0..n {
            if seen[s] {
                continue;
            }
            comps += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(u) = stack.pop() {
                for w in self.neighbors(u) {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        comps
    }

    /// Errors unless the map is a simple disk triangulation with an interior vertex.
    pub fn require_disk_triangulation(&self) -> Result<()> {
        let r = self.validate();
        if !r.disk_triangulation {
            return Err(Error::NotDiskTriangulation(format!(
                "euler {}, multi-edges {}, faces {:?}, connected {}",
                r.euler, r.multi_edges, r.face_degree_histogram, r.connected
            )));
        }
        if self.interior_vertices().is_empty() {
            return Err(Error::NotDiskTriangulation("no interior vertex".into()));
        }
        Ok(())
    }

    /// Line-oriented text form: rotation lines `v i: nbr@edge ...`, the outer
    /// face and the face table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "vertices {}", self.num_vertices());
        for v in 0..self.num_vertices() {
            let _ = write!(s, "v {v}:");
            for &h in &self.rot[v] {
                let _ = write!(s, " {}@{}", self.origin[h ^ 1], h / 2);
            }
            s.push('\n');
        }
        match self.outer {
            Some(o) => {
                let _ = writeln!(s, "outer {o}");
            }
            None => s.push_str("outer none\n"),
        }
        match self.root {
            Some(r) => {
                let _ = writeln!(s, "root {r}");
            }
            None => s.push_str("root none\n"),
        }
        let _ = writeln!(s, "faces {}", self.num_faces());
        for f in 0..self.num_faces() {
            let _ = write!(s, "f {f}:");
            for v in self.face_vertices(f) {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Parse(msg.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty input"))?;
        let n: usize = header
            .strip_prefix("vertices ")
            .and_then(|x| x.trim().parse().ok())
            .ok_or_else(|| bad("expected `vertices N`"))?;
        let mut entries = Vec::with_capacity(n);
        for i in 0..n {
            let line = lines.next().ok_or_else(|| bad("missing vertex line"))?;
            let rest = line
                .strip_prefix(&format!("v {i}:"))
                .ok_or_else(|| Error::Parse(format!("expected rotation line for vertex {i}")))?;
            let mut row = Vec::new();
            for tok in rest.split_whitespace() {
                let (a, b) = tok.split_once('@').ok_or_else(|| Error::Parse(format!("bad entry `{tok}`")))?;
                let nb = a.parse().map_err(|_| Error::Parse(format!("bad entry `{tok}`")))?;
                let key = b.parse().map_err(|_| Error::Parse(format!("bad entry `{tok}`")))?;
                row.push((nb, key));
            }
            entries.push(row);
        }
        let mut map = Self::from_rotation_entries(&entries)?;
        let parse_opt = |line: Option<&str>, prefix: &str| -> Result<Option<usize>> {
            let line = line.ok_or_else(|| Error::Parse(format!("missing `{prefix}` line")))?;
            let v = line
                .strip_prefix(prefix)
                .ok_or_else(|| Error::Parse(format!("expected `{prefix}`")))?
                .trim();
            if v == "none" {
                Ok(None)
            } else {
                v.parse().map(Some).map_err(|_| Error::Parse(format!("bad `{prefix}` value")))
            }
        };
        let outer = parse_opt(lines.next(), "outer ")?;
        let root = parse_opt(lines.next(), "root ")?;
        if outer.is_some_and(|o| o >= map.num_faces()) {
            return Err(bad("outer face out of range"));
        }
        map.outer = outer;
        map.root = root;
        Ok(map)
    }
}

/// Vertices within graph distance `m` of `v0`, with the inherited rotation system.
pub fn bs_ball(map: &HalfEdgeMap, v0: usize, m: usize) -> RootedBall {
    let dist = map.bfs_distances(v0);
    let keep: Vec<bool> = dist.iter().map(|&d| d <= m).collect();
    let (sub, original) = map.induced(&keep);
    let root = original.iter().position(|&v| v == v0).unwrap();
    RootedBall { map: sub, root, radius: m, original }
}

/// Adds one vertex per face (outer face included) joined to all of that face's
/// corners. Vertices `0..n` keep their ids; face `f` becomes vertex `n + f`.
pub fn augment_faces(map: &HalfEdgeMap) -> Result<HalfEdgeMap> {
    let n = map.num_vertices();
    let r = map.validate();
    if !r.type_iii {
        return Err(Error::Inconsistent("augmentation needs a simple map".into()));
    }
    for f in 0..map.num_faces() {
        let mut vs = map.face_vertices(f);
        vs.sort_unstable();
        let len = vs.len();
        vs.dedup();
        if vs.len() != len {
            return Err(Error::Inconsistent(format!("face {f} visits a vertex twice; map is not 2-connected")));
        }
    }
    let base = map.num_edges();
    let mut entries: Vec<Vec<(usize, usize)>> = Vec::with_capacity(n + map.num_faces());
    for v in 0..n {
        let mut row = Vec::with_capacity(2 * map.degree(v));
        for &h in map.out_edges(v) {
            row.push((map.target(h), h / 2));
            // the face left of h sits between h and its CCW successor
            row.push((n + map.face_of(h), base + h));
        }
        entries.push(row);
    }
    for f in 0..map.num_faces() {
        entries.push(map.face_half_edges(f).into_iter().map(|h| (map.origin(h), base + h)).collect());
    }
    let mut out = HalfEdgeMap::from_rotation_entries(&entries)?;
    out.outer = None;
    Ok(out)
}

/// Largest disk-like piece of a triangle soup around `root`: the edge-connected
/// component containing `root`, with pinched fans removed until every vertex
/// has a single fan. Triangles must be CCW.
pub fn disk_core(tris: &[[usize; 3]], root: usize) -> Vec<[usize; 3]> {
    let mut alive: Vec<bool> = vec![true; tris.len()];
    loop {
        // edge-connected component of triangles touching root
        let mut by_edge: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in tris.iter().enumerate() {
            if alive[t] {
                for k in 0..3 {
                    by_edge.insert((tri[k], tri[(k + 1) % 3]), t);
                }
            }
        }
        let start = (0..tris.len()).find(|&t| alive[t] && tris[t].contains(&root));
        let Some(start) = start else { return Vec::new() };
        let mut comp = vec![false; tris.len()];
        comp[start] = true;
        let mut stack = vec![start];
        while let Some(t) = stack.pop() {
            let tri = tris[t];
            for k in 0..3 {
                if let Some(&u) = by_edge.get(&(tri[(k + 1) % 3], tri[k])) {
                    if !comp[u] {
                        comp[u] = true;
                        stack.push(u);
                    }
                }
            }
        }
        alive = comp;
        // fans at each vertex
        let mut around: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (t, tri) in tris.iter().enumerate() {
            if alive[t] {
                for &v in tri {
                    around.entry(v).or_default().push(t);
                }
            }
        }
        let mut changed = false;
        for (&v, ts) in &around {
            // ccw successor inside v's star: triangle (v,b,c) links b -> c
            let mut succ: HashMap<usize, (usize, usize)> = HashMap::new();
            let mut targets = std::collections::HashSet::new();
            for &t in ts {
                let tri = tris[t];
                let k = tri.iter().position(|&x| x == v).unwrap();
                let (b, c) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
                succ.insert(b, (c, t));
                targets.insert(c);
            }
            let starts: Vec<usize> = {
                let mut s: Vec<usize> = succ.keys().copied().filter(|b| !targets.contains(b)).collect();
                s.sort_unstable();
                s
            };
            if starts.len() <= 1 {
                continue;
            }
            let mut fans: Vec<Vec<usize>> = starts
                .iter()
                .map(|&b0| {
                    let mut fan = Vec::new();
                    let mut b = b0;
                    while let Some(&(c, t)) = succ.get(&b) {
                        fan.push(t);
                        b = c;
                    }
                    fan
                })
                .collect();
            fans.sort_by(|a, b| {
                let ra = a.iter().any(|&t| tris[t].contains(&root));
                let rb = b.iter().any(|&t| tris[t].contains(&root));
                rb.cmp(&ra).then(b.len().cmp(&a.len())).then(a.iter().min().cmp(&b.iter().min()))
            });
            for fan in &fans[1..] {
                for &t in fan {
                    alive[t] = false;
                }
            }
            changed = true;
        }
        if !changed {
            return (0..tris.len()).filter(|&t| alive[t]).map(|t| tris[t]).collect();
        }
    }
}

/// Relabels the vertices used by `tris` to `0..k`; returns (triangles, original ids).
pub fn compact_triangles(tris: &[[usize; 3]]) -> (Vec<[usize; 3]>, Vec<usize>) {
    let mut ids: Vec<usize> = tris.iter().flatten().copied().collect();
    ids.sort_unstable();
    ids.dedup();
    let index: HashMap<usize, usize> = ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let out = tris.iter().map(|t| [index[&t[0]], index[&t[1]], index[&t[2]]]).collect();
    (out, ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn hex_flower() -> HalfEdgeMap {
        let mut rot = vec![vec![1, 2, 3, 4, 5, 6]];
        // ring vertex i sees (CCW): next, 0, prev
        for i in 1..=6 {
            let prev = if i == 1 { 6 } else { i - 1 };
            let next = if i == 6 { 1 } else { i + 1 };
            rot.push(vec![next, 0, prev]);
        }
        HalfEdgeMap::from_rotations(&rot).unwrap()
    }

    #[test]
    fn single_triangle_has_two_faces() {
        let m = HalfEdgeMap::from_rotations(&[vec![1, 2], vec![2, 0], vec![0, 1]]).unwrap();
        assert_eq!(m.num_faces(), 2);
        assert_eq!(m.validate().euler, 2);
    }

    #[test]
    fn tetrahedron() {
        let m = HalfEdgeMap::from_triangles(4, &[[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]]).unwrap();
        let r = m.validate();
        assert_eq!(r.euler, 2);
        assert_eq!(m.num_faces(), 4);
        assert!((0..4).all(|f| m.face_degree(f) == 3));
        assert!(r.type_iii);
    }

    #[test]
    fn hex_patch_faces() {
        let m = hex_flower();
        let r = m.validate();
        assert!(r.problems.is_empty(), "{:?}", r.problems);
        assert_eq!(r.face_degree_histogram.get(&3), Some(&6));
        assert_eq!(r.outer_face_degree, Some(6));
        assert!(r.disk_triangulation);
        assert_eq!(m.interior_vertices(), vec![0]);
    }

    #[test]
    fn inconsistent_rotation_is_rejected() {
        let err = HalfEdgeMap::from_rotations(&[vec![1, 2], vec![0], vec![]]).unwrap_err();
        assert!(err.to_string().contains("(0, 2)"), "{err}");
    }

    #[test]
    fn doubled_edge_flagged() {
        let m = HalfEdgeMap::from_rotations(&[vec![1, 1], vec![0, 0]]).unwrap();
        let r = m.validate();
        assert_eq!(r.multi_edges, 1);
        assert!(!r.type_iii);
        assert_eq!(r.euler, 2);
    }

    #[test]
    fn ball_radius_zero_and_saturation() {
        let m = hex_flower();
        let b0 = bs_ball(&m, 0, 0);
        assert_eq!(b0.map.num_vertices(), 1);
        assert_eq!(b0.map.num_edges(), 0);
        let b9 = bs_ball(&m, 3, 9);
        assert_eq!(b9.map.num_vertices(), 7);
        assert_eq!(b9.map.num_edges(), m.num_edges());
    }

    #[test]
    fn augment_square() {
        let sq = HalfEdgeMap::from_rotations(&[vec![1, 3], vec![2, 0], vec![3, 1], vec![0, 2]]).unwrap();
        let t = augment_faces(&sq).unwrap();
        assert_eq!(t.num_vertices(), 6);
        let r = t.validate();
        assert!(r.type_iii);
        assert_eq!(r.euler, 2);
        assert!((0..t.num_faces()).all(|f| t.face_degree(f) == 3));
        assert_eq!(t.num_faces(), 8);
    }

    #[test]
    fn augment_rejects_cut_vertex() {
        // two triangles sharing vertex 0: the outer face visits 0 twice
        let m = HalfEdgeMap::from_triangles(5, &[[0, 1, 2], [0, 3, 4]]).unwrap_err();
        assert!(m.to_string().contains("pinch"));
        let rot = vec![vec![1, 2, 3, 4], vec![2, 0], vec![0, 1], vec![4, 0], vec![0, 3]];
        let bow = HalfEdgeMap::from_rotations(&rot).unwrap();
        assert!(augment_faces(&bow).is_err());
    }

    #[test]
    fn text_round_trip() {
        let m = hex_flower();
        let t = m.to_text();
        let back = HalfEdgeMap::from_text(&t).unwrap();
        assert_eq!(back.to_text(), t);
        assert_eq!(back, m);
    }
}
