//! Dubejko conductances, weighted random walks, curve distances, walk
//! statistics and vertex extremal length.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::cell_config::CellConfiguration;
use crate::circle_pack::CirclePacking;
use crate::error::{Error, Result};
use crate::geometry::{pt, Mat2, Pt};

/// First factor √(r_u r_v)/(r_u + r_v) of the Dubejko conductance.
pub fn dubejko_first_factor(ru: f64, rv: f64) -> f64 {
    (ru * rv).sqrt() / (ru + rv)
}

/// Dubejko conductance of edge (u, v) with opposite vertices w1, w2.
pub fn dubejko_conductance(ru: f64, rv: f64, rw1: f64, rw2: f64) -> f64 {
    let s = ru + rv;
    dubejko_first_factor(ru, rv) * ((rw1 / (rw1 + s)).sqrt() + (rw2 / (rw2 + s)).sqrt())
}

/// Formula used to build weights; `SwappedFactor` is a deliberately wrong
/// variant used to check that the verification suite detects it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DubejkoVariant {
    Exact,
    SwappedFactor,
}

/// Edge-weighted graph with embedded vertices; the walk may only leave
/// `active` vertices.
#[derive(Clone, Debug)]
pub struct WeightedGraph {
    pub pos: Vec<Pt>,
    pub adj: Vec<Vec<(usize, f64)>>,
    pub active: Vec<bool>,
    cum: Vec<Vec<f64>>,
}

impl WeightedGraph {
    pub fn new(pos: Vec<Pt>, adj: Vec<Vec<(usize, f64)>>, active: Vec<bool>) -> Result<Self> {
        if adj.len() != pos.len() || active.len() != pos.len() {
            return Err(Error::Invalid("graph arrays differ in length".into()));
        }
        for (u, list) in adj.iter().enumerate() {
            if let Some(&(_, c)) = list.iter().find(|e| !(e.1 > 0.0 && e.1.is_finite())) {
                return Err(Error::Invalid(format!("conductance {c} at vertex {u} is not finite and positive")));
            }
        }
        let cum = adj
            .iter()
            .map(|l| {
                let mut s = 0.0;
                l.iter()
                    .map(|e| {
                        s += e.1;
                        s
                    })
                    .collect()
            })
            .collect();
        Ok(WeightedGraph { pos, adj, active, cum })
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    /// π(v) = Σ of incident conductances.
    pub fn pi(&self, v: usize) -> f64 {
        self.cum[v].last().copied().unwrap_or(0.0)
    }

    fn step(&self, v: usize, rng: &mut ChaCha8Rng) -> usize {
        let c = &self.cum[v];
        let x = rng.random::<f64>() * c[c.len() - 1];
        let k = c.partition_point(|&s| s <= x).min(c.len() - 1);
        self.adj[v][k].0
    }

    /// Vertex whose position is nearest to `p` among active vertices.
    pub fn nearest_active(&self, p: Pt) -> Option<usize> {
        (0..self.len()).filter(|&v| self.active[v]).min_by(|&a, &b| self.pos[a].dist(p).total_cmp(&self.pos[b].dist(p)))
    }
}

/// Dubejko weights of a packing; boundary edges are excluded from the walk.
#[derive(Clone, Debug)]
pub struct DubejkoWeights {
    pub graph: WeightedGraph,
    /// Per map edge: conductance, or None for edges with fewer than two triangles.
    pub edge: Vec<Option<f64>>,
    pub first_factor: Vec<f64>,
}

pub fn dubejko_weights(packing: &CirclePacking) -> DubejkoWeights {
    dubejko_weights_variant(packing, DubejkoVariant::Exact)
}

pub fn dubejko_weights_variant(packing: &CirclePacking, variant: DubejkoVariant) -> DubejkoWeights {
    let tri = &packing.tri;
    let r = &packing.radii;
    let outer = tri.outer_face();
    let third = |h: usize| -> Option<usize> {
        let f = tri.face_of(h);
        (Some(f) != outer && tri.face_degree(f) == 3).then(|| tri.origin(tri.prev(h)))
    };
    let mut edge = vec![None; tri.num_edges()];
    let mut first_factor = vec![0.0; tri.num_edges()];
    for e in 0..tri.num_edges() {
        let (u, v) = (tri.origin(2 * e), tri.origin(2 * e + 1));
        first_factor[e] = dubejko_first_factor(r[u], r[v]);
        if let (Some(w1), Some(w2)) = (third(2 * e), third(2 * e + 1)) {
            edge[e] = Some(match variant {
                DubejkoVariant::Exact => dubejko_conductance(r[u], r[v], r[w1], r[w2]),
                DubejkoVariant::SwappedFactor => {
                    let s = r[u] + r[v];
                    dubejko_first_factor(r[u], r[v]) * ((r[u] / (r[w1] + s)).sqrt() + (r[v] / (r[w2] + s)).sqrt())
                }
            });
        }
    }
    let n = tri.num_vertices();
    let mut adj = vec![Vec::new(); n];
    for (v, list) in adj.iter_mut().enumerate() {
        for &h in tri.out_edges(v) {
            if let Some(c) = edge[h / 2] {
                list.push((tri.target(h), c));
            }
        }
    }
    let active: Vec<bool> = (0..n).map(|v| !tri.is_boundary_vertex(v) && !adj[v].is_empty()).collect();
    let graph = WeightedGraph::new(packing.centers.clone(), adj, active).expect("Dubejko weights are positive");
    DubejkoWeights { graph, edge, first_factor }
}

/// |Σ_w (𝔠(u,w)/π(u)) (z_w − z_u)| / r_u at every active vertex.
pub fn martingale_residuals(packing: &CirclePacking, g: &WeightedGraph) -> Vec<(usize, f64)> {
    (0..g.len())
        .filter(|&u| g.active[u])
        .map(|u| {
            let mut s = Pt::default();
            for &(w, c) in &g.adj[u] {
                s += (g.pos[w] - g.pos[u]) * c;
            }
            (u, (s / g.pi(u)).norm() / packing.radii[u])
        })
        .collect()
}

/// Unit-conductance walk on the associated map, embedded at cell centroids.
pub fn unit_weights(config: &CellConfiguration) -> WeightedGraph {
    let adj = (0..config.len())
        .map(|u| config.map.out_edges(u).iter().map(|&h| (config.map.target(h), config.conductance[h / 2])).collect())
        .collect();
    let pos = config.cells.iter().map(|c| c.centroid).collect();
    WeightedGraph::new(pos, adj, config.complete.clone()).expect("conductances are positive")
}

/// Stop after `max_steps`, or on first reaching distance `exit_radius` from the start.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub max_steps: usize,
    pub exit_radius: Option<f64>,
}

impl StopRule {
    pub fn steps(n: usize) -> Self {
        StopRule { max_steps: n, exit_radius: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkPath {
    pub vertices: Vec<usize>,
    pub seed: u64,
    pub index: u64,
    pub exited: bool,
}

impl WalkPath {
    pub fn curve(&self, g: &WeightedGraph) -> Vec<Pt> {
        self.vertices.iter().map(|&v| g.pos[v]).collect()
    }
}

/// Independent substream for walk `index` under `seed`.
pub fn walk_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn simulate(g: &WeightedGraph, start: usize, stop: &StopRule, rng: &mut ChaCha8Rng, mut visit: impl FnMut(usize, usize)) -> Result<bool> {
    let origin = g.pos[start];
    let mut v = start;
    visit(0, v);
    for t in 1..=stop.max_steps {
        if !g.active[v] {
            return Err(Error::DomainTooSmall(format!("walk reached boundary vertex {v} after {} steps", t - 1)));
        }
        v = g.step(v, rng);
        visit(t, v);
        if let Some(r) = stop.exit_radius {
            if g.pos[v].dist(origin) >= r {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

pub fn random_walk(g: &WeightedGraph, start: usize, stop: &StopRule, seed: u64, index: u64) -> Result<WalkPath> {
    if start >= g.len() {
        return Err(Error::Invalid(format!("start vertex {start} not in graph")));
    }
    let mut rng = walk_rng(seed, index);
    let mut vertices = Vec::new();
    let exited = simulate(g, start, stop, &mut rng, |_, v| vertices.push(v))?;
    Ok(WalkPath { vertices, seed, index, exited })
}

/// Discrete Fréchet distance between polylines (monotone vertex alignments).
pub fn cmp_distance(a: &[Pt], b: &[Pt]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("empty curve".into()));
    }
    let m = b.len();
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];
    for (i, &p) in a.iter().enumerate() {
        for j in 0..m {
            let d = p.dist(b[j]);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => cur[j - 1].max(d),
                (_, 0) => prev[0].max(d),
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]).max(d),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Fail,
    Underpowered,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MsdPoint {
    pub cap: usize,
    pub mean_steps: f64,
    pub msd: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WalkReport {
    pub seed: u64,
    pub start: usize,
    pub walks: usize,
    pub stop: StopRule,
    pub mean_displacement: Pt,
    pub standard_error: Pt,
    pub total_steps: u64,
    /// Per-step covariance Σ̂ (row-major 2×2).
    pub sigma: [[f64; 2]; 2],
    pub msd: Vec<MsdPoint>,
    pub msd_r2: f64,
    pub exits: usize,
    pub exit_histogram: Vec<usize>,
    pub exit_chi2: f64,
    pub exit_p_value: f64,
    /// Per walk: endpoint, steps, exit angle (NaN if not exited).
    pub endpoints: Vec<(Pt, usize, f64)>,
}

pub const MIN_WALKS: usize = 100;
pub const MIN_EXITS: usize = 60;

impl WalkReport {
    pub fn sigma_matrix(&self) -> Mat2 {
        Mat2(self.sigma)
    }

    pub fn drift_verdict(&self) -> Verdict {
        if self.walks < MIN_WALKS {
            return Verdict::Underpowered;
        }
        let ok = self.mean_displacement.x.abs() < 3.0 * self.standard_error.x
            && self.mean_displacement.y.abs() < 3.0 * self.standard_error.y;
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn msd_verdict(&self) -> Verdict {
        if self.walks < MIN_WALKS || self.msd.len() < 3 {
            Verdict::Underpowered
        } else if self.msd_r2 > 0.99 {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn isotropy_verdict(&self) -> Verdict {
        if self.exits < MIN_EXITS {
            Verdict::Underpowered
        } else if self.exit_p_value > 0.01 {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    /// Per-walk CSV: index, endpoint x, y, steps, exit angle.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("walk,x,y,steps,exit_angle\n");
        for (i, (p, n, a)) in self.endpoints.iter().enumerate() {
            s.push_str(&format!("{i},{:?},{:?},{n},{:?}\n", p.x, p.y, a));
        }
        s
    }
}

struct WalkSummary {
    end: Pt,
    steps: usize,
    exit_angle: Option<f64>,
    sxx: f64,
    sxy: f64,
    syy: f64,
    msd: Vec<(f64, usize)>,
}

fn linear_r2(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy * sxy / (sxx * syy)
}

/// Ensemble of `n_walks` walks from `start`. MSD is E|X_{t∧τ} − X_0|² regressed
/// on E[t∧τ] over `msd_caps`; exit angles are binned into `bins` sectors.
pub fn walk_statistics(
    g: &WeightedGraph,
    start: usize,
    n_walks: usize,
    stop: &StopRule,
    seed: u64,
    msd_caps: &[usize],
    bins: usize,
) -> Result<WalkReport> {
    if start >= g.len() || bins < 2 {
        return Err(Error::Invalid("bad start vertex or bin count".into()));
    }
    let origin = g.pos[start];
    let caps: Vec<usize> = msd_caps.iter().copied().filter(|&c| c <= stop.max_steps).collect();
    let summaries: Vec<Result<WalkSummary>> = (0..n_walks as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = walk_rng(seed, i);
            let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
            let mut last = origin;
            let mut steps = 0;
            let mut msd = vec![(0.0, 0usize); caps.len()];
            let mut k = 0;
            let exited = simulate(g, start, stop, &mut rng, |t, v| {
                let p = g.pos[v];
                if t > 0 {
                    let d = p - last;
                    sxx += d.x * d.x;
                    sxy += d.x * d.y;
                    syy += d.y * d.y;
                }
                last = p;
                steps = t;
                while k < caps.len() && caps[k] == t {
                    msd[k] = ((p - origin).norm2(), t);
                    k += 1;
                }
            })?;
            // stopped walks stay put for the remaining caps
            for slot in msd.iter_mut().skip(k) {
                *slot = ((last - origin).norm2(), steps);
            }
            let d = last - origin;
            Ok(WalkSummary { end: d, steps, exit_angle: exited.then(|| d.arg()), sxx, sxy, syy, msd })
        })
        .collect();
    let mut sums = Vec::with_capacity(n_walks);
    for s in summaries {
        sums.push(s?);
    }
    let n = sums.len().max(1) as f64;
    let mean = sums.iter().fold(Pt::default(), |a, s| a + s.end) / n;
    let var = sums.iter().fold(Pt::default(), |a, s| {
        let d = s.end - mean;
        a + pt(d.x * d.x, d.y * d.y)
    }) / (n - 1.0).max(1.0);
    let se = pt((var.x / n).sqrt(), (var.y / n).sqrt());
    let total: u64 = sums.iter().map(|s| s.steps as u64).sum();
    let tn = (total.max(1)) as f64;
    let sigma = [
        [sums.iter().map(|s| s.sxx).sum::<f64>() / tn, sums.iter().map(|s| s.sxy).sum::<f64>() / tn],
        [sums.iter().map(|s| s.sxy).sum::<f64>() / tn, sums.iter().map(|s| s.syy).sum::<f64>() / tn],
    ];
    let msd: Vec<MsdPoint> = caps
        .iter()
        .enumerate()
        .map(|(k, &cap)| MsdPoint {
            cap,
            mean_steps: sums.iter().map(|s| s.msd[k].1 as f64).sum::<f64>() / n,
            msd: sums.iter().map(|s| s.msd[k].0).sum::<f64>() / n,
        })
        .collect();
    let msd_r2 = linear_r2(&msd.iter().map(|m| m.mean_steps).collect::<Vec<_>>(), &msd.iter().map(|m| m.msd).collect::<Vec<_>>());
    let mut hist = vec![0usize; bins];
    for s in &sums {
        if let Some(a) = s.exit_angle {
            let u = (a + std::f64::consts::PI) / std::f64::consts::TAU;
            hist[((u * bins as f64) as usize).min(bins - 1)] += 1;
        }
    }
    let exits: usize = hist.iter().sum();
    let (chi2, p) = chi_square_uniform(&hist);
    Ok(WalkReport {
        seed,
        start,
        walks: n_walks,
        stop: *stop,
        mean_displacement: mean,
        standard_error: se,
        total_steps: total,
        sigma,
        msd,
        msd_r2,
        exits,
        exit_histogram: hist,
        exit_chi2: chi2,
        exit_p_value: p,
        endpoints: sums.iter().map(|s| (s.end + origin, s.steps, s.exit_angle.unwrap_or(f64::NAN))).collect(),
    })
}

/// χ² statistic against equal cell probabilities and its upper-tail p-value.
pub fn chi_square_uniform(counts: &[usize]) -> (f64, f64) {
    let total: usize = counts.iter().sum();
    if total == 0 || counts.len() < 2 {
        return (0.0, 1.0);
    }
    let e = total as f64 / counts.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).expect("positive dof");
    (chi2, 1.0 - dist.cdf(chi2))
}

/// χ² statistic of observed counts against expected probabilities.
pub fn chi_square(counts: &[usize], probs: &[f64]) -> (f64, f64) {
    let total: usize = counts.iter().sum();
    let chi2: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * total as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).expect("positive dof");
    (chi2, 1.0 - dist.cdf(chi2))
}

/// Visit counts of a long walk (every `thin`-th step) against π/Σπ on a
/// finite graph where every vertex is active. Returns (χ², p-value).
pub fn reversibility_check(g: &WeightedGraph, start: usize, steps: usize, thin: usize, seed: u64) -> Result<(f64, f64)> {
    if g.active.iter().any(|&a| !a) {
        return Err(Error::Invalid("every vertex must be active".into()));
    }
    let mut counts = vec![0usize; g.len()];
    let mut rng = walk_rng(seed, 0);
    simulate(g, start, &StopRule::steps(steps), &mut rng, |t, v| {
        if t > 0 && t % thin.max(1) == 0 {
            counts[v] += 1;
        }
    })?;
    let total_pi: f64 = (0..g.len()).map(|v| g.pi(v)).sum();
    let probs: Vec<f64> = (0..g.len()).map(|v| g.pi(v) / total_pi).collect();
    Ok(chi_square(&counts, &probs))
}

/// A family of vertex paths for exact extremal length.
#[derive(Clone, Debug)]
pub enum PathFamily {
    /// Each entry is the vertex sequence of one path.
    Explicit(Vec<Vec<usize>>),
    /// All simple paths between two vertices.
    Between(usize, usize),
}

pub const VEL_MAX_VERTICES: usize = 12;

fn simple_paths(adj: &[Vec<usize>], s: usize, t: usize) -> Vec<Vec<usize>> {
    fn dfs(adj: &[Vec<usize>], v: usize, t: usize, path: &mut Vec<usize>, seen: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if v == t {
            out.push(path.clone());
            return;
        }
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                path.push(w);
                dfs(adj, w, t, path, seen, out);
                path.pop();
                seen[w] = false;
            }
        }
    }
    let mut out = Vec::new();
    let mut seen = vec![false; adj.len()];
    seen[s] = true;
    dfs(adj, s, t, &mut vec![s], &mut seen, &mut out);
    out
}

/// VEL(Γ) = sup_m len_m(Γ)²/area(m), solved as min ‖m‖² subject to
/// len_m(γ) ≥ 1 for γ ∈ Γ by Hildreth's dual coordinate ascent; the returned
/// value brackets the optimum to relative `1e-10`.
pub fn vel_exact_small(adj: &[Vec<usize>], family: &PathFamily) -> Result<f64> {
    let n = adj.len();
    if n > VEL_MAX_VERTICES {
        return Err(Error::Invalid(format!("exact VEL limited to {VEL_MAX_VERTICES} vertices")));
    }
    let paths = match family {
        PathFamily::Explicit(p) => p.clone(),
        PathFamily::Between(s, t) => {
            if s == t {
                return Err(Error::Degenerate("path family from a vertex to itself".into()));
            }
            simple_paths(adj, *s, *t)
        }
    };
    if paths.is_empty() {
        return Err(Error::Invalid("empty path family".into()));
    }
    // incidence vectors: each vertex counted once per path
    let rows: Vec<Vec<usize>> = paths
        .iter()
        .map(|p| {
            let mut r = p.clone();
            r.sort_unstable();
            r.dedup();
            r
        })
        .collect();
    if rows.iter().any(|r| r.len() < 2 || r.iter().any(|&v| v >= n)) {
        return Err(Error::Degenerate("path family contains a single-vertex or out-of-range path".into()));
    }
    let mut lambda = vec![0.0; rows.len()];
    let mut m = vec![0.0; n];
    let mut best = (0.0f64, f64::INFINITY);
    for sweep in 0..200_000 {
        for (k, r) in rows.iter().enumerate() {
            let len: f64 = r.iter().map(|&v| m[v]).sum();
            let new = (lambda[k] + (1.0 - len) / r.len() as f64).max(0.0);
            let d = new - lambda[k];
            if d != 0.0 {
                for &v in r {
                    m[v] += d;
                }
                lambda[k] = new;
            }
        }
        if sweep % 8 == 7 {
            let area: f64 = m.iter().map(|x| x * x).sum();
            let dual = lambda.iter().sum::<f64>() - 0.5 * area;
            let shortest = rows.iter().map(|r| r.iter().map(|&v| m[v]).sum::<f64>()).fold(f64::INFINITY, f64::min);
            let lower = if area > 0.0 { shortest * shortest / area } else { 0.0 };
            let upper = if dual > 0.0 { 1.0 / (2.0 * dual) } else { f64::INFINITY };
            best = (best.0.max(lower), best.1.min(upper));
            if best.1 - best.0 <= 1e-10 * best.0 {
                return Ok(0.5 * (best.0 + best.1));
            }
        }
    }
    Err(Error::NoConvergence { iterations: 200_000, residual: best.1 - best.0 })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VelCheck {
    pub vertex: usize,
    pub lower_bound: f64,
    pub best_metric: String,
    pub paper_bound: f64,
    pub pass: bool,
}

#[derive(PartialEq)]
struct HeapItem(f64, usize, u8);
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1)).then(o.2.cmp(&self.2))
    }
}

/// Shortest closed walk through `v` crossing the ray from `o` an odd number
/// of times, with vertex weights `m`; `v0` is removed. Such walks include all
/// simple loops around `v0`, so the value is at most len_m(Γ_{v,v0}).
fn shortest_odd_loop(packing: &CirclePacking, v: usize, v0: usize, m: &[f64]) -> Option<f64> {
    let o = packing.centers[v0];
    let dir = Pt::polar(1.0, std::f64::consts::FRAC_1_PI);
    let crosses = |a: Pt, b: Pt| -> bool {
        // segment a-b meets the ray o + s·dir, s ≥ 0
        let (p, q) = (a - o, b - o);
        let (cp, cq) = (dir.cross(p), dir.cross(q));
        if (cp > 0.0) == (cq > 0.0) {
            return false;
        }
        let t = cp / (cp - cq);
        let x = p + (q - p) * t;
        x.dot(dir) >= 0.0
    };
    let tri = &packing.tri;
    let n = tri.num_vertices();
    let mut dist = vec![[f64::INFINITY; 2]; n];
    dist[v][0] = m[v];
    let mut heap = BinaryHeap::new();
    heap.push(HeapItem(m[v], v, 0));
    while let Some(HeapItem(d, u, par)) = heap.pop() {
        if d > dist[u][par as usize] {
            continue;
        }
        if u == v && par == 1 {
            return Some(d - m[v]);
        }
        for w in tri.neighbors(u) {
            if w == v0 {
                continue;
            }
            let p2 = par ^ crosses(packing.centers[u], packing.centers[w]) as u8;
            let nd = d + m[w];
            if nd < dist[w][p2 as usize] {
                dist[w][p2 as usize] = nd;
                heap.push(HeapItem(nd, w, p2));
            }
        }
    }
    None
}

/// Lower bound on VEL(Γ_{v,v0}) from candidate metrics, against 4|z_v|/r_v
/// with z measured from the centre of v0's circle.
pub fn vel_bound_check(packing: &CirclePacking, v: usize, v0: usize) -> Result<VelCheck> {
    if v == v0 {
        return Err(Error::Invalid("v must differ from v0".into()));
    }
    let o = packing.centers[v0];
    let n = packing.tri.num_vertices();
    let zv = (packing.centers[v] - o).norm();
    let rv = packing.radii[v];
    let paper_bound = 4.0 * zv / rv;
    let (lo, hi) = (zv - rv, zv + rv);
    let annulus: Vec<f64> = (0..n)
        .map(|w| {
            if w == v0 {
                return 0.0;
            }
            let zw = (packing.centers[w] - o).norm();
            let a = (zw - packing.radii[w]).max(lo);
            let b = (zw + packing.radii[w]).min(hi);
            (b - a).max(0.0)
        })
        .collect();
    let uniform: Vec<f64> = (0..n).map(|w| if w == v0 { 0.0 } else { 1.0 }).collect();
    let dist = packing.tri.bfs_distances(v0);
    let dv = dist[v];
    let ring: Vec<f64> = (0..n).map(|w| if w != v0 && dist[w] <= dv { 1.0 } else { 0.0 }).collect();
    let mut lower: f64 = 0.0;
    let mut best = String::from("none");
    let mut any = false;
    for (name, m) in [("annulus", &annulus), ("uniform", &uniform), ("ball", &ring)] {
        let area: f64 = m.iter().map(|x| x * x).sum();
        if area == 0.0 {
            continue;
        }
        if let Some(len) = shortest_odd_loop(packing, v, v0, m) {
            any = true;
            let q = len * len / area;
            if q > lower {
                lower = q;
                best = name.to_string();
            }
        }
    }
    if !any {
        return Err(Error::DomainTooSmall("no loop around v0 through v in the finite graph".into()));
    }
    Ok(VelCheck { vertex: v, lower_bound: lower, best_metric: best, paper_bound, pass: lower <= paper_bound * (1.0 + 1e-9) })
}

/// max diam of circles meeting B(0; r) divided by r, for each r. The packing
/// must reach beyond B(0; r): every boundary circle must lie outside it.
pub fn macroscopic_disk_scan(packing: &CirclePacking, radii: &[f64]) -> Result<Vec<(f64, f64)>> {
    let inner_edge = packing
        .tri
        .boundary_vertices()
        .iter()
        .map(|&b| packing.centers[b].norm() - packing.radii[b])
        .fold(f64::INFINITY, f64::min);
    let mut out = Vec::new();
    for &r in radii {
        let covers_all = packing.centers.iter().zip(&packing.radii).any(|(c, &s)| c.norm() + r <= s);
        if r > inner_edge && !covers_all {
            return Err(Error::InsufficientWindow(format!("packing does not cover B(0; {r})")));
        }
        let m = packing
            .centers
            .iter()
            .zip(&packing.radii)
            .filter(|(c, &s)| c.norm() - s <= r)
            .map(|(_, &s)| 2.0 * s)
            .fold(0.0, f64::max);
        out.push((r, m / r));
    }
    Ok(out)
}

/// Vertices of `g` reachable from `start` through active vertices.
pub fn reachable(g: &WeightedGraph, start: usize) -> HashSet<usize> {
    let mut seen = HashSet::from([start]);
    let mut stack = vec![start];
    while let Some(u) = stack.pop() {
        if !g.active[u] {
            continue;
        }
        for &(w, _) in &g.adj[u] {
            if seen.insert(w) {
                stack.push(w);
            }
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle_pack::{pack, BoundaryCondition, SolveOptions};
    use crate::generators::triangular_patch;

    #[test]
    fn equal_radii_conductance() {
        assert!((dubejko_conductance(1.0, 1.0, 1.0, 1.0) - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((dubejko_conductance(1.0, 1.0, 1e12, 1e12) - 1.0).abs() < 1e-5);
        assert!(dubejko_conductance(1e-14, 1.0, 1.0, 1.0) < 1e-6);
    }

    #[test]
    fn frechet_basics() {
        let a = [pt(0.0, 0.0), pt(1.0, 0.0), pt(2.0, 0.0)];
        assert_eq!(cmp_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(cmp_distance(&[pt(0.0, 0.0)], &[pt(3.0, 4.0)]).unwrap(), 5.0);
        let b = [pt(0.0, 0.0), pt(0.5, 0.0), pt(1.0, 0.0), pt(1.5, 0.0), pt(2.0, 0.0)];
        assert!(cmp_distance(&a, &b).unwrap() <= 0.5);
        assert!(cmp_distance(&[], &a).is_err());
    }

    #[test]
    fn vel_oracles() {
        let edge = vec![vec![1], vec![0]];
        assert!((vel_exact_small(&edge, &PathFamily::Between(0, 1)).unwrap() - 2.0).abs() < 1e-4);
        let path = vec![vec![1], vec![0, 2], vec![1]];
        assert!((vel_exact_small(&path, &PathFamily::Between(0, 2)).unwrap() - 3.0).abs() < 1e-4);
        // s=0, t=3, middles 1 and 2: optimum m = (1, 1/2, 1/2, 1) gives 5/2
        let diamond = vec![vec![1, 2], vec![0, 3], vec![0, 3], vec![1, 2]];
        assert!((vel_exact_small(&diamond, &PathFamily::Between(0, 3)).unwrap() - 2.5).abs() < 1e-4);
        assert!(vel_exact_small(&edge, &PathFamily::Explicit(vec![vec![0]])).is_err());
        assert!(vel_exact_small(&edge, &PathFamily::Explicit(vec![])).is_err());
    }

    #[test]
    fn lattice_walk_is_uniform_and_martingale() {
        let (tri, _) = triangular_patch(6);
        let n = tri.num_vertices();
        let mut radii = vec![1.0; n];
        radii[0] = 1.0;
        let p = pack(&tri, &BoundaryCondition::FixedRadii(radii), 0, &SolveOptions::default()).unwrap();
        let w = dubejko_weights(&p);
        for (_, r) in martingale_residuals(&p, &w.graph) {
            assert!(r < 1e-9);
        }
        let path = random_walk(&w.graph, 0, &StopRule::steps(0), 1, 0).unwrap();
        assert_eq!(path.vertices, vec![0]);
        let a = random_walk(&w.graph, 0, &StopRule { max_steps: 1000, exit_radius: Some(8.0) }, 5, 3).unwrap();
        let b = random_walk(&w.graph, 0, &StopRule { max_steps: 1000, exit_radius: Some(8.0) }, 5, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.exited);
    }
}
