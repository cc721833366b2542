//! Experiment configs, cell-versus-embedding comparison pipelines, gauge
//! estimation, run reports and the verification suite.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell_config::{CellConfiguration, DyadicSystem};
use crate::circle_pack::{self, BoundaryCondition, CirclePacking, SolveOptions, Truncation};
use crate::corrector::{self, fit_linear_gauge, GaugeFit};
use crate::error::{Error, Result};
use crate::generators::{self, GeneratorSpec};
use crate::geometry::{diameter, pt, Mat2, Pt, Square};
use crate::planar_map::HalfEdgeMap;
use crate::surface::{self, EquilateralSurface, Subdivision, SurfacePortion};
use crate::walks::{self, DubejkoVariant, PathFamily, StopRule, Verdict, WalkReport};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Pack,
    Uniformize,
    Walk,
    Verify,
}

fn default_out() -> String {
    "out".into()
}
fn default_radii() -> Vec<f64> {
    vec![8.0, 16.0, 32.0, 64.0]
}
fn default_annulus() -> [f64; 2] {
    [36.0, 60.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PackSection {
    /// Evaluation radii r.
    pub radii: Vec<f64>,
    /// Truncation radius is `margin · max(radii)`.
    pub margin: f64,
    /// Cells with |c(H)| in this range calibrate the gauge.
    pub calibration: [f64; 2],
}

impl Default for PackSection {
    fn default() -> Self {
        PackSection { radii: default_radii(), margin: 1.5, calibration: default_annulus() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniformizeSection {
    /// Evaluation scales 2^k.
    pub k: Vec<i32>,
    /// S = [−h, h]² with h = `s_factor · 2^max(k)`.
    pub s_factor: f64,
    pub n: usize,
    pub calibration: [f64; 2],
    /// Refinement check: M([−2^refine_k, 2^refine_k]²) at both levels.
    pub refine_k: i32,
    pub refine_n: [usize; 2],
}

impl Default for UniformizeSection {
    fn default() -> Self {
        UniformizeSection { k: vec![3, 4, 5, 6], s_factor: 4.0, n: 1, calibration: default_annulus(), refine_k: 4, refine_n: [8, 16] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalkSection {
    pub walks: usize,
    pub steps: usize,
    /// Radius of the truncation that is packed.
    pub truncation: f64,
    /// Exit radius in units of the packing disk.
    pub exit_fraction: f64,
    pub msd_caps: Vec<usize>,
    pub bins: usize,
}

impl Default for WalkSection {
    fn default() -> Self {
        WalkSection {
            walks: 1000,
            steps: 10_000,
            truncation: 28.0,
            exit_fraction: 0.75,
            msd_caps: vec![25, 50, 100, 200, 400, 800, 1600],
            bins: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Trend passes when last/first is below this.
    pub trend_ratio: f64,
    /// Fraction of seeds that must pass.
    pub majority: f64,
    /// Refinement displacement bound, relative to |S|.
    pub refine: f64,
    pub solver: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { trend_ratio: 0.5, majority: 0.8, refine: 1e-2, solver: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pipeline: Pipeline,
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out: String,
    #[serde(default)]
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub pack: PackSection,
    #[serde(default)]
    pub uniformize: UniformizeSection,
    #[serde(default)]
    pub walk: WalkSection,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn strictly_increasing<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl ExperimentConfig {
    pub fn new(pipeline: Pipeline, generator: GeneratorSpec, seeds: Vec<u64>) -> Self {
        ExperimentConfig {
            pipeline,
            seeds,
            out: default_out(),
            generator,
            pack: PackSection::default(),
            uniformize: UniformizeSection::default(),
            walk: WalkSection::default(),
            tolerances: Tolerances::default(),
        }
    }

    /// Poisson–Voronoi (λ = 1) defaults with a window large enough for the pipeline.
    pub fn preset(pipeline: Pipeline) -> Self {
        let window = match pipeline {
            Pipeline::Pack => 200.0,
            Pipeline::Uniformize => 528.0,
            Pipeline::Walk | Pipeline::Verify => 64.0,
        };
        ExperimentConfig::new(pipeline, GeneratorSpec::voronoi(1.0, window, 1), (1..=10).collect())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        if self.pack.radii.is_empty() || !strictly_increasing(&self.pack.radii) || self.pack.radii[0] <= 0.0 {
            return Err(Error::Config("pack.radii must be positive and increasing".into()));
        }
        if self.uniformize.k.is_empty() || !strictly_increasing(&self.uniformize.k) {
            return Err(Error::Config("uniformize.k must be increasing".into()));
        }
        if self.pack.margin < 1.0 || self.uniformize.s_factor < 1.0 {
            return Err(Error::Config("margins must be at least 1".into()));
        }
        if self.uniformize.n == 0 || self.uniformize.refine_n[0] == 0 || self.uniformize.refine_n[0] >= self.uniformize.refine_n[1] {
            return Err(Error::Config("subdivision levels must be positive and refine_n increasing".into()));
        }
        for a in [self.pack.calibration, self.uniformize.calibration] {
            if !(a[0] >= 0.0 && a[0] < a[1]) {
                return Err(Error::Config("calibration annulus must satisfy 0 ≤ inner < outer".into()));
            }
        }
        if !(self.walk.exit_fraction > 0.0 && self.walk.exit_fraction < 1.0) {
            return Err(Error::Config("walk.exit_fraction must lie in (0, 1)".into()));
        }
        if !strictly_increasing(&self.walk.msd_caps) {
            return Err(Error::Config("walk.msd_caps must be increasing".into()));
        }
        if !(0.0..=1.0).contains(&self.tolerances.majority) {
            return Err(Error::Config("tolerances.majority must lie in [0, 1]".into()));
        }
        self.generator.check()
    }

    fn spec(&self, seed: u64) -> GeneratorSpec {
        GeneratorSpec { seed, ..self.generator.clone() }
    }

    pub fn seeds_needed(&self) -> usize {
        (self.tolerances.majority * self.seeds.len() as f64).ceil() as usize
    }
}

/// Which seed and operation produced a number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Backlink {
    pub seed: u64,
    pub module: String,
    pub operation: String,
}

impl Backlink {
    fn new(seed: u64, module: &str, operation: &str) -> Self {
        Backlink { seed, module: module.into(), operation: operation.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// r, or 2^k.
    pub scale: f64,
    pub k: Option<i32>,
    pub cells: usize,
    pub vertex_metric: f64,
    pub edge_metric: Option<f64>,
    /// Vertex metric with the fitted rotation perturbed by 10°.
    pub misrotated: f64,
    pub source: Backlink,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendVerdict {
    pub decreasing: bool,
    pub ratio: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl TrendVerdict {
    /// Strictly decreasing and last/first below `threshold`.
    pub fn evaluate(values: &[f64], threshold: f64) -> TrendVerdict {
        let decreasing = values.len() >= 2 && values.windows(2).all(|w| w[1] < w[0]);
        let ratio = match (values.first(), values.last()) {
            (Some(&a), Some(&b)) if a > 0.0 => b / a,
            _ => f64::NAN,
        };
        TrendVerdict { decreasing, ratio, threshold, pass: decreasing && ratio < threshold }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// "packing" or "uniformization".
    pub kind: String,
    pub seed: u64,
    pub gauge: GaugeFit,
    pub calibration: [f64; 2],
    pub calibration_pairs: usize,
    pub rows: Vec<MetricRow>,
    pub trend: TrendVerdict,
    pub edge_trend: Option<TrendVerdict>,
    /// Fitted gauge beats the 10° misrotation at every scale.
    pub misrotation_worse: bool,
    pub residuals: BTreeMap<String, f64>,
}

/// Errors when an evaluation radius falls inside the calibration annulus.
pub fn check_split(scales: &[f64], calibration: [f64; 2]) -> Result<()> {
    if let Some(r) = scales.iter().find(|&&r| r >= calibration[0] && r <= calibration[1]) {
        return Err(Error::Invalid(format!(
            "evaluation radius {r} lies inside the calibration annulus [{}, {}]",
            calibration[0], calibration[1]
        )));
    }
    Ok(())
}

fn calibration_pairs(points: impl Iterator<Item = (Pt, Pt)>, annulus: [f64; 2]) -> Vec<(Pt, Pt)> {
    points.filter(|(c, _)| (annulus[0]..=annulus[1]).contains(&c.norm())).collect()
}

fn rotated(g: &GaugeFit, dtheta: f64) -> GaugeFit {
    GaugeFit { theta: g.theta + dtheta, ..*g }
}

fn vertex_metric(pairs: &[(Pt, Pt)], gauge: &GaugeFit, scale: f64) -> f64 {
    pairs.iter().map(|&(c, o)| (gauge.apply(c) - o).norm()).fold(0.0, f64::max) / (gauge.scale * scale)
}

/// (1/(ã r))·max over H ∈ H(B(0; r)) of |gauge(c(H)) − o(H)|, for the cells
/// `ids[v]` packed by `packing`. Every cell of H(B(0; r)) must be packed.
pub fn packing_metric(
    config: &CellConfiguration,
    ids: &[usize],
    packing: &CirclePacking,
    gauge: &GaugeFit,
    r: f64,
) -> Result<(f64, usize)> {
    let local: HashMap<usize, usize> = ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let cells = config.cells_meeting_disk(Pt::default(), r)?;
    let mut pairs = Vec::with_capacity(cells.len());
    for h in &cells {
        let v = *local
            .get(h)
            .ok_or_else(|| Error::InsufficientWindow(format!("cell {h} of H(B(0; {r})) is not in the packing")))?;
        pairs.push((config.cells[*h].centroid, packing.centers[v]));
    }
    Ok((vertex_metric(&pairs, gauge, r), cells.len()))
}

/// Fits the gauge on the calibration annulus and evaluates the packing metric on each radius.
pub fn compare_packing(
    config: &CellConfiguration,
    trunc: &Truncation,
    packing: &CirclePacking,
    radii: &[f64],
    calibration: [f64; 2],
    ratio: f64,
    seed: u64,
) -> Result<ComparisonReport> {
    check_split(radii, calibration)?;
    let pairs = calibration_pairs(
        trunc.ids.iter().enumerate().map(|(v, &h)| (config.cells[h].centroid, packing.centers[v])),
        calibration,
    );
    let gauge = fit_linear_gauge(&pairs)?;
    let mis = rotated(&gauge, 10f64.to_radians());
    let mut rows = Vec::new();
    for &r in radii {
        let (m, cells) = packing_metric(config, &trunc.ids, packing, &gauge, r)?;
        let (bad, _) = packing_metric(config, &trunc.ids, packing, &mis, r)?;
        rows.push(MetricRow {
            scale: r,
            k: None,
            cells,
            vertex_metric: m,
            edge_metric: None,
            misrotated: bad,
            source: Backlink::new(seed, "compare", "compare_packing"),
        });
    }
    let values: Vec<f64> = rows.iter().map(|r| r.vertex_metric).collect();
    let check = packing.check();
    let residuals = BTreeMap::from([
        ("angle".to_string(), check.max_angle_residual),
        ("tangency".to_string(), check.max_tangency_rel),
        ("gauge_rms".to_string(), gauge.residual),
    ]);
    Ok(ComparisonReport {
        kind: "packing".into(),
        seed,
        gauge,
        calibration,
        calibration_pairs: pairs.len(),
        misrotation_worse: rows.iter().all(|r| r.misrotated > r.vertex_metric),
        trend: TrendVerdict::evaluate(&values, ratio),
        edge_trend: None,
        rows,
        residuals,
    })
}

/// Image diameter of each surface edge whose endpoints both lie in `keep`,
/// sampled at the n+1 subdivision points along the edge.
pub fn edge_image_diameters(
    surface: &EquilateralSurface,
    portion: &SurfacePortion,
    sub: &Subdivision,
    values: &[Pt],
    keep: &HashSet<usize>,
) -> Result<Vec<((usize, usize), f64)>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for &f in &portion.faces {
        let verts = &surface.faces[f];
        let chart = surface.chart(f);
        let p = verts.len();
        for i in 0..p {
            let (u, v) = (verts[i], verts[(i + 1) % p]);
            if !keep.contains(&u) || !keep.contains(&v) || !seen.insert((u.min(v), u.max(v))) {
                continue;
            }
            let mut pts = Vec::with_capacity(sub.n + 1);
            for s in 0..=sub.n {
                let x = chart[i].lerp(chart[(i + 1) % p], s as f64 / sub.n as f64);
                pts.push(sub.eval(values, f, x).ok_or_else(|| Error::Inconsistent(format!("edge point of face {f} not located")))?);
            }
            out.push(((u.min(v), u.max(v)), diameter(&pts)));
        }
    }
    Ok(out)
}

/// Vertex and edge metrics of a PL map on the subdivision of M(S) against
/// the cell centres, per scale 2^k, with the gauge fitted on the annulus.
#[allow(clippy::too_many_arguments)]
pub fn compare_uniformization(
    config: &CellConfiguration,
    surface: &EquilateralSurface,
    portion: &SurfacePortion,
    sub: &Subdivision,
    values: &[Pt],
    ks: &[i32],
    calibration: [f64; 2],
    ratio: f64,
    seed: u64,
) -> Result<ComparisonReport> {
    let scales: Vec<f64> = ks.iter().map(|&k| 2f64.powi(k)).collect();
    check_split(&scales, calibration)?;
    let image = |h: usize| sub.vertex_of(h).map(|i| values[i]);
    let pairs = calibration_pairs(
        portion.vertices.iter().filter_map(|&h| image(h).map(|o| (config.cells[h].centroid, o))),
        calibration,
    );
    let gauge = fit_linear_gauge(&pairs)?;
    let mis = rotated(&gauge, 10f64.to_radians());
    let largest = *scales.last().unwrap();
    let outer: HashSet<usize> = config.cells_meeting_disk(Pt::default(), largest)?.into_iter().collect();
    let edges = edge_image_diameters(surface, portion, sub, values, &outer)?;
    let mut rows = Vec::new();
    for (&k, &r) in ks.iter().zip(&scales) {
        let cells = config.cells_meeting_disk(Pt::default(), r)?;
        let mut vp = Vec::with_capacity(cells.len());
        for &h in &cells {
            let o = image(h).ok_or_else(|| Error::InsufficientWindow(format!("cell {h} of H(B(0; {r})) is not in M(S)")))?;
            vp.push((config.cells[h].centroid, o));
        }
        let set: HashSet<usize> = cells.iter().copied().collect();
        let e = edges
            .iter()
            .filter(|((u, v), _)| set.contains(u) && set.contains(v))
            .map(|(_, d)| *d)
            .fold(0.0, f64::max)
            / (gauge.scale * r);
        rows.push(MetricRow {
            scale: r,
            k: Some(k),
            cells: cells.len(),
            vertex_metric: vertex_metric(&vp, &gauge, r),
            edge_metric: Some(e),
            misrotated: vertex_metric(&vp, &mis, r),
            source: Backlink::new(seed, "compare", "compare_uniformization"),
        });
    }
    let vm: Vec<f64> = rows.iter().map(|r| r.vertex_metric).collect();
    let em: Vec<f64> = rows.iter().filter_map(|r| r.edge_metric).collect();
    Ok(ComparisonReport {
        kind: "uniformization".into(),
        seed,
        gauge,
        calibration,
        calibration_pairs: pairs.len(),
        misrotation_worse: rows.iter().all(|r| r.misrotated > r.vertex_metric),
        trend: TrendVerdict::evaluate(&vm, ratio),
        edge_trend: Some(TrendVerdict::evaluate(&em, ratio)),
        rows,
        residuals: BTreeMap::from([("gauge_rms".to_string(), gauge.residual)]),
    })
}

/// A = Σ̂^{-1/2}·det(Σ̂)^{1/4}, so that det A = 1.
pub fn covariance_gauge(sigma: &Mat2) -> Result<GaugeFit> {
    let s = sigma.0;
    if !s.iter().flatten().all(|x| x.is_finite()) || (s[0][1] - s[1][0]).abs() > 1e-12 * (s[0][0].abs() + s[1][1].abs()) {
        return Err(Error::Degenerate("covariance must be finite and symmetric".into()));
    }
    let (ev, _) = sigma.sym_eigen();
    if !(ev[0] > 0.0 && ev[1] > 0.0) {
        return Err(Error::Degenerate(format!("covariance is not positive definite (eigenvalues {:e}, {:e})", ev[0], ev[1])));
    }
    let a = sigma.sym_pow(-0.5).scale(sigma.det().powf(0.25));
    Ok(GaugeFit { matrix: a, theta: 0.0, scale: 1.0, residual: 0.0 })
}

/// Step-weighted mean of per-ensemble covariances.
pub fn pooled_sigma(reports: &[WalkSummary]) -> Mat2 {
    let total: f64 = reports.iter().map(|r| r.total_steps as f64).sum::<f64>().max(1.0);
    let mut m = [[0.0; 2]; 2];
    for r in reports {
        let w = r.total_steps as f64 / total;
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] += w * r.sigma[i][j];
            }
        }
    }
    Mat2(m)
}

/// Frobenius distance to the identity.
pub fn distance_to_identity(a: &Mat2) -> f64 {
    a.sub(&Mat2::IDENTITY).frobenius2().sqrt()
}

/// A walk report without per-walk endpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkSummary {
    pub seed: u64,
    pub walks: usize,
    pub total_steps: u64,
    pub exit_radius: f64,
    pub mean_displacement: Pt,
    pub standard_error: Pt,
    pub sigma: [[f64; 2]; 2],
    pub msd_r2: f64,
    pub exits: usize,
    pub exit_p_value: f64,
    pub drift: Verdict,
    pub msd: Verdict,
    pub isotropy: Verdict,
    pub gauge: Option<GaugeFit>,
    pub gauge_distance: Option<f64>,
    pub max_martingale_residual: f64,
    pub source: Backlink,
}

impl WalkSummary {
    fn from_report(r: &WalkReport, exit_radius: f64, martingale: f64) -> Self {
        let gauge = covariance_gauge(&r.sigma_matrix()).ok();
        WalkSummary {
            seed: r.seed,
            walks: r.walks,
            total_steps: r.total_steps,
            exit_radius,
            mean_displacement: r.mean_displacement,
            standard_error: r.standard_error,
            sigma: r.sigma,
            msd_r2: r.msd_r2,
            exits: r.exits,
            exit_p_value: r.exit_p_value,
            drift: r.drift_verdict(),
            msd: r.msd_verdict(),
            isotropy: r.isotropy_verdict(),
            gauge_distance: gauge.as_ref().map(|g| distance_to_identity(&g.matrix)),
            gauge,
            max_martingale_residual: martingale,
            source: Backlink::new(r.seed, "walks", "walk_statistics"),
        }
    }

    pub fn pass(&self) -> bool {
        [self.drift, self.msd, self.isotropy].iter().all(|v| *v == Verdict::Pass)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub k: i32,
    pub side: f64,
    pub n: [usize; 2],
    /// max displacement of vertices off ∂M(S), divided by |S|.
    pub relative_displacement: f64,
    /// Same over ∂M(S). Boundary images are circle centres, which sit one
    /// boundary radius (about |S|/n) inside the disk.
    pub boundary_displacement: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub source: Backlink,
}

fn solve_opts(tol: f64) -> SolveOptions {
    SolveOptions { tol, ..SolveOptions::default() }
}

/// Maximal packing of the cells meeting B(0; radius).
pub fn pack_truncation(config: &CellConfiguration, radius: f64, tol: f64) -> Result<(Truncation, CirclePacking)> {
    let trunc = generators::disk_truncation(config, Pt::default(), radius)?;
    let radii = circle_pack::solve_radii(&trunc.tri, &BoundaryCondition::MaximalInDisk, &solve_opts(tol))?;
    let packing = circle_pack::layout(&trunc.tri, &radii, trunc.root, None)?;
    Ok((trunc, packing))
}

pub fn run_pack_seed(cfg: &ExperimentConfig, seed: u64) -> Result<ComparisonReport> {
    let config = generators::generate(&cfg.spec(seed))?;
    let radius = cfg.pack.margin * cfg.pack.radii.last().unwrap();
    let (trunc, packing) = pack_truncation(&config, radius, cfg.tolerances.solver)?;
    compare_packing(&config, &trunc, &packing, &cfg.pack.radii, cfg.pack.calibration, cfg.tolerances.trend_ratio, seed)
}

/// M(S) for S = [−h, h]² and its discrete conformal map at level n.
pub fn uniformize_square(
    config: &CellConfiguration,
    surface: &EquilateralSurface,
    half_side: f64,
    n: usize,
    tol: f64,
) -> Result<(SurfacePortion, surface::DiscreteConformalMap)> {
    let s = Square::centered(Pt::default(), 2.0 * half_side);
    let portion = surface::build_M_S(config, surface, &s)?;
    if portion.is_empty() {
        return Err(Error::InsufficientWindow(format!("M(S) is empty: {}", portion.diagnostic.clone().unwrap_or_default())));
    }
    let map = surface::uniformize_approx(surface, &portion, n, &solve_opts(tol))?;
    Ok((portion, map))
}

pub fn run_uniformize_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(ComparisonReport, Refinement)> {
    let u = &cfg.uniformize;
    let config = generators::generate(&cfg.spec(seed))?;
    let surface = surface::build_surface(&config.map)?;
    let half = u.s_factor * 2f64.powi(*u.k.last().unwrap());
    let (portion, map) = uniformize_square(&config, &surface, half, u.n, cfg.tolerances.solver)?;
    let mut report =
        compare_uniformization(&config, &surface, &portion, &map.sub, &map.images, &u.k, u.calibration, cfg.tolerances.trend_ratio, seed)?;
    report.residuals.insert("packing".into(), map.residual);
    report.residuals.insert("orientation_violations".into(), map.orientation_violations() as f64);
    let rh = 2f64.powi(u.refine_k);
    let (p, a) = uniformize_square(&config, &surface, rh, u.refine_n[0], cfg.tolerances.solver)?;
    let (_, b) = uniformize_square(&config, &surface, rh, u.refine_n[1], cfg.tolerances.solver)?;
    let rel = a.displacement_where(&b, |v| p.is_interior(v)) / b.radius;
    let refinement = Refinement {
        k: u.refine_k,
        side: b.radius,
        n: u.refine_n,
        relative_displacement: rel,
        boundary_displacement: a.displacement_where(&b, |v| !p.is_interior(v)) / b.radius,
        tolerance: cfg.tolerances.refine,
        pass: rel < cfg.tolerances.refine,
        source: Backlink::new(seed, "surface", "uniformize_approx"),
    };
    Ok((report, refinement))
}

/// Packs a truncation and runs Dubejko walks from the root.
pub fn run_walk_seed(cfg: &ExperimentConfig, seed: u64, variant: DubejkoVariant) -> Result<(WalkSummary, WalkReport)> {
    let w = &cfg.walk;
    let config = generators::generate(&cfg.spec(seed))?;
    let (_, packing) = pack_truncation(&config, w.truncation, cfg.tolerances.solver)?;
    let weights = walks::dubejko_weights_variant(&packing, variant);
    let mart = walks::martingale_residuals(&packing, &weights.graph).iter().map(|x| x.1).fold(0.0, f64::max);
    let stop = StopRule { max_steps: w.steps, exit_radius: Some(w.exit_fraction) };
    let report = walks::walk_statistics(&weights.graph, packing.root, w.walks, &stop, seed, &w.msd_caps, w.bins)?;
    Ok((WalkSummary::from_report(&report, w.exit_fraction, mart), report))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub comparison: Option<ComparisonReport>,
    pub refinement: Option<Refinement>,
    pub walk: Option<WalkSummary>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seeds: usize,
    pub needed: usize,
    pub passing: usize,
    pub edge_passing: Option<usize>,
    pub errors: usize,
    pub pooled_gauge: Option<GaugeFit>,
    pub pooled_gauge_distance: Option<f64>,
    /// Coefficient of variation of per-seed ‖A − I‖.
    pub gauge_cv: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub pipeline: Pipeline,
    pub config: ExperimentConfig,
    pub outcomes: Vec<SeedOutcome>,
    pub verify: Option<VerifySummary>,
    pub summary: RunSummary,
}

fn coefficient_of_variation(x: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m != 0.0).then(|| v.sqrt() / m.abs())
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let outcome = |seed: u64| -> SeedOutcome {
        let mut o = SeedOutcome { seed, ..Default::default() };
        let r = match cfg.pipeline {
            Pipeline::Pack => run_pack_seed(cfg, seed).map(|c| o.comparison = Some(c)),
            Pipeline::Uniformize => run_uniformize_seed(cfg, seed).map(|(c, r)| {
                o.comparison = Some(c);
                o.refinement = Some(r);
            }),
            Pipeline::Walk => run_walk_seed(cfg, seed, DubejkoVariant::Exact).map(|(w, _)| o.walk = Some(w)),
            Pipeline::Verify => Ok(()),
        };
        if let Err(e) = r {
            o.error = Some(e.to_string());
        }
        o
    };
    let verify = (cfg.pipeline == Pipeline::Verify)
        .then(|| run_verify_suite(&VerifyOptions { seed: cfg.seeds[0], ..VerifyOptions::default() }));
    let outcomes: Vec<SeedOutcome> =
        if verify.is_some() { Vec::new() } else { cfg.seeds.par_iter().map(|&s| outcome(s)).collect() };
    let needed = cfg.seeds_needed();
    let errors = outcomes.iter().filter(|o| o.error.is_some()).count();
    let mut summary = RunSummary {
        seeds: cfg.seeds.len(),
        needed,
        passing: 0,
        edge_passing: None,
        errors,
        pooled_gauge: None,
        pooled_gauge_distance: None,
        gauge_cv: None,
        pass: false,
    };
    match cfg.pipeline {
        Pipeline::Pack | Pipeline::Uniformize => {
            summary.passing = outcomes
                .iter()
                .filter(|o| o.comparison.as_ref().is_some_and(|c| c.trend.pass) && o.refinement.as_ref().is_none_or(|r| r.pass))
                .count();
            if cfg.pipeline == Pipeline::Uniformize {
                let e = outcomes
                    .iter()
                    .filter(|o| o.comparison.as_ref().and_then(|c| c.edge_trend.as_ref()).is_some_and(|t| t.pass))
                    .count();
                summary.edge_passing = Some(e);
            }
            summary.pass = summary.passing >= needed && summary.edge_passing.is_none_or(|e| e >= needed);
        }
        Pipeline::Walk => {
            let ws: Vec<WalkSummary> = outcomes.iter().filter_map(|o| o.walk.clone()).collect();
            summary.passing = ws.iter().filter(|w| w.pass()).count();
            if !ws.is_empty() {
                if let Ok(g) = covariance_gauge(&pooled_sigma(&ws)) {
                    summary.pooled_gauge_distance = Some(distance_to_identity(&g.matrix));
                    summary.pooled_gauge = Some(g);
                }
                let d: Vec<f64> = ws.iter().filter_map(|w| w.gauge_distance).collect();
                summary.gauge_cv = coefficient_of_variation(&d);
            }
            summary.pass = summary.passing >= needed;
        }
        Pipeline::Verify => {
            let v = verify.as_ref().unwrap();
            summary.passing = v.checks.iter().filter(|c| c.verdict == Verdict::Pass).count();
            summary.pass = v.pass;
        }
    }
    Ok(RunReport { version: VERSION.into(), pipeline: cfg.pipeline, config: cfg.clone(), outcomes, verify, summary })
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per (seed, r) or (seed, k); one row per seed for walks.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        match self.pipeline {
            Pipeline::Pack | Pipeline::Uniformize => {
                s.push_str("seed,kind,scale,k,cells,vertex_metric,edge_metric,misrotated\n");
                for o in &self.outcomes {
                    if let Some(c) = &o.comparison {
                        for r in &c.rows {
                            let k = r.k.map(|k| k.to_string()).unwrap_or_default();
                            let e = r.edge_metric.map(|e| format!("{e:?}")).unwrap_or_default();
                            s.push_str(&format!(
                                "{},{},{:?},{k},{},{:?},{e},{:?}\n",
                                o.seed, c.kind, r.scale, r.cells, r.vertex_metric, r.misrotated
                            ));
                        }
                    }
                }
            }
            Pipeline::Walk => {
                s.push_str("seed,walks,total_steps,mean_x,mean_y,se_x,se_y,msd_r2,exits,exit_p,s_xx,s_xy,s_yy,drift,msd,isotropy\n");
                for o in &self.outcomes {
                    if let Some(w) = &o.walk {
                        s.push_str(&format!(
                            "{},{},{},{:?},{:?},{:?},{:?},{:?},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
                            w.seed,
                            w.walks,
                            w.total_steps,
                            w.mean_displacement.x,
                            w.mean_displacement.y,
                            w.standard_error.x,
                            w.standard_error.y,
                            w.msd_r2,
                            w.exits,
                            w.exit_p_value,
                            w.sigma[0][0],
                            w.sigma[0][1],
                            w.sigma[1][1],
                            w.drift,
                            w.msd,
                            w.isotropy
                        ));
                    }
                }
            }
            Pipeline::Verify => {
                s.push_str("name,scope,verdict,value,threshold\n");
                if let Some(v) = &self.verify {
                    for c in &v.checks {
                        s.push_str(&format!("{},{},{:?},{:?},{:?}\n", c.name, c.scope, c.verdict, c.value, c.threshold));
                    }
                }
            }
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub scope: String,
    pub verdict: Verdict,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub checks: Vec<CheckResult>,
    pub failed: usize,
    pub underpowered: usize,
    pub pass: bool,
}

pub const SCOPES: [&str; 6] = ["packing", "walks", "surface", "corrector", "config", "compare"];

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    /// "all" or one of `SCOPES`.
    pub scope: String,
    pub seed: u64,
    pub walks: usize,
    pub steps: usize,
    pub mutation: Option<DubejkoVariant>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { scope: "all".into(), seed: 1, walks: 400, steps: 4000, mutation: None }
    }
}

struct Checks {
    scope: &'static str,
    out: Vec<CheckResult>,
}

impl Checks {
    fn below(&mut self, name: &str, value: f64, threshold: f64, detail: String) {
        let verdict = if value < threshold { Verdict::Pass } else { Verdict::Fail };
        self.push(name, verdict, value, threshold, detail);
    }

    fn push(&mut self, name: &str, verdict: Verdict, value: f64, threshold: f64, detail: String) {
        self.out.push(CheckResult { name: name.into(), scope: self.scope.into(), verdict, value, threshold, detail });
    }

    fn error(&mut self, name: &str, e: Error) {
        self.push(name, Verdict::Fail, f64::NAN, f64::NAN, e.to_string());
    }
}

fn fib(n: usize) -> f64 {
    let (mut a, mut b) = (0.0, 1.0);
    for _ in 0..n {
        (a, b) = (b, a + b);
    }
    a
}

/// Relative error of the Descartes chain against 1/(F_{2d−3} − 1), d = 3..=last.
pub fn descartes_chain_error(last: usize) -> f64 {
    let r = circle_pack::fibonacci_chain(last);
    (3..=last).map(|d| ((r[d] / r[0]) * (fib(2 * d - 3) - 1.0) - 1.0).abs()).fold(0.0, f64::max)
}

fn small_packing(seed: u64) -> Result<(CellConfiguration, CirclePacking)> {
    let config = generators::generate(&GeneratorSpec::voronoi(1.0, 40.0, seed))?;
    let (_, packing) = pack_truncation(&config, 16.0, 1e-10)?;
    Ok((config, packing))
}

fn verify_packing(opts: &VerifyOptions, c: &mut Checks) -> Result<()> {
    c.below("descartes_chain", descartes_chain_error(10), 1e-12, "d = 3..10".into());
    let (_, p) = small_packing(opts.seed)?;
    let chk = p.check();
    c.below("angle_residual", chk.max_angle_residual, 1e-10, format!("{} vertices", p.radii.len()));
    c.below("tangency_residual", chk.max_tangency_rel, 1e-8, String::new());
    let mut flowers = 0;
    let mut violations = 0;
    for v in p.tri.interior_vertices() {
        let f = circle_pack::flower_checks(&p, v)?;
        flowers += 1;
        violations += f.violations;
    }
    c.below("three_circle", violations as f64, 0.5, format!("{flowers} flowers"));
    Ok(())
}

fn verify_walks(opts: &VerifyOptions, c: &mut Checks) -> Result<()> {
    let variant = opts.mutation.unwrap_or(DubejkoVariant::Exact);
    c.below(
        "dubejko_equal_radii",
        (walks::dubejko_conductance(1.0, 1.0, 1.0, 1.0) - 1.0 / 3f64.sqrt()).abs(),
        1e-12,
        String::new(),
    );
    let (_, p) = small_packing(opts.seed)?;
    let w = walks::dubejko_weights_variant(&p, variant);
    let ff = w.first_factor.iter().copied().fold(0.0, f64::max);
    c.below("dubejko_first_factor", ff - 0.5, 1e-15, "max first factor minus 1/2".into());
    let mart = walks::martingale_residuals(&p, &w.graph).iter().map(|x| x.1).fold(0.0, f64::max);
    c.below("martingale_identity", mart, 1e-6, format!("variant {variant:?}"));
    let stop = StopRule { max_steps: opts.steps, exit_radius: Some(0.6) };
    let r = walks::walk_statistics(&w.graph, p.root, opts.walks, &stop, opts.seed, &[10, 20, 40, 80, 160], 8)?;
    let se = r.standard_error.x.max(r.standard_error.y);
    let md = r.mean_displacement.x.abs().max(r.mean_displacement.y.abs());
    c.push("walk_drift", r.drift_verdict(), md, 3.0 * se, format!("{} walks", r.walks));
    c.push("walk_msd_linear", r.msd_verdict(), r.msd_r2, 0.99, String::new());
    c.push("walk_exit_isotropy", r.isotropy_verdict(), r.exit_p_value, 0.01, format!("{} exits", r.exits));
    let edge = vec![vec![1], vec![0]];
    let path = vec![vec![1], vec![0, 2], vec![1]];
    let diamond = vec![vec![1, 2], vec![0, 3], vec![0, 3], vec![1, 2]];
    let vel = [
        (walks::vel_exact_small(&edge, &PathFamily::Between(0, 1))?, 2.0),
        (walks::vel_exact_small(&path, &PathFamily::Between(0, 2))?, 3.0),
        (walks::vel_exact_small(&diamond, &PathFamily::Between(0, 3))?, 2.5),
    ];
    let err = vel.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    c.below("vel_oracles", err, 1e-4, "edge, path, diamond".into());
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut failed = 0;
    for v in p.tri.interior_vertices().into_iter().step_by(7) {
        if v == p.root {
            continue;
        }
        match walks::vel_bound_check(&p, v, p.root) {
            Ok(k) => {
                checked += 1;
                worst = worst.max(k.lower_bound / k.paper_bound);
                failed += usize::from(!k.pass);
            }
            Err(Error::DomainTooSmall(_)) => {}
            Err(e) => return Err(e),
        }
    }
    c.below("vel_bound", failed as f64, 0.5, format!("{checked} vertices, worst ratio {worst:.4}"));
    Ok(())
}

fn verify_surface(opts: &VerifyOptions, c: &mut Checks) -> Result<()> {
    let config = generators::generate(&GeneratorSpec::voronoi(1.0, 48.0, opts.seed))?;
    let surf = surface::build_surface(&config.map)?;
    let portion = surface::build_M_S(&config, &surf, &Square::centered(Pt::default(), 20.0))?;
    if portion.is_empty() {
        c.push("m_s_nonempty", Verdict::Fail, 0.0, 1.0, portion.diagnostic.clone().unwrap_or_default());
        return Ok(());
    }
    c.below("gauss_bonnet", portion.gauss_bonnet_defect(&surf).abs(), 1e-9, format!("{} faces", portion.faces.len()));
    let area = surf.area(&portion.faces);
    let semi: f64 = surf.semi_flower_areas(&portion.faces).values().sum();
    c.below("semi_flower_partition", (area - semi).abs() / area, 1e-12, String::new());
    let map = surface::uniformize_approx(&surf, &portion, 1, &SolveOptions::default())?;
    c.below("orientation", map.orientation_violations() as f64, 0.5, String::new());
    let (root, outer) = map.normalization_error();
    c.below("normalization", (root / map.radius).max(outer), 1e-9, "root at 0, images inside the disk".into());
    Ok(())
}

fn verify_corrector(opts: &VerifyOptions, c: &mut Checks) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (mut err, mut bound_fail) = (0.0f64, 0usize);
    for _ in 0..2000 {
        let q = [0; 3].map(|_| pt(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)));
        let (a, b) = (corrector::face_energy_closed_form(q), corrector::face_energy_quadrature(q));
        err = err.max((a - b).abs() / a.abs().max(1.0));
        bound_fail += usize::from(a > corrector::face_energy_bound(q) * (1.0 + 1e-12));
    }
    c.below("face_energy_closed_form", err, 1e-10, "2000 random triangles".into());
    c.below("face_energy_bound", bound_fail as f64, 0.5, String::new());
    let l = Mat2([[1.3, 0.4], [-0.2, 0.9]]);
    let g = GaugeFit::decompose(&l)?;
    c.below("gauge_round_trip", g.linear().sub(&l).frobenius2().sqrt(), 1e-10, String::new());
    let config = generators::generate(&GeneratorSpec::voronoi(1.0, 64.0, opts.seed))?;
    let surf = surface::build_surface(&config.map)?;
    let portion = surface::build_M_S(&config, &surf, &Square::centered(Pt::default(), 24.0))?;
    let sub = surface::subdivide(&surf, &portion, 2)?;
    let phi0 = corrector::sample_phi0(&config, &surf, &sub, opts.seed)?;
    let dy = DyadicSystem::sample(opts.seed);
    let e1 = corrector::harmonic_extend(&config, &sub, &phi0, &dy, 2.0)?;
    let e2 = corrector::harmonic_extend(&config, &sub, &phi0, &dy, 8.0)?;
    let mut regions = 0;
    let (mut mono, mut maxp) = (0usize, 0usize);
    for e in [&e1, &e2] {
        for r in &e.regions {
            regions += 1;
            mono += usize::from(r.energy_after > r.energy_before * (1.0 + 1e-12) + 1e-12);
            maxp += usize::from(!r.max_principle);
        }
    }
    c.below("energy_monotone", mono as f64, 0.5, format!("{regions} regions"));
    c.below("maximum_principle", maxp as f64, 0.5, String::new());
    let diff: Vec<Pt> = e1.map.values.iter().zip(&phi0.values).map(|(a, b)| *a - *b).collect();
    let mut orth: f64 = 0.0;
    for r in &e1.regions {
        let ip = corrector::dirichlet_inner(&sub, &e1.map.values, &diff, &r.triangles);
        let na = corrector::dirichlet_inner(&sub, &e1.map.values, &e1.map.values, &r.triangles).sqrt();
        let nd = corrector::dirichlet_inner(&sub, &diff, &diff, &r.triangles).sqrt();
        if na * nd > 0.0 {
            orth = orth.max(ip.abs() / (na * nd));
        }
    }
    c.below("orthogonal_increments", orth, 1e-8, String::new());
    Ok(())
}

fn verify_config(opts: &VerifyOptions, c: &mut Checks) -> Result<()> {
    for spec in [GeneratorSpec::voronoi(1.0, 32.0, opts.seed), GeneratorSpec::percolation(0.2, 32.0, opts.seed, true)] {
        let a = generators::generate(&spec)?;
        let v = a.validate();
        c.push(
            &format!("validate_{}", a.meta.kind),
            if v.ok() { Verdict::Pass } else { Verdict::Fail },
            f64::from(u8::from(v.ok())),
            1.0,
            format!("{v:?}"),
        );
        let b = generators::generate(&spec)?;
        let same = a.to_json()? == b.to_json()?;
        c.push(&format!("deterministic_{}", a.meta.kind), if same { Verdict::Pass } else { Verdict::Fail }, f64::from(u8::from(same)), 1.0, String::new());
    }
    Ok(())
}

fn verify_compare(opts: &VerifyOptions, c: &mut Checks) -> Result<()> {
    c.below(
        "covariance_gauge_diag",
        covariance_gauge(&Mat2::diag(4.0, 1.0))?.matrix.sub(&Mat2::diag(0.5f64.sqrt(), 2f64.sqrt())).frobenius2().sqrt(),
        1e-12,
        "Σ = diag(4, 1)".into(),
    );
    c.push(
        "calibration_split",
        if check_split(&default_radii(), default_annulus()).is_ok() { Verdict::Pass } else { Verdict::Fail },
        0.0,
        0.0,
        "default radii avoid the annulus".into(),
    );
    let mut cfg = ExperimentConfig::new(Pipeline::Pack, GeneratorSpec::voronoi(1.0, 40.0, opts.seed), vec![opts.seed]);
    cfg.pack = PackSection { radii: vec![4.0, 8.0], margin: 1.5, calibration: [9.0, 11.0] };
    let a = run(&cfg)?.to_json()?;
    let b = run(&cfg)?.to_json()?;
    c.push("report_deterministic", if a == b { Verdict::Pass } else { Verdict::Fail }, 0.0, 0.0, String::new());
    Ok(())
}

/// Runs the invariant scans of the selected scope. Statistical checks whose
/// budget is below the minimum report `Underpowered`, which is not a failure.
pub fn run_verify_suite(opts: &VerifyOptions) -> VerifySummary {
    type Runner = fn(&VerifyOptions, &mut Checks) -> Result<()>;
    let all: [(&'static str, Runner); 6] = [
        ("packing", verify_packing),
        ("walks", verify_walks),
        ("surface", verify_surface),
        ("corrector", verify_corrector),
        ("config", verify_config),
        ("compare", verify_compare),
    ];
    let mut checks = Vec::new();
    for (scope, f) in all {
        if opts.scope != "all" && opts.scope != scope {
            continue;
        }
        let mut c = Checks { scope, out: Vec::new() };
        if let Err(e) = f(opts, &mut c) {
            c.error("scope_error", e);
        }
        checks.extend(c.out);
    }
    if checks.is_empty() {
        checks.push(CheckResult {
            name: "unknown_scope".into(),
            scope: opts.scope.clone(),
            verdict: Verdict::Fail,
            value: f64::NAN,
            threshold: f64::NAN,
            detail: format!("scope must be 'all' or one of {SCOPES:?}"),
        });
    }
    let failed = checks.iter().filter(|c| c.verdict == Verdict::Fail).count();
    let underpowered = checks.iter().filter(|c| c.verdict == Verdict::Underpowered).count();
    VerifySummary { checks, failed, underpowered, pass: failed == 0 }
}

/// Embedded equal-radius packing of a lattice map: circle i at `pos[i]`.
pub fn lattice_packing(tri: HalfEdgeMap, pos: Vec<Pt>, radius: f64) -> CirclePacking {
    let n = pos.len();
    CirclePacking { tri, centers: pos, radii: vec![radius; n], root: 0, geometry: circle_pack::Geometry::Euclidean }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{lattice_config, LatticeKind};

    #[test]
    fn trend_verdicts() {
        assert!(TrendVerdict::evaluate(&[1.0, 0.6, 0.4], 0.5).pass);
        assert!(!TrendVerdict::evaluate(&[1.0, 0.3, 0.4], 0.5).pass);
        assert!(!TrendVerdict::evaluate(&[1.0, 0.8, 0.6], 0.5).pass);
        assert!(!TrendVerdict::evaluate(&[1.0], 0.5).pass);
    }

    #[test]
    fn covariance_gauge_examples() {
        let g = covariance_gauge(&Mat2::IDENTITY).unwrap();
        assert!(distance_to_identity(&g.matrix) < 1e-14);
        let g = covariance_gauge(&Mat2::diag(4.0, 1.0)).unwrap();
        assert!((g.matrix.0[0][0] - 0.5f64.sqrt()).abs() < 1e-14);
        assert!((g.matrix.0[1][1] - 2f64.sqrt()).abs() < 1e-14);
        assert!((g.matrix.det() - 1.0).abs() < 1e-14);
        // scaling Σ leaves A unchanged
        let g2 = covariance_gauge(&Mat2([[8.0, 2.0], [2.0, 3.0]])).unwrap();
        let g3 = covariance_gauge(&Mat2([[80.0, 20.0], [20.0, 30.0]])).unwrap();
        assert!(g2.matrix.sub(&g3.matrix).frobenius2() < 1e-24);
        assert!(covariance_gauge(&Mat2([[1.0, 2.0], [2.0, 1.0]])).is_err());
        assert!(covariance_gauge(&Mat2([[0.0, 0.0], [0.0, 1.0]])).is_err());
    }

    #[test]
    fn split_is_structural() {
        assert!(check_split(&[8.0, 16.0, 32.0, 64.0], [36.0, 60.0]).is_ok());
        assert!(check_split(&[8.0, 40.0], [36.0, 60.0]).is_err());
    }

    #[test]
    fn config_round_trip_and_rejections() {
        let text = r#"
pipeline = "pack"
seeds = [1, 2]
[generator]
kind = "poisson-voronoi"
window = 200.0
[pack]
radii = [8.0, 16.0, 32.0, 64.0]
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.pipeline, Pipeline::Pack);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
        assert!(ExperimentConfig::from_toml(&text.replace("window", "windw")).is_err());
        assert!(ExperimentConfig::from_toml(&text.replace("[1, 2]", "[]")).is_err());
        assert!(ExperimentConfig::from_toml(&text.replace("[8.0, 16.0", "[16.0, 8.0")).is_err());
        assert!(ExperimentConfig::from_toml(&text.replace("\"pack\"", "\"plot\"")).is_err());
    }

    #[test]
    fn lattice_is_its_own_packing() {
        let config = lattice_config(LatticeKind::Triangular, 60.0);
        let trunc = generators::disk_truncation(&config, Pt::default(), 26.0).unwrap();
        let pos: Vec<Pt> = trunc.ids.iter().map(|&h| config.cells[h].centroid).collect();
        let packing = lattice_packing(trunc.tri.clone(), pos, 0.5);
        let rep = compare_packing(&config, &trunc, &packing, &[4.0, 8.0, 16.0], [18.0, 22.0], 0.5, 0).unwrap();
        for r in &rep.rows {
            assert!(r.vertex_metric < 1e-12, "{r:?}");
        }
        assert!(rep.misrotation_worse);
        assert!(distance_to_identity(&rep.gauge.linear()) < 1e-12);
    }

    #[test]
    fn flat_lattice_surface_is_affine() {
        let config = lattice_config(LatticeKind::Triangular, 60.0);
        let surf = surface::build_surface(&config.map).unwrap();
        let portion = surface::build_M_S(&config, &surf, &Square::centered(Pt::default(), 48.0)).unwrap();
        let sub = surface::subdivide(&surf, &portion, 2).unwrap();
        let pos: Vec<Pt> = config.cells.iter().map(|c| c.centroid).collect();
        let values = corrector::pl_extension(&surf, &sub, &pos);
        // a sheared copy: the fitted gauge must undo it
        let l = Mat2([[1.2, 0.3], [0.1, 0.8]]);
        let values: Vec<Pt> = values.iter().map(|&p| l.apply(p)).collect();
        let rep = compare_uniformization(&config, &surf, &portion, &sub, &values, &[1, 2, 3], [9.0, 11.0], 0.5, 0).unwrap();
        // unit edges in the three lattice directions, stretched by L/√det L
        let longest = [0.0f64, 60.0, 120.0]
            .iter()
            .map(|a| l.apply(Pt::polar(1.0, a.to_radians())).norm())
            .fold(0.0, f64::max)
            / l.det().sqrt();
        for r in &rep.rows {
            assert!(r.vertex_metric < 1e-10, "{r:?}");
            assert!((r.edge_metric.unwrap() - longest / r.scale).abs() < 1e-10, "{r:?}");
        }
        assert!(rep.edge_trend.unwrap().pass);
    }

    #[test]
    fn misrotated_gauge_is_worse() {
        let mut cfg = ExperimentConfig::new(Pipeline::Pack, GeneratorSpec::voronoi(1.0, 48.0, 3), vec![3]);
        cfg.pack = PackSection { radii: vec![8.0, 16.0], margin: 1.25, calibration: [9.0, 14.0] };
        let rep = run_pack_seed(&cfg, 3).unwrap();
        assert!(rep.misrotation_worse, "{rep:?}");
        // a 10° turn moves A c by 2 sin(5°)|A c|, and max |c(H)| is close to r
        for r in &rep.rows {
            assert!(r.misrotated >= 2.0 * 5f64.to_radians().sin() * 0.9 - r.vertex_metric, "{r:?}");
        }
    }

    #[test]
    fn coverage_errors() {
        let mut cfg = ExperimentConfig::new(Pipeline::Pack, GeneratorSpec::voronoi(1.0, 40.0, 1), vec![1]);
        cfg.pack = PackSection { radii: vec![8.0, 64.0], margin: 1.5, calibration: [30.0, 40.0] };
        assert!(matches!(run_pack_seed(&cfg, 1), Err(Error::InsufficientWindow(_))));
    }

    #[test]
    fn descartes_chain_matches_fibonacci() {
        assert!(descartes_chain_error(10) < 1e-12);
        assert_eq!(fib(7), 13.0);
    }
}
