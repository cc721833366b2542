//! Acceptance criteria 1–12. Runs without the libtest harness so that each
//! criterion prints its pass/fail line. Pass criterion numbers as arguments
//! to run a subset.

use std::time::{Duration, Instant};

use cellpack::cell_config::DyadicSystem;
use cellpack::circle_pack::{self, BoundaryCondition, CirclePacking, SolveOptions};
use cellpack::compare::{self, ExperimentConfig, Pipeline, VerifyOptions};
use cellpack::corrector::{self, GaugeFit};
use cellpack::generators::{self, GeneratorSpec};
use cellpack::geometry::{pt, Mat2, Pt, Square};
use cellpack::surface;
use cellpack::walks::{self, DubejkoVariant, PathFamily};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    summary: String,
}

fn outcome(pass: bool, summary: String) -> Outcome {
    Outcome { pass, summary }
}

/// Packings shared by criteria 2, 3, 4 and 9.
struct Suite {
    packings: Vec<CirclePacking>,
    solve_times: Vec<Duration>,
    sizes: Vec<usize>,
}

impl Suite {
    fn build() -> Suite {
        let mut s = Suite { packings: Vec::new(), solve_times: Vec::new(), sizes: Vec::new() };
        // 50 disk triangulations of about 2000 vertices
        for seed in 1..=50u64 {
            let config = generators::generate(&GeneratorSpec::voronoi(1.0, 56.0, seed)).unwrap();
            let trunc = generators::disk_truncation(&config, Pt::default(), 25.2).unwrap();
            let t = Instant::now();
            let radii = circle_pack::solve_radii(&trunc.tri, &BoundaryCondition::MaximalInDisk, &SolveOptions::default()).unwrap();
            let p = circle_pack::layout(&trunc.tri, &radii, trunc.root, None).unwrap();
            s.solve_times.push(t.elapsed());
            s.sizes.push(p.radii.len());
            s.packings.push(p);
        }
        // the packings walked on in criterion 5
        let walk = ExperimentConfig::preset(Pipeline::Walk);
        for seed in 1..=10u64 {
            let config = generators::generate(&GeneratorSpec { seed, ..walk.generator.clone() }).unwrap();
            let (_, p) = compare::pack_truncation(&config, walk.walk.truncation, walk.tolerances.solver).unwrap();
            s.packings.push(p);
        }
        s
    }
}

fn fib(n: usize) -> f64 {
    let (mut a, mut b) = (0.0f64, 1.0f64);
    for _ in 0..n {
        (a, b) = (b, a + b);
    }
    a
}

fn c1() -> Outcome {
    let t = Instant::now();
    let r = circle_pack::fibonacci_chain(10);
    let err = (3..=10).map(|d| ((r[d] / r[0]) / (1.0 / (fib(2 * d - 3) - 1.0)) - 1.0).abs()).fold(0.0, f64::max);
    let el = t.elapsed();
    outcome(err < 1e-12 && el < Duration::from_secs(1), format!("max rel err {err:.2e} (tol 1e-12), {el:?} (< 1 s)"))
}

fn c2(s: &Suite) -> Outcome {
    let mut angle: f64 = 0.0;
    let mut tangency: f64 = 0.0;
    for p in &s.packings[..50] {
        let c = p.check();
        angle = angle.max(c.max_angle_residual);
        tangency = tangency.max(c.max_tangency_rel);
    }
    let slowest = s.solve_times.iter().max().copied().unwrap_or_default();
    let (lo, hi) = (s.sizes.iter().min().unwrap(), s.sizes.iter().max().unwrap());
    outcome(
        angle < 1e-10 && tangency < 1e-8 && slowest < Duration::from_secs(5),
        format!("50 packings of {lo}..{hi} vertices: angle {angle:.2e} (< 1e-10), tangency {tangency:.2e} (< 1e-8), slowest {slowest:?} (< 5 s)"),
    )
}

fn c3(s: &Suite) -> Outcome {
    let (mut flowers, mut violations) = (0usize, 0usize);
    for p in &s.packings {
        for v in p.tri.interior_vertices() {
            let f = circle_pack::flower_checks(p, v).unwrap();
            flowers += 1;
            violations += f.violations;
        }
    }
    outcome(violations == 0 && flowers >= 100_000, format!("{violations} violations over {flowers} flowers (need 0 over ≥ 1e5)"))
}

fn c4(s: &Suite) -> Outcome {
    let eq = (walks::dubejko_conductance(1.0, 1.0, 1.0, 1.0) - 1.0 / 3f64.sqrt()).abs();
    let (mut ff, mut mart, mut vertices) = (0.0f64, 0.0f64, 0usize);
    for p in &s.packings {
        let w = walks::dubejko_weights(p);
        ff = w.first_factor.iter().copied().fold(ff, f64::max);
        let interior: std::collections::HashSet<usize> = p.tri.interior_vertices().into_iter().collect();
        let res = walks::martingale_residuals(p, &w.graph);
        vertices += res.iter().filter(|(u, _)| interior.contains(u)).count();
        mart = res.iter().map(|x| x.1).fold(mart, f64::max);
        assert!(interior.iter().all(|&u| w.graph.active[u]), "an interior vertex is not walkable");
    }
    outcome(
        eq < 1e-12 && ff <= 0.5 && mart < 1e-6,
        format!("equal radii |c − 1/√3| = {eq:.1e}, max first factor {ff:.12}, martingale {mart:.2e}·r over {vertices} vertices"),
    )
}

fn c5() -> (Outcome, Vec<compare::WalkSummary>) {
    let t = Instant::now();
    let mut cfg = ExperimentConfig::preset(Pipeline::Walk);
    cfg.seeds = (1..=10).collect();
    let report = compare::run(&cfg).unwrap();
    let ws: Vec<compare::WalkSummary> = report.outcomes.iter().filter_map(|o| o.walk.clone()).collect();
    let all = ws.iter().filter(|w| w.pass()).count();
    let el = t.elapsed();
    let detail: Vec<String> = ws
        .iter()
        .map(|w| format!("{}:{}{}{}", w.seed, tag(w.drift), tag(w.msd), tag(w.isotropy)))
        .collect();
    let min_r2 = ws.iter().map(|w| w.msd_r2).fold(1.0, f64::min);
    (
        outcome(
            all >= 8 && ws.len() == 10 && el < Duration::from_secs(600),
            format!(
                "{all}/10 seeds pass drift+MSD+isotropy (need 8), min R² {min_r2:.4}, {} walks × {} steps, {el:?} (< 10 min) [{}]",
                cfg.walk.walks,
                cfg.walk.steps,
                detail.join(" ")
            ),
        ),
        ws,
    )
}

fn tag(v: walks::Verdict) -> char {
    match v {
        walks::Verdict::Pass => '+',
        walks::Verdict::Fail => '-',
        walks::Verdict::Underpowered => '?',
    }
}

fn c6() -> Outcome {
    let mut cfg = ExperimentConfig::preset(Pipeline::Pack);
    cfg.seeds = (1..=10).collect();
    let report = compare::run(&cfg).unwrap();
    let mut lines = Vec::new();
    let mut mis = 0;
    for o in &report.outcomes {
        match &o.comparison {
            Some(c) => {
                mis += usize::from(c.misrotation_worse);
                let v: Vec<String> = c.rows.iter().map(|r| format!("{:.3}", r.vertex_metric)).collect();
                lines.push(format!("{}:[{}]", o.seed, v.join(",")));
            }
            None => lines.push(format!("{}:error {}", o.seed, o.error.clone().unwrap_or_default())),
        }
    }
    let s = &report.summary;
    outcome(
        s.passing >= 8 && mis == 10,
        format!(
            "{}/10 seeds decreasing with r=64/r=8 < 0.5 (need 8); 10° misrotation worse on {mis}/10 {}",
            s.passing,
            lines.join(" ")
        ),
    )
}

fn c7() -> Outcome {
    let t = Instant::now();
    let mut cfg = ExperimentConfig::preset(Pipeline::Uniformize);
    cfg.seeds = (1..=10).collect();
    let report = compare::run(&cfg).unwrap();
    let (mut vertex, mut edge, mut refine) = (0, 0, 0);
    let (mut worst_refine, mut worst_boundary) = (0.0f64, 0.0f64);
    let mut lines = Vec::new();
    for o in &report.outcomes {
        match (&o.comparison, &o.refinement) {
            (Some(c), Some(r)) => {
                vertex += usize::from(c.trend.pass);
                edge += usize::from(c.edge_trend.as_ref().is_some_and(|e| e.pass));
                refine += usize::from(r.pass);
                worst_refine = worst_refine.max(r.relative_displacement);
                worst_boundary = worst_boundary.max(r.boundary_displacement);
                lines.push(format!(
                    "{}:v{:.2}/e{:.2}",
                    o.seed,
                    c.trend.ratio,
                    c.edge_trend.as_ref().map(|e| e.ratio).unwrap_or(f64::NAN)
                ));
            }
            _ => lines.push(format!("{}:error {}", o.seed, o.error.clone().unwrap_or_default())),
        }
    }
    outcome(
        vertex >= 8 && edge >= 8 && refine == 10,
        format!(
            "vertex metric {vertex}/10, edge metric {edge}/10 (need 8 each); refinement n {:?} max {worst_refine:.4}·|S| (< 1e-2) on {refine}/10 (∂M(S) centres {worst_boundary:.4}); {:?} [{}]",
            cfg.uniformize.refine_n,
            t.elapsed(),
            lines.join(" ")
        ),
    )
}

fn c8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut err, mut bound) = (0.0f64, 0usize);
    for _ in 0..100_000 {
        let q = [0; 3].map(|_| pt(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)));
        let a = corrector::face_energy_closed_form(q);
        err = err.max((a - corrector::face_energy_quadrature(q)).abs() / a.max(1.0));
        bound += usize::from(a > corrector::face_energy_bound(q) * (1.0 + 1e-12));
    }
    let (mut regions, mut mono, mut maxp, mut orth) = (0usize, 0usize, 0usize, 0.0f64);
    let specs = [
        GeneratorSpec::voronoi(1.0, 64.0, 1),
        GeneratorSpec::voronoi(1.0, 64.0, 2),
        GeneratorSpec::voronoi(1.0, 64.0, 3),
        GeneratorSpec::percolation(0.2, 64.0, 4, true),
    ];
    for spec in specs {
        let config = generators::generate(&spec).unwrap();
        let surf = surface::build_surface(&config.map).unwrap();
        let portion = surface::build_M_S(&config, &surf, &Square::centered(Pt::default(), 24.0)).unwrap();
        let sub = surface::subdivide(&surf, &portion, 2).unwrap();
        let phi0 = corrector::sample_phi0(&config, &surf, &sub, spec.seed).unwrap();
        let dy = DyadicSystem::sample(spec.seed);
        let ext: Vec<_> = [2.0, 8.0, 32.0]
            .iter()
            .map(|&m| corrector::harmonic_extend(&config, &sub, &phi0, &dy, m).unwrap())
            .collect();
        for e in &ext {
            for r in &e.regions {
                regions += 1;
                mono += usize::from(r.energy_after > r.energy_before * (1.0 + 1e-12) + 1e-12);
                maxp += usize::from(!r.max_principle);
            }
        }
        // increments of finer solutions are orthogonal to the coarsest one on its regions
        let diff: Vec<Pt> = ext[1].map.values.iter().zip(&ext[0].map.values).map(|(a, b)| *a - *b).collect();
        for r in &ext[2].regions {
            let ip = corrector::dirichlet_inner(&sub, &ext[2].map.values, &diff, &r.triangles);
            let na = corrector::dirichlet_inner(&sub, &ext[2].map.values, &ext[2].map.values, &r.triangles).sqrt();
            let nd = corrector::dirichlet_inner(&sub, &diff, &diff, &r.triangles).sqrt();
            if na * nd > 0.0 {
                orth = orth.max(ip.abs() / (na * nd));
            }
        }
    }
    outcome(
        err < 1e-10 && bound == 0 && mono == 0 && maxp == 0 && orth < 1e-8,
        format!(
            "1e5 triangles: closed form vs quadrature {err:.1e} (< 1e-10), {bound} bound violations; {regions} regions: {mono} energy increases, {maxp} max-principle failures, orthogonality {orth:.1e} (< 1e-8)"
        ),
    )
}

fn c9(s: &Suite) -> Outcome {
    let edge = vec![vec![1], vec![0]];
    let k3 = vec![vec![1, 2], vec![0, 2], vec![0, 1]];
    let path3 = vec![vec![1], vec![0, 2], vec![1]];
    let path5 = vec![vec![1], vec![0, 2], vec![1, 3], vec![2, 4], vec![3]];
    // s = 0, t = 1, k branches of j internal vertices: VEL = 2 + j/k
    let theta = |k: usize, j: usize| {
        let n = 2 + k * j;
        let mut adj = vec![Vec::new(); n];
        for b in 0..k {
            let mut prev = 0;
            for i in 0..j {
                let v = 2 + b * j + i;
                adj[prev].push(v);
                adj[v].push(prev);
                prev = v;
            }
            adj[prev].push(1);
            adj[1].push(prev);
        }
        adj
    };
    let oracles: Vec<(&str, Vec<Vec<usize>>, usize, f64)> = vec![
        ("edge", edge, 1, 2.0),
        ("K3", k3, 1, 2.0),
        ("P3", path3, 2, 3.0),
        ("P5", path5, 4, 5.0),
        ("diamond", theta(2, 1), 1, 2.5),
        ("theta(3,2)", theta(3, 2), 1, 8.0 / 3.0),
        ("theta(5,2)", theta(5, 2), 1, 12.0 / 5.0),
    ];
    let mut oracle_err: f64 = 0.0;
    for (_, adj, t, want) in &oracles {
        let got = walks::vel_exact_small(adj, &PathFamily::Between(0, *t)).unwrap();
        oracle_err = oracle_err.max((got - want).abs());
    }
    let (mut checked, mut exceed, mut worst) = (0usize, 0usize, 0.0f64);
    for p in &s.packings {
        let interior = p.tri.interior_vertices();
        let step = (interior.len() / 40).max(1);
        for &v in interior.iter().step_by(step) {
            if v == p.root {
                continue;
            }
            match walks::vel_bound_check(p, v, p.root) {
                Ok(k) => {
                    checked += 1;
                    exceed += usize::from(!k.pass);
                    worst = worst.max(k.lower_bound / k.paper_bound);
                }
                Err(cellpack::Error::DomainTooSmall(_)) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }
    outcome(
        oracle_err < 1e-4 && exceed == 0 && checked > 0,
        format!(
            "{} oracles max err {oracle_err:.1e} (< 1e-4); {exceed} of {checked} lower bounds exceed 4|z|/r over {} packings (worst ratio {worst:.3})",
            oracles.len(),
            s.packings.len()
        ),
    )
}

fn c10() -> Outcome {
    let mut moments = Vec::new();
    let mut decreasing = 0;
    for seed in 1..=20u64 {
        let config = generators::generate(&GeneratorSpec::voronoi(1.0, 80.0, seed)).unwrap();
        moments.push(config.moment_statistic(&Square::centered(Pt::default(), 64.0), 4.0).unwrap());
        if seed <= 10 {
            let ratios: Vec<f64> = [8.0, 16.0, 32.0, 64.0]
                .iter()
                .map(|&s| config.max_cell_diameter(&Square::centered(Pt::default(), s)).unwrap().1)
                .collect();
            decreasing += usize::from(ratios.windows(2).all(|w| w[1] < w[0]));
        }
    }
    let n = moments.len() as f64;
    let mean = moments.iter().sum::<f64>() / n;
    let sd = (moments.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let cv = sd / mean;
    outcome(
        cv < 0.2 && decreasing >= 9,
        format!("p=4 moment at |S|=64: mean {mean:.1}, CV {cv:.4} over 20 seeds (< 0.2); max-diameter ratio decreasing on {decreasing}/10 (need 9)"),
    )
}

fn c11(ws: &[compare::WalkSummary]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut rt: f64 = 0.0;
    for _ in 0..10_000 {
        // ã·A·R_θ with A = R_α·diag(λ, 1/λ)·R_α^T
        let scale = 10f64.powf(rng.random_range(-1.0..1.0));
        let lambda = 10f64.powf(rng.random_range(0.0..1.0));
        let alpha = rng.random_range(0.0..std::f64::consts::PI);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let a = Mat2::rotation(alpha).mul(&Mat2::diag(lambda, 1.0 / lambda)).mul(&Mat2::rotation(-alpha));
        let fit = GaugeFit { matrix: a, theta, scale, residual: 0.0 };
        let g = GaugeFit::decompose(&fit.linear()).unwrap();
        let err = (g.scale / scale - 1.0).abs().max((g.theta - theta).abs()).max(g.matrix.sub(&a).frobenius2().sqrt());
        rt = rt.max(err);
    }
    let pooled = compare::covariance_gauge(&compare::pooled_sigma(ws)).unwrap();
    let dp = compare::distance_to_identity(&pooled.matrix);
    let per_seed = ws.iter().filter_map(|w| w.gauge_distance).fold(0.0, f64::max);
    outcome(
        rt < 1e-10 && dp < 0.05 && per_seed < 0.05,
        format!("factorization round trip {rt:.1e} (< 1e-10); ‖A − I‖ pooled {dp:.4}, worst seed {per_seed:.4} (< 0.05)"),
    )
}

fn c12() -> Outcome {
    let mut identical = Vec::new();
    let gen = GeneratorSpec::voronoi(1.0, 40.0, 5);
    let perc = GeneratorSpec::percolation(0.2, 40.0, 5, true);
    for spec in [&gen, &perc] {
        let a = generators::generate(spec).unwrap().to_json().unwrap();
        let b = generators::generate(spec).unwrap().to_json().unwrap();
        identical.push(("generate", a == b));
    }
    let mut pack = ExperimentConfig::new(Pipeline::Pack, gen.clone(), vec![5, 6]);
    pack.pack = compare::PackSection { radii: vec![4.0, 8.0], margin: 1.5, calibration: [9.0, 11.0] };
    let mut walk = ExperimentConfig::new(Pipeline::Walk, GeneratorSpec::voronoi(1.0, 40.0, 5), vec![5, 6]);
    walk.walk.truncation = 16.0;
    walk.walk.walks = 200;
    let mut unif = ExperimentConfig::new(Pipeline::Uniformize, GeneratorSpec::voronoi(1.0, 40.0, 5), vec![5]);
    unif.uniformize = compare::UniformizeSection { k: vec![1, 2], s_factor: 2.0, n: 1, calibration: [2.5, 3.5], refine_k: 2, refine_n: [1, 2] };
    let verify = ExperimentConfig::new(Pipeline::Verify, gen.clone(), vec![1]);
    for (name, cfg) in [("pack", &pack), ("walk", &walk), ("uniformize", &unif), ("verify", &verify)] {
        let a = compare::run(cfg).unwrap();
        let b = compare::run(cfg).unwrap();
        identical.push((name, a.to_json().unwrap() == b.to_json().unwrap() && a.to_csv() == b.to_csv()));
        assert!(a.outcomes.iter().all(|o| o.error.is_none()), "{name}: {:?}", a.outcomes);
    }
    let clean = compare::run_verify_suite(&VerifyOptions::default());
    let mutated = compare::run_verify_suite(&VerifyOptions { mutation: Some(DubejkoVariant::SwappedFactor), ..VerifyOptions::default() });
    let red = !mutated.pass && mutated.checks.iter().any(|c| c.name == "martingale_identity" && c.verdict == walks::Verdict::Fail);
    let same = identical.iter().all(|x| x.1);
    let bad: Vec<&str> = identical.iter().filter(|x| !x.1).map(|x| x.0).collect();
    outcome(
        same && clean.pass && red,
        format!(
            "{} pipelines byte-identical{}; clean suite {} ({} checks); mutated suite {}",
            identical.len(),
            if bad.is_empty() { String::new() } else { format!(" except {bad:?}") },
            if clean.pass { "green" } else { "red" },
            clean.checks.len(),
            if red { "red" } else { "green" }
        ),
    )
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |k: usize| wanted.is_empty() || wanted.contains(&k);
    let needs_suite = [2, 3, 4, 9].iter().any(|&k| run(k));
    let suite = needs_suite.then(Suite::build);
    let mut failed = Vec::new();
    let mut report = |k: usize, name: &str, o: Outcome, t: Duration| {
        println!("criterion {k:2} {name:<22} {} {} [{:.1?}]", if o.pass { "PASS" } else { "FAIL" }, o.summary, t);
        if !o.pass {
            failed.push(k);
        }
    };
    macro_rules! criterion {
        ($k:expr, $name:expr, $body:expr) => {
            if run($k) {
                let t = Instant::now();
                let o = $body;
                report($k, $name, o, t.elapsed());
            }
        };
    }
    criterion!(1, "descartes-fibonacci", c1());
    criterion!(2, "packing-solver", c2(suite.as_ref().unwrap()));
    criterion!(3, "three-circle", c3(suite.as_ref().unwrap()));
    criterion!(4, "dubejko-identities", c4(suite.as_ref().unwrap()));
    let mut walk_summaries = None;
    if run(5) || run(11) {
        let t = Instant::now();
        let (o, ws) = c5();
        if run(5) {
            report(5, "walk-statistics", o, t.elapsed());
        }
        walk_summaries = Some(ws);
    }
    criterion!(6, "packing-trend", c6());
    criterion!(7, "uniformization-trend", c7());
    criterion!(8, "dirichlet", c8());
    criterion!(9, "vel", c9(suite.as_ref().unwrap()));
    criterion!(10, "ergodic-statistics", c10());
    criterion!(11, "gauge", c11(walk_summaries.as_ref().unwrap()));
    criterion!(12, "reproducibility", c12());
    if !failed.is_empty() {
        println!("acceptance: criteria {failed:?} failed");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
