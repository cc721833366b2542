use cellpack::circle_pack::{self, BoundaryCondition, SolveOptions};
use cellpack::delaunay::triangulate;
use cellpack::generators::{self, GeneratorSpec};
use cellpack::geometry::{Pt, Square};
use cellpack::surface;
use cellpack::walks::{self, StopRule};
use criterion::{black_box, criterion_group, criterion_main, Criterion};

fn delaunay(c: &mut Criterion) {
    let pts = generators::poisson_points(1.0, &Square::centered(Pt::default(), 64.0), 1);
    c.bench_function("delaunay_4k_points", |b| b.iter(|| triangulate(black_box(&pts)).unwrap()));
}

fn solver(c: &mut Criterion) {
    let config = generators::generate(&GeneratorSpec::voronoi(1.0, 56.0, 1)).unwrap();
    let trunc = generators::disk_truncation(&config, Pt::default(), 25.2).unwrap();
    let mut g = c.benchmark_group("packing");
    g.sample_size(20);
    g.bench_function("solve_2k_vertices", |b| {
        b.iter(|| circle_pack::solve_radii(black_box(&trunc.tri), &BoundaryCondition::MaximalInDisk, &SolveOptions::default()).unwrap())
    });
    let radii = circle_pack::solve_radii(&trunc.tri, &BoundaryCondition::MaximalInDisk, &SolveOptions::default()).unwrap();
    g.bench_function("layout_2k_vertices", |b| b.iter(|| circle_pack::layout(&trunc.tri, black_box(&radii), trunc.root, None).unwrap()));
    g.finish();
}

fn walk(c: &mut Criterion) {
    let config = generators::generate(&GeneratorSpec::voronoi(1.0, 64.0, 1)).unwrap();
    let trunc = generators::disk_truncation(&config, Pt::default(), 28.0).unwrap();
    let radii = circle_pack::solve_radii(&trunc.tri, &BoundaryCondition::MaximalInDisk, &SolveOptions::default()).unwrap();
    let packing = circle_pack::layout(&trunc.tri, &radii, trunc.root, None).unwrap();
    let w = walks::dubejko_weights(&packing);
    let stop = StopRule { max_steps: 10_000, exit_radius: Some(0.75) };
    let mut i = 0;
    c.bench_function("dubejko_walk_10k_steps", |b| {
        b.iter(|| {
            i += 1;
            walks::random_walk(&w.graph, packing.root, &stop, 1, i).unwrap()
        })
    });
}

fn subdivision(c: &mut Criterion) {
    let config = generators::generate(&GeneratorSpec::voronoi(1.0, 64.0, 1)).unwrap();
    let surf = surface::build_surface(&config.map).unwrap();
    let portion = surface::build_M_S(&config, &surf, &Square::centered(Pt::default(), 24.0)).unwrap();
    let mut g = c.benchmark_group("surface");
    g.sample_size(20);
    for n in [2, 4] {
        g.bench_function(format!("subdivide_n{n}"), |b| b.iter(|| surface::subdivide(&surf, black_box(&portion), n).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, delaunay, solver, walk, subdivision);
criterion_main!(benches);
