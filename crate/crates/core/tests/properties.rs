use std::collections::HashSet;
use std::f64::consts::PI;

use cellpack::circle_pack::{descartes_fourth, DescartesSign, FourthCircle};
use cellpack::compare::{covariance_gauge, TrendVerdict};
use cellpack::corrector::GaugeFit;
use cellpack::delaunay::triangulate;
use cellpack::geometry::{orient, pt, Mat2, Pt};
use cellpack::planar_map::HalfEdgeMap;
use cellpack::walks::{dubejko_conductance, dubejko_first_factor};
use proptest::prelude::*;

fn radius() -> impl Strategy<Value = f64> {
    (-2.0f64..2.0).prop_map(|e| 10f64.powf(e))
}

fn points(max: usize) -> impl Strategy<Value = Vec<Pt>> {
    prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..max).prop_map(|v| v.into_iter().map(|(x, y)| pt(x, y)).collect())
}

proptest! {
    #[test]
    fn descartes_relation(r1 in radius(), r2 in radius(), r3 in radius()) {
        let FourthCircle::Circle(r4) = descartes_fourth(r1, r2, r3, DescartesSign::Inner).unwrap() else {
            panic!("inner circle expected");
        };
        let k = [1.0 / r1, 1.0 / r2, 1.0 / r3, 1.0 / r4];
        let s: f64 = k.iter().sum();
        let q: f64 = k.iter().map(|x| x * x).sum();
        prop_assert!((s * s - 2.0 * q).abs() <= 1e-9 * s * s);
        prop_assert!(r4 < r1.min(r2).min(r3));
    }

    #[test]
    fn conductance_symmetries(ru in radius(), rv in radius(), w1 in radius(), w2 in radius(), t in radius()) {
        let c = dubejko_conductance(ru, rv, w1, w2);
        prop_assert!((c - dubejko_conductance(rv, ru, w1, w2)).abs() <= 1e-14 * c);
        prop_assert!((c - dubejko_conductance(ru, rv, w2, w1)).abs() <= 1e-14 * c);
        prop_assert!((c - dubejko_conductance(t * ru, t * rv, t * w1, t * w2)).abs() <= 1e-12 * c);
        prop_assert!(dubejko_first_factor(ru, rv) <= 0.5);
        prop_assert!(c > 0.0 && c < 1.0);
    }

    #[test]
    fn gauge_round_trip(scale in radius(), l in 0.0f64..1.0, alpha in 0.0..PI, theta in 0.0..PI) {
        let lambda = 10f64.powf(l);
        let a = Mat2::rotation(alpha).mul(&Mat2::diag(lambda, 1.0 / lambda)).mul(&Mat2::rotation(-alpha));
        let fit = GaugeFit { matrix: a, theta, scale, residual: 0.0 };
        let g = GaugeFit::decompose(&fit.linear()).unwrap();
        prop_assert!((g.scale / scale - 1.0).abs() < 1e-10);
        prop_assert!((g.theta - theta).abs() < 1e-10);
        prop_assert!(g.matrix.sub(&a).frobenius2().sqrt() < 1e-10);
    }

    #[test]
    fn covariance_gauge_whitens(a in 0.1f64..10.0, b in 0.1f64..10.0, phi in 0.0..PI) {
        let r = Mat2::rotation(phi);
        let sigma = r.mul(&Mat2::diag(a, b)).mul(&r.transpose());
        let g = covariance_gauge(&sigma).unwrap();
        prop_assert!((g.matrix.det() - 1.0).abs() < 1e-10);
        // A Σ A = sqrt(det Σ)·I
        let w = g.matrix.mul(&sigma).mul(&g.matrix).scale(1.0 / (a * b).sqrt());
        prop_assert!(w.sub(&Mat2::IDENTITY).frobenius2().sqrt() < 1e-9);
    }

    #[test]
    fn trend_is_scale_invariant(v in prop::collection::vec(0.01f64..10.0, 2..8), c in radius()) {
        let a = TrendVerdict::evaluate(&v, 0.5);
        let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
        let b = TrendVerdict::evaluate(&scaled, 0.5);
        prop_assert_eq!(a.decreasing, b.decreasing);
        prop_assert_eq!(a.pass, b.pass);
        prop_assert!((a.ratio - b.ratio).abs() <= 1e-12 * a.ratio);
    }

    #[test]
    fn trend_needs_monotone_decay(first in 0.1f64..10.0, q in 0.05f64..0.99, n in 2usize..7) {
        let v: Vec<f64> = (0..n).map(|i| first * q.powi(i as i32)).collect();
        let t = TrendVerdict::evaluate(&v, 0.5);
        prop_assert!(t.decreasing);
        prop_assert_eq!(t.pass, q.powi(n as i32 - 1) < 0.5);
        let mut rev = v.clone();
        rev.reverse();
        prop_assert!(!TrendVerdict::evaluate(&rev, 0.5).pass);
    }

    #[test]
    fn delaunay_map_invariants(pts in points(60)) {
        let distinct: HashSet<(u64, u64)> = pts.iter().map(|p| (p.x.to_bits(), p.y.to_bits())).collect();
        prop_assume!(distinct.len() == pts.len());
        let Ok(d) = triangulate(&pts) else { return Ok(()); };
        prop_assume!(!d.triangles.is_empty());
        for t in &d.triangles {
            prop_assert!(orient(pts[t[0]], pts[t[1]], pts[t[2]]) > 0.0);
        }
        let map = HalfEdgeMap::from_triangles(pts.len(), &d.triangles).unwrap();
        let rep = map.validate();
        prop_assert_eq!(rep.loops, 0);
        prop_assert_eq!(rep.multi_edges, 0);
        prop_assert_eq!(rep.vertices as i64 - rep.edges as i64 + rep.faces as i64, 2);
        for h in 0..map.num_half_edges() {
            prop_assert_eq!(map.twin(map.twin(h)), h);
            prop_assert_eq!(map.origin(map.next(h)), map.target(h));
            prop_assert_eq!(map.face_of(map.next(h)), map.face_of(h));
        }
        let back = HalfEdgeMap::from_text(&map.to_text()).unwrap();
        prop_assert_eq!(back.to_text(), map.to_text());
    }
}
