//! SVG figures: circle packings over their cells, and embedded meshes.

use std::fmt::Write;

use crate::cell_config::CellConfiguration;
use crate::circle_pack::CirclePacking;
use crate::corrector::GaugeFit;
use crate::geometry::{BBox, Pt};

const SIZE: f64 = 800.0;

struct Frame {
    bb: BBox,
    scale: f64,
}

impl Frame {
    fn new(points: &[Pt]) -> Frame {
        let bb = BBox::of(points);
        let w = (bb.max.x - bb.min.x).max(bb.max.y - bb.min.y).max(1e-12);
        Frame { bb, scale: SIZE / w }
    }

    fn map(&self, p: Pt) -> (f64, f64) {
        ((p.x - self.bb.min.x) * self.scale, (self.bb.max.y - p.y) * self.scale)
    }

    fn header(&self) -> String {
        let w = (self.bb.max.x - self.bb.min.x) * self.scale;
        let h = (self.bb.max.y - self.bb.min.y) * self.scale;
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.1}\" height=\"{h:.1}\" viewBox=\"0 0 {w:.1} {h:.1}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        )
    }

    fn polygon(&self, out: &mut String, poly: &[Pt], style: &str) {
        let pts: Vec<String> = poly
            .iter()
            .map(|&p| {
                let (x, y) = self.map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(out, "<polygon points=\"{}\" {style}/>", pts.join(" "));
    }
}

/// Cells of the packed vertices (`ids[v]` is the cell of vertex v) whose
/// centre lies within `within` of the origin, with their circles mapped back
/// through the inverse of `gauge`.
pub fn packing_overlay(config: &CellConfiguration, ids: &[usize], packing: &CirclePacking, gauge: &GaugeFit, within: f64) -> String {
    let inv = gauge.linear().inverse().unwrap_or(crate::geometry::Mat2::IDENTITY);
    let shown: Vec<usize> = (0..ids.len()).filter(|&v| config.cells[ids[v]].centroid.norm() <= within).collect();
    let pts: Vec<Pt> = shown.iter().flat_map(|&v| config.cells[ids[v]].pieces.iter().flatten().copied()).collect();
    let frame = Frame::new(&pts);
    let mut s = frame.header();
    for &v in &shown {
        for piece in &config.cells[ids[v]].pieces {
            frame.polygon(&mut s, piece, "fill=\"#eef\" stroke=\"#889\" stroke-width=\"0.5\"");
        }
    }
    let ds = inv.det().abs().sqrt();
    for &v in &shown {
        let (c, r) = (packing.centers[v], packing.radii[v]);
        let (x, y) = frame.map(inv.apply(c));
        let _ = writeln!(
            s,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{:.2}\" fill=\"none\" stroke=\"#c33\" stroke-width=\"0.6\"/>",
            r * ds * frame.scale
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Triangles drawn at the given vertex positions.
pub fn mesh_overlay(triangles: &[[usize; 3]], positions: &[Pt], background: Option<&[Vec<Pt>]>) -> String {
    let mut pts: Vec<Pt> = triangles.iter().flatten().map(|&v| positions[v]).collect();
    if let Some(bg) = background {
        pts.extend(bg.iter().flatten().copied());
    }
    let frame = Frame::new(&pts);
    let mut s = frame.header();
    if let Some(bg) = background {
        for poly in bg {
            frame.polygon(&mut s, poly, "fill=\"#eef\" stroke=\"#889\" stroke-width=\"0.5\"");
        }
    }
    for t in triangles {
        let poly = t.map(|v| positions[v]);
        frame.polygon(&mut s, &poly, "fill=\"none\" stroke=\"#336\" stroke-width=\"0.4\"");
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{lattice_config, LatticeKind};
    use crate::geometry::pt;

    #[test]
    fn mesh_svg_is_well_formed() {
        let s = mesh_overlay(&[[0, 1, 2]], &[pt(0.0, 0.0), pt(1.0, 0.0), pt(0.0, 1.0)], None);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert_eq!(s.matches("<polygon").count(), 1);
    }

    #[test]
    fn packing_svg_has_one_circle_per_vertex() {
        let config = lattice_config(LatticeKind::Triangular, 12.0);
        let trunc = crate::generators::disk_truncation(&config, Pt::default(), 4.0).unwrap();
        let pos = trunc.ids.iter().map(|&h| config.cells[h].centroid).collect();
        let p = crate::compare::lattice_packing(trunc.tri.clone(), pos, 0.5);
        let s = packing_overlay(&config, &trunc.ids, &p, &GaugeFit::identity(), f64::INFINITY);
        assert_eq!(s.matches("<circle").count(), trunc.ids.len());
    }
}
