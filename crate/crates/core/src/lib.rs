//! Cell configurations, circle packings, Dubejko-weighted walks and the
//! discrete uniformization of glued equilateral surfaces.

pub mod cell_config;
pub mod circle_pack;
pub mod compare;
pub mod corrector;
pub mod delaunay;
pub mod error;
pub mod generators;
pub mod geometry;
pub mod linalg;
pub mod planar_map;
pub mod surface;
pub mod svg;
pub mod walks;

pub use cell_config::{Cell, CellConfiguration, DyadicSystem};
pub use circle_pack::{BoundaryCondition, CirclePacking, Geometry};
pub use error::{Error, Result};
pub use geometry::{pt, Mat2, Pt, Square};
pub use planar_map::{HalfEdgeMap, RootedBall};
