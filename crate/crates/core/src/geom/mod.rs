//! Geometry evaluation of sketches and extrusions: curve discretization,
//! planar regions, triangulation, prism meshes and CSG-aware surface sampling.

mod csg;
mod curve;
mod export;
mod extrude;
mod region;
mod triangulate;

pub use csg::{csg_surface_sample, point_in_model, ModelSolid, SampleConfig};
pub use curve::{arc_center, circle_fit, discretize, ArcGeometry, CircleFit, RealCurve};
pub use export::{export_obj, export_svg, parse_obj};
pub use extrude::{extrude_step, point_in_solid, ExtrudeFrame, StepSolid, TriMesh};
pub use region::{
    face_region, loop_polyline, point_in_face, point_in_polygon, polygon_area, polygons_intersect,
    ring_self_intersects, sketch_regions, FaceRegion, Polyline2,
};
pub use triangulate::{triangulate, triangulate_region, Triangulation};

/// Default chord tolerance, in sketch units (the sketch spans `[0, 1)`).
pub const DEFAULT_CHORD_TOL: f64 = 1e-3;

/// Size of one quantization cell in sketch units.
pub const GRID_CELL: f64 = 1.0 / 64.0;

pub type P2 = [f64; 2];
pub type P3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeomError {
    #[error("arc points are collinear")]
    Collinear,
    #[error("circle radius {0} is below half a grid cell")]
    DegenerateCircle(f64),
    #[error("polygon is self-intersecting")]
    SelfIntersecting,
    #[error("extrusion has zero height")]
    ZeroHeight,
    #[error("extrusion has non-positive scale")]
    ZeroScale,
    #[error("no surface point survives the boolean combination")]
    EmptyResult,
    #[error("invalid geometry: {0}")]
    Invalid(String),
}

pub(crate) fn sub2(a: P2, b: P2) -> P2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub(crate) fn cross2(a: P2, b: P2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

pub fn dist2(a: P2, b: P2) -> f64 {
    let d = sub2(a, b);
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

/// Twice the signed area of triangle `abc`.
pub(crate) fn orient2(a: P2, b: P2, c: P2) -> f64 {
    cross2(sub2(b, a), sub2(c, a))
}

pub(crate) fn sub3(a: P3, b: P3) -> P3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross3(a: P3, b: P3) -> P3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn norm3(a: P3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}
