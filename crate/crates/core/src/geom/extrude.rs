use std::collections::HashMap;

use super::triangulate::triangulate_region;
use super::{cross3, norm3, sketch_regions, sub3, FaceRegion, GeomError, P2, P3};
use crate::seq::{BooleanOp, ExtrudeParams, Sketch, Step};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<P3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn triangle(&self, t: usize) -> [P3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized normal following the counterclockwise winding.
    pub fn triangle_normal(&self, t: usize) -> P3 {
        let [a, b, c] = self.triangle(t);
        cross3(sub3(b, a), sub3(c, a))
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        0.5 * norm3(self.triangle_normal(t))
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Appends another mesh, offsetting its indices.
    pub fn append(&mut self, other: &TriMesh) {
        let off = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles.extend(other.triangles.iter().map(|t| [t[0] + off, t[1] + off, t[2] + off]));
    }

    /// Every undirected edge is used by exactly two triangles, once in each direction.
    pub fn is_watertight(&self) -> bool {
        let mut edges: HashMap<(usize, usize), i32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += if a < b { 1 } else { -1 };
            }
        }
        let mut uses: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *uses.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        uses.values().all(|&u| u == 2) && edges.values().all(|&d| d == 0)
    }
}

/// Real-valued placement of an extrusion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtrudeFrame {
    /// Top displacement along the local normal.
    pub top: f64,
    pub bottom: f64,
    /// Row-major 3×3 rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: P3,
    pub scale_center: P2,
    pub scale: f64,
}

impl ExtrudeFrame {
    pub const IDENTITY: ExtrudeFrame = ExtrudeFrame {
        top: 1.0,
        bottom: 0.0,
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0; 3],
        scale_center: [0.0; 2],
        scale: 1.0,
    };

    pub fn from_params(p: &ExtrudeParams) -> Self {
        let r = p.rotation;
        Self {
            top: ExtrudeParams::height_value(p.heights[0]),
            bottom: ExtrudeParams::height_value(p.heights[1]),
            rotation: [
                [r[0] as f64, r[1] as f64, r[2] as f64],
                [r[3] as f64, r[4] as f64, r[5] as f64],
                [r[6] as f64, r[7] as f64, r[8] as f64],
            ],
            translation: p.translation.map(ExtrudeParams::translation_value),
            scale_center: [ExtrudeParams::center_value(p.scale[0]), ExtrudeParams::center_value(p.scale[1])],
            scale: ExtrudeParams::scale_value(p.scale[2]),
        }
    }

    fn z_range(&self) -> (f64, f64) {
        (self.top.min(self.bottom), self.top.max(self.bottom))
    }

    /// Sketch point at local height `z` to world coordinates.
    pub fn to_world(&self, q: P2, z: f64) -> P3 {
        let c = self.scale_center;
        let local = [c[0] + self.scale * (q[0] - c[0]), c[1] + self.scale * (q[1] - c[1]), z];
        let r = &self.rotation;
        std::array::from_fn(|i| r[i][0] * local[0] + r[i][1] * local[1] + r[i][2] * local[2] + self.translation[i])
    }

    /// World point to (sketch point, local height).
    pub fn to_sketch(&self, p: P3) -> (P2, f64) {
        let d = sub3(p, self.translation);
        let r = &self.rotation;
        let local: P3 = std::array::from_fn(|j| r[0][j] * d[0] + r[1][j] * d[1] + r[2][j] * d[2]);
        let c = self.scale_center;
        ([c[0] + (local[0] - c[0]) / self.scale, c[1] + (local[1] - c[1]) / self.scale], local[2])
    }
}

/// An extruded sketch ready for meshing and membership queries.
#[derive(Clone, Debug)]
pub struct StepSolid {
    pub regions: Vec<FaceRegion>,
    pub frame: ExtrudeFrame,
    pub boolean: BooleanOp,
}

impl StepSolid {
    pub fn new(regions: Vec<FaceRegion>, frame: ExtrudeFrame, boolean: BooleanOp) -> Result<Self, GeomError> {
        let (lo, hi) = frame.z_range();
        if hi - lo <= 0.0 {
            return Err(GeomError::ZeroHeight);
        }
        if frame.scale <= 0.0 {
            return Err(GeomError::ZeroScale);
        }
        Ok(Self { regions, frame, boolean })
    }

    pub fn from_step(step: &Step, chord_tol: f64) -> Result<Self, GeomError> {
        let regions = sketch_regions(&step.sketch, chord_tol).ok_or_else(|| GeomError::Invalid("curve arity".into()))?;
        Self::new(regions, ExtrudeFrame::from_params(&step.extrude), step.extrude.boolean)
    }

    pub fn contains(&self, p: P3) -> bool {
        let (q, z) = self.frame.to_sketch(p);
        let (lo, hi) = self.frame.z_range();
        z >= lo && z <= hi && self.regions.iter().any(|r| r.contains(q))
    }

    /// Closed prism mesh with outward-facing triangles.
    pub fn mesh(&self) -> Result<TriMesh, GeomError> {
        let (lo, hi) = self.frame.z_range();
        let mut mesh = TriMesh::default();
        for region in &self.regions {
            let t = triangulate_region(region)?;
            let n = t.vertices.len();
            let base = mesh.vertices.len();
            mesh.vertices.extend(t.vertices.iter().map(|&q| self.frame.to_world(q, lo)));
            mesh.vertices.extend(t.vertices.iter().map(|&q| self.frame.to_world(q, hi)));
            for &[a, b, c] in &t.triangles {
                mesh.triangles.push([base + n + a, base + n + b, base + n + c]);
                mesh.triangles.push([base + a, base + c, base + b]);
            }
            for ring in &t.rings {
                let len = ring.len();
                for k in 0..len {
                    let a = base + ring.start + k;
                    let b = base + ring.start + (k + 1) % len;
                    mesh.triangles.push([a, b, b + n]);
                    mesh.triangles.push([a, b + n, a + n]);
                }
            }
        }
        Ok(mesh)
    }
}

/// Mesh of one extruded sketch.
pub fn extrude_step(sketch: &Sketch, params: &ExtrudeParams, chord_tol: f64) -> Result<TriMesh, GeomError> {
    let regions = sketch_regions(sketch, chord_tol).ok_or_else(|| GeomError::Invalid("curve arity".into()))?;
    StepSolid::new(regions, ExtrudeFrame::from_params(params), params.boolean)?.mesh()
}

pub fn point_in_solid(solid: &StepSolid, p: P3) -> bool {
    solid.contains(p)
}
