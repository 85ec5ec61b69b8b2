use rand::Rng;

use super::{norm3, GeomError, StepSolid, TriMesh, DEFAULT_CHORD_TOL, P3};
use crate::seq::{BooleanOp, CadModel};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleConfig {
    pub chord_tol: f64,
    /// Offset along the surface normal used to classify a candidate point.
    pub probe_eps: f64,
    /// Candidate budget, as a multiple of the requested sample count.
    pub max_candidate_factor: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { chord_tol: DEFAULT_CHORD_TOL, probe_eps: 1e-6, max_candidate_factor: 200 }
    }
}

/// The steps of a model as solids, combined left to right.
#[derive(Clone, Debug)]
pub struct ModelSolid {
    pub steps: Vec<StepSolid>,
}

impl ModelSolid {
    pub fn from_model(model: &CadModel, chord_tol: f64) -> Result<Self, GeomError> {
        let steps = model.steps.iter().map(|s| StepSolid::from_step(s, chord_tol)).collect::<Result<_, _>>()?;
        Ok(Self { steps })
    }

    /// Membership in the accumulated boolean result.
    pub fn contains(&self, p: P3) -> bool {
        let mut inside = false;
        for (i, s) in self.steps.iter().enumerate() {
            let here = s.contains(p);
            inside = if i == 0 {
                here
            } else {
                match s.boolean {
                    BooleanOp::Union => inside || here,
                    BooleanOp::Subtraction => inside && !here,
                    BooleanOp::Intersection => inside && here,
                }
            };
        }
        inside
    }
}

pub fn point_in_model(model: &ModelSolid, p: P3) -> bool {
    model.contains(p)
}

struct Candidates {
    meshes: Vec<TriMesh>,
    /// Cumulative triangle areas over all meshes, with (mesh, triangle) ids.
    cdf: Vec<f64>,
    ids: Vec<(usize, usize)>,
}

impl Candidates {
    fn new(meshes: Vec<TriMesh>) -> Self {
        let mut cdf = Vec::new();
        let mut ids = Vec::new();
        let mut acc = 0.0;
        for (m, mesh) in meshes.iter().enumerate() {
            for t in 0..mesh.triangles.len() {
                acc += mesh.triangle_area(t);
                cdf.push(acc);
                ids.push((m, t));
            }
        }
        Self { meshes, cdf, ids }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (P3, P3) {
        let total = *self.cdf.last().expect("non-empty surface");
        let u = rng.random::<f64>() * total;
        let k = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        let (m, t) = self.ids[k];
        let mesh = &self.meshes[m];
        let [a, b, c] = mesh.triangle(t);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        let p = std::array::from_fn(|i| wa * a[i] + wb * b[i] + wc * c[i]);
        let n = mesh.triangle_normal(t);
        let len = norm3(n);
        (p, n.map(|x| x / len))
    }
}

/// Samples `n` points uniformly (by area) on the surface of the boolean
/// result. Candidates are drawn on every step's surface and kept when the
/// accumulated solid changes membership across the surface there.
pub fn csg_surface_sample<R: Rng + ?Sized>(
    model: &CadModel,
    n: usize,
    config: &SampleConfig,
    rng: &mut R,
) -> Result<Vec<P3>, GeomError> {
    assert!(n >= 1, "sample count must be positive");
    let solid = ModelSolid::from_model(model, config.chord_tol)?;
    let meshes = solid.steps.iter().map(StepSolid::mesh).collect::<Result<Vec<_>, _>>()?;
    let cands = Candidates::new(meshes);
    if cands.cdf.is_empty() {
        return Err(GeomError::EmptyResult);
    }
    let eps = config.probe_eps;
    let budget = n.saturating_mul(config.max_candidate_factor.max(1));
    let mut out = Vec::with_capacity(n);
    let mut drawn = 0usize;
    while out.len() < n {
        if drawn >= budget {
            return Err(GeomError::EmptyResult);
        }
        drawn += 1;
        let (p, normal) = cands.draw(rng);
        let outside: P3 = std::array::from_fn(|i| p[i] + eps * normal[i]);
        let inside: P3 = std::array::from_fn(|i| p[i] - eps * normal[i]);
        if solid.contains(outside) != solid.contains(inside) {
            out.push(p);
        }
    }
    Ok(out)
}
