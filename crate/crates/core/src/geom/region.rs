use super::{cross2, discretize, orient2, sub2, RealCurve, P2};
use crate::seq::{Face, Loop, Sketch};

/// Consecutive vertices closer than this are merged.
const DUP_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Polyline2 {
    pub vertices: Vec<P2>,
    pub closed: bool,
}

impl Polyline2 {
    pub fn open(vertices: Vec<P2>) -> Self {
        Self { vertices, closed: false }
    }

    pub fn closed(vertices: Vec<P2>) -> Self {
        Self { vertices, closed: true }
    }
}

/// Closed ring approximating a loop. `None` if a curve has the wrong arity.
pub fn loop_polyline(lp: &Loop, chord_tol: f64) -> Option<Polyline2> {
    let mut ring: Vec<P2> = Vec::new();
    for c in &lp.curves {
        let rc = RealCurve::from_grid(c)?;
        let pl = discretize(&rc, chord_tol);
        let take = if pl.closed { pl.vertices.len() } else { pl.vertices.len() - 1 };
        for &v in &pl.vertices[..take] {
            if ring.last().is_none_or(|&l| super::dist2(l, v) > DUP_TOL) {
                ring.push(v);
            }
        }
    }
    while ring.len() > 1 && super::dist2(ring[0], *ring.last().unwrap()) <= DUP_TOL {
        ring.pop();
    }
    Some(Polyline2::closed(ring))
}

/// Planar region of a face: an outer ring and hole rings.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceRegion {
    pub outer: Vec<P2>,
    pub holes: Vec<Vec<P2>>,
}

impl FaceRegion {
    pub fn rings(&self) -> impl Iterator<Item = &Vec<P2>> {
        std::iter::once(&self.outer).chain(self.holes.iter())
    }

    /// Even-odd membership over all rings.
    pub fn contains(&self, p: P2) -> bool {
        self.rings().filter(|r| point_in_polygon(r, p)).count() % 2 == 1
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.outer).abs() - self.holes.iter().map(|h| polygon_area(h).abs()).sum::<f64>()
    }
}

pub fn face_region(face: &Face, chord_tol: f64) -> Option<FaceRegion> {
    let outer = loop_polyline(&face.outer, chord_tol)?.vertices;
    let holes = face
        .holes
        .iter()
        .map(|h| loop_polyline(h, chord_tol).map(|p| p.vertices))
        .collect::<Option<Vec<_>>>()?;
    Some(FaceRegion { outer, holes })
}

pub fn sketch_regions(sketch: &Sketch, chord_tol: f64) -> Option<Vec<FaceRegion>> {
    sketch.faces.iter().map(|f| face_region(f, chord_tol)).collect()
}

pub fn point_in_face(face: &Face, p: P2, chord_tol: f64) -> bool {
    face_region(face, chord_tol).is_some_and(|r| r.contains(p))
}

/// Crossing-number test.
pub fn point_in_polygon(ring: &[P2], p: P2) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Signed area (positive when counterclockwise).
pub fn polygon_area(ring: &[P2]) -> f64 {
    let n = ring.len();
    (0..n).map(|i| cross2(ring[i], ring[(i + 1) % n])).sum::<f64>() / 2.0
}

fn segments_cross(a: P2, b: P2, c: P2, d: P2) -> bool {
    let eps = 1e-12;
    let d1 = orient2(c, d, a);
    let d2 = orient2(c, d, b);
    let d3 = orient2(a, b, c);
    let d4 = orient2(a, b, d);
    if ((d1 > eps && d2 < -eps) || (d1 < -eps && d2 > eps)) && ((d3 > eps && d4 < -eps) || (d3 < -eps && d4 > eps)) {
        return true;
    }
    // collinear overlap / touching
    let on = |p: P2, q: P2, r: P2, o: f64| {
        o.abs() <= eps
            && r[0] >= p[0].min(q[0]) - eps
            && r[0] <= p[0].max(q[0]) + eps
            && r[1] >= p[1].min(q[1]) - eps
            && r[1] <= p[1].max(q[1]) + eps
    };
    on(c, d, a, d1) || on(c, d, b, d2) || on(a, b, c, d3) || on(a, b, d, d4)
}

/// True when two non-adjacent edges of a closed ring intersect or touch, or
/// when the ring has fewer than three vertices or zero area.
pub fn ring_self_intersects(ring: &[P2]) -> bool {
    let n = ring.len();
    if n < 3 || polygon_area(ring).abs() < 1e-14 {
        return true;
    }
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                // adjacent edges share a vertex; they only conflict when they fold back
                let (p, q, r) = if j == i + 1 { (a, b, ring[(j + 1) % n]) } else { (ring[j], a, b) };
                let u = sub2(q, p);
                let v = sub2(r, q);
                if cross2(u, v).abs() <= 1e-14 && u[0] * v[0] + u[1] * v[1] < 0.0 {
                    return true;
                }
                continue;
            }
            if segments_cross(a, b, ring[j], ring[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

/// True when any edge of `a` intersects or touches any edge of `b`.
pub fn polygons_intersect(a: &[P2], b: &[P2]) -> bool {
    let (na, nb) = (a.len(), b.len());
    (0..na).any(|i| (0..nb).any(|j| segments_cross(a[i], a[(i + 1) % na], b[j], b[(j + 1) % nb])))
}
