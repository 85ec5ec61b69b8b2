use std::ops::Range;

use super::region::{point_in_polygon, polygon_area, polygons_intersect, ring_self_intersects};
use super::{face_region, orient2, FaceRegion, GeomError, TriMesh, P2};
use crate::seq::Face;

/// Ear-clipped region. Rings are re-oriented (outer counterclockwise, holes
/// clockwise) and concatenated in `vertices`; triangles index into it.
#[derive(Clone, Debug)]
pub struct Triangulation {
    pub vertices: Vec<P2>,
    pub rings: Vec<Range<usize>>,
    pub triangles: Vec<[usize; 3]>,
}

pub fn triangulate(face: &Face, chord_tol: f64) -> Result<TriMesh, GeomError> {
    let region = face_region(face, chord_tol).ok_or_else(|| GeomError::Invalid("curve arity".into()))?;
    let t = triangulate_region(&region)?;
    Ok(TriMesh { vertices: t.vertices.iter().map(|p| [p[0], p[1], 0.0]).collect(), triangles: t.triangles })
}

pub fn triangulate_region(region: &FaceRegion) -> Result<Triangulation, GeomError> {
    if ring_self_intersects(&region.outer) || region.holes.iter().any(|h| ring_self_intersects(h)) {
        return Err(GeomError::SelfIntersecting);
    }
    for (i, h) in region.holes.iter().enumerate() {
        if !h.iter().all(|&p| point_in_polygon(&region.outer, p)) || polygons_intersect(h, &region.outer) {
            return Err(GeomError::SelfIntersecting);
        }
        for g in &region.holes[i + 1..] {
            if polygons_intersect(h, g) || point_in_polygon(g, h[0]) || point_in_polygon(h, g[0]) {
                return Err(GeomError::SelfIntersecting);
            }
        }
    }

    let mut vertices = Vec::new();
    let mut rings = Vec::new();
    let mut push_ring = |ring: &[P2], ccw: bool| {
        let start = vertices.len();
        if (polygon_area(ring) > 0.0) == ccw {
            vertices.extend_from_slice(ring);
        } else {
            vertices.extend(ring.iter().rev());
        }
        rings.push(start..vertices.len());
    };
    push_ring(&region.outer, true);
    for h in &region.holes {
        push_ring(h, false);
    }

    let mut poly: Vec<usize> = rings[0].clone().collect();
    let mut holes: Vec<Range<usize>> = rings[1..].to_vec();
    let max_x = |r: &Range<usize>| r.clone().map(|i| vertices[i][0]).fold(f64::NEG_INFINITY, f64::max);
    holes.sort_by(|a, b| max_x(b).total_cmp(&max_x(a)));
    for hole in &holes {
        poly = bridge_hole(&vertices, poly, hole.clone())?;
    }
    let triangles = ear_clip(&vertices, poly)?;
    Ok(Triangulation { vertices, rings, triangles })
}

/// Whether `m` lies inside the interior angle at position `k` of the ring.
fn locally_inside(v: &[P2], poly: &[usize], k: usize, m: P2) -> bool {
    let n = poly.len();
    let a = v[poly[(k + n - 1) % n]];
    let p = v[poly[k]];
    let b = v[poly[(k + 1) % n]];
    if orient2(a, p, b) >= 0.0 {
        orient2(p, b, m) > 0.0 && orient2(p, m, a) > 0.0
    } else {
        orient2(p, b, m) > 0.0 || orient2(p, m, a) > 0.0
    }
}

fn in_triangle(a: P2, b: P2, c: P2, p: P2) -> bool {
    orient2(a, b, p) >= 0.0 && orient2(b, c, p) >= 0.0 && orient2(c, a, p) >= 0.0
}

/// Connects a clockwise hole to the polygon through a mutually visible vertex
/// pair, splicing the hole ring into the polygon's index list.
fn bridge_hole(v: &[P2], poly: Vec<usize>, hole: Range<usize>) -> Result<Vec<usize>, GeomError> {
    let (mpos, m_idx) = hole
        .clone()
        .enumerate()
        .max_by(|(_, a), (_, b)| v[*a][0].total_cmp(&v[*b][0]).then(v[*b][1].total_cmp(&v[*a][1])))
        .expect("non-empty hole");
    let m = v[m_idx];
    let n = poly.len();

    // nearest intersection of the +x ray from m with the polygon
    let mut best_x = f64::INFINITY;
    let mut cand: Option<usize> = None;
    for k in 0..n {
        let a = v[poly[k]];
        let b = v[poly[(k + 1) % n]];
        if a[1] == b[1] || m[1] < a[1].min(b[1]) || m[1] > a[1].max(b[1]) {
            continue;
        }
        let x = a[0] + (m[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
        if x >= m[0] && x < best_x {
            best_x = x;
            cand = Some(if x == a[0] && m[1] == a[1] {
                k
            } else if x == b[0] && m[1] == b[1] {
                (k + 1) % n
            } else if a[0] > b[0] {
                k
            } else {
                (k + 1) % n
            });
        }
    }
    let mut pick = cand.ok_or(GeomError::SelfIntersecting)?;
    let p = v[poly[pick]];
    let i = [best_x, m[1]];

    if p != i {
        // a reflex vertex inside triangle (m, i, p) hides p; take the one with
        // the smallest angle to the ray
        let (tri_b, tri_c) = if m[1] < p[1] { (i, p) } else { (p, i) };
        let mut best_tan = f64::INFINITY;
        let mut best_dx = f64::INFINITY;
        for k in 0..n {
            let q = v[poly[k]];
            if k == pick || q[0] < m[0] || !in_triangle(m, tri_b, tri_c, q) {
                continue;
            }
            if !locally_inside(v, &poly, k, m) {
                continue;
            }
            let dx = q[0] - m[0];
            let tan = (q[1] - m[1]).abs() / dx.max(f64::MIN_POSITIVE);
            if tan < best_tan || (tan == best_tan && dx < best_dx) {
                best_tan = tan;
                best_dx = dx;
                pick = k;
            }
        }
    }
    // duplicated vertices from earlier bridges: use the occurrence whose sector holds m
    let target = poly[pick];
    if !locally_inside(v, &poly, pick, m) {
        if let Some(k) = (0..n).find(|&k| poly[k] == target && locally_inside(v, &poly, k, m)) {
            pick = k;
        }
    }

    let ring: Vec<usize> = hole.clone().collect();
    let mut out = Vec::with_capacity(n + ring.len() + 2);
    out.extend_from_slice(&poly[..=pick]);
    for j in 0..=ring.len() {
        out.push(ring[(mpos + j) % ring.len()]);
    }
    out.push(target);
    out.extend_from_slice(&poly[pick + 1..]);
    Ok(out)
}

fn ear_clip(v: &[P2], mut poly: Vec<usize>) -> Result<Vec<[usize; 3]>, GeomError> {
    let mut tris = Vec::with_capacity(poly.len());
    let area_eps = 1e-14;
    let mut i = 0usize;
    let mut misses = 0usize;
    while poly.len() > 3 {
        let n = poly.len();
        i %= n;
        let (ia, ib, ic) = (poly[(i + n - 1) % n], poly[i], poly[(i + 1) % n]);
        let (a, b, c) = (v[ia], v[ib], v[ic]);
        let is_ear = orient2(a, b, c) > area_eps
            && !poly.iter().enumerate().any(|(k, &iv)| {
                let q = v[iv];
                k != i
                    && k != (i + n - 1) % n
                    && k != (i + 1) % n
                    && q != a
                    && q != b
                    && q != c
                    && in_triangle(a, b, c, q)
            });
        if is_ear {
            tris.push([ia, ib, ic]);
            poly.remove(i);
            misses = 0;
        } else {
            i += 1;
            misses += 1;
            if misses > n {
                return Err(GeomError::SelfIntersecting);
            }
        }
    }
    if poly.len() == 3 && orient2(v[poly[0]], v[poly[1]], v[poly[2]]) > area_eps {
        tris.push([poly[0], poly[1], poly[2]]);
    }
    Ok(tris)
}
