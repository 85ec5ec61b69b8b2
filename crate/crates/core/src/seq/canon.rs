use super::codec::loop_geom_classes;
use super::model::{CadModel, CurveKind, Face, Loop, Sketch, Step};

/// Brings a model into the canonical form emitted by `flatten`.
///
/// Faces are ordered by the bottom-left corner `(min_y, min_x)` of their outer
/// loop, holes likewise within a face. Outer loops run counterclockwise and
/// holes clockwise; every loop starts at the curve whose start point has the
/// smallest geometry token.
/// Remaining ties are broken by the loop's geometry tokens.
pub fn canonicalize(model: &CadModel) -> CadModel {
    CadModel {
        steps: model
            .steps
            .iter()
            .map(|s| Step { sketch: canonical_sketch(&s.sketch), extrude: s.extrude })
            .collect(),
    }
}

pub fn canonical_sketch(sketch: &Sketch) -> Sketch {
    let mut faces: Vec<Face> = sketch.faces.iter().map(canonical_face).collect();
    faces.sort_by_cached_key(|f| {
        let mut key = loop_geom_classes(&f.outer);
        for h in &f.holes {
            key.extend(loop_geom_classes(h));
        }
        (f.outer.corner_key(), key)
    });
    Sketch { faces }
}

pub fn canonical_face(face: &Face) -> Face {
    let outer = canonical_loop(&face.outer, true);
    let mut holes: Vec<Loop> = face.holes.iter().map(|h| canonical_loop(h, false)).collect();
    holes.sort_by_cached_key(|h| (h.corner_key(), loop_geom_classes(h)));
    Face { outer, holes }
}

/// Orients a loop (counterclockwise when `outer`) and rotates it to start at
/// the start point with the smallest geometry token (lowest row, then column).
pub fn canonical_loop(lp: &Loop, outer: bool) -> Loop {
    if lp.curves.is_empty() {
        return lp.clone();
    }
    let area = lp.signed_area2();
    let mut lp = if (outer && area < 0) || (!outer && area > 0) { lp.reversed() } else { lp.clone() };

    if lp.curves.len() == 1 && lp.curves[0].kind == CurveKind::Circle {
        let pts = &mut lp.curves[0].points;
        if let Some(k) = pts.iter().enumerate().min_by_key(|(_, p)| p.yx()).map(|(i, _)| i) {
            pts.rotate_left(k);
        }
        return lp;
    }

    let start = lp
        .curves
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.start().map(|p| (p.yx(), i)))
        .min()
        .map(|(_, i)| i)
        .unwrap_or(0);
    lp.curves.rotate_left(start);
    lp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::model::{Curve, GridPoint};

    fn p(x: u8, y: u8) -> GridPoint {
        GridPoint::new(x, y)
    }

    #[test]
    fn outer_loop_becomes_ccw_from_min_point() {
        // clockwise square starting at top-right
        let cw = Loop::polygon(&[p(9, 9), p(9, 1), p(1, 1), p(1, 9)]);
        let c = canonical_loop(&cw, true);
        assert!(c.signed_area2() > 0);
        assert_eq!(c.curves[0].start(), Some(p(1, 1)));
        assert_eq!(c.control_points(), vec![p(1, 1), p(9, 1), p(9, 9), p(1, 9)]);
    }

    #[test]
    fn hole_becomes_cw() {
        let ccw = Loop::polygon(&[p(3, 3), p(5, 3), p(5, 5)]);
        let c = canonical_loop(&ccw, false);
        assert!(c.signed_area2() < 0);
        assert_eq!(c.curves[0].start(), Some(p(3, 3)));
    }

    #[test]
    fn arcs_reverse_with_their_loop() {
        // stadium: line, arc, line, arc (counterclockwise)
        let lp = Loop::new(vec![
            Curve::line(p(10, 10), p(20, 10)),
            Curve::arc(p(20, 10), p(25, 15), p(20, 20)),
            Curve::line(p(20, 20), p(10, 20)),
            Curve::arc(p(10, 20), p(5, 15), p(10, 10)),
        ]);
        assert_eq!(canonical_loop(&lp, true), lp);
        let hole = canonical_loop(&lp, false);
        assert_eq!(hole.curves[0], Curve::arc(p(10, 10), p(5, 15), p(10, 20)));
        assert_eq!(canonical_loop(&hole, true), lp);
    }

    #[test]
    fn faces_sorted_by_corner() {
        let a = Face::new(Loop::polygon(&[p(30, 2), p(40, 2), p(40, 12)]));
        let b = Face::new(Loop::polygon(&[p(2, 5), p(12, 5), p(12, 15)]));
        let s = canonical_sketch(&Sketch::new(vec![b.clone(), a.clone()]));
        assert_eq!(s.faces[0].outer.corner_key(), (2, 30));
        assert_eq!(canonical_sketch(&s), s);
    }
}
