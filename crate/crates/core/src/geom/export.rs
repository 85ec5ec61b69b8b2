use std::fmt::Write;

use super::{arc_center, circle_fit, GeomError, TriMesh, P2};
use crate::seq::{dequantize, Curve, CurveKind, Sketch};

const STROKE_LINE: &str = "black";
const STROKE_ARC: &str = "green";
const STROKE_CIRCLE: &str = "red";

/// Sketch point in SVG user units (64×64 canvas, y pointing up).
fn svg_point(p: P2) -> P2 {
    [p[0] * 64.0, 64.0 - p[1] * 64.0]
}

fn curve_path(c: &Curve) -> Option<(String, &'static str)> {
    if c.points.len() != c.kind.point_count() {
        return None;
    }
    let q: Vec<P2> = c.points.iter().map(|&p| dequantize(p)).collect();
    let s = |p: P2| {
        let v = svg_point(p);
        format!("{:.3} {:.3}", v[0], v[1])
    };
    Some(match c.kind {
        CurveKind::Line => (format!("M {} L {}", s(q[0]), s(q[1])), STROKE_LINE),
        CurveKind::Arc => match arc_center(q[0], q[1], q[2]) {
            Ok(arc) => {
                let r = arc.radius * 64.0;
                let large = u8::from(arc.sweep.abs() > std::f64::consts::PI);
                // y is flipped, so counterclockwise sketch arcs use sweep-flag 0
                let sweep = u8::from(arc.sweep < 0.0);
                (format!("M {} A {r:.3} {r:.3} 0 {large} {sweep} {}", s(q[0]), s(q[2])), STROKE_ARC)
            }
            Err(_) => (format!("M {} L {}", s(q[0]), s(q[2])), STROKE_ARC),
        },
        CurveKind::Circle => {
            let pts = [q[0], q[1], q[2], q[3]];
            let (center, radius) = match circle_fit(&pts) {
                Ok(f) => (f.center, f.radius),
                Err(GeomError::DegenerateCircle(r)) => (pts[0], r),
                Err(_) => return None,
            };
            let r = radius * 64.0;
            let a = [center[0] + radius, center[1]];
            let b = [center[0] - radius, center[1]];
            (format!("M {} A {r:.3} {r:.3} 0 1 0 {} A {r:.3} {r:.3} 0 1 0 {}", s(a), s(b), s(a)), STROKE_CIRCLE)
        }
    })
}

/// SVG 1.1 drawing of a sketch: one `<path>` per curve, colored by type.
pub fn export_svg(sketch: &Sketch) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" viewBox=\"0 0 64 64\" width=\"256\" height=\"256\">\n",
    );
    for face in &sketch.faces {
        for lp in face.loops() {
            for c in &lp.curves {
                if let Some((d, stroke)) = curve_path(c) {
                    let _ = writeln!(out, "  <path d=\"{d}\" stroke=\"{stroke}\" stroke-width=\"0.5\" fill=\"none\"/>");
                }
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Wavefront OBJ with `v` and `f` records only (1-based indices).
pub fn export_obj(mesh: &TriMesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

/// Reads back the `v`/`f` records written by [`export_obj`].
pub fn parse_obj(text: &str) -> Result<TriMesh, GeomError> {
    let bad = |l: &str| GeomError::Invalid(format!("bad OBJ record {l:?}"));
    let mut mesh = TriMesh::default();
    for line in text.lines() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it.map(|f| f.parse().map_err(|_| bad(line))).collect::<Result<_, _>>()?;
                if c.len() != 3 {
                    return Err(bad(line));
                }
                mesh.vertices.push([c[0], c[1], c[2]]);
            }
            Some("f") => {
                let c: Vec<usize> = it.map(|f| f.parse().map_err(|_| bad(line))).collect::<Result<_, _>>()?;
                if c.len() != 3 || c.iter().any(|&i| i == 0 || i > mesh.vertices.len()) {
                    return Err(bad(line));
                }
                mesh.triangles.push([c[0] - 1, c[1] - 1, c[2] - 1]);
            }
            Some(_) | None => {}
        }
    }
    Ok(mesh)
}
