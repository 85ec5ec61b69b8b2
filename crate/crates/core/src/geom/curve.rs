use std::f64::consts::PI;

use super::{cross2, dist2, orient2, sub2, GeomError, Polyline2, GRID_CELL, P2};
use crate::seq::{dequantize, Curve, CurveKind};

/// A curve with real-valued (dequantized) points.
#[derive(Clone, Debug, PartialEq)]
pub enum RealCurve {
    Line { start: P2, end: P2 },
    Arc { start: P2, mid: P2, end: P2 },
    Circle { points: [P2; 4] },
}

impl RealCurve {
    /// Dequantizes a curve. `None` when the point count does not match the kind.
    pub fn from_grid(c: &Curve) -> Option<Self> {
        if c.points.len() != c.kind.point_count() {
            return None;
        }
        let q: Vec<P2> = c.points.iter().map(|&p| dequantize(p)).collect();
        Some(match c.kind {
            CurveKind::Line => RealCurve::Line { start: q[0], end: q[1] },
            CurveKind::Arc => RealCurve::Arc { start: q[0], mid: q[1], end: q[2] },
            CurveKind::Circle => RealCurve::Circle { points: [q[0], q[1], q[2], q[3]] },
        })
    }

    pub fn start(&self) -> P2 {
        match self {
            RealCurve::Line { start, .. } | RealCurve::Arc { start, .. } => *start,
            RealCurve::Circle { points } => points[0],
        }
    }
}

/// Circle through three points plus the signed sweep from the first to the
/// third point passing through the second (positive = counterclockwise).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArcGeometry {
    pub center: P2,
    pub radius: f64,
    pub start_angle: f64,
    pub sweep: f64,
}

pub fn arc_center(p0: P2, p1: P2, p2: P2) -> Result<ArcGeometry, GeomError> {
    let d = 2.0 * orient2(p0, p1, p2);
    let scale = dist2(p0, p1).max(dist2(p1, p2)).max(dist2(p0, p2));
    if scale == 0.0 || d.abs() <= 1e-12 * scale * scale {
        return Err(GeomError::Collinear);
    }
    // circumcenter relative to p0
    let b = sub2(p1, p0);
    let c = sub2(p2, p0);
    let bb = b[0] * b[0] + b[1] * b[1];
    let cc = c[0] * c[0] + c[1] * c[1];
    let ux = (c[1] * bb - b[1] * cc) / d;
    let uy = (b[0] * cc - c[0] * bb) / d;
    let center = [p0[0] + ux, p0[1] + uy];
    let radius = (ux * ux + uy * uy).sqrt();

    let angle = |p: P2| (p[1] - center[1]).atan2(p[0] - center[0]);
    let a0 = angle(p0);
    let ccw_to = |p: P2| (angle(p) - a0).rem_euclid(2.0 * PI);
    let s = ccw_to(p2);
    let m = ccw_to(p1);
    let sweep = if m < s { s } else { s - 2.0 * PI };
    Ok(ArcGeometry { center, radius, start_angle: a0, sweep })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CircleFit {
    pub center: P2,
    pub radius: f64,
    /// Largest deviation of a point's distance from the mean radius.
    pub max_deviation: f64,
    /// Set when the deviation exceeds two grid cells.
    pub irregular: bool,
}

/// Centroid / mean-distance fit of the four points defining a circle.
pub fn circle_fit(points: &[P2; 4]) -> Result<CircleFit, GeomError> {
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / 4.0;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / 4.0;
    let center = [cx, cy];
    let dists: Vec<f64> = points.iter().map(|&p| dist2(p, center)).collect();
    let radius = dists.iter().sum::<f64>() / 4.0;
    if radius < 0.5 * GRID_CELL {
        return Err(GeomError::DegenerateCircle(radius));
    }
    let max_deviation = dists.iter().map(|d| (d - radius).abs()).fold(0.0, f64::max);
    Ok(CircleFit { center, radius, max_deviation, irregular: max_deviation > 2.0 * GRID_CELL })
}

/// Segments needed so the sagitta of each chord stays within `tol`.
fn segment_count(radius: f64, sweep: f64, tol: f64) -> usize {
    let max_angle = if tol >= radius { PI } else { 2.0 * (1.0 - tol / radius).acos() };
    ((sweep.abs() / max_angle).ceil() as usize).max(1)
}

/// Polyline approximation whose chords deviate at most `chord_tol` from the
/// curve. Lines and arcs give an open polyline that keeps the exact end
/// points; circles give a closed ring starting at the first point.
pub fn discretize(curve: &RealCurve, chord_tol: f64) -> Polyline2 {
    assert!(chord_tol > 0.0, "chord tolerance must be positive");
    match *curve {
        RealCurve::Line { start, end } => Polyline2::open(vec![start, end]),
        RealCurve::Arc { start, mid, end } => match arc_center(start, mid, end) {
            Ok(arc) => {
                let n = segment_count(arc.radius, arc.sweep, chord_tol);
                let mut pts = Vec::with_capacity(n + 1);
                pts.push(start);
                for k in 1..n {
                    let a = arc.start_angle + arc.sweep * k as f64 / n as f64;
                    pts.push([arc.center[0] + arc.radius * a.cos(), arc.center[1] + arc.radius * a.sin()]);
                }
                pts.push(end);
                Polyline2::open(pts)
            }
            // degenerate arcs are treated as lines
            Err(_) => Polyline2::open(vec![start, end]),
        },
        RealCurve::Circle { points } => {
            let (center, radius) = match circle_fit(&points) {
                Ok(f) => (f.center, f.radius),
                Err(_) => return Polyline2::closed(points.to_vec()),
            };
            let area2: f64 = (0..4).map(|i| cross2(points[i], points[(i + 1) % 4])).sum();
            let dir = if area2 >= 0.0 { 1.0 } else { -1.0 };
            let n = segment_count(radius, 2.0 * PI, chord_tol).max(3);
            let a0 = (points[0][1] - center[1]).atan2(points[0][0] - center[0]);
            let pts = (0..n)
                .map(|k| {
                    let a = a0 + dir * 2.0 * PI * k as f64 / n as f64;
                    [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
                })
                .collect();
            Polyline2::closed(pts)
        }
    }
}
