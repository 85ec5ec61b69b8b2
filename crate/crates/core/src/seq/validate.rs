use std::fmt;

use serde::{Deserialize, Serialize};

use super::model::{BooleanOp, CadModel, Curve, CurveKind, ExtrudeParams, Face, Loop, GRID_MAX};
use super::dequantize;
use crate::geom::{
    arc_center, circle_fit, dist2, loop_polyline, point_in_polygon, polygons_intersect, ring_self_intersects,
    GeomError, DEFAULT_CHORD_TOL,
};

/// Circumradius limit, relative to the bounding-box diagonal, above which an arc counts as a line.
const COLLINEAR_RATIO: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    EmptyModel,
    EmptySketch,
    EmptyFace,
    EmptyLoop,
    CurveArity,
    CircleNotAlone,
    LoopTooShort,
    LoopNotClosed,
    GridRange,
    DegenerateCurve,
    CollinearArc,
    DegenerateCircle,
    IrregularCircle,
    LoopSelfIntersection,
    HoleOutside,
    HoleOverlap,
    ExtrudeBinRange,
    RotationEntry,
    RotationOrthogonal,
    FirstBoolean,
    ZeroHeight,
    ZeroScale,
}

impl Rule {
    pub const ALL: [Rule; 22] = [
        Rule::EmptyModel,
        Rule::EmptySketch,
        Rule::EmptyFace,
        Rule::EmptyLoop,
        Rule::CurveArity,
        Rule::CircleNotAlone,
        Rule::LoopTooShort,
        Rule::LoopNotClosed,
        Rule::GridRange,
        Rule::DegenerateCurve,
        Rule::CollinearArc,
        Rule::DegenerateCircle,
        Rule::IrregularCircle,
        Rule::LoopSelfIntersection,
        Rule::HoleOutside,
        Rule::HoleOverlap,
        Rule::ExtrudeBinRange,
        Rule::RotationEntry,
        Rule::RotationOrthogonal,
        Rule::FirstBoolean,
        Rule::ZeroHeight,
        Rule::ZeroScale,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Rule::EmptyModel => "empty-model",
            Rule::EmptySketch => "empty-sketch",
            Rule::EmptyFace => "empty-face",
            Rule::EmptyLoop => "empty-loop",
            Rule::CurveArity => "curve-arity",
            Rule::CircleNotAlone => "circle-not-alone",
            Rule::LoopTooShort => "loop-too-short",
            Rule::LoopNotClosed => "loop-not-closed",
            Rule::GridRange => "grid-range",
            Rule::DegenerateCurve => "degenerate-curve",
            Rule::CollinearArc => "collinear-arc",
            Rule::DegenerateCircle => "degenerate-circle",
            Rule::IrregularCircle => "irregular-circle",
            Rule::LoopSelfIntersection => "loop-self-intersection",
            Rule::HoleOutside => "hole-outside",
            Rule::HoleOverlap => "hole-overlap",
            Rule::ExtrudeBinRange => "extrude-bin-range",
            Rule::RotationEntry => "rotation-entry",
            Rule::RotationOrthogonal => "rotation-orthogonal",
            Rule::FirstBoolean => "first-boolean",
            Rule::ZeroHeight => "zero-height",
            Rule::ZeroScale => "zero-scale",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Location of a primitive. Loop 0 is the outer loop of a face.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrimitivePath {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub face: Option<usize>,
    #[serde(rename = "loop", skip_serializing_if = "Option::is_none")]
    pub loop_: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve: Option<usize>,
}

impl PrimitivePath {
    pub const MODEL: PrimitivePath = PrimitivePath { step: None, face: None, loop_: None, curve: None };

    pub fn step(s: usize) -> Self {
        Self { step: Some(s), ..Self::MODEL }
    }

    pub fn face(self, f: usize) -> Self {
        Self { face: Some(f), ..self }
    }

    pub fn loop_(self, l: usize) -> Self {
        Self { loop_: Some(l), ..self }
    }

    pub fn curve(self, c: usize) -> Self {
        Self { curve: Some(c), ..self }
    }
}

impl fmt::Display for PrimitivePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts = [("step", self.step), ("face", self.face), ("loop", self.loop_), ("curve", self.curve)];
        let mut any = false;
        for (name, v) in parts {
            if let Some(v) = v {
                if any {
                    f.write_str("/")?;
                }
                write!(f, "{name}[{v}]")?;
                any = true;
            }
        }
        if !any {
            f.write_str("model")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub rule: Rule,
    pub path: PrimitivePath,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.rule, self.path, self.message)
    }
}

struct Sink(Vec<Diagnostic>);

impl Sink {
    fn push(&mut self, rule: Rule, path: PrimitivePath, message: impl Into<String>) {
        self.0.push(Diagnostic { rule, path, message: message.into() });
    }
}

/// Checks every grammar rule and extrusion invariant. Empty iff the model is valid.
pub fn validate(model: &CadModel) -> Vec<Diagnostic> {
    let mut d = Sink(Vec::new());
    if model.steps.is_empty() {
        d.push(Rule::EmptyModel, PrimitivePath::MODEL, "model has no steps");
    }
    for (s, step) in model.steps.iter().enumerate() {
        let path = PrimitivePath::step(s);
        if step.sketch.faces.is_empty() {
            d.push(Rule::EmptySketch, path, "sketch has no faces");
        }
        for (f, face) in step.sketch.faces.iter().enumerate() {
            check_face(face, path.face(f), &mut d);
        }
        check_extrude(&step.extrude, s, path, &mut d);
    }
    d.0
}

fn check_face(face: &Face, path: PrimitivePath, d: &mut Sink) {
    let mut loops_ok = true;
    for (l, lp) in face.loops().enumerate() {
        loops_ok &= check_loop(lp, path.loop_(l), d);
    }
    if face.outer.curves.is_empty() && face.holes.is_empty() {
        d.push(Rule::EmptyFace, path, "face has no loops");
    }
    if !loops_ok {
        return;
    }
    let Some(outer) = loop_polyline(&face.outer, DEFAULT_CHORD_TOL) else { return };
    let holes: Vec<_> = face.holes.iter().filter_map(|h| loop_polyline(h, DEFAULT_CHORD_TOL)).collect();
    for (i, h) in holes.iter().enumerate() {
        let hp = path.loop_(i + 1);
        if polygons_intersect(&h.vertices, &outer.vertices)
            || !h.vertices.iter().all(|&p| point_in_polygon(&outer.vertices, p))
        {
            d.push(Rule::HoleOutside, hp, "hole is not strictly inside the outer loop");
        }
        for (j, g) in holes.iter().enumerate().skip(i + 1) {
            if polygons_intersect(&h.vertices, &g.vertices)
                || point_in_polygon(&g.vertices, h.vertices[0])
                || point_in_polygon(&h.vertices, g.vertices[0])
            {
                d.push(Rule::HoleOverlap, hp, format!("hole overlaps hole {}", j + 1));
            }
        }
    }
}

/// Returns whether the loop is well-formed enough for region checks.
fn check_loop(lp: &Loop, path: PrimitivePath, d: &mut Sink) -> bool {
    let before = d.0.len();
    if lp.curves.is_empty() {
        d.push(Rule::EmptyLoop, path, "loop has no curves");
        return false;
    }
    for (c, curve) in lp.curves.iter().enumerate() {
        check_curve(curve, path.curve(c), d);
    }
    if d.0[before..].iter().any(|x| x.rule == Rule::CurveArity) {
        return false;
    }
    let circles = lp.curves.iter().filter(|c| c.kind == CurveKind::Circle).count();
    if circles > 0 && lp.curves.len() > 1 {
        d.push(Rule::CircleNotAlone, path, "a loop with a circle cannot contain other curves");
    } else if circles == 0 {
        let points: usize = lp.curves.iter().map(|c| c.points.len() - 1).sum();
        if lp.curves.len() < 2 || points < 3 {
            d.push(Rule::LoopTooShort, path, "a loop needs at least two curves and three points");
        }
        let n = lp.curves.len();
        for i in 0..n {
            let (a, b) = (&lp.curves[i], &lp.curves[(i + 1) % n]);
            if a.end() != b.start() {
                d.push(
                    Rule::LoopNotClosed,
                    path.curve(i),
                    format!("curve ends at {} but the next starts at {}", a.end().unwrap(), b.start().unwrap()),
                );
            }
        }
    }
    if d.0.len() > before {
        return false;
    }
    match loop_polyline(lp, DEFAULT_CHORD_TOL) {
        Some(pl) if !ring_self_intersects(&pl.vertices) => true,
        _ => {
            d.push(Rule::LoopSelfIntersection, path, "loop intersects itself or encloses no area");
            false
        }
    }
}

fn check_curve(c: &Curve, path: PrimitivePath, d: &mut Sink) {
    if c.points.len() != c.kind.point_count() {
        d.push(
            Rule::CurveArity,
            path,
            format!("{:?} needs {} points, found {}", c.kind, c.kind.point_count(), c.points.len()),
        );
        return;
    }
    if let Some(p) = c.points.iter().find(|p| !p.in_range()) {
        d.push(Rule::GridRange, path, format!("point {p} is outside the 64x64 grid"));
        return;
    }
    let q: Vec<_> = c.points.iter().map(|&p| dequantize(p)).collect();
    match c.kind {
        CurveKind::Line => {
            if c.points[0] == c.points[1] {
                d.push(Rule::DegenerateCurve, path, "line has coincident endpoints");
            }
        }
        CurveKind::Arc => {
            if c.points[0] == c.points[1] || c.points[1] == c.points[2] || c.points[0] == c.points[2] {
                d.push(Rule::DegenerateCurve, path, "arc has coincident points");
                return;
            }
            let (lo, hi) = q.iter().fold(([f64::MAX; 2], [f64::MIN; 2]), |(lo, hi), p| {
                ([lo[0].min(p[0]), lo[1].min(p[1])], [hi[0].max(p[0]), hi[1].max(p[1])])
            });
            let diag = dist2(lo, hi);
            match arc_center(q[0], q[1], q[2]) {
                Ok(a) if a.radius <= COLLINEAR_RATIO * diag => {}
                _ => d.push(Rule::CollinearArc, path, "arc points are collinear"),
            }
        }
        CurveKind::Circle => match circle_fit(&[q[0], q[1], q[2], q[3]]) {
            Ok(fit) if fit.irregular => d.push(
                Rule::IrregularCircle,
                path,
                format!("circle points deviate by {:.4} from the mean radius", fit.max_deviation),
            ),
            Ok(_) => {}
            Err(GeomError::DegenerateCircle(r)) => {
                d.push(Rule::DegenerateCircle, path, format!("circle radius {r:.4} is below half a grid cell"))
            }
            Err(e) => d.push(Rule::DegenerateCircle, path, e.to_string()),
        },
    }
}

fn check_extrude(e: &ExtrudeParams, step: usize, path: PrimitivePath, d: &mut Sink) {
    if let Some(b) = e.numeric_bins().find(|&b| b > GRID_MAX) {
        d.push(Rule::ExtrudeBinRange, path, format!("extrusion bin {b} exceeds {GRID_MAX}"));
    }
    let r = e.rotation;
    if let Some(v) = r.iter().find(|v| !(-1..=1).contains(*v)) {
        d.push(Rule::RotationEntry, path, format!("rotation entry {v} is not -1, 0 or 1"));
    } else {
        let m = |i: usize, j: usize| r[3 * i + j] as i32;
        let orthonormal = (0..3).all(|i| {
            (0..3).all(|j| (0..3).map(|k| m(i, k) * m(j, k)).sum::<i32>() == i32::from(i == j))
        });
        let det = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
            + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
        if !orthonormal || det != 1 {
            d.push(Rule::RotationOrthogonal, path, "rotation is not orthogonal with determinant +1");
        }
    }
    if step == 0 && e.boolean != BooleanOp::Union {
        d.push(Rule::FirstBoolean, path, "the first extrusion must be a union");
    }
    if e.heights[0] == e.heights[1] {
        d.push(Rule::ZeroHeight, path, "top and bottom heights coincide");
    }
    if e.scale[2] == 0 {
        d.push(Rule::ZeroScale, path, "scale factor is zero");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::{GridPoint, Sketch, Step};

    fn p(x: u8, y: u8) -> GridPoint {
        GridPoint::new(x, y)
    }

    fn square() -> Loop {
        Loop::polygon(&[p(8, 8), p(40, 8), p(40, 40), p(8, 40)])
    }

    fn cube() -> CadModel {
        CadModel::single(Sketch::new(vec![Face::new(square())]), ExtrudeParams::new_body(48))
    }

    fn rules(m: &CadModel) -> Vec<Rule> {
        validate(m).into_iter().map(|d| d.rule).collect()
    }

    fn with_loop(lp: Loop) -> CadModel {
        CadModel::single(Sketch::new(vec![Face::new(lp)]), ExtrudeParams::new_body(48))
    }

    fn with_extrude(f: impl FnOnce(&mut ExtrudeParams)) -> CadModel {
        let mut m = cube();
        f(&mut m.steps[0].extrude);
        m
    }

    #[test]
    fn valid_cube() {
        assert_eq!(validate(&cube()), vec![]);
    }

    #[test]
    fn circle_with_line_violates_exclusivity() {
        let lp = Loop::new(vec![
            Curve::circle([p(20, 10), p(30, 20), p(20, 30), p(10, 20)]),
            Curve::line(p(20, 10), p(30, 10)),
        ]);
        assert!(rules(&with_loop(lp)).contains(&Rule::CircleNotAlone));
    }

    #[test]
    fn rotation_with_equal_rows() {
        let m = with_extrude(|e| e.rotation = [1, 0, 0, 1, 0, 0, 0, 0, 1]);
        assert_eq!(rules(&m), vec![Rule::RotationOrthogonal]);
    }

    #[test]
    fn mutation_suite() {
        let circle = [p(20, 10), p(30, 20), p(20, 30), p(10, 20)];
        let cases: Vec<(Rule, CadModel)> = vec![
            (Rule::EmptyModel, CadModel::new(vec![])),
            (Rule::EmptySketch, CadModel::single(Sketch::new(vec![]), ExtrudeParams::new_body(48))),
            (Rule::EmptyLoop, with_loop(Loop::new(vec![]))),
            (Rule::CurveArity, with_loop(Loop::new(vec![Curve { kind: CurveKind::Arc, points: vec![p(1, 1), p(5, 5)] }]))),
            (
                Rule::CircleNotAlone,
                with_loop(Loop::new(vec![Curve::circle(circle), Curve::circle(circle)])),
            ),
            (Rule::LoopTooShort, with_loop(Loop::new(vec![Curve::line(p(1, 1), p(9, 9))]))),
            (Rule::LoopNotClosed, with_loop(Loop::polygon(&[p(8, 8), p(40, 8), p(40, 40)]).tap_last(p(9, 40)))),
            (Rule::GridRange, with_loop(Loop::polygon(&[p(8, 8), p(64, 8), p(40, 40)]))),
            (Rule::DegenerateCurve, with_loop(Loop::polygon(&[p(8, 8), p(8, 8), p(40, 40), p(8, 40)]))),
            (
                Rule::CollinearArc,
                with_loop(Loop::new(vec![Curve::arc(p(0, 0), p(10, 10), p(20, 20)), Curve::line(p(20, 20), p(0, 0))])),
            ),
            (Rule::DegenerateCircle, with_loop(Loop::circle([p(10, 10), p(10, 10), p(10, 10), p(10, 10)]))),
            (Rule::IrregularCircle, with_loop(Loop::circle([p(10, 30), p(30, 31), p(50, 30), p(30, 29)]))),
            (Rule::LoopSelfIntersection, with_loop(Loop::polygon(&[p(0, 0), p(20, 20), p(20, 0), p(0, 20)]))),
            (
                Rule::HoleOutside,
                CadModel::single(
                    Sketch::new(vec![Face::with_holes(square(), vec![Loop::polygon(&[p(50, 50), p(60, 50), p(60, 60)])])]),
                    ExtrudeParams::new_body(48),
                ),
            ),
            (
                Rule::HoleOverlap,
                CadModel::single(
                    Sketch::new(vec![Face::with_holes(
                        square(),
                        vec![
                            Loop::polygon(&[p(12, 12), p(24, 12), p(24, 24), p(12, 24)]),
                            Loop::polygon(&[p(20, 20), p(30, 20), p(30, 30), p(20, 30)]),
                        ],
                    )]),
                    ExtrudeParams::new_body(48),
                ),
            ),
            (Rule::ExtrudeBinRange, with_extrude(|e| e.translation[1] = 64)),
            (Rule::RotationEntry, with_extrude(|e| e.rotation[4] = 2)),
            (Rule::RotationOrthogonal, with_extrude(|e| e.rotation = [1, 0, 0, 0, -1, 0, 0, 0, 1])),
            (Rule::FirstBoolean, with_extrude(|e| e.boolean = BooleanOp::Subtraction)),
            (Rule::ZeroHeight, with_extrude(|e| e.heights = [40, 40])),
            (Rule::ZeroScale, with_extrude(|e| e.scale[2] = 0)),
        ];
        for (rule, model) in cases {
            let found = rules(&model);
            assert!(found.contains(&rule), "{rule}: got {found:?}");
        }
    }

    #[test]
    fn later_steps_may_subtract() {
        let mut m = cube();
        let mut cut = ExtrudeParams::new_body(48);
        cut.boolean = BooleanOp::Subtraction;
        m.steps.push(Step {
            sketch: Sketch::new(vec![Face::new(Loop::circle([p(24, 16), p(32, 24), p(24, 32), p(16, 24)]))]),
            extrude: cut,
        });
        assert_eq!(validate(&m), vec![]);
    }

    #[test]
    fn diagnostic_display_carries_rule_and_path() {
        let m = with_extrude(|e| e.heights = [40, 40]);
        let text = validate(&m)[0].to_string();
        assert_eq!(text, "[zero-height] step[0]: top and bottom heights coincide");
        let path = PrimitivePath::step(1).face(0).loop_(2).curve(3);
        assert_eq!(path.to_string(), "step[1]/face[0]/loop[2]/curve[3]");
    }

    trait TapLast {
        fn tap_last(self, end: GridPoint) -> Self;
    }

    impl TapLast for Loop {
        /// Moves the end of the last curve so the chain no longer closes.
        fn tap_last(mut self, end: GridPoint) -> Self {
            let last = self.curves.last_mut().unwrap();
            *last.points.last_mut().unwrap() = end;
            self
        }
    }
}
