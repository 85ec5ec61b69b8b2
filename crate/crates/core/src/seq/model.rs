use std::fmt;

use serde::{Deserialize, Serialize};

/// Side length of the sketch quantization grid (6 bits per axis).
pub const GRID_SIZE: u16 = 64;
/// Largest valid grid coordinate.
pub const GRID_MAX: u8 = 63;
/// Number of bins used for every numeric extrusion value.
pub const EXTRUDE_BINS: u16 = 64;

/// Native model file format version.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A quantized sketch point on the 64×64 grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[u8; 2]", into = "[u8; 2]")]
pub struct GridPoint {
    pub x: u8,
    pub y: u8,
}

impl GridPoint {
    pub const fn new(x: u8, y: u8) -> Self {
        Self { x, y }
    }

    pub fn in_range(self) -> bool {
        self.x <= GRID_MAX && self.y <= GRID_MAX
    }

    /// Key used for face and hole ordering: bottom row first, then left to right.
    pub fn yx(self) -> (u8, u8) {
        (self.y, self.x)
    }
}

impl From<[u8; 2]> for GridPoint {
    fn from([x, y]: [u8; 2]) -> Self {
        Self { x, y }
    }
}

impl From<GridPoint> for [u8; 2] {
    fn from(p: GridPoint) -> Self {
        [p.x, p.y]
    }
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Line,
    Arc,
    Circle,
}

impl CurveKind {
    /// Number of points that fully define the curve.
    pub const fn point_count(self) -> usize {
        match self {
            CurveKind::Line => 2,
            CurveKind::Arc => 3,
            CurveKind::Circle => 4,
        }
    }

    /// Number of geometry tokens the curve emits in a flattened sequence. The
    /// end point of lines and arcs is the start point of the following curve.
    pub const fn token_count(self) -> usize {
        match self {
            CurveKind::Line => 1,
            CurveKind::Arc => 2,
            CurveKind::Circle => 4,
        }
    }

    pub fn from_token_count(k: usize) -> Option<Self> {
        match k {
            1 => Some(CurveKind::Line),
            2 => Some(CurveKind::Arc),
            4 => Some(CurveKind::Circle),
            _ => None,
        }
    }
}

/// A line (start, end), arc (start, mid, end) or circle (four points on it).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Curve {
    pub kind: CurveKind,
    #[serde(rename = "pts")]
    pub points: Vec<GridPoint>,
}

impl Curve {
    pub fn line(a: GridPoint, b: GridPoint) -> Self {
        Self { kind: CurveKind::Line, points: vec![a, b] }
    }

    pub fn arc(start: GridPoint, mid: GridPoint, end: GridPoint) -> Self {
        Self { kind: CurveKind::Arc, points: vec![start, mid, end] }
    }

    pub fn circle(points: [GridPoint; 4]) -> Self {
        Self { kind: CurveKind::Circle, points: points.to_vec() }
    }

    pub fn start(&self) -> Option<GridPoint> {
        self.points.first().copied()
    }

    /// Last point of the curve; for a circle this is the start point.
    pub fn end(&self) -> Option<GridPoint> {
        match self.kind {
            CurveKind::Circle => self.points.first().copied(),
            _ => self.points.last().copied(),
        }
    }

    /// The same curve traversed in the opposite direction.
    pub fn reversed(&self) -> Self {
        let points = match self.kind {
            CurveKind::Circle if !self.points.is_empty() => {
                let mut pts = vec![self.points[0]];
                pts.extend(self.points[1..].iter().rev());
                pts
            }
            _ => self.points.iter().rev().copied().collect(),
        };
        Self { kind: self.kind, points }
    }
}

/// A closed chain of curves.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Loop {
    pub curves: Vec<Curve>,
}

impl Loop {
    pub fn new(curves: Vec<Curve>) -> Self {
        Self { curves }
    }

    /// Closed polygon through consecutive lines.
    pub fn polygon(points: &[GridPoint]) -> Self {
        let n = points.len();
        let curves = (0..n).map(|i| Curve::line(points[i], points[(i + 1) % n])).collect();
        Self { curves }
    }

    pub fn circle(points: [GridPoint; 4]) -> Self {
        Self { curves: vec![Curve::circle(points)] }
    }

    pub fn is_circle(&self) -> bool {
        self.curves.len() == 1 && self.curves[0].kind == CurveKind::Circle
    }

    /// Every defining point in traversal order, with shared chain endpoints
    /// listed once (the tokenized point list).
    pub fn control_points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for c in &self.curves {
            match c.kind {
                CurveKind::Circle => out.extend(c.points.iter().copied()),
                _ => {
                    let n = c.points.len().saturating_sub(1);
                    out.extend(c.points[..n].iter().copied());
                }
            }
        }
        out
    }

    /// Twice the signed area of the control polygon; positive when counterclockwise.
    pub fn signed_area2(&self) -> i64 {
        let pts = self.control_points();
        let n = pts.len();
        let mut acc = 0i64;
        for i in 0..n {
            let a = pts[i];
            let b = pts[(i + 1) % n];
            acc += a.x as i64 * b.y as i64 - b.x as i64 * a.y as i64;
        }
        acc
    }

    pub fn reversed(&self) -> Self {
        Self { curves: self.curves.iter().rev().map(Curve::reversed).collect() }
    }

    pub fn min_point(&self) -> Option<GridPoint> {
        self.curves.iter().flat_map(|c| c.points.iter().copied()).min()
    }

    /// Bottom-left corner of the bounding box as `(min_y, min_x)`.
    pub fn corner_key(&self) -> (u8, u8) {
        let mut min_x = u8::MAX;
        let mut min_y = u8::MAX;
        for p in self.curves.iter().flat_map(|c| c.points.iter()) {
            min_x = min_x.min(p.x);
            min_y = min_y.min(p.y);
        }
        (min_y, min_x)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Face {
    pub outer: Loop,
    #[serde(default)]
    pub holes: Vec<Loop>,
}

impl Face {
    pub fn new(outer: Loop) -> Self {
        Self { outer, holes: Vec::new() }
    }

    pub fn with_holes(outer: Loop, holes: Vec<Loop>) -> Self {
        Self { outer, holes }
    }

    pub fn loops(&self) -> impl Iterator<Item = &Loop> {
        std::iter::once(&self.outer).chain(self.holes.iter())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sketch {
    pub faces: Vec<Face>,
}

impl Sketch {
    pub fn new(faces: Vec<Face>) -> Self {
        Self { faces }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BooleanOp {
    #[serde(rename = "U")]
    Union,
    #[serde(rename = "I")]
    Intersection,
    #[serde(rename = "S")]
    Subtraction,
}

impl BooleanOp {
    pub const ALL: [BooleanOp; 3] = [BooleanOp::Union, BooleanOp::Intersection, BooleanOp::Subtraction];

    pub fn letter(self) -> char {
        match self {
            BooleanOp::Union => 'U',
            BooleanOp::Intersection => 'I',
            BooleanOp::Subtraction => 'S',
        }
    }
}

/// Quantized extrusion block. Heights are `[top, bottom]` displacements along
/// the extrusion normal; `scale` holds the 2D scaling center and the factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExtrudeParams {
    #[serde(rename = "h")]
    pub heights: [u8; 2],
    #[serde(rename = "r")]
    pub rotation: [i8; 9],
    #[serde(rename = "o")]
    pub translation: [u8; 3],
    #[serde(rename = "s")]
    pub scale: [u8; 3],
    #[serde(rename = "bool")]
    pub boolean: BooleanOp,
}

impl ExtrudeParams {
    pub const IDENTITY_ROTATION: [i8; 9] = [1, 0, 0, 0, 1, 0, 0, 0, 1];

    /// Bin for a zero displacement / translation and for unit scale.
    pub const ZERO_BIN: u8 = 32;

    /// Identity placement extruded from z=0 to the given top bin.
    pub fn new_body(top: u8) -> Self {
        Self {
            heights: [top, Self::ZERO_BIN],
            rotation: Self::IDENTITY_ROTATION,
            translation: [Self::ZERO_BIN; 3],
            scale: [0, 0, Self::ZERO_BIN],
            boolean: BooleanOp::Union,
        }
    }

    pub fn numeric_bins(&self) -> impl Iterator<Item = u8> + '_ {
        self.heights.iter().chain(&self.translation).chain(&self.scale).copied()
    }

    // Dequantization maps. Zero displacement and unit scale are exactly representable.

    pub fn height_value(bin: u8) -> f64 {
        (bin as f64 - 32.0) / 32.0
    }

    pub fn translation_value(bin: u8) -> f64 {
        (bin as f64 - 32.0) / 32.0
    }

    pub fn center_value(bin: u8) -> f64 {
        bin as f64 / 64.0
    }

    pub fn scale_value(bin: u8) -> f64 {
        bin as f64 / 32.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Step {
    pub sketch: Sketch,
    pub extrude: ExtrudeParams,
}

/// A full sketch-and-extrude model: extruded sketches combined left to right.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CadModel {
    pub steps: Vec<Step>,
}

impl CadModel {
    pub fn new(steps: Vec<Step>) -> Self {
        Self { steps }
    }

    pub fn single(sketch: Sketch, extrude: ExtrudeParams) -> Self {
        Self { steps: vec![Step { sketch, extrude }] }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelFile::from(self)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let file: ModelFile = serde_json::from_str(text)?;
        Ok(file.into())
    }
}

/// On-disk envelope: `{version, steps}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub steps: Vec<Step>,
}

impl From<&CadModel> for ModelFile {
    fn from(m: &CadModel) -> Self {
        Self { version: MODEL_FORMAT_VERSION, steps: m.steps.clone() }
    }
}

impl From<ModelFile> for CadModel {
    fn from(f: ModelFile) -> Self {
        Self { steps: f.steps }
    }
}
