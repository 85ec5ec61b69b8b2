//! Token alphabet and the fixed class-index layouts of the three views.
//!
//! Layouts (part of the checkpoint and file contract):
//!
//! * topology, 7 classes: line=0, arc=1, circle=2, endLoop=3, endFace=4,
//!   endSketch=5, endSeq=6
//! * geometry, 4101 classes: pixel `y*64+x` for 0..4095, endCurve=4096,
//!   endLoop=4097, endFace=4098, endSketch=4099, endSeq=4100
//! * extrude, 72 classes: numeric bins 0..63, rotation −1/0/+1 = 64/65/66,
//!   boolean U/I/S = 67/68/69, endExtrudedSketch=70, endSeq=71

use std::fmt;

use serde::{Deserialize, Serialize};

use super::model::{BooleanOp, CurveKind, GridPoint, GRID_SIZE};
use super::SeqError;

pub const TOPOLOGY_CLASSES: usize = 7;
pub const GEOMETRY_CLASSES: usize = 4101;
pub const EXTRUDE_CLASSES: usize = 72;

/// Version tag for the class layouts above, recorded in checkpoint manifests.
pub const CLASS_LAYOUT_VERSION: u32 = 1;

/// Tokens per extrusion block, excluding the end-of-sequence token.
pub const EXTRUDE_BLOCK_LEN: usize = 19;

/// One token of the full construction sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Token {
    Topo(CurveKind),
    Geom(GridPoint),
    EndCurve,
    EndLoop,
    EndFace,
    EndSketch,
    Numeric(u8),
    Rot(i8),
    Bool(BooleanOp),
    EndExtrude,
    EndSeq,
}

/// A flattened sketch-and-extrude sequence.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TokenSeq(pub Vec<Token>);

impl TokenSeq {
    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewKind {
    Topology,
    Geometry,
    Extrude,
}

impl ViewKind {
    pub fn num_classes(self) -> usize {
        match self {
            ViewKind::Topology => TOPOLOGY_CLASSES,
            ViewKind::Geometry => GEOMETRY_CLASSES,
            ViewKind::Extrude => EXTRUDE_CLASSES,
        }
    }

    pub fn end_seq_class(self) -> u16 {
        (self.num_classes() - 1) as u16
    }

    pub fn text_prefix(self) -> &'static str {
        match self {
            ViewKind::Topology => "TOPO:",
            ViewKind::Geometry => "GEOM:",
            ViewKind::Extrude => "EXT:",
        }
    }
}

impl fmt::Display for ViewKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViewKind::Topology => "topology",
            ViewKind::Geometry => "geometry",
            ViewKind::Extrude => "extrude",
        };
        f.write_str(s)
    }
}

/// Token of the topology view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TopoToken {
    Curve(CurveKind),
    EndLoop,
    EndFace,
    EndSketch,
    EndSeq,
}

impl TopoToken {
    pub fn class(self) -> u16 {
        match self {
            TopoToken::Curve(CurveKind::Line) => 0,
            TopoToken::Curve(CurveKind::Arc) => 1,
            TopoToken::Curve(CurveKind::Circle) => 2,
            TopoToken::EndLoop => 3,
            TopoToken::EndFace => 4,
            TopoToken::EndSketch => 5,
            TopoToken::EndSeq => 6,
        }
    }

    pub fn from_class(c: u16) -> Option<Self> {
        Some(match c {
            0 => TopoToken::Curve(CurveKind::Line),
            1 => TopoToken::Curve(CurveKind::Arc),
            2 => TopoToken::Curve(CurveKind::Circle),
            3 => TopoToken::EndLoop,
            4 => TopoToken::EndFace,
            5 => TopoToken::EndSketch,
            6 => TopoToken::EndSeq,
            _ => return None,
        })
    }
}

/// Token of the geometry view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GeomToken {
    Point(GridPoint),
    EndCurve,
    EndLoop,
    EndFace,
    EndSketch,
    EndSeq,
}

pub const GEOM_END_CURVE: u16 = 4096;
pub const GEOM_END_LOOP: u16 = 4097;
pub const GEOM_END_FACE: u16 = 4098;
pub const GEOM_END_SKETCH: u16 = 4099;
pub const GEOM_END_SEQ: u16 = 4100;

impl GeomToken {
    pub fn class(self) -> u16 {
        match self {
            GeomToken::Point(p) => p.y as u16 * GRID_SIZE + p.x as u16,
            GeomToken::EndCurve => GEOM_END_CURVE,
            GeomToken::EndLoop => GEOM_END_LOOP,
            GeomToken::EndFace => GEOM_END_FACE,
            GeomToken::EndSketch => GEOM_END_SKETCH,
            GeomToken::EndSeq => GEOM_END_SEQ,
        }
    }

    pub fn from_class(c: u16) -> Option<Self> {
        Some(match c {
            0..=4095 => GeomToken::Point(GridPoint::new((c % GRID_SIZE) as u8, (c / GRID_SIZE) as u8)),
            GEOM_END_CURVE => GeomToken::EndCurve,
            GEOM_END_LOOP => GeomToken::EndLoop,
            GEOM_END_FACE => GeomToken::EndFace,
            GEOM_END_SKETCH => GeomToken::EndSketch,
            GEOM_END_SEQ => GeomToken::EndSeq,
            _ => return None,
        })
    }
}

/// Token of the extrude view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExtToken {
    Numeric(u8),
    Rot(i8),
    Bool(BooleanOp),
    EndExtrude,
    EndSeq,
}

pub const EXT_ROT_BASE: u16 = 64;
pub const EXT_BOOL_BASE: u16 = 67;
pub const EXT_END_EXTRUDE: u16 = 70;
pub const EXT_END_SEQ: u16 = 71;

impl ExtToken {
    pub fn class(self) -> u16 {
        match self {
            ExtToken::Numeric(b) => b as u16,
            ExtToken::Rot(v) => (EXT_ROT_BASE as i16 + 1 + v as i16) as u16,
            ExtToken::Bool(BooleanOp::Union) => EXT_BOOL_BASE,
            ExtToken::Bool(BooleanOp::Intersection) => EXT_BOOL_BASE + 1,
            ExtToken::Bool(BooleanOp::Subtraction) => EXT_BOOL_BASE + 2,
            ExtToken::EndExtrude => EXT_END_EXTRUDE,
            ExtToken::EndSeq => EXT_END_SEQ,
        }
    }

    pub fn from_class(c: u16) -> Option<Self> {
        Some(match c {
            0..=63 => ExtToken::Numeric(c as u8),
            64..=66 => ExtToken::Rot(c as i8 - 65),
            67 => ExtToken::Bool(BooleanOp::Union),
            68 => ExtToken::Bool(BooleanOp::Intersection),
            69 => ExtToken::Bool(BooleanOp::Subtraction),
            EXT_END_EXTRUDE => ExtToken::EndExtrude,
            EXT_END_SEQ => ExtToken::EndSeq,
            _ => return None,
        })
    }
}

/// Which token family is legal at a given offset of the 19-token extrusion
/// block `[H H R×9 O×3 S×3 B E]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExtrudeSlot {
    Height,
    Rotation,
    Translation,
    Scale,
    Boolean,
    End,
}

impl ExtrudeSlot {
    pub fn at(offset: usize) -> Self {
        match offset {
            0..=1 => ExtrudeSlot::Height,
            2..=10 => ExtrudeSlot::Rotation,
            11..=13 => ExtrudeSlot::Translation,
            14..=16 => ExtrudeSlot::Scale,
            17 => ExtrudeSlot::Boolean,
            18 => ExtrudeSlot::End,
            _ => panic!("offset {offset} outside extrusion block"),
        }
    }

    /// Token-type id used for extrude-branch type embeddings (End-of-sequence is 6).
    pub fn type_id(self) -> usize {
        self as usize
    }

    pub fn allowed_classes(self) -> std::ops::Range<u16> {
        match self {
            ExtrudeSlot::Height | ExtrudeSlot::Translation | ExtrudeSlot::Scale => 0..64,
            ExtrudeSlot::Rotation => 64..67,
            ExtrudeSlot::Boolean => 67..70,
            ExtrudeSlot::End => 70..71,
        }
    }
}

/// Number of distinct extrude token types (five parameter families, block end, sequence end).
pub const EXTRUDE_TOKEN_TYPES: usize = 7;

/// Type id of every position of an extrude view (for type embeddings).
pub fn extrude_type_ids(len: usize) -> Vec<usize> {
    (0..len)
        .map(|i| {
            if i + 1 == len {
                EXTRUDE_TOKEN_TYPES - 1
            } else {
                ExtrudeSlot::at(i % EXTRUDE_BLOCK_LEN).type_id()
            }
        })
        .collect()
}

/// One projection of a token sequence as class indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubSeq {
    pub kind: ViewKind,
    pub classes: Vec<u16>,
}

impl SubSeq {
    pub fn new(kind: ViewKind, classes: Vec<u16>) -> Self {
        Self { kind, classes }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Checks every class index against the view's layout.
    pub fn check_range(&self) -> Result<(), SeqError> {
        let n = self.kind.num_classes() as u16;
        match self.classes.iter().position(|&c| c >= n) {
            Some(i) => Err(SeqError::ClassOutOfRange { view: self.kind, index: i, class: self.classes[i] }),
            None => Ok(()),
        }
    }

    pub fn topo_tokens(&self) -> Option<Vec<TopoToken>> {
        self.classes.iter().map(|&c| TopoToken::from_class(c)).collect()
    }

    pub fn geom_tokens(&self) -> Option<Vec<GeomToken>> {
        self.classes.iter().map(|&c| GeomToken::from_class(c)).collect()
    }

    pub fn ext_tokens(&self) -> Option<Vec<ExtToken>> {
        self.classes.iter().map(|&c| ExtToken::from_class(c)).collect()
    }

    /// Whitespace-separated class indices prefixed with the view tag.
    pub fn to_text(&self) -> String {
        let mut s = String::from(self.kind.text_prefix());
        for c in &self.classes {
            s.push(' ');
            s.push_str(&c.to_string());
        }
        s
    }

    pub fn from_text(line: &str) -> Result<Self, SeqError> {
        let line = line.trim();
        let (kind, rest) = [ViewKind::Topology, ViewKind::Geometry, ViewKind::Extrude]
            .into_iter()
            .find_map(|k| line.strip_prefix(k.text_prefix()).map(|r| (k, r)))
            .ok_or_else(|| SeqError::BadText(format!("missing view prefix in {line:?}")))?;
        let classes = rest
            .split_whitespace()
            .map(|f| f.parse::<u16>().map_err(|e| SeqError::BadText(format!("{f:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let sub = SubSeq::new(kind, classes);
        sub.check_range()?;
        Ok(sub)
    }
}

/// The three views of one model in token text format.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Views {
    pub topology: SubSeq,
    pub geometry: SubSeq,
    pub extrude: SubSeq,
}

impl Views {
    pub fn to_text(&self) -> String {
        format!("{}\n{}\n{}\n", self.topology.to_text(), self.geometry.to_text(), self.extrude.to_text())
    }

    pub fn from_text(text: &str) -> Result<Self, SeqError> {
        let mut topology = None;
        let mut geometry = None;
        let mut extrude = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let sub = SubSeq::from_text(line)?;
            let slot = match sub.kind {
                ViewKind::Topology => &mut topology,
                ViewKind::Geometry => &mut geometry,
                ViewKind::Extrude => &mut extrude,
            };
            if slot.replace(sub).is_some() {
                return Err(SeqError::BadText("duplicate view line".into()));
            }
        }
        match (topology, geometry, extrude) {
            (Some(topology), Some(geometry), Some(extrude)) => Ok(Self { topology, geometry, extrude }),
            _ => Err(SeqError::BadText("expected TOPO:, GEOM: and EXT: lines".into())),
        }
    }
}
