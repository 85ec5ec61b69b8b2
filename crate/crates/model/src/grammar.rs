//! Per-position legality masks for constrained decoding.

use skexcraft_core::seq::{
    ExtrudeSlot, EXTRUDE_BLOCK_LEN, EXT_END_EXTRUDE, EXT_END_SEQ, GEOM_END_CURVE, GEOM_END_FACE, GEOM_END_LOOP,
    GEOM_END_SEQ, GEOM_END_SKETCH,
};

/// Classes `0..4096` are pixels.
const PIXELS: u16 = GEOM_END_CURVE;

/// Token families of the geometry view.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeomClass {
    Pixel,
    EndCurve,
    EndLoop,
    EndFace,
    EndSketch,
    EndSeq,
}

impl GeomClass {
    pub const ALL: [GeomClass; 6] = [
        GeomClass::Pixel,
        GeomClass::EndCurve,
        GeomClass::EndLoop,
        GeomClass::EndFace,
        GeomClass::EndSketch,
        GeomClass::EndSeq,
    ];

    pub fn of(class: u16) -> Self {
        match class {
            c if c < PIXELS => GeomClass::Pixel,
            GEOM_END_CURVE => GeomClass::EndCurve,
            GEOM_END_LOOP => GeomClass::EndLoop,
            GEOM_END_FACE => GeomClass::EndFace,
            GEOM_END_SKETCH => GeomClass::EndSketch,
            _ => GeomClass::EndSeq,
        }
    }

    fn classes(self) -> std::ops::Range<u16> {
        match self {
            GeomClass::Pixel => 0..PIXELS,
            GeomClass::EndCurve => GEOM_END_CURVE..GEOM_END_CURVE + 1,
            GeomClass::EndLoop => GEOM_END_LOOP..GEOM_END_LOOP + 1,
            GeomClass::EndFace => GEOM_END_FACE..GEOM_END_FACE + 1,
            GeomClass::EndSketch => GEOM_END_SKETCH..GEOM_END_SKETCH + 1,
            GeomClass::EndSeq => GEOM_END_SEQ..GEOM_END_SEQ + 1,
        }
    }
}

/// Incremental parser state of a geometry prefix.
///
/// Enforces curve arity (1, 2 or 4 points), circles alone in their loop,
/// loops that close (two or more curves with at least three points),
/// non-empty faces and sketches, and a length budget so that the sequence
/// can always be finished.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeomGrammar {
    max_len: usize,
    len: usize,
    points: usize,
    curves: usize,
    loop_points: usize,
    circle: bool,
    loops: usize,
    faces: usize,
    sketches: usize,
    done: bool,
}

impl GeomGrammar {
    pub fn new(max_len: usize) -> Self {
        Self {
            max_len,
            len: 0,
            points: 0,
            curves: 0,
            loop_points: 0,
            circle: false,
            loops: 0,
            faces: 0,
            sketches: 0,
            done: false,
        }
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn loop_closable(&self) -> bool {
        self.circle || (self.curves >= 2 && self.loop_points >= 3)
    }

    fn allows_family(&self, c: GeomClass) -> bool {
        if self.done {
            return false;
        }
        match c {
            GeomClass::Pixel => self.points < 4 && !self.circle && (self.curves == 0 || self.points < 2),
            GeomClass::EndCurve => matches!(self.points, 1 | 2 | 4),
            GeomClass::EndLoop => self.points == 0 && self.curves > 0 && self.loop_closable(),
            GeomClass::EndFace => self.points == 0 && self.curves == 0 && self.loops > 0,
            GeomClass::EndSketch => self.points == 0 && self.curves == 0 && self.loops == 0 && self.faces > 0,
            GeomClass::EndSeq => {
                self.points == 0 && self.curves == 0 && self.loops == 0 && self.faces == 0 && self.sketches > 0
            }
        }
    }

    fn apply(&mut self, c: GeomClass) {
        self.len += 1;
        match c {
            GeomClass::Pixel => self.points += 1,
            GeomClass::EndCurve => {
                self.circle = self.points == 4;
                self.loop_points += self.points;
                self.curves += 1;
                self.points = 0;
            }
            GeomClass::EndLoop => {
                self.loops += 1;
                self.curves = 0;
                self.loop_points = 0;
                self.circle = false;
            }
            GeomClass::EndFace => {
                self.faces += 1;
                self.loops = 0;
            }
            GeomClass::EndSketch => {
                self.sketches += 1;
                self.faces = 0;
            }
            GeomClass::EndSeq => self.done = true,
        }
    }

    /// Fewest tokens that close the open loop, `EndLoop` included.
    fn loop_cost(&self) -> usize {
        let closed = |curves: usize, points: usize| -> usize {
            if points == 4 && curves == 1 {
                return 1;
            }
            let extra = match (curves, points) {
                (c, p) if c >= 2 && p >= 3 => 0,
                (c, _) if c >= 2 => 2,
                (_, 1) => 3,
                _ => 2,
            };
            extra + 1
        };
        let (c, lp) = (self.curves, self.loop_points);
        match self.points {
            0 => closed(c, lp),
            1 if c == 0 => 1 + closed(1, 1),
            1 => (1 + closed(c + 1, lp + 1)).min(2 + closed(c + 1, lp + 2)),
            2 => 1 + closed(c + 1, lp + 2),
            3 => 2 + closed(c + 1, lp + 4),
            _ => 1 + closed(c + 1, lp + 4),
        }
    }

    /// Fewest tokens that complete the sequence from this state.
    fn min_to_finish(&self) -> usize {
        if self.done {
            return 0;
        }
        let mut n = 0;
        let mut s = self.clone();
        if s.points > 0 || s.curves > 0 {
            n += s.loop_cost();
            s.loops += 1;
        }
        if s.loops > 0 {
            n += 1;
            s.faces += 1;
        }
        if s.faces > 0 {
            n += 1;
            s.sketches += 1;
        }
        if s.sketches == 0 {
            // line, arc, EndLoop, EndFace, EndSketch
            n += 8;
        }
        n + 1
    }

    /// Whether a token of family `c` may come next.
    pub fn allows(&self, c: GeomClass) -> bool {
        if !self.allows_family(c) {
            return false;
        }
        let mut next = self.clone();
        next.apply(c);
        next.len + next.min_to_finish() <= self.max_len
    }

    /// Class ranges legal at the next position.
    pub fn allowed(&self) -> Vec<std::ops::Range<u16>> {
        GeomClass::ALL.iter().filter(|&&c| self.allows(c)).map(|c| c.classes()).collect()
    }

    /// Consumes one class; `false` if it was not legal.
    pub fn push(&mut self, class: u16) -> bool {
        let c = GeomClass::of(class);
        if !self.allows(c) {
            return false;
        }
        self.apply(c);
        true
    }
}

/// Position-template state of an extrude prefix: `[H H R×9 O×3 S×3 B E]`
/// blocks followed by the end-of-sequence token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtrudeGrammar {
    max_len: usize,
    len: usize,
    done: bool,
}

impl ExtrudeGrammar {
    pub fn new(max_len: usize) -> Self {
        Self { max_len, len: 0, done: false }
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn allowed(&self) -> Vec<std::ops::Range<u16>> {
        if self.done {
            return Vec::new();
        }
        let offset = self.len % EXTRUDE_BLOCK_LEN;
        if offset == 0 {
            let mut out = Vec::new();
            if self.len + EXTRUDE_BLOCK_LEN < self.max_len {
                out.push(ExtrudeSlot::at(0).allowed_classes());
            }
            if self.len > 0 {
                out.push(EXT_END_SEQ..EXT_END_SEQ + 1);
            }
            return out;
        }
        vec![ExtrudeSlot::at(offset).allowed_classes()]
    }

    pub fn push(&mut self, class: u16) -> bool {
        if !self.allowed().iter().any(|r| r.contains(&class)) {
            return false;
        }
        self.len += 1;
        self.done = class == EXT_END_SEQ;
        debug_assert!(class != EXT_END_EXTRUDE || self.len % EXTRUDE_BLOCK_LEN == 0);
        true
    }
}

/// Sets every logit outside `allowed` to `-inf`.
pub fn apply_mask(logits: &mut [f64], allowed: &[std::ops::Range<u16>]) {
    let mut keep = vec![false; logits.len()];
    for r in allowed {
        for c in r.clone() {
            keep[c as usize] = true;
        }
    }
    for (l, k) in logits.iter_mut().zip(keep) {
        if !k {
            *l = f64::NEG_INFINITY;
        }
    }
}
