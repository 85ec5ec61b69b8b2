//! Flattening models into token sequences, splitting them into views and
//! parsing views back into models.

use super::canon::canonicalize;
use super::model::{CadModel, Curve, CurveKind, ExtrudeParams, Face, GridPoint, Loop, Sketch, Step};
use super::token::{
    ExtToken, ExtrudeSlot, GeomToken, SubSeq, Token, TokenSeq, TopoToken, ViewKind, Views, EXTRUDE_BLOCK_LEN,
};
use super::validate::validate;
use super::SeqError;

/// Flattens a valid model into its canonical token sequence.
pub fn flatten(model: &CadModel) -> Result<TokenSeq, SeqError> {
    let diagnostics = validate(model);
    if !diagnostics.is_empty() {
        return Err(SeqError::InvalidModel(diagnostics));
    }
    Ok(flatten_unchecked(model))
}

/// Token emission without validation; used for hashing arbitrary models.
pub fn flatten_unchecked(model: &CadModel) -> TokenSeq {
    let canon = canonicalize(model);
    let mut out = Vec::new();
    for step in &canon.steps {
        for face in &step.sketch.faces {
            for lp in face.loops() {
                emit_loop(lp, &mut out);
            }
            out.push(Token::EndFace);
        }
        out.push(Token::EndSketch);
        emit_extrude(&step.extrude, &mut out);
    }
    out.push(Token::EndSeq);
    TokenSeq(out)
}

fn emit_loop(lp: &Loop, out: &mut Vec<Token>) {
    for c in &lp.curves {
        out.push(Token::Topo(c.kind));
        out.extend(c.points.iter().take(c.kind.token_count()).map(|&p| Token::Geom(p)));
        out.push(Token::EndCurve);
    }
    out.push(Token::EndLoop);
}

fn emit_extrude(e: &ExtrudeParams, out: &mut Vec<Token>) {
    out.extend(e.heights.iter().map(|&b| Token::Numeric(b)));
    out.extend(e.rotation.iter().map(|&v| Token::Rot(v)));
    out.extend(e.translation.iter().map(|&b| Token::Numeric(b)));
    out.extend(e.scale.iter().map(|&b| Token::Numeric(b)));
    out.push(Token::Bool(e.boolean));
    out.push(Token::EndExtrude);
}

/// Geometry-view classes of a single loop (including its EndLoop).
pub(crate) fn loop_geom_classes(lp: &Loop) -> Vec<u16> {
    let mut toks = Vec::new();
    emit_loop(lp, &mut toks);
    toks.into_iter().filter_map(geom_token).map(GeomToken::class).collect()
}

fn topo_token(t: Token) -> Option<TopoToken> {
    Some(match t {
        Token::Topo(k) => TopoToken::Curve(k),
        Token::EndLoop => TopoToken::EndLoop,
        Token::EndFace => TopoToken::EndFace,
        Token::EndSketch => TopoToken::EndSketch,
        Token::EndSeq => TopoToken::EndSeq,
        _ => return None,
    })
}

fn geom_token(t: Token) -> Option<GeomToken> {
    Some(match t {
        Token::Geom(p) => GeomToken::Point(p),
        Token::EndCurve => GeomToken::EndCurve,
        Token::EndLoop => GeomToken::EndLoop,
        Token::EndFace => GeomToken::EndFace,
        Token::EndSketch => GeomToken::EndSketch,
        Token::EndSeq => GeomToken::EndSeq,
        _ => return None,
    })
}

fn ext_token(t: Token) -> Option<ExtToken> {
    Some(match t {
        Token::Numeric(b) => ExtToken::Numeric(b),
        Token::Rot(v) => ExtToken::Rot(v),
        Token::Bool(op) => ExtToken::Bool(op),
        Token::EndExtrude => ExtToken::EndExtrude,
        Token::EndSeq => ExtToken::EndSeq,
        _ => return None,
    })
}

/// Projects a sequence onto its topology, geometry and extrude views.
pub fn split(seq: &TokenSeq) -> Result<Views, SeqError> {
    let toks = seq.tokens();
    match toks.iter().position(|t| *t == Token::EndSeq) {
        Some(i) if i + 1 == toks.len() => {}
        Some(_) => return Err(SeqError::malformed("tokens after EndSeq")),
        None => return Err(SeqError::malformed("missing EndSeq")),
    }
    for t in toks {
        if let Token::Geom(p) = t {
            if !p.in_range() {
                return Err(SeqError::malformed(format!("grid point {p} outside 0..=63")));
            }
        }
        if let Token::Numeric(b) = t {
            if *b > 63 {
                return Err(SeqError::malformed(format!("numeric bin {b} outside 0..=63")));
            }
        }
        if let Token::Rot(v) = t {
            if !(-1..=1).contains(v) {
                return Err(SeqError::malformed(format!("rotation entry {v}")));
            }
        }
    }
    let topology = toks.iter().filter_map(|&t| topo_token(t)).map(TopoToken::class).collect();
    let geometry = toks.iter().filter_map(|&t| geom_token(t)).map(GeomToken::class).collect();
    let extrude = toks.iter().filter_map(|&t| ext_token(t)).map(ExtToken::class).collect();
    Ok(Views {
        topology: SubSeq::new(ViewKind::Topology, topology),
        geometry: SubSeq::new(ViewKind::Geometry, geometry),
        extrude: SubSeq::new(ViewKind::Extrude, extrude),
    })
}

/// `split(flatten(model))`.
pub fn views(model: &CadModel) -> Result<Views, SeqError> {
    split(&flatten(model)?)
}

fn expect_kind(sub: &SubSeq, kind: ViewKind) -> Result<(), SeqError> {
    if sub.kind != kind {
        return Err(SeqError::malformed(format!("expected a {kind} view, got {}", sub.kind)));
    }
    sub.check_range()
}

/// Recovers the topology view from a geometry view: a curve with 1, 2 or 4
/// geometry tokens is a line, an arc or a circle.
pub fn infer_topology(geom: &SubSeq) -> Result<SubSeq, SeqError> {
    expect_kind(geom, ViewKind::Geometry)?;
    let toks = geom.geom_tokens().expect("range checked");
    let mut out = Vec::new();
    let mut run = 0usize;
    for (i, t) in toks.iter().enumerate() {
        match t {
            GeomToken::Point(_) => run += 1,
            GeomToken::EndCurve => {
                let kind =
                    CurveKind::from_token_count(run).ok_or(SeqError::BadCurveArity { position: i, count: run })?;
                out.push(TopoToken::Curve(kind).class());
                run = 0;
            }
            other => {
                if run != 0 {
                    return Err(SeqError::malformed(format!("curve without EndCurve before position {i}")));
                }
                let topo = match other {
                    GeomToken::EndLoop => TopoToken::EndLoop,
                    GeomToken::EndFace => TopoToken::EndFace,
                    GeomToken::EndSketch => TopoToken::EndSketch,
                    _ => TopoToken::EndSeq,
                };
                out.push(topo.class());
            }
        }
    }
    Ok(SubSeq::new(ViewKind::Topology, out))
}

/// Reconstructs the sketches of a geometry view. Curve end points come from
/// the next curve's first point; the last curve of a loop closes to the first.
pub fn parse_geometry(geom: &SubSeq) -> Result<Vec<Sketch>, SeqError> {
    expect_kind(geom, ViewKind::Geometry)?;
    let toks = geom.geom_tokens().expect("range checked");
    match toks.iter().position(|t| *t == GeomToken::EndSeq) {
        Some(i) if i + 1 == toks.len() => {}
        Some(_) => return Err(SeqError::malformed("tokens after EndSeq")),
        None => return Err(SeqError::malformed("missing EndSeq")),
    }

    let mut sketches = Vec::new();
    let mut faces = Vec::new();
    let mut loops: Vec<Loop> = Vec::new();
    let mut curves: Vec<Vec<GridPoint>> = Vec::new();
    let mut points = Vec::new();

    for (i, t) in toks.iter().enumerate() {
        let pending_curve = !points.is_empty();
        match *t {
            GeomToken::Point(p) => points.push(p),
            GeomToken::EndCurve => {
                if CurveKind::from_token_count(points.len()).is_none() {
                    return Err(SeqError::BadCurveArity { position: i, count: points.len() });
                }
                curves.push(std::mem::take(&mut points));
            }
            GeomToken::EndLoop => {
                if pending_curve {
                    return Err(SeqError::malformed(format!("EndLoop inside a curve at {i}")));
                }
                loops.push(chain_loop(std::mem::take(&mut curves), i)?);
            }
            GeomToken::EndFace => {
                if pending_curve || !curves.is_empty() || loops.is_empty() {
                    return Err(SeqError::malformed(format!("EndFace without a closed loop at {i}")));
                }
                let mut it = std::mem::take(&mut loops).into_iter();
                let outer = it.next().expect("non-empty");
                faces.push(Face { outer, holes: it.collect() });
            }
            GeomToken::EndSketch => {
                if pending_curve || !curves.is_empty() || !loops.is_empty() || faces.is_empty() {
                    return Err(SeqError::malformed(format!("EndSketch without a closed face at {i}")));
                }
                sketches.push(Sketch { faces: std::mem::take(&mut faces) });
            }
            GeomToken::EndSeq => {
                if pending_curve || !curves.is_empty() || !loops.is_empty() || !faces.is_empty() {
                    return Err(SeqError::malformed("EndSeq inside an open sketch"));
                }
            }
        }
    }
    if sketches.is_empty() {
        return Err(SeqError::malformed("no sketch"));
    }
    Ok(sketches)
}

fn chain_loop(raw: Vec<Vec<GridPoint>>, at: usize) -> Result<Loop, SeqError> {
    if raw.is_empty() {
        return Err(SeqError::malformed(format!("empty loop at {at}")));
    }
    if raw.iter().any(|c| c.len() == 4) {
        if raw.len() != 1 {
            return Err(SeqError::malformed(format!("circle shares its loop with other curves at {at}")));
        }
        let p = &raw[0];
        return Ok(Loop::circle([p[0], p[1], p[2], p[3]]));
    }
    let total: usize = raw.iter().map(Vec::len).sum();
    if raw.len() < 2 || total < 3 {
        return Err(SeqError::malformed(format!("loop ending at {at} does not close")));
    }
    let n = raw.len();
    let curves = (0..n)
        .map(|i| {
            let next = raw[(i + 1) % n][0];
            let mut pts = raw[i].clone();
            pts.push(next);
            let kind = if pts.len() == 2 { CurveKind::Line } else { CurveKind::Arc };
            Curve { kind, points: pts }
        })
        .collect();
    Ok(Loop::new(curves))
}

/// Parses the extrusion blocks of an extrude view.
pub fn parse_extrude(ext: &SubSeq) -> Result<Vec<ExtrudeParams>, SeqError> {
    expect_kind(ext, ViewKind::Extrude)?;
    let toks = ext.ext_tokens().expect("range checked");
    if toks.last() != Some(&ExtToken::EndSeq) {
        return Err(SeqError::malformed("missing EndSeq"));
    }
    let body = &toks[..toks.len() - 1];
    if body.is_empty() || body.len() % EXTRUDE_BLOCK_LEN != 0 {
        return Err(SeqError::malformed(format!(
            "extrude view of {} tokens is not a whole number of {EXTRUDE_BLOCK_LEN}-token blocks",
            body.len()
        )));
    }
    body.chunks(EXTRUDE_BLOCK_LEN).enumerate().map(|(b, block)| parse_block(block, b)).collect()
}

fn parse_block(block: &[ExtToken], index: usize) -> Result<ExtrudeParams, SeqError> {
    let bad = |off: usize| SeqError::malformed(format!("block {index}: unexpected token at offset {off}"));
    let numeric = |off: usize| match block[off] {
        ExtToken::Numeric(b) => Ok(b),
        _ => Err(bad(off)),
    };
    let mut rotation = [0i8; 9];
    for (k, r) in rotation.iter_mut().enumerate() {
        *r = match block[2 + k] {
            ExtToken::Rot(v) => v,
            _ => return Err(bad(2 + k)),
        };
    }
    let boolean = match block[17] {
        ExtToken::Bool(op) => op,
        _ => return Err(bad(17)),
    };
    if block[18] != ExtToken::EndExtrude {
        return Err(bad(18));
    }
    debug_assert_eq!(ExtrudeSlot::at(17), ExtrudeSlot::Boolean);
    Ok(ExtrudeParams {
        heights: [numeric(0)?, numeric(1)?],
        rotation,
        translation: [numeric(11)?, numeric(12)?, numeric(13)?],
        scale: [numeric(14)?, numeric(15)?, numeric(16)?],
        boolean,
    })
}

/// Merges a geometry view and an extrude view into a model; the i-th sketch
/// is paired with the i-th extrusion block.
pub fn parse(geom: &SubSeq, ext: &SubSeq) -> Result<CadModel, SeqError> {
    let sketches = parse_geometry(geom)?;
    let extrudes = parse_extrude(ext)?;
    if sketches.len() != extrudes.len() {
        return Err(SeqError::CountMismatch { sketches: sketches.len(), extrudes: extrudes.len() });
    }
    Ok(CadModel {
        steps: sketches.into_iter().zip(extrudes).map(|(sketch, extrude)| Step { sketch, extrude }).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::model::BooleanOp;
    use crate::seq::token::{GEOM_END_CURVE as EC, GEOM_END_FACE as EF, GEOM_END_LOOP as EL};
    use crate::seq::token::{GEOM_END_SEQ as END, GEOM_END_SKETCH as ES};

    fn p(x: u8, y: u8) -> GridPoint {
        GridPoint::new(x, y)
    }

    fn g(x: u8, y: u8) -> u16 {
        GeomToken::Point(p(x, y)).class()
    }

    fn square() -> CadModel {
        CadModel::single(
            Sketch::new(vec![Face::new(Loop::polygon(&[p(16, 16), p(47, 16), p(47, 47), p(16, 47)]))]),
            ExtrudeParams::new_body(40),
        )
    }

    fn circle() -> CadModel {
        CadModel::single(
            Sketch::new(vec![Face::new(Loop::circle([p(32, 16), p(48, 32), p(32, 48), p(16, 32)]))]),
            ExtrudeParams::new_body(40),
        )
    }

    #[test]
    fn square_views() {
        let v = views(&square()).unwrap();
        assert_eq!(
            v.geometry.classes,
            vec![g(16, 16), EC, g(47, 16), EC, g(47, 47), EC, g(16, 47), EC, EL, EF, ES, END]
        );
        assert_eq!(v.topology.classes, vec![0, 0, 0, 0, 3, 4, 5, 6]);
        assert_eq!(v.extrude.len(), EXTRUDE_BLOCK_LEN + 1);
    }

    #[test]
    fn circle_views() {
        let v = views(&circle()).unwrap();
        assert_eq!(v.geometry.classes, vec![g(32, 16), g(48, 32), g(32, 48), g(16, 32), EC, EL, EF, ES, END]);
        assert_eq!(v.topology.classes, vec![2, 3, 4, 5, 6]);
    }

    #[test]
    fn empty_model_is_invalid() {
        assert!(matches!(flatten(&CadModel::default()), Err(SeqError::InvalidModel(_))));
    }

    #[test]
    fn split_requires_end_seq() {
        let mut seq = flatten(&square()).unwrap();
        seq.0.pop();
        assert!(matches!(split(&seq), Err(SeqError::MalformedSequence(_))));
    }

    #[test]
    fn infer_topology_rules() {
        let geom = SubSeq::new(
            ViewKind::Geometry,
            vec![g(1, 1), EC, g(5, 1), g(6, 3), EC, EL, EF, ES, END],
        );
        assert_eq!(infer_topology(&geom).unwrap().classes, vec![0, 1, 3, 4, 5, 6]);
        let three = SubSeq::new(ViewKind::Geometry, vec![g(1, 1), g(2, 2), g(3, 1), EC, EL, EF, ES, END]);
        assert_eq!(infer_topology(&three), Err(SeqError::BadCurveArity { position: 3, count: 3 }));
    }

    #[test]
    fn infer_matches_circle_view() {
        let v = views(&circle()).unwrap();
        assert_eq!(infer_topology(&v.geometry).unwrap(), v.topology);
    }

    #[test]
    fn open_chain_is_malformed() {
        let single_line = SubSeq::new(ViewKind::Geometry, vec![g(1, 1), EC, EL, EF, ES, END]);
        assert!(matches!(parse_geometry(&single_line), Err(SeqError::MalformedSequence(_))));
        let two_points = SubSeq::new(ViewKind::Geometry, vec![g(1, 1), EC, g(4, 4), EC, EL, EF, ES, END]);
        assert!(matches!(parse_geometry(&two_points), Err(SeqError::MalformedSequence(_))));
    }

    #[test]
    fn count_mismatch() {
        let v = views(&square()).unwrap();
        let mut two = v.geometry.classes.clone();
        two.pop();
        two.extend_from_slice(&v.geometry.classes);
        let geom = SubSeq::new(ViewKind::Geometry, two);
        assert_eq!(parse(&geom, &v.extrude), Err(SeqError::CountMismatch { sketches: 2, extrudes: 1 }));
    }

    #[test]
    fn extrude_block_round_trip() {
        let mut m = square();
        m.steps.push(Step {
            sketch: circle().steps[0].sketch.clone(),
            extrude: ExtrudeParams {
                heights: [50, 20],
                rotation: [0, 0, 1, 0, 1, 0, -1, 0, 0],
                translation: [1, 2, 3],
                scale: [10, 20, 40],
                boolean: BooleanOp::Subtraction,
            },
        });
        let v = views(&m).unwrap();
        assert_eq!(parse(&v.geometry, &v.extrude).unwrap(), canonicalize(&m));
    }

    #[test]
    fn block_template_enforced() {
        let v = views(&square()).unwrap();
        let mut classes = v.extrude.classes.clone();
        classes.swap(0, 2);
        assert!(parse_extrude(&SubSeq::new(ViewKind::Extrude, classes)).is_err());
    }
}
