//! Synthetic sketch-and-extrude corpora: generation, de-duplication, splits,
//! coordinate-noise augmentation and NDJSON persistence.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seq::{
    parse_geometry, validate, views, BooleanOp, CadModel, Curve, DedupKey, ExtrudeParams, Face, GeomToken,
    GridPoint, Loop, Sketch, Step, SubSeq, ViewKind, CLASS_LAYOUT_VERSION, GRID_MAX,
};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("invalid corpus spec: {0}")]
    Spec(String),
}

/// Relative frequency of each face template.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateWeights {
    pub rectangle: f64,
    pub polygon: f64,
    pub circle: f64,
    pub slot: f64,
    pub holed: f64,
}

impl TemplateWeights {
    fn as_array(&self) -> [f64; 5] {
        [self.rectangle, self.polygon, self.circle, self.slot, self.holed]
    }
}

impl Default for TemplateWeights {
    fn default() -> Self {
        Self { rectangle: 0.3, polygon: 0.2, circle: 0.2, slot: 0.15, holed: 0.15 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub templates: TemplateWeights,
    /// Probability that a model has a second extruded sketch.
    pub two_step_prob: f64,
    /// Probability that a sketch holds two faces instead of one.
    pub two_face_prob: f64,
    /// Probability of a rotation other than the identity, drawn from the 24 axis-aligned ones.
    pub rotation_prob: f64,
    /// Weights of union, subtraction and intersection for the second step.
    pub boolean_mix: [f64; 3],
    pub seed: u64,
    pub size: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            templates: TemplateWeights::default(),
            two_step_prob: 0.3,
            two_face_prob: 0.15,
            rotation_prob: 0.3,
            boolean_mix: [0.3, 0.6, 0.1],
            seed: 0,
            size: 1000,
        }
    }
}

impl CorpusSpec {
    pub fn check(&self) -> Result<(), DatasetError> {
        let w = self.templates.as_array();
        if w.iter().chain(&self.boolean_mix).any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(DatasetError::Spec("weights must be finite and nonnegative".into()));
        }
        if w.iter().sum::<f64>() <= 0.0 || self.boolean_mix.iter().sum::<f64>() <= 0.0 {
            return Err(DatasetError::Spec("weights must not all be zero".into()));
        }
        for p in [self.two_step_prob, self.two_face_prob, self.rotation_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DatasetError::Spec(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// The 24 rotation matrices with entries in {-1, 0, 1} and determinant +1.
pub fn axis_rotations() -> Vec<[i8; 9]> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for perm in PERMS {
        let parity = if matches!(perm, [0, 1, 2] | [1, 2, 0] | [2, 0, 1]) { 1 } else { -1 };
        for signs in 0..8u8 {
            let s: [i8; 3] = std::array::from_fn(|i| if signs >> i & 1 == 1 { -1 } else { 1 });
            if parity * s[0] * s[1] * s[2] != 1 {
                continue;
            }
            let mut m = [0i8; 9];
            for row in 0..3 {
                m[3 * row + perm[row]] = s[row];
            }
            out.push(m);
        }
    }
    out
}

/// Inclusive grid rectangle available to a template.
#[derive(Clone, Copy, Debug)]
struct Area {
    x0: i32,
    y0: i32,
    x1: i32,
    y1: i32,
}

impl Area {
    const FULL: Area = Area { x0: 0, y0: 0, x1: GRID_MAX as i32, y1: GRID_MAX as i32 };

    fn w(&self) -> i32 {
        self.x1 - self.x0
    }

    fn h(&self) -> i32 {
        self.y1 - self.y0
    }

    fn shrink(&self, by: i32) -> Area {
        Area { x0: self.x0 + by, y0: self.y0 + by, x1: self.x1 - by, y1: self.y1 - by }
    }
}

fn gp(x: i32, y: i32) -> GridPoint {
    GridPoint::new(x.clamp(0, GRID_MAX as i32) as u8, y.clamp(0, GRID_MAX as i32) as u8)
}

fn span<R: Rng>(rng: &mut R, lo: i32, hi: i32) -> i32 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn weighted<R: Rng>(rng: &mut R, w: &[f64]) -> usize {
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &x) in w.iter().enumerate() {
        if u < x {
            return i;
        }
        u -= x;
    }
    w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

fn rectangle<R: Rng>(rng: &mut R, a: Area) -> Loop {
    let w = span(rng, (a.w() / 3).max(4), a.w());
    let h = span(rng, (a.h() / 3).max(4), a.h());
    let x = span(rng, a.x0, a.x1 - w);
    let y = span(rng, a.y0, a.y1 - h);
    Loop::polygon(&[gp(x, y), gp(x + w, y), gp(x + w, y + h), gp(x, y + h)])
}

fn regular_polygon<R: Rng>(rng: &mut R, a: Area) -> Loop {
    let n = rng.random_range(3..=8);
    let rmax = a.w().min(a.h()) / 2;
    let r = span(rng, (rmax / 2).max(4), rmax) as f64;
    let cx = a.x0 as f64 + a.w() as f64 / 2.0;
    let cy = a.y0 as f64 + a.h() as f64 / 2.0;
    let phase = rng.random::<f64>() * 2.0 * PI / n as f64;
    let pts: Vec<GridPoint> = (0..n)
        .map(|k| {
            let t = phase + 2.0 * PI * k as f64 / n as f64;
            gp((cx + r * t.cos()).round() as i32, (cy + r * t.sin()).round() as i32)
        })
        .collect();
    Loop::polygon(&pts)
}

fn circle<R: Rng>(rng: &mut R, a: Area) -> Loop {
    let rmax = a.w().min(a.h()) / 2;
    let r = span(rng, (rmax / 3).max(3), rmax);
    let cx = span(rng, a.x0 + r, a.x1 - r);
    let cy = span(rng, a.y0 + r, a.y1 - r);
    Loop::circle([gp(cx + r, cy), gp(cx, cy + r), gp(cx - r, cy), gp(cx, cy - r)])
}

/// Stadium: two straight sides joined by half-circle arcs, horizontal or vertical.
fn slot<R: Rng>(rng: &mut R, a: Area) -> Loop {
    let vertical = rng.random_bool(0.5);
    let (long, short) = if vertical { (a.h(), a.w()) } else { (a.w(), a.h()) };
    let r = span(rng, 2, (short / 2).min(long / 4).max(2));
    let len = span(rng, (long / 3).max(2), long - 2 * r);
    let o_long = span(rng, 0, long - 2 * r - len) + r;
    let o_short = span(rng, 0, short - 2 * r) + r;
    // horizontal layout in (u, v), mapped to (x, y) below
    let map = |u: i32, v: i32| if vertical { gp(a.x0 + v, a.y0 + u) } else { gp(a.x0 + u, a.y0 + v) };
    let (u0, u1, v) = (o_long, o_long + len, o_short);
    let lp = Loop::new(vec![
        Curve::line(map(u0, v - r), map(u1, v - r)),
        Curve::arc(map(u1, v - r), map(u1 + r, v), map(u1, v + r)),
        Curve::line(map(u1, v + r), map(u0, v + r)),
        Curve::arc(map(u0, v + r), map(u0 - r, v), map(u0, v - r)),
    ]);
    // the (u, v) -> (y, x) swap mirrors the loop
    if vertical { lp.reversed() } else { lp }
}

fn bbox(lp: &Loop) -> Area {
    let pts = lp.control_points();
    let (mut a, mut b) = ((i32::MAX, i32::MAX), (i32::MIN, i32::MIN));
    for p in pts.iter().chain(lp.curves.iter().flat_map(|c| c.points.iter())) {
        a = (a.0.min(p.x as i32), a.1.min(p.y as i32));
        b = (b.0.max(p.x as i32), b.1.max(p.y as i32));
    }
    Area { x0: a.0, y0: a.1, x1: b.0, y1: b.1 }
}

fn holed<R: Rng>(rng: &mut R, a: Area) -> Face {
    let outer = if rng.random_bool(0.5) { rectangle(rng, a) } else { circle(rng, a) };
    let inner = bbox(&outer);
    let inner = if outer.is_circle() {
        // largest axis-aligned square inside the circle, with margin
        let r = inner.w() / 2;
        let k = (r as f64 / 2f64.sqrt()).floor() as i32;
        let (cx, cy) = (inner.x0 + r, inner.y0 + r);
        Area { x0: cx - k, y0: cy - k, x1: cx + k, y1: cy + k }.shrink(2)
    } else {
        inner.shrink(3)
    };
    if inner.w() < 6 || inner.h() < 6 {
        return Face::new(outer);
    }
    let holes = if rng.random_bool(0.5) && inner.w() >= 14 {
        let mid = inner.x0 + inner.w() / 2;
        let left = Area { x1: mid - 2, ..inner };
        let right = Area { x0: mid + 2, ..inner };
        vec![hole_in(rng, left), hole_in(rng, right)]
    } else {
        vec![hole_in(rng, inner)]
    };
    Face::with_holes(outer, holes)
}

fn hole_in<R: Rng>(rng: &mut R, a: Area) -> Loop {
    if rng.random_bool(0.5) && a.w().min(a.h()) >= 6 {
        circle(rng, a)
    } else {
        rectangle(rng, a)
    }
}

fn face<R: Rng>(rng: &mut R, w: &TemplateWeights, a: Area) -> Face {
    match weighted(rng, &w.as_array()) {
        0 => Face::new(rectangle(rng, a)),
        1 => Face::new(regular_polygon(rng, a)),
        2 => Face::new(circle(rng, a)),
        3 => Face::new(slot(rng, a)),
        _ => holed(rng, a),
    }
}

fn sketch<R: Rng>(rng: &mut R, spec: &CorpusSpec, a: Area) -> Sketch {
    if a.w() >= 24 && rng.random_bool(spec.two_face_prob) {
        let mid = a.x0 + a.w() / 2;
        Sketch::new(vec![
            face(rng, &spec.templates, Area { x1: mid - 2, ..a }),
            face(rng, &spec.templates, Area { x0: mid + 2, ..a }),
        ])
    } else {
        Sketch::new(vec![face(rng, &spec.templates, a)])
    }
}

fn first_extrude<R: Rng>(rng: &mut R, spec: &CorpusSpec, rotations: &[[i8; 9]]) -> ExtrudeParams {
    let mut e = ExtrudeParams::new_body(rng.random_range(36..=56));
    if rng.random_bool(0.2) {
        e.heights[1] = rng.random_range(20..=31);
    }
    if rng.random_bool(spec.rotation_prob) {
        e.rotation = rotations[rng.random_range(1..rotations.len())];
    }
    e.translation = std::array::from_fn(|_| rng.random_range(24..=40));
    e.scale = [32 * rng.random_range(0..=1), 32 * rng.random_range(0..=1), rng.random_range(24..=40)];
    e
}

/// A valid model for one corpus index. Rejected draws are retried, then
/// fall back to a plain rectangle block.
fn model_at(spec: &CorpusSpec, index: usize, rotations: &[[i8; 9]]) -> CadModel {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    for _ in 0..64 {
        let base = sketch(&mut rng, spec, Area::FULL.shrink(2));
        let e0 = first_extrude(&mut rng, spec, rotations);
        let mut steps = vec![Step { sketch: base, extrude: e0 }];
        if rng.random_bool(spec.two_step_prob) {
            let inside = bbox(&steps[0].sketch.faces[0].outer).shrink(2);
            let area = if inside.w() >= 10 && inside.h() >= 10 { inside } else { Area::FULL.shrink(2) };
            let mut e1 = e0;
            e1.boolean = BooleanOp::ALL[[0, 2, 1][weighted(&mut rng, &spec.boolean_mix)]];
            e1.heights = match e1.boolean {
                BooleanOp::Subtraction => [rng.random_range(e0.heights[0]..=63), e0.heights[1].saturating_sub(2)],
                _ => [rng.random_range(e0.heights[0]..=63), rng.random_range(e0.heights[1]..e0.heights[0])],
            };
            let sk = sketch(&mut rng, spec, area);
            steps.push(Step { sketch: sk, extrude: e1 });
        }
        let m = CadModel::new(steps);
        if validate(&m).is_empty() {
            return m;
        }
    }
    CadModel::single(Sketch::new(vec![Face::new(rectangle(&mut rng, Area::FULL.shrink(8)))]), ExtrudeParams::new_body(48))
}

/// Deterministic corpus of valid models; index `i` depends only on the seed and `i`.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<CadModel>, DatasetError> {
    spec.check()?;
    let rotations = axis_rotations();
    Ok((0..spec.size).map(|i| model_at(spec, i, &rotations)).collect())
}

/// Removes models whose canonical token sequences repeat, keeping first occurrences.
pub fn dedup(models: &[CadModel]) -> Vec<CadModel> {
    let mut seen = HashSet::new();
    models.iter().filter(|m| seen.insert(crate::seq::dedup_key(m))).cloned().collect()
}

/// Sketch subsequences (topology and geometry views) of a model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchView {
    pub topology: SubSeq,
    pub geometry: SubSeq,
}

/// Per-branch training sets with duplicates removed separately in each view.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BranchCorpus {
    pub sketches: Vec<SketchView>,
    pub extrudes: Vec<SubSeq>,
}

pub fn dedup_views(models: &[CadModel]) -> BranchCorpus {
    let mut sk: HashSet<DedupKey> = HashSet::new();
    let mut ex: HashSet<DedupKey> = HashSet::new();
    let mut out = BranchCorpus::default();
    for m in models {
        let Ok(v) = views(m) else { continue };
        if sk.insert(v.geometry.dedup_key()) {
            out.sketches.push(SketchView { topology: v.topology, geometry: v.geometry });
        }
        if ex.insert(v.extrude.dedup_key()) {
            out.extrudes.push(v.extrude);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle into train/validation/test. Validation and test sizes are
/// `round(n * fraction)`; train takes the rest.
pub fn split<T: Clone>(items: &[T], fractions: [f64; 3], seed: u64) -> Split<T> {
    let n = items.len();
    let total: f64 = fractions.iter().sum();
    let n_val = ((n as f64 * fractions[1] / total).round() as usize).min(n);
    let n_test = ((n as f64 * fractions[2] / total).round() as usize).min(n - n_val);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |r: &[usize]| r.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    let n_train = n - n_val - n_test;
    Split { train: pick(&idx[..n_train]), val: pick(&idx[n_train..n_train + n_val]), test: pick(&idx[n_train + n_val..]) }
}

/// Probabilities of shifting a coordinate by -1, 0 and +1 bins.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub minus: f64,
    pub zero: f64,
    pub plus: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { minus: 0.15, zero: 0.7, plus: 0.15 }
    }
}

impl NoiseConfig {
    pub const NONE: NoiseConfig = NoiseConfig { minus: 0.0, zero: 1.0, plus: 0.0 };

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> i32 {
        let u = rng.random::<f64>() * (self.minus + self.zero + self.plus);
        if u < self.minus {
            -1
        } else if u < self.minus + self.zero {
            0
        } else {
            1
        }
    }
}

/// Shifts every point token of a geometry view independently per axis, clamped to the grid.
pub fn perturb_geometry<R: Rng + ?Sized>(geom: &SubSeq, noise: &NoiseConfig, rng: &mut R) -> SubSeq {
    let classes = geom
        .classes
        .iter()
        .map(|&c| match GeomToken::from_class(c) {
            Some(GeomToken::Point(p)) => {
                let x = p.x as i32 + noise.draw(rng);
                let y = p.y as i32 + noise.draw(rng);
                GeomToken::Point(gp(x, y)).class()
            }
            _ => c,
        })
        .collect();
    SubSeq::new(ViewKind::Geometry, classes)
}

/// Noisy copy of a geometry view, or `None` when the result no longer
/// describes valid sketches.
pub fn augment<R: Rng + ?Sized>(geom: &SubSeq, noise: &NoiseConfig, rng: &mut R) -> Option<SubSeq> {
    let out = perturb_geometry(geom, noise, rng);
    let sketches = parse_geometry(&out).ok()?;
    let steps = sketches.into_iter().map(|sketch| Step { sketch, extrude: ExtrudeParams::new_body(48) }).collect();
    validate(&CadModel::new(steps)).is_empty().then_some(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub spec: CorpusSpec,
    pub seed: u64,
    pub count: usize,
    pub class_layout_version: u32,
}

pub const CORPUS_FILE: &str = "corpus.ndjson";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes one model JSON per line.
pub fn write_models(path: &Path, models: &[CadModel]) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for m in models {
        writeln!(w, "{}", m.to_json())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_models(path: &Path) -> Result<Vec<CadModel>, DatasetError> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(CadModel::from_json(&line).map_err(|source| DatasetError::Json { line: i + 1, source })?);
    }
    Ok(out)
}

/// Writes `corpus.ndjson` and `manifest.json` into `dir`.
pub fn write_corpus(dir: &Path, spec: &CorpusSpec, models: &[CadModel]) -> Result<(), DatasetError> {
    fs::create_dir_all(dir)?;
    write_models(&dir.join(CORPUS_FILE), models)?;
    let manifest =
        CorpusManifest { spec: spec.clone(), seed: spec.seed, count: models.len(), class_layout_version: CLASS_LAYOUT_VERSION };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    Ok(())
}

/// Reads a corpus directory, or a bare NDJSON file.
pub fn read_corpus(path: &Path) -> Result<Vec<CadModel>, DatasetError> {
    if path.is_dir() {
        read_models(&path.join(CORPUS_FILE))
    } else {
        read_models(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::{canonicalize, flatten, parse, split as split_seq, CurveKind};

    fn spec(size: usize, seed: u64) -> CorpusSpec {
        CorpusSpec { size, seed, ..CorpusSpec::default() }
    }

    #[test]
    fn rotations_are_the_rotation_group() {
        let r = axis_rotations();
        assert_eq!(r.len(), 24);
        assert_eq!(r[0], ExtrudeParams::IDENTITY_ROTATION);
        let unique: HashSet<_> = r.iter().collect();
        assert_eq!(unique.len(), 24);
        for m in &r {
            let mut e = ExtrudeParams::new_body(40);
            e.rotation = *m;
            let model = CadModel::single(
                Sketch::new(vec![Face::new(Loop::polygon(&[gp(1, 1), gp(9, 1), gp(9, 9)]))]),
                e,
            );
            assert_eq!(validate(&model), vec![]);
        }
    }

    #[test]
    fn corpus_is_valid_and_deterministic() {
        let a = generate_corpus(&spec(1000, 7)).unwrap();
        assert_eq!(a.len(), 1000);
        for m in &a {
            assert_eq!(validate(m), vec![], "{}", m.to_json());
        }
        assert_eq!(a, generate_corpus(&spec(1000, 7)).unwrap());
        assert_ne!(a, generate_corpus(&spec(1000, 8)).unwrap());
    }

    #[test]
    fn corpus_round_trips_through_tokens() {
        for m in generate_corpus(&spec(300, 3)).unwrap() {
            let v = split_seq(&flatten(&m).unwrap()).unwrap();
            assert_eq!(parse(&v.geometry, &v.extrude).unwrap(), canonicalize(&m));
        }
    }

    #[test]
    fn circle_only_weights() {
        let s = CorpusSpec {
            templates: TemplateWeights { rectangle: 0.0, polygon: 0.0, circle: 1.0, slot: 0.0, holed: 0.0 },
            ..spec(200, 1)
        };
        for m in generate_corpus(&s).unwrap() {
            for step in &m.steps {
                for f in &step.sketch.faces {
                    for lp in f.loops() {
                        assert!(lp.curves.len() == 1 && lp.curves[0].kind == CurveKind::Circle);
                    }
                }
            }
        }
    }

    #[test]
    fn bad_spec_rejected() {
        let mut s = spec(10, 0);
        s.templates = TemplateWeights { rectangle: 0.0, polygon: 0.0, circle: 0.0, slot: 0.0, holed: 0.0 };
        assert!(generate_corpus(&s).is_err());
        s.templates.circle = -1.0;
        assert!(generate_corpus(&s).is_err());
    }

    #[test]
    fn dedup_removes_k_minus_one() {
        let base = generate_corpus(&spec(20, 5)).unwrap();
        let base = dedup(&base);
        let mut with_dups = base.clone();
        for _ in 0..4 {
            with_dups.push(base[3].clone());
        }
        let d = dedup(&with_dups);
        assert_eq!(d.len(), base.len());
        assert_eq!(dedup(&d), d);
    }

    #[test]
    fn shared_extrude_block_kept_once() {
        let e = ExtrudeParams::new_body(44);
        let a = CadModel::single(Sketch::new(vec![Face::new(rectangle_at(4, 4))]), e);
        let b = CadModel::single(Sketch::new(vec![Face::new(rectangle_at(10, 12))]), e);
        let c = dedup_views(&[a, b]);
        assert_eq!(c.sketches.len(), 2);
        assert_eq!(c.extrudes.len(), 1);
    }

    fn rectangle_at(x: i32, y: i32) -> Loop {
        Loop::polygon(&[gp(x, y), gp(x + 20, y), gp(x + 20, y + 10), gp(x, y + 10)])
    }

    #[test]
    fn split_sizes_and_partition() {
        let items: Vec<usize> = (0..1000).collect();
        let s = split(&items, [0.9, 0.05, 0.05], 3);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (900, 50, 50));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, items);
        assert_eq!(s, split(&items, [0.9, 0.05, 0.05], 3));
        let small = split(&(0..7).collect::<Vec<_>>(), [0.9, 0.05, 0.05], 0);
        assert_eq!(small.train.len() + small.val.len() + small.test.len(), 7);
    }

    #[test]
    fn zero_noise_is_identity() {
        let m = &generate_corpus(&spec(5, 2)).unwrap()[0];
        let g = views(m).unwrap().geometry;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(augment(&g, &NoiseConfig::NONE, &mut rng), Some(g));
    }

    #[test]
    fn noise_statistics_and_clamping() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<u16> = (0..50_000).map(|i| GeomToken::Point(gp(i % 62 + 1, (i / 62) % 62 + 1)).class()).collect();
        let g = SubSeq::new(ViewKind::Geometry, pts.clone());
        let out = perturb_geometry(&g, &NoiseConfig::default(), &mut rng);
        let mut total = 0i64;
        for (a, b) in pts.iter().zip(&out.classes) {
            let (GeomToken::Point(p), GeomToken::Point(q)) =
                (GeomToken::from_class(*a).unwrap(), GeomToken::from_class(*b).unwrap())
            else {
                panic!("point token expected")
            };
            total += (p.x as i64 - q.x as i64).abs() + (p.y as i64 - q.y as i64).abs();
        }
        let mean = total as f64 / (2.0 * pts.len() as f64);
        assert!((mean - 0.3).abs() < 0.01, "{mean}");

        let edge = SubSeq::new(ViewKind::Geometry, vec![GeomToken::Point(gp(63, 63)).class(); 1000]);
        let out = perturb_geometry(&edge, &NoiseConfig { minus: 0.0, zero: 0.0, plus: 1.0 }, &mut rng);
        assert!(out.classes.iter().all(|&c| c == GeomToken::Point(gp(63, 63)).class()));
    }

    #[test]
    fn persistence_round_trip() {
        let dir = std::env::temp_dir().join(format!("skexcraft-corpus-{}", std::process::id()));
        let s = spec(25, 9);
        let models = generate_corpus(&s).unwrap();
        write_corpus(&dir, &s, &models).unwrap();
        assert_eq!(read_corpus(&dir).unwrap(), models);
        let manifest: CorpusManifest =
            serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(manifest.count, 25);
        fs::remove_dir_all(&dir).unwrap();
    }
}
