//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skexcraft_core::dataset::{dedup, generate_corpus, CorpusSpec};
use skexcraft_core::geom::{
    csg_surface_sample, discretize, ExtrudeFrame, FaceRegion, ModelSolid, RealCurve, SampleConfig, StepSolid,
};
use skexcraft_core::metrics::{chamfer, chamfer_brute, cov, chamfer_matrix, jsd, jsd_hist, mmd};
use skexcraft_core::seq::{
    canonicalize, flatten, parse, split, views, BooleanOp, CadModel, ExtrudeParams, Face, GridPoint, Loop, Sketch, Step,
};
use skexcraft_model::{
    disentanglement_probe, train_branch, Branch, BranchKind, BranchSample, Codebook, Condition, ModelConfig, ProbeConfig,
    Sampling, SkexGen, TrainConfig,
};
use skexcraft_nn::tensor::argmax;
use skexcraft_nn::{Decoder, Encoder, Graph, Linear, ParamId, ParamStore, Tensor, TransformerConfig, Var};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn grid(x: u8, y: u8) -> GridPoint {
    GridPoint::new(x, y)
}

fn grammar_round_trip() -> Outcome {
    let start = Instant::now();
    let models = generate_corpus(&CorpusSpec { size: 1000, seed: 2024, ..CorpusSpec::default() }).unwrap();
    let ok = models
        .iter()
        .filter(|m| {
            let v = flatten(m).and_then(|s| split(&s));
            v.and_then(|v| parse(&v.geometry, &v.extrude)).is_ok_and(|p| p == canonicalize(m))
        })
        .count();
    let secs = start.elapsed().as_secs_f64();
    outcome(ok == 1000 && secs < 10.0, format!("{ok}/1000 round trips in {secs:.2} s"))
}

fn token_layouts() -> Outcome {
    let square = CadModel::single(
        Sketch::new(vec![Face::new(Loop::polygon(&[grid(0, 63), grid(63, 63), grid(63, 0), grid(0, 0)]))]),
        ExtrudeParams::new_body(63),
    );
    let circle = CadModel::single(
        Sketch::new(vec![Face::new(Loop::circle([grid(16, 32), grid(32, 16), grid(48, 32), grid(32, 48)]))]),
        ExtrudeParams::new_body(40),
    );
    let cube = CadModel::single(
        Sketch::new(vec![Face::new(Loop::polygon(&[grid(16, 16), grid(48, 16), grid(48, 48), grid(16, 48)]))]),
        ExtrudeParams::new_body(48),
    );
    let cases = [
        ("square", square, include_str!("../../core/tests/golden/square.tokens")),
        ("circle", circle, include_str!("../../core/tests/golden/circle.tokens")),
        ("cube", cube, include_str!("../../core/tests/golden/cube.tokens")),
    ];
    let bad: Vec<&str> = cases.iter().filter(|(_, m, g)| views(m).map(|v| v.to_text()).ok().as_deref() != Some(*g)).map(|c| c.0).collect();
    outcome(bad.is_empty(), if bad.is_empty() { "3/3 golden files byte-identical".into() } else { format!("mismatch: {bad:?}") })
}

const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-6;

/// Worst relative error of analytic against central-difference gradients.
/// Tensors above `sample` entries are checked on a seeded subset.
fn fd_worst(store: &mut ParamStore, f: &dyn Fn(&Graph) -> Var, sample: usize, seed: u64) -> f64 {
    let grads = {
        let g = Graph::new(store);
        let l = f(&g);
        g.backward(l)
    };
    let mut pick = rng(seed);
    let mut worst = 0.0f64;
    for id in store.ids().collect::<Vec<ParamId>>() {
        let n = store.get(id).len();
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(1, n));
        let entries: Vec<usize> = if n <= sample {
            (0..n).collect()
        } else {
            let live: Vec<usize> = (0..n).filter(|&i| analytic.data[i] != 0.0).collect();
            let mut e: Vec<usize> = (0..sample).filter(|_| !live.is_empty()).map(|_| live[pick.random_range(0..live.len())]).collect();
            e.extend((0..sample / 5).map(|_| pick.random_range(0..n)));
            e
        };
        let (mut diff, mut scale) = (0.0f64, 0.0f64);
        for i in entries {
            let x0 = store.get(id).data[i];
            let mut eval = |x: f64| {
                store.get_mut(id).data[i] = x;
                let g = Graph::new(store);
                let l = f(&g);
                g.value(l).item()
            };
            let numeric = (eval(x0 + STEP) - eval(x0 - STEP)) / (2.0 * STEP);
            store.get_mut(id).data[i] = x0;
            diff = diff.max((numeric - analytic.data[i]).abs());
            scale = scale.max(numeric.abs()).max(analytic.data[i].abs());
        }
        worst = worst.max(diff / scale.max(FLOOR));
    }
    worst
}

fn project(g: &Graph, v: Var, seed: u64) -> Var {
    let [r, c] = g.shape(v);
    let w = g.constant(Tensor::randn(r, c, 1.0, &mut rng(seed)));
    g.sum(g.mul(v, w))
}

fn op_graphs() -> Vec<(&'static str, f64)> {
    let mut s = ParamStore::new();
    let mut r = rng(1);
    let a = s.normal("a", 4, 6, 1.0, &mut r);
    let b = s.normal("b", 6, 6, 1.0, &mut r);
    let c = s.normal("c", 4, 6, 1.0, &mut r);
    let row = s.normal("row", 1, 6, 1.0, &mut r);
    let m = s.normal("m", 3, 6, 1.0, &mut r);
    let table = s.normal("table", 7, 6, 1.0, &mut r);
    let mut out = Vec::new();
    let cases: Vec<(&'static str, Box<dyn Fn(&Graph) -> Var>)> = vec![
        ("matmul", Box::new(move |g| project(g, g.matmul(g.param(a), g.param(b)), 10))),
        ("matmul_t", Box::new(move |g| project(g, g.matmul_t(g.param(a), g.param(c)), 11))),
        ("add/mul/scale", Box::new(move |g| project(g, g.add(g.mul(g.param(a), g.param(c)), g.scale(g.param(a), -0.7)), 12))),
        ("add_row", Box::new(move |g| project(g, g.add_row(g.param(a), g.param(row)), 13))),
        ("sum/mean", Box::new(move |g| g.add(g.sum(g.mul(g.param(a), g.param(a))), g.mean(g.param(c))))),
        ("gelu", Box::new(move |g| project(g, g.gelu(g.param(a)), 14))),
        ("softmax", Box::new(move |g| project(g, g.softmax(g.scale(g.param(a), 2.0)), 15))),
        ("layer_norm", Box::new(move |g| project(g, g.layer_norm(g.param(a), g.param(row), g.param(row), 1e-5), 16))),
        ("attention", Box::new(move |g| {
            let (q, k) = (g.param(a), g.param(c));
            let causal = project(g, g.attention(q, k, k, 2, true), 17);
            let cross = project(g, g.attention(q, g.param(m), g.param(m), 3, false), 18);
            g.add(causal, cross)
        })),
        ("gather/cross_entropy", Box::new(move |g| {
            let e = g.gather(g.param(table), &[0, 3, 3, 6, 1]);
            g.cross_entropy(g.matmul(e, g.param(b)), &[2, 5, 0, 0, 4])
        })),
        ("concat/slice/mse", Box::new(move |g| {
            let cat = g.concat_rows(&[g.param(a), g.param(m), g.param(a)]);
            let l = project(g, g.slice_rows(cat, 3, 6), 19);
            let e = g.mse(g.param(c), Tensor::full(4, 6, 0.5));
            g.add(l, g.mul(e, e))
        })),
    ];
    for (name, f) in cases {
        out.push((name, fd_worst(&mut s, f.as_ref(), usize::MAX, 0)));
    }
    out
}

fn one_block_model() -> f64 {
    let cfg = TransformerConfig { d_model: 8, heads: 2, ff: 16, blocks: 1, dropout: 0.0 };
    let mut r = rng(8);
    let mut s = ParamStore::new();
    let emb = s.normal("emb", 10, 8, 0.5, &mut r);
    let enc = Encoder::new(&mut s, "enc", &cfg, &mut r);
    let dec = Decoder::new(&mut s, "dec", &cfg, &mut r);
    let head = Linear::new(&mut s, "head", 8, 10, &mut r);
    for id in s.ids().collect::<Vec<_>>() {
        s.get_mut(id).data.iter_mut().for_each(|x| *x *= 10.0);
    }
    let f = |g: &Graph| {
        let mem = enc.forward(g, g.gather(g.param(emb), &[1, 4, 2]), false);
        let h = dec.forward(g, g.gather(g.param(emb), &[0, 7, 3, 9]), mem);
        g.cross_entropy(head.forward(g, h), &[7, 3, 9, 5])
    };
    fd_worst(&mut s, &f, usize::MAX, 0)
}

/// Straight-through check of a miniature extrude branch with quantization on:
/// the offset `Z^Q − Z^e` is frozen at the evaluation point.
fn branch_end_to_end() -> f64 {
    let cfg = ModelConfig { d_model: 16, heads: 2, ff: 32, blocks: 1, dropout: 0.0, ..ModelConfig::toy() };
    let mut b = Branch::new(BranchKind::Extrude, &cfg, &mut rng(2));
    let model = &generate_corpus(&CorpusSpec { size: 1, seed: 2, ..CorpusSpec::default() }).unwrap()[0];
    let s = BranchSample::extrude(&views(model).unwrap());
    let z0 = b.encode(&s.inputs);
    for (book, z) in b.books.iter_mut().zip(&z0) {
        for r in 0..z.rows {
            book.codes.row_mut(r).copy_from_slice(z.row(r));
            book.codes.row_mut(r)[0] += 0.3;
        }
    }
    let q = b.lookup(&b.quantize(&z0));
    let offsets: Vec<Tensor> =
        q.iter().zip(&z0).map(|(a, z)| Tensor::from_vec(a.rows, a.cols, a.data.iter().zip(&z.data).map(|(x, y)| x - y).collect())).collect();
    let targets: Vec<usize> = s.target.iter().map(|&t| t as usize).collect();
    let beta = cfg.beta;
    let mut store = b.store.clone();
    let frozen = b.clone();
    let f = |g: &Graph| {
        let z = frozen.encode_vars(g, &s.inputs);
        let codes: Vec<Var> = z.iter().zip(&offsets).map(|(&v, c)| g.add(v, g.constant(c.clone()))).collect();
        let mut loss = g.cross_entropy(frozen.decode_logits(g, &codes, &s.target), &targets);
        for (&v, qk) in z.iter().zip(&q) {
            loss = g.add(loss, g.scale(g.mse(v, qk.clone()), beta));
        }
        loss
    };
    fd_worst(&mut store, &f, 120, 3)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut results = op_graphs();
    results.push(("1-block encoder-decoder", one_block_model()));
    results.push(("extrude branch, straight-through", branch_end_to_end()));
    let secs = start.elapsed().as_secs_f64();
    let (name, worst) = results.iter().copied().fold(("", 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    let pass = worst <= 1e-3 && secs < 120.0;
    outcome(pass, format!("{} checks, worst rel. err {worst:.2e} ({name}) in {secs:.1} s", results.len()))
}

fn vq_oracle() -> Outcome {
    let means = [[-2.0, 0.0], [2.0, 1.0], [0.0, 3.0]];
    let mut book = Codebook::from_codes(Tensor::from_vec(3, 2, vec![-1.0, -1.0, 1.0, 0.0, 0.0, 1.5]), 0.99);
    let mut r = rng(4);
    let pts: Vec<f64> = means.iter().flat_map(|m| (0..40).flat_map(|_| [m[0], m[1]])).collect();
    let mut z = Tensor::from_vec(120, 2, pts);
    // zero-mean jitter so the cluster means stay exact
    for k in 0..60 {
        let (dx, dy) = (r.random_range(-0.2..0.2), r.random_range(-0.2..0.2));
        let (i, j) = (2 * k, 2 * k + 1);
        z.row_mut(i)[0] += dx;
        z.row_mut(i)[1] += dy;
        z.row_mut(j)[0] -= dx;
        z.row_mut(j)[1] -= dy;
    }
    for _ in 0..500 {
        let idx = book.quantize_rows(&z);
        book.ema_update(&z, &idx);
    }
    let err = means
        .iter()
        .enumerate()
        .map(|(i, m)| (book.codes.row(i)[0] - m[0]).abs().max((book.codes.row(i)[1] - m[1]).abs()))
        .fold(0.0, f64::max);
    let mut agree = 0;
    for _ in 0..200 {
        let b = Codebook::new(40, 16, 0.99, &mut r);
        let q = Tensor::randn(1, 16, 1.0, &mut r);
        let d = |k: usize| b.codes.row(k).iter().zip(&q.data).map(|(a, c)| (a - c) * (a - c)).sum::<f64>();
        let want = (0..40).min_by(|&a, &c| d(a).total_cmp(&d(c)).then(a.cmp(&c))).unwrap();
        agree += usize::from(b.quantize(&q.data) == want);
    }
    outcome(err < 1e-2 && agree == 200, format!("max code error {err:.2e}; exhaustive scan agrees {agree}/200"))
}

fn cloud(r: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<[f64; 3]> {
    (0..n).map(|_| [r.random::<f64>() * spread, r.random::<f64>() * spread, r.random::<f64>()]).collect()
}

fn metrics_oracles() -> Outcome {
    let mut r = rng(6);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (na, nb) = (r.random_range(1..60), r.random_range(1..60));
        let (a, b) = (cloud(&mut r, na, 1.0), cloud(&mut r, nb, 0.7));
        worst = worst.max((chamfer(&a, &b).unwrap() - chamfer_brute(&a, &b).unwrap()).abs());
    }
    let set: Vec<Vec<[f64; 3]>> = (0..6).map(|_| cloud(&mut r, 200, 1.0)).collect();
    let d = chamfer_matrix(&set, &set).unwrap();
    let (c, m, j) = (cov(&d).unwrap(), mmd(&d).unwrap(), jsd(&set, &set, 28));
    let hand = jsd_hist(&[1.0, 0.0], &[0.5, 0.5]);
    let pass = worst <= 1e-9 && c == 100.0 && m == 0.0 && j < 1e-12 && (hand - 0.2157).abs() < 1e-4;
    outcome(pass, format!("chamfer |fast-brute| {worst:.1e}; gen==ref COV {c} MMD {m} JSD {j:.1e}; hand JSD {hand:.4}"))
}

fn geometry() -> Outcome {
    let square = FaceRegion { outer: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], holes: vec![] };
    let cube = StepSolid::new(vec![square], ExtrudeFrame::IDENTITY, BooleanOp::Union).unwrap().mesh().unwrap();
    let cube_area = cube.surface_area();
    let exact = 2.0 * PI * 0.25 + PI;
    let errs: Vec<f64> = [1e-2, 1e-3]
        .iter()
        .map(|&tol| {
            let ring = discretize(&RealCurve::Circle { points: [[1.0, 0.5], [0.5, 1.0], [0.0, 0.5], [0.5, 0.0]] }, tol).vertices;
            let frame = ExtrudeFrame { top: 1.0, ..ExtrudeFrame::IDENTITY };
            let m = StepSolid::new(vec![FaceRegion { outer: ring, holes: vec![] }], frame, BooleanOp::Union).unwrap().mesh().unwrap();
            (m.surface_area() - exact).abs() / exact
        })
        .collect();
    let plate = Loop::polygon(&[grid(8, 8), grid(56, 8), grid(56, 56), grid(8, 56)]);
    let mut cut = ExtrudeParams::new_body(63);
    cut.heights = [63, 0];
    cut.boolean = BooleanOp::Subtraction;
    let model = CadModel::new(vec![
        Step { sketch: Sketch::new(vec![Face::new(plate)]), extrude: ExtrudeParams::new_body(48) },
        Step { sketch: Sketch::new(vec![Face::new(Loop::circle([grid(32, 20), grid(44, 32), grid(32, 44), grid(20, 32)]))]), extrude: cut },
    ]);
    let pts = csg_surface_sample(&model, 10_000, &SampleConfig::default(), &mut rng(3)).unwrap();
    let (cx, cy, rad) = (32.5 / 64.0, 32.5 / 64.0, 12.0 / 64.0);
    let in_hole = pts.iter().filter(|q| ((q[0] - cx).powi(2) + (q[1] - cy).powi(2)).sqrt() < rad - 1e-3).count();
    let solid = ModelSolid::from_model(&model, 1e-3).unwrap();
    let pass = (cube_area - 6.0).abs() <= 1e-6 && errs[1] < 0.01 && errs[1] < errs[0] && in_hole == 0 && !solid.contains([cx, cy, 0.25]);
    outcome(
        pass,
        format!(
            "cube area {cube_area:.9}; cylinder rel. err {:.2e} -> {:.2e}; {in_hole} of {} samples in the hole",
            errs[0],
            errs[1],
            pts.len()
        ),
    )
}

fn toy_corpus() -> Vec<CadModel> {
    let models = dedup(&generate_corpus(&CorpusSpec { size: 80, seed: 1, ..CorpusSpec::default() }).unwrap());
    models[..50].iter().map(canonicalize).collect()
}

/// Teacher-forced next-token accuracy over both branches with quantized codes.
fn teacher_forced_accuracy(m: &SkexGen, models: &[CadModel]) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for x in models {
        let v = views(x).unwrap();
        for (b, s) in [(&m.sketch, BranchSample::sketch(&v)), (&m.extrude, BranchSample::extrude(&v))] {
            let codes = b.lookup(&b.quantize(&b.encode(&s.inputs)));
            let p = b.teacher_forced_probs(&codes, &s.target);
            for (r, &t) in s.target.iter().enumerate() {
                hit += usize::from(argmax(p.row(r)) == t as usize);
                total += 1;
            }
        }
    }
    hit as f64 / total as f64
}

fn overfit(m: &SkexGen, models: &[CadModel], secs: f64) -> Outcome {
    let acc = teacher_forced_accuracy(m, models);
    let exact = models
        .iter()
        .filter(|x| {
            let v = views(x).unwrap();
            let d = m.reconstruct(x).unwrap();
            d.geometry == v.geometry.classes && d.extrude == v.extrude.classes
        })
        .count();
    let pass = acc >= 0.99 && exact * 100 >= 95 * models.len() && secs < 1800.0;
    outcome(pass, format!("teacher-forced acc {:.2}%, exact greedy {exact}/{}, trained in {secs:.0} s", 100.0 * acc, models.len()))
}

fn probe(m: &SkexGen) -> Outcome {
    let trained = disentanglement_probe(m, &ProbeConfig::default()).unwrap();
    let control = disentanglement_probe(&SkexGen::new(ModelConfig::toy(), 9).unwrap(), &ProbeConfig::default()).unwrap();
    let pass = trained.accuracy >= 0.8 && (control.accuracy - 1.0 / 3.0).abs() <= 0.15;
    outcome(pass, format!("toy {:.1}% vs untrained {:.1}% ({} points)", 100.0 * trained.accuracy, 100.0 * control.accuracy, trained.points))
}

fn validity(m: &SkexGen) -> Outcome {
    let mut r = rng(3);
    let s = Sampling::Nucleus { p: 0.9, temperature: 1.0 };
    let n = 200;
    let valid = (0..n).filter(|_| m.sample(&Condition::default(), s, &mut r).unwrap().is_valid()).count();
    outcome(valid * 100 >= 80 * n, format!("{valid}/{n} grammar-valid at p=0.9"))
}

fn determinism(m: &SkexGen) -> Outcome {
    let spec = CorpusSpec { size: 200, seed: 77, ..CorpusSpec::default() };
    let corpus = |s: &CorpusSpec| generate_corpus(s).unwrap().iter().map(CadModel::to_json).collect::<Vec<_>>().join("\n");
    let same_corpus = corpus(&spec) == corpus(&spec);
    let cfg = ModelConfig { d_model: 16, heads: 2, ff: 32, blocks: 1, ..ModelConfig::toy() };
    let tcfg = TrainConfig { epochs: 30, batch: 4, quantize_after: 10, seed: 5, ..TrainConfig::toy() };
    let data: Vec<BranchSample> = toy_corpus()[..12].iter().map(|x| BranchSample::sketch(&views(x).unwrap())).collect();
    let run = || {
        let mut b = Branch::new(BranchKind::Sketch, &cfg, &mut rng(5));
        let stats = train_branch(&mut b, &data, &tcfg, |_| {}).unwrap();
        let mut bytes = Vec::new();
        b.save(&mut bytes).unwrap();
        let bits: Vec<u64> = stats.iter().flat_map(|s| [s.loss.to_bits(), s.accuracy.to_bits()]).collect();
        (bits, bytes)
    };
    let same_training = run() == run();
    let s = Sampling::Nucleus { p: 0.9, temperature: 1.0 };
    let draw = |seed| (0..20).map(|_| m.sample(&Condition::default(), s, &mut rng(seed)).unwrap()).collect::<Vec<_>>();
    let same_samples = draw(12) == draw(12);
    outcome(
        same_corpus && same_training && same_samples,
        format!("corpus {same_corpus}, training trajectory and weights {same_training}, samples {same_samples}"),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("grammar round-trip", grammar_round_trip()),
        ("token layouts bit-exact", token_layouts()),
        ("gradient suite", gradient_suite()),
        ("VQ/EMA oracle", vq_oracle()),
        ("metrics oracles", metrics_oracles()),
        ("geometry", geometry()),
    ];
    let models = toy_corpus();
    let start = Instant::now();
    let m = SkexGen::train(&models, ModelConfig::toy(), &TrainConfig::toy(), |_| {}).unwrap();
    let secs = start.elapsed().as_secs_f64();
    results.push(("overfit reconstruction", overfit(&m, &models, secs)));
    results.push(("disentanglement probe", probe(&m)));
    results.push(("generation validity", validity(&m)));
    results.push(("determinism", determinism(&m)));
    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{}/{} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
