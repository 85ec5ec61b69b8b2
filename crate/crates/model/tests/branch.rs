//! Embedding algebra, encoder code counts, decoder stochasticity and causality.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skexcraft_core::dataset::{generate_corpus, CorpusSpec};
use skexcraft_core::seq::{views, ExtrudeSlot, CadModel, EXTRUDE_BLOCK_LEN, EXT_END_SEQ, GEOM_END_SEQ};
use skexcraft_model::{Branch, BranchKind, BranchSample, ModelConfig, Sampling};
use skexcraft_nn::{Graph, Tensor};

fn small() -> ModelConfig {
    ModelConfig { d_model: 16, heads: 2, ff: 32, blocks: 1, dropout: 0.0, ..ModelConfig::toy() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn corpus(n: usize, seed: u64) -> Vec<CadModel> {
    generate_corpus(&CorpusSpec { size: n, seed, ..CorpusSpec::default() }).unwrap()
}

fn embed_rows(b: &Branch, which: usize, classes: &[u16]) -> Tensor {
    let g = Graph::new(&b.store);
    let v = b.embed(&g, which, classes);
    let t = (*g.value(v)).clone();
    t
}

fn row_of(b: &Branch, name: &str, r: usize) -> Vec<f64> {
    b.store.get(b.store.id(name).unwrap_or_else(|| panic!("no parameter {name}"))).row(r).to_vec()
}

#[test]
fn geometry_embedding_adds_token_coordinate_and_position_rows() {
    let b = Branch::new(BranchKind::Sketch, &small(), &mut rng(1));
    let (x, y) = (13u16, 40u16);
    let class = y * 64 + x;
    let e = embed_rows(&b, 1, &[GEOM_END_SEQ, class]);
    let tok = row_of(&b, "geometry.in.tok", class as usize);
    let wx = row_of(&b, "geometry.in.x", x as usize);
    let wy = row_of(&b, "geometry.in.y", y as usize);
    let p1 = row_of(&b, "geometry.in.pos", 1);
    for c in 0..16 {
        let want = tok[c] + wx[c] + wy[c] + p1[c];
        assert!((e.row(1)[c] - want).abs() < 1e-15);
    }
    let end = row_of(&b, "geometry.in.tok", GEOM_END_SEQ as usize);
    let p0 = row_of(&b, "geometry.in.pos", 0);
    for c in 0..16 {
        assert!((e.row(0)[c] - (end[c] + p0[c])).abs() < 1e-15, "end tokens carry no coordinates");
    }
}

#[test]
fn zero_positions_and_identity_table_select_columns() {
    let mut b = Branch::new(BranchKind::Sketch, &small(), &mut rng(2));
    let tok = b.store.id("topology.in.tok").unwrap();
    let pos = b.store.id("topology.in.pos").unwrap();
    let t = b.store.get_mut(tok);
    t.data.iter_mut().for_each(|v| *v = 0.0);
    for r in 0..7 {
        t.data[r * 16 + r] = 1.0;
    }
    b.store.get_mut(pos).data.iter_mut().for_each(|v| *v = 0.0);
    let e = embed_rows(&b, 0, &[3, 0, 6]);
    for (r, &c) in [3usize, 0, 6].iter().enumerate() {
        let mut want = vec![0.0; 16];
        want[c] = 1.0;
        assert_eq!(e.row(r), &want[..]);
    }
}

#[test]
fn same_token_at_two_positions_differs_by_position_rows() {
    let b = Branch::new(BranchKind::Sketch, &small(), &mut rng(3));
    let e = embed_rows(&b, 0, &[2, 5, 5, 5, 2]);
    let (pi, pj) = (row_of(&b, "topology.in.pos", 4), row_of(&b, "topology.in.pos", 0));
    for c in 0..16 {
        let lhs = e.row(4)[c] - e.row(0)[c];
        assert!((lhs - (pi[c] - pj[c])).abs() < 1e-15);
    }
}

#[test]
fn extrude_embedding_includes_token_type() {
    let b = Branch::new(BranchKind::Extrude, &small(), &mut rng(4));
    let seq: Vec<u16> = (0..EXTRUDE_BLOCK_LEN).map(|i| ExtrudeSlot::at(i).allowed_classes().start).collect();
    let e = embed_rows(&b, 0, &seq);
    for i in [0, 2, 11, 17, 18] {
        let tok = row_of(&b, "extrude.in.tok", seq[i] as usize);
        let ty = row_of(&b, "extrude.in.type", ExtrudeSlot::at(i).type_id());
        let p = row_of(&b, "extrude.in.pos", i);
        for c in 0..16 {
            assert!((e.row(i)[c] - (tok[c] + ty[c] + p[c])).abs() < 1e-15);
        }
    }
}

#[test]
fn encoders_emit_four_two_and_four_codes() {
    let cfg = small();
    let sk = Branch::new(BranchKind::Sketch, &cfg, &mut rng(5));
    let ex = Branch::new(BranchKind::Extrude, &cfg, &mut rng(6));
    assert_eq!(sk.code_counts(), vec![4, 2]);
    assert_eq!(ex.code_counts(), vec![4]);
    let v = views(&corpus(1, 7)[0]).unwrap();
    let z = sk.encode(&BranchSample::sketch(&v).inputs);
    assert_eq!((z[0].rows, z[1].rows), (4, 2));
    assert!(z.iter().all(|t| t.cols == 16));
    let z = ex.encode(&BranchSample::extrude(&v).inputs);
    assert_eq!(z[0].shape(), [4, 16]);
}

#[test]
fn permuting_content_changes_codes_and_end_only_input_still_encodes() {
    let b = Branch::new(BranchKind::Sketch, &small(), &mut rng(8));
    let v = views(&corpus(1, 9)[0]).unwrap();
    let topo = v.topology.classes.clone();
    let geom = v.geometry.classes.clone();
    let mut swapped = geom.clone();
    let (i, j) = (0..swapped.len()).flat_map(|i| (i + 1..swapped.len()).map(move |j| (i, j))).find(|&(i, j)| geom[i] != geom[j]).unwrap();
    swapped.swap(i, j);
    let a = b.encode(&[topo.clone(), geom]);
    let c = b.encode(&[topo, swapped]);
    assert_ne!(a[1], c[1]);
    let only_end = b.encode(&[vec![6], vec![GEOM_END_SEQ]]);
    assert_eq!((only_end[0].rows, only_end[1].rows), (4, 2));
    assert!(only_end.iter().all(|t| t.data.iter().all(|x| x.is_finite())));
}

#[test]
fn decoders_are_row_stochastic_and_causal() {
    let cfg = small();
    let v = views(&corpus(1, 10)[0]).unwrap();
    for kind in [BranchKind::Sketch, BranchKind::Extrude] {
        let b = Branch::new(kind, &cfg, &mut rng(11));
        let s = BranchSample::of(kind, &v);
        let codes = b.encode(&s.inputs);
        let p = b.teacher_forced_probs(&codes, &s.target);
        for r in 0..p.rows {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let n = s.target.len();
        let cut = n / 2;
        let mut changed = s.target.clone();
        for t in &mut changed[cut + 1..] {
            *t = if *t == 0 { 1 } else { 0 };
        }
        let q = b.teacher_forced_probs(&codes, &changed);
        for r in 0..=cut {
            assert_eq!(p.row(r), q.row(r), "{kind:?} position {r} saw a later token");
        }
        assert_ne!(p.row(cut + 2), q.row(cut + 2));
    }
}

#[test]
fn sampled_extrusions_follow_the_block_template() {
    let b = Branch::new(BranchKind::Extrude, &small(), &mut rng(12));
    let mut r = rng(13);
    for _ in 0..30 {
        let codes = vec![Tensor::randn(4, 16, 1.0, &mut r)];
        let out = b.decode(&codes, Sampling::Nucleus { p: 1.0, temperature: 1.0 }, &mut r);
        assert_eq!(*out.last().unwrap(), EXT_END_SEQ);
        let body = &out[..out.len() - 1];
        assert!(!body.is_empty() && body.len().is_multiple_of(EXTRUDE_BLOCK_LEN));
        for (i, &c) in body.iter().enumerate() {
            assert!(ExtrudeSlot::at(i % EXTRUDE_BLOCK_LEN).allowed_classes().contains(&c), "class {c} at {i}");
        }
    }
}

#[test]
fn tiny_nucleus_is_greedy() {
    let b = Branch::new(BranchKind::Sketch, &small(), &mut rng(14));
    let codes = vec![Tensor::randn(4, 16, 1.0, &mut rng(15)), Tensor::randn(2, 16, 1.0, &mut rng(16))];
    let greedy = b.decode(&codes, Sampling::Greedy, &mut rng(0));
    for seed in 1..4 {
        assert_eq!(b.decode(&codes, Sampling::Nucleus { p: 1e-12, temperature: 1.0 }, &mut rng(seed)), greedy);
    }
}

#[test]
fn rejects_oversized_or_out_of_range_samples() {
    let b = Branch::new(BranchKind::Sketch, &small(), &mut rng(17));
    let long = BranchSample { inputs: vec![vec![6], vec![0; 65]], target: vec![0; 65] };
    assert!(b.check_sample(&long).is_err());
    let bad = BranchSample { inputs: vec![vec![7], vec![GEOM_END_SEQ]], target: vec![GEOM_END_SEQ] };
    assert!(b.check_sample(&bad).is_err());
}
