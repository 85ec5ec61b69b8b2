//! Analytic gradients against central finite differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skexcraft_nn::{Decoder, Encoder, Graph, Linear, ParamId, ParamStore, Tensor, TransformerConfig, Var};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-3;
/// Denominator floor; some gradients (key biases) are identically zero.
const FLOOR: f64 = 1e-6;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reduces `v` to a scalar through a fixed random projection so every output
/// entry carries a distinct weight.
fn project(g: &Graph, v: Var, seed: u64) -> Var {
    let [r, c] = g.shape(v);
    let w = g.constant(Tensor::randn(r, c, 1.0, &mut rng(seed)));
    g.sum(g.mul(v, w))
}

fn loss_value(store: &ParamStore, f: &dyn Fn(&Graph) -> Var) -> f64 {
    let g = Graph::new(store);
    let l = f(&g);
    g.value(l).item()
}

/// Worst relative error over all parameters of `store`.
fn check(store: &ParamStore, f: impl Fn(&Graph) -> Var) -> f64 {
    let grads = {
        let g = Graph::new(store);
        let l = f(&g);
        g.backward(l)
    };
    let mut store = store.clone();
    let mut worst = 0.0f64;
    for id in store.ids().collect::<Vec<ParamId>>() {
        let n = store.get(id).len();
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(1, n));
        let mut numeric = vec![0.0; n];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let x0 = store.get(id).data[i];
            store.get_mut(id).data[i] = x0 + STEP;
            let up = loss_value(&store, &f);
            store.get_mut(id).data[i] = x0 - STEP;
            let down = loss_value(&store, &f);
            store.get_mut(id).data[i] = x0;
            *slot = (up - down) / (2.0 * STEP);
        }
        let diff = analytic.data.iter().zip(&numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = analytic.data.iter().chain(&numeric).map(|x| x.abs()).fold(0.0, f64::max);
        let rel = diff / scale.max(FLOOR);
        assert!(rel <= TOL, "{}: relative error {rel:.2e} (diff {diff:.2e}, scale {scale:.2e})", store.name(id));
        worst = worst.max(rel);
    }
    worst
}

fn store_with(shapes: &[(&str, usize, usize)], seed: u64) -> (ParamStore, Vec<ParamId>) {
    let mut r = rng(seed);
    let mut s = ParamStore::new();
    let ids = shapes.iter().map(|&(n, a, b)| s.normal(n, a, b, 1.0, &mut r)).collect();
    (s, ids)
}

#[test]
fn matmul_and_transposed_matmul() {
    let (s, id) = store_with(&[("a", 3, 4), ("b", 4, 5), ("c", 2, 4)], 1);
    check(&s, |g| {
        let m = g.matmul(g.param(id[0]), g.param(id[1]));
        let t = g.matmul_t(g.param(id[2]), g.param(id[0]));
        let l1 = project(g, m, 10);
        let l2 = project(g, t, 11);
        g.add(l1, l2)
    });
}

#[test]
fn elementwise_ops() {
    let (s, id) = store_with(&[("a", 3, 4), ("b", 3, 4), ("r", 1, 4)], 2);
    check(&s, |g| {
        let (a, b, r) = (g.param(id[0]), g.param(id[1]), g.param(id[2]));
        let x = g.add(g.mul(a, b), g.scale(a, -0.7));
        let x = g.add_row(x, r);
        let l = project(g, x, 12);
        g.add(l, g.mean(g.mul(b, b)))
    });
}

#[test]
fn gelu_and_softmax() {
    let (s, id) = store_with(&[("a", 4, 6)], 3);
    check(&s, |g| {
        let a = g.param(id[0]);
        let l1 = project(g, g.gelu(a), 13);
        let l2 = project(g, g.softmax(g.scale(a, 2.0)), 14);
        g.add(l1, l2)
    });
}

#[test]
fn layer_norm_all_inputs() {
    let (s, id) = store_with(&[("x", 5, 8), ("g", 1, 8), ("b", 1, 8)], 4);
    check(&s, |g| {
        let y = g.layer_norm(g.param(id[0]), g.param(id[1]), g.param(id[2]), 1e-5);
        project(g, y, 15)
    });
}

#[test]
fn attention_self_causal_and_cross() {
    let (s, id) = store_with(&[("q", 5, 8), ("k", 5, 8), ("v", 5, 8), ("m", 3, 8)], 5);
    for heads in [1, 2, 4] {
        check(&s, |g| {
            let (q, k, v, m) = (g.param(id[0]), g.param(id[1]), g.param(id[2]), g.param(id[3]));
            let causal = g.attention(q, k, v, heads, true);
            let full = g.attention(q, k, v, heads, false);
            let cross = g.attention(q, m, g.scale(m, 0.5), heads, false);
            let l1 = project(g, causal, 16);
            let l2 = project(g, full, 17);
            let l3 = project(g, cross, 18);
            g.add(g.add(l1, l2), l3)
        });
    }
}

#[test]
fn embedding_lookup_and_cross_entropy() {
    let (s, id) = store_with(&[("table", 6, 4), ("w", 4, 7)], 6);
    check(&s, |g| {
        let e = g.gather(g.param(id[0]), &[0, 3, 3, 5, 1]);
        let logits = g.matmul(e, g.param(id[1]));
        g.cross_entropy(logits, &[2, 6, 0, 0, 4])
    });
}

#[test]
fn dropout_and_row_ops() {
    let (s, id) = store_with(&[("a", 4, 3), ("b", 2, 3)], 7);
    check(&s, |g| {
        let (a, b) = (g.param(id[0]), g.param(id[1]));
        let c = g.concat_rows(&[a, b, a]);
        let mid = g.slice_rows(c, 3, 5);
        let l1 = project(g, mid, 19);
        let l2 = g.mse(a, Tensor::full(4, 3, 0.5));
        g.add(l1, g.mul(l2, l2))
    });
    // dropout masks are drawn once per graph; a fixed stream gives the same mask
    let grads_ok = {
        let f = |g: &Graph| project(g, g.dropout(g.param(id[0]), 0.5), 21);
        let analytic = {
            let g = Graph::with_dropout(&s, rng(9));
            let l = f(&g);
            g.backward(l)
        };
        let mut s2 = s.clone();
        let mut worst = 0.0f64;
        for i in 0..12 {
            let x0 = s2.get(id[0]).data[i];
            let mut eval = |x: f64| {
                s2.get_mut(id[0]).data[i] = x;
                let g = Graph::with_dropout(&s2, rng(9));
                let l = f(&g);
                g.value(l).item()
            };
            let n = (eval(x0 + STEP) - eval(x0 - STEP)) / (2.0 * STEP);
            s2.get_mut(id[0]).data[i] = x0;
            let a = analytic.get(id[0]).unwrap().data[i];
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(FLOOR));
        }
        worst
    };
    assert!(grads_ok <= TOL, "dropout relative error {grads_ok:.2e}");
}

#[test]
fn straight_through_copies_gradient() {
    let (s, id) = store_with(&[("x", 2, 3)], 22);
    let g = Graph::new(&s);
    let x = g.param(id[0]);
    let q = g.straight_through(x, Tensor::full(2, 3, 0.25));
    assert_eq!(g.value(q).data, vec![0.25; 6]);
    let w = Tensor::randn(2, 3, 1.0, &mut rng(23));
    let l = g.sum(g.mul(q, g.constant(w.clone())));
    let grads = g.backward(l);
    assert_eq!(grads.get(id[0]).unwrap(), &w);
}

#[test]
fn one_block_encoder_decoder_end_to_end() {
    let cfg = TransformerConfig { d_model: 8, heads: 2, ff: 16, blocks: 1, dropout: 0.0 };
    let mut r = rng(8);
    let mut s = ParamStore::new();
    let emb = s.normal("emb", 10, 8, 0.5, &mut r);
    let enc = Encoder::new(&mut s, "enc", &cfg, &mut r);
    let dec = Decoder::new(&mut s, "dec", &cfg, &mut r);
    let head = Linear::new(&mut s, "head", 8, 10, &mut r);
    // spread the small default init so the check is not dominated by round-off
    for id in s.ids().collect::<Vec<_>>() {
        s.get_mut(id).data.iter_mut().for_each(|x| *x *= 10.0);
    }
    assert!(s.num_scalars() <= 2000, "{} scalars", s.num_scalars());
    let worst = check(&s, |g| {
        let src = g.gather(g.param(emb), &[1, 4, 2]);
        let mem = enc.forward(g, src, false);
        let tgt = g.gather(g.param(emb), &[0, 7, 3, 9]);
        let h = dec.forward(g, tgt, mem);
        let logits = head.forward(g, h);
        g.cross_entropy(logits, &[7, 3, 9, 5])
    });
    assert!(worst <= TOL);
}
