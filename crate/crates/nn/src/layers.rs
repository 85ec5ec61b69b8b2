use rand::Rng;

use crate::graph::{Graph, Var};
use crate::tensor::{gemm, softmax_in_place, MatRef};
use crate::Tensor;
use crate::{ParamId, ParamStore};

/// Standard deviation for weight initialization.
pub const INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-5;

/// Shape of a transformer stack.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ff: usize,
    pub blocks: usize,
    pub dropout: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, inp: usize, out: usize, rng: &mut R) -> Self {
        Self { w: store.normal(format!("{name}.w"), inp, out, INIT_STD, rng), b: store.zeros(format!("{name}.b"), 1, out) }
    }

    pub fn forward(&self, g: &Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self { gamma: store.ones(format!("{name}.g"), 1, d), beta: store.zeros(format!("{name}.b"), 1, d) }
    }

    pub fn forward(&self, g: &Graph, x: Var) -> Var {
        g.layer_norm(x, g.param(self.gamma), g.param(self.beta), LN_EPS)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut R) -> Self {
        assert!(heads > 0 && d.is_multiple_of(heads), "model dim {d} not divisible by {heads} heads");
        Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, rng),
            heads,
        }
    }

    /// Queries from `x`, keys and values from `ctx`.
    pub fn forward(&self, g: &Graph, x: Var, ctx: Var, causal: bool) -> Var {
        let q = self.q.forward(g, x);
        let k = self.k.forward(g, ctx);
        let v = self.v.forward(g, ctx);
        let a = g.attention(q, k, v, self.heads, causal);
        self.o.forward(g, a)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, ff: usize, rng: &mut R) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), d, ff, rng),
            down: Linear::new(store, &format!("{name}.down"), ff, d, rng),
        }
    }

    pub fn forward(&self, g: &Graph, x: Var) -> Var {
        let h = self.up.forward(g, x);
        let h = g.gelu(h);
        self.down.forward(g, h)
    }
}

/// Pre-norm self-attention block.
#[derive(Clone, Copy, Debug)]
pub struct EncoderBlock {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ffn: FeedForward,
    dropout: f64,
}

impl EncoderBlock {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &TransformerConfig, rng: &mut R) -> Self {
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), cfg.d_model),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), cfg.d_model, cfg.heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), cfg.d_model),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), cfg.d_model, cfg.ff, rng),
            dropout: cfg.dropout,
        }
    }

    pub fn forward(&self, g: &Graph, x: Var, causal: bool) -> Var {
        let h = self.ln1.forward(g, x);
        let h = self.attn.forward(g, h, h, causal);
        let x = g.add(x, g.dropout(h, self.dropout));
        let h = self.ln2.forward(g, x);
        let h = self.ffn.forward(g, h);
        g.add(x, g.dropout(h, self.dropout))
    }
}

/// Pre-norm block with causal self-attention and cross-attention to a memory.
#[derive(Clone, Copy, Debug)]
pub struct DecoderBlock {
    ln1: LayerNorm,
    self_attn: MultiHeadAttention,
    ln2: LayerNorm,
    cross: MultiHeadAttention,
    ln3: LayerNorm,
    ffn: FeedForward,
    dropout: f64,
}

impl DecoderBlock {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &TransformerConfig, rng: &mut R) -> Self {
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), cfg.d_model),
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self"), cfg.d_model, cfg.heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), cfg.d_model),
            cross: MultiHeadAttention::new(store, &format!("{name}.cross"), cfg.d_model, cfg.heads, rng),
            ln3: LayerNorm::new(store, &format!("{name}.ln3"), cfg.d_model),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), cfg.d_model, cfg.ff, rng),
            dropout: cfg.dropout,
        }
    }

    pub fn forward(&self, g: &Graph, x: Var, memory: Var) -> Var {
        let h = self.ln1.forward(g, x);
        let h = self.self_attn.forward(g, h, h, true);
        let x = g.add(x, g.dropout(h, self.dropout));
        let h = self.ln2.forward(g, x);
        let h = self.cross.forward(g, h, memory, false);
        let x = g.add(x, g.dropout(h, self.dropout));
        let h = self.ln3.forward(g, x);
        let h = self.ffn.forward(g, h);
        g.add(x, g.dropout(h, self.dropout))
    }
}

/// Stack of [`EncoderBlock`]s followed by a final layer norm.
#[derive(Clone, Debug)]
pub struct Encoder {
    blocks: Vec<EncoderBlock>,
    ln: LayerNorm,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &TransformerConfig, rng: &mut R) -> Self {
        Self {
            blocks: (0..cfg.blocks).map(|i| EncoderBlock::new(store, &format!("{name}.{i}"), cfg, rng)).collect(),
            ln: LayerNorm::new(store, &format!("{name}.ln"), cfg.d_model),
        }
    }

    pub fn forward(&self, g: &Graph, x: Var, causal: bool) -> Var {
        let x = self.blocks.iter().fold(x, |x, b| b.forward(g, x, causal));
        self.ln.forward(g, x)
    }
}

/// Stack of [`DecoderBlock`]s followed by a final layer norm.
#[derive(Clone, Debug)]
pub struct Decoder {
    blocks: Vec<DecoderBlock>,
    ln: LayerNorm,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &TransformerConfig, rng: &mut R) -> Self {
        Self {
            blocks: (0..cfg.blocks).map(|i| DecoderBlock::new(store, &format!("{name}.{i}"), cfg, rng)).collect(),
            ln: LayerNorm::new(store, &format!("{name}.ln"), cfg.d_model),
        }
    }

    pub fn forward(&self, g: &Graph, x: Var, memory: Var) -> Var {
        let x = self.blocks.iter().fold(x, |x, b| b.forward(g, x, memory));
        self.ln.forward(g, x)
    }
}

fn linear_row(store: &ParamStore, l: &Linear, x: &[f64]) -> Vec<f64> {
    let w = store.get(l.w);
    let mut y = store.get(l.b).data.clone();
    gemm(1.0, MatRef { data: x, offset: 0, rows: 1, cols: x.len(), rs: x.len() as isize, cs: 1 }, MatRef::of(w), 1.0, &mut y, 0, w.cols, 1);
    y
}

fn linear_rows(store: &ParamStore, l: &Linear, x: &Tensor) -> Tensor {
    let w = store.get(l.w);
    let b = store.get(l.b);
    let mut y = Tensor::zeros(x.rows, w.cols);
    for r in 0..x.rows {
        y.row_mut(r).copy_from_slice(&b.data);
    }
    let n = y.cols;
    gemm(1.0, MatRef::of(x), MatRef::of(w), 1.0, &mut y.data, 0, n, 1);
    y
}

fn layer_norm_row(store: &ParamStore, l: &LayerNorm, x: &[f64]) -> Vec<f64> {
    let (g, b) = (store.get(l.gamma), store.get(l.beta));
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let is = 1.0 / (var + LN_EPS).sqrt();
    x.iter().zip(g.data.iter().zip(&b.data)).map(|(v, (g, b))| (v - mean) * is * g + b).collect()
}

fn gelu_in_place(x: &mut [f64]) {
    const C: f64 = 0.797_884_560_802_865_4;
    for v in x {
        *v = 0.5 * *v * (1.0 + (C * (*v + 0.044_715 * *v * *v * *v)).tanh());
    }
}

/// One query row against `rows` cached keys and values (row-major, width `d`).
fn attend_row(q: &[f64], k: &[f64], v: &[f64], heads: usize) -> Vec<f64> {
    let d = q.len();
    let rows = k.len() / d;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; d];
    let mut s = vec![0.0; rows];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for (j, sj) in s.iter_mut().enumerate() {
            *sj = scale * q[cols.clone()].iter().zip(&k[j * d + h * dh..j * d + (h + 1) * dh]).map(|(a, b)| a * b).sum::<f64>();
        }
        softmax_in_place(&mut s);
        for (j, p) in s.iter().enumerate() {
            for (o, x) in out[cols.clone()].iter_mut().zip(&v[j * d + h * dh..j * d + (h + 1) * dh]) {
                *o += p * x;
            }
        }
    }
    out
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}

struct BlockCache {
    k: Vec<f64>,
    v: Vec<f64>,
    mem_k: Tensor,
    mem_v: Tensor,
}

/// Key/value cache for incremental decoding with [`Decoder::step`].
pub struct DecoderState {
    blocks: Vec<BlockCache>,
    len: usize,
}

impl DecoderState {
    /// Number of positions consumed so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl Decoder {
    /// Precomputes cross-attention keys and values for `memory`.
    pub fn begin(&self, store: &ParamStore, memory: &Tensor) -> DecoderState {
        let blocks = self
            .blocks
            .iter()
            .map(|b| BlockCache {
                k: Vec::new(),
                v: Vec::new(),
                mem_k: linear_rows(store, &b.cross.k, memory),
                mem_v: linear_rows(store, &b.cross.v, memory),
            })
            .collect();
        DecoderState { blocks, len: 0 }
    }

    /// Feeds one input row and returns the output row at that position.
    /// Matches [`Decoder::forward`] without dropout.
    pub fn step(&self, store: &ParamStore, state: &mut DecoderState, x: &[f64]) -> Vec<f64> {
        let mut x = x.to_vec();
        for (b, c) in self.blocks.iter().zip(&mut state.blocks) {
            let h = layer_norm_row(store, &b.ln1, &x);
            let q = linear_row(store, &b.self_attn.q, &h);
            c.k.extend(linear_row(store, &b.self_attn.k, &h));
            c.v.extend(linear_row(store, &b.self_attn.v, &h));
            let a = attend_row(&q, &c.k, &c.v, b.self_attn.heads);
            add_into(&mut x, &linear_row(store, &b.self_attn.o, &a));
            let h = layer_norm_row(store, &b.ln2, &x);
            let q = linear_row(store, &b.cross.q, &h);
            let a = attend_row(&q, &c.mem_k.data, &c.mem_v.data, b.cross.heads);
            add_into(&mut x, &linear_row(store, &b.cross.o, &a));
            let h = layer_norm_row(store, &b.ln3, &x);
            let mut u = linear_row(store, &b.ffn.up, &h);
            gelu_in_place(&mut u);
            add_into(&mut x, &linear_row(store, &b.ffn.down, &u));
        }
        state.len += 1;
        layer_norm_row(store, &self.ln, &x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn incremental_decoding_matches_full_forward() {
        let cfg = TransformerConfig { d_model: 16, heads: 4, ff: 24, blocks: 2, dropout: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let dec = Decoder::new(&mut store, "dec", &cfg, &mut rng);
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data.iter_mut().for_each(|x| *x *= 20.0);
        }
        let x = Tensor::randn(7, 16, 1.0, &mut rng);
        let mem = Tensor::randn(3, 16, 1.0, &mut rng);
        let g = Graph::new(&store);
        let full = g.value(dec.forward(&g, g.constant(x.clone()), g.constant(mem.clone())));
        let mut state = dec.begin(&store, &mem);
        for r in 0..7 {
            let y = dec.step(&store, &mut state, x.row(r));
            for (a, b) in y.iter().zip(full.row(r)) {
                assert!((a - b).abs() < 1e-10, "row {r}: {a} vs {b}");
            }
        }
        assert_eq!(state.len(), 7);
    }
}
