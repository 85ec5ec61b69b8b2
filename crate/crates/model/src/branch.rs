use rand::Rng;
use serde::{Deserialize, Serialize};
use skexcraft_core::seq::{ExtrudeSlot, ViewKind, Views, EXTRUDE_BLOCK_LEN, EXTRUDE_TOKEN_TYPES, EXT_END_SEQ, GEOM_END_CURVE};
use skexcraft_nn::layers::INIT_STD;
use skexcraft_nn::{nucleus_sample, Decoder, Encoder, Graph, ParamId, ParamStore, Tensor, Var};

use crate::codebook::Codebook;
use crate::grammar::{apply_mask, ExtrudeGrammar, GeomGrammar};
use crate::{ModelConfig, ModelError};

const GRID: u16 = 64;

/// Which half of the model a [`Branch`] implements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    /// Topology and geometry encoders, geometry decoder.
    Sketch,
    /// Extrude encoder and decoder.
    Extrude,
}

impl BranchKind {
    pub fn name(self) -> &'static str {
        match self {
            BranchKind::Sketch => "sketch",
            BranchKind::Extrude => "extrude",
        }
    }

    /// Views read by the encoders, in code order.
    pub fn input_views(self) -> &'static [ViewKind] {
        match self {
            BranchKind::Sketch => &[ViewKind::Topology, ViewKind::Geometry],
            BranchKind::Extrude => &[ViewKind::Extrude],
        }
    }

    pub fn output_view(self) -> ViewKind {
        match self {
            BranchKind::Sketch => ViewKind::Geometry,
            BranchKind::Extrude => ViewKind::Extrude,
        }
    }
}

/// How the decoders pick each token.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sampling {
    Greedy,
    Nucleus { p: f64, temperature: f64 },
}

impl Sampling {
    pub fn pick<R: Rng + ?Sized>(self, logits: &[f64], rng: &mut R) -> usize {
        match self {
            Sampling::Greedy => skexcraft_nn::tensor::argmax(logits),
            Sampling::Nucleus { p, temperature } => nucleus_sample(logits, p, temperature, rng),
        }
    }
}

/// Token-type id of an extrude token at `index`.
fn extrude_type(index: usize, class: u16) -> usize {
    if class == EXT_END_SEQ {
        EXTRUDE_TOKEN_TYPES - 1
    } else {
        ExtrudeSlot::at(index % EXTRUDE_BLOCK_LEN).type_id()
    }
}

/// Input embedding of one view: token matrix, optional pixel-coordinate and
/// token-type tables, learnable positions.
#[derive(Clone, Debug)]
struct SeqEmbed {
    kind: ViewKind,
    tok: ParamId,
    pos: ParamId,
    coord: Option<[ParamId; 2]>,
    types: Option<ParamId>,
}

impl SeqEmbed {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, kind: ViewKind, max_len: usize, cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let coord = (kind == ViewKind::Geometry && cfg.coord_embed).then(|| {
            [
                store.normal(format!("{name}.x"), GRID as usize, d, INIT_STD, rng),
                store.normal(format!("{name}.y"), GRID as usize, d, INIT_STD, rng),
            ]
        });
        let types = (kind == ViewKind::Extrude).then(|| store.normal(format!("{name}.type"), EXTRUDE_TOKEN_TYPES, d, INIT_STD, rng));
        Self {
            kind,
            tok: store.normal(format!("{name}.tok"), kind.num_classes(), d, INIT_STD, rng),
            pos: store.normal(format!("{name}.pos"), max_len, d, INIT_STD, rng),
            coord,
            types,
        }
    }

    fn max_len(&self, store: &ParamStore) -> usize {
        store.get(self.pos).rows
    }

    /// Token embeddings without positions.
    fn tokens(&self, g: &Graph, classes: &[u16]) -> Var {
        let idx: Vec<usize> = classes.iter().map(|&c| c as usize).collect();
        let mut t = g.gather(g.param(self.tok), &idx);
        if let Some([wx, wy]) = self.coord {
            let pix = |c: u16| c < GEOM_END_CURVE;
            let xs: Vec<usize> = classes.iter().map(|&c| if pix(c) { (c % GRID) as usize } else { 0 }).collect();
            let ys: Vec<usize> = classes.iter().map(|&c| if pix(c) { (c / GRID) as usize } else { 0 }).collect();
            let d = g.shape(t)[1];
            let mask: Vec<f64> = classes.iter().flat_map(|&c| std::iter::repeat_n(if pix(c) { 1.0 } else { 0.0 }, d)).collect();
            let xy = g.add(g.gather(g.param(wx), &xs), g.gather(g.param(wy), &ys));
            let xy = g.mul(xy, g.constant(Tensor::from_vec(classes.len(), d, mask)));
            t = g.add(t, xy);
        }
        if let Some(types) = self.types {
            let ids: Vec<usize> = classes.iter().enumerate().map(|(i, &c)| extrude_type(i, c)).collect();
            t = g.add(t, g.gather(g.param(types), &ids));
        }
        t
    }

    fn positions(&self, g: &Graph, n: usize) -> Var {
        g.slice_rows(g.param(self.pos), 0, n)
    }

    /// Token embeddings plus positions `0..n`.
    fn embed(&self, g: &Graph, classes: &[u16]) -> Var {
        g.add(self.tokens(g, classes), self.positions(g, classes.len()))
    }

    /// Embedding of token `class` at `index`, without its position.
    fn token_row(&self, store: &ParamStore, index: usize, class: u16) -> Vec<f64> {
        let mut row = store.get(self.tok).row(class as usize).to_vec();
        if let Some([wx, wy]) = self.coord {
            if class < GEOM_END_CURVE {
                let add = |row: &mut Vec<f64>, t: &Tensor, i: u16| row.iter_mut().zip(t.row(i as usize)).for_each(|(a, b)| *a += b);
                add(&mut row, store.get(wx), class % GRID);
                add(&mut row, store.get(wy), class / GRID);
            }
        }
        if let Some(types) = self.types {
            row.iter_mut().zip(store.get(types).row(extrude_type(index, class))).for_each(|(a, b)| *a += b);
        }
        row
    }

    fn check(&self, store: &ParamStore, classes: &[u16]) -> Result<(), ModelError> {
        let max = self.max_len(store);
        if classes.len() > max {
            return Err(ModelError::SequenceTooLong { view: self.kind, len: classes.len(), max });
        }
        let n = self.kind.num_classes() as u16;
        if let Some(i) = classes.iter().position(|&c| c >= n) {
            return Err(skexcraft_core::seq::SeqError::ClassOutOfRange { view: self.kind, index: i, class: classes[i] }.into());
        }
        Ok(())
    }
}

/// Bidirectional encoder with learnable code tokens prepended to its input.
#[derive(Clone, Debug)]
struct SeqEncoder {
    embed: SeqEmbed,
    codes: ParamId,
    encoder: Encoder,
}

impl SeqEncoder {
    fn encode(&self, g: &Graph, classes: &[u16]) -> Var {
        let codes = g.param(self.codes);
        let k = g.shape(codes)[0];
        let x = if classes.is_empty() { codes } else { g.concat_rows(&[codes, self.embed.embed(g, classes)]) };
        let h = self.encoder.forward(g, x, false);
        g.slice_rows(h, 0, k)
    }
}

/// Output of [`Branch::forward`] for one training sequence.
pub struct BranchForward {
    pub loss: Var,
    pub cross_entropy: f64,
    pub correct: usize,
    pub tokens: usize,
    /// Pre-quantization codes per encoder.
    pub latents: Vec<Tensor>,
    /// Code indices per encoder (empty when quantization is bypassed).
    pub indices: Vec<Vec<usize>>,
}

/// One training example: encoder inputs in [`BranchKind::input_views`] order
/// and the decoder target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BranchSample {
    pub inputs: Vec<Vec<u16>>,
    pub target: Vec<u16>,
}

impl BranchSample {
    pub fn sketch(v: &Views) -> Self {
        Self { inputs: vec![v.topology.classes.clone(), v.geometry.classes.clone()], target: v.geometry.classes.clone() }
    }

    pub fn extrude(v: &Views) -> Self {
        Self { inputs: vec![v.extrude.classes.clone()], target: v.extrude.classes.clone() }
    }

    pub fn of(kind: BranchKind, v: &Views) -> Self {
        match kind {
            BranchKind::Sketch => Self::sketch(v),
            BranchKind::Extrude => Self::extrude(v),
        }
    }
}

/// Encoders, codebooks and decoder of one branch. The two branches own
/// separate parameter stores and are trained independently.
#[derive(Clone, Debug)]
pub struct Branch {
    pub kind: BranchKind,
    pub store: ParamStore,
    pub books: Vec<Codebook>,
    encoders: Vec<SeqEncoder>,
    offsets: Vec<Option<ParamId>>,
    dec_embed: SeqEmbed,
    decoder: Decoder,
    out: ParamId,
    beta: f64,
    pub dropout: f64,
}

impl Branch {
    pub fn new<R: Rng + ?Sized>(kind: BranchKind, cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let s = &mut store;
        let tcfg = cfg.transformer();
        let d = cfg.d_model;
        let specs: Vec<(&str, ViewKind, usize, usize, usize)> = match kind {
            BranchKind::Sketch => vec![
                ("topology", ViewKind::Topology, cfg.max_topology_len, cfg.topology_codes, cfg.topology_book),
                ("geometry", ViewKind::Geometry, cfg.max_sketch_len, cfg.geometry_codes, cfg.geometry_book),
            ],
            BranchKind::Extrude => vec![("extrude", ViewKind::Extrude, cfg.max_extrude_len, cfg.extrude_codes, cfg.extrude_book)],
        };
        let mut encoders = Vec::new();
        let mut offsets = Vec::new();
        for &(name, view, max_len, k, _) in &specs {
            encoders.push(SeqEncoder {
                embed: SeqEmbed::new(s, &format!("{name}.in"), view, max_len, cfg, rng),
                codes: s.normal(format!("{name}.code_tokens"), k, d, INIT_STD, rng),
                encoder: Encoder::new(s, &format!("{name}.enc"), &tcfg, rng),
            });
            offsets.push((kind == BranchKind::Sketch).then(|| s.normal(format!("{name}.book_embed"), k, d, INIT_STD, rng)));
        }
        let out_view = kind.output_view();
        let max_out = if kind == BranchKind::Sketch { cfg.max_sketch_len } else { cfg.max_extrude_len };
        let dec_embed = SeqEmbed::new(s, "dec.in", out_view, max_out, cfg, rng);
        let decoder = Decoder::new(s, "dec", &tcfg, rng);
        let out = s.normal("dec.out", d, out_view.num_classes(), INIT_STD, rng);
        let books = specs.iter().map(|&(_, _, _, _, n)| Codebook::new(n, d, cfg.ema_decay, rng)).collect();
        Self { kind, store, books, encoders, offsets, dec_embed, decoder, out, beta: cfg.beta, dropout: cfg.dropout }
    }

    /// Codebook names in encoder order.
    pub fn book_names(&self) -> &'static [&'static str] {
        match self.kind {
            BranchKind::Sketch => &["topology", "geometry"],
            BranchKind::Extrude => &["extrude"],
        }
    }

    /// Parameters and codebooks (vectors plus EMA statistics) as one tensor file.
    pub fn save<W: std::io::Write>(&self, w: W) -> Result<(), ModelError> {
        let mut extra = Vec::new();
        for (name, b) in self.book_names().iter().zip(&self.books) {
            extra.push((format!("codebook.{name}.codes"), b.codes.clone()));
            extra.push((format!("codebook.{name}.counts"), Tensor::row_vec(b.counts.clone())));
            extra.push((format!("codebook.{name}.sums"), b.sums.clone()));
        }
        let entries = self.store.iter().chain(extra.iter().map(|(n, t)| (n.as_str(), t)));
        Ok(skexcraft_nn::write_tensors(w, entries)?)
    }

    pub fn load(&mut self, entries: &[(String, Tensor)]) -> Result<(), ModelError> {
        self.store.load_from(entries)?;
        let find = |name: String, shape: [usize; 2]| -> Result<Tensor, ModelError> {
            let (_, t) = entries.iter().find(|(n, _)| *n == name).ok_or_else(|| skexcraft_nn::CheckpointError::Missing(name.clone()))?;
            if t.shape() != shape {
                return Err(skexcraft_nn::CheckpointError::Shape { name, expected: shape, found: t.shape() }.into());
            }
            Ok(t.clone())
        };
        for (name, b) in self.book_names().iter().zip(self.books.iter_mut()) {
            let (n, d) = (b.size(), b.dim());
            b.codes = find(format!("codebook.{name}.codes"), [n, d])?;
            b.counts = find(format!("codebook.{name}.counts"), [1, n])?.data;
            b.sums = find(format!("codebook.{name}.sums"), [n, d])?;
        }
        Ok(())
    }

    /// Code-token count of each encoder.
    pub fn code_counts(&self) -> Vec<usize> {
        self.encoders.iter().map(|e| self.store.get(e.codes).rows).collect()
    }

    pub fn max_output_len(&self) -> usize {
        self.dec_embed.max_len(&self.store)
    }

    /// Input embedding of encoder `which` for `classes` (tokens plus positions).
    pub fn embed(&self, g: &Graph, which: usize, classes: &[u16]) -> Var {
        self.encoders[which].embed.embed(g, classes)
    }

    pub fn check_sample(&self, s: &BranchSample) -> Result<(), ModelError> {
        if s.inputs.len() != self.encoders.len() {
            return Err(ModelError::Config(format!("{} branch takes {} inputs", self.kind.name(), self.encoders.len())));
        }
        for (e, x) in self.encoders.iter().zip(&s.inputs) {
            e.embed.check(&self.store, x)?;
        }
        self.dec_embed.check(&self.store, &s.target)
    }

    fn memory(&self, g: &Graph, codes: &[Var]) -> Var {
        let parts: Vec<Var> = codes
            .iter()
            .zip(&self.offsets)
            .map(|(&z, off)| match off {
                Some(p) => g.add(z, g.param(*p)),
                None => z,
            })
            .collect();
        if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_rows(&parts)
        }
    }

    /// Teacher-forced logits for `target` given code rows (one var per encoder).
    pub fn decode_logits(&self, g: &Graph, codes: &[Var], target: &[u16]) -> Var {
        let n = target.len();
        let d = self.store.get(self.out).rows;
        let start = g.constant(Tensor::zeros(1, d));
        let x = if n > 1 { g.concat_rows(&[start, self.dec_embed.tokens(g, &target[..n - 1])]) } else { start };
        let x = g.add(x, self.dec_embed.positions(g, n));
        let mem = self.memory(g, codes);
        let h = self.decoder.forward(g, x, mem);
        g.matmul(h, g.param(self.out))
    }

    /// Pre-quantization codes of every encoder.
    pub fn encode_vars(&self, g: &Graph, inputs: &[Vec<u16>]) -> Vec<Var> {
        self.encoders.iter().zip(inputs).map(|(e, x)| e.encode(g, x)).collect()
    }

    /// Reconstruction loss plus commitment terms. With `quantize` false the
    /// decoder reads the encoder outputs directly.
    pub fn forward(&self, g: &Graph, s: &BranchSample, quantize: bool) -> BranchForward {
        let z = self.encode_vars(g, &s.inputs);
        let latents: Vec<Tensor> = z.iter().map(|&v| (*g.value(v)).clone()).collect();
        let mut codes = Vec::with_capacity(z.len());
        let mut indices = Vec::new();
        let mut commit = Vec::new();
        for ((&zv, lat), book) in z.iter().zip(&latents).zip(&self.books) {
            if quantize {
                let idx = book.quantize_rows(lat);
                let q = book.lookup(&idx);
                commit.push(g.mse(zv, q.clone()));
                codes.push(g.straight_through(zv, q));
                indices.push(idx);
            } else {
                codes.push(zv);
            }
        }
        let logits = self.decode_logits(g, &codes, &s.target);
        let targets: Vec<usize> = s.target.iter().map(|&t| t as usize).collect();
        let ce = g.cross_entropy(logits, &targets);
        let lv = g.value(logits);
        let correct = s.target.iter().enumerate().filter(|&(r, &t)| lv.argmax_row(r) == t as usize).count();
        let cross_entropy = g.value(ce).item();
        let mut loss = ce;
        for c in commit {
            loss = g.add(loss, g.scale(c, self.beta));
        }
        BranchForward { loss, cross_entropy, correct, tokens: s.target.len(), latents, indices }
    }

    /// Pre-quantization codes for a sequence, one `k × d` tensor per encoder.
    pub fn encode(&self, inputs: &[Vec<u16>]) -> Vec<Tensor> {
        let g = Graph::new(&self.store);
        self.encode_vars(&g, inputs).into_iter().map(|v| (*g.value(v)).clone()).collect()
    }

    pub fn quantize(&self, latents: &[Tensor]) -> Vec<Vec<usize>> {
        latents.iter().zip(&self.books).map(|(z, b)| b.quantize_rows(z)).collect()
    }

    pub fn lookup(&self, indices: &[Vec<usize>]) -> Vec<Tensor> {
        indices.iter().zip(&self.books).map(|(i, b)| b.lookup(i)).collect()
    }

    /// Row-stochastic next-token probabilities under teacher forcing.
    pub fn teacher_forced_probs(&self, codes: &[Tensor], target: &[u16]) -> Tensor {
        let g = Graph::new(&self.store);
        let cv: Vec<Var> = codes.iter().map(|c| g.constant(c.clone())).collect();
        let logits = self.decode_logits(&g, &cv, target);
        (*g.value(g.softmax(logits))).clone()
    }

    /// Autoregressive decoding under the view's grammar mask.
    pub fn decode<R: Rng + ?Sized>(&self, codes: &[Tensor], sampling: Sampling, rng: &mut R) -> Vec<u16> {
        let max_len = self.max_output_len();
        let mut grammar = match self.kind {
            BranchKind::Sketch => Grammar::Geom(GeomGrammar::new(max_len)),
            BranchKind::Extrude => Grammar::Ext(ExtrudeGrammar::new(max_len)),
        };
        let d = self.store.get(self.out).rows;
        let mut mem = Tensor::zeros(0, d);
        for (c, off) in codes.iter().zip(&self.offsets) {
            let mut c = c.clone();
            if let Some(p) = off {
                c.add_assign(self.store.get(*p));
            }
            mem.data.extend_from_slice(&c.data);
            mem.rows += c.rows;
        }
        let mut state = self.decoder.begin(&self.store, &mem);
        let pos = self.store.get(self.dec_embed.pos);
        let w_out = self.store.get(self.out);
        let mut x = pos.row(0).to_vec();
        let mut out = Vec::new();
        while !grammar.is_done() && out.len() < max_len {
            let h = self.decoder.step(&self.store, &mut state, &x);
            let mut logits = vec![0.0; w_out.cols];
            for (k, hv) in h.iter().enumerate() {
                for (l, w) in logits.iter_mut().zip(w_out.row(k)) {
                    *l += hv * w;
                }
            }
            apply_mask(&mut logits, &grammar.allowed());
            let c = sampling.pick(&logits, rng) as u16;
            let accepted = grammar.push(c);
            debug_assert!(accepted, "masked decoding produced an illegal token");
            out.push(c);
            if out.len() < max_len {
                x = self.dec_embed.token_row(&self.store, out.len() - 1, c);
                x.iter_mut().zip(pos.row(out.len())).for_each(|(a, b)| *a += b);
            }
        }
        out
    }
}

enum Grammar {
    Geom(GeomGrammar),
    Ext(ExtrudeGrammar),
}

impl Grammar {
    fn is_done(&self) -> bool {
        match self {
            Grammar::Geom(g) => g.is_done(),
            Grammar::Ext(g) => g.is_done(),
        }
    }

    fn allowed(&self) -> Vec<std::ops::Range<u16>> {
        match self {
            Grammar::Geom(g) => g.allowed(),
            Grammar::Ext(g) => g.allowed(),
        }
    }

    fn push(&mut self, c: u16) -> bool {
        match self {
            Grammar::Geom(g) => g.push(c),
            Grammar::Ext(g) => g.push(c),
        }
    }
}
