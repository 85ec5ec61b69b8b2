//! Autoregressive code selectors over codebook indices.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use skexcraft_nn::layers::INIT_STD;
use skexcraft_nn::{Decoder, Grads, Graph, ParamId, ParamStore, Tensor, Var};

use crate::branch::Sampling;
use crate::train::{adam_for, stream};
use crate::{ModelConfig, ModelError, TrainConfig};

/// One of the three codebooks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeGroup {
    Topology,
    Geometry,
    Extrude,
}

impl CodeGroup {
    pub const ALL: [CodeGroup; 3] = [CodeGroup::Topology, CodeGroup::Geometry, CodeGroup::Extrude];

    pub fn name(self) -> &'static str {
        match self {
            CodeGroup::Topology => "topology",
            CodeGroup::Geometry => "geometry",
            CodeGroup::Extrude => "extrude",
        }
    }

    pub fn count(self, cfg: &ModelConfig) -> usize {
        match self {
            CodeGroup::Topology => cfg.topology_codes,
            CodeGroup::Geometry => cfg.geometry_codes,
            CodeGroup::Extrude => cfg.extrude_codes,
        }
    }

    pub fn book_size(self, cfg: &ModelConfig) -> usize {
        match self {
            CodeGroup::Topology => cfg.topology_book,
            CodeGroup::Geometry => cfg.geometry_book,
            CodeGroup::Extrude => cfg.extrude_book,
        }
    }
}

/// Codebook indices of one model: topology, geometry and extrude codes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodeTuple {
    pub topology: Vec<usize>,
    pub geometry: Vec<usize>,
    pub extrude: Vec<usize>,
}

impl CodeTuple {
    pub fn group(&self, g: CodeGroup) -> &[usize] {
        match g {
            CodeGroup::Topology => &self.topology,
            CodeGroup::Geometry => &self.geometry,
            CodeGroup::Extrude => &self.extrude,
        }
    }

    pub fn group_mut(&mut self, g: CodeGroup) -> &mut Vec<usize> {
        match g {
            CodeGroup::Topology => &mut self.topology,
            CodeGroup::Geometry => &mut self.geometry,
            CodeGroup::Extrude => &mut self.extrude,
        }
    }

    /// Indices in selection order.
    pub fn flat(&self) -> Vec<usize> {
        CodeGroup::ALL.iter().flat_map(|&g| self.group(g).iter().copied()).collect()
    }

    pub fn check(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        for g in CodeGroup::ALL {
            check_group(g, self.group(g), cfg)?;
        }
        Ok(())
    }
}

fn check_group(g: CodeGroup, idx: &[usize], cfg: &ModelConfig) -> Result<(), ModelError> {
    if idx.len() != g.count(cfg) {
        return Err(ModelError::CountMismatch(format!("{} needs {} codes, got {}", g.name(), g.count(cfg), idx.len())));
    }
    if let Some(&i) = idx.iter().find(|&&i| i >= g.book_size(cfg)) {
        return Err(ModelError::CountMismatch(format!("{} index {i} outside codebook of {}", g.name(), g.book_size(cfg))));
    }
    Ok(())
}

/// Which code groups a selector receives instead of generating.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Given {
    pub topology: bool,
    pub geometry: bool,
    pub extrude: bool,
}

impl Given {
    /// Every selector variant; the fully given case needs no selector.
    pub const VARIANTS: [Given; 7] = [
        Given::of(false, false, false),
        Given::of(true, false, false),
        Given::of(false, true, false),
        Given::of(false, false, true),
        Given::of(true, true, false),
        Given::of(true, false, true),
        Given::of(false, true, true),
    ];

    pub const fn of(topology: bool, geometry: bool, extrude: bool) -> Self {
        Self { topology, geometry, extrude }
    }

    pub fn has(self, g: CodeGroup) -> bool {
        match g {
            CodeGroup::Topology => self.topology,
            CodeGroup::Geometry => self.geometry,
            CodeGroup::Extrude => self.extrude,
        }
    }

    pub fn is_all(self) -> bool {
        self.topology && self.geometry && self.extrude
    }

    /// Short tag such as `none`, `t` or `ge`.
    pub fn name(self) -> String {
        let s: String = CodeGroup::ALL.iter().filter(|&&g| self.has(g)).map(|g| &g.name()[..1]).collect();
        if s.is_empty() {
            "none".into()
        } else {
            s
        }
    }
}

impl std::str::FromStr for Given {
    type Err = ModelError;

    /// Inverse of [`Given::name`]; `all` and `tge` both mean every group.
    fn from_str(s: &str) -> Result<Self, ModelError> {
        if s == "none" {
            return Ok(Given::default());
        }
        if s == "all" {
            return Ok(Given::of(true, true, true));
        }
        let mut out = Given::default();
        for c in s.chars() {
            let flag = match c {
                't' => &mut out.topology,
                'g' => &mut out.geometry,
                'e' => &mut out.extrude,
                _ => return Err(ModelError::Config(format!("unknown code group {c:?} in {s:?}"))),
            };
            if std::mem::replace(flag, true) {
                return Err(ModelError::Config(format!("code group {c:?} repeated in {s:?}")));
            }
        }
        if s.is_empty() {
            return Err(ModelError::Config("empty group list".into()));
        }
        Ok(out)
    }
}

/// Partially specified code tuple.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extrude: Option<Vec<usize>>,
}

impl Condition {
    pub fn get(&self, g: CodeGroup) -> Option<&[usize]> {
        match g {
            CodeGroup::Topology => self.topology.as_deref(),
            CodeGroup::Geometry => self.geometry.as_deref(),
            CodeGroup::Extrude => self.extrude.as_deref(),
        }
    }

    pub fn given(&self) -> Given {
        Given::of(self.topology.is_some(), self.geometry.is_some(), self.extrude.is_some())
    }

    /// Keeps the groups of `codes` marked in `keep`.
    pub fn from_codes(codes: &CodeTuple, keep: Given) -> Self {
        let pick = |g: CodeGroup| keep.has(g).then(|| codes.group(g).to_vec());
        Self { topology: pick(CodeGroup::Topology), geometry: pick(CodeGroup::Geometry), extrude: pick(CodeGroup::Extrude) }
    }
}

/// Transformer decoder that emits the missing codes one by one while
/// cross-attending to the given ones.
#[derive(Clone, Debug)]
pub struct Selector {
    pub given: Given,
    pub store: ParamStore,
    /// Group and codebook size of each slot in selection order.
    slots: Vec<(CodeGroup, usize)>,
    emb: ParamId,
    slot_pos: ParamId,
    null: ParamId,
    decoder: Decoder,
    out: ParamId,
    pub dropout: f64,
}

/// Summary of one selector training epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectorEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

impl Selector {
    pub fn new<R: Rng + ?Sized>(given: Given, cfg: &ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        if given.is_all() {
            return Err(ModelError::Config("a selector must generate at least one group".into()));
        }
        let slots: Vec<(CodeGroup, usize)> =
            CodeGroup::ALL.iter().flat_map(|&g| std::iter::repeat_n((g, g.book_size(cfg)), g.count(cfg))).collect();
        let n_max = slots.iter().map(|s| s.1).max().unwrap_or(1);
        let d = cfg.d_model;
        let mut store = ParamStore::new();
        let s = &mut store;
        let emb = s.normal("sel.emb", n_max, d, INIT_STD, rng);
        let slot_pos = s.normal("sel.slot", slots.len(), d, INIT_STD, rng);
        let null = s.normal("sel.null", 1, d, INIT_STD, rng);
        let decoder = Decoder::new(s, "sel.dec", &cfg.transformer(), rng);
        let out = s.normal("sel.out", d, n_max, INIT_STD, rng);
        Ok(Self { given, store, slots, emb, slot_pos, null, decoder, out, dropout: cfg.dropout })
    }

    fn given_slots(&self) -> Vec<usize> {
        (0..self.slots.len()).filter(|&i| self.given.has(self.slots[i].0)).collect()
    }

    fn missing_slots(&self) -> Vec<usize> {
        (0..self.slots.len()).filter(|&i| !self.given.has(self.slots[i].0)).collect()
    }

    fn check_codes(&self, flat: &[usize], slots: &[usize]) -> Result<(), ModelError> {
        for &s in slots {
            if flat[s] >= self.slots[s].1 {
                return Err(ModelError::Config(format!("{} index {} outside its codebook", self.slots[s].0.name(), flat[s])));
            }
        }
        Ok(())
    }

    /// Teacher-forced loss over the missing codes of `codes`.
    pub fn forward(&self, g: &Graph, codes: &CodeTuple) -> (Var, usize, usize) {
        let flat = codes.flat();
        let given = self.given_slots();
        let missing = self.missing_slots();
        let memory = if given.is_empty() {
            g.param(self.null)
        } else {
            let idx: Vec<usize> = given.iter().map(|&s| flat[s]).collect();
            g.add(g.gather(g.param(self.emb), &idx), g.gather(g.param(self.slot_pos), &given))
        };
        let d = g.shape(memory)[1];
        let prev: Vec<usize> = missing[..missing.len() - 1].iter().map(|&s| flat[s]).collect();
        let start = g.constant(Tensor::zeros(1, d));
        let shifted = if prev.is_empty() { start } else { g.concat_rows(&[start, g.gather(g.param(self.emb), &prev)]) };
        let x = g.add(shifted, g.gather(g.param(self.slot_pos), &missing));
        let h = self.decoder.forward(g, x, memory);
        let logits = g.matmul(h, g.param(self.out));
        let targets: Vec<usize> = missing.iter().map(|&s| flat[s]).collect();
        let loss = g.cross_entropy(logits, &targets);
        let lv = g.value(logits);
        let correct = targets.iter().enumerate().filter(|&(r, &t)| lv.argmax_row(r) == t).count();
        (loss, correct, targets.len())
    }

    /// Completes `cond` with sampled indices for the groups this variant generates.
    pub fn select<R: Rng + ?Sized>(&self, cond: &Condition, sampling: Sampling, rng: &mut R) -> Result<CodeTuple, ModelError> {
        if cond.given() != self.given {
            return Err(ModelError::Config(format!("selector {} cannot take condition {}", self.given.name(), cond.given().name())));
        }
        let mut flat = vec![0usize; self.slots.len()];
        let mut cursor = 0;
        for g in CodeGroup::ALL {
            let n = self.slots.iter().filter(|s| s.0 == g).count();
            if let Some(idx) = cond.get(g) {
                if idx.len() != n {
                    return Err(ModelError::CountMismatch(format!("{} needs {n} codes, got {}", g.name(), idx.len())));
                }
                flat[cursor..cursor + n].copy_from_slice(idx);
            }
            cursor += n;
        }
        let given = self.given_slots();
        self.check_codes(&flat, &given)?;
        let emb = self.store.get(self.emb);
        let pos = self.store.get(self.slot_pos);
        let d = emb.cols;
        let memory = if given.is_empty() {
            self.store.get(self.null).clone()
        } else {
            let mut m = Tensor::zeros(given.len(), d);
            for (r, &s) in given.iter().enumerate() {
                for ((o, a), b) in m.row_mut(r).iter_mut().zip(emb.row(flat[s])).zip(pos.row(s)) {
                    *o = a + b;
                }
            }
            m
        };
        let mut state = self.decoder.begin(&self.store, &memory);
        let w_out = self.store.get(self.out);
        let mut x = vec![0.0; d];
        for &s in &self.missing_slots() {
            x.iter_mut().zip(pos.row(s)).for_each(|(a, b)| *a += b);
            let h = self.decoder.step(&self.store, &mut state, &x);
            let book = self.slots[s].1;
            let mut logits = vec![0.0; book];
            for (k, hv) in h.iter().enumerate() {
                for (l, w) in logits.iter_mut().zip(&w_out.row(k)[..book]) {
                    *l += hv * w;
                }
            }
            let c = sampling.pick(&logits, rng);
            flat[s] = c;
            x = emb.row(c).to_vec();
        }
        let mut out = CodeTuple::default();
        for (&(g, _), &i) in self.slots.iter().zip(&flat) {
            out.group_mut(g).push(i);
        }
        Ok(out)
    }
}

/// Teacher-forced training of a selector on code tuples of the training set.
pub fn train_selector(
    sel: &mut Selector,
    data: &[CodeTuple],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&SelectorEpoch),
) -> Result<Vec<SelectorEpoch>, ModelError> {
    if data.is_empty() || cfg.batch == 0 {
        return Err(ModelError::Config("training needs data and a positive batch size".into()));
    }
    let all: Vec<usize> = (0..sel.slots.len()).collect();
    for t in data {
        let flat = t.flat();
        if flat.len() != sel.slots.len() {
            return Err(ModelError::Config("code tuple does not match the selector layout".into()));
        }
        sel.check_codes(&flat, &all)?;
    }
    let variant = Given::VARIANTS.iter().position(|&v| v == sel.given).unwrap_or(0) as u64;
    let mut rng = stream(cfg.seed, 32 + variant);
    let mut dropout_rng = stream(cfg.seed, 48 + variant);
    let mut adam = adam_for(cfg);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.selector_epochs);
    for epoch in 0..cfg.selector_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut tokens) = (0.0, 0, 0);
        for chunk in order.chunks(cfg.batch) {
            let mut grads = Grads::for_store(&sel.store);
            for &i in chunk {
                let g = if sel.dropout > 0.0 {
                    Graph::with_dropout(&sel.store, ChaCha8Rng::seed_from_u64(dropout_rng.random()))
                } else {
                    Graph::new(&sel.store)
                };
                let (loss, c, n) = sel.forward(&g, &data[i]);
                let lv = g.value(loss).item();
                if !lv.is_finite() {
                    return Err(ModelError::DivergedLoss { epoch });
                }
                g.backward_into(loss, &mut grads);
                loss_sum += lv;
                correct += c;
                tokens += n;
            }
            grads.scale(1.0 / chunk.len() as f64);
            adam.step(&mut sel.store, &mut grads);
        }
        let stats = SelectorEpoch { epoch, loss: loss_sum / data.len() as f64, accuracy: correct as f64 / tokens.max(1) as f64 };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}
