use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use skexcraft_core::seq::{parse, validate, views, CadModel, Diagnostic, SubSeq, ViewKind};
use skexcraft_nn::{read_tensors, Tensor};

use crate::branch::{Branch, BranchKind, BranchSample, Sampling};
use crate::config::{from_flat, to_flat};
use crate::selector::{train_selector, CodeGroup, CodeTuple, Condition, Given, Selector, SelectorEpoch};
use crate::train::{stream, train_branch, EpochStats};
use crate::{ModelConfig, ModelError, TrainConfig};

/// Version tag of the token class layout the checkpoints were trained on.
pub const CLASS_LAYOUT: &str = "topology-7/geometry-4101/extrude-72";
const FORMAT: &str = "skexcraft-model";
const FORMAT_VERSION: u32 = 1;

/// Pre-quantization codes of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct Latents {
    pub topology: Tensor,
    pub geometry: Tensor,
    pub extrude: Tensor,
}

impl Latents {
    pub fn get(&self, g: CodeGroup) -> &Tensor {
        match g {
            CodeGroup::Topology => &self.topology,
            CodeGroup::Geometry => &self.geometry,
            CodeGroup::Extrude => &self.extrude,
        }
    }

    /// `(1−t)·self + t·other`, elementwise.
    pub fn lerp(&self, other: &Latents, t: f64) -> Latents {
        let mix = |a: &Tensor, b: &Tensor| {
            Tensor::from_vec(a.rows, a.cols, a.data.iter().zip(&b.data).map(|(x, y)| (1.0 - t) * x + t * y).collect())
        };
        Latents {
            topology: mix(&self.topology, &other.topology),
            geometry: mix(&self.geometry, &other.geometry),
            extrude: mix(&self.extrude, &other.extrude),
        }
    }
}

/// Decoder output for one code tuple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub codes: CodeTuple,
    pub geometry: Vec<u16>,
    pub extrude: Vec<u16>,
    /// Merged model when both subsequences parse and their step counts agree.
    pub model: Option<CadModel>,
    /// Parse or merge failure.
    pub error: Option<String>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Decoded {
    pub fn is_valid(&self) -> bool {
        self.model.is_some() && self.diagnostics.is_empty()
    }
}

/// Result of rejection-sampled generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub samples: Vec<Decoded>,
    pub attempts: usize,
    /// Valid samples over attempts.
    pub validity_rate: f64,
}

/// Progress report from [`SkexGen::train`].
#[derive(Clone, Debug)]
pub enum TrainEvent<'a> {
    Branch(BranchKind, &'a EpochStats),
    Selector(Given, &'a SelectorEpoch),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    class_layout: String,
    codes: [usize; 3],
    books: [usize; 3],
    selectors: Vec<String>,
}

/// Both branches plus the code selectors.
#[derive(Clone, Debug)]
pub struct SkexGen {
    pub config: ModelConfig,
    pub sketch: Branch,
    pub extrude: Branch,
    pub selectors: Vec<Selector>,
}

impl SkexGen {
    /// Untrained model with every selector variant.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.check()?;
        let sketch = Branch::new(BranchKind::Sketch, &config, &mut stream(seed, 64));
        let extrude = Branch::new(BranchKind::Extrude, &config, &mut stream(seed, 65));
        let selectors = Given::VARIANTS
            .iter()
            .enumerate()
            .map(|(i, &v)| Selector::new(v, &config, &mut stream(seed, 80 + i as u64)))
            .collect::<Result<_, _>>()?;
        Ok(Self { config, sketch, extrude, selectors })
    }

    /// Trains both branches independently, encodes the corpus and fits
    /// every selector on the resulting code tuples.
    pub fn train(
        models: &[CadModel],
        config: ModelConfig,
        tcfg: &TrainConfig,
        mut log: impl FnMut(TrainEvent<'_>),
    ) -> Result<Self, ModelError> {
        let mut m = Self::new(config, tcfg.seed)?;
        let all_views = models.iter().map(views).collect::<Result<Vec<_>, _>>()?;
        for kind in [BranchKind::Sketch, BranchKind::Extrude] {
            let data: Vec<BranchSample> = all_views.iter().map(|v| BranchSample::of(kind, v)).collect();
            let branch = if kind == BranchKind::Sketch { &mut m.sketch } else { &mut m.extrude };
            train_branch(branch, &data, tcfg, |s| log(TrainEvent::Branch(kind, s)))?;
        }
        let tuples = models.iter().map(|x| m.encode(x).map(|(_, c)| c)).collect::<Result<Vec<_>, _>>()?;
        for sel in &mut m.selectors {
            let given = sel.given;
            train_selector(sel, &tuples, tcfg, |s| log(TrainEvent::Selector(given, s)))?;
        }
        Ok(m)
    }

    pub fn selector(&self, given: Given) -> Option<&Selector> {
        self.selectors.iter().find(|s| s.given == given)
    }

    /// Pre-quantization codes and their codebook indices.
    pub fn encode(&self, model: &CadModel) -> Result<(Latents, CodeTuple), ModelError> {
        let v = views(model)?;
        let s_in = BranchSample::sketch(&v);
        let e_in = BranchSample::extrude(&v);
        self.sketch.check_sample(&s_in)?;
        self.extrude.check_sample(&e_in)?;
        let mut s = self.sketch.encode(&s_in.inputs).into_iter();
        let mut e = self.extrude.encode(&e_in.inputs).into_iter();
        let lat = Latents {
            topology: s.next().expect("topology codes"),
            geometry: s.next().expect("geometry codes"),
            extrude: e.next().expect("extrude codes"),
        };
        let codes = self.quantize(&lat);
        Ok((lat, codes))
    }

    pub fn quantize(&self, lat: &Latents) -> CodeTuple {
        CodeTuple {
            topology: self.sketch.books[0].quantize_rows(&lat.topology),
            geometry: self.sketch.books[1].quantize_rows(&lat.geometry),
            extrude: self.extrude.books[0].quantize_rows(&lat.extrude),
        }
    }

    /// Decodes both subsequences from `codes` and merges them.
    pub fn decode<R: Rng + ?Sized>(&self, codes: &CodeTuple, sampling: Sampling, rng: &mut R) -> Result<Decoded, ModelError> {
        codes.check(&self.config)?;
        let sk = self.sketch.lookup(&[codes.topology.clone(), codes.geometry.clone()]);
        let ex = self.extrude.lookup(std::slice::from_ref(&codes.extrude));
        let geometry = self.sketch.decode(&sk, sampling, rng);
        let extrude = self.extrude.decode(&ex, sampling, rng);
        let merged = parse(&SubSeq::new(ViewKind::Geometry, geometry.clone()), &SubSeq::new(ViewKind::Extrude, extrude.clone()));
        let (model, error, diagnostics) = match merged {
            Ok(m) => {
                let d = validate(&m);
                (Some(m), None, d)
            }
            Err(e) => (None, Some(e.to_string()), Vec::new()),
        };
        Ok(Decoded { codes: codes.clone(), geometry, extrude, model, error, diagnostics })
    }

    /// Greedy decode of the quantized codes of `model`.
    pub fn reconstruct(&self, model: &CadModel) -> Result<Decoded, ModelError> {
        let (_, codes) = self.encode(model)?;
        self.decode(&codes, Sampling::Greedy, &mut stream(0, 0))
    }

    /// Fills the missing groups of `cond` with the matching selector.
    pub fn select_codes<R: Rng + ?Sized>(&self, cond: &Condition, sampling: Sampling, rng: &mut R) -> Result<CodeTuple, ModelError> {
        let given = cond.given();
        if given.is_all() {
            let codes = CodeTuple {
                topology: cond.topology.clone().unwrap_or_default(),
                geometry: cond.geometry.clone().unwrap_or_default(),
                extrude: cond.extrude.clone().unwrap_or_default(),
            };
            codes.check(&self.config)?;
            return Ok(codes);
        }
        let sel = self.selector(given).ok_or_else(|| ModelError::Config(format!("no {} selector loaded", given.name())))?;
        sel.select(cond, sampling, rng)
    }

    /// One selection plus decode, without rejection.
    pub fn sample<R: Rng + ?Sized>(&self, cond: &Condition, sampling: Sampling, rng: &mut R) -> Result<Decoded, ModelError> {
        let codes = self.select_codes(cond, sampling, rng)?;
        self.decode(&codes, sampling, rng)
    }

    /// `n` valid samples; each is redrawn up to `retries` times when invalid.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        n: usize,
        cond: &Condition,
        sampling: Sampling,
        retries: usize,
        rng: &mut R,
    ) -> Result<Generation, ModelError> {
        let mut samples = Vec::with_capacity(n);
        let mut attempts = 0;
        for _ in 0..n {
            let mut ok = None;
            for _ in 0..=retries {
                attempts += 1;
                let d = self.sample(cond, sampling, rng)?;
                if d.is_valid() {
                    ok = Some(d);
                    break;
                }
            }
            samples.push(ok.ok_or(ModelError::GenerationExhausted { attempts: retries + 1 })?);
        }
        let validity_rate = if attempts == 0 { 1.0 } else { n as f64 / attempts as f64 };
        Ok(Generation { samples, attempts, validity_rate })
    }

    /// Blends pre-quantization codes of `a` and `b` at `steps` evenly spaced
    /// `t ∈ [0, 1]`, quantizes and decodes greedily.
    pub fn interpolate(&self, a: &CadModel, b: &CadModel, steps: usize) -> Result<Vec<Decoded>, ModelError> {
        let (la, _) = self.encode(a)?;
        let (lb, _) = self.encode(b)?;
        (0..steps)
            .map(|i| {
                let t = if steps > 1 { i as f64 / (steps - 1) as f64 } else { 0.0 };
                self.decode(&self.quantize(&la.lerp(&lb, t)), Sampling::Greedy, &mut stream(0, 0))
            })
            .collect()
    }

    /// Greedy decode of a tuple taking the groups marked in `from_a` from
    /// `a` and the rest from `b`.
    pub fn mix(&self, a: &CadModel, b: &CadModel, from_a: Given) -> Result<Decoded, ModelError> {
        let (_, ca) = self.encode(a)?;
        let (_, cb) = self.encode(b)?;
        self.decode(&mix_codes(&ca, &cb, from_a), Sampling::Greedy, &mut stream(0, 0))
    }

    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        std::fs::create_dir_all(dir)?;
        let c = &self.config;
        let manifest = Manifest {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            class_layout: CLASS_LAYOUT.into(),
            codes: [c.topology_codes, c.geometry_codes, c.extrude_codes],
            books: [c.topology_book, c.geometry_book, c.extrude_book],
            selectors: self.selectors.iter().map(|s| s.given.name()).collect(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| ModelError::Manifest(e.to_string()))?;
        std::fs::write(dir.join("manifest.json"), text + "\n")?;
        std::fs::write(dir.join("config.txt"), to_flat(c))?;
        for (branch, file) in [(&self.sketch, "sketch.skex"), (&self.extrude, "extrude.skex")] {
            let mut w = BufWriter::new(File::create(dir.join(file))?);
            branch.save(&mut w)?;
            w.flush()?;
        }
        for s in &self.selectors {
            let mut w = BufWriter::new(File::create(dir.join(format!("selector_{}.skex", s.given.name())))?);
            s.store.save(&mut w)?;
            w.flush()?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| ModelError::Manifest(e.to_string()))?;
        if manifest.format != FORMAT || manifest.version != FORMAT_VERSION {
            return Err(ModelError::Manifest(format!("unsupported format {} v{}", manifest.format, manifest.version)));
        }
        if manifest.class_layout != CLASS_LAYOUT {
            return Err(ModelError::Manifest(format!("class layout {} does not match {CLASS_LAYOUT}", manifest.class_layout)));
        }
        let config: ModelConfig = from_flat(&std::fs::read_to_string(dir.join("config.txt"))?)?;
        let c = &config;
        if manifest.codes != [c.topology_codes, c.geometry_codes, c.extrude_codes]
            || manifest.books != [c.topology_book, c.geometry_book, c.extrude_book]
        {
            return Err(ModelError::Manifest("code counts or codebook sizes disagree with config.txt".into()));
        }
        let mut m = Self::new(config, 0)?;
        let read = |file: &str| -> Result<Vec<(String, Tensor)>, ModelError> {
            Ok(read_tensors(BufReader::new(File::open(dir.join(file))?))?)
        };
        m.sketch.load(&read("sketch.skex")?)?;
        m.extrude.load(&read("extrude.skex")?)?;
        m.selectors.retain(|s| manifest.selectors.contains(&s.given.name()));
        for s in &mut m.selectors {
            s.store.load_from(&read(&format!("selector_{}.skex", s.given.name()))?)?;
        }
        Ok(m)
    }
}

/// Tuple with the groups marked in `from_a` copied from `a`, the rest from `b`.
pub fn mix_codes(a: &CodeTuple, b: &CodeTuple, from_a: Given) -> CodeTuple {
    let mut out = CodeTuple::default();
    for g in CodeGroup::ALL {
        let src = if from_a.has(g) { a } else { b };
        *out.group_mut(g) = src.group(g).to_vec();
    }
    out
}
