use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use skexcraft_core::dataset::{augment, NoiseConfig};
use skexcraft_core::seq::SubSeq;
use skexcraft_nn::{Adam, AdamConfig, Grads, Graph, Tensor};

use crate::branch::{Branch, BranchKind, BranchSample};
use crate::codebook::perplexity;
use crate::{ModelError, TrainConfig};

/// Summary of one training epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub cross_entropy: f64,
    /// Teacher-forced next-token accuracy.
    pub accuracy: f64,
    pub quantized: bool,
    /// Per-codebook usage perplexity over the epoch (0 before quantization).
    pub perplexity: Vec<f64>,
    pub reseeded: usize,
}

pub(crate) fn adam_for(cfg: &TrainConfig) -> Adam {
    Adam::new(AdamConfig { lr: cfg.lr, warmup: cfg.warmup_steps, clip: Some(cfg.clip), ..AdamConfig::default() })
}

/// Stream of a seeded generator reserved for one consumer.
pub(crate) fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn noisy(branch: &Branch, s: &BranchSample, noise: f64, rng: &mut impl Rng) -> BranchSample {
    if branch.kind != BranchKind::Sketch || noise <= 0.0 {
        return s.clone();
    }
    let cfg = NoiseConfig { minus: noise, zero: 1.0 - 2.0 * noise, plus: noise };
    let geom = SubSeq::new(skexcraft_core::seq::ViewKind::Geometry, s.target.clone());
    match augment(&geom, &cfg, rng) {
        Some(g) => BranchSample { inputs: vec![s.inputs[0].clone(), g.classes.clone()], target: g.classes },
        None => s.clone(),
    }
}

/// Trains one branch with teacher forcing, commitment losses and EMA
/// codebooks. Quantization is bypassed for the first `quantize_after`
/// epochs; codes unused over an epoch are reseeded from that epoch's
/// encoder outputs.
pub fn train_branch(
    branch: &mut Branch,
    data: &[BranchSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>, ModelError> {
    for s in data {
        branch.check_sample(s)?;
    }
    if data.is_empty() || cfg.batch == 0 {
        return Err(ModelError::Config("training needs data and a positive batch size".into()));
    }
    let tag = match branch.kind {
        BranchKind::Sketch => 1,
        BranchKind::Extrude => 2,
    };
    let mut rng = stream(cfg.seed, tag);
    let mut dropout_rng = stream(cfg.seed, tag + 16);
    let mut adam = adam_for(cfg);
    let dropout = branch.dropout;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let quantize = epoch >= cfg.quantize_after;
        order.shuffle(&mut rng);
        let books = branch.books.len();
        let mut pool: Vec<Vec<f64>> = vec![Vec::new(); books];
        let mut usage: Vec<Vec<usize>> = branch.books.iter().map(|b| vec![0; b.size()]).collect();
        let (mut loss_sum, mut ce_sum, mut correct, mut tokens) = (0.0, 0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch) {
            let mut grads = Grads::for_store(&branch.store);
            let mut batch_z: Vec<Vec<f64>> = vec![Vec::new(); books];
            let mut batch_idx: Vec<Vec<usize>> = vec![Vec::new(); books];
            for &i in chunk {
                let sample = noisy(branch, &data[i], cfg.noise, &mut rng);
                let g = if dropout > 0.0 {
                    Graph::with_dropout(&branch.store, ChaCha8Rng::seed_from_u64(dropout_rng.random()))
                } else {
                    Graph::new(&branch.store)
                };
                let f = branch.forward(&g, &sample, quantize);
                let lv = g.value(f.loss).item();
                if !lv.is_finite() {
                    return Err(ModelError::DivergedLoss { epoch });
                }
                g.backward_into(f.loss, &mut grads);
                loss_sum += lv;
                ce_sum += f.cross_entropy;
                correct += f.correct;
                tokens += f.tokens;
                for k in 0..books {
                    pool[k].extend_from_slice(&f.latents[k].data);
                    batch_z[k].extend_from_slice(&f.latents[k].data);
                    if quantize {
                        for &j in &f.indices[k] {
                            usage[k][j] += 1;
                        }
                        batch_idx[k].extend_from_slice(&f.indices[k]);
                    }
                }
            }
            grads.scale(1.0 / chunk.len() as f64);
            adam.step(&mut branch.store, &mut grads);
            if quantize {
                for (k, book) in branch.books.iter_mut().enumerate() {
                    let d = book.dim();
                    let z = Tensor::from_vec(batch_z[k].len() / d, d, std::mem::take(&mut batch_z[k]));
                    book.ema_update(&z, &batch_idx[k]);
                }
            }
        }
        let mut reseeded = 0;
        for (k, book) in branch.books.iter_mut().enumerate() {
            let d = book.dim();
            let z = Tensor::from_vec(pool[k].len() / d, d, std::mem::take(&mut pool[k]));
            reseeded += book.reseed_dead(&z, &mut rng);
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / data.len() as f64,
            cross_entropy: ce_sum / data.len() as f64,
            accuracy: correct as f64 / tokens.max(1) as f64,
            quantized: quantize,
            perplexity: usage.iter().map(|u| perplexity(u)).collect(),
            reseeded,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}
