//! Disentanglement probe: which code group was held fixed across a set of
//! generated pairs, predicted from re-encoded latent differences.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use skexcraft_core::metrics::kfold_accuracy;
use skexcraft_core::seq::{infer_topology, SubSeq, ViewKind};

use crate::branch::Sampling;
use crate::selector::{CodeGroup, Condition};
use crate::skexgen::{Latents, SkexGen};
use crate::train::stream;
use crate::ModelError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Labelled examples, spread evenly over the three groups.
    pub points: usize,
    /// Generated pairs averaged into one example.
    pub pairs: usize,
    pub nucleus_p: f64,
    pub folds: usize,
    pub seed: u64,
    pub shuffle_labels: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { points: 150, pairs: 5, nucleus_p: 0.9, folds: 5, seed: 0, shuffle_labels: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub points: usize,
    pub features: usize,
    pub decodes: usize,
}

/// Re-encodes decoded token sequences; the topology view is derived from
/// the geometry view.
fn reencode(m: &SkexGen, geometry: &[u16], extrude: &[u16]) -> Option<Latents> {
    let topo = infer_topology(&SubSeq::new(ViewKind::Geometry, geometry.to_vec())).ok()?;
    let mut s = m.sketch.encode(&[topo.classes, geometry.to_vec()]).into_iter();
    let e = m.extrude.encode(&[extrude.to_vec()]).into_iter().next()?;
    Some(Latents { topology: s.next()?, geometry: s.next()?, extrude: e })
}

/// For each example one group is fixed: every pair draws two tuples from
/// the unconditional selector and copies the fixed group from the first
/// into the second. Features are per-slot mean absolute differences of the
/// re-encoded latents, averaged over the pairs; accuracy is k-fold held-out
/// accuracy of a softmax classifier.
pub fn disentanglement_probe(m: &SkexGen, cfg: &ProbeConfig) -> Result<ProbeReport, ModelError> {
    if cfg.points < cfg.folds || cfg.pairs == 0 || cfg.folds < 2 {
        return Err(ModelError::Config("probe needs pairs, two or more folds and at least one point per fold".into()));
    }
    let mut rng = stream(cfg.seed, 96);
    let sampling = Sampling::Nucleus { p: cfg.nucleus_p, temperature: 1.0 };
    let uncond = Condition::default();
    let slots = m.config.total_codes();
    let mut xs = Vec::with_capacity(cfg.points);
    let mut ys = Vec::with_capacity(cfg.points);
    let mut decodes = 0;
    for i in 0..cfg.points {
        let label = i % 3;
        let fixed = CodeGroup::ALL[label];
        let mut feat = vec![0.0; slots];
        let mut done = 0;
        let mut tries = 0;
        while done < cfg.pairs {
            tries += 1;
            if tries > 20 * cfg.pairs {
                return Err(ModelError::GenerationExhausted { attempts: tries - 1 });
            }
            let a = m.select_codes(&uncond, sampling, &mut rng)?;
            let mut b = m.select_codes(&uncond, sampling, &mut rng)?;
            *b.group_mut(fixed) = a.group(fixed).to_vec();
            let da = m.decode(&a, sampling, &mut rng)?;
            let db = m.decode(&b, sampling, &mut rng)?;
            decodes += 2;
            let (Some(la), Some(lb)) = (reencode(m, &da.geometry, &da.extrude), reencode(m, &db.geometry, &db.extrude)) else {
                continue;
            };
            let mut k = 0;
            for g in CodeGroup::ALL {
                let (ta, tb) = (la.get(g), lb.get(g));
                for r in 0..ta.rows {
                    let diff: f64 = ta.row(r).iter().zip(tb.row(r)).map(|(x, y)| (x - y).abs()).sum();
                    feat[k] += diff / ta.cols as f64;
                    k += 1;
                }
            }
            done += 1;
        }
        feat.iter_mut().for_each(|f| *f /= cfg.pairs as f64);
        xs.push(feat);
        ys.push(label);
    }
    if cfg.shuffle_labels {
        ys.shuffle(&mut rng);
    }
    let accuracy = kfold_accuracy(&xs, &ys, 3, cfg.folds, cfg.seed);
    Ok(ProbeReport { accuracy, points: cfg.points, features: slots, decodes })
}
