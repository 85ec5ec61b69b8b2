use rand::Rng;

use crate::tensor::{argmax, softmax_in_place};

/// Indices kept by nucleus filtering of `probs` at mass `p`, in descending
/// probability order (ties broken by lower index), with their renormalized
/// probabilities.
pub fn nucleus_support(probs: &[f64], p: f64) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for i in order {
        kept.push(i);
        mass += probs[i];
        if mass >= p {
            break;
        }
    }
    kept.into_iter().map(|i| (i, probs[i] / mass)).collect()
}

/// Draws a class from `logits` by nucleus (top-p) sampling at `temperature`.
/// Entries at negative infinity are never drawn. A temperature of zero
/// returns the argmax.
pub fn nucleus_sample<R: Rng + ?Sized>(logits: &[f64], p: f64, temperature: f64, rng: &mut R) -> usize {
    assert!(!logits.is_empty(), "nucleus_sample of no classes");
    if temperature <= 0.0 {
        return argmax(logits);
    }
    let mut probs: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    softmax_in_place(&mut probs);
    let support = nucleus_support(&probs, p);
    if support.is_empty() {
        return argmax(logits);
    }
    let mut u = rng.random::<f64>();
    for &(i, q) in &support {
        if u < q {
            return i;
        }
        u -= q;
    }
    support[support.len() - 1].0
}
