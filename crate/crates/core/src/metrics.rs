//! Generation-quality metrics over surface point clouds and token sequences.

use std::collections::{HashMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::P3;
use crate::seq::{dedup_key, CadModel, DedupKey};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("model set is empty")]
    EmptySet,
}

fn d2(a: P3, b: P3) -> f64 {
    let (x, y, z) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    x * x + y * y + z * z
}

/// Uniform bucket grid over a point cloud for exact nearest-neighbor queries.
#[derive(Clone, Debug)]
pub struct NnGrid {
    origin: P3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    points: Vec<P3>,
}

impl NnGrid {
    pub fn new(cloud: &[P3]) -> Result<Self, MetricError> {
        if cloud.is_empty() {
            return Err(MetricError::EmptyCloud);
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in cloud {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
        let per_axis = ((cloud.len() as f64 / 2.0).cbrt().ceil() as usize).max(1);
        let cell = if extent > 0.0 { extent / per_axis as f64 } else { 1.0 };
        let dims: [usize; 3] = std::array::from_fn(|k| (((hi[k] - lo[k]) / cell) as usize + 1).min(per_axis + 1));
        let mut grid = Self { origin: lo, cell, dims, starts: Vec::new(), points: Vec::with_capacity(cloud.len()) };
        let ncells = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; ncells + 1];
        let ids: Vec<usize> = cloud.iter().map(|&p| grid.flat(grid.cell_of(p))).collect();
        for &c in &ids {
            counts[c + 1] += 1;
        }
        for i in 0..ncells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        grid.points = vec![[0.0; 3]; cloud.len()];
        for (p, &c) in cloud.iter().zip(&ids) {
            grid.points[fill[c]] = *p;
            fill[c] += 1;
        }
        grid.starts = counts;
        Ok(grid)
    }

    fn cell_of(&self, p: P3) -> [usize; 3] {
        std::array::from_fn(|k| {
            let c = ((p[k] - self.origin[k]) / self.cell).floor();
            (c.max(0.0) as usize).min(self.dims[k] - 1)
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// Squared distance to the nearest point of the cloud.
    pub fn nearest_d2(&self, q: P3) -> f64 {
        let qc = self.cell_of(q);
        let mut best = f64::INFINITY;
        let maxk = self.dims.iter().max().copied().unwrap_or(1);
        for k in 0..=maxk {
            let lo: [isize; 3] = std::array::from_fn(|a| qc[a] as isize - k as isize);
            let hi: [isize; 3] = std::array::from_fn(|a| qc[a] as isize + k as isize);
            for z in lo[2].max(0)..=hi[2].min(self.dims[2] as isize - 1) {
                for y in lo[1].max(0)..=hi[1].min(self.dims[1] as isize - 1) {
                    let shell_row = z == lo[2] || z == hi[2] || y == lo[1] || y == hi[1];
                    let x_end = hi[0].min(self.dims[0] as isize - 1);
                    let mut visit = |x: isize| {
                        let c = self.flat([x as usize, y as usize, z as usize]);
                        for p in &self.points[self.starts[c]..self.starts[c + 1]] {
                            best = best.min(d2(*p, q));
                        }
                    };
                    if shell_row {
                        (lo[0].max(0)..=x_end).for_each(&mut visit);
                    } else {
                        // interior rows only touch the two shell ends
                        if lo[0] >= 0 {
                            visit(lo[0]);
                        }
                        if hi[0] != lo[0] && hi[0] <= x_end {
                            visit(hi[0]);
                        }
                    }
                }
            }
            // distance to the nearest face of the searched box that still has cells beyond it
            let mut bound = f64::INFINITY;
            for a in 0..3 {
                if lo[a] > 0 {
                    bound = bound.min(q[a] - (self.origin[a] + lo[a] as f64 * self.cell));
                }
                if hi[a] < self.dims[a] as isize - 1 {
                    bound = bound.min(self.origin[a] + (hi[a] + 1) as f64 * self.cell - q[a]);
                }
            }
            if bound == f64::INFINITY || (bound > 0.0 && best <= bound * bound) {
                break;
            }
        }
        best
    }
}

/// One-directional mean squared nearest-neighbor distance from `a` into `b`.
fn directed(a: &[P3], b: &NnGrid) -> f64 {
    a.iter().map(|&p| b.nearest_d2(p)).sum::<f64>() / a.len() as f64
}

/// Squared-distance Chamfer: mean over A of the nearest squared distance into B, plus the reverse.
pub fn chamfer(a: &[P3], b: &[P3]) -> Result<f64, MetricError> {
    Ok(chamfer_grids(a, &NnGrid::new(a)?, b, &NnGrid::new(b)?))
}

fn chamfer_grids(a: &[P3], ga: &NnGrid, b: &[P3], gb: &NnGrid) -> f64 {
    directed(a, gb) + directed(b, ga)
}

/// O(|A|·|B|) reference implementation of [`chamfer`].
pub fn chamfer_brute(a: &[P3], b: &[P3]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptyCloud);
    }
    let dir = |x: &[P3], y: &[P3]| {
        x.iter().map(|&p| y.iter().map(|&q| d2(q, p)).fold(f64::INFINITY, f64::min)).sum::<f64>() / x.len() as f64
    };
    Ok(dir(a, b) + dir(b, a))
}

/// Chamfer distances `d[g][r]` between every generated and reference cloud.
pub fn chamfer_matrix(gen: &[Vec<P3>], reference: &[Vec<P3>]) -> Result<Vec<Vec<f64>>, MetricError> {
    if gen.is_empty() || reference.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let gg = gen.iter().map(|c| NnGrid::new(c)).collect::<Result<Vec<_>, _>>()?;
    let rg = reference.iter().map(|c| NnGrid::new(c)).collect::<Result<Vec<_>, _>>()?;
    Ok(gen
        .iter()
        .zip(&gg)
        .map(|(g, gi)| reference.iter().zip(&rg).map(|(r, ri)| chamfer_grids(g, gi, r, ri)).collect())
        .collect())
}

/// Percentage of reference models that are the nearest match of some generated model.
pub fn cov(dist: &[Vec<f64>]) -> Result<f64, MetricError> {
    let n_ref = dist.first().map_or(0, Vec::len);
    if n_ref == 0 {
        return Err(MetricError::EmptySet);
    }
    let matched: HashSet<usize> = dist
        .iter()
        .map(|row| row.iter().enumerate().fold((0, f64::INFINITY), |b, (i, &d)| if d < b.1 { (i, d) } else { b }).0)
        .collect();
    Ok(100.0 * matched.len() as f64 / n_ref as f64)
}

/// Mean over reference models of the distance to the closest generated model.
pub fn mmd(dist: &[Vec<f64>]) -> Result<f64, MetricError> {
    let n_ref = dist.first().map_or(0, Vec::len);
    if n_ref == 0 {
        return Err(MetricError::EmptySet);
    }
    let total: f64 = (0..n_ref).map(|r| dist.iter().map(|row| row[r]).fold(f64::INFINITY, f64::min)).sum();
    Ok(total / n_ref as f64)
}

/// Centers a cloud's bounding box at (0.5, 0.5, 0.5) and scales it uniformly to fit the unit cube.
pub fn normalize_unit_cube(cloud: &[P3]) -> Vec<P3> {
    if cloud.is_empty() {
        return Vec::new();
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in cloud {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let s = if extent > 0.0 { 1.0 / extent } else { 1.0 };
    cloud.iter().map(|p| std::array::from_fn(|k| 0.5 + (p[k] - 0.5 * (lo[k] + hi[k])) * s)).collect()
}

/// Normalized occupancy histogram of all points on a `res³` grid over the unit cube.
pub fn occupancy(clouds: &[Vec<P3>], res: usize) -> Vec<f64> {
    let mut h = vec![0.0; res * res * res];
    let mut n = 0usize;
    let bin = |v: f64| ((v * res as f64).floor().max(0.0) as usize).min(res - 1);
    for c in clouds {
        for p in c {
            h[(bin(p[2]) * res + bin(p[1])) * res + bin(p[0])] += 1.0;
            n += 1;
        }
    }
    if n > 0 {
        h.iter_mut().for_each(|x| *x /= n as f64);
    }
    h
}

fn kl(p: &[f64], m: &[f64]) -> f64 {
    p.iter().zip(m).filter(|(&a, _)| a > 0.0).map(|(&a, &b)| a * (a / b).ln()).sum()
}

/// Jensen-Shannon divergence (natural log) between two distributions.
pub fn jsd_hist(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * kl(p, &m) + 0.5 * kl(q, &m)).max(0.0)
}

/// JSD between the marginal point distributions of two sets of unit-cube clouds.
pub fn jsd(gen: &[Vec<P3>], reference: &[Vec<P3>], res: usize) -> f64 {
    jsd_hist(&occupancy(gen, res), &occupancy(reference, res))
}

/// Percentage of generated models whose sequence occurs exactly once among them.
pub fn unique(gen: &[CadModel]) -> Result<f64, MetricError> {
    if gen.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let keys: Vec<DedupKey> = gen.iter().map(dedup_key).collect();
    let mut counts: HashMap<DedupKey, usize> = HashMap::new();
    for k in &keys {
        *counts.entry(*k).or_default() += 1;
    }
    Ok(100.0 * keys.iter().filter(|k| counts[k] == 1).count() as f64 / gen.len() as f64)
}

/// Percentage of generated models absent from the training set.
pub fn novel(gen: &[CadModel], train: &[CadModel]) -> Result<f64, MetricError> {
    if gen.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let seen: HashSet<DedupKey> = train.iter().map(dedup_key).collect();
    Ok(100.0 * gen.iter().filter(|m| !seen.contains(&dedup_key(m))).count() as f64 / gen.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cov_percent: f64,
    pub mmd: f64,
    pub jsd: f64,
    pub unique_percent: f64,
    pub novel_percent: f64,
    pub validity_percent: f64,
    pub n_generated: usize,
    pub n_valid: usize,
    pub n_sampled: usize,
    pub n_reference: usize,
    pub n_train: usize,
    pub points_per_model: usize,
    pub grid_resolution: usize,
    pub chamfer: String,
}

impl MetricReport {
    /// Aligned two-line table in the column order COV, MMD, JSD, Unique, Novel, Valid.
    pub fn to_table(&self) -> String {
        let head = ["COV%", "MMD", "JSD", "Unique%", "Novel%", "Valid%"];
        let vals = [
            format!("{:.2}", self.cov_percent),
            format!("{:.4}", self.mmd),
            format!("{:.4}", self.jsd),
            format!("{:.2}", self.unique_percent),
            format!("{:.2}", self.novel_percent),
            format!("{:.2}", self.validity_percent),
        ];
        let w: Vec<usize> = head.iter().zip(&vals).map(|(h, v)| h.len().max(v.len())).collect();
        let row = |cells: Vec<String>| {
            cells.iter().zip(&w).map(|(c, &w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
        };
        format!(
            "{}\n{}\n",
            row(head.iter().map(|s| s.to_string()).collect()),
            row(vals.to_vec())
        )
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}

/// Inputs of a full metric evaluation.
#[derive(Clone, Debug)]
pub struct EvalInput<'a> {
    /// Every generation attempt, `None` where decoding failed.
    pub generated: &'a [Option<CadModel>],
    /// Unit-cube clouds of the valid generated models that could be sampled.
    pub gen_clouds: &'a [Vec<P3>],
    pub ref_clouds: &'a [Vec<P3>],
    pub train: &'a [CadModel],
    pub points_per_model: usize,
    pub grid_resolution: usize,
}

pub fn report(input: &EvalInput<'_>) -> Result<MetricReport, MetricError> {
    let valid: Vec<CadModel> = input.generated.iter().flatten().cloned().collect();
    let dist = chamfer_matrix(input.gen_clouds, input.ref_clouds)?;
    Ok(MetricReport {
        cov_percent: cov(&dist)?,
        mmd: mmd(&dist)?,
        jsd: jsd(input.gen_clouds, input.ref_clouds, input.grid_resolution),
        unique_percent: unique(&valid)?,
        novel_percent: novel(&valid, input.train)?,
        validity_percent: 100.0 * valid.len() as f64 / input.generated.len().max(1) as f64,
        n_generated: input.generated.len(),
        n_valid: valid.len(),
        n_sampled: input.gen_clouds.len(),
        n_reference: input.ref_clouds.len(),
        n_train: input.train.len(),
        points_per_model: input.points_per_model,
        grid_resolution: input.grid_resolution,
        chamfer: "squared".into(),
    })
}

/// Multinomial logistic regression on standardized features.
#[derive(Clone, Debug)]
pub struct SoftmaxClassifier {
    mean: Vec<f64>,
    std: Vec<f64>,
    /// `classes × (features + 1)`, bias last.
    weights: Vec<Vec<f64>>,
}

impl SoftmaxClassifier {
    pub fn fit(x: &[Vec<f64>], y: &[usize], classes: usize, epochs: usize, lr: f64, l2: f64) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let n = x.len().max(1) as f64;
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std: Vec<f64> = (0..d)
            .map(|j| {
                let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 1e-24 { v.sqrt() } else { 1.0 }
            })
            .collect();
        let mut model = Self { mean, std, weights: vec![vec![0.0; d + 1]; classes] };
        let xs: Vec<Vec<f64>> = x.iter().map(|r| model.standardize(r)).collect();
        for _ in 0..epochs {
            let mut grad = vec![vec![0.0; d + 1]; classes];
            for (row, &label) in xs.iter().zip(y) {
                let p = model.probs_std(row);
                for c in 0..classes {
                    let e = p[c] - f64::from(u8::from(c == label));
                    for j in 0..=d {
                        grad[c][j] += e * row[j];
                    }
                }
            }
            for c in 0..classes {
                for j in 0..=d {
                    let reg = if j < d { l2 * model.weights[c][j] } else { 0.0 };
                    model.weights[c][j] -= lr * (grad[c][j] / n + reg);
                }
            }
        }
        model
    }

    fn standardize(&self, r: &[f64]) -> Vec<f64> {
        let mut v: Vec<f64> = r.iter().zip(self.mean.iter().zip(&self.std)).map(|(x, (m, s))| (x - m) / s).collect();
        v.push(1.0);
        v
    }

    fn probs_std(&self, row: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self.weights.iter().map(|w| w.iter().zip(row).map(|(a, b)| a * b).sum()).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    pub fn predict(&self, r: &[f64]) -> usize {
        let p = self.probs_std(&self.standardize(r));
        (0..p.len()).fold(0, |b, c| if p[c] > p[b] { c } else { b })
    }
}

/// Mean held-out accuracy of a softmax classifier under seeded k-fold cross-validation.
pub fn kfold_accuracy(x: &[Vec<f64>], y: &[usize], classes: usize, folds: usize, seed: u64) -> f64 {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut correct = 0usize;
    for f in 0..folds {
        let test: Vec<usize> = idx.iter().copied().skip(f).step_by(folds).collect();
        let test_set: HashSet<usize> = test.iter().copied().collect();
        let train: Vec<usize> = idx.iter().copied().filter(|i| !test_set.contains(i)).collect();
        let tx: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
        let ty: Vec<usize> = train.iter().map(|&i| y[i]).collect();
        let clf = SoftmaxClassifier::fit(&tx, &ty, classes, 300, 0.5, 1e-3);
        correct += test.iter().filter(|&&i| clf.predict(&x[i]) == y[i]).count();
    }
    correct as f64 / n.max(1) as f64
}
