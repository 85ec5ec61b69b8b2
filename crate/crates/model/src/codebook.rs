use rand::Rng;
use skexcraft_nn::Tensor;

/// Smoothing constant for EMA cluster counts.
const LAPLACE_EPS: f64 = 1e-5;
/// Codes whose EMA count falls below this after an epoch are reseeded.
pub const DEAD_CODE_COUNT: f64 = 1e-3;

/// Vector-quantization codebook with exponential-moving-average updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    /// `N × d` code vectors.
    pub codes: Tensor,
    /// EMA cluster sizes `Nᵢ`.
    pub counts: Vec<f64>,
    /// EMA cluster sums `mᵢ` (`N × d`).
    pub sums: Tensor,
    pub decay: f64,
}

impl Codebook {
    /// Unit-scaled Gaussian initialization with zero EMA statistics.
    pub fn new<R: Rng + ?Sized>(size: usize, dim: usize, decay: f64, rng: &mut R) -> Self {
        Self::from_codes(Tensor::randn(size, dim, 1.0, rng), decay)
    }

    pub fn from_codes(codes: Tensor, decay: f64) -> Self {
        let (n, d) = (codes.rows, codes.cols);
        Self { codes, counts: vec![0.0; n], sums: Tensor::zeros(n, d), decay }
    }

    pub fn size(&self) -> usize {
        self.codes.rows
    }

    pub fn dim(&self) -> usize {
        self.codes.cols
    }

    /// Nearest code by squared Euclidean distance; lowest index on ties.
    pub fn quantize(&self, z: &[f64]) -> usize {
        assert_eq!(z.len(), self.dim(), "latent width mismatch");
        let mut best = (0, f64::INFINITY);
        for i in 0..self.size() {
            let d: f64 = self.codes.row(i).iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    pub fn quantize_rows(&self, z: &Tensor) -> Vec<usize> {
        (0..z.rows).map(|r| self.quantize(z.row(r))).collect()
    }

    /// Code vectors for `idx`, one row each.
    pub fn lookup(&self, idx: &[usize]) -> Tensor {
        let mut out = Tensor::zeros(idx.len(), self.dim());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.codes.row(i));
        }
        out
    }

    /// One EMA step over a batch of latents and their assignments:
    /// `Nᵢ ← γNᵢ + (1−γ)nᵢ`, `mᵢ ← γmᵢ + (1−γ)Σz`, `bᵢ = mᵢ / Ñᵢ` with
    /// Laplace-smoothed `Ñᵢ`. Codes never assigned keep their vector.
    pub fn ema_update(&mut self, z: &Tensor, idx: &[usize]) {
        assert_eq!(z.rows, idx.len(), "one assignment per latent");
        let (n, d) = (self.size(), self.dim());
        let mut hits = vec![0.0; n];
        let mut sums = Tensor::zeros(n, d);
        for (r, &i) in idx.iter().enumerate() {
            hits[i] += 1.0;
            for (a, b) in sums.row_mut(i).iter_mut().zip(z.row(r)) {
                *a += b;
            }
        }
        let g = self.decay;
        for i in 0..n {
            self.counts[i] = g * self.counts[i] + (1.0 - g) * hits[i];
            for (m, s) in self.sums.row_mut(i).iter_mut().zip(sums.row(i)) {
                *m = g * *m + (1.0 - g) * s;
            }
        }
        let total: f64 = self.counts.iter().sum();
        for i in 0..n {
            if self.counts[i] > 0.0 {
                let smoothed = (self.counts[i] + LAPLACE_EPS) / (total + n as f64 * LAPLACE_EPS) * total;
                for c in 0..d {
                    self.codes.data[i * d + c] = self.sums.data[i * d + c] / smoothed;
                }
            }
        }
    }

    /// Moves every code with EMA count below [`DEAD_CODE_COUNT`] onto a
    /// random row of `pool` and clears its statistics. Returns how many moved.
    pub fn reseed_dead<R: Rng + ?Sized>(&mut self, pool: &Tensor, rng: &mut R) -> usize {
        if pool.rows == 0 {
            return 0;
        }
        let mut moved = 0;
        for i in 0..self.size() {
            if self.counts[i] < DEAD_CODE_COUNT {
                let r = rng.random_range(0..pool.rows);
                self.codes.row_mut(i).copy_from_slice(pool.row(r));
                self.counts[i] = 0.0;
                self.sums.row_mut(i).iter_mut().for_each(|x| *x = 0.0);
                moved += 1;
            }
        }
        moved
    }
}

/// Codebook and commitment terms `(‖sg(z)−b‖², β‖z−sg(b)‖²)`, each averaged
/// over vector entries.
pub fn vq_losses(z: &[f64], b: &[f64], beta: f64) -> (f64, f64) {
    assert_eq!(z.len(), b.len());
    let mse = z.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / z.len().max(1) as f64;
    (mse, beta * mse)
}

/// `exp(H)` of the empirical code-usage distribution.
pub fn perplexity(usage: &[usize]) -> f64 {
    let total: usize = usage.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let h: f64 = usage
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    h.exp()
}
