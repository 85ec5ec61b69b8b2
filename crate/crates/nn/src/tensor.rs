use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Dense row-major matrix. Vectors are `1 × n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, v: f64) -> Self {
        Self { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data does not match {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn row_vec(data: Vec<f64>) -> Self {
        Self { rows: 1, cols: data.len(), data }
    }

    pub fn scalar(v: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn randn<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let n = Normal::new(0.0, std).expect("finite std");
        Self { rows, cols, data: (0..rows * cols).map(|_| n.sample(rng)).collect() }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a `1 × 1` tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a {}x{} tensor", self.rows, self.cols);
        self.data[0]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn argmax_row(&self, r: usize) -> usize {
        argmax(self.row(r))
    }

    pub fn rows_slice(&self, start: usize, len: usize) -> Tensor {
        Tensor::from_vec(len, self.cols, self.data[start * self.cols..(start + len) * self.cols].to_vec())
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Row-wise softmax in place. Rows of all `-inf` stay all zero.
pub fn softmax_rows(t: &mut Tensor) {
    let cols = t.cols;
    for row in t.data.chunks_mut(cols) {
        softmax_in_place(row);
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        row.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut s = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    row.iter_mut().for_each(|x| *x /= s);
}

/// Strided view used by [`gemm`].
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> MatRef<'a> {
    pub fn of(t: &'a Tensor) -> Self {
        Self { data: &t.data, offset: 0, rows: t.rows, cols: t.cols, rs: t.cols as isize, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, ..self }
    }

    /// Columns `start..start + n`.
    pub fn cols(self, start: usize, n: usize) -> Self {
        Self { offset: self.offset + (start as isize * self.cs) as usize, cols: n, ..self }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset as isize + (self.rows as isize - 1) * self.rs + (self.cols as isize - 1) * self.cs;
            assert!(last >= 0 && (last as usize) < self.data.len(), "strided view out of bounds");
        }
    }
}

/// `C[c_off..] = alpha · A·B + beta · C` with C row-major of width `c_rs`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64], c_off: usize, c_rs: usize, c_cs: usize) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    a.check();
    b.check();
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    let last = c_off + (m - 1) * c_rs + (n - 1) * c_cs;
    assert!(last < c.len(), "output view out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[c_off + i * c_rs + j * c_cs] *= beta;
            }
        }
        return;
    }
    // SAFETY: every index touched by the kernel was bounds-checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs,
            a.cs,
            b.data.as_ptr().add(b.offset),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr().add(c_off),
            c_rs as isize,
            c_cs as isize,
        );
    }
}

/// Plain `A·B`.
pub fn matmul(a: MatRef<'_>, b: MatRef<'_>) -> Tensor {
    let mut out = Tensor::zeros(a.rows, b.cols);
    let n = out.cols;
    gemm(1.0, a, b, 0.0, &mut out.data, 0, n, 1);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                out.data[i * b.cols + j] = (0..a.cols).map(|k| a.at(i, k) * b.at(k, j)).sum();
            }
        }
        out
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let a = Tensor::randn(5, 7, 1.0, &mut rng);
        let b = Tensor::randn(7, 3, 1.0, &mut rng);
        let c = matmul(MatRef::of(&a), MatRef::of(&b));
        let want = naive(&a, &b);
        for (x, y) in c.data.iter().zip(&want.data) {
            assert!((x - y).abs() < 1e-12);
        }
        let bt = b.transpose();
        let c2 = matmul(MatRef::of(&a), MatRef::of(&bt).t());
        assert_eq!(c2.shape(), [5, 3]);
        for (x, y) in c2.data.iter().zip(&want.data) {
            assert!((x - y).abs() < 1e-12);
        }
        // column block of A times row block of B
        let sub = matmul(MatRef::of(&a).cols(2, 3), MatRef::of(&b.rows_slice(2, 3)));
        let want_sub = naive(
            &Tensor::from_vec(5, 3, (0..5).flat_map(|i| a.row(i)[2..5].to_vec()).collect()),
            &b.rows_slice(2, 3),
        );
        for (x, y) in sub.data.iter().zip(&want_sub.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tensor::from_vec(2, 2, vec![0.0, 0.0, 1000.0, -1000.0]);
        softmax_rows(&mut t);
        assert_eq!(t.row(0), &[0.5, 0.5]);
        assert!((t.row(1).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut masked = Tensor::row_vec(vec![f64::NEG_INFINITY, 0.0]);
        softmax_rows(&mut masked);
        assert_eq!(masked.data, vec![0.0, 1.0]);
    }

}
