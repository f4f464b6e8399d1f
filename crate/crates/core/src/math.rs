//! Pairwise-summation primitives and a small dense square-matrix type.
//!
//! All reductions over states go through [`pairwise_sum`] / [`pairwise_dot`]
//! so that accumulated round-off stays near `sqrt(log m) * eps` instead of
//! `m * eps`; the crate's 1e-12 consistency tolerances rely on this.

/// Below this length a straight loop is accurate enough and faster.
const PAIRWISE_LEAF: usize = 32;

/// Sum of a slice by recursive halving.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_LEAF {
        values.iter().sum()
    } else {
        let (lo, hi) = values.split_at(values.len() / 2);
        pairwise_sum(lo) + pairwise_sum(hi)
    }
}

/// Dot product of two equal-length slices by recursive halving.
pub fn pairwise_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.len() <= PAIRWISE_LEAF {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    } else {
        let mid = a.len() / 2;
        pairwise_dot(&a[..mid], &b[..mid]) + pairwise_dot(&a[mid..], &b[mid..])
    }
}

/// Sum of `f(i)` for `i in 0..n` by recursive halving, without materializing
/// the terms.
pub fn pairwise_sum_by<F: Fn(usize) -> f64>(n: usize, f: F) -> f64 {
    fn go<F: Fn(usize) -> f64>(lo: usize, hi: usize, f: &F) -> f64 {
        if hi - lo <= PAIRWISE_LEAF {
            (lo..hi).map(f).sum()
        } else {
            let mid = lo + (hi - lo) / 2;
            go(lo, mid, f) + go(mid, hi, f)
        }
    }
    go(0, n, &f)
}

/// Dense square matrix, row-major. Used for Markov kernels and propagators.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    n: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(n: usize) -> Self {
        Mat { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            assert_eq!(row.len(), n, "square matrix required");
            data.extend_from_slice(&row);
        }
        Mat { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn transpose(&self) -> Mat {
        let n = self.n;
        let mut t = Mat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                t.data[j * n + i] = self.data[i * n + j];
            }
        }
        t
    }

    /// Matrix product `self * other`, inner sums pairwise.
    pub fn mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let bt = other.transpose();
        let mut out = Mat::zeros(n);
        for i in 0..n {
            let a = self.row(i);
            for j in 0..n {
                out.data[i * n + j] = pairwise_dot(a, bt.row(j));
            }
        }
        out
    }

    /// Matrix-vector product `self * v`, row sums pairwise.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.n, v.len());
        (0..self.n).map(|i| pairwise_dot(self.row(i), v)).collect()
    }

    /// Scales row `i` by `d[i]`, i.e. `diag(d) * self`.
    pub fn scale_rows(&self, d: &[f64]) -> Mat {
        assert_eq!(self.n, d.len());
        let mut out = self.clone();
        for i in 0..self.n {
            for x in out.row_mut(i) {
                *x *= d[i];
            }
        }
        out
    }

    /// Scales column `j` by `d[j]`, i.e. `self * diag(d)`.
    pub fn scale_cols(&self, d: &[f64]) -> Mat {
        assert_eq!(self.n, d.len());
        let mut out = self.clone();
        for i in 0..self.n {
            let row = out.row_mut(i);
            for (j, x) in row.iter_mut().enumerate() {
                *x *= d[j];
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Symmetric eigendecomposition; returns eigenvalues sorted descending.
pub fn symmetric_eigenvalues(m: &Mat) -> Vec<f64> {
    let n = m.n();
    let dm = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (m.get(i, j) + m.get(j, i)));
    let mut ev: Vec<f64> = dm.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ev
}

/// Symmetric eigendecomposition with eigenvectors, sorted by descending
/// eigenvalue. Each returned vector is one eigenvector.
pub fn symmetric_eigen(m: &Mat) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.n();
    let dm = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (m.get(i, j) + m.get(j, i)));
    let decomp = nalgebra::SymmetricEigen::new(dm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| decomp.eigenvalues[b].partial_cmp(&decomp.eigenvalues[a]).unwrap());
    let values = order.iter().map(|&i| decomp.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| decomp.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (values, vectors)
}

/// Inverse square root of a symmetric positive-definite matrix.
pub fn sym_inv_sqrt(m: &Mat) -> Mat {
    let n = m.n();
    let (values, vectors) = symmetric_eigen(m);
    let mut out = Mat::zeros(n);
    for (ev, vec) in values.iter().zip(&vectors) {
        assert!(*ev > 0.0, "matrix must be positive definite, eigenvalue {ev}");
        let w = ev.sqrt().recip();
        for i in 0..n {
            for j in 0..n {
                out.set(i, j, out.get(i, j) + w * vec[i] * vec[j]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_inputs() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - naive).abs() < 1e-9);
        assert!((pairwise_sum_by(v.len(), |i| v[i]) - naive).abs() < 1e-12);
    }

    #[test]
    fn mat_mul_identity() {
        let a = Mat::from_rows(vec![vec![0.9, 0.1], vec![0.2, 0.8]]);
        let i = Mat::identity(2);
        assert_eq!(a.mul(&i), a);
        assert_eq!(i.mul(&a), a);
    }

    #[test]
    fn symmetric_eigenvalues_sorted() {
        let a = Mat::from_rows(vec![vec![2.0, 1.0], vec![1.0, 2.0]]);
        let ev = symmetric_eigenvalues(&a);
        assert!((ev[0] - 3.0).abs() < 1e-12);
        assert!((ev[1] - 1.0).abs() < 1e-12);
    }
}
