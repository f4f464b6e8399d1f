//! Finite state spaces, probability measures, functions on states, and
//! Markov kernels as row-stochastic matrices.
//!
//! Everything is immutable after construction and validated eagerly:
//! measures must sum to one within 1e-12, kernel rows likewise, functions
//! must be finite. Integrals are plain weighted sums evaluated with pairwise
//! summation.

use crate::error::{Error, Result};
use crate::math::{pairwise_dot, pairwise_sum_by, Mat};

const NORMALIZATION_TOL: f64 = 1e-12;

/// A finite state space with `size` states, optionally labelled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    size: usize,
    labels: Option<Vec<String>>,
}

impl StateSpace {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidArgument("state space must have at least one state".into()));
        }
        Ok(StateSpace { size, labels: None })
    }

    pub fn with_labels(labels: Vec<String>) -> Result<Self> {
        let mut space = StateSpace::new(labels.len())?;
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(Error::InvalidArgument(format!("duplicate state label {a:?}")));
            }
        }
        space.labels = Some(labels);
        Ok(space)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }
}

/// A probability measure as a vector of non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMeasure {
    weights: Vec<f64>,
}

impl ProbMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
            if w < 0.0 {
                return Err(Error::NegativeWeight { index: i, value: w });
            }
        }
        let sum = pairwise_sum_by(weights.len(), |i| weights[i]);
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized { sum });
        }
        Ok(ProbMeasure { weights })
    }

    /// Normalizes a non-negative, not-all-zero weight vector exactly.
    pub fn from_unnormalized(mut weights: Vec<f64>) -> Result<Self> {
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
            if w < 0.0 {
                return Err(Error::NegativeWeight { index: i, value: w });
            }
        }
        let sum = pairwise_sum_by(weights.len(), |i| weights[i]);
        if sum <= 0.0 {
            return Err(Error::DegenerateWeights);
        }
        for w in &mut weights {
            *w /= sum;
        }
        // One more exact rescale so the pairwise sum is 1 to full precision.
        let sum2 = pairwise_sum_by(weights.len(), |i| weights[i]);
        for w in &mut weights {
            *w /= sum2;
        }
        ProbMeasure::new(weights)
    }

    pub fn uniform(size: usize) -> Self {
        ProbMeasure { weights: vec![1.0 / size as f64; size] }
    }

    pub fn point_mass(size: usize, state: usize) -> Self {
        let mut weights = vec![0.0; size];
        weights[state] = 1.0;
        ProbMeasure { weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, state: usize) -> f64 {
        self.weights[state]
    }

    /// The integral `mu(f)`.
    pub fn integrate(&self, f: &StateFunction) -> Result<f64> {
        check_dims(self.len(), f.len())?;
        Ok(pairwise_dot(&self.weights, f.values()))
    }

    /// The variance `mu(f^2) - mu(f)^2`, clamped to be non-negative.
    /// Evaluated in centered form so large constant offsets do not cancel.
    pub fn variance(&self, f: &StateFunction) -> Result<f64> {
        check_dims(self.len(), f.len())?;
        let mean = pairwise_dot(&self.weights, f.values());
        let second = pairwise_sum_by(self.len(), |i| {
            let dev = f.values()[i] - mean;
            self.weights[i] * dev * dev
        });
        Ok(second.max(0.0))
    }

    /// The weighted norm `mu(|f|^p)^(1/p)` for `p >= 1`.
    pub fn lp_norm(&self, f: &StateFunction, p: f64) -> Result<f64> {
        check_dims(self.len(), f.len())?;
        if p < 1.0 || p.is_nan() {
            return Err(Error::InvalidArgument(format!("lp_norm requires p >= 1, got {p}")));
        }
        let moment = pairwise_sum_by(self.len(), |i| self.weights[i] * f.values()[i].abs().powf(p));
        Ok(moment.powf(1.0 / p))
    }
}

/// A real-valued function on a finite state space, stored as its value vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFunction {
    values: Vec<f64>,
}

impl StateFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
        }
        Ok(StateFunction { values })
    }

    pub fn constant(size: usize, value: f64) -> Self {
        StateFunction { values: vec![value; size] }
    }

    pub fn indicator(size: usize, state: usize) -> Self {
        let mut values = vec![0.0; size];
        values[state] = 1.0;
        StateFunction { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, state: usize) -> f64 {
        self.values[state]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> StateFunction {
        StateFunction { values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Entrywise square, used for the `f^2` terms of the variance identities.
    pub fn squared(&self) -> StateFunction {
        self.map(|v| v * v)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn add_scalar(&self, c: f64) -> StateFunction {
        self.map(|v| v + c)
    }
}

/// A Markov transition kernel as a dense row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovKernel {
    matrix: Mat,
}

impl MarkovKernel {
    pub fn new(matrix: Mat) -> Result<Self> {
        for i in 0..matrix.n() {
            let row = matrix.row(i);
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite { index: i * matrix.n() + j });
                }
                if v < 0.0 {
                    return Err(Error::NegativeWeight { index: i * matrix.n() + j, value: v });
                }
            }
            let sum = pairwise_dot(row, &vec![1.0; row.len()]);
            if (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::NotStochastic { row: i, sum });
            }
        }
        Ok(MarkovKernel { matrix })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        MarkovKernel::new(Mat::from_rows(rows))
    }

    pub fn identity(size: usize) -> Self {
        MarkovKernel { matrix: Mat::identity(size) }
    }

    pub fn size(&self) -> usize {
        self.matrix.n()
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn row(&self, state: usize) -> &[f64] {
        self.matrix.row(state)
    }

    pub fn entry(&self, from: usize, to: usize) -> f64 {
        self.matrix.get(from, to)
    }

    /// The function `x -> sum_y K(x,y) f(y)`.
    pub fn apply(&self, f: &StateFunction) -> Result<StateFunction> {
        check_dims(self.size(), f.len())?;
        StateFunction::new(self.matrix.matvec(f.values()))
    }

    /// `K^t` by repeated squaring. `t = 0` returns the identity.
    ///
    /// Row sums drift by a few ulps per squaring; drift beyond 1e-12 is
    /// renormalized and logged rather than treated as an error.
    pub fn power(&self, t: usize) -> MarkovKernel {
        let n = self.size();
        let mut result = Mat::identity(n);
        let mut base = self.matrix.clone();
        let mut exp = t;
        while exp > 0 {
            if exp & 1 == 1 {
                result = result.mul(&base);
            }
            exp >>= 1;
            if exp > 0 {
                base = base.mul(&base);
            }
        }
        let mut max_drift = 0.0f64;
        for i in 0..n {
            let sum = pairwise_dot(result.row(i), &vec![1.0; n]);
            max_drift = max_drift.max((sum - 1.0).abs());
        }
        if max_drift > NORMALIZATION_TOL {
            log::warn!("kernel power t={t}: row-sum drift {max_drift:e}, renormalizing rows");
            for i in 0..n {
                let sum: f64 = result.row(i).iter().sum();
                for v in result.row_mut(i) {
                    *v /= sum;
                }
            }
        }
        MarkovKernel { matrix: result }
    }

    /// Whether `mu K = mu` within `tol`, checked column by column.
    pub fn is_stationary_for(&self, mu: &ProbMeasure, tol: f64) -> Result<bool> {
        check_dims(self.size(), mu.len())?;
        let n = self.size();
        let mut max_err = 0.0f64;
        for y in 0..n {
            let pushed = pairwise_sum_by(n, |x| mu.weight(x) * self.entry(x, y));
            max_err = max_err.max((pushed - mu.weight(y)).abs());
        }
        Ok(max_err <= tol)
    }

    /// Whether detailed balance `mu(x)K(x,y) = mu(y)K(y,x)` holds within `tol`.
    pub fn is_reversible_for(&self, mu: &ProbMeasure, tol: f64) -> Result<bool> {
        Ok(self.reversibility_defect(mu)? <= tol)
    }

    /// Largest absolute detailed-balance violation.
    pub fn reversibility_defect(&self, mu: &ProbMeasure) -> Result<f64> {
        check_dims(self.size(), mu.len())?;
        let n = self.size();
        let mut max_err = 0.0f64;
        for x in 0..n {
            for y in (x + 1)..n {
                let diff = mu.weight(x) * self.entry(x, y) - mu.weight(y) * self.entry(y, x);
                max_err = max_err.max(diff.abs());
            }
        }
        Ok(max_err)
    }
}

fn check_dims(left: usize, right: usize) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { left, right })
    }
}

/// Metropolis-Hastings kernel for `target` driven by `proposal`.
///
/// Off-diagonal entries are `proposal(x,y) * min(1, ratio)` with the Hastings
/// ratio `target(y)proposal(y,x) / (target(x)proposal(x,y))`; the diagonal
/// absorbs the rejected mass. The target must have full support so the ratio
/// is always defined.
pub fn metropolis_kernel(target: &ProbMeasure, proposal: &MarkovKernel) -> Result<MarkovKernel> {
    check_dims(target.len(), proposal.size())?;
    let n = target.len();
    for x in 0..n {
        if target.weight(x) == 0.0 {
            return Err(Error::ZeroSupport { index: x });
        }
    }
    let mut mat = Mat::zeros(n);
    for x in 0..n {
        let mut off_diag = 0.0;
        for y in 0..n {
            if y == x {
                continue;
            }
            let fwd = proposal.entry(x, y);
            if fwd == 0.0 {
                continue;
            }
            let bwd = proposal.entry(y, x);
            let ratio = target.weight(y) * bwd / (target.weight(x) * fwd);
            let p = fwd * ratio.min(1.0);
            mat.set(x, y, p);
            off_diag += p;
        }
        mat.set(x, x, (1.0 - off_diag).max(0.0));
    }
    MarkovKernel::new(mat)
}

/// Reflecting nearest-neighbour random walk proposal: each step moves one
/// state up or down with probability 1/2, staying put when stepping outside.
pub fn nearest_neighbor_proposal(size: usize) -> MarkovKernel {
    let mut mat = Mat::zeros(size);
    if size == 1 {
        mat.set(0, 0, 1.0);
        return MarkovKernel { matrix: mat };
    }
    for x in 0..size {
        if x > 0 {
            mat.set(x, x - 1, 0.5);
        } else {
            mat.set(x, x, 0.5);
        }
        if x + 1 < size {
            mat.set(x, x + 1, 0.5);
        } else {
            let cur = mat.get(x, x);
            mat.set(x, x, cur + 0.5);
        }
    }
    MarkovKernel { matrix: mat }
}

/// Proposal whose rows are all uniform (independence proposal).
pub fn uniform_proposal(size: usize) -> MarkovKernel {
    let w = 1.0 / size as f64;
    MarkovKernel { matrix: Mat::from_rows(vec![vec![w; size]; size]) }
}
