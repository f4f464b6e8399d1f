//! The level-sequence model and exact propagator evaluation.
//!
//! A [`LevelSequence`] holds distributions `mu_0..mu_n` on one finite space,
//! strictly positive potentials `g_{k-1,k}` linking consecutive levels, and
//! kernels `K_1..K_n` stationary for their levels. The propagator `q_{j,k}`
//! transports integrals from level `k` back to level `j`; on a finite space
//! it is the matrix product of the one-step factors `diag(gbar) * K`, so the
//! identity `mu_j(q_{j,k} f) = mu_k(f)` and the semigroup law can be checked
//! to floating-point accuracy. The hatted variant `K * diag(gbar)` is the
//! operator the stability analysis works with.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::math::Mat;
use crate::measures::{MarkovKernel, ProbMeasure, StateFunction, StateSpace};
use crate::rng;

const CONSISTENCY_TOL: f64 = 1e-10;

/// Which propagator family a matrix represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// `q_{k-1,k}(f) = gbar_{k-1,k} * K_k(f)`
    Plain,
    /// `qhat_{k-1,k}(f) = K_{k-1}(gbar_{k-1,k} * f)`, defined for `j >= 1`
    Hatted,
}

/// Exact matrix representation of `q_{j,k}` or `qhat_{j,k}`.
#[derive(Debug, Clone)]
pub struct Propagator {
    j: usize,
    k: usize,
    variant: Variant,
    matrix: Mat,
}

impl Propagator {
    pub fn j(&self) -> usize {
        self.j
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    /// Applies the propagator to a function: `matrix * f`.
    pub fn propagate(&self, f: &StateFunction) -> Result<StateFunction> {
        if f.len() != self.matrix.n() {
            return Err(Error::DimensionMismatch { left: self.matrix.n(), right: f.len() });
        }
        StateFunction::new(self.matrix.matvec(f.values()))
    }
}

/// The `(mu_k, g_{k-1,k}, K_k)` triple sequence on a common finite space.
#[derive(Debug)]
pub struct LevelSequence {
    space: StateSpace,
    mus: Vec<ProbMeasure>,
    potentials: Vec<StateFunction>,
    kernels: Vec<MarkovKernel>,
    gbars: Vec<StateFunction>,
    cache: Mutex<HashMap<(usize, usize, Variant), Arc<Propagator>>>,
    cache_capacity: usize,
    cum_mu0: OnceLock<Vec<f64>>,
    cum_rows: Vec<OnceLock<Vec<Vec<f64>>>>,
}

impl LevelSequence {
    /// Builds and validates the sequence: potentials strictly positive, each
    /// `K_k` stationary for `mu_k`, and the relative-density consistency
    /// `mu_k(x) = mu_{k-1}(x) g(x) / mu_{k-1}(g)` at every state.
    pub fn new(
        space: StateSpace,
        mus: Vec<ProbMeasure>,
        potentials: Vec<StateFunction>,
        kernels: Vec<MarkovKernel>,
    ) -> Result<Self> {
        Self::build(space, mus, potentials, kernels, true)
    }

    /// Same as [`LevelSequence::new`] but skips the O(n m^2) consistency
    /// checks; intended for large product spaces built by trusted code.
    pub fn new_unchecked(
        space: StateSpace,
        mus: Vec<ProbMeasure>,
        potentials: Vec<StateFunction>,
        kernels: Vec<MarkovKernel>,
    ) -> Result<Self> {
        Self::build(space, mus, potentials, kernels, false)
    }

    fn build(
        space: StateSpace,
        mus: Vec<ProbMeasure>,
        potentials: Vec<StateFunction>,
        kernels: Vec<MarkovKernel>,
        validate: bool,
    ) -> Result<Self> {
        let m = space.size();
        if mus.is_empty() {
            return Err(Error::InvalidArgument("at least one level distribution required".into()));
        }
        let n = mus.len() - 1;
        if potentials.len() != n || kernels.len() != n {
            return Err(Error::InvalidArgument(format!(
                "expected {n} potentials and kernels for {} levels, got {} and {}",
                n + 1,
                potentials.len(),
                kernels.len()
            )));
        }
        for mu in &mus {
            if mu.len() != m {
                return Err(Error::DimensionMismatch { left: m, right: mu.len() });
            }
        }
        for g in &potentials {
            if g.len() != m {
                return Err(Error::DimensionMismatch { left: m, right: g.len() });
            }
            for (i, &v) in g.values().iter().enumerate() {
                if v <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "potential value {v:e} at state {i} must be strictly positive"
                    )));
                }
            }
        }
        for k in &kernels {
            if k.size() != m {
                return Err(Error::DimensionMismatch { left: m, right: k.size() });
            }
        }
        // Full support is required so relative densities stay defined.
        for (level, mu) in mus.iter().enumerate() {
            for x in 0..m {
                if mu.weight(x) == 0.0 {
                    return Err(Error::InconsistentSequence {
                        level,
                        detail: format!("zero mass at state {x}; full support required"),
                    });
                }
            }
        }

        let mut gbars = Vec::with_capacity(n);
        for (i, g) in potentials.iter().enumerate() {
            gbars.push(normalize_potential(&mus[i], g)?);
        }

        if validate {
            for k in 1..=n {
                // mu_k = gbar * mu_{k-1}, checked on coordinate indicators.
                let prev = &mus[k - 1];
                let gbar = &gbars[k - 1];
                for x in 0..m {
                    let expect = prev.weight(x) * gbar.value(x);
                    if (expect - mus[k].weight(x)).abs() > CONSISTENCY_TOL {
                        return Err(Error::InconsistentSequence {
                            level: k,
                            detail: format!(
                                "mu_{k}({x}) = {} but mu_{}(gbar * 1_{x}) = {expect}",
                                mus[k].weight(x),
                                k - 1
                            ),
                        });
                    }
                }
                if !kernels[k - 1].is_stationary_for(&mus[k], CONSISTENCY_TOL)? {
                    return Err(Error::InconsistentSequence {
                        level: k,
                        detail: format!("K_{k} is not stationary for mu_{k}"),
                    });
                }
            }
        }

        let cum_rows = (0..n).map(|_| OnceLock::new()).collect();
        Ok(LevelSequence {
            space,
            mus,
            potentials,
            kernels,
            gbars,
            cache: Mutex::new(HashMap::new()),
            cache_capacity: n + 1,
            cum_mu0: OnceLock::new(),
            cum_rows,
        })
    }

    /// Caps how many composed propagator matrices are kept. The default of
    /// `n + 1` is enough for the `(j, n)` family the diagnostics keep hitting.
    pub fn set_cache_capacity(&mut self, capacity: usize) {
        self.cache_capacity = capacity;
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn num_states(&self) -> usize {
        self.space.size()
    }

    /// Number of transitions; levels run `0..=n`.
    pub fn n(&self) -> usize {
        self.mus.len() - 1
    }

    pub fn mu(&self, level: usize) -> &ProbMeasure {
        &self.mus[level]
    }

    /// `g_{k-1,k}` for `1 <= k <= n`.
    pub fn potential(&self, k: usize) -> &StateFunction {
        &self.potentials[k - 1]
    }

    /// `K_k` for `1 <= k <= n`.
    pub fn kernel(&self, k: usize) -> &MarkovKernel {
        &self.kernels[k - 1]
    }

    /// `gbar_{k-1,k} = g_{k-1,k} / mu_{k-1}(g_{k-1,k})`, rescaled so its
    /// `mu_{k-1}`-mean is 1 to full precision.
    pub fn normalized_potential(&self, k: usize) -> &StateFunction {
        &self.gbars[k - 1]
    }

    /// One-step plain propagator matrix `diag(gbar_{k-1,k}) * K_k`.
    fn one_step_plain(&self, k: usize) -> Mat {
        self.kernel(k).matrix().scale_rows(self.normalized_potential(k).values())
    }

    /// One-step hatted propagator matrix `K_{k-1} * diag(gbar_{k-1,k})`,
    /// defined for `k >= 2`.
    fn one_step_hatted(&self, k: usize) -> Mat {
        self.kernel(k - 1).matrix().scale_cols(self.normalized_potential(k).values())
    }

    /// The plain one-step propagator `q_{k-1,k}`.
    pub fn one_step_propagator(&self, k: usize) -> Result<Arc<Propagator>> {
        self.propagator(k - 1, k, Variant::Plain)
    }

    /// Composes `q_{j,k}` (plain, `0 <= j <= k <= n`) or `qhat_{j,k}`
    /// (hatted, `1 <= j <= k <= n`) as a product of one-step matrices.
    pub fn propagator(&self, j: usize, k: usize, variant: Variant) -> Result<Arc<Propagator>> {
        if j > k || k > self.n() {
            return Err(Error::InvalidArgument(format!(
                "propagator indices must satisfy j <= k <= n, got j={j}, k={k}, n={}",
                self.n()
            )));
        }
        if variant == Variant::Hatted && j == 0 {
            return Err(Error::InvalidArgument(
                "hatted propagator is only defined for j >= 1".into(),
            ));
        }
        let key = (j, k, variant);
        let mut cache = self.cache.lock().unwrap();
        if let Some(p) = cache.get(&key) {
            return Ok(Arc::clone(p));
        }
        let mut matrix = Mat::identity(self.num_states());
        for l in (j + 1)..=k {
            let step = match variant {
                Variant::Plain => self.one_step_plain(l),
                Variant::Hatted => self.one_step_hatted(l),
            };
            matrix = matrix.mul(&step);
        }
        let prop = Arc::new(Propagator { j, k, variant, matrix });
        if cache.len() < self.cache_capacity {
            cache.insert(key, Arc::clone(&prop));
        }
        Ok(prop)
    }

    /// Cumulative weights of `mu_0`, for inverse-CDF sampling.
    pub(crate) fn cum_mu0(&self) -> &[f64] {
        self.cum_mu0.get_or_init(|| rng::cumulative(self.mus[0].weights()))
    }

    /// Cumulative rows of `K_k`, for inverse-CDF mutation draws.
    pub(crate) fn cum_kernel_rows(&self, k: usize) -> &[Vec<f64>] {
        self.cum_rows[k - 1].get_or_init(|| {
            let kernel = self.kernel(k);
            (0..kernel.size()).map(|x| rng::cumulative(kernel.row(x))).collect()
        })
    }
}

/// Divides `g` by its `mu`-mean, then rescales once more so the mean of the
/// result is 1 to full precision.
fn normalize_potential(mu: &ProbMeasure, g: &StateFunction) -> Result<StateFunction> {
    let mean = mu.integrate(g)?;
    if mean <= 0.0 || mean.is_nan() {
        return Err(Error::InvalidArgument(format!("potential has non-positive mean {mean:e}")));
    }
    let first = g.map(|v| v / mean);
    let mean2 = mu.integrate(&first)?;
    Ok(first.map(|v| v / mean2))
}
