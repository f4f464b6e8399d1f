//! Tempered level sequences `mu_k ~ exp(-beta_k H)` and the product-measure
//! construction for studying how the algorithm's cost scales with dimension.
//!
//! The product builder interpolates between `mu_k^(x)d` and `mu_{k+1}^(x)d`
//! by inserting levels whose densities are fractional powers of the product
//! of one-dimensional normalized potentials, so the per-transition relative
//! density stays bounded by the one-dimensional `gamma` no matter the
//! dimension. Mutation kernels on the product space are Metropolis chains
//! with a single-coordinate proposal, raised to the per-gap step count.

use crate::error::{Error, Result};
use crate::feynman_kac::LevelSequence;
use crate::math::Mat;
use crate::measures::{metropolis_kernel, MarkovKernel, ProbMeasure, StateFunction, StateSpace};
use crate::stability::{
    chain_constants, poincare_constant, variance_bound, ChainParams, MixingInputs,
};

/// Hard cap on dense state-space size for exact operators.
pub const DENSE_BUDGET: usize = 10_000;

/// A tempering ladder: Hamiltonian, inverse temperatures, per-transition
/// MCMC step counts, and the proposal driving the Metropolis kernels.
#[derive(Debug, Clone)]
pub struct TemperingSpec {
    pub hamiltonian: StateFunction,
    pub betas: Vec<f64>,
    pub mcmc_steps: Vec<usize>,
    pub proposal: MarkovKernel,
}

impl TemperingSpec {
    fn validate(&self) -> Result<()> {
        let m = self.hamiltonian.len();
        if self.proposal.size() != m {
            return Err(Error::DimensionMismatch { left: m, right: self.proposal.size() });
        }
        if self.betas.is_empty() {
            return Err(Error::InvalidArgument("at least one inverse temperature required".into()));
        }
        if self.betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("betas must be non-decreasing".into()));
        }
        let n = self.betas.len() - 1;
        if self.mcmc_steps.len() != n {
            return Err(Error::InvalidArgument(format!(
                "expected {n} step counts, got {}",
                self.mcmc_steps.len()
            )));
        }
        if self.mcmc_steps.contains(&0) {
            return Err(Error::InvalidArgument("step counts must be positive".into()));
        }
        Ok(())
    }
}

/// A built model: the level sequence (whose kernels are the powered
/// Metropolis chains) plus the base kernels and step counts they came from.
#[derive(Debug)]
pub struct TemperedModel {
    pub seq: LevelSequence,
    pub base_kernels: Vec<MarkovKernel>,
    pub steps: Vec<usize>,
}

impl TemperedModel {
    pub fn sequence(&self) -> &LevelSequence {
        &self.seq
    }

    /// Exact per-transition L2 contraction rates of the base kernels:
    /// `b*_k = -ln(spectral radius on the complement of constants)`.
    /// One application of the base kernel contracts centered functions by
    /// exactly this factor, so `exp(-2 b* t)` is a valid (and tight) rate
    /// for the `t`-step kernel.
    pub fn l2_rates(&self) -> Result<Vec<f64>> {
        let mut rates = Vec::with_capacity(self.base_kernels.len());
        for (i, base) in self.base_kernels.iter().enumerate() {
            let mu = self.seq.mu(i + 1);
            let m = base.size();
            let mut s = Mat::zeros(m);
            for x in 0..m {
                for y in 0..m {
                    s.set(x, y, base.entry(x, y) * (mu.weight(x) / mu.weight(y)).sqrt());
                }
            }
            let ev = crate::math::symmetric_eigenvalues(&s);
            let radius = if m == 1 {
                0.0
            } else {
                ev[1].abs().max(ev[m - 1].abs())
            };
            if radius >= 1.0 {
                return Err(Error::Infeasible {
                    inequality: format!("base kernel at transition {} has no spectral gap", i + 1),
                });
            }
            rates.push(if radius == 0.0 { f64::INFINITY } else { -radius.ln() });
        }
        Ok(rates)
    }

    /// Mixing inputs for the kernel-level falsifier: supplied
    /// hypercontractivity rates plus the exact contraction rates.
    pub fn mixing_inputs(&self, a_star: &[f64]) -> Result<MixingInputs> {
        if a_star.len() != self.steps.len() {
            return Err(Error::DimensionMismatch { left: self.steps.len(), right: a_star.len() });
        }
        Ok(MixingInputs {
            a_star: a_star.to_vec(),
            b_star: self.l2_rates()?,
            steps: self.steps.iter().map(|&t| t as f64).collect(),
        })
    }
}

/// Builds the tempered ladder: `mu_k ~ exp(-beta_k H)` normalized exactly,
/// potentials `g_{k-1,k} = exp(-(beta_k - beta_{k-1}) H)`, and per-level
/// kernels `metropolis(mu_k, proposal)^t_k`.
pub fn build_tempered(spec: &TemperingSpec) -> Result<TemperedModel> {
    spec.validate()?;
    let m = spec.hamiltonian.len();
    let space = StateSpace::new(m)?;
    let h = spec.hamiltonian.values();
    let h_min = h.iter().copied().fold(f64::INFINITY, f64::min);

    let mut mus = Vec::with_capacity(spec.betas.len());
    for &beta in &spec.betas {
        let weights: Vec<f64> = h.iter().map(|&x| (-beta * (x - h_min)).exp()).collect();
        mus.push(ProbMeasure::from_unnormalized(weights)?);
    }
    let n = spec.betas.len() - 1;
    let mut potentials = Vec::with_capacity(n);
    for k in 1..=n {
        let db = spec.betas[k] - spec.betas[k - 1];
        potentials.push(StateFunction::new(h.iter().map(|&x| (-db * x).exp()).collect())?);
    }
    let mut base_kernels = Vec::with_capacity(n);
    let mut kernels = Vec::with_capacity(n);
    for k in 1..=n {
        let base = metropolis_kernel(&mus[k], &spec.proposal)?;
        kernels.push(base.power(spec.mcmc_steps[k - 1]));
        base_kernels.push(base);
    }
    let seq = LevelSequence::new(space, mus, potentials, kernels)?;
    Ok(TemperedModel { seq, base_kernels, steps: spec.mcmc_steps.clone() })
}

/// A product-space model: `dimension` independent copies of the base ladder
/// with interpolating levels inserted in every temperature gap.
#[derive(Debug, Clone)]
pub struct ProductSpec {
    pub base: TemperingSpec,
    pub dimension: usize,
    /// Levels inserted per original gap; defaults to `dimension - 1`, which
    /// keeps per-transition relative densities at the one-dimensional bound.
    pub insertions: Option<usize>,
}

/// Mixed-radix decoding of a product-space state into base coordinates.
fn decode(state: usize, m: usize, d: usize) -> Vec<usize> {
    let mut digits = Vec::with_capacity(d);
    let mut x = state;
    for _ in 0..d {
        digits.push(x % m);
        x /= m;
    }
    digits
}

/// Builds the product model. The state space has `m^d` mixed-radix states;
/// each original gap is split into `insertions + 1` transitions whose
/// potentials are fractional powers of the product of one-dimensional
/// normalized potentials.
pub fn build_product(pspec: &ProductSpec) -> Result<TemperedModel> {
    pspec.base.validate()?;
    if pspec.dimension < 1 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    let d = pspec.dimension;
    let base = build_tempered(&pspec.base)?;
    let m = base.seq.num_states();
    let states = m
        .checked_pow(d as u32)
        .filter(|&s| s <= DENSE_BUDGET)
        .ok_or(Error::CapacityExceeded { states: usize::MAX, budget: DENSE_BUDGET })?;
    if states > DENSE_BUDGET {
        return Err(Error::CapacityExceeded { states, budget: DENSE_BUDGET });
    }
    let inserts = pspec.insertions.unwrap_or(d - 1);
    let slices = inserts + 1;
    let n_base = base.seq.n();

    let digits: Vec<Vec<usize>> = (0..states).map(|x| decode(x, m, d)).collect();
    let product_weight = |mu: &ProbMeasure, x: usize| -> f64 {
        digits[x].iter().map(|&c| mu.weight(c)).product()
    };

    // Single-coordinate proposal: pick a coordinate uniformly, then move it
    // with the base proposal.
    let mut prop = Mat::zeros(states);
    for x in 0..states {
        for c in 0..d {
            let base_digit = digits[x][c];
            let stride = m.pow(c as u32);
            for v in 0..m {
                let p = pspec.base.proposal.entry(base_digit, v) / d as f64;
                if p > 0.0 {
                    let y = (x - base_digit * stride) + v * stride;
                    prop.set(x, y, prop.get(x, y) + p);
                }
            }
        }
    }
    let product_proposal = MarkovKernel::new(prop)?;

    let space = StateSpace::new(states)?;
    let mut mus = Vec::with_capacity(n_base * slices + 1);
    let mut potentials = Vec::with_capacity(n_base * slices);
    let mut kernels = Vec::with_capacity(n_base * slices);
    let mut base_kernels = Vec::with_capacity(n_base * slices);
    let mut steps = Vec::with_capacity(n_base * slices);

    // Level 0: plain product of the base starting measure.
    let mu0 = ProbMeasure::from_unnormalized(
        (0..states).map(|x| product_weight(base.seq.mu(0), x)).collect(),
    )?;
    mus.push(mu0);

    for k in 0..n_base {
        let gbar = base.seq.normalized_potential(k + 1);
        let phi: Vec<f64> = (0..states)
            .map(|x| {
                let prod: f64 = digits[x].iter().map(|&c| gbar.value(c)).product();
                prod.powf(1.0 / slices as f64)
            })
            .collect();
        let base_mu = base.seq.mu(k);
        for j in 1..=slices {
            // Interpolated measure mu_k^(x)d * (prod gbar)^(j / slices).
            let weights: Vec<f64> = (0..states)
                .map(|x| product_weight(base_mu, x) * phi[x].powi(j as i32))
                .collect();
            let mu = ProbMeasure::from_unnormalized(weights)?;
            potentials.push(StateFunction::new(phi.clone())?);
            let kernel = metropolis_kernel(&mu, &product_proposal)?;
            kernels.push(kernel.power(base.steps[k]));
            base_kernels.push(kernel);
            steps.push(base.steps[k]);
            mus.push(mu);
        }
    }
    let seq = LevelSequence::new(space, mus, potentials, kernels)?;
    Ok(TemperedModel { seq, base_kernels, steps })
}

/// One row of the dimension sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub dimension: usize,
    /// Number of level measures, `n * d + 1` at the default insertion count.
    pub levels: usize,
    pub n_particles: usize,
    /// Largest stored relative density over all transitions; equals the
    /// one-dimensional bound by construction.
    pub gamma: f64,
    /// Smallest per-level spectral-gap constant, recomputed exactly.
    pub lambda_min: f64,
    /// Particle threshold `2 c_bar_n` from the constant chain (NaN when the
    /// chain is infeasible).
    pub n_threshold: f64,
    /// Deterministic work model: transitions x particles x state-space size
    /// (the cost of one inverse-CDF mutation scan).
    pub work: f64,
    /// Empirical mean squared error of the weighted estimator for the
    /// per-coordinate mean energy.
    pub mse: f64,
    /// Bound on the mean squared error from the exact variance chain (NaN when
    /// unavailable).
    pub mse_bound: f64,
    /// The three cost factors relative to the one-dimensional run.
    pub factor_levels: f64,
    pub factor_particles: f64,
    pub factor_step_cost: f64,
    pub skipped: Option<String>,
}

/// Runs the sweep over `dims`. Particle counts scale linearly with the
/// dimension, matching how the particle budget must track the level count.
/// Rows that exceed the dense budget are emitted as skipped.
pub fn dimension_sweep(
    base: &TemperingSpec,
    dims: &[usize],
    n_particles: usize,
    replications: u64,
    seed: u64,
    chain: &ChainParams,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(dims.len());
    for &d in dims {
        let pspec = ProductSpec { base: base.clone(), dimension: d, insertions: None };
        let model = match build_product(&pspec) {
            Ok(model) => model,
            Err(Error::CapacityExceeded { states, budget }) => {
                rows.push(SweepRow {
                    dimension: d,
                    levels: 0,
                    n_particles: 0,
                    gamma: f64::NAN,
                    lambda_min: f64::NAN,
                    n_threshold: f64::NAN,
                    work: f64::NAN,
                    mse: f64::NAN,
                    mse_bound: f64::NAN,
                    factor_levels: f64::NAN,
                    factor_particles: f64::NAN,
                    factor_step_cost: f64::NAN,
                    skipped: Some(format!(
                        "state space of size {states} exceeds the dense budget {budget}"
                    )),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let seq = &model.seq;
        let n = seq.n();
        let m_base = base.hamiltonian.len();
        let n_d = n_particles * d;

        let gamma = seq_potential_sup(seq);
        let mut lambda_min = f64::INFINITY;
        for k in 1..=n {
            lambda_min = lambda_min.min(poincare_constant(seq.kernel(k), seq.mu(k))?);
        }

        // Per-coordinate mean energy, comparable across dimensions.
        let f = StateFunction::new(
            (0..seq.num_states())
                .map(|x| {
                    decode(x, m_base, d)
                        .iter()
                        .map(|&c| base.hamiltonian.value(c))
                        .sum::<f64>()
                        / d as f64
                })
                .collect(),
        )?;
        let exact = seq.mu(n).integrate(&f)?;

        let consts = chain_constants(seq, chain)?;
        let bound = variance_bound(seq, &consts, &f, n_d, None)?;

        let d_seed = seed ^ (d as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let sq_errs: Vec<f64> =
            crate::particles::replicate(seq, n_d, replications, d_seed, |rec| {
                let nu = rec.final_cloud().nu(&f)?;
                Ok((nu - exact) * (nu - exact))
            })
            .into_iter()
            .collect::<Result<Vec<f64>>>()?;
        let mse = crate::math::pairwise_sum(&sq_errs) / replications as f64;

        rows.push(SweepRow {
            dimension: d,
            levels: n + 1,
            n_particles: n_d,
            gamma,
            lambda_min,
            n_threshold: consts.c_bar_n().map_or(f64::NAN, |c| 2.0 * c),
            work: n as f64 * n_d as f64 * seq.num_states() as f64,
            mse,
            mse_bound: bound.mse_bound.unwrap_or(f64::NAN),
            factor_levels: d as f64,
            factor_particles: d as f64,
            factor_step_cost: (m_base as f64).powi(d as i32 - 1),
            skipped: None,
        });
    }
    Ok(rows)
}

/// Per-coordinate mean of a base-space function, lifted to the product
/// space with `dimension` coordinates.
pub fn product_mean_function(base: &StateFunction, dimension: usize) -> Result<StateFunction> {
    let m = base.len();
    let states = m
        .checked_pow(dimension as u32)
        .ok_or(Error::CapacityExceeded { states: usize::MAX, budget: DENSE_BUDGET })?;
    StateFunction::new(
        (0..states)
            .map(|x| {
                decode(x, m, dimension).iter().map(|&c| base.value(c)).sum::<f64>()
                    / dimension as f64
            })
            .collect(),
    )
}

/// Largest stored potential value over every transition of the sequence.
pub fn seq_potential_sup(seq: &LevelSequence) -> f64 {
    let mut sup = f64::MIN;
    for k in 1..=seq.n() {
        for &v in seq.potential(k).values() {
            sup = sup.max(v);
        }
    }
    sup
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::nearest_neighbor_proposal;
    use crate::stability::gamma_bound;
    use crate::test_support::fixture_a;

    fn fixture_a_spec() -> TemperingSpec {
        TemperingSpec {
            hamiltonian: StateFunction::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap(),
            betas: vec![0.0, 0.5, 1.0],
            mcmc_steps: vec![8, 8],
            proposal: nearest_neighbor_proposal(4),
        }
    }

    fn small_spec() -> TemperingSpec {
        TemperingSpec {
            hamiltonian: StateFunction::new(vec![0.0, 1.0, 2.0]).unwrap(),
            betas: vec![0.0, 0.6],
            mcmc_steps: vec![6],
            proposal: nearest_neighbor_proposal(3),
        }
    }

    #[test]
    fn build_tempered_matches_independent_construction() {
        let model = build_tempered(&fixture_a_spec()).unwrap();
        let reference = fixture_a();
        assert_eq!(model.seq.n(), reference.n());
        for k in 0..=2 {
            for x in 0..4 {
                assert!(
                    (model.seq.mu(k).weight(x) - reference.mu(k).weight(x)).abs() < 1e-14
                );
            }
        }
        for k in 1..=2 {
            assert!(
                model
                    .seq
                    .kernel(k)
                    .matrix()
                    .max_abs_diff(reference.kernel(k).matrix())
                    < 1e-13
            );
        }
    }

    #[test]
    fn build_tempered_equal_betas_degenerate() {
        let spec = TemperingSpec {
            hamiltonian: StateFunction::new(vec![0.0, 2.0]).unwrap(),
            betas: vec![0.7, 0.7],
            mcmc_steps: vec![3],
            proposal: nearest_neighbor_proposal(2),
        };
        let model = build_tempered(&spec).unwrap();
        let g = gamma_bound(&model.seq);
        assert!(g.degenerate);
        for &v in model.seq.potential(1).values() {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn final_measure_matches_direct_normalization() {
        let model = build_tempered(&fixture_a_spec()).unwrap();
        let h = [0.0f64, 1.0, 2.0, 3.0];
        let weights: Vec<f64> = h.iter().map(|&x| (-x).exp()).collect();
        let z: f64 = weights.iter().sum();
        for x in 0..4 {
            assert!((model.seq.mu(2).weight(x) - weights[x] / z).abs() < 1e-14);
        }
    }

    #[test]
    fn gamma_decreases_with_smaller_temperature_steps() {
        let mut last = f64::INFINITY;
        for &db in &[0.5f64, 0.25, 0.125] {
            let spec = TemperingSpec {
                hamiltonian: StateFunction::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap(),
                betas: vec![0.0, db],
                mcmc_steps: vec![4],
                proposal: nearest_neighbor_proposal(4),
            };
            let model = build_tempered(&spec).unwrap();
            let g = gamma_bound(&model.seq).value;
            assert!(g < last, "gamma {g} should shrink with {db}");
            last = g;
        }
    }

    #[test]
    fn l2_rates_are_valid_contraction_rates() {
        let model = build_tempered(&fixture_a_spec()).unwrap();
        let rates = model.l2_rates().unwrap();
        assert_eq!(rates.len(), 2);
        for (k, &rate) in rates.iter().enumerate() {
            // One base step contracts variance by exactly exp(-2 rate); the
            // level kernel is t steps.
            let lambda =
                poincare_constant(model.seq.kernel(k + 1), model.seq.mu(k + 1)).unwrap();
            let per_level = (-2.0 * rate * model.steps[k] as f64).exp();
            assert!((1.0 - lambda).powi(2) <= per_level * (1.0 + 1e-9));
        }
    }

    #[test]
    fn product_dimension_one_matches_base() {
        let spec = small_spec();
        let base = build_tempered(&spec).unwrap();
        let prod = build_product(&ProductSpec {
            base: spec.clone(),
            dimension: 1,
            insertions: None,
        })
        .unwrap();
        assert_eq!(prod.seq.n(), base.seq.n());
        for k in 0..=base.seq.n() {
            for x in 0..3 {
                assert!((prod.seq.mu(k).weight(x) - base.seq.mu(k).weight(x)).abs() < 1e-13);
            }
        }
        for k in 1..=base.seq.n() {
            assert!(
                prod.seq
                    .kernel(k)
                    .matrix()
                    .max_abs_diff(base.seq.kernel(k).matrix())
                    < 1e-12
            );
            // Potentials agree after normalization (the product builder
            // stores the mean-one form).
            let a = prod.seq.normalized_potential(k);
            let b = base.seq.normalized_potential(k);
            for x in 0..3 {
                assert!((a.value(x) - b.value(x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn product_inserted_densities_bounded_by_base_gamma() {
        let spec = small_spec();
        let base = build_tempered(&spec).unwrap();
        let base_gamma = gamma_bound(&base.seq).value;
        let prod = build_product(&ProductSpec {
            base: spec,
            dimension: 2,
            insertions: None,
        })
        .unwrap();
        let sup = seq_potential_sup(&prod.seq);
        assert!(sup <= base_gamma * (1.0 + 1e-12), "sup {sup} vs gamma {base_gamma}");
        assert!((sup - base_gamma).abs() < 1e-12, "the bound is attained");
    }

    #[test]
    fn product_level_count_and_end_measure() {
        let spec = small_spec();
        let base = build_tempered(&spec).unwrap();
        let d = 2;
        let prod = build_product(&ProductSpec {
            base: spec,
            dimension: d,
            insertions: None,
        })
        .unwrap();
        let n_base = base.seq.n();
        assert_eq!(prod.seq.n(), n_base * d);
        assert_eq!(prod.seq.n() + 1, n_base * d + 1);

        // End measure is the d-fold product of the base end measure.
        let end = prod.seq.mu(prod.seq.n());
        for x in 0..prod.seq.num_states() {
            let digits = decode(x, 3, d);
            let expect: f64 =
                digits.iter().map(|&c| base.seq.mu(n_base).weight(c)).product();
            assert!((end.weight(x) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn product_with_extra_insertions() {
        // More insertions than the default: the per-transition densities
        // flatten further, staying strictly below the base bound.
        let spec = small_spec();
        let base = build_tempered(&spec).unwrap();
        let base_gamma = gamma_bound(&base.seq).value;
        let prod = build_product(&ProductSpec {
            base: spec,
            dimension: 2,
            insertions: Some(3),
        })
        .unwrap();
        assert_eq!(prod.seq.n(), base.seq.n() * 4);
        let sup = seq_potential_sup(&prod.seq);
        let expect = base_gamma.powf(2.0 / 4.0);
        assert!((sup - expect).abs() < 1e-12, "sup {sup} vs {expect}");
        assert!(sup < base_gamma);
    }

    #[test]
    fn product_capacity_error() {
        let spec = TemperingSpec {
            hamiltonian: StateFunction::new((0..10).map(|i| i as f64).collect()).unwrap(),
            betas: vec![0.0, 0.3],
            mcmc_steps: vec![2],
            proposal: nearest_neighbor_proposal(10),
        };
        let result = build_product(&ProductSpec { base: spec, dimension: 5, insertions: None });
        assert!(matches!(result, Err(Error::CapacityExceeded { .. })));
    }

    #[test]
    fn sweep_emits_rows_and_work_ratio() {
        let spec = small_spec();
        let chain = ChainParams::new(2, 0.8);
        let rows = dimension_sweep(&spec, &[1, 2], 48, 400, 17, &chain).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].skipped.is_none() && rows[1].skipped.is_none());
        assert_eq!(rows[0].dimension, 1);
        assert_eq!(rows[1].levels, rows[0].levels * 2 - 1); // n d + 1 with n = levels-1

        let ratio = rows[1].work / rows[0].work;
        assert!((4.0..=16.0).contains(&ratio), "work ratio {ratio}");
        // gamma is dimension-independent.
        assert!((rows[0].gamma - rows[1].gamma).abs() < 1e-12);
        // The three cost factors are emitted.
        assert_eq!(rows[1].factor_levels, 2.0);
        assert_eq!(rows[1].factor_particles, 2.0);
        assert_eq!(rows[1].factor_step_cost, 3.0);
    }

    #[test]
    fn sweep_skips_over_budget_dimensions() {
        let spec = TemperingSpec {
            hamiltonian: StateFunction::new((0..4).map(|i| i as f64).collect()).unwrap(),
            betas: vec![0.0, 0.4],
            mcmc_steps: vec![2],
            proposal: nearest_neighbor_proposal(4),
        };
        let chain = ChainParams::new(2, 0.8);
        let rows = dimension_sweep(&spec, &[10], 8, 100, 3, &chain).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].skipped.is_some());
    }
}
