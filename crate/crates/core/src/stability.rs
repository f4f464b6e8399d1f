//! The stability-constant chain and its numerical falsification.
//!
//! From a level sequence this module derives, in order: the uniform bound
//! `gamma` on normalized potentials, per-level Poincare constants of the
//! mutation kernels, the variance-contraction rate `rho`, the one-step
//! operator-bound pair `(alpha, beta)`, the iterated norm bounds `delta(p)`,
//! the cross-norm constants `ctilde(p,q)` and `c(p)`, the per-level sums
//! `c_hat_k` / `v_hat_k` with their running maxima, and finally the
//! non-asymptotic mean-squared-error bound together with its closed-form
//! parametric version. Every strict inequality the chain relies on is kept
//! as an explicit feasibility flag.
//!
//! None of the derived inequalities is taken on faith: [`falsify_inequality`]
//! evaluates each one exactly on random and adversarial test functions and
//! reports the worst left/right ratio. A ratio above `1 + 1e-10` means the
//! inequality (or a user-supplied constant) is wrong.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feynman_kac::{LevelSequence, Variant};
use crate::math::{sym_inv_sqrt, symmetric_eigen, Mat};
use crate::measures::{MarkovKernel, ProbMeasure, StateFunction};
use crate::rng::stream_rng;
use rand::Rng;

const FALSIFY_TOL: f64 = 1e-10;

/// Uniform bound on the normalized potentials.
#[derive(Debug, Clone, Copy)]
pub struct GammaBound {
    pub value: f64,
    /// True when every potential is constant, so the bound degenerates to 1.
    pub degenerate: bool,
}

impl GammaBound {
    /// Value to feed into formulas that require a bound strictly above 1.
    pub fn effective(&self) -> f64 {
        if self.degenerate {
            1.0 + 1e-12
        } else {
            self.value
        }
    }
}

/// Exact maximum of all normalized potentials over states and levels.
pub fn gamma_bound(seq: &LevelSequence) -> GammaBound {
    let mut max = f64::MIN;
    for k in 1..=seq.n() {
        for &v in seq.normalized_potential(k).values() {
            max = max.max(v);
        }
    }
    if seq.n() == 0 || max <= 1.0 + 1e-12 {
        GammaBound { value: 1.0, degenerate: true }
    } else {
        GammaBound { value: max, degenerate: false }
    }
}

/// Spectral-gap constant of a reversible kernel: one minus the largest
/// eigenvalue of `K` on the orthogonal complement of the constants, computed
/// from the symmetrization `D^{1/2} K D^{-1/2}` with `D = diag(mu)`.
pub fn poincare_constant(kernel: &MarkovKernel, mu: &ProbMeasure) -> Result<f64> {
    if kernel.size() != mu.len() {
        return Err(Error::DimensionMismatch { left: kernel.size(), right: mu.len() });
    }
    let defect = kernel.reversibility_defect(mu)?;
    if defect > 1e-10 {
        return Err(Error::NotReversible { max_err: defect });
    }
    let m = kernel.size();
    if m == 1 {
        return Ok(1.0);
    }
    let mut s = Mat::zeros(m);
    for i in 0..m {
        for j in 0..m {
            let scale = (mu.weight(i) / mu.weight(j)).sqrt();
            s.set(i, j, kernel.entry(i, j) * scale);
        }
    }
    let ev = crate::math::symmetric_eigenvalues(&s);
    Ok(1.0 - ev[1])
}

/// Variance-contraction rate derived from per-level spectral gaps.
#[derive(Debug, Clone, Copy)]
pub struct RhoEstimate {
    /// `1 - max_k (1 - lambda_k)^2`, the rate consistent with the
    /// variance-contraction inequality the chain actually uses.
    pub rho: f64,
    /// `min_k (1 - lambda_k)^2`: the same quantity under the opposite
    /// aggregation convention, reported alongside for reference. A uniform
    /// contraction rate must come from the worst-mixing level, which is
    /// what `rho` uses.
    pub rho_min_convention: f64,
    pub feasible: bool,
}

pub fn rho_from_gaps(lambdas: &[f64]) -> RhoEstimate {
    let feasible = !lambdas.is_empty() && lambdas.iter().all(|&l| l > 0.0);
    let worst = lambdas.iter().map(|&l| (1.0 - l) * (1.0 - l)).fold(0.0f64, f64::max);
    let best = lambdas.iter().map(|&l| (1.0 - l) * (1.0 - l)).fold(f64::INFINITY, f64::min);
    RhoEstimate {
        rho: 1.0 - worst,
        rho_min_convention: if lambdas.is_empty() { f64::NAN } else { best },
        feasible: feasible && worst < 1.0,
    }
}

/// One-step operator-bound pair derived from the contraction rate:
/// `alpha = (1 - rho) gamma`, `beta = rho`.
#[derive(Debug, Clone, Copy)]
pub struct AlphaBeta {
    pub alpha: f64,
    pub beta: f64,
    /// `alpha` must lie in (0,1) for the iterated bounds to close.
    pub feasible: bool,
}

pub fn alpha_beta(rho: f64, gamma: f64) -> AlphaBeta {
    let alpha = (1.0 - rho) * gamma;
    AlphaBeta { alpha, beta: rho, feasible: alpha < 1.0 }
}

/// Iterated norm bound for the hatted propagator at `p = 2^r`, together with
/// its closed-form upper bound.
#[derive(Debug, Clone, Copy)]
pub struct DeltaP {
    pub value: f64,
    pub closed_form_bound: f64,
}

/// `delta(p)` for `p = 2^r >= 2`:
/// the product over `i = 1..r` of `gamma^(1 - 2^-(i-1)) / (1 - alpha gamma^(2^i - 2))^(2^-i)`.
/// Requires `alpha * gamma^(p-2) < 1`.
pub fn delta_p(alpha: f64, gamma: f64, p: u32) -> Result<DeltaP> {
    if p < 2 || !p.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("p must be a power of two >= 2, got {p}")));
    }
    let head = alpha * gamma.powf((p - 2) as f64);
    if head >= 1.0 {
        return Err(Error::Infeasible {
            inequality: format!("alpha * gamma^(p-2) < 1 (alpha={alpha}, gamma={gamma}, p={p})"),
        });
    }
    let r = p.trailing_zeros();
    let mut value = 1.0;
    for i in 1..=r {
        let num = gamma.powf(1.0 - 2f64.powi(-(i as i32 - 1)));
        let den = (1.0 - alpha * gamma.powf((2f64.powi(i as i32)) - 2.0))
            .powf(2f64.powi(-(i as i32)));
        value *= num / den;
    }
    let closed_form_bound =
        gamma.powf(r as f64 - 2.0 + 2f64.powi(-(r as i32 - 1))) / (1.0 - head);
    debug_assert!(value <= closed_form_bound * (1.0 + 1e-9));
    Ok(DeltaP { value, closed_form_bound })
}

/// Same product with `alpha` written as `(1 - rho) gamma`, which merges the
/// gamma powers into the exponent `2^i - 1`. Equal to
/// `delta_p((1 - rho) * gamma, gamma, p)` by construction.
pub fn delta_p_poincare(rho: f64, gamma: f64, p: u32) -> Result<DeltaP> {
    if p < 2 || !p.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("p must be a power of two >= 2, got {p}")));
    }
    let head = (1.0 - rho) * gamma.powf((p - 1) as f64);
    if head >= 1.0 {
        return Err(Error::Infeasible {
            inequality: format!("(1-rho) * gamma^(p-1) < 1 (rho={rho}, gamma={gamma}, p={p})"),
        });
    }
    let r = p.trailing_zeros();
    let mut value = 1.0;
    for i in 1..=r {
        let num = gamma.powf(1.0 - 2f64.powi(-(i as i32 - 1)));
        let den = (1.0 - (1.0 - rho) * gamma.powf((2f64.powi(i as i32)) - 1.0))
            .powf(2f64.powi(-(i as i32)));
        value *= num / den;
    }
    let closed_form_bound =
        gamma.powf(r as f64 - 2.0 + 2f64.powi(-(r as i32 - 1))) / (1.0 - head);
    Ok(DeltaP { value, closed_form_bound })
}

/// `delta(p)` for arbitrary real `p >= 1`, rounded up to the next power of
/// two (interpolation makes the power-of-two value valid in between).
pub fn delta_p_general(alpha: f64, gamma: f64, p: f64) -> Result<DeltaP> {
    if p < 1.0 || p.is_nan() {
        return Err(Error::InvalidArgument(format!("p must be >= 1, got {p}")));
    }
    if p == 1.0 {
        return Ok(DeltaP { value: 1.0, closed_form_bound: 1.0 });
    }
    let mut pow = 2u32;
    while (pow as f64) < p {
        pow = pow.checked_mul(2).ok_or_else(|| {
            Error::InvalidArgument(format!("p = {p} too large for the power-of-two ladder"))
        })?;
    }
    delta_p(alpha, gamma, pow)
}

/// Cross-norm constant for the plain propagator,
/// `ctilde(p,q) = theta(p,q) * gamma^((p-1)/p) * gamma^((q-1)/q) * delta(q)`.
pub fn ctilde(theta_pq: f64, gamma: f64, delta_q: f64, p: f64, q: f64) -> f64 {
    theta_pq * gamma.powf((p - 1.0) / p) * gamma.powf((q - 1.0) / q) * delta_q
}

/// Same-norm constant along the direct route (no kernel cross-norm hop):
/// `gamma^((p-1)/p) * delta(p)`.
pub fn ctilde_same_p(gamma: f64, delta_p_value: f64, p: f64) -> f64 {
    gamma.powf((p - 1.0) / p) * delta_p_value
}

/// Combined stability constant `c(p) = max(ctilde(p, p/2), ctilde(2p, p)^2)`,
/// requiring `p >= 4` so the smaller exponent stays at least 2.
pub fn c_jk_p(p: u32, ctilde_p_halfp: f64, ctilde_2p_p: f64) -> Result<f64> {
    if p < 4 {
        return Err(Error::InvalidArgument(format!("c(p) requires p >= 4, got {p}")));
    }
    Ok(ctilde_p_halfp.max(ctilde_2p_p * ctilde_2p_p))
}

/// Exponential-decay constants for centered functions at `p = 2^r`:
/// `decay_theta = alpha gamma^(2p-2)` and the recursion coefficient
/// `decay_lambda` from `lambda_2 = 1`,
/// `lambda_2p = 1 + lambda_p^2 / (alpha (1 - alpha / gamma^2))`.
#[derive(Debug, Clone, Copy)]
pub struct DecayConstants {
    pub decay_theta: f64,
    pub decay_lambda: f64,
    pub lambda_closed_form_bound: f64,
}

pub fn exp_decay_constants(alpha: f64, gamma: f64, p: u32) -> Result<DecayConstants> {
    if p < 2 || !p.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("p must be a power of two >= 2, got {p}")));
    }
    if alpha <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "decay recursion requires alpha > 0, got {alpha}"
        )));
    }
    let decay_theta = alpha * gamma.powf((2 * p - 2) as f64);
    if decay_theta >= 1.0 {
        return Err(Error::Infeasible {
            inequality: format!(
                "alpha * gamma^(2p-2) < 1 (alpha={alpha}, gamma={gamma}, p={p})"
            ),
        });
    }
    let kappa_half = (alpha * (1.0 - alpha / (gamma * gamma))).recip();
    let mut lambda = 1.0f64;
    let mut q = 2u32;
    while q < p {
        lambda = 1.0 + lambda * lambda * kappa_half;
        q *= 2;
    }
    let bound = (2.0 * kappa_half).powf(p as f64 / 2.0 - 1.0);
    debug_assert!(lambda <= bound * (1.0 + 1e-9));
    Ok(DecayConstants { decay_theta, decay_lambda: lambda, lambda_closed_form_bound: bound })
}

/// Kernel cross-norm constants `theta(p,q)`, a uniform default with optional
/// per-pair overrides. The default of 1 corresponds to the normalized
/// hypercontractivity inequality and is checked by the falsifier rather than
/// assumed silently.
#[derive(Debug, Clone)]
pub struct ThetaTable {
    default: f64,
    overrides: Vec<((u32, u32), f64)>,
}

impl ThetaTable {
    pub fn uniform(value: f64) -> Self {
        ThetaTable { default: value, overrides: Vec::new() }
    }

    pub fn with_override(mut self, p: u32, q: u32, value: f64) -> Self {
        self.overrides.push(((p, q), value));
        self
    }

    pub fn get(&self, p: u32, q: u32) -> f64 {
        self.overrides
            .iter()
            .find(|(key, _)| *key == (p, q))
            .map(|(_, v)| *v)
            .unwrap_or(self.default)
    }
}

impl Default for ThetaTable {
    fn default() -> Self {
        ThetaTable::uniform(1.0)
    }
}

/// Inputs for the parametric chain.
#[derive(Debug, Clone)]
pub struct ChainParams {
    /// `p = 2^s`; `s >= 2` so that `p/2 >= 2`.
    pub s: u32,
    pub tau: f64,
    pub theta: ThetaTable,
    /// Multiplies the derived `alpha`; 1 for the honest chain, < 1 to probe
    /// the falsifier with a deliberately undersized constant.
    pub alpha_scale: f64,
}

impl ChainParams {
    pub fn new(s: u32, tau: f64) -> Self {
        ChainParams { s, tau, theta: ThetaTable::default(), alpha_scale: 1.0 }
    }

    pub fn p(&self) -> u32 {
        1 << self.s
    }
}

/// Which strict inequalities of the chain hold.
#[derive(Debug, Clone, Copy)]
pub struct Feasibility {
    pub rho_positive: bool,
    pub alpha_in_unit: bool,
    /// `alpha * gamma^(p-2) < 1`.
    pub iterated_bound: bool,
    /// `alpha * gamma^(2p-2) < 1` (needed for the exponential decay and for
    /// the `2p` leg of the cross-norm constants).
    pub decay_theta: bool,
}

impl Feasibility {
    pub fn chain_complete(&self) -> bool {
        self.rho_positive && self.alpha_in_unit && self.iterated_bound && self.decay_theta
    }
}

/// The full constant chain for one level sequence.
#[derive(Debug, Clone)]
pub struct StabilityConstants {
    pub gamma: f64,
    pub gamma_degenerate: bool,
    pub lambdas: Vec<f64>,
    pub rho: f64,
    pub rho_min_convention: f64,
    pub alpha: f64,
    pub beta: f64,
    pub alpha_scale: f64,
    pub s: u32,
    pub p: u32,
    pub tau: f64,
    pub theta: ThetaTable,
    pub feasibility: Feasibility,
    pub delta_half_p: Option<DeltaP>,
    pub delta_p: Option<DeltaP>,
    pub ctilde_p_halfp: Option<f64>,
    pub ctilde_2p_p: Option<f64>,
    pub c_p: Option<f64>,
    /// Closed-form ceiling `gamma^(2s + 1/p) / tau^2` for `c(p)`.
    pub h_p: f64,
    /// `||q_{j,j+1}(1) - 1||_{L_p(mu_j)}` for `j = 0..n-1`.
    pub norm_q1_minus_1: Vec<f64>,
    /// `c_hat_k` for `k = 0..n` (index 0 is the empty sum).
    pub c_hat: Option<Vec<f64>>,
    /// Running maxima of `c_hat`.
    pub c_bar: Option<Vec<f64>>,
    /// Closed-form `(k+1) gamma / tau^2` for `k = 0..n`.
    pub v_hat_bound: Vec<f64>,
    /// Exact worst-case variance sums in the `L_2` norm, `k = 0..n`.
    pub v_hat_exact2: Vec<f64>,
    /// Running maxima of `v_hat_exact2`.
    pub v_bar_exact2: Vec<f64>,
    pub decay: Option<DecayConstants>,
}

impl StabilityConstants {
    pub fn c_bar_n(&self) -> Option<f64> {
        self.c_bar.as_ref().map(|v| *v.last().unwrap())
    }

    pub fn v_bar_n(&self) -> f64 {
        *self.v_bar_exact2.last().unwrap()
    }
}

/// Derives the complete constant chain for `seq`. Infeasible links leave the
/// downstream entries empty instead of failing, so the flags can be reported.
pub fn chain_constants(seq: &LevelSequence, params: &ChainParams) -> Result<StabilityConstants> {
    if params.s < 2 {
        return Err(Error::InvalidArgument(format!(
            "the chain requires s >= 2 (p >= 4), got s = {}",
            params.s
        )));
    }
    if params.tau <= 0.0 || params.tau >= 1.0 || params.tau.is_nan() {
        return Err(Error::InvalidArgument(format!("tau must lie in (0,1), got {}", params.tau)));
    }
    let n = seq.n();
    let p = params.p();
    let pf = p as f64;

    let gamma_est = gamma_bound(seq);
    let gamma = gamma_est.effective();

    let mut lambdas = Vec::with_capacity(n);
    for k in 1..=n {
        lambdas.push(poincare_constant(seq.kernel(k), seq.mu(k))?);
    }
    let rho_est = rho_from_gaps(&lambdas);
    let ab = alpha_beta(rho_est.rho, gamma);
    let alpha = ab.alpha * params.alpha_scale;
    let beta = ab.beta;

    let feas_iter = alpha * gamma.powf(pf - 2.0) < 1.0;
    let feas_decay = alpha * gamma.powf(2.0 * pf - 2.0) < 1.0;
    let feasibility = Feasibility {
        rho_positive: rho_est.feasible,
        alpha_in_unit: alpha > 0.0 && alpha < 1.0,
        iterated_bound: feas_iter,
        decay_theta: feas_decay,
    };

    let delta_half_p = if feas_iter { Some(delta_p(alpha, gamma, p / 2)?) } else { None };
    let delta_pv = if feas_iter { Some(delta_p(alpha, gamma, p)?) } else { None };

    let ctilde_p_halfp = delta_half_p
        .map(|d| ctilde(params.theta.get(p, p / 2), gamma, d.value, pf, pf / 2.0));
    let ctilde_2p_p =
        delta_pv.map(|d| ctilde(params.theta.get(2 * p, p), gamma, d.value, 2.0 * pf, pf));
    let c_p = match (ctilde_p_halfp, ctilde_2p_p) {
        (Some(a), Some(b)) => Some(c_jk_p(p, a, b)?),
        _ => None,
    };

    let h_p = gamma.powf(2.0 * params.s as f64 + 1.0 / pf) / (params.tau * params.tau);

    let one = StateFunction::constant(seq.num_states(), 1.0);
    let mut norm_q1_minus_1 = Vec::with_capacity(n);
    for j in 0..n {
        let q1 = seq.propagator(j, j + 1, Variant::Plain)?.propagate(&one)?;
        norm_q1_minus_1.push(seq.mu(j).lp_norm(&q1.add_scalar(-1.0), pf)?);
    }

    let c_hat = c_p.map(|c| {
        let mut v = Vec::with_capacity(n + 1);
        v.push(0.0);
        let mut acc = 0.0;
        for j in 0..n {
            acc += c * (2.0 + norm_q1_minus_1[j]);
            v.push(acc);
        }
        v
    });
    let c_bar = c_hat.as_ref().map(|v| running_max(v));

    let v_hat_bound: Vec<f64> = (0..=n)
        .map(|k| (k + 1) as f64 * gamma / (params.tau * params.tau))
        .collect();
    let mut v_hat_exact2 = Vec::with_capacity(n + 1);
    for k in 0..=n {
        v_hat_exact2.push(exact_v2(seq, k)?);
    }
    let v_bar_exact2 = running_max(&v_hat_exact2);

    let decay = if feasibility.alpha_in_unit && feas_decay {
        Some(exp_decay_constants(alpha, gamma, p)?)
    } else {
        None
    };

    Ok(StabilityConstants {
        gamma: gamma_est.value,
        gamma_degenerate: gamma_est.degenerate,
        lambdas,
        rho: rho_est.rho,
        rho_min_convention: rho_est.rho_min_convention,
        alpha,
        beta,
        alpha_scale: params.alpha_scale,
        s: params.s,
        p,
        tau: params.tau,
        theta: params.theta.clone(),
        feasibility,
        delta_half_p,
        delta_p: delta_pv,
        ctilde_p_halfp,
        ctilde_2p_p,
        c_p,
        h_p,
        norm_q1_minus_1,
        c_hat,
        c_bar,
        v_hat_bound,
        v_hat_exact2,
        v_bar_exact2,
        decay,
    })
}

fn running_max(values: &[f64]) -> Vec<f64> {
    let mut acc = f64::MIN;
    values
        .iter()
        .map(|&v| {
            acc = acc.max(v);
            acc
        })
        .collect()
}

/// Exact value of `sup { sum_{j=0..k} Var_{mu_j}(q_{j,k} f) : ||f||_{L_2(mu_k)} <= 1 }`
/// as the top eigenvalue of the summed variance quadratic form.
fn exact_v2(seq: &LevelSequence, k: usize) -> Result<f64> {
    let m = seq.num_states();
    let mut form = Mat::zeros(m);
    for j in 0..=k {
        let q = seq.propagator(j, k, Variant::Plain)?;
        let muj = seq.mu(j);
        // Add Q^T diag(mu_j) Q.
        for a in 0..m {
            let row = q.matrix().row(a);
            let w = muj.weight(a);
            for x in 0..m {
                for y in 0..m {
                    form.set(x, y, form.get(x, y) + w * row[x] * row[y]);
                }
            }
        }
    }
    // Subtract (k+1) mu_k mu_k^T (every transported mean equals mu_k(f)).
    let muk = seq.mu(k);
    for x in 0..m {
        for y in 0..m {
            form.set(
                x,
                y,
                form.get(x, y) - (k + 1) as f64 * muk.weight(x) * muk.weight(y),
            );
        }
    }
    // Generalized problem w.r.t. the L2(mu_k) inner product.
    let mut sym = Mat::zeros(m);
    for x in 0..m {
        for y in 0..m {
            sym.set(x, y, form.get(x, y) / (muk.weight(x) * muk.weight(y)).sqrt());
        }
    }
    let ev = crate::math::symmetric_eigenvalues(&sym);
    Ok(ev[0].max(0.0))
}

/// Evaluation of the variance bound for one test function.
#[derive(Debug, Clone)]
pub struct VarianceBound {
    /// Exact `sum_{j=0..n} Var_{mu_j}(q_{j,n} f)`.
    pub sum_var: f64,
    /// `||f||_{L_p(mu_n)}`.
    pub f_norm: f64,
    pub c_hat_n: Option<f64>,
    pub c_bar_n: Option<f64>,
    /// Worst-case error budget used for the tail term (exact `L_2` value).
    pub v_bar_n: f64,
    /// `2 c_bar_n`, the particle count above which the tail closes.
    pub n_threshold: Option<f64>,
    pub threshold_met: bool,
    /// Either `2 v_bar / N` (threshold met) or a user-supplied value.
    pub eps_bar: Option<f64>,
    /// Bound on `N * E[(nu_n(f) - mu_n(f))^2]`.
    pub rhs_n_mse: Option<f64>,
    /// Bound on the mean squared error itself.
    pub mse_bound: Option<f64>,
}

/// Evaluates the non-asymptotic variance bound
/// `N E[(nu_n(f) - mu_n(f))^2] <= sum_j Var_{mu_j}(q_{j,n} f) + ||f||^2 c_hat_n eps_bar`
/// with the exact variance sum and, when `N >= 2 c_bar_n`, the closed tail
/// `eps_bar <= 2 v_bar_n / N`. If the threshold is not met, `user_eps`
/// supplies the error budget instead.
pub fn variance_bound(
    seq: &LevelSequence,
    consts: &StabilityConstants,
    f: &StateFunction,
    n_particles: usize,
    user_eps: Option<f64>,
) -> Result<VarianceBound> {
    let n = seq.n();
    let mut sum_var = 0.0;
    for j in 0..=n {
        let qf = seq.propagator(j, n, Variant::Plain)?.propagate(f)?;
        sum_var += seq.mu(j).variance(&qf)?;
    }
    let f_norm = seq.mu(n).lp_norm(f, consts.p as f64)?;
    let c_hat_n = consts.c_hat.as_ref().map(|v| *v.last().unwrap());
    let c_bar_n = consts.c_bar_n();
    let v_bar_n = consts.v_bar_n();
    let n_threshold = c_bar_n.map(|c| 2.0 * c);
    let threshold_met = n_threshold.is_some_and(|t| n_particles as f64 >= t);
    let eps_bar = if threshold_met {
        Some(2.0 * v_bar_n / n_particles as f64)
    } else {
        user_eps
    };
    let rhs_n_mse = match (c_hat_n, eps_bar) {
        (Some(c), Some(eps)) => Some(sum_var + f_norm * f_norm * c * eps),
        _ => None,
    };
    Ok(VarianceBound {
        sum_var,
        f_norm,
        c_hat_n,
        c_bar_n,
        v_bar_n,
        n_threshold,
        threshold_met,
        eps_bar,
        rhs_n_mse,
        mse_bound: rhs_n_mse.map(|r| r / n_particles as f64),
    })
}

/// Per-level check of the mixing-time lower bounds required by the
/// closed-form parametric bound.
#[derive(Debug, Clone, Copy)]
pub struct MixingTimeCheck {
    pub level: usize,
    pub steps: f64,
    /// `(2p-1) ln(gamma) - ln(1-tau)` over `2 b*`.
    pub required_for_contraction: f64,
    /// `ln(p-1) - ln(p/2-1)` over `2 a*`.
    pub required_for_hyperbound: f64,
    pub pass: bool,
}

/// The closed-form parametric error bound and its particle threshold.
#[derive(Debug, Clone)]
pub struct ExplicitBound {
    pub gamma: f64,
    pub tau: f64,
    pub s: u32,
    pub p: u32,
    pub n: u64,
    pub n_particles: u64,
    /// `A(n) = 1 + n gamma / tau^2`, the first-order bracket.
    pub first_order: f64,
    /// Coefficient of `n` in `A(n)`.
    pub first_order_slope: f64,
    /// `B(n) = n ((1+gamma) v 3) gamma^(2s + 1/p) / tau^2`.
    pub second_order: f64,
    /// Coefficient of `n` in the `1/N^2` term `2 A B`: `2 B(1)`.
    pub tail_n_coeff: f64,
    /// Coefficient of `n^2` in the `1/N^2` term: `2 B(1) * gamma / tau^2`.
    pub tail_n2_coeff: f64,
    /// Threshold `N >= 2 B(n)`.
    pub n_threshold: f64,
    pub threshold_met: bool,
    /// `2 A(n) / N` when the threshold is met.
    pub eps_bar_bound: Option<f64>,
    /// `A/N + 2AB/N^2`; multiply by `||f||^2_{L_p(mu_n)}` for the MSE bound.
    pub mse_coefficient: Option<f64>,
    pub t_checks: Vec<MixingTimeCheck>,
    pub t_inequality_failed: bool,
}

/// Evaluates the closed-form bound for parameters `(gamma, tau, s)` at `n`
/// transitions and `n_particles` particles, checking the per-level mixing
/// time requirements against the supplied rates.
#[allow(clippy::too_many_arguments)]
pub fn explicit_bound(
    gamma: f64,
    tau: f64,
    s: u32,
    n: u64,
    n_particles: u64,
    a_star: &[f64],
    b_star: &[f64],
    steps: &[f64],
) -> Result<ExplicitBound> {
    if s < 2 {
        return Err(Error::InvalidArgument(format!("the closed form requires s >= 2, got {s}")));
    }
    if tau <= 0.0 || tau >= 1.0 || tau.is_nan() {
        return Err(Error::InvalidArgument(format!("tau must lie in (0,1), got {tau}")));
    }
    if a_star.len() != steps.len() || b_star.len() != steps.len() {
        return Err(Error::DimensionMismatch { left: steps.len(), right: a_star.len() });
    }
    let p = 1u32 << s;
    let pf = p as f64;
    let tau2 = tau * tau;
    let slope = gamma / tau2;
    let a_n = 1.0 + n as f64 * slope;
    let branch = (1.0 + gamma).max(3.0);
    let b_unit = branch * gamma.powf(2.0 * s as f64 + 1.0 / pf) / tau2;
    let b_n = n as f64 * b_unit;

    let mut t_checks = Vec::with_capacity(steps.len());
    for (l, &t) in steps.iter().enumerate() {
        let req_b = ((2.0 * pf - 1.0) * gamma.ln() - (1.0 - tau).ln()) / (2.0 * b_star[l]);
        let req_a = ((pf - 1.0).ln() - (pf / 2.0 - 1.0).ln()) / (2.0 * a_star[l]);
        t_checks.push(MixingTimeCheck {
            level: l + 1,
            steps: t,
            required_for_contraction: req_b,
            required_for_hyperbound: req_a,
            pass: t >= req_b && t >= req_a,
        });
    }
    let t_inequality_failed = t_checks.iter().any(|c| !c.pass);

    let n_threshold = 2.0 * b_n;
    let threshold_met = n_particles as f64 >= n_threshold;
    let eps_bar_bound = threshold_met.then(|| 2.0 * a_n / n_particles as f64);
    let mse_coefficient = eps_bar_bound.map(|eps| {
        (a_n + b_n * eps) / n_particles as f64
    });

    Ok(ExplicitBound {
        gamma,
        tau,
        s,
        p,
        n,
        n_particles,
        first_order: a_n,
        first_order_slope: slope,
        second_order: b_n,
        tail_n_coeff: 2.0 * b_unit,
        tail_n2_coeff: 2.0 * b_unit * slope,
        n_threshold,
        threshold_met,
        eps_bar_bound,
        mse_coefficient,
        t_checks,
        t_inequality_failed,
    })
}

/// Per-level mixing rates and step counts for the kernel-level inequalities.
#[derive(Debug, Clone)]
pub struct MixingInputs {
    /// Hypercontractivity rates `a*_k`, one per transition.
    pub a_star: Vec<f64>,
    /// L2-contraction rates `b*_k`, one per transition.
    pub b_star: Vec<f64>,
    /// MCMC steps `t_k` baked into each level kernel.
    pub steps: Vec<f64>,
}

/// The inequality catalog of the randomized falsifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InequalityKind {
    /// One-step hatted bound `||qhat(f)||_2^2 <= alpha ||f||_2^2 + beta mu(f)^2`.
    OneStepL2,
    /// Iterated form with the geometric tail on the mean term.
    IteratedL2,
    /// Uniform L2 contraction `||qhat_{j,k}(f)|| <= (1-alpha)^(-1/2) ||f||`.
    IteratedL2Closed,
    /// `||qhat_{j,k}(f)||_p <= delta(p) ||f||_p` at `p = 2^s`.
    LpStability,
    /// `||q_{j,k}(f)||_p <= ctilde(p,q) ||f||_q` for the two chain legs.
    LpLqStability,
    /// Exponential decay for centered functions.
    CenteredDecay,
    /// Kernel-level L2 contraction at the supplied rate `b*`.
    KernelContraction,
    /// Kernel-level hyperboundedness at the supplied rate `a*`.
    KernelHyperbound,
}

impl InequalityKind {
    pub const ALL: [InequalityKind; 8] = [
        InequalityKind::OneStepL2,
        InequalityKind::IteratedL2,
        InequalityKind::IteratedL2Closed,
        InequalityKind::LpStability,
        InequalityKind::LpLqStability,
        InequalityKind::CenteredDecay,
        InequalityKind::KernelContraction,
        InequalityKind::KernelHyperbound,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            InequalityKind::OneStepL2 => "one-step-l2-bound",
            InequalityKind::IteratedL2 => "iterated-l2-bound",
            InequalityKind::IteratedL2Closed => "iterated-l2-contraction",
            InequalityKind::LpStability => "lp-stability",
            InequalityKind::LpLqStability => "lp-lq-stability",
            InequalityKind::CenteredDecay => "centered-exponential-decay",
            InequalityKind::KernelContraction => "kernel-l2-contraction",
            InequalityKind::KernelHyperbound => "kernel-hyperboundedness",
        }
    }
}

/// Result of hammering one inequality with random and adversarial functions.
#[derive(Debug, Clone)]
pub struct FalsifyOutcome {
    pub kind: InequalityKind,
    pub trials: u64,
    pub max_ratio: f64,
    pub falsified: bool,
}

/// Draws random test functions plus a set of adversarial candidates and
/// returns the worst exactly-evaluated LHS/RHS ratio of the chosen
/// inequality over all applicable level pairs. A ratio above `1 + 1e-10`
/// falsifies the inequality.
pub fn falsify_inequality(
    kind: InequalityKind,
    seq: &LevelSequence,
    consts: &StabilityConstants,
    mixing: Option<&MixingInputs>,
    trials: u64,
    seed: u64,
) -> Result<FalsifyOutcome> {
    let m = seq.num_states();
    let evaluator = RatioEvaluator::new(kind, seq, consts, mixing)?;

    let mut candidates = adversarial_candidates(seq, consts);
    if kind == InequalityKind::OneStepL2 {
        candidates.extend(one_step_extremals(seq, consts)?);
    }
    let candidate_best = candidates
        .iter()
        .map(|f| evaluator.max_ratio(f))
        .fold(0.0f64, f64::max);

    let random_best = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, t);
            let values: Vec<f64> =
                (0..m).map(|_| normal_draw(&mut rng)).collect();
            let f = StateFunction::new(values).expect("normal draws are finite");
            evaluator.max_ratio(&f)
        })
        .reduce(|| 0.0f64, f64::max);

    let max_ratio = candidate_best.max(random_best);
    Ok(FalsifyOutcome { kind, trials, max_ratio, falsified: max_ratio > 1.0 + FALSIFY_TOL })
}

/// Box-Muller standard normal draw.
fn normal_draw(rng: &mut crate::rng::StreamRng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

struct RatioEvaluator<'a> {
    kind: InequalityKind,
    seq: &'a LevelSequence,
    consts: &'a StabilityConstants,
    mixing: Option<&'a MixingInputs>,
    delta_p: f64,
    decay: Option<DecayConstants>,
}

impl<'a> RatioEvaluator<'a> {
    fn new(
        kind: InequalityKind,
        seq: &'a LevelSequence,
        consts: &'a StabilityConstants,
        mixing: Option<&'a MixingInputs>,
    ) -> Result<Self> {
        let needs_mixing = matches!(
            kind,
            InequalityKind::KernelContraction | InequalityKind::KernelHyperbound
        );
        if needs_mixing && mixing.is_none() {
            return Err(Error::InvalidArgument(format!(
                "{} requires per-level mixing rates",
                kind.name()
            )));
        }
        let delta_p = match kind {
            InequalityKind::LpStability => {
                consts
                    .delta_p
                    .ok_or_else(|| Error::Infeasible {
                        inequality: "delta(p) undefined for infeasible alpha".into(),
                    })?
                    .value
            }
            _ => f64::NAN,
        };
        let decay = match kind {
            InequalityKind::CenteredDecay => Some(consts.decay.ok_or_else(|| {
                Error::Infeasible { inequality: "decay constants undefined".into() }
            })?),
            _ => None,
        };
        Ok(RatioEvaluator { kind, seq, consts, mixing, delta_p, decay })
    }

    /// Worst LHS/RHS ratio of the inequality over all applicable level pairs.
    /// `f` is rescaled to unit sup norm first (every inequality in the
    /// catalog is scale-invariant), and sides below the roundoff floor are
    /// skipped so a numerically-zero candidate cannot fake a violation.
    fn max_ratio(&self, raw: &StateFunction) -> f64 {
        let sup = raw.sup_norm();
        if sup == 0.0 {
            return 0.0;
        }
        let f = &raw.map(|v| v / sup);
        let seq = self.seq;
        let consts = self.consts;
        let n = seq.n();
        let mut worst = 0.0f64;
        let mut push = |lhs: f64, rhs: f64| {
            if rhs > 1e-14 {
                worst = worst.max(lhs / rhs);
            } else if lhs > 1e-14 {
                worst = f64::INFINITY;
            }
        };
        match self.kind {
            InequalityKind::OneStepL2 => {
                for k in 2..=n {
                    let q = seq.propagator(k - 1, k, Variant::Hatted).unwrap();
                    let qf = q.propagate(f).unwrap();
                    let lhs = seq.mu(k - 1).lp_norm(&qf, 2.0).unwrap().powi(2);
                    let norm = seq.mu(k).lp_norm(f, 2.0).unwrap();
                    let mean = seq.mu(k).integrate(f).unwrap();
                    push(lhs, consts.alpha * norm * norm + consts.beta * mean * mean);
                }
            }
            InequalityKind::IteratedL2 => {
                for j in 1..n {
                    for k in (j + 1)..=n {
                        let q = seq.propagator(j, k, Variant::Hatted).unwrap();
                        let qf = q.propagate(f).unwrap();
                        let lhs = seq.mu(j).lp_norm(&qf, 2.0).unwrap().powi(2);
                        let norm = seq.mu(k).lp_norm(f, 2.0).unwrap();
                        let mean = seq.mu(k).integrate(f).unwrap();
                        let rhs = consts.alpha.powi((k - j) as i32) * norm * norm
                            + consts.beta / (1.0 - consts.alpha) * mean * mean;
                        push(lhs, rhs);
                    }
                }
            }
            InequalityKind::IteratedL2Closed => {
                let factor = (1.0 - consts.alpha).sqrt().recip();
                for j in 1..n {
                    for k in (j + 1)..=n {
                        let q = seq.propagator(j, k, Variant::Hatted).unwrap();
                        let qf = q.propagate(f).unwrap();
                        let lhs = seq.mu(j).lp_norm(&qf, 2.0).unwrap();
                        push(lhs, factor * seq.mu(k).lp_norm(f, 2.0).unwrap());
                    }
                }
            }
            InequalityKind::LpStability => {
                let p = consts.p as f64;
                for j in 1..n {
                    for k in (j + 1)..=n {
                        let q = seq.propagator(j, k, Variant::Hatted).unwrap();
                        let qf = q.propagate(f).unwrap();
                        let lhs = seq.mu(j).lp_norm(&qf, p).unwrap();
                        push(lhs, self.delta_p * seq.mu(k).lp_norm(f, p).unwrap());
                    }
                }
            }
            InequalityKind::LpLqStability => {
                let p = consts.p as f64;
                let legs = [
                    (p, p / 2.0, self.consts.ctilde_p_halfp),
                    (2.0 * p, p, self.consts.ctilde_2p_p),
                ];
                for (pp, qq, c) in legs {
                    let Some(c) = c else { continue };
                    for j in 1..n {
                        for k in (j + 1)..=n {
                            let q = seq.propagator(j, k, Variant::Plain).unwrap();
                            let qf = q.propagate(f).unwrap();
                            let lhs = seq.mu(j).lp_norm(&qf, pp).unwrap();
                            push(lhs, c * seq.mu(k).lp_norm(f, qq).unwrap());
                        }
                    }
                }
            }
            InequalityKind::CenteredDecay => {
                let p = consts.p as f64;
                let decay = self.decay.unwrap();
                for k in 2..=n {
                    let centered = f.add_scalar(-seq.mu(k).integrate(f).unwrap());
                    for j in 1..k {
                        let q = seq.propagator(j, k, Variant::Hatted).unwrap();
                        let qf = q.propagate(&centered).unwrap();
                        let lhs = seq.mu(j).lp_norm(&qf, p).unwrap().powf(p);
                        let rhs = decay.decay_lambda
                            * decay.decay_theta.powi((k - j) as i32)
                            * seq.mu(k).lp_norm(&centered, p).unwrap().powf(p);
                        push(lhs, rhs);
                    }
                }
            }
            InequalityKind::KernelContraction => {
                let mixing = self.mixing.unwrap();
                for k in 1..=n {
                    let mu = seq.mu(k);
                    let mean = mu.integrate(f).unwrap();
                    let centered = f.add_scalar(-mean);
                    let kf = seq.kernel(k).apply(f).unwrap().add_scalar(-mean);
                    let lhs = mu.lp_norm(&kf, 2.0).unwrap().powi(2);
                    let rate = (-2.0 * mixing.b_star[k - 1] * mixing.steps[k - 1]).exp();
                    push(lhs, rate * mu.lp_norm(&centered, 2.0).unwrap().powi(2));
                }
            }
            InequalityKind::KernelHyperbound => {
                let mixing = self.mixing.unwrap();
                for k in 1..=n {
                    let mu = seq.mu(k);
                    let kf = seq.kernel(k).apply(f).unwrap();
                    for p in [2.0, consts.p as f64] {
                        let q = 1.0
                            + (p - 1.0)
                                * (2.0 * mixing.a_star[k - 1] * mixing.steps[k - 1]).exp();
                        let lhs = mu.lp_norm(&kf, q).unwrap();
                        push(lhs, mu.lp_norm(f, p).unwrap());
                    }
                }
            }
        }
        worst
    }
}

/// Deterministic adversarial candidates: constants, indicators, the
/// normalized potentials, and the leading non-trivial eigenvectors of each
/// symmetrized level kernel mapped back to function space.
fn adversarial_candidates(seq: &LevelSequence, _consts: &StabilityConstants) -> Vec<StateFunction> {
    let m = seq.num_states();
    let mut out = vec![StateFunction::constant(m, 1.0)];
    for x in 0..m {
        out.push(StateFunction::indicator(m, x));
    }
    for k in 1..=seq.n() {
        out.push(seq.normalized_potential(k).clone());
        let mu = seq.mu(k);
        let kernel = seq.kernel(k);
        let mut s = Mat::zeros(m);
        for i in 0..m {
            for j in 0..m {
                s.set(i, j, kernel.entry(i, j) * (mu.weight(i) / mu.weight(j)).sqrt());
            }
        }
        let (_, vectors) = symmetric_eigen(&s);
        for vec in vectors.iter().skip(1).take(2) {
            let values: Vec<f64> =
                (0..m).map(|x| vec[x] / mu.weight(x).sqrt()).collect();
            if let Ok(f) = StateFunction::new(values) {
                out.push(f);
            }
        }
    }
    out
}

/// Exact extremal functions of the one-step L2 inequality, one per level:
/// the top generalized eigenvector of LHS-form versus RHS-form.
fn one_step_extremals(
    seq: &LevelSequence,
    consts: &StabilityConstants,
) -> Result<Vec<StateFunction>> {
    let m = seq.num_states();
    if consts.alpha <= 0.0 {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for k in 2..=seq.n() {
        let q = seq.propagator(k - 1, k, Variant::Hatted)?;
        let mu_prev = seq.mu(k - 1);
        let mu_k = seq.mu(k);
        // LHS form: Q^T diag(mu_{k-1}) Q.
        let mut lhs = Mat::zeros(m);
        for a in 0..m {
            let row = q.matrix().row(a);
            let w = mu_prev.weight(a);
            for x in 0..m {
                for y in 0..m {
                    lhs.set(x, y, lhs.get(x, y) + w * row[x] * row[y]);
                }
            }
        }
        // RHS form: alpha diag(mu_k) + beta mu_k mu_k^T.
        let mut rhs = Mat::zeros(m);
        for x in 0..m {
            for y in 0..m {
                let mut v = consts.beta * mu_k.weight(x) * mu_k.weight(y);
                if x == y {
                    v += consts.alpha * mu_k.weight(x);
                }
                rhs.set(x, y, v);
            }
        }
        let r_inv_sqrt = sym_inv_sqrt(&rhs);
        let pencil = r_inv_sqrt.mul(&lhs).mul(&r_inv_sqrt);
        let (_, vectors) = symmetric_eigen(&pencil);
        let f = r_inv_sqrt.matvec(&vectors[0]);
        if let Ok(func) = StateFunction::new(f) {
            out.push(func);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::{fixture_a, trivial_model, trivial_model_n};

    #[test]
    fn gamma_bound_examples() {
        let seq = fixture_a();
        let g = gamma_bound(&seq);
        assert!(!g.degenerate);
        // Direct enumeration oracle.
        let mut expect = 0.0f64;
        for k in 1..=seq.n() {
            for &v in seq.normalized_potential(k).values() {
                expect = expect.max(v);
            }
        }
        assert_eq!(g.value, expect);
        assert!(g.value > 1.8 && g.value < 1.9);

        let flat = trivial_model();
        let gf = gamma_bound(&flat);
        assert!(gf.degenerate);
        assert_eq!(gf.value, 1.0);
        assert!(gf.effective() > 1.0);
    }

    #[test]
    fn poincare_constant_examples() {
        let mu = ProbMeasure::new(vec![2.0 / 3.0, 1.0 / 3.0]).unwrap();
        let k = MarkovKernel::from_rows(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let lambda = poincare_constant(&k, &mu).unwrap();
        assert!((lambda - 0.3).abs() < 1e-10, "lambda = {lambda}");

        let mixing = MarkovKernel::from_rows(vec![mu.weights().to_vec(); 2]).unwrap();
        assert!((poincare_constant(&mixing, &mu).unwrap() - 1.0).abs() < 1e-12);

        let id = MarkovKernel::identity(2);
        assert!(poincare_constant(&id, &mu).unwrap().abs() < 1e-12);
    }

    #[test]
    fn poincare_rejects_non_reversible() {
        let cycle = MarkovKernel::from_rows(vec![
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ])
        .unwrap();
        let mu = ProbMeasure::uniform(3);
        assert!(matches!(
            poincare_constant(&cycle, &mu),
            Err(Error::NotReversible { .. })
        ));
    }

    #[test]
    fn poincare_matches_power_iteration_oracle() {
        // Independent check: power iteration on the symmetrized kernel with
        // the top eigenvector sqrt(mu) deflated.
        let seq = fixture_a();
        for k in 1..=seq.n() {
            let mu = seq.mu(k);
            let kernel = seq.kernel(k);
            let m = kernel.size();
            let mut s = Mat::zeros(m);
            for i in 0..m {
                for j in 0..m {
                    s.set(i, j, kernel.entry(i, j) * (mu.weight(i) / mu.weight(j)).sqrt());
                }
            }
            let top: Vec<f64> = (0..m).map(|i| mu.weight(i).sqrt()).collect();
            let mut v: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5).sin()).collect();
            let mut ev2 = 0.0;
            for _ in 0..20_000 {
                let dot: f64 = v.iter().zip(&top).map(|(a, b)| a * b).sum();
                for i in 0..m {
                    v[i] -= dot * top[i];
                }
                let w = s.matvec(&v);
                let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                ev2 = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v = w.iter().map(|x| x / norm).collect();
            }
            let lambda = poincare_constant(kernel, mu).unwrap();
            assert!((lambda - (1.0 - ev2)).abs() < 1e-10, "level {k}: {lambda} vs {}", 1.0 - ev2);
        }
    }

    #[test]
    fn rho_from_gaps_examples() {
        let all_one = rho_from_gaps(&[1.0, 1.0]);
        assert_eq!(all_one.rho, 1.0);
        assert!(all_one.feasible);

        let single = rho_from_gaps(&[0.3]);
        assert!((single.rho - 0.51).abs() < 1e-15);
        assert!((single.rho_min_convention - 0.49).abs() < 1e-15);

        let pair = rho_from_gaps(&[0.3, 0.6]);
        assert!((pair.rho - 0.51).abs() < 1e-15);
        assert!((pair.rho_min_convention - 0.16).abs() < 1e-15);

        assert!(!rho_from_gaps(&[0.0, 0.5]).feasible);
    }

    #[test]
    fn alpha_beta_examples() {
        let ab = alpha_beta(1.0, 2.0);
        assert_eq!((ab.alpha, ab.beta), (0.0, 1.0));

        let ab = alpha_beta(0.51, 2.0);
        assert!((ab.alpha - 0.98).abs() < 1e-15);
        assert!((ab.beta - 0.51).abs() < 1e-15);
        assert!(ab.feasible);

        let ab = alpha_beta(0.2, 2.0);
        assert!((ab.alpha - 1.6).abs() < 1e-15);
        assert!(!ab.feasible);
    }

    #[test]
    fn delta_p_closed_form_at_two() {
        for &alpha in &[0.0, 0.1, 0.5, 0.9] {
            for &gamma in &[1.0, 1.5, 2.0, 4.0] {
                let d = delta_p(alpha, gamma, 2).unwrap();
                let expect = (1.0 - alpha).sqrt().recip();
                assert!(
                    (d.value - expect).abs() <= 1e-15 * expect,
                    "alpha={alpha} gamma={gamma}: {} vs {expect}",
                    d.value
                );
            }
        }
    }

    #[test]
    fn delta_p_zero_alpha_is_pure_density_penalty() {
        let gamma: f64 = 1.7;
        for p in [2u32, 4, 8, 16] {
            let d = delta_p(0.0, gamma, p).unwrap();
            let r = p.trailing_zeros();
            let mut expect = 1.0;
            for i in 1..=r {
                expect *= gamma.powf(1.0 - 2f64.powi(-(i as i32 - 1)));
            }
            assert!((d.value - expect).abs() < 1e-12 * expect);
        }
    }

    #[test]
    fn delta_p_term_by_term_oracle() {
        // Independent term-by-term evaluation at alpha=0.5, gamma=1.2, p=4.
        let (alpha, gamma): (f64, f64) = (0.5, 1.2);
        let d = delta_p(alpha, gamma, 4).unwrap();
        let t1 = gamma.powf(0.0) / (1.0 - alpha * gamma.powf(0.0)).powf(0.5);
        let t2 = gamma.powf(0.5) / (1.0 - alpha * gamma.powf(2.0)).powf(0.25);
        assert!((d.value - t1 * t2).abs() < 1e-14);
        assert!(d.value <= d.closed_form_bound);
    }

    #[test]
    fn delta_p_product_below_closed_form_on_grid() {
        for &alpha in &[0.0f64, 0.05, 0.2, 0.5] {
            for &gamma in &[1.0f64, 1.3, 2.0] {
                for &p in &[2u32, 4, 8] {
                    if alpha * gamma.powf(p as f64 - 2.0) < 1.0 {
                        let d = delta_p(alpha, gamma, p).unwrap();
                        assert!(d.value <= d.closed_form_bound * (1.0 + 1e-12));
                    }
                }
            }
        }
    }

    #[test]
    fn delta_p_infeasible_is_reported() {
        assert!(matches!(
            delta_p(0.9, 2.0, 8),
            Err(Error::Infeasible { .. })
        ));
        assert!(delta_p(0.5, 2.0, 3).is_err());
    }

    #[test]
    fn delta_p_poincare_form_agrees_after_substitution() {
        for &rho in &[0.9f64, 0.99, 0.999] {
            for &gamma in &[1.2f64, 1.8, 2.0] {
                for &p in &[2u32, 4, 8] {
                    let alpha = (1.0 - rho) * gamma;
                    if alpha * gamma.powf(p as f64 - 2.0) >= 1.0 {
                        continue;
                    }
                    let a = delta_p(alpha, gamma, p).unwrap();
                    let b = delta_p_poincare(rho, gamma, p).unwrap();
                    assert!((a.value - b.value).abs() < 1e-12 * a.value);
                    assert!(
                        (a.closed_form_bound - b.closed_form_bound).abs()
                            < 1e-12 * a.closed_form_bound
                    );
                }
            }
        }
    }

    #[test]
    fn delta_p_general_rounds_up() {
        let (alpha, gamma) = (0.1, 1.5);
        let d2 = delta_p(alpha, gamma, 2).unwrap();
        let d4 = delta_p(alpha, gamma, 4).unwrap();
        assert_eq!(delta_p_general(alpha, gamma, 2.0).unwrap().value, d2.value);
        assert_eq!(delta_p_general(alpha, gamma, 3.0).unwrap().value, d4.value);
        assert_eq!(delta_p_general(alpha, gamma, 4.0).unwrap().value, d4.value);
        assert_eq!(delta_p_general(alpha, gamma, 1.0).unwrap().value, 1.0);
        assert!(delta_p_general(alpha, gamma, 0.5).is_err());
    }

    #[test]
    fn ctilde_examples() {
        assert_eq!(ctilde(1.0, 1.0, 3.7, 4.0, 2.0), 3.7);

        // p = q with theta = 1: gamma^(2(p-1)/p) * delta(p).
        let (gamma, delta, p): (f64, f64, f64) = (1.5, 1.2, 4.0);
        let got = ctilde(1.0, gamma, delta, p, p);
        assert!((got - gamma.powf(2.0 * (p - 1.0) / p) * delta).abs() < 1e-14);

        // Parametric specialization: the same-norm route with the
        // closed-form delta gives gamma^(s - 1 + 1/p) / tau.
        let (gamma, tau, s): (f64, f64, u32) = (2.0, 0.8, 2);
        let p = 2f64.powi(s as i32);
        let delta_param = gamma.powf(s as f64 - 2.0 + 2.0 / p) / tau;
        let tight = ctilde_same_p(gamma, delta_param, p);
        assert!((tight - gamma.powf(s as f64 - 1.0 + 1.0 / p) / tau).abs() < 1e-12);
    }

    #[test]
    fn c_jk_p_examples() {
        assert_eq!(c_jk_p(4, 4.0, 2.0).unwrap(), 4.0);
        assert_eq!(c_jk_p(4, 3.0, 2.0).unwrap(), 4.0);
        assert!(c_jk_p(2, 1.0, 1.0).is_err());

        // Parametric ceiling h(p) = gamma^(2s + 1/p) / tau^2 dominates c(p)
        // when built from the closed-form constants: the squared (2p, p) leg
        // equals h(p) exactly and the (p, p/2) leg sits below it.
        let (gamma, tau, s): (f64, f64, u32) = (2.0, 0.8, 2);
        let p = 2f64.powi(s as i32);
        let delta_p_form = |q: f64| gamma.powf(q.log2() - 2.0 + 2.0 / q) / tau;
        let ct_2p_p = ctilde(1.0, gamma, delta_p_form(p), 2.0 * p, p);
        let ct_p_p2 = ctilde(1.0, gamma, delta_p_form(p / 2.0), p, p / 2.0);
        let c = c_jk_p(4, ct_p_p2, ct_2p_p).unwrap();
        let h = gamma.powf(2.0 * s as f64 + 1.0 / p) / (tau * tau);
        assert!(c <= h * (1.0 + 1e-12), "c = {c}, h = {h}");
        assert!((ct_2p_p * ct_2p_p - h).abs() < 1e-12 * h);
        assert!((ct_p_p2 - gamma.powf(s as f64 - 1.0 + 1.0 / p) / tau).abs() < 1e-12);
    }

    #[test]
    fn exp_decay_examples() {
        let d = exp_decay_constants(0.3, 1.5, 2).unwrap();
        assert_eq!(d.decay_lambda, 1.0);
        assert!((d.decay_theta - 0.3 * 1.5f64.powi(2)).abs() < 1e-15);

        let (alpha, gamma): (f64, f64) = (0.1, 1.1);
        let d4 = exp_decay_constants(alpha, gamma, 4).unwrap();
        let expect = 1.0 + (alpha * (1.0 - alpha / (gamma * gamma))).recip();
        assert!((d4.decay_lambda - expect).abs() < 1e-12);

        let d8 = exp_decay_constants(alpha, gamma, 8).unwrap();
        let kappa = 2.0 * (alpha * (1.0 - alpha / (gamma * gamma))).recip();
        assert!(d8.decay_lambda <= kappa.powi(3) * (1.0 + 1e-12));

        assert!(matches!(
            exp_decay_constants(0.9, 2.0, 4),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn chain_constants_trivial_one_level() {
        let seq = trivial_model();
        let consts = chain_constants(&seq, &ChainParams::new(2, 0.8)).unwrap();
        assert!(consts.gamma_degenerate);
        assert!((consts.rho - 1.0).abs() < 1e-12);
        assert!(consts.alpha.abs() < 1e-10);
        // ||q_{0,1}(1) - 1|| = 0, so c_hat_1 = 2 c(p).
        assert!(consts.norm_q1_minus_1[0] < 1e-12);
        let c_hat = consts.c_hat.as_ref().unwrap();
        let c_p = consts.c_p.unwrap();
        assert!((c_hat[1] - 2.0 * c_p).abs() < 1e-10);
    }

    #[test]
    fn chain_constants_fixture_a() {
        let seq = fixture_a();
        let consts = chain_constants(&seq, &ChainParams::new(2, 0.8)).unwrap();
        assert!(consts.feasibility.chain_complete(), "{:?}", consts.feasibility);
        assert!(consts.gamma > 1.8 && consts.gamma < 1.9);
        assert!(consts.alpha > 0.0 && consts.alpha < 0.1);
        assert_eq!(consts.lambdas.len(), 2);
        assert!(consts.lambdas.iter().all(|&l| l > 0.85 && l < 1.0));

        // Monotone running maxima.
        let c_bar = consts.c_bar.as_ref().unwrap();
        assert!(c_bar.windows(2).all(|w| w[0] <= w[1]));
        assert!(consts.v_bar_exact2.windows(2).all(|w| w[0] <= w[1]));

        // Exact v2 must sit below the parametric ceiling for a fixture whose
        // mixing is much stronger than the ceiling assumes.
        for k in 0..=seq.n() {
            assert!(consts.v_hat_exact2[k] <= consts.v_hat_bound[k]);
        }
    }

    #[test]
    fn exact_v2_trivial_model_is_one() {
        // Perfect mixing transports everything to constants, so only the
        // final level's variance survives and the worst case over the unit
        // L2 ball is exactly 1.
        let seq = trivial_model();
        let consts = chain_constants(&seq, &ChainParams::new(2, 0.8)).unwrap();
        assert!((consts.v_hat_exact2[0] - 1.0).abs() < 1e-10);
        assert!((consts.v_hat_exact2[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn exact_v2_matches_random_search_oracle() {
        // Independent check of the eigensolve: evaluate the raw variance sum
        // on random functions; no ratio may exceed the reported sup, and the
        // sup must be approached.
        use rand::Rng;
        let seq = fixture_a();
        let consts = chain_constants(&seq, &ChainParams::new(2, 0.8)).unwrap();
        let k = seq.n();
        let sup = consts.v_hat_exact2[k];
        let mut rng = crate::rng::stream_rng(77, 0);
        let mut best = 0.0f64;
        for _ in 0..20_000 {
            let f = StateFunction::new((0..4).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
                .unwrap();
            let norm = seq.mu(k).lp_norm(&f, 2.0).unwrap();
            if norm < 1e-8 {
                continue;
            }
            let mut sum = 0.0;
            for j in 0..=k {
                let qf = seq.propagator(j, k, Variant::Plain).unwrap().propagate(&f).unwrap();
                sum += seq.mu(j).variance(&qf).unwrap();
            }
            let ratio = sum / (norm * norm);
            assert!(ratio <= sup * (1.0 + 1e-10), "ratio {ratio} exceeds sup {sup}");
            best = best.max(ratio);
        }
        assert!(best > 0.95 * sup, "random search only reached {best} of {sup}");
    }

    #[test]
    fn variance_bound_zero_transitions() {
        let space = crate::measures::StateSpace::new(3).unwrap();
        let mu = ProbMeasure::new(vec![0.2, 0.3, 0.5]).unwrap();
        let seq = crate::feynman_kac::LevelSequence::new(space, vec![mu], vec![], vec![]).unwrap();
        let consts = chain_constants(&seq, &ChainParams::new(2, 0.8)).unwrap();
        let f = StateFunction::new(vec![1.0, -1.0, 2.0]).unwrap();
        let bound = variance_bound(&seq, &consts, &f, 100, None).unwrap();
        let var = seq.mu(0).variance(&f).unwrap();
        assert!((bound.sum_var - var).abs() < 1e-12);
        assert!(bound.threshold_met);
        assert!((bound.rhs_n_mse.unwrap() - var).abs() < 1e-12);
        assert!((bound.mse_bound.unwrap() - var / 100.0).abs() < 1e-14);
    }

    #[test]
    fn variance_bound_rhs_dominates_exact_variance_sum() {
        let seq = fixture_a();
        let consts = chain_constants(&seq, &ChainParams::new(2, 0.8)).unwrap();
        let f = StateFunction::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let n_req = consts.c_bar_n().unwrap() * 2.0;
        let bound = variance_bound(&seq, &consts, &f, n_req.ceil() as usize, None).unwrap();
        assert!(bound.threshold_met);
        assert!(bound.rhs_n_mse.unwrap() >= bound.sum_var);
    }

    #[test]
    fn variance_bound_constant_function_is_finite() {
        // f = 1 transports to the normalized potentials; every term of the
        // bound stays finite and the variance sum is the tiny wobble of the
        // gbar chain.
        let seq = fixture_a();
        let consts = chain_constants(&seq, &ChainParams::new(2, 0.8)).unwrap();
        let one = StateFunction::constant(4, 1.0);
        let bound = variance_bound(&seq, &consts, &one, 256, None).unwrap();
        assert!(bound.sum_var.is_finite() && bound.sum_var >= 0.0);
        assert!(bound.rhs_n_mse.unwrap().is_finite());
        assert!((bound.f_norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn explicit_bound_parametric_example() {
        // gamma = 2, tau = 0.8, s = 2: first order 1 + 3.125 n, tail
        // coefficients about 178.4 n and 557.4 n^2, all dominated by the
        // rounded 4n / 180n / 560n^2.
        let b = explicit_bound(2.0, 0.8, 2, 3, 10_000, &[0.1; 3], &[0.3; 3], &[12.0; 3]).unwrap();
        assert!((b.first_order_slope - 3.125).abs() < 1e-12);
        assert!(b.first_order_slope <= 4.0);
        assert!((b.tail_n_coeff - 178.379).abs() < 0.01, "{}", b.tail_n_coeff);
        assert!(b.tail_n_coeff >= 170.0 && b.tail_n_coeff <= 180.0);
        assert!((b.tail_n2_coeff - 557.435).abs() < 0.01, "{}", b.tail_n2_coeff);
        assert!(b.tail_n2_coeff >= 550.0 && b.tail_n2_coeff <= 560.0);
        // Threshold is ~178.4 per transition.
        assert!((b.n_threshold / 3.0 - 178.379).abs() < 0.01);
    }

    #[test]
    fn explicit_bound_branch_selection() {
        // gamma = 1: the (1+gamma) v 3 factor takes the 3 branch and the
        // gamma powers collapse.
        let b = explicit_bound(1.0, 0.5, 2, 2, 1000, &[1.0; 2], &[1.0; 2], &[10.0; 2]).unwrap();
        let tau2 = 0.25;
        assert!((b.n_threshold - 2.0 * 3.0 * 2.0 / tau2).abs() < 1e-12);

        // gamma = 3: the max takes the 1 + gamma = 4 branch.
        let b3 = explicit_bound(3.0, 0.5, 2, 1, 1000, &[1.0], &[1.0], &[10.0]).unwrap();
        let expect = 2.0 * 4.0 * 3f64.powf(4.25) / tau2;
        assert!((b3.n_threshold - expect).abs() < 1e-9);
    }

    #[test]
    fn explicit_bound_t_checks() {
        let b = explicit_bound(2.0, 0.8, 2, 1, 1000, &[0.01], &[0.01], &[5.0]).unwrap();
        assert!(b.t_inequality_failed);
        assert!(!b.t_checks[0].pass);
        assert!(explicit_bound(2.0, 0.8, 1, 1, 10, &[1.0], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn falsifier_trivial_model_ratio_at_most_one() {
        // Perfect mixing: alpha = 0, the one-step bound holds with equality
        // at constants.
        let seq = trivial_model_n(2);
        let consts = chain_constants(&seq, &ChainParams::new(2, 0.8)).unwrap();
        let out =
            falsify_inequality(InequalityKind::OneStepL2, &seq, &consts, None, 500, 3).unwrap();
        assert!(!out.falsified, "ratio {}", out.max_ratio);
        assert!(out.max_ratio <= 1.0 + 1e-10);
    }

    #[test]
    fn falsifier_accepts_fixture_a_with_derived_constants() {
        let seq = fixture_a();
        let consts = chain_constants(&seq, &ChainParams::new(2, 0.8)).unwrap();
        let mixing = MixingInputs {
            a_star: vec![0.1, 0.1],
            b_star: vec![0.29, 0.29],
            steps: vec![8.0, 8.0],
        };
        for kind in InequalityKind::ALL {
            let out = falsify_inequality(kind, &seq, &consts, Some(&mixing), 2000, 5).unwrap();
            assert!(
                !out.falsified,
                "{} falsified with ratio {}",
                kind.name(),
                out.max_ratio
            );
        }
    }

    #[test]
    fn falsifier_detects_undersized_alpha() {
        let seq = fixture_a();
        let mut params = ChainParams::new(2, 0.8);
        params.alpha_scale = 0.5;
        let consts = chain_constants(&seq, &params).unwrap();
        let out =
            falsify_inequality(InequalityKind::OneStepL2, &seq, &consts, None, 2000, 7).unwrap();
        assert!(out.falsified, "halved alpha must be detected, ratio {}", out.max_ratio);
        assert!(out.max_ratio > 1.0 + 1e-6);
    }

    #[test]
    fn falsifier_requires_mixing_rates_for_kernel_checks() {
        let seq = fixture_a();
        let consts = chain_constants(&seq, &ChainParams::new(2, 0.8)).unwrap();
        assert!(falsify_inequality(
            InequalityKind::KernelContraction,
            &seq,
            &consts,
            None,
            10,
            1
        )
        .is_err());
    }
}
