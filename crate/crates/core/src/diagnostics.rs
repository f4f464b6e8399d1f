//! Empirical-versus-exact verification of the particle system's moment
//! identities.
//!
//! The central check is the variance identity for the weighted estimator:
//! the mean squared error of `nu_n(f)` equals `(1/N) Var_{mu_n}(f)` plus the
//! mean of the per-level correction terms `V_{j,n}`, all of which are
//! evaluated here with exact propagators on the same replications that
//! produced the empirical error. The module also evaluates the two bounds
//! transferring `nu`-error to `eta`-error, and the martingale constructions
//! whose increments must average to zero.
//!
//! Every Monte Carlo assertion is of the form |estimate - target| <= 4 SE
//! with the standard error taken from the replication sample itself.

use crate::error::{Error, Result};
use crate::feynman_kac::{LevelSequence, Variant};
use crate::math::pairwise_sum;
use crate::measures::StateFunction;
use crate::particles::{self, ParticleCloud, RunRecord};

/// Mean and standard error of a replication sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    fn from_sample(values: &[f64]) -> Estimate {
        let n = values.len() as f64;
        let mean = pairwise_sum(values) / n;
        let centered: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = if values.len() > 1 { pairwise_sum(&centered) / (n - 1.0) } else { 0.0 };
        Estimate { mean, se: (var / n).sqrt() }
    }

    /// Whether `mean` is within `4 SE` of `target`.
    pub fn within_4se(&self, target: f64) -> bool {
        (self.mean - target).abs() <= 4.0 * self.se
    }
}

/// Sample variance of a replication sample.
fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    let centered: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    if values.len() > 1 {
        pairwise_sum(&centered) / (n - 1.0)
    } else {
        0.0
    }
}

/// Per-level correction term of the variance identity,
/// `V_{j,n}(f) = nu_j(1) nu_j(q_{j,n}(f)^2) - nu_j(q_{j,n}(f))^2
///             + nu_j(q_{j,j+1}(1) - 1) nu_j(q_{j,n}(f^2))`,
/// evaluated with exact propagators.
pub fn v_term(
    seq: &LevelSequence,
    cloud: &ParticleCloud,
    n: usize,
    f: &StateFunction,
) -> Result<f64> {
    let j = cloud.level();
    if j >= n || n > seq.n() {
        return Err(Error::InvalidArgument(format!(
            "v_term requires 0 <= j < n <= {}, got j={j}, n={n}",
            seq.n()
        )));
    }
    let qjn = seq.propagator(j, n, Variant::Plain)?;
    let qf = qjn.propagate(f)?;
    let qf2 = qjn.propagate(&f.squared())?;
    let one = StateFunction::constant(seq.num_states(), 1.0);
    let q1 = seq.propagator(j, j + 1, Variant::Plain)?.propagate(&one)?;

    let nu_one = cloud.nu(&one)?;
    let nu_qf_sq = cloud.nu(&qf.squared())?;
    let nu_qf = cloud.nu(&qf)?;
    let nu_q1_minus_1 = cloud.nu(&q1.add_scalar(-1.0))?;
    let nu_qf2 = cloud.nu(&qf2)?;
    Ok(nu_one * nu_qf_sq - nu_qf * nu_qf + nu_q1_minus_1 * nu_qf2)
}

/// Verification report for one test function.
#[derive(Debug, Clone)]
pub struct VarianceReport {
    pub n_particles: usize,
    pub replications: u64,
    pub aborted: u64,
    /// Exact `mu_n(f)`.
    pub mu_f: f64,
    /// Exact `Var_{mu_n}(f)`.
    pub exact_var: f64,
    /// Replication mean of `nu_n(f)`.
    pub nu_estimate: Estimate,
    /// Empirical `E[(nu_n(f) - mu_n(f))^2]`.
    pub empirical_mse_nu: Estimate,
    /// `(1/N)(Var_{mu_n}(f) + mean sum_j V_{j,n})`.
    pub formula_rhs: Estimate,
    /// Paired per-replication difference LHS - RHS; its mean must sit
    /// within 4 SE of zero for the identity to pass.
    pub identity_gap: Estimate,
    /// Replication mean of each `V_{j,n}`, `j = 0..n-1`.
    pub per_level_v: Vec<Estimate>,
    /// Sample variance of `nu_n(f_n)` with `f_n = f - mu_n(f)`.
    pub var_nu_fn: f64,
    /// Sample variance of `nu_n(1)`.
    pub var_nu_one: f64,
    /// Empirical `E[(eta_n(f) - mu_n(f))^2]`.
    pub mse_eta: f64,
    /// Empirical `E[|eta_n(f) - mu_n(f)|]`.
    pub mae_eta: f64,
    /// Exact sup norm of the centered function.
    pub sup_fn: f64,
}

impl VarianceReport {
    /// Prop-2.4-style identity check: paired difference within 4 SE of zero.
    pub fn identity_pass(&self) -> bool {
        self.identity_gap.within_4se(0.0)
    }

    /// Unbiasedness check: replication mean of `nu_n(f)` within 4 SE of `mu_n(f)`.
    pub fn unbiased_pass(&self) -> bool {
        self.nu_estimate.within_4se(self.mu_f)
    }
}

/// The two `eta`-error bounds evaluated from replication estimates, next to
/// their empirical left-hand sides.
#[derive(Debug, Clone, Copy)]
pub struct EtaErrorBounds {
    pub mse_lhs: f64,
    pub mse_rhs: f64,
    pub mae_lhs: f64,
    pub mae_rhs: f64,
}

impl EtaErrorBounds {
    pub fn both_hold(&self) -> bool {
        self.mse_lhs <= self.mse_rhs && self.mae_lhs <= self.mae_rhs
    }
}

/// Evaluates the squared-error and absolute-error transfer bounds
/// (`2 Var(nu(f_n)) + 2 ||f_n||^2 Var(nu(1))` and its absolute-error
/// companion) from the replication estimates stored in `report`.
pub fn eta_error_bounds(report: &VarianceReport) -> EtaErrorBounds {
    let vf = report.var_nu_fn;
    let v1 = report.var_nu_one;
    let s = report.sup_fn;
    EtaErrorBounds {
        mse_lhs: report.mse_eta,
        mse_rhs: 2.0 * vf + 2.0 * s * s * v1,
        mae_lhs: report.mae_eta,
        mae_rhs: vf.sqrt() + std::f64::consts::SQRT_2 * s * v1 + std::f64::consts::SQRT_2 * vf.sqrt() * v1.sqrt(),
    }
}

/// Everything the verification run extracts from one replication, for every
/// dictionary function.
struct RepSample {
    nu_one: f64,
    per_f: Vec<FnSample>,
}

struct FnSample {
    eta_f: f64,
    /// `nu_j(f)` for `j = 0..=n`.
    nu_by_level: Vec<f64>,
    /// `V_{j,n}` for `j = 0..n-1`.
    v_levels: Vec<f64>,
}

/// Replication bundle for a dictionary of test functions: one shared set of
/// particle runs, one [`VarianceReport`] per function, and the per-level
/// dictionary lower bound on the worst-case `nu`-error.
pub struct DictionaryReport {
    pub reports: Vec<VarianceReport>,
    /// `max_f E[(nu_j(f~) - mu_j(f~))^2]` over the dictionary with `f~`
    /// normalized in `L_p(mu_j)`; a lower bound for the true sup.
    pub eps_lower: Vec<f64>,
    pub aborted: u64,
}

/// Runs `replications` independent particle simulations and verifies the
/// variance identity for every function in `dictionary`. `p` is the norm
/// exponent used for the dictionary-normalized error report.
pub fn dictionary_reports(
    seq: &LevelSequence,
    dictionary: &[StateFunction],
    n_particles: usize,
    replications: u64,
    seed: u64,
    p: f64,
) -> Result<DictionaryReport> {
    if replications < 100 {
        return Err(Error::InvalidArgument(format!(
            "at least 100 replications required, got {replications}"
        )));
    }
    let n = seq.n();
    let m = seq.num_states();
    let one = StateFunction::constant(m, 1.0);

    // Exact per-function propagator images, shared across replications.
    struct FnExact {
        qjn_f: Vec<StateFunction>,
        qjn_f2: Vec<StateFunction>,
        mu_f: f64,
        exact_var: f64,
        sup_fn: f64,
    }
    let mut exacts = Vec::with_capacity(dictionary.len());
    for f in dictionary {
        let mut qjn_f = Vec::with_capacity(n + 1);
        let mut qjn_f2 = Vec::with_capacity(n + 1);
        for j in 0..=n {
            let q = seq.propagator(j, n, Variant::Plain)?;
            qjn_f.push(q.propagate(f)?);
            qjn_f2.push(q.propagate(&f.squared())?);
        }
        let mu_f = seq.mu(n).integrate(f)?;
        exacts.push(FnExact {
            qjn_f,
            qjn_f2,
            mu_f,
            exact_var: seq.mu(n).variance(f)?,
            sup_fn: f.add_scalar(-mu_f).sup_norm(),
        });
    }
    let mut q1_minus_1 = Vec::with_capacity(n);
    for j in 0..n {
        let q1 = seq.propagator(j, j + 1, Variant::Plain)?.propagate(&one)?;
        q1_minus_1.push(q1.add_scalar(-1.0));
    }

    let outcomes = particles::replicate(seq, n_particles, replications, seed, |rec| {
        let mut per_f = Vec::with_capacity(dictionary.len());
        for (f, exact) in dictionary.iter().zip(&exacts) {
            let mut nu_by_level = Vec::with_capacity(n + 1);
            let mut v_levels = Vec::with_capacity(n);
            for j in 0..=n {
                let cloud = rec.cloud(j);
                nu_by_level.push(cloud.nu(&exact.qjn_f[j])?);
                if j < n {
                    let nu_one = cloud.phi();
                    let nu_qf_sq = cloud.nu(&exact.qjn_f[j].squared())?;
                    let nu_qf = nu_by_level[j];
                    let nu_g = cloud.nu(&q1_minus_1[j])?;
                    let nu_qf2 = cloud.nu(&exact.qjn_f2[j])?;
                    v_levels.push(nu_one * nu_qf_sq - nu_qf * nu_qf + nu_g * nu_qf2);
                }
            }
            per_f.push(FnSample { eta_f: rec.final_cloud().eta(f)?, nu_by_level, v_levels });
        }
        Ok(RepSample { nu_one: rec.final_cloud().phi(), per_f })
    });

    let total = outcomes.len() as u64;
    let mut samples = Vec::with_capacity(outcomes.len());
    let mut aborted = 0u64;
    for outcome in outcomes {
        match outcome {
            Ok(s) => samples.push(s),
            Err(Error::DegenerateWeights) => aborted += 1,
            Err(e) => return Err(e),
        }
    }
    if aborted * 100 > total {
        return Err(Error::TooManyAborts { aborted, total });
    }
    let kept = samples.len() as u64;

    let nu_ones: Vec<f64> = samples.iter().map(|s| s.nu_one).collect();
    let var_nu_one = sample_variance(&nu_ones);

    let mut reports = Vec::with_capacity(dictionary.len());
    for (fi, exact) in exacts.iter().enumerate() {
        let nu_f: Vec<f64> = samples.iter().map(|s| s.per_f[fi].nu_by_level[n]).collect();
        let sq_err: Vec<f64> = nu_f.iter().map(|v| (v - exact.mu_f) * (v - exact.mu_f)).collect();
        let v_sums: Vec<f64> =
            samples.iter().map(|s| pairwise_sum(&s.per_f[fi].v_levels)).collect();
        let n_part = n_particles as f64;
        let rhs: Vec<f64> = v_sums.iter().map(|v| (exact.exact_var + v) / n_part).collect();
        let gap: Vec<f64> = sq_err.iter().zip(&rhs).map(|(l, r)| l - r).collect();

        let per_level_v: Vec<Estimate> = (0..n)
            .map(|j| {
                let vals: Vec<f64> = samples.iter().map(|s| s.per_f[fi].v_levels[j]).collect();
                Estimate::from_sample(&vals)
            })
            .collect();

        let fn_centered: Vec<f64> = samples
            .iter()
            .map(|s| s.per_f[fi].nu_by_level[n] - exact.mu_f * s.nu_one)
            .collect();
        let eta_err: Vec<f64> =
            samples.iter().map(|s| s.per_f[fi].eta_f - exact.mu_f).collect();
        let mse_eta_vals: Vec<f64> = eta_err.iter().map(|e| e * e).collect();
        let mae_eta_vals: Vec<f64> = eta_err.iter().map(|e| e.abs()).collect();

        reports.push(VarianceReport {
            n_particles,
            replications: kept,
            aborted,
            mu_f: exact.mu_f,
            exact_var: exact.exact_var,
            nu_estimate: Estimate::from_sample(&nu_f),
            empirical_mse_nu: Estimate::from_sample(&sq_err),
            formula_rhs: Estimate::from_sample(&rhs),
            identity_gap: Estimate::from_sample(&gap),
            per_level_v,
            var_nu_fn: sample_variance(&fn_centered),
            var_nu_one,
            mse_eta: pairwise_sum(&mse_eta_vals) / kept as f64,
            mae_eta: pairwise_sum(&mae_eta_vals) / kept as f64,
            sup_fn: exact.sup_fn,
        });
    }

    // Dictionary lower bound on the per-level worst-case nu-error, with each
    // function normalized in L_p(mu_j).
    let mut eps_lower = vec![0.0f64; n + 1];
    for j in 0..=n {
        for (fi, f) in dictionary.iter().enumerate() {
            let norm = seq.mu(j).lp_norm(f, p)?;
            if norm <= 0.0 {
                continue;
            }
            let mu_jf = seq.mu(j).integrate(f)?;
            let errs: Vec<f64> = samples
                .iter()
                .map(|s| {
                    let e = (s.per_f[fi].nu_by_level[j] - mu_jf) / norm;
                    e * e
                })
                .collect();
            let mean = pairwise_sum(&errs) / kept as f64;
            eps_lower[j] = eps_lower[j].max(mean);
        }
    }

    Ok(DictionaryReport { reports, eps_lower, aborted })
}

/// Variance-identity report for a single test function.
pub fn variance_identity_report(
    seq: &LevelSequence,
    f: &StateFunction,
    n_particles: usize,
    replications: u64,
    seed: u64,
) -> Result<VarianceReport> {
    let bundle =
        dictionary_reports(seq, std::slice::from_ref(f), n_particles, replications, seed, 2.0)?;
    Ok(bundle.reports.into_iter().next().expect("one report per function"))
}

/// Replication means of the martingale increments that the particle system
/// must satisfy: the transported estimator `A`, the two auxiliary processes
/// from the variance-identity derivation, and the compensated square `H`.
#[derive(Debug, Clone)]
pub struct MartingaleReport {
    /// `A_n - A_0` where `A_j = nu_j(q_{j,n}(f))`.
    pub a_total: Estimate,
    /// Per-level increments `A_k - A_{k-1}`, `k = 1..n`.
    pub a_increments: Vec<Estimate>,
    /// Per-level increments of the compensated `nu(1) nu(q(f)^2)` process.
    pub l_increments: Vec<Estimate>,
    /// Per-level increments of the compensated `nu(1) nu(q(f^2))` process.
    pub m_increments: Vec<Estimate>,
    /// Terminal value of the compensated square `A_n^2 - A_0^2 - <A>`.
    pub h_total: Estimate,
}

impl MartingaleReport {
    pub fn all_pass(&self) -> bool {
        self.a_total.within_4se(0.0)
            && self.h_total.within_4se(0.0)
            && self.a_increments.iter().all(|e| e.within_4se(0.0))
            && self.l_increments.iter().all(|e| e.within_4se(0.0))
            && self.m_increments.iter().all(|e| e.within_4se(0.0))
    }
}

pub fn martingale_report(
    seq: &LevelSequence,
    f: &StateFunction,
    n_particles: usize,
    replications: u64,
    seed: u64,
) -> Result<MartingaleReport> {
    let n = seq.n();
    if n == 0 {
        return Err(Error::InvalidArgument("martingale checks need n >= 1".into()));
    }
    let m = seq.num_states();
    let one = StateFunction::constant(m, 1.0);

    // Exact images, shared across replications.
    let mut qjn_f = Vec::with_capacity(n + 1);
    let mut qjn_f2 = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let q = seq.propagator(j, n, Variant::Plain)?;
        qjn_f.push(q.propagate(f)?);
        qjn_f2.push(q.propagate(&f.squared())?);
    }
    let sq: Vec<StateFunction> = qjn_f.iter().map(StateFunction::squared).collect();
    let mut q1 = Vec::with_capacity(n);
    let mut step_sq = Vec::with_capacity(n); // q_{k-1,k}((q_{k,n} f)^2)
    for k in 1..=n {
        let one_step = seq.propagator(k - 1, k, Variant::Plain)?;
        q1.push(one_step.propagate(&one)?);
        step_sq.push(one_step.propagate(&sq[k])?);
    }

    struct Row {
        a_diff: f64,
        a_inc: Vec<f64>,
        l_inc: Vec<f64>,
        m_inc: Vec<f64>,
        h_total: f64,
    }

    let rows = particles::replicate(seq, n_particles, replications, seed, |rec: &RunRecord| {
        let nu = |k: usize, h: &StateFunction| rec.cloud(k).nu(h);
        let mut a = Vec::with_capacity(n + 1);
        for j in 0..=n {
            a.push(nu(j, &qjn_f[j])?);
        }
        let mut a_inc = Vec::with_capacity(n);
        let mut l_inc = Vec::with_capacity(n);
        let mut m_inc = Vec::with_capacity(n);
        let mut bracket = 0.0; // (1/N) sum of predictable quadratic terms
        for k in 1..=n {
            let prev = rec.cloud(k - 1);
            let cur = rec.cloud(k);
            a_inc.push(a[k] - a[k - 1]);

            let b_cur = cur.phi() * nu(k, &sq[k])?;
            let b_prev = prev.phi() * nu(k - 1, &sq[k - 1])?;
            let comp_l = nu(k - 1, &q1[k - 1])? * nu(k - 1, &step_sq[k - 1])?
                - prev.phi() * nu(k - 1, &sq[k - 1])?;
            l_inc.push(b_cur - b_prev - comp_l);

            let t_cur = cur.phi() * nu(k, &qjn_f2[k])?;
            let t_prev = prev.phi() * nu(k - 1, &qjn_f2[k - 1])?;
            let comp_m = (nu(k - 1, &q1[k - 1])? - prev.phi()) * nu(k - 1, &qjn_f2[k - 1])?;
            m_inc.push(t_cur - t_prev - comp_m);

            bracket += nu(k - 1, &q1[k - 1])? * nu(k - 1, &step_sq[k - 1])?
                - a[k - 1] * a[k - 1];
        }
        let h_total = a[n] * a[n] - a[0] * a[0] - bracket / n_particles as f64;
        Ok(Row { a_diff: a[n] - a[0], a_inc, l_inc, m_inc, h_total })
    });

    let mut kept = Vec::new();
    for row in rows {
        match row {
            Ok(r) => kept.push(r),
            Err(Error::DegenerateWeights) => {}
            Err(e) => return Err(e),
        }
    }

    let collect = |get: &dyn Fn(&Row, usize) -> f64, idx: usize| -> Estimate {
        let vals: Vec<f64> = kept.iter().map(|r| get(r, idx)).collect();
        Estimate::from_sample(&vals)
    };
    Ok(MartingaleReport {
        a_total: collect(&|r, _| r.a_diff, 0),
        a_increments: (0..n).map(|k| collect(&|r, i| r.a_inc[i], k)).collect(),
        l_increments: (0..n).map(|k| collect(&|r, i| r.l_inc[i], k)).collect(),
        m_increments: (0..n).map(|k| collect(&|r, i| r.m_inc[i], k)).collect(),
        h_total: collect(&|r, _| r.h_total, 0),
    })
}

/// The standard eight-function test dictionary: constants, the energy in
/// raw / centered / squared form, the two extreme-state indicators, an
/// alternating sign pattern, and the slowest mode of the final-level kernel.
pub fn default_dictionary(
    seq: &LevelSequence,
    energy: &StateFunction,
) -> Result<Vec<(String, StateFunction)>> {
    let m = seq.num_states();
    if energy.len() != m {
        return Err(Error::DimensionMismatch { left: m, right: energy.len() });
    }
    let n = seq.n();
    let mu_n = seq.mu(n);

    let argmin = (0..m)
        .min_by(|&a, &b| energy.value(a).partial_cmp(&energy.value(b)).unwrap())
        .unwrap();
    let argmax = (0..m)
        .max_by(|&a, &b| energy.value(a).partial_cmp(&energy.value(b)).unwrap())
        .unwrap();
    let mean_energy = mu_n.integrate(energy)?;
    let parity =
        StateFunction::new((0..m).map(|x| if x % 2 == 0 { 1.0 } else { -1.0 }).collect())?;

    let slow_mode = if n >= 1 {
        let kernel = seq.kernel(n);
        let mut s = crate::math::Mat::zeros(m);
        for i in 0..m {
            for j in 0..m {
                s.set(i, j, kernel.entry(i, j) * (mu_n.weight(i) / mu_n.weight(j)).sqrt());
            }
        }
        let (_, vectors) = crate::math::symmetric_eigen(&s);
        StateFunction::new(
            (0..m)
                .map(|x| vectors[1.min(vectors.len() - 1)][x] / mu_n.weight(x).sqrt())
                .collect(),
        )?
    } else {
        StateFunction::new((0..m).map(|x| x as f64).collect())?
    };

    Ok(vec![
        ("one".to_string(), StateFunction::constant(m, 1.0)),
        ("energy".to_string(), energy.clone()),
        ("energy_centered".to_string(), energy.add_scalar(-mean_energy)),
        ("ground_state".to_string(), StateFunction::indicator(m, argmin)),
        ("top_state".to_string(), StateFunction::indicator(m, argmax)),
        ("parity".to_string(), parity),
        ("slow_mode".to_string(), slow_mode),
        ("energy_sq".to_string(), energy.squared()),
    ])
}

/// Splits per-replication values into `batches` consecutive equal batches
/// and returns each batch's mean. Requires `batches` to divide the sample.
pub fn batch_means(values: &[f64], batches: usize) -> Result<Vec<f64>> {
    if batches == 0 || !values.len().is_multiple_of(batches) {
        return Err(Error::InvalidArgument(format!(
            "{} values cannot be split into {batches} equal batches",
            values.len()
        )));
    }
    let size = values.len() / batches;
    Ok(values
        .chunks(size)
        .map(|chunk| pairwise_sum(chunk) / size as f64)
        .collect())
}
