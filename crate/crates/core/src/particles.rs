//! The interacting particle system: multinomial importance-sampling
//! resampling alternating with kernel mutation.
//!
//! A cloud at level `k-1` is pushed to level `k` by (a) resampling particle
//! positions with the raw potential values as weights, (b) moving every
//! resampled particle one draw of `K_k`, and (c) multiplying the running
//! normalizer `phi` by the empirical mean of the normalized potential. The
//! weighted measure `nu_k(f) = phi_k * eta_k(f)` is then an unbiased
//! estimator of `mu_k(f)`.
//!
//! Replications are deterministic: replication `r` of master seed `s` draws
//! from RNG stream `(s, r)`, so results do not depend on thread count or
//! completion order.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feynman_kac::LevelSequence;
use crate::math::pairwise_sum_by;
use crate::measures::{ProbMeasure, StateFunction};
use crate::rng::{cumulative, sample_cdf, stream_rng, StreamRng};

/// One replication's particle positions at a level, together with the
/// running normalizing product and the replication's RNG state.
#[derive(Debug, Clone)]
pub struct ParticleCloud {
    level: usize,
    num_states: usize,
    positions: Vec<u32>,
    phi: f64,
    rng: StreamRng,
}

impl ParticleCloud {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn num_particles(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[u32] {
        &self.positions
    }

    /// The running product `phi_k` of empirical normalized-potential means.
    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// Empirical mean `eta_k(f) = (1/N) sum_i f(xi_i)`.
    pub fn eta(&self, f: &StateFunction) -> Result<f64> {
        if f.len() != self.num_states {
            return Err(Error::DimensionMismatch { left: self.num_states, right: f.len() });
        }
        let n = self.positions.len();
        Ok(pairwise_sum_by(n, |i| f.value(self.positions[i] as usize)) / n as f64)
    }

    /// Weighted empirical measure `nu_k(f) = phi_k * eta_k(f)`.
    pub fn nu(&self, f: &StateFunction) -> Result<f64> {
        Ok(self.phi * self.eta(f)?)
    }
}

/// Snapshots of one replication's clouds at every level `0..=n`.
#[derive(Debug, Clone)]
pub struct RunRecord {
    clouds: Vec<ParticleCloud>,
    seed: u64,
    stream: u64,
}

impl RunRecord {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn cloud(&self, level: usize) -> &ParticleCloud {
        &self.clouds[level]
    }

    pub fn clouds(&self) -> &[ParticleCloud] {
        &self.clouds
    }

    pub fn final_cloud(&self) -> &ParticleCloud {
        self.clouds.last().expect("run record has at least level 0")
    }
}

/// `n` i.i.d. index draws from `mu` by inverse CDF.
pub fn draw_iid(mu: &ProbMeasure, n: usize, rng: &mut StreamRng) -> Vec<u32> {
    let cum = cumulative(mu.weights());
    (0..n).map(|_| sample_cdf(&cum, rng) as u32).collect()
}

/// Draws `n_out` conditionally i.i.d. indices with probability proportional
/// to `weights`. Fails if every weight is zero.
pub fn multinomial_resample(
    weights: &[f64],
    n_out: usize,
    rng: &mut StreamRng,
) -> Result<Vec<usize>> {
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() {
            return Err(Error::NonFinite { index: i });
        }
        if w < 0.0 {
            return Err(Error::NegativeWeight { index: i, value: w });
        }
    }
    let cum = cumulative(weights);
    let total = *cum.last().ok_or(Error::DegenerateWeights)?;
    if total <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    Ok((0..n_out).map(|_| sample_cdf(&cum, rng)).collect())
}

/// Level-0 cloud: `n_particles` i.i.d. draws from `mu_0`, `phi = 1`.
/// Uses RNG stream `(seed, 0)`.
pub fn init_cloud(seq: &LevelSequence, n_particles: usize, seed: u64) -> ParticleCloud {
    init_cloud_stream(seq, n_particles, seed, 0)
}

/// Level-0 cloud drawing from RNG stream `(seed, stream)`.
pub fn init_cloud_stream(
    seq: &LevelSequence,
    n_particles: usize,
    seed: u64,
    stream: u64,
) -> ParticleCloud {
    let mut rng = stream_rng(seed, stream);
    let cum = seq.cum_mu0();
    let positions = (0..n_particles).map(|_| sample_cdf(cum, &mut rng) as u32).collect();
    ParticleCloud { level: 0, num_states: seq.num_states(), positions, phi: 1.0, rng }
}

/// Resample-and-mutate with externally supplied randomness; returns the new
/// positions and `phi`. Used both by [`step`] and by conditional-expectation
/// checks that resimulate a fixed cloud many times.
pub fn step_with_rng(
    seq: &LevelSequence,
    cloud: &ParticleCloud,
    rng: &mut StreamRng,
) -> Result<(Vec<u32>, f64)> {
    let k = cloud.level + 1;
    if k > seq.n() {
        return Err(Error::InvalidArgument(format!(
            "cannot step past the final level {}",
            seq.n()
        )));
    }
    let potential = seq.potential(k);
    let weights: Vec<f64> =
        cloud.positions.iter().map(|&x| potential.value(x as usize)).collect();
    let resampled = multinomial_resample(&weights, cloud.positions.len(), rng)?;

    let rows = seq.cum_kernel_rows(k);
    let positions: Vec<u32> = resampled
        .iter()
        .map(|&i| sample_cdf(&rows[cloud.positions[i] as usize], rng) as u32)
        .collect();

    let gbar = seq.normalized_potential(k);
    let n = cloud.positions.len();
    let mean_gbar =
        pairwise_sum_by(n, |i| gbar.value(cloud.positions[i] as usize)) / n as f64;
    Ok((positions, cloud.phi * mean_gbar))
}

/// Advances a cloud one level using (a copy of) the cloud's own RNG stream.
pub fn step(seq: &LevelSequence, cloud: &ParticleCloud) -> Result<ParticleCloud> {
    let mut rng = cloud.rng.clone();
    let (positions, phi) = step_with_rng(seq, cloud, &mut rng)?;
    Ok(ParticleCloud {
        level: cloud.level + 1,
        num_states: cloud.num_states,
        positions,
        phi,
        rng,
    })
}

/// Runs one full replication on stream `(seed, 0)` and records every level.
pub fn run(seq: &LevelSequence, n_particles: usize, seed: u64) -> Result<RunRecord> {
    run_stream(seq, n_particles, seed, 0)
}

/// Runs one full replication on stream `(seed, stream)`.
pub fn run_stream(
    seq: &LevelSequence,
    n_particles: usize,
    seed: u64,
    stream: u64,
) -> Result<RunRecord> {
    let mut clouds = Vec::with_capacity(seq.n() + 1);
    clouds.push(init_cloud_stream(seq, n_particles, seed, stream));
    for _ in 1..=seq.n() {
        let next = step(seq, clouds.last().unwrap())?;
        clouds.push(next);
    }
    Ok(RunRecord { clouds, seed, stream })
}

/// Runs `replications` independent copies in parallel, mapping each run
/// record through `per_rep`. Results come back in replication order, so any
/// later reduction is independent of scheduling.
pub fn replicate<T: Send>(
    seq: &LevelSequence,
    n_particles: usize,
    replications: u64,
    seed: u64,
    per_rep: impl Fn(&RunRecord) -> Result<T> + Sync,
) -> Vec<Result<T>> {
    (0..replications)
        .into_par_iter()
        .map(|r| run_stream(seq, n_particles, seed, r).and_then(|rec| per_rep(&rec)))
        .collect()
}
