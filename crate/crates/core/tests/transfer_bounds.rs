//! Batched check of the error-transfer bounds: the squared and absolute
//! eta-errors, estimated in 100 independent batches, must fall below the
//! bounds evaluated from the full replication sample in at least 99 of the
//! 100 batches.

use seqmc_core::diagnostics::batch_means;
use seqmc_core::measures::{nearest_neighbor_proposal, StateFunction};
use seqmc_core::particles;
use seqmc_core::tempering::{build_tempered, TemperingSpec};

#[test]
fn transfer_bounds_hold_in_99_of_100_batches() {
    let model = build_tempered(&TemperingSpec {
        hamiltonian: StateFunction::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap(),
        betas: vec![0.0, 0.5, 1.0],
        mcmc_steps: vec![8, 8],
        proposal: nearest_neighbor_proposal(4),
    })
    .unwrap();
    let seq = model.sequence();
    let f = StateFunction::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let mu_f = seq.mu(seq.n()).integrate(&f).unwrap();
    let sup_fn = f.add_scalar(-mu_f).sup_norm();

    let reps = 20_000u64;
    let rows: Vec<(f64, f64, f64)> = particles::replicate(seq, 64, reps, 9, |rec| {
        let cloud = rec.final_cloud();
        Ok((cloud.eta(&f)?, cloud.nu(&f)?, cloud.phi()))
    })
    .into_iter()
    .map(|r| r.unwrap())
    .collect();

    let n = rows.len() as f64;
    let var = |values: &[f64]| -> f64 {
        let mean: f64 = values.iter().sum::<f64>() / n;
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    };
    let nu_fn: Vec<f64> = rows.iter().map(|r| r.1 - mu_f * r.2).collect();
    let nu_one: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let var_fn = var(&nu_fn);
    let var_one = var(&nu_one);
    let rhs_sq = 2.0 * var_fn + 2.0 * sup_fn * sup_fn * var_one;
    let rhs_abs = var_fn.sqrt()
        + std::f64::consts::SQRT_2 * sup_fn * var_one
        + std::f64::consts::SQRT_2 * var_fn.sqrt() * var_one.sqrt();

    let sq_errs: Vec<f64> = rows.iter().map(|r| (r.0 - mu_f) * (r.0 - mu_f)).collect();
    let abs_errs: Vec<f64> = rows.iter().map(|r| (r.0 - mu_f).abs()).collect();

    let ok_sq = batch_means(&sq_errs, 100)
        .unwrap()
        .iter()
        .filter(|&&b| b <= rhs_sq)
        .count();
    let ok_abs = batch_means(&abs_errs, 100)
        .unwrap()
        .iter()
        .filter(|&&b| b <= rhs_abs)
        .count();
    assert!(ok_sq >= 99, "squared-error bound held in only {ok_sq}/100 batches");
    assert!(ok_abs >= 99, "absolute-error bound held in only {ok_abs}/100 batches");
}
