//! Shared fixtures for the unit-test modules. Built by hand, independently of
//! the tempering builder, so the builder can be cross-checked against it.

use crate::feynman_kac::LevelSequence;
use crate::measures::{
    metropolis_kernel, nearest_neighbor_proposal, MarkovKernel, ProbMeasure, StateFunction,
    StateSpace,
};

/// The 4-state tempering ladder used throughout the test suites:
/// H = (0,1,2,3), betas = (0, 0.5, 1.0), 8 Metropolis steps per level.
pub fn fixture_a() -> LevelSequence {
    let h = [0.0f64, 1.0, 2.0, 3.0];
    let betas = [0.0f64, 0.5, 1.0];
    let space = StateSpace::new(4).unwrap();
    let mus: Vec<ProbMeasure> = betas
        .iter()
        .map(|&b| {
            ProbMeasure::from_unnormalized(h.iter().map(|&x| (-b * x).exp()).collect()).unwrap()
        })
        .collect();
    let potentials: Vec<StateFunction> = (1..betas.len())
        .map(|k| {
            let db = betas[k] - betas[k - 1];
            StateFunction::new(h.iter().map(|&x| (-db * x).exp()).collect()).unwrap()
        })
        .collect();
    let proposal = nearest_neighbor_proposal(4);
    let kernels: Vec<MarkovKernel> = (1..betas.len())
        .map(|k| metropolis_kernel(&mus[k], &proposal).unwrap().power(8))
        .collect();
    LevelSequence::new(space, mus, potentials, kernels).unwrap()
}

/// A one-transition model where nothing moves: constant potential and an
/// exactly mixing kernel, so every propagator is trivial.
pub fn trivial_model() -> LevelSequence {
    trivial_model_n(1)
}

/// Same flat model with `n` transitions.
pub fn trivial_model_n(n: usize) -> LevelSequence {
    let space = StateSpace::new(3).unwrap();
    let mu = ProbMeasure::new(vec![0.5, 0.3, 0.2]).unwrap();
    let mixing = MarkovKernel::from_rows(vec![mu.weights().to_vec(); 3]).unwrap();
    LevelSequence::new(
        space,
        vec![mu.clone(); n + 1],
        vec![StateFunction::constant(3, 2.0); n],
        vec![mixing; n],
    )
    .unwrap()
}
