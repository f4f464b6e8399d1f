//! Model construction shared by every subcommand.

use anyhow::{Context, Result};

use crate::config::ExperimentConfig;
use seqmc_core::diagnostics::default_dictionary;
use seqmc_core::measures::StateFunction;
use seqmc_core::tempering::{
    build_product, build_tempered, product_mean_function, TemperedModel,
};

pub struct BuiltModel {
    pub model: TemperedModel,
    /// Named test functions on the model's state space.
    pub dictionary: Vec<(String, StateFunction)>,
}

pub fn build(config: &ExperimentConfig) -> Result<BuiltModel> {
    let (model, dimension) = match config.model.kind.as_str() {
        "product" => {
            let spec = config.product_spec()?;
            let d = spec.dimension;
            (build_product(&spec).context("cannot build product model")?, d)
        }
        _ => (build_tempered(&config.tempering_spec()?).context("cannot build model")?, 1),
    };
    let base_h = StateFunction::new(config.model.hamiltonian.clone())?;
    let energy = product_mean_function(&base_h, dimension)?;
    let dictionary = default_dictionary(model.sequence(), &energy)?;
    Ok(BuiltModel { model, dictionary })
}
