//! Experiment configuration: a TOML file with dotted keys, one canonical
//! parser, no environment overrides except `SEQMC_SEED`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use seqmc_core::measures::{nearest_neighbor_proposal, uniform_proposal, MarkovKernel};
use seqmc_core::measures::StateFunction;
use seqmc_core::stability::{ChainParams, ThetaTable};
use seqmc_core::tempering::{ProductSpec, TemperingSpec};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub bounds: BoundsConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub functions: FunctionsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_kind")]
    pub kind: String,
    pub hamiltonian: Vec<f64>,
    pub betas: Vec<f64>,
    pub mcmc_steps: Vec<usize>,
    #[serde(default = "default_proposal")]
    pub proposal: String,
    /// Product models only.
    #[serde(default)]
    pub dimension: Option<usize>,
    #[serde(default)]
    pub insertions: Option<usize>,
}

fn default_kind() -> String {
    "tempering".into()
}

fn default_proposal() -> String {
    "nearest-neighbor".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub particles: usize,
    pub replications: u64,
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    /// Norm exponent is `p = 2^s`.
    pub s: u32,
    pub tau: f64,
    pub theta: f64,
    /// Per-transition hypercontractivity rates; a single entry is broadcast.
    pub a_star: Vec<f64>,
    /// Per-transition L2 rates; empty means "derive exactly from the base
    /// kernel spectra".
    pub b_star: Vec<f64>,
    /// Rescales the derived one-step bound constant; 1.0 is the honest
    /// chain, smaller values feed the falsifier an undersized constant.
    pub alpha_scale: f64,
    /// Error budget used by the variance bound when the particle count is
    /// below the threshold.
    pub user_eps: Option<f64>,
    /// Randomized falsifier trials per inequality.
    pub falsify_trials: u64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig {
            s: 2,
            tau: 0.8,
            theta: 1.0,
            a_star: vec![0.1],
            b_star: Vec::new(),
            alpha_scale: 1.0,
            user_eps: None,
            falsify_trials: 10_000,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub dimensions: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FunctionsConfig {
    pub dictionary: String,
}

impl Default for FunctionsConfig {
    fn default() -> Self {
        FunctionsConfig { dictionary: "default".into() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from(".") }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config file {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        match self.model.kind.as_str() {
            "tempering" | "product" => {}
            other => bail!("model.kind must be \"tempering\" or \"product\", got {other:?}"),
        }
        if self.model.kind == "product" && self.model.dimension.is_none() {
            bail!("model.kind = \"product\" requires model.dimension");
        }
        match self.model.proposal.as_str() {
            "nearest-neighbor" | "uniform" => {}
            other => {
                bail!("model.proposal must be \"nearest-neighbor\" or \"uniform\", got {other:?}")
            }
        }
        if self.functions.dictionary != "default" {
            bail!("functions.dictionary only supports \"default\"");
        }
        if self.run.replications == 0 {
            bail!("run.replications must be at least 1");
        }
        let n = self.model.betas.len().saturating_sub(1);
        if !self.bounds.a_star.is_empty() && self.bounds.a_star.len() != 1
            && self.bounds.a_star.len() != n
        {
            bail!("bounds.a_star must have 1 or {n} entries");
        }
        if !self.bounds.b_star.is_empty() && self.bounds.b_star.len() != 1
            && self.bounds.b_star.len() != n
        {
            bail!("bounds.b_star must have 1 or {n} entries");
        }
        Ok(())
    }

    pub fn proposal(&self) -> MarkovKernel {
        let m = self.model.hamiltonian.len();
        match self.model.proposal.as_str() {
            "uniform" => uniform_proposal(m),
            _ => nearest_neighbor_proposal(m),
        }
    }

    pub fn tempering_spec(&self) -> Result<TemperingSpec> {
        Ok(TemperingSpec {
            hamiltonian: StateFunction::new(self.model.hamiltonian.clone())
                .context("model.hamiltonian must be finite")?,
            betas: self.model.betas.clone(),
            mcmc_steps: self.model.mcmc_steps.clone(),
            proposal: self.proposal(),
        })
    }

    pub fn product_spec(&self) -> Result<ProductSpec> {
        Ok(ProductSpec {
            base: self.tempering_spec()?,
            dimension: self.model.dimension.unwrap_or(1),
            insertions: self.model.insertions,
        })
    }

    pub fn chain_params(&self) -> ChainParams {
        let mut params = ChainParams::new(self.bounds.s, self.bounds.tau);
        params.theta = ThetaTable::uniform(self.bounds.theta);
        params.alpha_scale = self.bounds.alpha_scale;
        params
    }

    /// Per-transition hypercontractivity rates, broadcast to `n` entries.
    pub fn a_star(&self, n: usize) -> Vec<f64> {
        broadcast(&self.bounds.a_star, 0.1, n)
    }

    /// Per-transition L2 rates when given explicitly; `None` means derive.
    pub fn b_star(&self, n: usize) -> Option<Vec<f64>> {
        if self.bounds.b_star.is_empty() {
            None
        } else {
            Some(broadcast(&self.bounds.b_star, 0.0, n))
        }
    }
}

fn broadcast(values: &[f64], fallback: f64, n: usize) -> Vec<f64> {
    match values.len() {
        0 => vec![fallback; n],
        1 => vec![values[0]; n],
        _ => values.to_vec(),
    }
}
