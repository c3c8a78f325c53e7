//! Experiment configuration: a single TOML file fully determines an
//! experiment. The canonical hash is taken over the re-serialized parsed
//! struct, so formatting and key order in the user's file do not matter.

use std::sync::Arc;

use anyhow::{bail, Context, Result};
use blockcs_core::blocks::{
    gaussian_dictionary, line_blocks, overlapping_blocks, partition_blocks,
    rows_and_columns_blocks, singleton_partition, BlockDictionary, DrawingDistribution,
};
use blockcs_core::coherence::optimal_pi;
use blockcs_core::operators::{block_diag_example, dft_operator, identity_operator, DynOperator};
use blockcs_core::solver::SolverOptions;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must match the subcommand being run.
    pub scenario: String,
    /// Master seed; overridable on the command line.
    pub seed: u64,
    /// Artifact directory; overridable on the command line.
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Worker threads for Monte-Carlo scenarios (0 = all cores). Outputs do
    /// not depend on this knob.
    #[serde(default)]
    pub workers: usize,
    pub dictionary: DictionaryConfig,
    #[serde(default)]
    pub distribution: DistributionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<SignalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coherence: Option<CoherenceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recover: Option<RecoverConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certify: Option<CertifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identify: Option<IdentifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tailcheck: Option<TailcheckConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian_scaling: Option<GaussianScalingConfig>,
}

fn default_output_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DictionaryConfig {
    /// One of: partition, overlapping, isolated, one-plus-fourier,
    /// line-blocks, rows-and-columns, gaussian.
    pub kind: String,
    /// Base transform for partition/overlapping/isolated/line-blocks:
    /// "dft" (default) or "identity".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<String>,
    /// Transform dimension: n for partition/overlapping/isolated/
    /// one-plus-fourier, sqrt(n) for line-blocks/rows-and-columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Consecutive rows per block (partition without explicit index sets).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_size: Option<usize>,
    /// Explicit 0-based row index sets (partition/overlapping).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index_sets: Option<Vec<Vec<usize>>>,
    /// Gaussian generator shape.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionConfig {
    /// "uniform", "optimal", or "explicit".
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<f64>>,
}

impl Default for DistributionConfig {
    fn default() -> Self {
        Self {
            kind: "uniform".into(),
            probabilities: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    /// "generic" or "pathological".
    #[serde(default = "default_signal_class")]
    pub class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_grid: Option<Vec<usize>>,
}

fn default_signal_class() -> String {
    "generic".into()
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub m: Vec<usize>,
    pub trials: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub feasibility_tol: f64,
    pub step_tol: f64,
    pub iteration_cap: usize,
    pub success_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            feasibility_tol: o.feasibility_tol,
            step_tol: o.step_tol,
            iteration_cap: o.iteration_cap,
            success_tol: o.success_tol,
        }
    }
}

impl SolverConfig {
    pub fn to_options(&self) -> SolverOptions {
        SolverOptions {
            feasibility_tol: self.feasibility_tol,
            step_tol: self.step_tol,
            iteration_cap: self.iteration_cap,
            success_tol: self.success_tol,
            ..SolverOptions::default()
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CoherenceConfig {
    /// Explicit support indices (0-based); otherwise `s` random indices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    /// Monte-Carlo draws for Gaussian quantile estimates.
    #[serde(default = "default_mc_trials")]
    pub trials: usize,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
}

fn default_mc_trials() -> usize {
    10_000
}

fn default_quantile() -> f64 {
    0.99
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub m: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverConfig {
    pub m: usize,
    #[serde(default = "default_one")]
    pub trials: usize,
    /// Synthetic piecewise-constant image mode: axis-aligned constant
    /// rectangles on a zero background (requires a grid dictionary).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageConfig>,
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ImageConfig {
    #[serde(default = "default_rectangles")]
    pub rectangles: usize,
    #[serde(default = "default_max_side")]
    pub max_side: usize,
}

fn default_rectangles() -> usize {
    3
}

fn default_max_side() -> usize {
    3
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    pub m: usize,
    pub trials: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    0.01
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifyConfig {
    pub s: usize,
    /// "exhaustive" or "randomized".
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    /// Number of distinct blocks to select (seeded, without replacement).
    pub m: usize,
    /// "ambient" tests the full sensing operator; "line-class" tests the
    /// reduced matrix governing the alpha ⊗ e_1 class (line-blocks
    /// dictionaries only).
    #[serde(default = "default_identify_class")]
    pub class: String,
}

fn default_identify_class() -> String {
    "ambient".into()
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TailcheckConfig {
    /// "E1", "E2", "E3" or "E4".
    pub event: String,
    pub m: Vec<usize>,
    pub thresholds: Vec<f64>,
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianScalingConfig {
    pub s_values: Vec<usize>,
    pub p_values: Vec<usize>,
    pub n: usize,
    pub trials: usize,
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        match self.scenario.as_str() {
            "coherence" | "optimal-pi" | "sample" | "recover" | "phase" | "certify"
            | "identify" | "tailcheck" | "gaussian-scaling" => {}
            other => bail!("scenario: unknown scenario '{other}'"),
        }
        if let Some(grid) = &self.grid {
            if grid.m.is_empty() {
                bail!("grid.m: must be non-empty");
            }
            if grid.m.contains(&0) {
                bail!("grid.m: entries must be >= 1");
            }
            if grid.trials == 0 {
                bail!("grid.trials: must be >= 1");
            }
        }
        if let Some(signal) = &self.signal {
            match signal.class.as_str() {
                "generic" | "pathological" => {}
                other => bail!("signal.class: unknown class '{other}'"),
            }
            if signal.s.is_none() && signal.s_grid.as_ref().is_none_or(|g| g.is_empty()) {
                bail!("signal.s: either s or a non-empty s_grid is required");
            }
        }
        Ok(())
    }

    /// Hash of the canonical (re-serialized) configuration.
    pub fn sha256(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hex_string(&hasher.finalize())
    }

    /// Builds the dictionary described by `[dictionary]`.
    pub fn build_dictionary(&self) -> Result<Arc<BlockDictionary>> {
        let d = &self.dictionary;
        let transform = |dim: usize| -> Result<DynOperator> {
            match d.transform.as_deref().unwrap_or("dft") {
                "dft" => Ok(dft_operator(dim)),
                "identity" => Ok(identity_operator(dim)),
                other => bail!("dictionary.transform: unknown transform '{other}'"),
            }
        };
        let need_dim = || -> Result<usize> {
            d.dim
                .ok_or_else(|| anyhow::anyhow!("dictionary.dim: required for this kind"))
        };
        let dict = match d.kind.as_str() {
            "partition" => {
                let dim = need_dim()?;
                let sets = if let Some(sets) = &d.index_sets {
                    sets.clone()
                } else {
                    let bs = d.block_size.ok_or_else(|| {
                        anyhow::anyhow!(
                            "dictionary.block_size: required for consecutive partitions"
                        )
                    })?;
                    if bs == 0 || dim % bs != 0 {
                        bail!("dictionary.block_size: must divide dim");
                    }
                    (0..dim / bs)
                        .map(|j| (j * bs..(j + 1) * bs).collect())
                        .collect()
                };
                partition_blocks(transform(dim)?, &sets)?
            }
            "overlapping" => {
                let dim = need_dim()?;
                let sets = d.index_sets.as_ref().ok_or_else(|| {
                    anyhow::anyhow!("dictionary.index_sets: required for overlapping blocks")
                })?;
                overlapping_blocks(transform(dim)?, sets)?
            }
            "isolated" => singleton_partition(transform(need_dim()?)?)?,
            "one-plus-fourier" => singleton_partition(block_diag_example(need_dim()?))?,
            "line-blocks" => line_blocks(transform(need_dim()?)?)?,
            "rows-and-columns" => rows_and_columns_blocks(need_dim()?)?,
            "gaussian" => {
                let p =
                    d.p.ok_or_else(|| anyhow::anyhow!("dictionary.p: required for gaussian"))?;
                let n =
                    d.n.ok_or_else(|| anyhow::anyhow!("dictionary.n: required for gaussian"))?;
                gaussian_dictionary(p, n)?
            }
            other => bail!("dictionary.kind: unknown kind '{other}'"),
        };
        Ok(Arc::new(dict))
    }

    /// Builds the drawing distribution described by `[distribution]`.
    pub fn build_distribution(&self, dict: &BlockDictionary) -> Result<DrawingDistribution> {
        if dict.is_gaussian() {
            // Ignored by Gaussian sampling; a placeholder keeps call sites
            // uniform.
            return Ok(DrawingDistribution::uniform(1)?);
        }
        match self.distribution.kind.as_str() {
            "uniform" => Ok(DrawingDistribution::uniform(dict.num_blocks())?),
            "optimal" => Ok(optimal_pi(dict)?),
            "explicit" => {
                let probs = self.distribution.probabilities.clone().ok_or_else(|| {
                    anyhow::anyhow!("distribution.probabilities: required for explicit kind")
                })?;
                if probs.len() != dict.num_blocks() {
                    bail!(
                        "distribution.probabilities: got {} entries for {} blocks",
                        probs.len(),
                        dict.num_blocks()
                    );
                }
                Ok(DrawingDistribution::new(probs)?)
            }
            other => bail!("distribution.kind: unknown kind '{other}'"),
        }
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
