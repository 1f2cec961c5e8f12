//! Strict per-command JSON configs. Unknown keys are rejected everywhere.

use serde::{Deserialize, Serialize};
use spqr_core::rl::{EvalRule, TrainConfig};
use spqr_core::worlds::{GridWorld, Provenance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmtDemoConfig {
    pub dim: usize,
    pub sigma: f64,
    pub bins: usize,
    pub seed: u64,
}

impl Default for RmtDemoConfig {
    fn default() -> Self {
        Self {
            dim: 512,
            sigma: 1.0,
            bins: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectConfig {
    pub psi_grid: Vec<f64>,
    pub n_dim: usize,
    pub trials: usize,
    /// Calibrated from pure-noise draws when absent.
    pub kl_threshold: Option<f64>,
    pub seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            psi_grid: vec![0.0, 0.3, 0.6, 0.8, 0.95],
            n_dim: 256,
            trials: 2000,
            kl_threshold: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub provenance: Provenance,
    pub size: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub train: TrainConfig,
    pub world: GridWorld,
    /// Generated offline dataset; required when `train.mode` is offline.
    pub dataset: Option<DatasetSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeConfig {
    /// Path to a checkpoint manifest, relative to the working directory.
    pub manifest: String,
    pub world: GridWorld,
    pub eval_rule: EvalRule,
    /// Bins for the per-(s, a) uniformity test of member values.
    pub uniform_bins: usize,
    /// Bins per axis for the pairwise independence test of member errors.
    pub indep_bins: usize,
    pub alpha: f64,
    pub spike_bins: usize,
    /// Monte-Carlo rollouts per state-action pair for the bias statistics.
    pub n_rollouts: usize,
    pub seed: u64,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            manifest: "manifest.json".into(),
            world: GridWorld::default(),
            eval_rule: EvalRule::Min,
            uniform_bins: 2,
            indep_bins: 3,
            alpha: spqr_core::diagnostics::DEFAULT_ALPHA,
            spike_bins: 10,
            n_rollouts: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub seed: u64,
}
