//! The training loop, its evaluation and reports, checkpoints and ablations.

mod ablation;
mod eval;
mod plot;
mod report;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fieldrender::RenderSettings;
use crate::robustloss::ObjectiveConfig;
use crate::sampling::{SamplerConfig, SamplingStrategy};

pub use ablation::{run_ablation, AblationRow, AblationSuite, AblationTable, LossVariant};
pub use eval::{auroc, iterations_to_reach};
pub use plot::{save_beta_heatmap, save_convergence_plot};
pub use report::{EvalRow, RunReport, CSV_HEADER};
pub use train::{run_baseline, train, train_with_output, OutputOptions, Trainer, CHECKPOINT_FILE};

/// Which rays may share a neighbour set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborScope {
    /// Any two rays of the batch.
    #[default]
    Batch,
    /// Only rays drawn from the same patch.
    Patch,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureScaling {
    None,
    /// Every pixel vector scaled to length 1.
    UnitLength,
    /// Every channel shifted and scaled to zero mean, unit variance over the
    /// training views.
    #[default]
    Standardize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Sampler settings. Its `seed` is replaced by one derived from `seed`.
    pub sampler: SamplerConfig,
    pub objective: ObjectiveConfig,
    /// Cosine threshold for neighbour sets.
    pub eta: f64,
    pub neighbor_scope: NeighborScope,
    pub lr_field: f64,
    pub lr_g: f64,
    /// Learning-rate multiplier reached at the last iteration, applied
    /// exponentially. 1 disables the schedule.
    pub lr_decay: f64,
    /// Iterations during which G predicts beta but is not updated.
    pub warmup_iters: usize,
    pub eval_every: usize,
    pub seed: u64,
    /// Fixed-order gradient reduction; bit-reproducible runs.
    pub deterministic: bool,
    pub beta_min: f64,
    pub g_hidden: Vec<usize>,
    /// Beta predicted at initialisation, set through G's output bias.
    pub g_init_beta: f64,
    /// When false beta is fixed to 1 and G is not built (plain l2 training).
    pub uncertainty: bool,
    /// Feature preprocessing before G and the neighbour sets.
    pub feature_scaling: FeatureScaling,
    /// Flat field resolution `[width, height]`; defaults to the view size.
    pub flat_resolution: Option<[usize; 2]>,
    /// Voxel field nodes per axis.
    pub voxel_grid: usize,
    pub render: RenderSettings,
    /// Upper end of the fixed beta range used for heatmaps; the lower end is `beta_min`.
    pub heatmap_beta_max: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            sampler: SamplerConfig {
                strategy: SamplingStrategy::DilatedPatch,
                patch_size: 16,
                dilation: 4,
                batch_rays: 1024,
                seed: 0,
            },
            objective: ObjectiveConfig::default(),
            eta: 0.75,
            neighbor_scope: NeighborScope::Batch,
            lr_field: 0.01,
            lr_g: 1e-3,
            lr_decay: 1.0,
            warmup_iters: 0,
            eval_every: 100,
            seed: 0,
            deterministic: true,
            beta_min: 0.01,
            g_hidden: vec![64, 64],
            g_init_beta: 0.02,
            uncertainty: true,
            feature_scaling: FeatureScaling::Standardize,
            flat_resolution: None,
            voxel_grid: 32,
            render: RenderSettings::default(),
            heatmap_beta_max: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        for (name, lr) in [("lr_field", self.lr_field), ("lr_g", self.lr_g)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if !(self.eta > -1.0 && self.eta < 1.0) {
            return bad(format!("eta must lie in (-1, 1), got {}", self.eta));
        }
        if !(self.beta_min >= 0.0 && self.beta_min.is_finite()) {
            return bad(format!("beta_min must be finite and >= 0, got {}", self.beta_min));
        }
        if !(self.g_init_beta > self.beta_min && self.g_init_beta.is_finite()) {
            return bad(format!("g_init_beta must be finite and exceed beta_min, got {}", self.g_init_beta));
        }
        if !(self.heatmap_beta_max > self.beta_min) {
            return bad("heatmap_beta_max must exceed beta_min".into());
        }
        if self.voxel_grid < 2 {
            return bad("voxel_grid must be >= 2".into());
        }
        if let Some([w, h]) = self.flat_resolution {
            if w == 0 || h == 0 {
                return bad("flat_resolution must be positive".into());
            }
        }
        if self.render.n_samples == 0 {
            return bad("render.n_samples must be >= 1".into());
        }
        self.objective.weights.validate()?;
        Ok(())
    }

    /// Learning-rate multiplier at iteration `it`.
    pub fn lr_scale(&self, it: usize) -> f64 {
        if self.lr_decay == 1.0 {
            1.0
        } else {
            self.lr_decay.powf(it as f64 / self.iterations as f64)
        }
    }
}
