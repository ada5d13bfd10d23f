//! The combined per-step objective with explicit gradient routing.
//!
//! `L = l2 L_nerf + l3 L_uncer + l4 L_reg`. By default the reconstruction
//! term only reaches the rendered colours (beta held constant) and the two
//! uncertainty terms only reach beta (the SSIM error held constant). Each
//! term's gradient is formed separately so the routing is exact.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losses::{loss_nerf, loss_reg, loss_uncer, loss_uncer_grad_err, LossWeights, NeighborSets};
use super::ssim::{patch_error, patch_error_backward, SsimConstants, SsimMode, LOSS_WINDOW};
use crate::error::{Error, Result};

/// Cross-terms that the default decoupled objective drops.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Coupling {
    /// Backpropagate the uncertainty loss into the field through the patch error.
    pub uncer_to_field: bool,
    /// Backpropagate the reconstruction loss into G through beta.
    pub nerf_to_g: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    pub ssim_mode: SsimMode,
    pub window: usize,
    #[serde(default)]
    pub coupling: Coupling,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            ssim_mode: SsimMode::Modified,
            window: LOSS_WINDOW,
            coupling: Coupling::default(),
        }
    }
}

/// One patch's observed and rendered colours, row-major `P x P`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchColors {
    pub patch_size: usize,
    pub observed: Vec<[f64; 3]>,
    pub rendered: Vec<[f64; 3]>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RayLossRecord {
    pub ssim_err: f64,
    pub beta: f64,
    pub l_uncer: f64,
    pub l_nerf: f64,
    pub l_reg: f64,
}

/// Which parameter group each term actually sent gradient to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Routing {
    pub nerf_to_field: bool,
    pub nerf_to_g: bool,
    pub uncer_to_field: bool,
    pub uncer_to_g: bool,
    pub reg_to_g: bool,
}

impl Routing {
    pub fn field_receives(&self) -> bool {
        self.nerf_to_field || self.uncer_to_field
    }

    pub fn g_receives(&self) -> bool {
        self.nerf_to_g || self.uncer_to_g || self.reg_to_g
    }

    /// True when the decoupled contract holds.
    pub fn is_decoupled(&self) -> bool {
        !self.nerf_to_g && !self.uncer_to_field
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBundle {
    pub value: f64,
    pub l_nerf: f64,
    pub l_uncer: f64,
    pub l_reg: f64,
    /// `dL/dC^` per ray, in patch order.
    pub grad_rendered: Vec<[f64; 3]>,
    /// `dL/dbeta` per ray.
    pub grad_beta: Vec<f64>,
    pub records: Vec<RayLossRecord>,
    pub routing: Routing,
}

impl LossBundle {
    /// Name of the first non-finite component, if any.
    pub fn non_finite_component(&self) -> Option<&'static str> {
        [("nerf", self.l_nerf), ("uncer", self.l_uncer), ("reg", self.l_reg), ("total", self.value)]
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }
}

fn flatten(c: &[[f64; 3]]) -> &[f64] {
    c.as_flattened()
}

/// Evaluates the objective over a batch of patches. `beta` and `sets` are
/// indexed by ray in patch order.
pub fn total_step_loss(cfg: &ObjectiveConfig, patches: &[PatchColors], beta: &[f64], sets: &NeighborSets) -> Result<LossBundle> {
    let w = cfg.weights;
    w.validate()?;
    let n_rays: usize = patches.iter().map(|p| p.observed.len()).sum();
    if beta.len() != n_rays {
        return Err(Error::Dimension(format!("{} betas for {n_rays} rays", beta.len())));
    }
    for (i, p) in patches.iter().enumerate() {
        let need = p.patch_size * p.patch_size;
        if p.observed.len() != need || p.rendered.len() != need {
            return Err(Error::Dimension(format!("patch {i} holds {} rays, expected {need}", p.observed.len())));
        }
    }

    let errs: Vec<_> = patches
        .par_iter()
        .map(|p| {
            patch_error(
                cfg.ssim_mode,
                flatten(&p.observed),
                flatten(&p.rendered),
                p.patch_size,
                p.patch_size,
                cfg.window,
                SsimConstants::default(),
            )
        })
        .collect::<Result<_>>()?;
    let err: Vec<f64> = errs.iter().flat_map(|e| e.errors.iter().copied()).collect();

    let observed: Vec<[f64; 3]> = patches.iter().flat_map(|p| p.observed.iter().copied()).collect();
    let rendered: Vec<[f64; 3]> = patches.iter().flat_map(|p| p.rendered.iter().copied()).collect();
    let nerf = loss_nerf(&observed, &rendered, beta)?;
    let uncer = loss_uncer(&err, beta, w.lambda1)?;
    let reg = loss_reg(beta, sets)?;

    let routing = Routing {
        nerf_to_field: w.lambda2 > 0.0,
        nerf_to_g: w.lambda2 > 0.0 && cfg.coupling.nerf_to_g,
        uncer_to_field: w.lambda3 > 0.0 && cfg.coupling.uncer_to_field,
        uncer_to_g: w.lambda3 > 0.0,
        reg_to_g: w.lambda4 > 0.0,
    };

    // Field side: reconstruction term, plus the coupled uncertainty term.
    let mut grad_rendered: Vec<[f64; 3]> = if routing.nerf_to_field {
        nerf.grad_color.iter().map(|g| [w.lambda2 * g[0], w.lambda2 * g[1], w.lambda2 * g[2]]).collect()
    } else {
        vec![[0.0; 3]; n_rays]
    };
    if routing.uncer_to_field {
        let derr: Vec<f64> = loss_uncer_grad_err(beta).iter().map(|g| w.lambda3 * g).collect();
        let mut offset = 0;
        let per_patch: Vec<Vec<f64>> = patches
            .iter()
            .zip(&errs)
            .map(|(p, e)| {
                let k = p.observed.len();
                let d = &derr[offset..offset + k];
                offset += k;
                (p, e, d)
            })
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(p, e, d)| patch_error_backward(cfg.ssim_mode, flatten(&p.observed), flatten(&p.rendered), e, d))
            .collect();
        for (g, d) in grad_rendered.iter_mut().zip(per_patch.iter().flat_map(|v| v.chunks_exact(3))) {
            for k in 0..3 {
                g[k] += d[k];
            }
        }
    }

    // G side: uncertainty and regulariser, plus the coupled reconstruction term.
    let mut grad_beta = vec![0.0; n_rays];
    for (i, g) in grad_beta.iter_mut().enumerate() {
        if routing.uncer_to_g {
            *g += w.lambda3 * uncer.grad[i];
        }
        if routing.reg_to_g {
            *g += w.lambda4 * reg.grad[i];
        }
        if routing.nerf_to_g {
            *g += w.lambda2 * nerf.grad_beta[i];
        }
    }

    let records = (0..n_rays)
        .map(|i| RayLossRecord {
            ssim_err: err[i],
            beta: beta[i],
            l_uncer: uncer.per_ray[i],
            l_nerf: nerf.per_ray[i],
            l_reg: reg.per_ray[i],
        })
        .collect();

    Ok(LossBundle {
        value: w.lambda2 * nerf.value + w.lambda3 * uncer.value + w.lambda4 * reg.value,
        l_nerf: nerf.value,
        l_uncer: uncer.value,
        l_reg: reg.value,
        grad_rendered,
        grad_beta,
        records,
        routing,
    })
}
