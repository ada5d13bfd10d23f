//! Loss system: SSIM decomposition, the uncertainty and reconstruction losses,
//! the neighbour-set regulariser and the routed combined objective.

mod losses;
mod objective;
mod ssim;

pub use losses::{
    loss_nerf, loss_reg, loss_uncer, loss_uncer_grad_err, neighbor_sets, optimal_beta, refined_beta, LossGrad, LossWeights,
    NeighborSets, NerfLoss,
};
pub use objective::{total_step_loss, Coupling, LossBundle, ObjectiveConfig, PatchColors, RayLossRecord, Routing};
pub use ssim::{
    conventional_error, modified_error, patch_error, patch_error_backward, ssim_components, ssim_components_backward,
    ssim_error_map, PatchError, SsimConstants, SsimMaps, SsimMode, WindowStats, LOSS_WINDOW, METRIC_WINDOW,
};
