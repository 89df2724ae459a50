//! Full approximation scheme multigrid for inpainting with edge-enhancing diffusion.

pub mod bench;
pub mod cg;
pub mod grid;
pub mod operator;
pub mod solver;
pub mod tensor;

pub use bench::{random_mask, synthetic_image};
pub use cg::{cg_reference_solve, CgConfig};
pub use grid::{prolong, restrict_image, restrict_mask, GridHierarchy, InpaintingProblem, SolverState};
pub use operator::{apply_operator, eed_residual, equation_residual, residual_norm};
pub use solver::{
    fas_two_grid, fmg_solve, render_residual_log, single_grid_solve, smooth, v_cycle, vcycle_solve, CycleConfig,
    FmgConfig, ResidualRecord, SolveReport, WorkMeter,
};
pub use tensor::{eed_tensor, TensorField, TensorModel};
