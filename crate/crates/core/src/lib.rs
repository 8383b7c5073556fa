//! Structure-texture guided token pruning for coarse-to-fine (next-scale)
//! autoregressive inference, plus a small random-weight transformer pipeline
//! to measure what pruning costs and saves.

pub mod error;
pub mod flops;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod recovery;
pub mod scene;
pub mod scoring;
pub mod timing;

pub use error::{Error, Result};
pub use flops::{flop_count, FlopBreakdown};
pub use grid::{
    avg_pool_3x3, center_tokens, gather_tokens, make_coord_grid, CoordGrid, FeatureGrid,
    SparseTokens,
};
pub use metrics::{psnr, ssim, PSNR_CAP_DB};
pub use model::{ModelConfig, ToyModel};
pub use pipeline::{
    inject_noise, run_dense, run_pruned, CacheMode, NoiseInjection, PipelineRun, PruneSpec,
    RunOptions, ScaleSchedule, ScaleTrace,
};
pub use recovery::{
    anchor_copy, anchor_grid, cache_upsample, force_include, nn_propagate, RecoveryKind,
    RecoveryStrategy,
};
pub use scoring::{
    first_principal_direction, joint_select, keep_count, l2norm_score, random_score, select_with,
    structural_score, textural_score, PruneParams, ScoreVector, Strategy,
};
