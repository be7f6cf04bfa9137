//! Two-stage sample selection for active finetuning.
//!
//! Stage 1 picks `K` diverse core samples by fitting continuous parameters on
//! the unit sphere ([`activeft`]). Stage 2 treats the cores as pseudo-class
//! centers, clusters and denoises the pool around them ([`geometry`],
//! [`denoise`]) and spends the remaining budget on samples near the
//! pseudo-class boundaries ([`boundary`]). [`pipeline::run_bilaf`] composes
//! the stages; [`baselines`] and [`eval`] provide comparison selectors and a
//! nearest-centroid proxy for downstream accuracy.

pub mod activeft;
pub mod baselines;
pub mod boundary;
pub mod denoise;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod pca;
pub mod pipeline;
pub mod pool;
pub mod util;

pub use activeft::{activeft_grad, activeft_loss, select_cores, CoreParams, CoreSet, OptimizerConfig};
pub use baselines::{select_fds, select_kmeans, select_random, BaselineConfig, BaselineMethod};
pub use boundary::{
    allocate_budgets, boundary_score, select_boundary, BoundaryConfig, Criterion, PickRecord, Process,
    SelectionResult, Stage,
};
pub use denoise::{denoise, denoise_density, denoise_distance, denoise_idc, DenoiseConfig, DenoiseReport, DenoiseStrategy};
pub use error::{Error, Result};
pub use eval::{compare_methods, evaluate_selection, Comparison, EvalReport, MethodSpec};
pub use geometry::{assign_clusters, density_distance, knn_of_point, DensityProfile, PseudoCluster};
pub use pipeline::{run_bilaf, run_bilaf_detailed, BilafRun, SelectionConfig};
pub use pool::{generate_mixture, load_pool, save_pool, FeaturePool, MixtureSpec, PoolFormat};
