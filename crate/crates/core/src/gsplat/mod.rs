//! 3D Gaussian splatting: scene representation, EWA projection, a
//! differentiable tile rasterizer, density control, training and PLY files.

mod densify;
mod gaussian;
mod init;
mod ply;
mod project;
mod raster;
pub mod sh;
mod train;

pub use densify::{densify_and_prune, DensifyConfig, DensifyOutcome, DensifyStats};
pub use gaussian::{
    covariance_3d, logit, rgb_to_dc, rotation_matrix, sigmoid, Gaussian3D, GaussianCloud, SH_COEFFS,
    SH_MAX_DEGREE,
};
pub use init::{init_from_dataset, init_from_points, InitConfig};
pub use ply::{load_ply, load_sparse_points, save_ply, SparsePoint};
pub use project::{project_gaussian, Projected2D, BLUR_FLOOR, NEAR_CULL};
pub use raster::{
    rasterize, rasterize_backward, GsGradients, RasterAux, ALPHA_MAX, ALPHA_MIN, TILE_SIZE,
    TRANSMITTANCE_MIN,
};
pub use sh::eval_sh;
pub use train::{scene_extent, train_gs, GsTrainConfig, GsTrainOutput};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum GsError {
    #[error("cannot render an empty Gaussian cloud")]
    EmptyCloud,
    #[error("SH degree {0} is above the supported maximum of 3")]
    ShDegree(usize),
    #[error("SH degree {degree} needs {expected} coefficients, got {got}")]
    ShCoefficientCount {
        degree: usize,
        expected: usize,
        got: usize,
    },
    #[error("pixel gradient has {got} values, expected {expected}")]
    GradientLength { expected: usize, got: usize },
    #[error("training dataset has no views")]
    EmptyDataset,
    #[error("every Gaussian was pruned at iteration {iteration}; try a lower opacity_prune or more initial points")]
    Collapsed { iteration: usize },
    #[error("loss became non-finite at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: malformed PLY header: {reason}")]
    PlyHeader { path: PathBuf, reason: String },
    #[error("{path}: PLY property mismatch: {reason}")]
    PropertyMismatch { path: PathBuf, reason: String },
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T, E = GsError> = std::result::Result<T, E>;
