//! A compact NeRF: encoded MLP radiance field, quadrature renderer,
//! batched training and a JSON checkpoint.

mod encoding;
mod model;
mod render;
mod train;

pub use encoding::{encoded_len, positional_encode, EncodingConfig};
pub use model::{parameter_count, NerfModel, EMPTY_SPACE_BIAS};
pub use render::{composite_samples, render_ray, render_view, Composite, RadianceField, RenderConfig};
pub use train::{train_nerf, NerfTrainConfig, NerfTrainOutput};

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum NerfError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training dataset has no views")]
    EmptyDataset,
    #[error("loss or gradient became non-finite at iteration {iteration}; lower the learning rate")]
    NonFinite { iteration: usize },
    #[error("{path}: bad checkpoint: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T, E = NerfError> = std::result::Result<T, E>;

const CHECKPOINT_FORMAT: &str = "nerf-mlp";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    model: NerfModel,
}

/// Writes the model as JSON; every parameter round-trips exactly.
pub fn save_checkpoint(model: &NerfModel, path: &Path) -> Result<()> {
    let ckpt = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        model: model.clone(),
    };
    let text = serde_json::to_string(&ckpt).map_err(|e| NerfError::Checkpoint {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(|source| NerfError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<NerfModel> {
    let bad = |reason: String| NerfError::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|source| NerfError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported format {} v{}", ckpt.format, ckpt.version)));
    }
    ckpt.model.validate().map_err(|e| bad(e.to_string()))?;
    Ok(ckpt.model)
}
