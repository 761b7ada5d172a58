//! End-to-end runs: transform, train, render and evaluate.

mod config;
mod fixture;
mod report;
mod run;

pub use config::{NerfModelConfig, PipelineConfig, Protocol, Renderer, TransformChoice};
pub use fixture::{fixture_intrinsics, is_test_view, make_fixture, random_cloud, ring_poses, Blobs, Fixture, FixtureKind, RING_RADIUS};
pub use report::{comparison_markdown, emit_report, Aggregates, EvalReport, RunMetadata, PROTOCOL_B_NOTE};
pub use run::{evaluate, render_novel_views, run_pipeline, train_renderer, transform_label, write_renders, TrainedModel};

use std::path::PathBuf;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Transform,
    Train,
    Render,
    GroundTruth,
    Evaluate,
    Report,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Transform => "transform",
            Stage::Train => "train",
            Stage::Render => "render",
            Stage::GroundTruth => "ground-truth",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("[{stage}] {source}")]
    Stage {
        stage: Stage,
        source: Box<PipelineError>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} is in use by another run (remove .lock if no run is active)")]
    Locked(PathBuf),
    #[error("{0} already holds results; pass the overwrite flag to replace them")]
    OutputExists(PathBuf),
    #[error(transparent)]
    Camera(#[from] crate::camera::CameraError),
    #[error(transparent)]
    Faceswap(#[from] crate::faceswap::FaceswapError),
    #[error(transparent)]
    Gs(#[from] crate::gsplat::GsError),
    #[error(transparent)]
    Nerf(#[from] crate::nerf::NerfError),
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl PipelineError {
    /// The stage that failed, if the error came out of a pipeline run.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
