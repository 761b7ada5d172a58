use super::config::{PipelineConfig, Protocol, Renderer, TransformChoice};
use super::report::{emit_report, Aggregates, EvalReport, RunMetadata};
use super::{PipelineError, Result, Stage};
use crate::camera::{load_dataset, write_dataset, CameraIntrinsics, Pose, Split, View, ViewDataset};
use crate::faceswap::{transform_dataset, TransformOptions, TransformSpec};
use crate::gsplat::{init_from_dataset, load_ply, rasterize, save_ply, train_gs, GaussianCloud};
use crate::imaging::{ImageRGB, MetricRow, PerceptualProvider};
use crate::nerf::{load_checkpoint, render_view, save_checkpoint, train_nerf, NerfModel, RenderConfig};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// A trained scene ready to render from new poses.
#[derive(Clone, Debug)]
pub enum TrainedModel {
    Gs {
        cloud: GaussianCloud,
        background: [f64; 3],
    },
    /// Rendered with bin-midpoint samples so repeated renders agree.
    Nerf { model: NerfModel, render: RenderConfig },
}

impl TrainedModel {
    pub fn renderer(&self) -> Renderer {
        match self {
            TrainedModel::Gs { .. } => Renderer::Gs,
            TrainedModel::Nerf { .. } => Renderer::Nerf,
        }
    }

    pub fn size(&self) -> usize {
        match self {
            TrainedModel::Gs { cloud, .. } => cloud.len(),
            TrainedModel::Nerf { model, .. } => model.params.len(),
        }
    }

    /// `model.ply` or `model.json` inside `dir`.
    pub fn file_name(renderer: Renderer) -> &'static str {
        match renderer {
            Renderer::Gs => "model.ply",
            Renderer::Nerf => "model.json",
        }
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(Self::file_name(self.renderer()));
        match self {
            TrainedModel::Gs { cloud, .. } => save_ply(cloud, &path)?,
            TrainedModel::Nerf { model, .. } => save_checkpoint(model, &path)?,
        }
        Ok(path)
    }

    /// Loads a `.ply` cloud or a `.json` NeRF checkpoint.
    pub fn load(path: &Path, background: [f64; 3], nerf_render: &RenderConfig) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ply") => Ok(TrainedModel::Gs {
                cloud: load_ply(path)?,
                background,
            }),
            Some("json") => Ok(TrainedModel::Nerf {
                model: load_checkpoint(path)?,
                render: RenderConfig {
                    background,
                    stratified: false,
                    ..nerf_render.clone()
                },
            }),
            _ => Err(PipelineError::Config(format!(
                "{}: expected a .ply cloud or a .json checkpoint",
                path.display()
            ))),
        }
    }
}

/// One image per pose, in order.
pub fn render_novel_views(model: &TrainedModel, poses: &[Pose], intr: &CameraIntrinsics) -> Result<Vec<ImageRGB>> {
    poses
        .iter()
        .map(|pose| match model {
            TrainedModel::Gs { cloud, background } => Ok(rasterize(cloud, intr, pose, *background)?.0),
            TrainedModel::Nerf { model, render } => Ok(render_view(model, intr, pose, render)?),
        })
        .collect()
}

/// Trains the configured renderer on `train`, returning the model and its loss curve.
pub fn train_renderer(cfg: &PipelineConfig, train: &ViewDataset) -> Result<(TrainedModel, Vec<f64>)> {
    match cfg.renderer {
        Renderer::Gs => {
            let init = init_from_dataset(train, &cfg.gs_init())?;
            let out = train_gs(train, init, &cfg.gs_train())?;
            Ok((
                TrainedModel::Gs {
                    cloud: out.cloud,
                    background: cfg.background,
                },
                out.losses,
            ))
        }
        Renderer::Nerf => {
            let tc = cfg.nerf_train();
            let init = NerfModel::random(cfg.nerf_model.encoding, cfg.nerf_model.widths.clone(), cfg.seed)?;
            let out = train_nerf(train, init, &tc)?;
            Ok((
                TrainedModel::Nerf {
                    model: out.model,
                    render: RenderConfig {
                        stratified: false,
                        ..tc.render
                    },
                },
                out.losses,
            ))
        }
    }
}

/// Scores each render against the reference view of the same index.
pub fn evaluate(renders: &[ImageRGB], reference: &ViewDataset, provider: &PerceptualProvider) -> Result<Vec<MetricRow>> {
    if renders.len() != reference.len() {
        return Err(PipelineError::Config(format!(
            "{} renders for {} reference views",
            renders.len(),
            reference.len()
        )));
    }
    renders
        .iter()
        .zip(&reference.views)
        .map(|(img, view)| Ok(MetricRow::evaluate(view.id.clone(), img, &view.image, provider)?))
        .collect()
}

/// Holds `<out>/.lock` for the life of a run.
struct OutputLock(PathBuf);

impl OutputLock {
    fn acquire(out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out).map_err(|source| PipelineError::Io {
            path: out.to_path_buf(),
            source,
        })?;
        let path = out.join(".lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(out.to_path_buf())),
            Err(source) => Err(PipelineError::Io { path, source }),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

/// Directories whose contents are re-validated by digest and may survive an overwrite.
const CACHED_DIRS: [&str; 2] = ["transformed", "ground_truth"];

fn prepare_output(out: &Path, overwrite: bool) -> Result<()> {
    let io = |path: &Path, source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    };
    let entries: Vec<PathBuf> = std::fs::read_dir(out)
        .map_err(|e| io(out, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n != ".lock"))
        .collect();
    if entries.is_empty() {
        return Ok(());
    }
    if !overwrite {
        return Err(PipelineError::OutputExists(out.to_path_buf()));
    }
    for p in entries {
        if p.file_name().and_then(|n| n.to_str()).is_some_and(|n| CACHED_DIRS.contains(&n)) {
            continue;
        }
        let r = if p.is_dir() { std::fs::remove_dir_all(&p) } else { std::fs::remove_file(&p) };
        r.map_err(|e| io(&p, e))?;
    }
    Ok(())
}

fn staged<T>(stage: Stage, r: Result<T>) -> Result<T> {
    r.map_err(|e| PipelineError::Stage {
        stage,
        source: Box::new(e),
    })
}

fn transform(spec: Option<&TransformSpec>, ds: &ViewDataset, dir: &Path, split: Split, cfg: &PipelineConfig) -> Result<ViewDataset> {
    match spec {
        None => Ok(ds.clone()),
        Some(spec) => {
            let opts = TransformOptions {
                split,
                workers: cfg.workers,
                background: cfg.background,
            };
            Ok(transform_dataset(ds, spec, dir, &opts)?.dataset)
        }
    }
}

/// Transform, train, render the held-out poses and score them. Everything
/// is written under `cfg.out`: the transformed views, the model and loss
/// curve, the renders, the reference images and the reports.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<EvalReport> {
    let start = Instant::now();
    staged(Stage::Config, cfg.validate())?;
    let out = cfg.out.as_path();
    let _lock = staged(Stage::Config, OutputLock::acquire(out))?;
    staged(Stage::Config, prepare_output(out, cfg.overwrite))?;
    let write_text = |name: &str, text: String| {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|source| PipelineError::Io { path: p, source })
    };
    staged(Stage::Config, write_text("config.json", serde_json::to_string_pretty(cfg).expect("config serializes")))?;

    let train = staged(Stage::Load, load_dataset(&cfg.dataset, Split::Train, cfg.background).map_err(Into::into))?;
    let test_root = match cfg.protocol {
        Protocol::A => cfg.dataset.as_path(),
        Protocol::B => cfg.target_dataset.as_deref().expect("validated"),
    };
    let test = staged(Stage::Load, load_dataset(test_root, Split::Test, cfg.background).map_err(Into::into))?;

    let spec = cfg.transform_spec();
    let train = staged(Stage::Transform, transform(spec.as_ref(), &train, &out.join("transformed"), Split::Train, cfg))?;

    let (model, losses) = staged(Stage::Train, train_renderer(cfg, &train))?;
    staged(Stage::Train, model.save(out).map(|_| ()))?;
    staged(Stage::Train, write_text("losses.json", serde_json::to_string(&losses).expect("losses serialize")))?;

    let renders = staged(Stage::Render, render_novel_views(&model, &test.poses(), &test.intrinsics))?;
    staged(Stage::Render, write_renders(&test, &renders, &out.join("renders")))?;

    let reference = match cfg.protocol {
        Protocol::A => staged(
            Stage::GroundTruth,
            transform(spec.as_ref(), &test, &out.join("ground_truth"), Split::Test, cfg),
        )?,
        Protocol::B => test,
    };
    let rows = staged(Stage::Evaluate, evaluate(&renders, &reference, &cfg.perceptual()))?;

    let report = EvalReport {
        renderer: cfg.renderer,
        protocol: cfg.protocol,
        transform: transform_label(cfg.transform).into(),
        aggregates: Aggregates::from_rows(&rows),
        rows,
        metadata: RunMetadata {
            config_fingerprint: cfg.fingerprint(),
            iterations: losses.len(),
            train_views: train.len(),
            test_views: reference.len(),
            model_size: model.size(),
            final_loss: losses.last().copied(),
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    };
    staged(Stage::Report, emit_report(&report, out))?;
    Ok(report)
}

pub fn transform_label(t: TransformChoice) -> &'static str {
    match t {
        TransformChoice::None => "none",
        TransformChoice::Identity => "identity",
        TransformChoice::ColorMatch => "color_match",
        TransformChoice::External => "external",
    }
}

/// Writes renders as a test split under `dir`, with the poses and ids of `views`.
pub fn write_renders(views: &ViewDataset, renders: &[ImageRGB], dir: &Path) -> Result<()> {
    let ds = ViewDataset::new(
        views.intrinsics,
        views
            .views
            .iter()
            .zip(renders)
            .map(|(v, img)| View {
                image: img.clone(),
                source: None,
                ..v.clone()
            })
            .collect(),
    )?;
    Ok(write_dataset(&ds, dir, Split::Test)?)
}
