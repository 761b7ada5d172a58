use super::{CameraError, CameraIntrinsics, Pose, Result};
use crate::imaging::{load_image, save_image, ImageRGB};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Val => "val",
        }
    }

    pub fn manifest_name(self) -> String {
        format!("transforms_{}.json", self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "val" => Ok(Split::Val),
            other => Err(format!("unknown split {other:?} (expected train, test or val)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub id: String,
    pub image: ImageRGB,
    pub pose: Pose,
    /// File the image was read from, when it came from disk.
    pub source: Option<PathBuf>,
}

/// Images paired with camera poses under one set of intrinsics.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewDataset {
    pub intrinsics: CameraIntrinsics,
    pub views: Vec<View>,
}

impl ViewDataset {
    /// Checks image dimensions against the intrinsics and id uniqueness.
    pub fn new(intrinsics: CameraIntrinsics, views: Vec<View>) -> Result<Self> {
        let mut seen = HashSet::new();
        for v in &views {
            if !seen.insert(v.id.as_str()) {
                return Err(CameraError::DuplicateView(v.id.clone()));
            }
            if v.image.dims() != (intrinsics.width, intrinsics.height) {
                return Err(CameraError::InvalidIntrinsics(format!(
                    "view {} is {:?}, intrinsics say {}x{}",
                    v.id,
                    v.image.dims(),
                    intrinsics.width,
                    intrinsics.height
                )));
            }
        }
        Ok(Self { intrinsics, views })
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.views.iter().map(|v| v.pose).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    camera_angle_x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    h: Option<usize>,
    frames: Vec<Frame>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Frame {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
}

fn view_id_from_path(file_path: &str) -> String {
    let trimmed = file_path.trim_start_matches("./");
    trimmed.strip_suffix(".png").unwrap_or(trimmed).to_string()
}

/// Loads `transforms_<split>.json` under `root` and every referenced PNG,
/// compositing RGBA over `background`. Frame order is preserved.
pub fn load_dataset(root: &Path, split: Split, background: [f64; 3]) -> Result<ViewDataset> {
    let manifest_path = root.join(split.manifest_name());
    let malformed = |reason: String| CameraError::Manifest {
        path: manifest_path.clone(),
        reason,
    };
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| malformed(e.to_string()))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;

    let mut views = Vec::with_capacity(manifest.frames.len());
    for frame in &manifest.frames {
        let id = view_id_from_path(&frame.file_path);
        let mut path = root.join(frame.file_path.trim_start_matches("./"));
        if path.extension().is_none() {
            path.set_extension("png");
        }
        let pose = Pose::from_rows(frame.transform_matrix).map_err(|e| match e {
            CameraError::NonRigid(reason) => CameraError::NonRigid(format!("frame {id}: {reason}")),
            other => other,
        })?;
        let image = load_image(&path, background).map_err(|source| CameraError::Image {
            view: id.clone(),
            source,
        })?;
        views.push(View {
            id,
            image,
            pose,
            source: Some(path),
        });
    }

    let (width, height) = match views.first() {
        Some(v) => v.image.dims(),
        None => (manifest.w.unwrap_or(1), manifest.h.unwrap_or(1)),
    };
    let intrinsics = CameraIntrinsics::from_fov(width, height, manifest.camera_angle_x)
        .map_err(|e| malformed(e.to_string()))?;
    ViewDataset::new(intrinsics, views)
}

/// File stems for each view: the last path component of the id, or the
/// whole id with separators replaced when stems would collide.
pub(crate) fn file_stems(views: &[View]) -> Vec<String> {
    let short: Vec<String> = views
        .iter()
        .map(|v| v.id.rsplit('/').next().unwrap_or(&v.id).to_string())
        .collect();
    let unique = short.iter().collect::<HashSet<_>>().len() == short.len();
    if unique {
        short
    } else {
        views.iter().map(|v| v.id.replace(['/', '\\'], "_")).collect()
    }
}

/// Writes `<root>/<split>/<stem>.png` for every view plus
/// `<root>/transforms_<split>.json`.
pub fn write_dataset(ds: &ViewDataset, root: &Path, split: Split) -> Result<()> {
    let dir = root.join(split.as_str());
    std::fs::create_dir_all(&dir)?;
    let stems = file_stems(&ds.views);
    let mut frames = Vec::with_capacity(ds.views.len());
    for (view, stem) in ds.views.iter().zip(&stems) {
        save_image(&view.image, &dir.join(format!("{stem}.png"))).map_err(|source| {
            CameraError::Image {
                view: view.id.clone(),
                source,
            }
        })?;
        frames.push(Frame {
            file_path: format!("./{}/{stem}", split.as_str()),
            transform_matrix: view.pose.to_rows(),
        });
    }
    write_manifest(root, split, &ds.intrinsics, frames)
}

pub(crate) fn write_manifest_for(
    root: &Path,
    split: Split,
    intrinsics: &CameraIntrinsics,
    entries: impl IntoIterator<Item = (String, Pose)>,
) -> Result<()> {
    let frames = entries
        .into_iter()
        .map(|(file_path, pose)| Frame {
            file_path,
            transform_matrix: pose.to_rows(),
        })
        .collect();
    write_manifest(root, split, intrinsics, frames)
}

fn write_manifest(root: &Path, split: Split, intr: &CameraIntrinsics, frames: Vec<Frame>) -> Result<()> {
    let manifest = Manifest {
        camera_angle_x: intr.camera_angle_x(),
        w: Some(intr.width),
        h: Some(intr.height),
        frames,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(root.join(split.manifest_name()), text)?;
    Ok(())
}
