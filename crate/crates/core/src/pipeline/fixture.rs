//! Synthetic scenes rendered from a ring of cameras, used as stand-in
//! capture data with a known ground truth.

use super::{PipelineError, Result};
use crate::camera::{write_dataset, CameraIntrinsics, Pose, Split, View, ViewDataset, DEFAULT_T_FAR, DEFAULT_T_NEAR};
use crate::gsplat::{logit, rasterize, rgb_to_dc, save_ply, Gaussian3D, GaussianCloud, SH_COEFFS};
use crate::imaging::{ImageRGB, WHITE};
use crate::nerf::{render_view, RadianceField, RenderConfig};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureKind {
    /// A seeded random Gaussian cloud, saved as `ground_truth.ply`.
    CloudScene,
    /// Soft analytic density blobs with view-independent color.
    LambertianBlobs,
}

impl std::str::FromStr for FixtureKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cloud_scene" | "cloud-scene" => Ok(Self::CloudScene),
            "lambertian_blobs" | "lambertian-blobs" => Ok(Self::LambertianBlobs),
            other => Err(format!("unknown fixture {other:?} (expected cloud_scene or lambertian_blobs)")),
        }
    }
}

pub const RING_RADIUS: f64 = 4.0;
const RING_ELEVATION: f64 = 0.3;
const SCENE_RADIUS: f64 = 0.8;
const CLOUD_SIZE: usize = 50;
const BLOB_COUNT: usize = 6;
const BLOB_SAMPLES: usize = 128;

/// A generated fixture: what was written to disk, kept in memory.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub train: ViewDataset,
    pub test: ViewDataset,
    /// The generating cloud for [`FixtureKind::CloudScene`].
    pub ground_truth: Option<GaussianCloud>,
}

/// Every fifth view is held out; with fewer than five views the last one is.
pub fn is_test_view(index: usize, views: usize) -> bool {
    if views < 5 {
        index + 1 == views
    } else {
        index % 5 == 4
    }
}

/// Cameras on a circle of radius 4 around the origin, alternating slightly
/// above and below the horizon, all looking at the origin with +Z up.
pub fn ring_poses(views: usize) -> Vec<Pose> {
    (0..views)
        .map(|i| {
            let az = std::f64::consts::TAU * i as f64 / views as f64;
            let el = if i % 2 == 0 { RING_ELEVATION } else { -RING_ELEVATION };
            let eye = RING_RADIUS * Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            Pose::look_at(eye, Vector3::zeros(), Vector3::z())
        })
        .collect()
}

/// Square intrinsics whose field of view fits a 1.2-radius disc at the ring distance.
pub fn fixture_intrinsics(resolution: usize) -> Result<CameraIntrinsics> {
    Ok(CameraIntrinsics::from_fov(resolution, resolution, 2.0 * (1.2 / RING_RADIUS).atan())?)
}

/// The ground-truth cloud of the `cloud_scene` fixture.
pub fn random_cloud(seed: u64) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussians = (0..CLOUD_SIZE)
        .map(|_| {
            let p = loop {
                let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                    break p.map(|v| v * SCENE_RADIUS);
                }
            };
            let mut g = Gaussian3D::isotropic(p, 0.1, 0.5, [0.5; 3]);
            g.log_scale = std::array::from_fn(|_| rng.random_range(0.06f64.ln()..0.22f64.ln()) as f32);
            g.rotation = std::array::from_fn(|_| rng.random_range(-1.0f32..1.0));
            g.normalize_rotation();
            g.opacity_logit = logit(rng.random_range(0.6..0.95)) as f32;
            g.sh = [[0.0; 3]; SH_COEFFS];
            g.sh[0] = std::array::from_fn(|_| rgb_to_dc(rng.random_range(0.05..0.95)) as f32);
            g
        })
        .collect();
    GaussianCloud::new(gaussians, 0)
}

/// Sum of isotropic density bumps; color is the density-weighted blend of
/// blob colors and does not depend on the viewing direction.
#[derive(Clone, Debug)]
pub struct Blobs {
    centers: Vec<[f64; 3]>,
    radii: Vec<f64>,
    peaks: Vec<f64>,
    colors: Vec<[f64; 3]>,
}

impl Blobs {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Blobs {
            centers: vec![],
            radii: vec![],
            peaks: vec![],
            colors: vec![],
        };
        for _ in 0..BLOB_COUNT {
            b.centers.push(std::array::from_fn(|_| rng.random_range(-0.5..0.5)));
            b.radii.push(rng.random_range(0.12..0.3));
            b.peaks.push(rng.random_range(10.0..30.0));
            b.colors.push(std::array::from_fn(|_| rng.random_range(0.1..0.9)));
        }
        b
    }
}

impl RadianceField for Blobs {
    fn query(&self, points: &[[f64; 3]], _dirs: &[[f64; 3]]) -> (Vec<[f64; 3]>, Vec<f64>) {
        let mut rgb = Vec::with_capacity(points.len());
        let mut sigma = Vec::with_capacity(points.len());
        for p in points {
            let mut s = 0.0;
            let mut c = [0.0; 3];
            for k in 0..self.centers.len() {
                let d2: f64 = (0..3).map(|i| (p[i] - self.centers[k][i]).powi(2)).sum();
                let sk = self.peaks[k] * (-0.5 * d2 / (self.radii[k] * self.radii[k])).exp();
                s += sk;
                for i in 0..3 {
                    c[i] += sk * self.colors[k][i];
                }
            }
            rgb.push(if s > 0.0 { c.map(|v| v / s) } else { [0.5; 3] });
            sigma.push(s);
        }
        (rgb, sigma)
    }
}

/// Renders a fixture scene and writes `train/`, `test/` and their
/// manifests under `root` (plus `ground_truth.ply` for the cloud scene).
pub fn make_fixture(kind: FixtureKind, seed: u64, views: usize, resolution: usize, root: &Path) -> Result<Fixture> {
    if views < 2 {
        return Err(PipelineError::Config(format!("a fixture needs at least 2 views, got {views}")));
    }
    let intr = fixture_intrinsics(resolution)?;
    let poses = ring_poses(views);
    let (images, ground_truth) = match kind {
        FixtureKind::CloudScene => {
            let cloud = random_cloud(seed);
            let images = poses
                .iter()
                .map(|p| rasterize(&cloud, &intr, p, WHITE).map(|(img, _)| img))
                .collect::<std::result::Result<Vec<ImageRGB>, _>>()?;
            (images, Some(cloud))
        }
        FixtureKind::LambertianBlobs => {
            let blobs = Blobs::random(seed);
            let cfg = RenderConfig {
                samples_per_ray: BLOB_SAMPLES,
                t_near: DEFAULT_T_NEAR,
                t_far: DEFAULT_T_FAR,
                ..RenderConfig::default()
            };
            let images = poses
                .iter()
                .map(|p| render_view(&blobs, &intr, p, &cfg))
                .collect::<std::result::Result<Vec<ImageRGB>, _>>()?;
            (images, None)
        }
    };
    let mut train = vec![];
    let mut test = vec![];
    for (i, (image, pose)) in images.into_iter().zip(poses).enumerate() {
        let split = if is_test_view(i, views) { &mut test } else { &mut train };
        split.push(View {
            id: format!("r_{i:03}"),
            image,
            pose,
            source: None,
        });
    }
    let train = ViewDataset::new(intr, train)?;
    let test = ViewDataset::new(intr, test)?;
    std::fs::create_dir_all(root).map_err(|source| PipelineError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    write_dataset(&train, root, Split::Train)?;
    write_dataset(&test, root, Split::Test)?;
    if let Some(cloud) = &ground_truth {
        save_ply(cloud, &root.join("ground_truth.ply"))?;
    }
    Ok(Fixture {
        train,
        test,
        ground_truth,
    })
}
