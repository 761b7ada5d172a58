//! Initial clouds: random points in the region every camera sees, or a
//! sparse point set.

use super::gaussian::{logit, rgb_to_dc, Gaussian3D, GaussianCloud, SH_COEFFS};
use super::ply::SparsePoint;
use super::{GsError, Result};
use crate::camera::{ViewDataset, DEFAULT_T_FAR, DEFAULT_T_NEAR};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    pub count: usize,
    pub opacity: f64,
    pub rgb: [f64; 3],
    pub seed: u64,
    /// Camera-frustum depth range used to bound the sampling box.
    pub t_near: f64,
    pub t_far: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            count: 2000,
            opacity: 0.1,
            rgb: [0.5; 3],
            seed: 0,
            t_near: DEFAULT_T_NEAR,
            t_far: DEFAULT_T_FAR,
        }
    }
}

const PROBES: usize = 20_000;

/// Uniform random Gaussians inside the bounding box of the region seen by
/// every camera between `t_near` and `t_far`. The region is estimated by
/// rejection-sampling the box around all frustum corners.
pub fn init_from_dataset(dataset: &ViewDataset, cfg: &InitConfig) -> Result<GaussianCloud> {
    if dataset.is_empty() {
        return Err(GsError::EmptyDataset);
    }
    if cfg.count == 0 {
        return Err(GsError::Config("initial Gaussian count must be positive".into()));
    }
    let intr = dataset.intrinsics;
    let (w, h, f) = (intr.width as f64, intr.height as f64, intr.focal);
    let cams: Vec<_> = dataset
        .views
        .iter()
        .map(|v| (v.pose.rotation(), v.pose.translation()))
        .collect();

    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for (r, c) in &cams {
        for t in [cfg.t_near, cfg.t_far] {
            for (sx, sy) in [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)] {
                let d = Vector3::new((sx - w / 2.0) / f, -(sy - h / 2.0) / f, -1.0);
                let p = c + r * d * t;
                lo = lo.inf(&p);
                hi = hi.sup(&p);
            }
        }
    }

    let sees = |p: &Vector3<f64>, (r, c): &(nalgebra::Matrix3<f64>, Vector3<f64>)| {
        let q = r.transpose() * (p - c);
        let depth = -q.z;
        if depth < cfg.t_near || depth > cfg.t_far {
            return false;
        }
        let u = f * q.x / depth + w / 2.0;
        let v = -f * q.y / depth + h / 2.0;
        (0.0..w).contains(&u) && (0.0..h).contains(&v)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut blo = Vector3::repeat(f64::INFINITY);
    let mut bhi = Vector3::repeat(f64::NEG_INFINITY);
    let mut accepted = 0;
    for _ in 0..PROBES {
        let p = Vector3::from_fn(|i, _| rng.random_range(lo[i]..=hi[i]));
        if cams.iter().all(|cam| sees(&p, cam)) {
            blo = blo.inf(&p);
            bhi = bhi.sup(&p);
            accepted += 1;
        }
    }
    if accepted < 2 {
        return Err(GsError::Config(
            "the training cameras share no common view volume; supply sparse points instead".into(),
        ));
    }

    let positions: Vec<[f64; 3]> = (0..cfg.count)
        .map(|_| std::array::from_fn(|i| rng.random_range(blo[i]..=bhi[i])))
        .collect();
    Ok(build(&positions, |_| cfg.rgb, cfg.opacity))
}

/// One Gaussian per sparse point, colored by the point when it has a color.
pub fn init_from_points(points: &[SparsePoint], cfg: &InitConfig) -> Result<GaussianCloud> {
    if points.is_empty() {
        return Err(GsError::Config("sparse point set is empty".into()));
    }
    let positions: Vec<[f64; 3]> = points.iter().map(|p| p.position).collect();
    Ok(build(&positions, |i| points[i].rgb.unwrap_or(cfg.rgb), cfg.opacity))
}

fn build(positions: &[[f64; 3]], rgb: impl Fn(usize) -> [f64; 3], opacity: f64) -> GaussianCloud {
    let scales = knn_scales(positions);
    let gaussians = positions
        .iter()
        .zip(scales)
        .enumerate()
        .map(|(i, (p, s))| {
            let mut sh = [[0.0f32; 3]; SH_COEFFS];
            sh[0] = rgb(i).map(|c| rgb_to_dc(c) as f32);
            Gaussian3D {
                position: p.map(|v| v as f32),
                rotation: [1.0, 0.0, 0.0, 0.0],
                log_scale: [s.ln() as f32; 3],
                opacity_logit: logit(opacity) as f32,
                sh,
            }
        })
        .collect();
    GaussianCloud::new(gaussians, 0)
}

/// Mean distance to the three nearest neighbours, floored to stay positive.
fn knn_scales(positions: &[[f64; 3]]) -> Vec<f64> {
    const K: usize = 3;
    let n = positions.len();
    if n == 1 {
        return vec![0.01];
    }
    (0..n)
        .map(|i| {
            let mut best = [f64::INFINITY; K];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d2: f64 = (0..3).map(|k| (positions[i][k] - positions[j][k]).powi(2)).sum();
                if d2 < best[K - 1] {
                    best[K - 1] = d2;
                    best.sort_by(f64::total_cmp);
                }
            }
            let used: Vec<f64> = best.iter().filter(|d| d.is_finite()).map(|d| d.sqrt()).collect();
            (used.iter().sum::<f64>() / used.len() as f64).max(1e-7)
        })
        .collect()
}
