//! Volume-rendering quadrature along camera rays.

use super::model::NerfModel;
use super::{NerfError, Result};
use crate::camera::{ray_for_pixel_unchecked, CameraIntrinsics, Pose, Ray, DEFAULT_T_FAR, DEFAULT_T_NEAR};
use crate::imaging::{ImageRGB, WHITE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Anything that maps points and view directions to color and density.
pub trait RadianceField: Sync {
    /// Colors and densities for each `(points[i], dirs[i])` pair.
    fn query(&self, points: &[[f64; 3]], dirs: &[[f64; 3]]) -> (Vec<[f64; 3]>, Vec<f64>);
}

impl RadianceField for NerfModel {
    fn query(&self, points: &[[f64; 3]], dirs: &[[f64; 3]]) -> (Vec<[f64; 3]>, Vec<f64>) {
        let fw = self.forward(points, dirs);
        let rgb = fw.rgb.outer_iter().map(|r| [r[0], r[1], r[2]]).collect();
        (rgb, fw.sigma.to_vec())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub samples_per_ray: usize,
    pub t_near: f64,
    pub t_far: f64,
    pub background: [f64; 3],
    /// Jitter each sample within its bin instead of using bin midpoints.
    pub stratified: bool,
    pub rng_seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            samples_per_ray: 64,
            t_near: DEFAULT_T_NEAR,
            t_far: DEFAULT_T_FAR,
            background: WHITE,
            stratified: false,
            rng_seed: 0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_ray < 2 {
            return Err(NerfError::Config("samples_per_ray must be at least 2".into()));
        }
        if !(self.t_near.is_finite() && self.t_far.is_finite() && self.t_near < self.t_far) {
            return Err(NerfError::Config(format!(
                "need finite t_near < t_far, got {} and {}",
                self.t_near, self.t_far
            )));
        }
        Ok(())
    }
}

/// Sample depths in `[t_near, t_far]`: one per equal-width bin.
pub(crate) fn sample_depths(t_near: f64, t_far: f64, n: usize, jitter: Option<&mut ChaCha8Rng>) -> Vec<f64> {
    let step = (t_far - t_near) / n as f64;
    match jitter {
        Some(rng) => (0..n).map(|i| t_near + (i as f64 + rng.random::<f64>()) * step).collect(),
        None => (0..n).map(|i| t_near + (i as f64 + 0.5) * step).collect(),
    }
}

/// Generator for pixel (or ray) `stream` under `seed`.
pub(crate) fn ray_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-sample quantities of one composited ray.
#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub rgb: [f64; 3],
    /// `T_i α_i` for every sample.
    pub weights: Vec<f64>,
    pub deltas: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Transmittance before each sample.
    pub transmittance: Vec<f64>,
    /// Transmittance left after the last sample.
    pub final_transmittance: f64,
}

/// Alpha-composites samples at depths `t` (ascending) with densities
/// `sigma` and colors `colors`. The last interval runs to `t_far`.
pub fn composite_samples(t: &[f64], t_far: f64, sigma: &[f64], colors: &[[f64; 3]], background: [f64; 3]) -> Composite {
    let n = t.len();
    let mut out = Composite {
        rgb: [0.0; 3],
        weights: Vec::with_capacity(n),
        deltas: Vec::with_capacity(n),
        alphas: Vec::with_capacity(n),
        transmittance: Vec::with_capacity(n),
        final_transmittance: 1.0,
    };
    let mut trans = 1.0;
    for i in 0..n {
        let delta = if i + 1 < n { t[i + 1] - t[i] } else { t_far - t[i] };
        let alpha = 1.0 - (-sigma[i] * delta).exp();
        let w = trans * alpha;
        for c in 0..3 {
            out.rgb[c] += w * colors[i][c];
        }
        out.deltas.push(delta);
        out.alphas.push(alpha);
        out.transmittance.push(trans);
        out.weights.push(w);
        trans *= 1.0 - alpha;
    }
    for c in 0..3 {
        out.rgb[c] += trans * background[c];
    }
    out.final_transmittance = trans;
    out
}

/// Renders one ray over its own `[t_near, t_far]` bounds.
pub fn render_ray<F: RadianceField + ?Sized>(field: &F, ray: &Ray, cfg: &RenderConfig) -> Result<[f64; 3]> {
    cfg.validate()?;
    Ok(render_ray_stream(field, ray, cfg, 0))
}

pub(crate) fn render_ray_stream<F: RadianceField + ?Sized>(field: &F, ray: &Ray, cfg: &RenderConfig, stream: u64) -> [f64; 3] {
    render_rays(field, std::slice::from_ref(ray), cfg, stream)[0]
}

/// Renders `rays` with one field query; ray `i` jitters with stream `first_stream + i`.
fn render_rays<F: RadianceField + ?Sized>(field: &F, rays: &[Ray], cfg: &RenderConfig, first_stream: u64) -> Vec<[f64; 3]> {
    let s = cfg.samples_per_ray;
    let mut depths = Vec::with_capacity(rays.len());
    let mut points = Vec::with_capacity(rays.len() * s);
    let mut dirs = Vec::with_capacity(rays.len() * s);
    for (i, ray) in rays.iter().enumerate() {
        let mut rng = cfg.stratified.then(|| ray_rng(cfg.rng_seed, first_stream + i as u64));
        let t = sample_depths(ray.t_near, ray.t_far, s, rng.as_mut());
        for &ti in &t {
            let p = ray.at(ti);
            points.push([p.x, p.y, p.z]);
            dirs.push([ray.direction.x, ray.direction.y, ray.direction.z]);
        }
        depths.push(t);
    }
    let (colors, sigma) = field.query(&points, &dirs);
    rays.iter()
        .zip(&depths)
        .enumerate()
        .map(|(i, (ray, t))| {
            let rows = i * s..(i + 1) * s;
            composite_samples(t, ray.t_far, &sigma[rows.clone()], &colors[rows], cfg.background).rgb
        })
        .collect()
}

/// Renders every pixel with rays bounded by `cfg.t_near` and `cfg.t_far`.
/// Stratified jitter for pixel `y * width + x` uses stream of that index.
pub fn render_view<F: RadianceField + ?Sized>(
    field: &F,
    intr: &CameraIntrinsics,
    pose: &Pose,
    cfg: &RenderConfig,
) -> Result<ImageRGB> {
    cfg.validate()?;
    let (w, h) = (intr.width, intr.height);
    let rows: Vec<Vec<[f64; 3]>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let rays: Vec<Ray> = (0..w)
                .map(|x| ray_for_pixel_unchecked(intr, pose, x, y).with_bounds(cfg.t_near, cfg.t_far))
                .collect();
            render_rays(field, &rays, cfg, (y * w) as u64)
        })
        .collect();
    let data = rows.into_iter().flatten().flatten().collect();
    Ok(ImageRGB::new(w, h, data)?)
}
