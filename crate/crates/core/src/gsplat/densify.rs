//! Adaptive density control: clone small Gaussians and split large ones
//! where the screen-space position gradient is high, then prune.

use super::gaussian::{Gaussian3D, GaussianCloud};
use super::raster::{GsGradients, RasterAux};
use super::{GsError, Result};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensifyConfig {
    /// Mean screen-space position-gradient norm (normalized device units)
    /// at or above which a Gaussian is cloned or split.
    pub grad_threshold: f64,
    /// Largest world-space standard deviation at which a Gaussian is
    /// cloned rather than split.
    pub split_scale_threshold: f64,
    pub opacity_prune: f64,
    /// Iterations between passes.
    pub interval: usize,
    pub max_gaussians: usize,
    /// Prune Gaussians whose screen radius exceeded this many pixels.
    pub max_screen_radius: Option<f64>,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            grad_threshold: 2e-4,
            split_scale_threshold: 0.01,
            opacity_prune: 0.005,
            interval: 100,
            max_gaussians: 200_000,
            max_screen_radius: None,
        }
    }
}

impl DensifyConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.grad_threshold > 0.0
            && self.split_scale_threshold > 0.0
            && self.opacity_prune > 0.0
            && self.interval > 0
            && self.max_gaussians > 0
            && self.max_screen_radius.is_none_or(|r| r > 0.0);
        if positive {
            Ok(())
        } else {
            Err(GsError::Config(format!("densify thresholds must be positive: {self:?}")))
        }
    }
}

/// Running per-Gaussian statistics between density-control passes.
#[derive(Clone, Debug, PartialEq)]
pub struct DensifyStats {
    grad_sum: Vec<f64>,
    position_grad: Vec<[f64; 3]>,
    count: Vec<u32>,
    max_radii: Vec<f64>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_sum: vec![0.0; n],
            position_grad: vec![[0.0; 3]; n],
            count: vec![0; n],
            max_radii: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count.is_empty()
    }

    /// Adds one rendered view. Pixel-space mean gradients are rescaled to
    /// normalized device coordinates so the threshold is resolution-free.
    pub fn record(&mut self, aux: &RasterAux, grads: &GsGradients, width: usize, height: usize) {
        let (sx, sy) = (0.5 * width as f64, 0.5 * height as f64);
        for i in 0..self.len() {
            if !aux.visible[i] {
                continue;
            }
            let [gx, gy] = grads.mean2d[i];
            self.grad_sum[i] += (gx * sx).hypot(gy * sy);
            for k in 0..3 {
                self.position_grad[i][k] += grads.position[i][k];
            }
            self.count[i] += 1;
            self.max_radii[i] = self.max_radii[i].max(aux.radii[i]);
        }
    }

    /// Mean screen-space gradient norm over the views in which `i` was visible.
    pub fn mean_grad(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.count[i] as f64
        }
    }

    pub fn max_radius(&self, i: usize) -> f64 {
        self.max_radii[i]
    }
}

/// Result of a density-control pass. `origin[i]` is the input index that
/// output Gaussian `i` continues, or `None` for a newly created one.
#[derive(Clone, Debug, PartialEq)]
pub struct DensifyOutcome {
    pub cloud: GaussianCloud,
    pub origin: Vec<Option<usize>>,
}

const SPLIT_FACTOR: f64 = 1.6;

pub fn densify_and_prune<R: Rng>(
    cloud: &GaussianCloud,
    stats: &DensifyStats,
    cfg: &DensifyConfig,
    rng: &mut R,
) -> Result<DensifyOutcome> {
    cfg.validate()?;
    if stats.len() != cloud.len() {
        return Err(GsError::Config(format!(
            "statistics cover {} Gaussians, cloud has {}",
            stats.len(),
            cloud.len()
        )));
    }
    let mut kept: Vec<(Gaussian3D, Option<usize>)> = Vec::with_capacity(cloud.len());
    let mut created: Vec<Gaussian3D> = Vec::new();
    let mut total = cloud.len();
    for (i, g) in cloud.gaussians.iter().enumerate() {
        let hot = stats.mean_grad(i) >= cfg.grad_threshold;
        if !hot || total + 1 > cfg.max_gaussians {
            kept.push((g.clone(), Some(i)));
            continue;
        }
        total += 1;
        if g.max_scale() >= cfg.split_scale_threshold {
            created.extend(split(g, rng));
        } else {
            kept.push((g.clone(), Some(i)));
            created.push(clone_nudged(g, stats.position_grad[i]));
        }
    }

    let survives = |g: &Gaussian3D, radius: f64| {
        g.opacity() >= cfg.opacity_prune && cfg.max_screen_radius.is_none_or(|cap| radius <= cap) && g.is_finite()
    };
    let mut gaussians = Vec::with_capacity(kept.len() + created.len());
    let mut origin = Vec::with_capacity(kept.len() + created.len());
    for (g, o) in kept {
        let radius = o.map_or(0.0, |i| stats.max_radius(i));
        if survives(&g, radius) {
            gaussians.push(g);
            origin.push(o);
        }
    }
    for g in created {
        if survives(&g, 0.0) {
            gaussians.push(g);
            origin.push(None);
        }
    }
    Ok(DensifyOutcome {
        cloud: GaussianCloud::new(gaussians, cloud.sh_degree()),
        origin,
    })
}

/// Two children drawn from the parent's own distribution, each shrunk by
/// the split factor.
fn split<R: Rng>(g: &Gaussian3D, rng: &mut R) -> [Gaussian3D; 2] {
    let r = g.covariance_factor();
    let m = g.position_f64();
    std::array::from_fn(|_| {
        let e = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let p = m + r * e;
        let mut child = g.clone();
        child.position = [p.x as f32, p.y as f32, p.z as f32];
        child.log_scale = g.log_scale.map(|s| (s as f64 - SPLIT_FACTOR.ln()) as f32);
        child
    })
}

/// A copy displaced by one standard deviation against the accumulated
/// position gradient, so the pair starts moving apart.
fn clone_nudged(g: &Gaussian3D, grad: [f64; 3]) -> Gaussian3D {
    let mut c = g.clone();
    let d = Vector3::from(grad);
    let n = d.norm();
    if n > 0.0 && n.is_finite() {
        let step = -d / n * g.max_scale();
        for k in 0..3 {
            c.position[k] = (g.position[k] as f64 + step[k]) as f32;
        }
    }
    c
}

impl Gaussian3D {
    /// `R(q) diag(exp(s))`, whose product with its transpose is the covariance.
    pub(crate) fn covariance_factor(&self) -> Matrix3<f64> {
        super::gaussian::rotation_matrix(self.rotation_f64()) * Matrix3::from_diagonal(&Vector3::from(self.scale()))
    }
}
