use super::model::NerfModel;
use super::render::{composite_samples, sample_depths, RenderConfig};
use super::{NerfError, Result};
use crate::camera::{ray_for_pixel_unchecked, Ray, ViewDataset};
use crate::optim::{Adam, AdamConfig};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NerfTrainConfig {
    pub iterations: usize,
    pub batch_rays: usize,
    /// Learning rate, decayed log-linearly to `lr_final`.
    pub lr: f64,
    pub lr_final: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub render: RenderConfig,
}

impl Default for NerfTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            batch_rays: 1024,
            lr: 5e-4,
            lr_final: 5e-4,
            adam: AdamConfig::default(),
            seed: 0,
            render: RenderConfig {
                stratified: true,
                ..RenderConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NerfTrainOutput {
    pub model: NerfModel,
    /// Mean squared error of every batch.
    pub losses: Vec<f64>,
}

/// Mean squared color error over a batch of rays and its parameter gradient.
pub(crate) fn batch_loss_and_grad(
    model: &NerfModel,
    rays: &[Ray],
    targets: &[[f64; 3]],
    cfg: &RenderConfig,
    rng: &mut ChaCha8Rng,
) -> (f64, Vec<f64>) {
    let s = cfg.samples_per_ray;
    let mut depths = Vec::with_capacity(rays.len());
    let mut points = Vec::with_capacity(rays.len() * s);
    let mut dirs = Vec::with_capacity(rays.len() * s);
    for ray in rays {
        let t = sample_depths(ray.t_near, ray.t_far, s, cfg.stratified.then_some(&mut *rng));
        let d = [ray.direction.x, ray.direction.y, ray.direction.z];
        for &ti in &t {
            let p = ray.at(ti);
            points.push([p.x, p.y, p.z]);
            dirs.push(d);
        }
        depths.push(t);
    }
    let fw = model.forward(&points, &dirs);

    let scale = 2.0 / (3.0 * rays.len() as f64);
    let mut loss = 0.0;
    let mut d_sigma = Array1::zeros(points.len());
    let mut d_rgb = Array2::zeros((points.len(), 3));
    for (r, ray) in rays.iter().enumerate() {
        let rows = r * s..(r + 1) * s;
        let sigma: Vec<f64> = fw.sigma.slice(ndarray::s![rows.clone()]).to_vec();
        let colors: Vec<[f64; 3]> = (rows.clone()).map(|i| [fw.rgb[(i, 0)], fw.rgb[(i, 1)], fw.rgb[(i, 2)]]).collect();
        let comp = composite_samples(&depths[r], ray.t_far, &sigma, &colors, cfg.background);
        let mut g = [0.0; 3];
        for c in 0..3 {
            let e = comp.rgb[c] - targets[r][c];
            loss += e * e;
            g[c] = scale * e;
        }
        // behind = color contributed by everything after sample i, background included.
        let mut behind: f64 = (0..3).map(|c| g[c] * comp.final_transmittance * cfg.background[c]).sum();
        for i in (0..s).rev() {
            let row = r * s + i;
            let gc: f64 = (0..3).map(|c| g[c] * colors[i][c]).sum();
            d_sigma[row] = comp.deltas[i] * (comp.transmittance[i] * (1.0 - comp.alphas[i]) * gc - behind);
            for c in 0..3 {
                d_rgb[(row, c)] = comp.weights[i] * g[c];
            }
            behind += comp.weights[i] * gc;
        }
    }
    let grad = model.backward(&fw, &d_sigma, &d_rgb);
    (loss / (3.0 * rays.len() as f64), grad)
}

/// Fits the model to random pixel batches drawn from all views.
pub fn train_nerf(dataset: &ViewDataset, init: NerfModel, cfg: &NerfTrainConfig) -> Result<NerfTrainOutput> {
    if dataset.is_empty() {
        return Err(NerfError::EmptyDataset);
    }
    init.validate()?;
    cfg.render.validate()?;
    if cfg.batch_rays == 0 {
        return Err(NerfError::Config("batch_rays must be positive".into()));
    }
    let intr = dataset.intrinsics;
    let (w, h) = (intr.width, intr.height);
    let per_view = w * h;
    let total = per_view * dataset.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = init;
    let mut adam = Adam::new(model.params.len(), cfg.adam);
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut rays = Vec::with_capacity(cfg.batch_rays);
    let mut targets = Vec::with_capacity(cfg.batch_rays);
    for it in 0..cfg.iterations {
        rays.clear();
        targets.clear();
        for _ in 0..cfg.batch_rays {
            let k = rng.random_range(0..total);
            let view = &dataset.views[k / per_view];
            let (x, y) = (k % per_view % w, k % per_view / w);
            rays.push(ray_for_pixel_unchecked(&intr, &view.pose, x, y).with_bounds(cfg.render.t_near, cfg.render.t_far));
            targets.push(view.image.pixel(x, y));
        }
        let (loss, grad) = batch_loss_and_grad(&model, &rays, &targets, &cfg.render, &mut rng);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(NerfError::NonFinite { iteration: it });
        }
        losses.push(loss);
        let t = if cfg.iterations > 1 {
            it as f64 / (cfg.iterations - 1) as f64
        } else {
            0.0
        };
        let lr = (cfg.lr.ln() * (1.0 - t) + cfg.lr_final.ln() * t).exp();
        adam.step(&mut model.params, &grad, lr);
    }
    Ok(NerfTrainOutput { model, losses })
}
