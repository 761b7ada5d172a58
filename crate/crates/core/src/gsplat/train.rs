use super::densify::{densify_and_prune, DensifyConfig, DensifyStats};
use super::gaussian::{GaussianCloud, SH_COEFFS, SH_MAX_DEGREE};
use super::raster::{Frame, GsGradients};
use super::{GsError, Result};
use crate::camera::{Pose, ViewDataset};
use crate::imaging::{l1_with_grad, ssim_with_grad, WHITE};
use crate::optim::{Adam, AdamConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GsTrainConfig {
    pub iterations: usize,
    pub seed: u64,
    pub background: [f64; 3],
    /// Weight of the structural term in `(1 − λ)·L1 + λ·(1 − SSIM)`.
    pub lambda_dssim: f64,
    /// Position learning rate, in units of the scene extent, decayed
    /// log-linearly to `lr_position_final` over the run.
    pub lr_position: f64,
    pub lr_position_final: f64,
    pub lr_sh_dc: f64,
    pub lr_sh_rest: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub adam: AdamConfig,
    /// Split threshold as a fraction of the scene extent.
    pub percent_dense: f64,
    pub densify_grad_threshold: f64,
    pub opacity_prune: f64,
    pub densify_interval: usize,
    pub densify_start: usize,
    /// Density control stops after this fraction of the iterations.
    pub densify_stop_fraction: f64,
    pub max_gaussians: usize,
    pub max_screen_radius: Option<f64>,
    /// Iterations between SH degree increments.
    pub sh_interval: usize,
    pub max_sh_degree: usize,
}

impl Default for GsTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            seed: 0,
            background: WHITE,
            lambda_dssim: 0.2,
            lr_position: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_sh_dc: 2.5e-3,
            lr_sh_rest: 2.5e-3 / 20.0,
            lr_opacity: 0.05,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            adam: AdamConfig {
                epsilon: 1e-15,
                ..AdamConfig::default()
            },
            percent_dense: 0.01,
            densify_grad_threshold: 2e-4,
            opacity_prune: 0.005,
            densify_interval: 100,
            densify_start: 100,
            densify_stop_fraction: 0.6,
            max_gaussians: 200_000,
            max_screen_radius: None,
            sh_interval: 1000,
            max_sh_degree: SH_MAX_DEGREE,
        }
    }
}

impl GsTrainConfig {
    fn densify_config(&self, extent: f64) -> DensifyConfig {
        DensifyConfig {
            grad_threshold: self.densify_grad_threshold,
            split_scale_threshold: self.percent_dense * extent,
            opacity_prune: self.opacity_prune,
            interval: self.densify_interval,
            max_gaussians: self.max_gaussians,
            max_screen_radius: self.max_screen_radius,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_sh_degree > SH_MAX_DEGREE {
            return Err(GsError::ShDegree(self.max_sh_degree));
        }
        if self.sh_interval == 0 || !(0.0..=1.0).contains(&self.lambda_dssim) {
            return Err(GsError::Config(
                "sh_interval must be positive and lambda_dssim within [0, 1]".into(),
            ));
        }
        self.densify_config(1.0).validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GsTrainOutput {
    pub cloud: GaussianCloud,
    /// Training loss at every iteration.
    pub losses: Vec<f64>,
}

/// Scene scale used for learning rates and the split threshold:
/// 1.1 times the largest camera distance from the cameras' centroid.
pub fn scene_extent(poses: &[Pose]) -> f64 {
    if poses.is_empty() {
        return 1.0;
    }
    let centers: Vec<_> = poses.iter().map(Pose::translation).collect();
    let mean = centers.iter().sum::<nalgebra::Vector3<f64>>() / centers.len() as f64;
    let r = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max) * 1.1;
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

/// Parameter groups, each with its own Adam state and learning rate.
#[derive(Clone, Copy)]
enum Group {
    Position,
    Rotation,
    Scale,
    Opacity,
    ShDc,
    ShRest,
}

impl Group {
    const ALL: [Group; 6] = [
        Group::Position,
        Group::Rotation,
        Group::Scale,
        Group::Opacity,
        Group::ShDc,
        Group::ShRest,
    ];

    fn stride(self) -> usize {
        match self {
            Group::Position | Group::Scale | Group::ShDc => 3,
            Group::Rotation => 4,
            Group::Opacity => 1,
            Group::ShRest => (SH_COEFFS - 1) * 3,
        }
    }

    fn gather(self, cloud: &GaussianCloud) -> Vec<f32> {
        let mut out = Vec::with_capacity(cloud.len() * self.stride());
        for g in &cloud.gaussians {
            match self {
                Group::Position => out.extend_from_slice(&g.position),
                Group::Rotation => out.extend_from_slice(&g.rotation),
                Group::Scale => out.extend_from_slice(&g.log_scale),
                Group::Opacity => out.push(g.opacity_logit),
                Group::ShDc => out.extend_from_slice(&g.sh[0]),
                Group::ShRest => out.extend(g.sh[1..].iter().flatten()),
            }
        }
        out
    }

    fn scatter(self, cloud: &mut GaussianCloud, vals: &[f32]) {
        for (g, v) in cloud.gaussians.iter_mut().zip(vals.chunks_exact(self.stride())) {
            match self {
                Group::Position => g.position.copy_from_slice(v),
                Group::Rotation => g.rotation.copy_from_slice(v),
                Group::Scale => g.log_scale.copy_from_slice(v),
                Group::Opacity => g.opacity_logit = v[0],
                Group::ShDc => g.sh[0].copy_from_slice(v),
                Group::ShRest => {
                    for (k, c) in v.chunks_exact(3).enumerate() {
                        g.sh[k + 1].copy_from_slice(c);
                    }
                }
            }
        }
    }

    fn grads(self, g: &GsGradients) -> Vec<f64> {
        match self {
            Group::Position => g.position.iter().flatten().copied().collect(),
            Group::Rotation => g.rotation.iter().flatten().copied().collect(),
            Group::Scale => g.log_scale.iter().flatten().copied().collect(),
            Group::Opacity => g.opacity_logit.clone(),
            Group::ShDc => g.sh.iter().flat_map(|s| s[0]).collect(),
            Group::ShRest => g.sh.iter().flat_map(|s| s[1..].iter().flatten().copied()).collect(),
        }
    }

    fn lr(self, cfg: &GsTrainConfig, position_lr: f64) -> f64 {
        match self {
            Group::Position => position_lr,
            Group::Rotation => cfg.lr_rotation,
            Group::Scale => cfg.lr_scale,
            Group::Opacity => cfg.lr_opacity,
            Group::ShDc => cfg.lr_sh_dc,
            Group::ShRest => cfg.lr_sh_rest,
        }
    }
}

/// Fits `init` to the dataset's views by gradient descent with periodic
/// density control.
pub fn train_gs(dataset: &ViewDataset, init: GaussianCloud, cfg: &GsTrainConfig) -> Result<GsTrainOutput> {
    if dataset.is_empty() {
        return Err(GsError::EmptyDataset);
    }
    if init.is_empty() {
        return Err(GsError::EmptyCloud);
    }
    cfg.validate()?;
    let intr = dataset.intrinsics;
    let extent = scene_extent(&dataset.poses());
    let densify_cfg = cfg.densify_config(extent);
    let densify_stop = (cfg.iterations as f64 * cfg.densify_stop_fraction) as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cloud = init;
    let mut adams: Vec<Adam> = Group::ALL
        .iter()
        .map(|g| Adam::new(cloud.len() * g.stride(), cfg.adam))
        .collect();
    let mut stats = DensifyStats::new(cloud.len());
    let mut order: Vec<usize> = Vec::new();
    let mut losses = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        cloud.set_sh_degree((it / cfg.sh_interval).min(cfg.max_sh_degree));
        if order.is_empty() {
            order = (0..dataset.len()).collect();
            order.shuffle(&mut rng);
        }
        let view = &dataset.views[order.pop().expect("refilled above")];

        let frame = Frame::new(&cloud, &intr, &view.pose)?;
        let rendered = frame.render(cfg.background);
        let (l1, g_l1) = l1_with_grad(&rendered, &view.image)?;
        let (s, g_ssim) = ssim_with_grad(&rendered, &view.image)?;
        let lambda = cfg.lambda_dssim;
        let loss = (1.0 - lambda) * l1 + lambda * (1.0 - s);
        if !loss.is_finite() {
            return Err(GsError::NonFinite { iteration: it });
        }
        losses.push(loss);
        let grad_out: Vec<f64> = g_l1
            .iter()
            .zip(&g_ssim)
            .map(|(a, b)| (1.0 - lambda) * a - lambda * b)
            .collect();
        let grads = frame.backward(&cloud, cfg.background, &grad_out)?;
        if it < densify_stop {
            stats.record(&frame.aux(), &grads, intr.width, intr.height);
        }

        let t = if cfg.iterations > 1 {
            it as f64 / (cfg.iterations - 1) as f64
        } else {
            0.0
        };
        let position_lr =
            extent * (cfg.lr_position.ln() * (1.0 - t) + cfg.lr_position_final.ln() * t).exp();
        for (group, adam) in Group::ALL.iter().zip(&mut adams) {
            let mut vals = group.gather(&cloud);
            adam.step(&mut vals, &group.grads(&grads), group.lr(cfg, position_lr));
            group.scatter(&mut cloud, &vals);
        }
        for g in &mut cloud.gaussians {
            g.normalize_rotation();
        }

        let done = it + 1;
        if done < densify_stop && done >= cfg.densify_start && done % cfg.densify_interval == 0 {
            let out = densify_and_prune(&cloud, &stats, &densify_cfg, &mut rng)?;
            if out.cloud.is_empty() {
                return Err(GsError::Collapsed { iteration: it });
            }
            for (group, adam) in Group::ALL.iter().zip(&mut adams) {
                adam.remap(&out.origin, group.stride());
            }
            cloud = out.cloud;
            stats = DensifyStats::new(cloud.len());
        }
    }
    Ok(GsTrainOutput { cloud, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraIntrinsics, View};
    use crate::gsplat::gaussian::Gaussian3D;
    use crate::gsplat::raster::rasterize;
    use nalgebra::Vector3;

    fn scene() -> GaussianCloud {
        GaussianCloud::new(
            vec![
                Gaussian3D::isotropic([0.0, 0.0, 0.0], 0.3, 0.8, [0.9, 0.2, 0.1]),
                Gaussian3D::isotropic([0.3, 0.2, -0.1], 0.2, 0.6, [0.1, 0.3, 0.9]),
                Gaussian3D::isotropic([-0.3, -0.1, 0.2], 0.25, 0.7, [0.2, 0.8, 0.3]),
            ],
            0,
        )
    }

    fn dataset(cloud: &GaussianCloud) -> ViewDataset {
        let intr = CameraIntrinsics::from_fov(32, 32, 0.6).unwrap();
        let views = (0..4)
            .map(|i| {
                let a = i as f64 * 0.8;
                let pose = Pose::look_at(
                    Vector3::new(4.0 * a.sin(), 0.3, 4.0 * a.cos()),
                    Vector3::zeros(),
                    Vector3::y(),
                );
                View {
                    id: format!("v{i}"),
                    image: rasterize(cloud, &intr, &pose, WHITE).unwrap().0,
                    pose,
                    source: None,
                }
            })
            .collect();
        ViewDataset::new(intr, views).unwrap()
    }

    #[test]
    fn ground_truth_cloud_has_near_zero_initial_loss() {
        let cloud = scene();
        let cfg = GsTrainConfig {
            iterations: 4,
            ..GsTrainConfig::default()
        };
        let out = train_gs(&dataset(&cloud), cloud, &cfg).unwrap();
        assert!(out.losses[0] < 1e-6, "{:?}", out.losses);
    }

    #[test]
    fn loss_decreases_from_a_perturbed_start() {
        let truth = scene();
        let ds = dataset(&truth);
        let mut start = truth.clone();
        for g in &mut start.gaussians {
            g.sh[0] = [0.0; 3];
            g.position[0] += 0.05;
        }
        let cfg = GsTrainConfig {
            iterations: 200,
            densify_start: 1000,
            ..GsTrainConfig::default()
        };
        let out = train_gs(&ds, start, &cfg).unwrap();
        let head: f64 = out.losses[..20].iter().sum();
        let tail: f64 = out.losses[180..].iter().sum();
        assert!(tail < 0.5 * head, "head {head} tail {tail}");
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let truth = scene();
        let ds = dataset(&truth);
        let mut start = truth.clone();
        for g in &mut start.gaussians {
            g.log_scale = g.log_scale.map(|s| s + 0.3);
        }
        let cfg = GsTrainConfig {
            iterations: 60,
            densify_interval: 20,
            densify_start: 20,
            densify_grad_threshold: 1e-6,
            ..GsTrainConfig::default()
        };
        let a = train_gs(&ds, start.clone(), &cfg).unwrap();
        let b = train_gs(&ds, start, &cfg).unwrap();
        assert!(a.cloud.len() > 3);
        assert_eq!(a, b);
        for g in &a.cloud.gaussians {
            let n: f64 = g.rotation.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_inputs_are_errors() {
        let intr = CameraIntrinsics::from_fov(16, 16, 0.6).unwrap();
        let empty = ViewDataset::new(intr, vec![]).unwrap();
        assert!(matches!(
            train_gs(&empty, scene(), &GsTrainConfig::default()),
            Err(GsError::EmptyDataset)
        ));
        let ds = dataset(&scene());
        assert!(matches!(
            train_gs(&ds, GaussianCloud::new(vec![], 0), &GsTrainConfig::default()),
            Err(GsError::EmptyCloud)
        ));
    }

    #[test]
    fn pruning_everything_is_reported_as_collapse() {
        let mut cloud = scene();
        for g in &mut cloud.gaussians {
            g.opacity_logit = -20.0;
        }
        let ds = dataset(&scene());
        let cfg = GsTrainConfig {
            iterations: 10,
            densify_start: 5,
            densify_interval: 5,
            ..GsTrainConfig::default()
        };
        assert!(matches!(train_gs(&ds, cloud, &cfg), Err(GsError::Collapsed { iteration: 4 })));
    }

    #[test]
    fn extent_of_a_camera_ring() {
        let poses: Vec<Pose> = (0..8)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / 8.0;
                Pose::look_at(Vector3::new(4.0 * a.cos(), 0.0, 4.0 * a.sin()), Vector3::zeros(), Vector3::y())
            })
            .collect();
        assert!((scene_extent(&poses) - 4.4).abs() < 1e-9);
    }
}
