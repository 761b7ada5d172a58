//! Tile-based front-to-back compositing of projected Gaussians and its
//! exact adjoint.

use super::gaussian::GaussianCloud;
use super::project::{project_backward, project_with, FootprintGrad, Projected2D, ViewTransform};
use super::{GsError, Result};
use crate::camera::{CameraIntrinsics, Pose};
use crate::imaging::ImageRGB;
use rayon::prelude::*;

pub const TILE_SIZE: usize = 16;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;

/// Per-Gaussian side information from a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterAux {
    /// Projected and overlapping at least one tile.
    pub visible: Vec<bool>,
    /// Screen radius in pixels; 0 when not visible.
    pub radii: Vec<f64>,
}

/// Gradients of a scalar loss with respect to every Gaussian parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct GsGradients {
    pub position: Vec<[f64; 3]>,
    pub rotation: Vec<[f64; 4]>,
    pub log_scale: Vec<[f64; 3]>,
    pub opacity_logit: Vec<f64>,
    pub sh: Vec<[[f64; 3]; 16]>,
    /// Gradient with respect to the projected mean, in pixels.
    pub mean2d: Vec<[f64; 2]>,
}

impl GsGradients {
    fn zeros(n: usize) -> Self {
        Self {
            position: vec![[0.0; 3]; n],
            rotation: vec![[0.0; 4]; n],
            log_scale: vec![[0.0; 3]; n],
            opacity_logit: vec![0.0; n],
            sh: vec![[[0.0; 3]; 16]; n],
            mean2d: vec![[0.0; 2]; n],
        }
    }
}

/// Compact per-Gaussian data read in the per-pixel loops.
#[derive(Clone, Copy, Debug)]
struct Splat {
    u: f64,
    v: f64,
    conic: [f64; 3],
    opacity: f64,
    rgb: [f64; 3],
}

/// Projection and tile binning for one view.
pub(crate) struct Frame {
    width: usize,
    height: usize,
    tiles_x: usize,
    projected: Vec<Option<Projected2D>>,
    splats: Vec<Splat>,
    tiles: Vec<Vec<u32>>,
    view: ViewTransform,
}

impl Frame {
    pub fn new(cloud: &GaussianCloud, intr: &CameraIntrinsics, pose: &Pose) -> Result<Self> {
        if cloud.is_empty() {
            return Err(GsError::EmptyCloud);
        }
        let view = ViewTransform::new(intr, pose);
        let (width, height) = (intr.width, intr.height);
        let tiles_x = width.div_ceil(TILE_SIZE);
        let tiles_y = height.div_ceil(TILE_SIZE);
        let degree = cloud.sh_degree();
        let projected: Vec<Option<Projected2D>> = cloud
            .gaussians
            .par_iter()
            .map(|g| project_with(g, degree, &view))
            .collect();

        let mut keyed: Vec<Vec<(f64, u32)>> = vec![Vec::new(); tiles_x * tiles_y];
        let mut splats = Vec::with_capacity(projected.len());
        for (i, (p, g)) in projected.iter().zip(&cloud.gaussians).enumerate() {
            let Some(p) = p else {
                splats.push(Splat {
                    u: 0.0,
                    v: 0.0,
                    conic: [0.0; 3],
                    opacity: 0.0,
                    rgb: [0.0; 3],
                });
                continue;
            };
            splats.push(Splat {
                u: p.mean2d[0],
                v: p.mean2d[1],
                conic: p.conic,
                opacity: g.opacity(),
                rgb: p.rgb,
            });
            if let Some((x0, x1, y0, y1)) = tile_range(p, tiles_x, tiles_y) {
                for ty in y0..=y1 {
                    for tx in x0..=x1 {
                        keyed[ty * tiles_x + tx].push((p.depth, i as u32));
                    }
                }
            }
        }
        let tiles = keyed
            .into_par_iter()
            .map(|mut list| {
                list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                list.into_iter().map(|(_, i)| i).collect()
            })
            .collect();
        Ok(Self {
            width,
            height,
            tiles_x,
            projected,
            splats,
            tiles,
            view,
        })
    }

    fn tile_pixels(&self, tile: usize) -> impl Iterator<Item = (usize, usize)> {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        let x1 = (x0 + TILE_SIZE).min(self.width);
        let y1 = (y0 + TILE_SIZE).min(self.height);
        (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
    }

    pub fn aux(&self) -> RasterAux {
        let mut visible = vec![false; self.projected.len()];
        for list in &self.tiles {
            for &i in list {
                visible[i as usize] = true;
            }
        }
        let radii = self
            .projected
            .iter()
            .zip(&visible)
            .map(|(p, &v)| match p {
                Some(p) if v => p.radius,
                _ => 0.0,
            })
            .collect();
        RasterAux { visible, radii }
    }

    pub fn render(&self, background: [f64; 3]) -> ImageRGB {
        let tile_out: Vec<Vec<(usize, [f64; 3])>> = (0..self.tiles.len())
            .into_par_iter()
            .map(|tile| {
                let list = &self.tiles[tile];
                self.tile_pixels(tile)
                    .map(|(x, y)| {
                        let px = x as f64 + 0.5;
                        let py = y as f64 + 0.5;
                        let mut c = [0.0; 3];
                        let mut t = 1.0;
                        for &i in list {
                            let s = &self.splats[i as usize];
                            let Some((alpha, _, _)) = splat_alpha(s, px, py) else {
                                continue;
                            };
                            let w = t * alpha;
                            for ch in 0..3 {
                                c[ch] += w * s.rgb[ch];
                            }
                            t *= 1.0 - alpha;
                            if t < TRANSMITTANCE_MIN {
                                break;
                            }
                        }
                        for ch in 0..3 {
                            c[ch] += t * background[ch];
                        }
                        (y * self.width + x, c)
                    })
                    .collect()
            })
            .collect();
        let mut data = vec![0.0; self.width * self.height * 3];
        for (idx, c) in tile_out.into_iter().flatten() {
            data[idx * 3..idx * 3 + 3].copy_from_slice(&c);
        }
        ImageRGB::new(self.width, self.height, data).expect("dimensions come from valid intrinsics")
    }

    pub fn backward(
        &self,
        cloud: &GaussianCloud,
        background: [f64; 3],
        grad_out: &[f64],
    ) -> Result<GsGradients> {
        let expected = self.width * self.height * 3;
        if grad_out.len() != expected {
            return Err(GsError::GradientLength {
                expected,
                got: grad_out.len(),
            });
        }
        // Per tile-entry footprint gradients plus the raw opacity gradient.
        let per_tile: Vec<Vec<(FootprintGrad, f64)>> = (0..self.tiles.len())
            .into_par_iter()
            .map(|tile| self.tile_backward(tile, background, grad_out))
            .collect();

        let n = cloud.len();
        let mut foot = vec![FootprintGrad::default(); n];
        let mut dopacity = vec![0.0; n];
        for (list, grads) in self.tiles.iter().zip(per_tile) {
            for (&i, (g, dop)) in list.iter().zip(grads) {
                let f = &mut foot[i as usize];
                for k in 0..2 {
                    f.mean2d[k] += g.mean2d[k];
                }
                for k in 0..3 {
                    f.conic[k] += g.conic[k];
                    f.rgb[k] += g.rgb[k];
                }
                dopacity[i as usize] += dop;
            }
        }

        let degree = cloud.sh_degree();
        let params: Vec<_> = (0..n)
            .into_par_iter()
            .map(|i| {
                self.projected[i]
                    .as_ref()
                    .map(|_| project_backward(&cloud.gaussians[i], degree, &self.view, &foot[i]))
            })
            .collect();
        let mut out = GsGradients::zeros(n);
        for (i, p) in params.into_iter().enumerate() {
            let Some(p) = p else { continue };
            out.position[i] = p.position;
            out.rotation[i] = p.rotation;
            out.log_scale[i] = p.log_scale;
            out.sh[i] = p.sh;
            out.mean2d[i] = foot[i].mean2d;
            let o = self.splats[i].opacity;
            out.opacity_logit[i] = dopacity[i] * o * (1.0 - o);
        }
        Ok(out)
    }

    fn tile_backward(&self, tile: usize, background: [f64; 3], grad_out: &[f64]) -> Vec<(FootprintGrad, f64)> {
        let list = &self.tiles[tile];
        let mut acc = vec![(FootprintGrad::default(), 0.0); list.len()];
        if list.is_empty() {
            return acc;
        }
        // (entry, alpha, transmittance before, gaussian weight, alpha capped)
        let mut contrib: Vec<(usize, f64, f64, f64, bool)> = Vec::with_capacity(list.len());
        for (x, y) in self.tile_pixels(tile) {
            let pix = (y * self.width + x) * 3;
            let g = [grad_out[pix], grad_out[pix + 1], grad_out[pix + 2]];
            if g == [0.0; 3] {
                continue;
            }
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            contrib.clear();
            let mut t = 1.0;
            for (e, &i) in list.iter().enumerate() {
                let s = &self.splats[i as usize];
                let Some((alpha, weight, capped)) = splat_alpha(s, px, py) else {
                    continue;
                };
                contrib.push((e, alpha, t, weight, capped));
                t *= 1.0 - alpha;
                if t < TRANSMITTANCE_MIN {
                    break;
                }
            }
            // Color contributed by everything behind the current entry.
            let mut behind = background.map(|b| b * t);
            for &(e, alpha, t_i, weight, capped) in contrib.iter().rev() {
                let s = &self.splats[list[e] as usize];
                let (fg, dop) = &mut acc[e];
                let mut dalpha = 0.0;
                for ch in 0..3 {
                    fg.rgb[ch] += g[ch] * t_i * alpha;
                    dalpha += g[ch] * (t_i * s.rgb[ch] - behind[ch] / (1.0 - alpha));
                    behind[ch] += t_i * alpha * s.rgb[ch];
                }
                if capped {
                    continue;
                }
                *dop += dalpha * weight;
                let dpow = dalpha * alpha;
                let dx = px - s.u;
                let dy = py - s.v;
                let [a, b, c] = s.conic;
                // power = -(a dx² + c dy²)/2 - b dx dy, and d = pixel - mean.
                fg.mean2d[0] += dpow * (a * dx + b * dy);
                fg.mean2d[1] += dpow * (b * dx + c * dy);
                fg.conic[0] += dpow * (-0.5 * dx * dx);
                fg.conic[1] += dpow * (-dx * dy);
                fg.conic[2] += dpow * (-0.5 * dy * dy);
            }
        }
        acc
    }
}

/// `(alpha, gaussian weight, alpha capped)`, or `None` below the skip threshold.
#[inline]
fn splat_alpha(s: &Splat, px: f64, py: f64) -> Option<(f64, f64, bool)> {
    let dx = px - s.u;
    let dy = py - s.v;
    let [a, b, c] = s.conic;
    let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
    if power > 0.0 {
        return None;
    }
    let weight = power.exp();
    let raw = s.opacity * weight;
    if raw < ALPHA_MIN {
        return None;
    }
    Some(if raw > ALPHA_MAX {
        (ALPHA_MAX, weight, true)
    } else {
        (raw, weight, false)
    })
}

/// Inclusive tile rectangle covered by the footprint's `mean ± radius` box.
fn tile_range(p: &Projected2D, tiles_x: usize, tiles_y: usize) -> Option<(usize, usize, usize, usize)> {
    let t = TILE_SIZE as f64;
    let lo_x = ((p.mean2d[0] - p.radius) / t).floor();
    let hi_x = ((p.mean2d[0] + p.radius) / t).floor();
    let lo_y = ((p.mean2d[1] - p.radius) / t).floor();
    let hi_y = ((p.mean2d[1] + p.radius) / t).floor();
    if !(hi_x >= 0.0 && hi_y >= 0.0 && lo_x < tiles_x as f64 && lo_y < tiles_y as f64) {
        return None;
    }
    Some((
        lo_x.max(0.0) as usize,
        hi_x.min(tiles_x as f64 - 1.0) as usize,
        lo_y.max(0.0) as usize,
        hi_y.min(tiles_y as f64 - 1.0) as usize,
    ))
}

/// Renders `cloud` from `pose` over a constant `background`.
pub fn rasterize(
    cloud: &GaussianCloud,
    intr: &CameraIntrinsics,
    pose: &Pose,
    background: [f64; 3],
) -> Result<(ImageRGB, RasterAux)> {
    let frame = Frame::new(cloud, intr, pose)?;
    Ok((frame.render(background), frame.aux()))
}

/// Gradients of `sum(grad_out * rasterize(...))` with respect to every
/// parameter. `grad_out` is laid out like [`ImageRGB::as_slice`].
pub fn rasterize_backward(
    cloud: &GaussianCloud,
    intr: &CameraIntrinsics,
    pose: &Pose,
    background: [f64; 3],
    grad_out: &[f64],
) -> Result<GsGradients> {
    Frame::new(cloud, intr, pose)?.backward(cloud, background, grad_out)
}
