//! EWA projection of 3D Gaussians to screen-space footprints, and its adjoint.

use super::gaussian::{rotation_matrix, Gaussian3D};
use super::sh::{basis, basis_grad, coeffs_for_degree, eval_raw};
use crate::camera::{CameraIntrinsics, Pose};
use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

/// Screen-space dilation added to every projected covariance, pixels².
pub const BLUR_FLOOR: f64 = 0.3;
/// Gaussians closer to the image plane than this are culled.
pub const NEAR_CULL: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct Projected2D {
    /// Pixel coordinates; pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`.
    pub mean2d: [f64; 2],
    /// Includes the blur floor.
    pub cov2d: Matrix2<f64>,
    /// Upper triangle `(a, b, c)` of the inverse of `cov2d`.
    pub conic: [f64; 3],
    /// Distance along the viewing axis (camera-space −z).
    pub depth: f64,
    pub rgb: [f64; 3],
    /// `ceil(3 * sqrt(largest eigenvalue of cov2d))`.
    pub radius: f64,
}

/// Per-view constants of the world-to-image mapping. The camera frame used
/// here has x right, y down and z forward, so visible points have z > 0.
#[derive(Clone, Debug)]
pub(crate) struct ViewTransform {
    pub world_to_cam: Matrix3<f64>,
    pub center: Vector3<f64>,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl ViewTransform {
    pub fn new(intr: &CameraIntrinsics, pose: &Pose) -> Self {
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        Self {
            world_to_cam: flip * pose.rotation().transpose(),
            center: pose.translation(),
            focal: intr.focal,
            cx: intr.cx(),
            cy: intr.cy(),
        }
    }

    fn jacobian(&self, p: &Vector3<f64>) -> Matrix2x3<f64> {
        let f = self.focal;
        let z = p.z;
        Matrix2x3::new(
            f / z,
            0.0,
            -f * p.x / (z * z),
            0.0,
            f / z,
            -f * p.y / (z * z),
        )
    }
}

/// Projects one Gaussian; `None` when it is behind the near plane or its
/// footprint is degenerate.
pub fn project_gaussian(
    g: &Gaussian3D,
    sh_degree: usize,
    intr: &CameraIntrinsics,
    pose: &Pose,
) -> Option<Projected2D> {
    project_with(g, sh_degree, &ViewTransform::new(intr, pose))
}

pub(crate) fn project_with(g: &Gaussian3D, sh_degree: usize, view: &ViewTransform) -> Option<Projected2D> {
    let m = g.position_f64();
    let p = view.world_to_cam * (m - view.center);
    if !(p.z > NEAR_CULL) {
        return None;
    }
    let mean2d = [
        view.cx + view.focal * p.x / p.z,
        view.cy + view.focal * p.y / p.z,
    ];
    let t = view.jacobian(&p) * view.world_to_cam;
    let cov2d = t * g.covariance() * t.transpose() + Matrix2::identity() * BLUR_FLOOR;
    let (a, b, c) = (cov2d[(0, 0)], 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]), cov2d[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let dir = view_direction(&m, &view.center)?;
    let sh = g.sh_f64();
    let raw = eval_raw(&sh, dir, sh_degree);
    Some(Projected2D {
        mean2d,
        cov2d: Matrix2::new(a, b, b, c),
        conic: [c / det, -b / det, a / det],
        depth: p.z,
        rgb: raw.map(|v| v.clamp(0.0, 1.0)),
        radius: (3.0 * lambda_max.sqrt()).ceil(),
    })
}

fn view_direction(m: &Vector3<f64>, center: &Vector3<f64>) -> Option<[f64; 3]> {
    let v = m - center;
    let n = v.norm();
    (n > 0.0).then(|| [v.x / n, v.y / n, v.z / n])
}

/// Upstream gradients of one projected footprint.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct FootprintGrad {
    pub mean2d: [f64; 2],
    pub conic: [f64; 3],
    pub rgb: [f64; 3],
}

/// Gradients of one Gaussian's projection-dependent parameters.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ParamGrad {
    pub position: [f64; 3],
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
    pub sh: [[f64; 3]; 16],
}

/// Adjoint of [`project_with`] for a Gaussian that was not culled.
pub(crate) fn project_backward(
    g: &Gaussian3D,
    sh_degree: usize,
    view: &ViewTransform,
    up: &FootprintGrad,
) -> ParamGrad {
    let m = g.position_f64();
    let w = view.world_to_cam;
    let p = w * (m - view.center);
    let f = view.focal;
    let (x, y, z) = (p.x, p.y, p.z);
    let j = view.jacobian(&p);
    let t = j * w;

    let q = g.rotation_f64();
    let r = rotation_matrix(q);
    let s = g.scale();
    let mr = r * Matrix3::from_diagonal(&Vector3::from(s));
    let sigma = mr * mr.transpose();
    let cov = t * sigma * t.transpose() + Matrix2::identity() * BLUR_FLOOR;
    let (a, b, c) = (cov[(0, 0)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)]);
    let det = a * c - b * b;
    let k = Matrix2::new(c / det, -b / det, -b / det, a / det);

    // Conic to covariance; the off-diagonal conic gradient is split evenly.
    let gk = Matrix2::new(up.conic[0], 0.5 * up.conic[1], 0.5 * up.conic[1], up.conic[2]);
    let gcov = -(k * gk * k);
    let gsigma = t.transpose() * gcov * t;
    let gt = 2.0 * gcov * t * sigma;
    let gj = gt * w.transpose();

    // Covariance to rotation and scale.
    let gmr = 2.0 * gsigma * mr;
    let mut gr = Matrix3::zeros();
    let mut log_scale = [0.0; 3];
    for col in 0..3 {
        let mut ds = 0.0;
        for row in 0..3 {
            gr[(row, col)] = gmr[(row, col)] * s[col];
            ds += r[(row, col)] * gmr[(row, col)];
        }
        log_scale[col] = ds * s[col];
    }
    let rotation = quaternion_backward(q, &gr);

    // Mean: through the pinhole projection and through the Jacobian.
    let mut dp = Vector3::new(
        up.mean2d[0] * f / z,
        up.mean2d[1] * f / z,
        -up.mean2d[0] * f * x / (z * z) - up.mean2d[1] * f * y / (z * z),
    );
    let z2 = z * z;
    let z3 = z2 * z;
    dp.x += gj[(0, 2)] * (-f / z2);
    dp.y += gj[(1, 2)] * (-f / z2);
    dp.z += gj[(0, 0)] * (-f / z2)
        + gj[(0, 2)] * (2.0 * f * x / z3)
        + gj[(1, 1)] * (-f / z2)
        + gj[(1, 2)] * (2.0 * f * y / z3);
    let mut dm = w.transpose() * dp;

    // Color: SH coefficients, and the view direction's dependence on the mean.
    let mut sh = [[0.0; 3]; 16];
    let v = m - view.center;
    let vn = v.norm();
    let dir = [v.x / vn, v.y / vn, v.z / vn];
    let coeffs = g.sh_f64();
    let raw = eval_raw(&coeffs, dir, sh_degree);
    let grgb: [f64; 3] = std::array::from_fn(|ch| {
        if (0.0..=1.0).contains(&raw[ch]) {
            up.rgb[ch]
        } else {
            0.0
        }
    });
    let n = coeffs_for_degree(sh_degree);
    let bvals = basis(dir, sh_degree);
    for kk in 0..n {
        for ch in 0..3 {
            sh[kk][ch] = grgb[ch] * bvals[kk];
        }
    }
    if sh_degree > 0 {
        let bg = basis_grad(dir, sh_degree);
        let mut ddir = Vector3::zeros();
        for kk in 1..n {
            let wsum: f64 = (0..3).map(|ch| grgb[ch] * coeffs[kk][ch]).sum();
            ddir += Vector3::from(bg[kk]) * wsum;
        }
        let d = Vector3::from(dir);
        dm += (ddir - d * d.dot(&ddir)) / vn;
    }

    ParamGrad {
        position: [dm.x, dm.y, dm.z],
        rotation,
        log_scale,
        sh,
    }
}

/// Gradient with respect to the raw quaternion given `gr = dL/dR(q/|q|)`.
fn quaternion_backward(q: [f64; 4], gr: &Matrix3<f64>) -> [f64; 4] {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / norm);
    let g = |r: usize, c: usize| gr[(r, c)];
    let dw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    let gn = [dw, dx, dy, dz];
    let qn = [w, x, y, z];
    let dot: f64 = gn.iter().zip(&qn).map(|(a, b)| a * b).sum();
    std::array::from_fn(|i| (gn[i] - qn[i] * dot) / norm)
}
