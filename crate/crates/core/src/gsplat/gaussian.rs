use super::sh::{coeffs_for_degree, SH_C0};
use nalgebra::{Matrix3, Vector3};

/// Highest spherical-harmonic degree stored per Gaussian.
pub const SH_MAX_DEGREE: usize = 3;
/// RGB coefficient triples stored per Gaussian.
pub const SH_COEFFS: usize = coeffs_for_degree(SH_MAX_DEGREE);

/// One anisotropic Gaussian. Parameters are stored in 32-bit floats;
/// rendering and gradients run in 64-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian3D {
    /// Mean, world units.
    pub position: [f32; 3],
    /// Quaternion `(w, x, y, z)`; normalized wherever it is used.
    pub rotation: [f32; 4],
    /// Per-axis natural log of the standard deviation.
    pub log_scale: [f32; 3],
    /// Opacity is `logistic(opacity_logit)`.
    pub opacity_logit: f32,
    /// Coefficient-major SH color: `sh[k][channel]`.
    pub sh: [[f32; 3]; SH_COEFFS],
}

impl Gaussian3D {
    /// Isotropic Gaussian with a view-independent color.
    pub fn isotropic(position: [f64; 3], stddev: f64, opacity: f64, rgb: [f64; 3]) -> Self {
        let mut sh = [[0.0f32; 3]; SH_COEFFS];
        sh[0] = rgb.map(|c| rgb_to_dc(c) as f32);
        Self {
            position: position.map(|v| v as f32),
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [stddev.ln() as f32; 3],
            opacity_logit: logit(opacity) as f32,
            sh,
        }
    }

    pub fn position_f64(&self) -> Vector3<f64> {
        Vector3::new(
            self.position[0] as f64,
            self.position[1] as f64,
            self.position[2] as f64,
        )
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit as f64)
    }

    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(|s| (s as f64).exp())
    }

    pub fn max_scale(&self) -> f64 {
        self.scale().into_iter().fold(f64::MIN, f64::max)
    }

    pub fn rotation_f64(&self) -> [f64; 4] {
        self.rotation.map(|v| v as f64)
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        covariance_3d(self.rotation_f64(), self.log_scale.map(|s| s as f64))
    }

    pub fn sh_f64(&self) -> [[f64; 3]; SH_COEFFS] {
        self.sh.map(|c| c.map(|v| v as f64))
    }

    /// Renormalizes the quaternion; a degenerate one resets to identity.
    pub fn normalize_rotation(&mut self) {
        let q = self.rotation_f64();
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.rotation = if n > 1e-12 && n.is_finite() {
            q.map(|v| (v / n) as f32)
        } else {
            [1.0, 0.0, 0.0, 0.0]
        };
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.sh.iter().flatten().all(|v| v.is_finite())
    }
}

/// The scene: an ordered list of Gaussians sharing one active SH degree.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian3D>,
    sh_degree: usize,
}

impl GaussianCloud {
    /// # Panics
    /// If `sh_degree > 3`.
    pub fn new(gaussians: Vec<Gaussian3D>, sh_degree: usize) -> Self {
        assert!(sh_degree <= SH_MAX_DEGREE, "SH degree {sh_degree} > {SH_MAX_DEGREE}");
        Self {
            gaussians,
            sh_degree,
        }
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn set_sh_degree(&mut self, degree: usize) {
        self.sh_degree = degree.min(SH_MAX_DEGREE);
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// DC coefficient reproducing color `c` regardless of view direction.
pub fn rgb_to_dc(c: f64) -> f64 {
    (c - 0.5) / SH_C0
}

/// Rotation matrix of the normalized quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `R(q) diag(exp(s))^2 R(q)^T`.
pub fn covariance_3d(q: [f64; 4], log_scale: [f64; 3]) -> Matrix3<f64> {
    let r = rotation_matrix(q);
    let s = Matrix3::from_diagonal(&Vector3::from(log_scale.map(|v| v.exp())));
    let m = r * s;
    m * m.transpose()
}
