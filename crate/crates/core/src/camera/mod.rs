//! Pinhole camera model, poses, per-pixel rays and multi-view datasets.
//!
//! Poses follow the OpenGL convention used by NeRF-synthetic style data: the
//! camera looks down its local -Z axis with +Y up.

mod dataset;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

pub use dataset::{load_dataset, write_dataset, Split, View, ViewDataset};
pub(crate) use dataset::{file_stems, write_manifest_for};

/// Default near bound of the ray interval, world units.
pub const DEFAULT_T_NEAR: f64 = 2.0;
/// Default far bound of the ray interval, world units.
pub const DEFAULT_T_FAR: f64 = 6.0;

const RIGID_TOLERANCE: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum CameraError {
    #[error("camera_angle_x {0} must lie in (0, pi)")]
    AngleOutOfRange(f64),
    #[error("pixel ({px}, {py}) outside {width}x{height} image")]
    PixelOutOfBounds {
        px: usize,
        py: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("transform is not rigid: {0}")]
    NonRigid(String),
    #[error("malformed manifest {path}: {reason}")]
    Manifest {
        path: std::path::PathBuf,
        reason: String,
    },
    #[error("view {view}: {source}")]
    Image {
        view: String,
        source: crate::imaging::ImagingError,
    },
    #[error("duplicate view id {0}")]
    DuplicateView(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CameraError> = std::result::Result<T, E>;

/// Shared pinhole intrinsics. The principal point is the image center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
}

impl CameraIntrinsics {
    pub fn new(width: usize, height: usize, focal: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(CameraError::InvalidIntrinsics(format!(
                "dimensions {width}x{height} must be positive"
            )));
        }
        if !(focal.is_finite() && focal > 0.0) {
            return Err(CameraError::InvalidIntrinsics(format!("focal {focal} must be > 0")));
        }
        Ok(Self {
            width,
            height,
            focal,
        })
    }

    pub fn from_fov(width: usize, height: usize, camera_angle_x: f64) -> Result<Self> {
        Self::new(width, height, focal_from_fov(width, camera_angle_x)?)
    }

    pub fn cx(&self) -> f64 {
        self.width as f64 * 0.5
    }

    pub fn cy(&self) -> f64 {
        self.height as f64 * 0.5
    }

    /// Horizontal field of view in radians.
    pub fn camera_angle_x(&self) -> f64 {
        2.0 * (0.5 * self.width as f64 / self.focal).atan()
    }
}

/// `0.5 * width / tan(0.5 * camera_angle_x)`.
pub fn focal_from_fov(width: usize, camera_angle_x: f64) -> Result<f64> {
    if !(camera_angle_x > 0.0 && camera_angle_x < std::f64::consts::PI) {
        return Err(CameraError::AngleOutOfRange(camera_angle_x));
    }
    Ok(0.5 * width as f64 / (0.5 * camera_angle_x).tan())
}

/// Rigid camera-to-world transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    camera_to_world: Matrix4<f64>,
}

impl Pose {
    /// Validates that the rotation block is orthonormal (within 1e-4) with
    /// determinant +1 and that the bottom row is `(0, 0, 0, 1)`.
    pub fn new(camera_to_world: Matrix4<f64>) -> Result<Self> {
        if camera_to_world.iter().any(|v| !v.is_finite()) {
            return Err(CameraError::NonRigid("non-finite entries".into()));
        }
        let bottom = camera_to_world.row(3);
        if (bottom[0], bottom[1], bottom[2], bottom[3]) != (0.0, 0.0, 0.0, 1.0) {
            return Err(CameraError::NonRigid(format!(
                "bottom row {:?} is not (0, 0, 0, 1)",
                [bottom[0], bottom[1], bottom[2], bottom[3]]
            )));
        }
        let rot: Matrix3<f64> = camera_to_world.fixed_view::<3, 3>(0, 0).into_owned();
        let gram_err = (rot.transpose() * rot - Matrix3::identity()).abs().max();
        if gram_err > RIGID_TOLERANCE {
            return Err(CameraError::NonRigid(format!(
                "rotation block deviates from orthonormal by {gram_err:.3e} (det {:.4})",
                rot.determinant()
            )));
        }
        if rot.determinant() < 0.0 {
            return Err(CameraError::NonRigid("rotation block is a reflection".into()));
        }
        Ok(Self { camera_to_world })
    }

    pub fn identity() -> Self {
        Self {
            camera_to_world: Matrix4::identity(),
        }
    }

    /// Camera at `eye` looking at `target`, `up` roughly upward.
    ///
    /// # Panics
    /// If `eye == target` or `up` is parallel to the viewing direction.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let back = (eye - target).normalize();
        let right = up.cross(&back);
        assert!(right.norm() > 1e-9, "up vector parallel to view direction");
        let right = right.normalize();
        let true_up = back.cross(&right);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 1>(0, 0).copy_from(&right);
        m.fixed_view_mut::<3, 1>(0, 1).copy_from(&true_up);
        m.fixed_view_mut::<3, 1>(0, 2).copy_from(&back);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&eye);
        Self { camera_to_world: m }
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.camera_to_world
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.camera_to_world.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Camera center in world space.
    pub fn translation(&self) -> Vector3<f64> {
        self.camera_to_world.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn translated(&self, t: Vector3<f64>) -> Self {
        let mut m = self.camera_to_world;
        let moved = self.translation() + t;
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&moved);
        Self { camera_to_world: m }
    }

    /// Rows of the 4x4 matrix, as stored in transforms manifests.
    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let m = &self.camera_to_world;
        std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
    }

    pub fn from_rows(rows: [[f64; 4]; 4]) -> Result<Self> {
        Self::new(Matrix4::from_fn(|r, c| rows[r][c]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    /// Unit length.
    pub direction: Vector3<f64>,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn with_bounds(mut self, t_near: f64, t_far: f64) -> Self {
        debug_assert!(0.0 <= t_near && t_near < t_far);
        self.t_near = t_near;
        self.t_far = t_far;
        self
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// Ray through the center of pixel `(px, py)`, with the default bounds.
pub fn ray_for_pixel(intr: &CameraIntrinsics, pose: &Pose, px: usize, py: usize) -> Result<Ray> {
    if px >= intr.width || py >= intr.height {
        return Err(CameraError::PixelOutOfBounds {
            px,
            py,
            width: intr.width,
            height: intr.height,
        });
    }
    Ok(ray_for_pixel_unchecked(intr, pose, px, py))
}

pub(crate) fn ray_for_pixel_unchecked(intr: &CameraIntrinsics, pose: &Pose, px: usize, py: usize) -> Ray {
    let cam_dir = Vector3::new(
        (px as f64 + 0.5 - intr.cx()) / intr.focal,
        -(py as f64 + 0.5 - intr.cy()) / intr.focal,
        -1.0,
    );
    Ray {
        origin: pose.translation(),
        direction: (pose.rotation() * cam_dir).normalize(),
        t_near: DEFAULT_T_NEAR,
        t_far: DEFAULT_T_FAR,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn focal_from_fov_examples() {
        assert!((focal_from_fov(800, PI / 2.0).unwrap() - 400.0).abs() < 1e-9);
        // 400 / tan(0.3455556)
        let f = focal_from_fov(800, 0.6911112).unwrap();
        assert!((f - 1111.1110).abs() < 1e-3, "{f}");
        let f1 = focal_from_fov(300, 1.0).unwrap();
        let f2 = focal_from_fov(600, 1.0).unwrap();
        assert!((f2 - 2.0 * f1).abs() < 1e-12);
        assert!(focal_from_fov(800, 0.0).is_err());
        assert!(focal_from_fov(800, PI).is_err());
    }

    #[test]
    fn center_pixel_looks_down_negative_z() {
        let intr = CameraIntrinsics::new(3, 3, 2.0).unwrap();
        let ray = ray_for_pixel(&intr, &Pose::identity(), 1, 1).unwrap();
        assert_eq!(ray.origin, Vector3::zeros());
        assert!((ray.direction - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn corner_pixel_matches_hand_evaluation() {
        let intr = CameraIntrinsics::new(2, 2, 1.0).unwrap();
        let ray = ray_for_pixel(&intr, &Pose::identity(), 0, 0).unwrap();
        let expected = Vector3::new(-0.5, 0.5, -1.0).normalize();
        assert!((ray.direction - expected).norm() < 1e-15);
    }

    #[test]
    fn out_of_bounds_pixel_is_rejected() {
        let intr = CameraIntrinsics::new(2, 2, 1.0).unwrap();
        assert!(matches!(
            ray_for_pixel(&intr, &Pose::identity(), 2, 0),
            Err(CameraError::PixelOutOfBounds { .. })
        ));
    }

    #[test]
    fn non_rigid_poses_are_rejected() {
        let mut m = Matrix4::identity();
        m[(0, 0)] = 0.5; // det 0.5
        assert!(matches!(Pose::new(m), Err(CameraError::NonRigid(_))));
        let mut m = Matrix4::identity();
        m[(3, 0)] = 1.0;
        assert!(Pose::new(m).is_err());
        let mut m = Matrix4::identity();
        m[(2, 2)] = -1.0;
        assert!(Pose::new(m).is_err());
    }

    #[test]
    fn look_at_points_the_optical_axis_at_the_target() {
        let eye = Vector3::new(3.0, 1.0, 2.0);
        let pose = Pose::look_at(eye, Vector3::zeros(), Vector3::z());
        Pose::new(*pose.matrix()).unwrap();
        let intr = CameraIntrinsics::new(4, 4, 3.0).unwrap();
        // Optical axis = -Z column.
        let axis = -pose.rotation().column(2).into_owned();
        assert!((axis - (-eye).normalize()).norm() < 1e-12);
        let ray = ray_for_pixel(&intr, &pose, 2, 2).unwrap();
        assert_eq!(ray.origin, eye);
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (-5.0..5.0f64, -5.0..5.0f64, 0.5..5.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(
            |(x, y, z, tx, ty)| {
                Pose::look_at(Vector3::new(x, y, z), Vector3::new(tx, ty, 0.0), Vector3::y())
            },
        )
    }

    proptest! {
        #[test]
        fn rays_are_unit_and_translation_only_moves_origin(
            pose in arb_pose(),
            px in 0usize..7, py in 0usize..5,
            t in prop::array::uniform3(-3.0..3.0f64),
        ) {
            let intr = CameraIntrinsics::new(7, 5, 4.5).unwrap();
            let ray = ray_for_pixel(&intr, &pose, px, py).unwrap();
            prop_assert!((ray.direction.norm() - 1.0).abs() < 1e-6);
            prop_assert!(ray.t_near >= 0.0 && ray.t_near < ray.t_far);
            let t = Vector3::from(t);
            let moved = ray_for_pixel(&intr, &pose.translated(t), px, py).unwrap();
            prop_assert!((moved.origin - (ray.origin + t)).norm() < 1e-12);
            prop_assert_eq!(moved.direction, ray.direction);
        }
    }
}
