//! Float RGB images, PNG I/O and the evaluation metrics (PSNR, SSIM and an
//! optional external perceptual distance).

mod io;
mod metrics;
mod perceptual;

use serde::{Deserialize, Serialize};
use std::path::PathBuf;

pub use io::{load_image, png_bytes, save_image};
pub use metrics::{l1_with_grad, mse, psnr, ssim, ssim_with_grad, Psnr, SSIM_WINDOW};
pub use perceptual::{perceptual_distance, PerceptualProvider};

/// Background used when compositing RGBA inputs unless configured otherwise.
pub const WHITE: [f64; 3] = [1.0, 1.0, 1.0];

#[derive(Debug, thiserror::Error)]
pub enum ImagingError {
    #[error("image file not found: {0}")]
    NotFound(PathBuf),
    #[error("unsupported image {path}: {reason}")]
    Unsupported { path: PathBuf, reason: String },
    #[error("image has a zero dimension ({width}x{height})")]
    ZeroDimension { width: usize, height: usize },
    #[error("pixel buffer holds {got} values, expected {expected}")]
    BadLength { expected: usize, got: usize },
    #[error("dimension mismatch: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("image {width}x{height} is smaller than the {window}x{window} SSIM window")]
    TooSmall {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("perceptual provider failed: {0}")]
    Provider(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ImagingError> = std::result::Result<T, E>;

/// Row-major RGB image with every channel in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRGB {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageRGB {
    /// Wraps an interleaved RGB buffer. Values are clamped into `[0, 1]`;
    /// NaN becomes 0.
    pub fn new(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImagingError::ZeroDimension { width, height });
        }
        let expected = width * height * 3;
        if data.len() != expected {
            return Err(ImagingError::BadLength {
                expected,
                got: data.len(),
            });
        }
        for v in &mut data {
            *v = clamp_unit(*v);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Constant image.
    ///
    /// # Panics
    /// If either dimension is zero.
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).map(clamp_unit));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[i + c] = clamp_unit(v);
        }
    }

    /// Applies `f` to every channel value, clamping the result.
    pub fn map(&self, mut f: impl FnMut(usize, f64) -> f64) -> Self {
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| clamp_unit(f(i % 3, v)))
            .collect();
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub(crate) fn check_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(ImagingError::DimensionMismatch {
                a: self.dims(),
                b: other.dims(),
            });
        }
        Ok(())
    }
}

fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// One evaluated view: a row of the metric tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub view_id: String,
    pub psnr: Psnr,
    pub ssim: f64,
    pub perceptual: Option<f64>,
}

impl MetricRow {
    /// Evaluates `rendered` against `reference`.
    pub fn evaluate(
        view_id: impl Into<String>,
        rendered: &ImageRGB,
        reference: &ImageRGB,
        provider: &PerceptualProvider,
    ) -> Result<Self> {
        Ok(Self {
            view_id: view_id.into(),
            psnr: psnr(rendered, reference)?,
            ssim: ssim(rendered, reference)?,
            perceptual: perceptual_distance(rendered, reference, provider)?,
        })
    }
}
