//! Real spherical-harmonic basis up to degree 3, in the coefficient order
//! used by the Gaussian-splatting interchange format.

use super::{GsError, Result};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const fn coeffs_for_degree(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Basis values `Y_k(dir)` for `k < coeffs_for_degree(degree)`; the rest are 0.
pub fn basis(dir: [f64; 3], degree: usize) -> [f64; 16] {
    let [x, y, z] = dir;
    let mut b = [0.0; 16];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (xx - yy);
        if degree >= 3 {
            b[9] = SH_C3[0] * y * (3.0 * xx - yy);
            b[10] = SH_C3[1] * x * y * z;
            b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            b[14] = SH_C3[5] * z * (xx - yy);
            b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        }
    }
    b
}

/// Partial derivatives of each basis polynomial with respect to the
/// (unnormalized) components x, y, z.
pub(crate) fn basis_grad(dir: [f64; 3], degree: usize) -> [[f64; 3]; 16] {
    let [x, y, z] = dir;
    let mut g = [[0.0; 3]; 16];
    if degree >= 1 {
        g[1] = [0.0, -SH_C1, 0.0];
        g[2] = [0.0, 0.0, SH_C1];
        g[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        g[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
        g[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
        g[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
        g[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
        g[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
        if degree >= 3 {
            g[9] = [SH_C3[0] * 6.0 * x * y, SH_C3[0] * (3.0 * xx - 3.0 * yy), 0.0];
            g[10] = [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y];
            g[11] = [
                SH_C3[2] * -2.0 * x * y,
                SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
                SH_C3[2] * 8.0 * y * z,
            ];
            g[12] = [
                SH_C3[3] * -6.0 * x * z,
                SH_C3[3] * -6.0 * y * z,
                SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
            ];
            g[13] = [
                SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
                SH_C3[4] * -2.0 * x * y,
                SH_C3[4] * 8.0 * x * z,
            ];
            g[14] = [SH_C3[5] * 2.0 * x * z, SH_C3[5] * -2.0 * y * z, SH_C3[5] * (xx - yy)];
            g[15] = [SH_C3[6] * (3.0 * xx - 3.0 * yy), SH_C3[6] * -6.0 * x * y, 0.0];
        }
    }
    g
}

/// Unclamped `0.5 + sum_k c_k Y_k(dir)` per channel over the first
/// `coeffs_for_degree(degree)` coefficients (coefficient-major, 3 channels each).
pub(crate) fn eval_raw(coeffs: &[[f64; 3]], dir: [f64; 3], degree: usize) -> [f64; 3] {
    let b = basis(dir, degree);
    let mut out = [0.5; 3];
    for (k, c) in coeffs.iter().take(coeffs_for_degree(degree)).enumerate() {
        for ch in 0..3 {
            out[ch] += c[ch] * b[k];
        }
    }
    out
}

/// View-dependent color, clamped to `[0, 1]`. `coeffs` holds exactly
/// `(degree + 1)^2` RGB triples.
pub fn eval_sh(coeffs: &[[f64; 3]], dir: [f64; 3], degree: usize) -> Result<[f64; 3]> {
    if degree > 3 {
        return Err(GsError::ShDegree(degree));
    }
    if coeffs.len() != coeffs_for_degree(degree) {
        return Err(GsError::ShCoefficientCount {
            degree,
            expected: coeffs_for_degree(degree),
            got: coeffs.len(),
        });
    }
    Ok(eval_raw(coeffs, dir, degree).map(|v| v.clamp(0.0, 1.0)))
}
