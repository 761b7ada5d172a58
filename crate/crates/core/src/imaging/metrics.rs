use super::{ImageRGB, ImagingError, Result};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Side length of the Gaussian SSIM window.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Peak signal-to-noise ratio in dB. Identical images give `+inf`, which is
/// serialized as the string `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Psnr(pub f64);

impl Psnr {
    pub const INFINITE: Psnr = Psnr(f64::INFINITY);

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `None` for the infinity sentinel.
    pub fn finite(self) -> Option<f64> {
        self.0.is_finite().then_some(self.0)
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{:.2}", self.0)
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Psnr(v)),
            Repr::Text(t) if t == "inf" => Ok(Psnr::INFINITE),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("invalid PSNR value {t:?}"))),
        }
    }
}

/// Mean over all channels of the squared difference.
pub fn mse(a: &ImageRGB, b: &ImageRGB) -> Result<f64> {
    a.check_same_dims(b)?;
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.as_slice().len() as f64)
}

pub fn psnr(a: &ImageRGB, b: &ImageRGB) -> Result<Psnr> {
    let m = mse(a, b)?;
    if m == 0.0 {
        Ok(Psnr::INFINITE)
    } else {
        Ok(Psnr(-10.0 * m.log10()))
    }
}

/// Mean absolute error and its gradient with respect to `a`.
pub fn l1_with_grad(a: &ImageRGB, b: &ImageRGB) -> Result<(f64, Vec<f64>)> {
    a.check_same_dims(b)?;
    let n = a.as_slice().len() as f64;
    let mut sum = 0.0;
    let grad = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| {
            let d = x - y;
            sum += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((sum / n, grad))
}

/// Mean SSIM over every full 11x11 Gaussian window (sigma 1.5), averaged
/// over the three channels, dynamic range 1.
pub fn ssim(a: &ImageRGB, b: &ImageRGB) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// SSIM together with its gradient with respect to `a` (interleaved RGB
/// layout, same as [`ImageRGB::as_slice`]).
pub fn ssim_with_grad(a: &ImageRGB, b: &ImageRGB) -> Result<(f64, Vec<f64>)> {
    let (value, grad) = ssim_impl(a, b, true)?;
    Ok((value, grad.expect("gradient requested")))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "valid" correlation: output is `(w - 10) x (h - 10)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                acc += kv * tmp[(y + j) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters a `(w - 10) x (h - 10)` map back to
/// `w x h`.
fn filter_valid_adjoint(map: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = map[y * ow + x];
            for (j, kv) in k.iter().enumerate() {
                tmp[(y + j) * ow + x] += kv * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for (i, kv) in k.iter().enumerate() {
                out[y * w + x + i] += kv * v;
            }
        }
    }
    out
}

fn ssim_impl(a: &ImageRGB, b: &ImageRGB, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    a.check_same_dims(b)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(ImagingError::TooSmall {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }
    let k = gaussian_kernel();
    let n_windows = ((w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW)) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; w * h * 3]);
    for c in 0..3 {
        let pa: Vec<f64> = a.as_slice().iter().skip(c).step_by(3).copied().collect();
        let pb: Vec<f64> = b.as_slice().iter().skip(c).step_by(3).copied().collect();
        let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let mu_a = filter_valid(&pa, w, h, &k);
        let mu_b = filter_valid(&pb, w, h, &k);
        let e_aa = filter_valid(&sq(&pa, &pa), w, h, &k);
        let e_bb = filter_valid(&sq(&pb, &pb), w, h, &k);
        let e_ab = filter_valid(&sq(&pa, &pb), w, h, &k);

        let m = mu_a.len();
        let (mut d_mu, mut d_eaa, mut d_eab) = if want_grad {
            (vec![0.0; m], vec![0.0; m], vec![0.0; m])
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        let mut channel_sum = 0.0;
        for q in 0..m {
            let (ma, mb) = (mu_a[q], mu_b[q]);
            let var_a = e_aa[q] - ma * ma;
            let var_b = e_bb[q] - mb * mb;
            let cov = e_ab[q] - ma * mb;
            let a1 = 2.0 * ma * mb + C1;
            let a2 = 2.0 * cov + C2;
            let b1 = ma * ma + mb * mb + C1;
            let b2 = var_a + var_b + C2;
            let den = b1 * b2;
            let s = a1 * a2 / den;
            channel_sum += s;
            if want_grad {
                // Partials with E[aa], E[ab] and mu_a treated as independent.
                let da1 = 2.0 * mb;
                let da2 = -2.0 * mb;
                let db1 = 2.0 * ma;
                let db2 = -2.0 * ma;
                d_mu[q] = ((da1 * a2 + a1 * da2) * den - a1 * a2 * (db1 * b2 + b1 * db2)) / (den * den);
                d_eaa[q] = -s / b2;
                d_eab[q] = 2.0 * a1 / den;
            }
        }
        total += channel_sum / n_windows;

        if let Some(g) = grad.as_mut() {
            let t_mu = filter_valid_adjoint(&d_mu, w, h, &k);
            let t_aa = filter_valid_adjoint(&d_eaa, w, h, &k);
            let t_ab = filter_valid_adjoint(&d_eab, w, h, &k);
            let scale = 1.0 / (3.0 * n_windows);
            for p in 0..w * h {
                g[p * 3 + c] = scale * (t_mu[p] + 2.0 * pa[p] * t_aa[p] + pb[p] * t_ab[p]);
            }
        }
    }
    Ok((total / 3.0, grad))
}
