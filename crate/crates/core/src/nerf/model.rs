//! The radiance-field MLP: a ReLU trunk on encoded positions, a softplus
//! density head, and a color branch that also sees the encoded direction.

use super::encoding::{encode_into, EncodingConfig};
use super::{NerfError, Result};
use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Bias that drives softplus to exactly zero in double precision.
pub const EMPTY_SPACE_BIAS: f64 = -1000.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NerfModel {
    pub encoding: EncodingConfig,
    /// Widths of the hidden trunk layers.
    pub widths: Vec<usize>,
    /// Weights (row-major, input × output) then biases, layer by layer.
    pub params: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Layer {
    pub input: usize,
    pub output: usize,
    pub offset: usize,
}

impl Layer {
    fn len(&self) -> usize {
        self.input * self.output + self.output
    }
}

/// Layer list: trunk, density head, feature layer, color hidden, color out.
pub(crate) fn layout(encoding: &EncodingConfig, widths: &[usize]) -> Vec<Layer> {
    let last = *widths.last().expect("validated non-empty");
    let mut dims: Vec<(usize, usize)> = Vec::new();
    let mut prev = encoding.pos_dim();
    for &w in widths {
        dims.push((prev, w));
        prev = w;
    }
    let color_hidden = (last / 2).max(1);
    dims.push((last, 1));
    dims.push((last, last));
    dims.push((last + encoding.dir_dim(), color_hidden));
    dims.push((color_hidden, 3));
    let mut offset = 0;
    dims.into_iter()
        .map(|(input, output)| {
            let l = Layer { input, output, offset };
            offset += l.len();
            l
        })
        .collect()
}

/// Number of weights and biases of the architecture.
pub fn parameter_count(encoding: &EncodingConfig, widths: &[usize]) -> usize {
    layout(encoding, widths).iter().map(Layer::len).sum()
}

fn validate(encoding: &EncodingConfig, widths: &[usize]) -> Result<()> {
    if encoding.l_pos == 0 {
        return Err(NerfError::Config("l_pos must be at least 1".into()));
    }
    if widths.is_empty() || widths.contains(&0) {
        return Err(NerfError::Config("layer widths must be a non-empty list of positive sizes".into()));
    }
    Ok(())
}

impl NerfModel {
    /// All parameters zero: density `ln 2` and color 0.5 everywhere.
    pub fn zeros(encoding: EncodingConfig, widths: Vec<usize>) -> Result<Self> {
        validate(&encoding, &widths)?;
        let n = parameter_count(&encoding, &widths);
        Ok(Self {
            encoding,
            widths,
            params: vec![0.0; n],
        })
    }

    /// He-uniform weights, zero biases.
    pub fn random(encoding: EncodingConfig, widths: Vec<usize>, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(encoding, widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in m.layers() {
            let bound = (6.0 / l.input as f64).sqrt();
            for w in &mut m.params[l.offset..l.offset + l.input * l.output] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(m)
    }

    /// A model whose density is exactly zero everywhere.
    pub fn empty_space(encoding: EncodingConfig, widths: Vec<usize>) -> Result<Self> {
        let mut m = Self::zeros(encoding, widths)?;
        let density = m.layers()[m.widths.len()];
        m.params[density.offset + density.input] = EMPTY_SPACE_BIAS;
        Ok(m)
    }

    /// Checks the parameter count against the architecture.
    pub fn validate(&self) -> Result<()> {
        validate(&self.encoding, &self.widths)?;
        let expected = parameter_count(&self.encoding, &self.widths);
        if self.params.len() != expected {
            return Err(NerfError::Config(format!(
                "model has {} parameters, architecture needs {expected}",
                self.params.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn layers(&self) -> Vec<Layer> {
        layout(&self.encoding, &self.widths)
    }

    fn weight(&self, l: &Layer) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((l.input, l.output), &self.params[l.offset..l.offset + l.input * l.output])
            .expect("layout matches parameter vector")
    }

    fn bias(&self, l: &Layer) -> ArrayView1<'_, f64> {
        let start = l.offset + l.input * l.output;
        ArrayView1::from(&self.params[start..start + l.output])
    }

    fn affine(&self, x: &ArrayView2<f64>, l: &Layer) -> Array2<f64> {
        let mut z = x.dot(&self.weight(l));
        z += &self.bias(l);
        z
    }

    /// Density and color at one point seen from direction `d`.
    pub fn field_eval(&self, x: [f64; 3], d: [f64; 3]) -> ([f64; 3], f64) {
        let fw = self.forward(&[x], &[d]);
        (
            [fw.rgb[(0, 0)], fw.rgb[(0, 1)], fw.rgb[(0, 2)]],
            fw.sigma[0],
        )
    }

    /// Batched forward pass with every intermediate kept for backprop.
    pub(crate) fn forward(&self, points: &[[f64; 3]], dirs: &[[f64; 3]]) -> Forward {
        let n = points.len();
        let enc = self.encoding;
        let layers = self.layers();
        let depth = self.widths.len();
        let last = *self.widths.last().expect("validated");

        let mut x0 = Array2::zeros((n, enc.pos_dim()));
        for (row, p) in x0.outer_iter_mut().zip(points) {
            encode_into(*p, enc.l_pos, enc.include_input, row.into_slice().expect("standard layout"));
        }
        let mut trunk_z = Vec::with_capacity(depth);
        let mut trunk_h: Vec<Array2<f64>> = Vec::with_capacity(depth);
        for l in &layers[..depth] {
            let input = trunk_h.last().map_or(x0.view(), |h| h.view());
            let z = self.affine(&input, l);
            let h = z.mapv(|v| v.max(0.0));
            trunk_z.push(z);
            trunk_h.push(h);
        }
        let h = trunk_h.last().expect("non-empty trunk").view();
        let sraw = self.affine(&h, &layers[depth]).column(0).to_owned();
        let sigma = sraw.mapv(softplus);
        let feat = self.affine(&h, &layers[depth + 1]);

        let dd = enc.dir_dim();
        let mut cin = Array2::zeros((n, last + dd));
        cin.slice_mut(s![.., ..last]).assign(&feat);
        for (mut row, d) in cin.outer_iter_mut().zip(dirs) {
            let tail = row.slice_mut(s![last..]);
            encode_into(*d, enc.l_dir, enc.include_input, tail.into_slice().expect("contiguous row tail"));
        }
        let zc = self.affine(&cin.view(), &layers[depth + 2]);
        let hc = zc.mapv(|v| v.max(0.0));
        let rgb = self.affine(&hc.view(), &layers[depth + 3]).mapv(sigmoid);
        Forward {
            x0,
            trunk_z,
            trunk_h,
            sraw,
            sigma,
            cin,
            zc,
            hc,
            rgb,
        }
    }

    /// Parameter gradient given loss gradients with respect to every
    /// row's density and color.
    pub(crate) fn backward(&self, fw: &Forward, d_sigma: &Array1<f64>, d_rgb: &Array2<f64>) -> Vec<f64> {
        let layers = self.layers();
        let depth = self.widths.len();
        let last = *self.widths.last().expect("validated");
        let mut grad = vec![0.0; self.params.len()];

        let d_zo = d_rgb * &fw.rgb.mapv(|c| c * (1.0 - c));
        let d_hc = self.layer_backward(&layers[depth + 3], &fw.hc.view(), &d_zo, &mut grad);
        let mut d_zc = d_hc;
        Zip::from(&mut d_zc).and(&fw.zc).for_each(|g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        let d_cin = self.layer_backward(&layers[depth + 2], &fw.cin.view(), &d_zc, &mut grad);
        let d_feat = d_cin.slice(s![.., ..last]).to_owned();
        let h = fw.trunk_h.last().expect("non-empty trunk").view();
        let mut d_h = self.layer_backward(&layers[depth + 1], &h, &d_feat, &mut grad);
        let d_sraw = (d_sigma * &fw.sraw.mapv(sigmoid)).insert_axis(Axis(1));
        d_h += &self.layer_backward(&layers[depth], &h, &d_sraw, &mut grad);

        for l in (0..depth).rev() {
            Zip::from(&mut d_h).and(&fw.trunk_z[l]).for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
            let input = if l == 0 { fw.x0.view() } else { fw.trunk_h[l - 1].view() };
            d_h = self.layer_backward(&layers[l], &input, &d_h, &mut grad);
        }
        grad
    }

    /// Writes weight and bias gradients of `z = x W + b` into `grad` and
    /// returns the gradient with respect to `x`.
    fn layer_backward(&self, l: &Layer, x: &ArrayView2<f64>, dz: &Array2<f64>, grad: &mut [f64]) -> Array2<f64> {
        let (wpart, rest) = grad[l.offset..l.offset + l.len()].split_at_mut(l.input * l.output);
        let mut gw = ArrayViewMut2::from_shape((l.input, l.output), wpart).expect("layout");
        general_mat_mul(1.0, &x.t(), dz, 1.0, &mut gw);
        for (b, col) in rest.iter_mut().zip(dz.columns()) {
            *b += col.sum();
        }
        dz.dot(&self.weight(l).t())
    }
}

/// Cached activations of a batched forward pass.
pub(crate) struct Forward {
    x0: Array2<f64>,
    trunk_z: Vec<Array2<f64>>,
    trunk_h: Vec<Array2<f64>>,
    sraw: Array1<f64>,
    pub sigma: Array1<f64>,
    cin: Array2<f64>,
    zc: Array2<f64>,
    hc: Array2<f64>,
    pub rgb: Array2<f64>,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
