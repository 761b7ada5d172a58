use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingConfig {
    /// Frequency bands for positions (at least 1).
    pub l_pos: usize,
    /// Frequency bands for view directions.
    pub l_dir: usize,
    pub include_input: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            l_pos: 10,
            l_dir: 4,
            include_input: true,
        }
    }
}

impl EncodingConfig {
    pub fn pos_dim(&self) -> usize {
        encoded_len(self.l_pos, self.include_input)
    }

    pub fn dir_dim(&self) -> usize {
        encoded_len(self.l_dir, self.include_input)
    }
}

pub fn encoded_len(l: usize, include_input: bool) -> usize {
    (if include_input { 3 } else { 0 }) + 6 * l
}

/// `[v?, sin(2^0 π v), cos(2^0 π v), …, sin(2^(L−1) π v), cos(2^(L−1) π v)]`,
/// each term a 3-vector.
pub fn positional_encode(v: [f64; 3], l: usize, include_input: bool) -> Vec<f64> {
    let mut out = vec![0.0; encoded_len(l, include_input)];
    encode_into(v, l, include_input, &mut out);
    out
}

pub(crate) fn encode_into(v: [f64; 3], l: usize, include_input: bool, out: &mut [f64]) {
    let mut i = 0;
    if include_input {
        out[..3].copy_from_slice(&v);
        i = 3;
    }
    let mut freq = PI;
    for _ in 0..l {
        for c in 0..3 {
            let (s, co) = (freq * v[c]).sin_cos();
            out[i + c] = s;
            out[i + 3 + c] = co;
        }
        i += 6;
        freq *= 2.0;
    }
}
