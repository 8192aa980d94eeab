use std::f64::consts::PI;

use crate::scene::Vec3;

pub fn encoded_len(levels: usize) -> usize {
    3 * (1 + 2 * levels)
}

/// Multi-resolution encoding of a 3-vector.
///
/// Each coordinate `x` expands to `[x, sin(2⁰πx), cos(2⁰πx), …,
/// sin(2^{L−1}πx), cos(2^{L−1}πx)]`; the three blocks are concatenated.
pub fn positional_encode(x: Vec3, levels: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_len(levels));
    positional_encode_into(x, levels, &mut out);
    out
}

pub(crate) fn positional_encode_into(x: Vec3, levels: usize, out: &mut Vec<f64>) {
    for &c in &x {
        out.push(c);
        let mut freq = PI;
        for _ in 0..levels {
            let (s, co) = (freq * c).sin_cos();
            out.push(s);
            out.push(co);
            freq *= 2.0;
        }
    }
}

/// Pulls a gradient with respect to the encoding back onto the input point.
pub(crate) fn positional_encode_backward(x: Vec3, levels: usize, d_enc: &[f64]) -> Vec3 {
    let block = 1 + 2 * levels;
    debug_assert_eq!(d_enc.len(), 3 * block);
    let mut g = [0.0; 3];
    for (c, gc) in g.iter_mut().enumerate() {
        let d = &d_enc[c * block..(c + 1) * block];
        let mut acc = d[0];
        let mut freq = PI;
        for l in 0..levels {
            let (s, co) = (freq * x[c]).sin_cos();
            acc += d[1 + 2 * l] * freq * co - d[2 + 2 * l] * freq * s;
            freq *= 2.0;
        }
        *gc = acc;
    }
    g
}
