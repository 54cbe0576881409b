// SPDX-License-Identifier: Apache-2.0

//! Single-sample layer kernels over channel-major buffers.

/// 3×3 convolution, stride 1, zero padding 1.
pub fn conv3x3_forward(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    c_out: usize,
) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; c_out * plane];
    for o in 0..c_out {
        let out_plane = &mut out[o * plane..(o + 1) * plane];
        out_plane.iter_mut().for_each(|v| *v = bias[o]);
        for c in 0..c_in {
            let in_plane = &input[c * plane..(c + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = valid_range(w, dx);
                    let wv = weight[((o * c_in + c) * 3 + ky) * 3 + kx];
                    for y in y0..y1 {
                        let yi = (y as isize + dy) as usize;
                        let xi0 = (x0 as isize + dx) as usize;
                        let dst = &mut out_plane[y * w + x0..y * w + x1];
                        let src = &in_plane[yi * w + xi0..yi * w + xi0 + (x1 - x0)];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when
/// `want_input_grad` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    c_out: usize,
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let plane = h * w;
    let mut grad_in = want_input_grad.then(|| vec![0.0; c_in * plane]);
    for o in 0..c_out {
        let go = &grad_out[o * plane..(o + 1) * plane];
        grad_bias[o] += go.iter().sum::<f64>();
        for c in 0..c_in {
            let in_plane = &input[c * plane..(c + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = valid_range(w, dx);
                    let widx = ((o * c_in + c) * 3 + ky) * 3 + kx;
                    let wv = weight[widx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let yi = (y as isize + dy) as usize;
                        let xi0 = (x0 as isize + dx) as usize;
                        let g = &go[y * w + x0..y * w + x1];
                        let src = &in_plane[yi * w + xi0..yi * w + xi0 + (x1 - x0)];
                        acc += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(gi) = grad_in.as_mut() {
                            let dst = &mut gi[c * plane + yi * w + xi0..c * plane + yi * w + xi0 + (x1 - x0)];
                            for (d, gv) in dst.iter_mut().zip(g) {
                                *d += wv * gv;
                            }
                        }
                    }
                    grad_weight[widx] += acc;
                }
            }
        }
    }
    grad_in
}

fn valid_range(len: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset.max(0)) as usize;
    (lo, hi.min(len))
}

pub fn relu_inplace(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zero the gradient where the (post-activation) output was not positive.
pub fn relu_backward_inplace(grad: &mut [f64], activated: &[f64]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2×2 max pooling; returns output and the flat argmax index per output.
pub fn maxpool2_forward(input: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    let mut arg = vec![0usize; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let base = ch * h * w;
                let mut best_i = base + (2 * y) * w + 2 * x;
                let mut best = input[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * x + dx;
                    if input[i] > best {
                        best = input[i];
                        best_i = i;
                    }
                }
                let o = (ch * oh + y) * ow + x;
                out[o] = best;
                arg[o] = best_i;
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward(grad_out: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut grad_in = vec![0.0; input_len];
    for (g, &i) in grad_out.iter().zip(argmax) {
        grad_in[i] += g;
    }
    grad_in
}

/// `out = W x + b` with `W` row-major `[rows × cols]`.
pub fn linear_forward(x: &[f64], weight: &[f64], bias: &[f64], rows: usize) -> Vec<f64> {
    let cols = x.len();
    (0..rows)
        .map(|r| {
            bias[r]
                + weight[r * cols..(r + 1) * cols]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
        })
        .collect()
}

pub fn linear_backward(
    x: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let cols = x.len();
    let mut grad_in = want_input_grad.then(|| vec![0.0; cols]);
    for (r, &g) in grad_out.iter().enumerate() {
        grad_bias[r] += g;
        let gw = &mut grad_weight[r * cols..(r + 1) * cols];
        for (dst, xv) in gw.iter_mut().zip(x) {
            *dst += g * xv;
        }
        if let Some(gi) = grad_in.as_mut() {
            for (dst, wv) in gi.iter_mut().zip(&weight[r * cols..(r + 1) * cols]) {
                *dst += g * wv;
            }
        }
    }
    grad_in
}
