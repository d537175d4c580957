//! Multi-channel 2D convolution with explicit backward pass.
//!
//! Feature maps are `channels x height x width`, row-major. Weights are
//! `out x in x k x k`. Convolutions are "same"-sized; the input is padded
//! by `k / 2` on every side according to a [`Boundary`].

use crate::volume::Boundary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.channels * self.plane()
    }
}

/// Pad every channel of `input` by `r` on all sides.
pub(crate) fn pad(input: &[f64], shape: Shape, r: usize, boundary: Boundary) -> Vec<f64> {
    let (h, w) = (shape.height, shape.width);
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let cols: Vec<Option<usize>> = (0..pw)
        .map(|px| boundary.resolve(px as isize - r as isize, w))
        .collect();
    let mut out = vec![0.0; shape.channels * ph * pw];
    for c in 0..shape.channels {
        let src = &input[c * h * w..(c + 1) * h * w];
        let dst = &mut out[c * ph * pw..(c + 1) * ph * pw];
        for py in 0..ph {
            let Some(sy) = boundary.resolve(py as isize - r as isize, h) else {
                continue;
            };
            let row = &src[sy * w..(sy + 1) * w];
            let drow = &mut dst[py * pw..(py + 1) * pw];
            drow[r..r + w].copy_from_slice(row);
            for (px, col) in cols.iter().enumerate() {
                if px < r || px >= r + w {
                    if let Some(sx) = col {
                        drow[px] = row[*sx];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`pad`]: accumulate padded-domain gradients onto the input.
pub(crate) fn unpad(grad_padded: &[f64], shape: Shape, r: usize, boundary: Boundary) -> Vec<f64> {
    let (h, w) = (shape.height, shape.width);
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let cols: Vec<Option<usize>> = (0..pw)
        .map(|px| boundary.resolve(px as isize - r as isize, w))
        .collect();
    let mut out = vec![0.0; shape.len()];
    for c in 0..shape.channels {
        let src = &grad_padded[c * ph * pw..(c + 1) * ph * pw];
        let dst = &mut out[c * h * w..(c + 1) * h * w];
        for py in 0..ph {
            let Some(sy) = boundary.resolve(py as isize - r as isize, h) else {
                continue;
            };
            let srow = &src[py * pw..(py + 1) * pw];
            let drow = &mut dst[sy * w..(sy + 1) * w];
            for (px, col) in cols.iter().enumerate() {
                if let Some(sx) = col {
                    drow[*sx] += srow[px];
                }
            }
        }
    }
    out
}

/// Same-size convolution (cross-correlation) of a padded input.
pub(crate) fn conv_forward(
    padded: &[f64],
    in_shape: Shape,
    weights: &[f64],
    bias: &[f64],
    out_channels: usize,
    k: usize,
) -> Vec<f64> {
    let (h, w) = (in_shape.height, in_shape.width);
    let pw = w + k - 1;
    let pplane = (h + k - 1) * pw;
    let mut out = vec![0.0; out_channels * h * w];
    for co in 0..out_channels {
        let dst = &mut out[co * h * w..(co + 1) * h * w];
        dst.fill(bias[co]);
        for ci in 0..in_shape.channels {
            let src = &padded[ci * pplane..(ci + 1) * pplane];
            let wk = &weights[(co * in_shape.channels + ci) * k * k..][..k * k];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wk[ky * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in 0..h {
                        let s = &src[(y + ky) * pw + kx..][..w];
                        let d = &mut dst[y * w..(y + 1) * w];
                        for (dv, sv) in d.iter_mut().zip(s) {
                            *dv += wv * sv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv_forward`]: returns `(d_padded, d_weights, d_bias)`.
pub(crate) fn conv_backward(
    padded: &[f64],
    in_shape: Shape,
    weights: &[f64],
    grad_out: &[f64],
    out_channels: usize,
    k: usize,
    need_input_grad: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (h, w) = (in_shape.height, in_shape.width);
    let pw = w + k - 1;
    let pplane = (h + k - 1) * pw;
    let cin = in_shape.channels;
    let mut d_padded = if need_input_grad {
        vec![0.0; cin * pplane]
    } else {
        Vec::new()
    };
    let mut d_w = vec![0.0; out_channels * cin * k * k];
    let mut d_b = vec![0.0; out_channels];
    for co in 0..out_channels {
        let g = &grad_out[co * h * w..(co + 1) * h * w];
        d_b[co] = g.iter().sum();
        for ci in 0..cin {
            let src = &padded[ci * pplane..(ci + 1) * pplane];
            let base = (co * cin + ci) * k * k;
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = 0.0;
                    for y in 0..h {
                        let s = &src[(y + ky) * pw + kx..][..w];
                        let gr = &g[y * w..(y + 1) * w];
                        acc += gr.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                    }
                    d_w[base + ky * k + kx] = acc;
                    if need_input_grad {
                        let wv = weights[base + ky * k + kx];
                        let dp = &mut d_padded[ci * pplane..(ci + 1) * pplane];
                        for y in 0..h {
                            let d = &mut dp[(y + ky) * pw + kx..][..w];
                            let gr = &g[y * w..(y + 1) * w];
                            for (dv, gv) in d.iter_mut().zip(gr) {
                                *dv += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    (d_padded, d_w, d_b)
}

#[inline]
pub(crate) fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

#[inline]
pub(crate) fn silu_grad(z: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    s * (1.0 + z * (1.0 - s))
}
