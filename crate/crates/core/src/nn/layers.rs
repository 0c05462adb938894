//! Layer descriptions and the batched forward/backward kernels behind them.
//!
//! Activations are laid out `(batch, channels, height, width)` for spatial
//! layers and `(batch, features)` after a flatten. Convolution weights are
//! `(out_channels, in_channels, kh, kw)`, dense weights `(units, fan_in)`.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softmax,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerKind {
    Dense {
        units: usize,
    },
    Conv2d {
        channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    AvgPool2d {
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    MaxPool2d {
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(units: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense { units },
            activation,
        }
    }

    /// 3x3 kernel, stride 1, zero "same" padding.
    pub fn conv(channels: usize) -> Self {
        Self {
            kind: LayerKind::Conv2d {
                channels,
                kernel: (3, 3),
                stride: (1, 1),
            },
            activation: Activation::Relu,
        }
    }

    /// 2x2 window, stride 2.
    pub fn avg_pool() -> Self {
        Self {
            kind: LayerKind::AvgPool2d {
                kernel: (2, 2),
                stride: (2, 2),
            },
            activation: Activation::None,
        }
    }

    /// 2x2 window, stride 2.
    pub fn max_pool() -> Self {
        Self {
            kind: LayerKind::MaxPool2d {
                kernel: (2, 2),
                stride: (2, 2),
            },
            activation: Activation::None,
        }
    }

    pub fn flatten() -> Self {
        Self {
            kind: LayerKind::Flatten,
            activation: Activation::None,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self.kind, LayerKind::Dense { .. } | LayerKind::Conv2d { .. })
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::AvgPool2d { .. } => "avgpool2d",
            LayerKind::MaxPool2d { .. } => "maxpool2d",
            LayerKind::Flatten => "flatten",
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let name = self.kind_name();
        match self.kind {
            LayerKind::Dense { units } => {
                if units == 0 {
                    return Err(Error::Spec("dense layer with zero units".into()));
                }
                if input.len() != 1 {
                    return Err(Error::shape(name, format!("expects flat input, got {input:?}")));
                }
                Ok(vec![units])
            }
            LayerKind::Conv2d {
                channels,
                kernel,
                stride,
            } => {
                if channels == 0 || kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
                    return Err(Error::Spec("conv2d with zero channels, kernel or stride".into()));
                }
                let [_, h, w] = spatial(name, input)?;
                let (ph, pw) = (kernel.0 / 2, kernel.1 / 2);
                if h + 2 * ph < kernel.0 || w + 2 * pw < kernel.1 {
                    return Err(Error::shape(name, format!("kernel {kernel:?} larger than input {input:?}")));
                }
                Ok(vec![
                    channels,
                    (h + 2 * ph - kernel.0) / stride.0 + 1,
                    (w + 2 * pw - kernel.1) / stride.1 + 1,
                ])
            }
            LayerKind::AvgPool2d { kernel, stride } | LayerKind::MaxPool2d { kernel, stride } => {
                if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
                    return Err(Error::Spec("pooling with zero kernel or stride".into()));
                }
                let [c, h, w] = spatial(name, input)?;
                if h < kernel.0 || w < kernel.1 {
                    return Err(Error::shape(name, format!("window {kernel:?} larger than input {input:?}")));
                }
                Ok(vec![c, (h - kernel.0) / stride.0 + 1, (w - kernel.1) / stride.1 + 1])
            }
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// `(weights shape, bias shape, fan_in)` for a per-sample input shape.
    pub fn param_shapes(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>, usize)> {
        match self.kind {
            LayerKind::Dense { units } => Some((vec![units, input[0]], vec![units], input[0])),
            LayerKind::Conv2d {
                channels, kernel, ..
            } => {
                let fan_in = input[0] * kernel.0 * kernel.1;
                Some((
                    vec![channels, input[0], kernel.0, kernel.1],
                    vec![channels],
                    fan_in,
                ))
            }
            _ => None,
        }
    }
}

fn spatial(name: &str, input: &[usize]) -> Result<[usize; 3]> {
    match input {
        &[c, h, w] => Ok([c, h, w]),
        _ => Err(Error::shape(name, format!("expects (C, H, W) input, got {input:?}"))),
    }
}

/// Output positions `o` in `[lo, hi)` whose tap `o * stride + offset - pad`
/// falls inside `[0, in_len)`.
fn valid_range(offset: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > offset {
        (pad - offset).div_ceil(stride)
    } else {
        0
    };
    let hi = if in_len + pad > offset {
        ((in_len + pad - offset - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

pub(crate) fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (batch, fan_in) = (x.rows(), x.row_len());
    let units = w.shape()[0];
    let mut out = vec![0.0; batch * units];
    for s in 0..batch {
        let xs = x.row(s);
        for u in 0..units {
            let wr = &w.data()[u * fan_in..(u + 1) * fan_in];
            out[s * units + u] = b.data()[u] + dot(wr, xs);
        }
    }
    Tensor::new(vec![batch, units], out).expect("dense output shape")
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub(crate) fn dense_backward(x: &Tensor, w: &Tensor, gout: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (batch, fan_in) = (x.rows(), x.row_len());
    let units = w.shape()[0];
    let mut gx = vec![0.0; batch * fan_in];
    let mut gw = vec![0.0; units * fan_in];
    let mut gb = vec![0.0; units];
    for s in 0..batch {
        let xs = x.row(s);
        let gs = gout.row(s);
        let gxs = &mut gx[s * fan_in..(s + 1) * fan_in];
        for u in 0..units {
            let g = gs[u];
            if g == 0.0 {
                continue;
            }
            gb[u] += g;
            let wr = &w.data()[u * fan_in..(u + 1) * fan_in];
            let gwr = &mut gw[u * fan_in..(u + 1) * fan_in];
            axpy(g, xs, gwr);
            axpy(g, wr, gxs);
        }
    }
    (
        Tensor::new(x.shape().to_vec(), gx).expect("dense grad_x"),
        Tensor::new(w.shape().to_vec(), gw).expect("dense grad_w"),
        Tensor::new(vec![units], gb).expect("dense grad_b"),
    )
}

struct ConvGeom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(x: &Tensor, w: &Tensor, stride: (usize, usize)) -> Self {
        let (batch, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (cout, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let (ph, pw) = (kh / 2, kw / 2);
        Self {
            batch,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            ph,
            pw,
            oh: (h + 2 * ph - kh) / stride.0 + 1,
            ow: (wd + 2 * pw - kw) / stride.1 + 1,
        }
    }
}

/// Zero-padded ("same" for odd kernels) 2D cross-correlation.
pub(crate) fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, stride: (usize, usize)) -> Tensor {
    let g = ConvGeom::new(x, w, stride);
    let in_plane = g.h * g.w;
    let out_plane = g.oh * g.ow;
    let mut out = vec![0.0; g.batch * g.cout * out_plane];
    for s in 0..g.batch {
        for oc in 0..g.cout {
            let dst = &mut out[(s * g.cout + oc) * out_plane..][..out_plane];
            dst.fill(b.data()[oc]);
            for ic in 0..g.cin {
                let src = &x.data()[(s * g.cin + ic) * in_plane..][..in_plane];
                let kern = &w.data()[(oc * g.cin + ic) * g.kh * g.kw..][..g.kh * g.kw];
                for ky in 0..g.kh {
                    let (y0, y1) = valid_range(ky, g.ph, g.sh, g.h, g.oh);
                    for kx in 0..g.kw {
                        let wv = kern[ky * g.kw + kx];
                        let (x0, x1) = valid_range(kx, g.pw, g.sw, g.w, g.ow);
                        for oy in y0..y1 {
                            let iy = oy * g.sh + ky - g.ph;
                            let orow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                            let irow = &src[iy * g.w..(iy + 1) * g.w];
                            if g.sw == 1 {
                                let ix0 = x0 + kx - g.pw;
                                axpy(wv, &irow[ix0..ix0 + (x1 - x0)], &mut orow[x0..x1]);
                            } else {
                                for ox in x0..x1 {
                                    orow[ox] += wv * irow[ox * g.sw + kx - g.pw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.batch, g.cout, g.oh, g.ow], out).expect("conv output shape")
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    stride: (usize, usize),
) -> (Tensor, Tensor, Tensor) {
    let g = ConvGeom::new(x, w, stride);
    let in_plane = g.h * g.w;
    let out_plane = g.oh * g.ow;
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; g.cout];
    for s in 0..g.batch {
        for oc in 0..g.cout {
            let go = &gout.data()[(s * g.cout + oc) * out_plane..][..out_plane];
            gb[oc] += go.iter().sum::<f64>();
            for ic in 0..g.cin {
                let src = &x.data()[(s * g.cin + ic) * in_plane..][..in_plane];
                let gsrc = &mut gx[(s * g.cin + ic) * in_plane..][..in_plane];
                let kbase = (oc * g.cin + ic) * g.kh * g.kw;
                for ky in 0..g.kh {
                    let (y0, y1) = valid_range(ky, g.ph, g.sh, g.h, g.oh);
                    for kx in 0..g.kw {
                        let wv = w.data()[kbase + ky * g.kw + kx];
                        let (x0, x1) = valid_range(kx, g.pw, g.sw, g.w, g.ow);
                        let mut acc = 0.0;
                        for oy in y0..y1 {
                            let iy = oy * g.sh + ky - g.ph;
                            let grow = &go[oy * g.ow..(oy + 1) * g.ow];
                            if g.sw == 1 {
                                let ix0 = x0 + kx - g.pw;
                                let n = x1 - x0;
                                acc += dot(&grow[x0..x1], &src[iy * g.w + ix0..][..n]);
                                axpy(wv, &grow[x0..x1], &mut gsrc[iy * g.w + ix0..][..n]);
                            } else {
                                for ox in x0..x1 {
                                    let ix = ox * g.sw + kx - g.pw;
                                    acc += grow[ox] * src[iy * g.w + ix];
                                    gsrc[iy * g.w + ix] += wv * grow[ox];
                                }
                            }
                        }
                        gw[kbase + ky * g.kw + kx] += acc;
                    }
                }
            }
        }
    }
    (
        Tensor::new(x.shape().to_vec(), gx).expect("conv grad_x"),
        Tensor::new(w.shape().to_vec(), gw).expect("conv grad_w"),
        Tensor::new(vec![g.cout], gb).expect("conv grad_b"),
    )
}

fn pool_dims(x: &Tensor, kernel: (usize, usize), stride: (usize, usize)) -> [usize; 6] {
    let s = x.shape();
    [
        s[0],
        s[1],
        s[2],
        s[3],
        (s[2] - kernel.0) / stride.0 + 1,
        (s[3] - kernel.1) / stride.1 + 1,
    ]
}

pub(crate) fn avg_pool_forward(x: &Tensor, kernel: (usize, usize), stride: (usize, usize)) -> Tensor {
    let [b, c, h, w, oh, ow] = pool_dims(x, kernel, stride);
    let scale = 1.0 / (kernel.0 * kernel.1) as f64;
    let mut out = vec![0.0; b * c * oh * ow];
    for p in 0..b * c {
        let src = &x.data()[p * h * w..][..h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..kernel.0 {
                    let row = (oy * stride.0 + ky) * w + ox * stride.1;
                    acc += src[row..row + kernel.1].iter().sum::<f64>();
                }
                out[p * oh * ow + oy * ow + ox] = acc * scale;
            }
        }
    }
    Tensor::new(vec![b, c, oh, ow], out).expect("avgpool output shape")
}

pub(crate) fn avg_pool_backward(
    input_shape: &[usize],
    gout: &Tensor,
    kernel: (usize, usize),
    stride: (usize, usize),
) -> Tensor {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (oh, ow) = (gout.shape()[2], gout.shape()[3]);
    let planes = input_shape[0] * input_shape[1];
    let scale = 1.0 / (kernel.0 * kernel.1) as f64;
    let mut gx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let dst = &mut gx[p * h * w..][..h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let g = gout.data()[p * oh * ow + oy * ow + ox] * scale;
                for ky in 0..kernel.0 {
                    let row = (oy * stride.0 + ky) * w + ox * stride.1;
                    dst[row..row + kernel.1].iter_mut().for_each(|v| *v += g);
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), gx).expect("avgpool grad shape")
}

/// Returns the pooled tensor and, per output element, the flat input index
/// that won. Ties go to the first element in row-major window order.
pub(crate) fn max_pool_forward(
    x: &Tensor,
    kernel: (usize, usize),
    stride: (usize, usize),
) -> (Tensor, Vec<usize>) {
    let [b, c, h, w, oh, ow] = pool_dims(x, kernel, stride);
    let mut out = vec![0.0; b * c * oh * ow];
    let mut arg = vec![0usize; out.len()];
    for p in 0..b * c {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = base + oy * stride.0 * w + ox * stride.1;
                for ky in 0..kernel.0 {
                    for kx in 0..kernel.1 {
                        let idx = base + (oy * stride.0 + ky) * w + ox * stride.1 + kx;
                        if x.data()[idx] > best {
                            best = x.data()[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = p * oh * ow + oy * ow + ox;
                out[o] = best;
                arg[o] = best_idx;
            }
        }
    }
    (Tensor::new(vec![b, c, oh, ow], out).expect("maxpool output shape"), arg)
}

pub(crate) fn max_pool_backward(input_shape: &[usize], gout: &Tensor, argmax: &[usize]) -> Tensor {
    let mut gx = Tensor::zeros(input_shape);
    let d = gx.data_mut();
    for (&idx, &g) in argmax.iter().zip(gout.data()) {
        d[idx] += g;
    }
    gx
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct sliding-window correlation with explicit bounds checks.
    fn naive_conv(x: &[f64], h: usize, w: usize, k: &[f64], kh: usize, kw: usize) -> Vec<f64> {
        let (ph, pw) = (kh as isize / 2, kw as isize / 2);
        let mut out = vec![0.0; h * w];
        for y in 0..h as isize {
            for xx in 0..w as isize {
                let mut acc = 0.0;
                for ky in 0..kh as isize {
                    for kx in 0..kw as isize {
                        let (iy, ix) = (y + ky - ph, xx + kx - pw);
                        if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                            acc += k[(ky * kw as isize + kx) as usize] * x[(iy * w as isize + ix) as usize];
                        }
                    }
                }
                out[(y * w as isize + xx) as usize] = acc;
            }
        }
        out
    }

    #[test]
    fn one_by_one_conv_is_scalar_product() {
        let x = Tensor::new(vec![1, 1, 1, 1], vec![1.5]).unwrap();
        let w = Tensor::new(vec![1, 1, 1, 1], vec![-2.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = conv2d_forward(&x, &w, &b, (1, 1));
        assert_eq!(y.data(), &[-3.0]);
    }

    #[test]
    fn same_padding_matches_naive_correlation() {
        let x: Vec<f64> = (0..25).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let k: Vec<f64> = (0..9).map(|i| (i as f64 - 4.0) * 0.25).collect();
        let xt = Tensor::new(vec![1, 1, 5, 5], x.clone()).unwrap();
        let kt = Tensor::new(vec![1, 1, 3, 3], k.clone()).unwrap();
        let y = conv2d_forward(&xt, &kt, &Tensor::zeros(&[1]), (1, 1));
        assert_eq!(y.data(), naive_conv(&x, 5, 5, &k, 3, 3).as_slice());
    }

    #[test]
    fn valid_range_respects_padding() {
        // kernel tap 0 with pad 1 cannot produce output 0 (would read index -1)
        assert_eq!(valid_range(0, 1, 1, 4, 4), (1, 4));
        assert_eq!(valid_range(2, 1, 1, 4, 4), (0, 3));
        assert_eq!(valid_range(1, 1, 1, 4, 4), (0, 4));
    }

    #[test]
    fn avg_pool_backward_conserves_mass() {
        let g = Tensor::new(vec![1, 2, 2, 2], vec![1., -2., 3., 0.5, 4., 4., -1., 2.]).unwrap();
        let gx = avg_pool_backward(&[1, 2, 4, 4], &g, (2, 2), (2, 2));
        let s_in: f64 = g.data().iter().sum();
        let s_out: f64 = gx.data().iter().sum();
        assert!((s_in - s_out).abs() < 1e-12);
    }

    #[test]
    fn max_pool_routes_to_first_maximum() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![3., 3., 1., 2.]).unwrap();
        let (y, arg) = max_pool_forward(&x, (2, 2), (2, 2));
        assert_eq!(y.data(), &[3.0]);
        assert_eq!(arg, vec![0]);
    }
}
