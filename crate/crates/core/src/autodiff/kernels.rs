//! Numeric kernels on raw slices. No graph bookkeeping happens here.

use serde::{Deserialize, Serialize};

/// `c = alpha * op(a) * op(b) + beta * c` with explicit strides.
///
/// `a` is viewed as `m x k` with strides `(rsa, csa)`, `b` as `k x n`, `c` as
/// `m x n` row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the debug assertions above describe the extents read through the
    // strides; callers size every buffer from the same dimensions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Zero,
    Circular,
}

/// Geometry of a 2-D convolution over an `N x C x H x W` batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub padding: Padding,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        input: &[usize],
        weight: &[usize],
        stride: usize,
        pad: usize,
        padding: Padding,
    ) -> Option<Self> {
        if input.len() != 4 || weight.len() != 4 || stride == 0 {
            return None;
        }
        let (batch, in_channels, height, width) = (input[0], input[1], input[2], input[3]);
        let (out_channels, wc, kernel_h, kernel_w) = (weight[0], weight[1], weight[2], weight[3]);
        if wc != in_channels {
            return None;
        }
        if padding == Padding::Circular && (pad > height || pad > width) {
            return None;
        }
        let padded_h = height + 2 * pad;
        let padded_w = width + 2 * pad;
        if padded_h < kernel_h || padded_w < kernel_w {
            return None;
        }
        Some(Self {
            batch,
            in_channels,
            height,
            width,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            pad,
            padding,
            out_h: (padded_h - kernel_h) / stride + 1,
            out_w: (padded_w - kernel_w) / stride + 1,
        })
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.batch, self.in_channels, self.height, self.width]
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_channels, self.out_h, self.out_w]
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// For every (patch row, output position) the source offset within one
    /// sample, or `usize::MAX` when the tap falls into zero padding.
    fn im2col_table(&self) -> Vec<usize> {
        let positions = self.positions();
        let mut table = vec![usize::MAX; self.patch_len() * positions];
        let (h, w) = (self.height as isize, self.width as isize);
        for c in 0..self.in_channels {
            for ki in 0..self.kernel_h {
                for kj in 0..self.kernel_w {
                    let row = (c * self.kernel_h + ki) * self.kernel_w + kj;
                    let base = row * positions;
                    for oy in 0..self.out_h {
                        let mut iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if self.padding == Padding::Circular {
                            iy = iy.rem_euclid(h);
                        } else if iy < 0 || iy >= h {
                            continue;
                        }
                        for ox in 0..self.out_w {
                            let mut ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if self.padding == Padding::Circular {
                                ix = ix.rem_euclid(w);
                            } else if ix < 0 || ix >= w {
                                continue;
                            }
                            table[base + oy * self.out_w + ox] =
                                (c as isize * h * w + iy * w + ix) as usize;
                        }
                    }
                }
            }
        }
        table
    }
}

fn im2col(sample: &[f64], table: &[usize], col: &mut [f64]) {
    for (dst, &src) in col.iter_mut().zip(table) {
        *dst = if src == usize::MAX { 0.0 } else { sample[src] };
    }
}

pub(crate) fn conv2d(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (r, p, o) = (g.patch_len(), g.positions(), g.out_channels);
    let sample_len = g.in_channels * g.height * g.width;
    let table = g.im2col_table();
    let mut col = vec![0.0; r * p];
    let mut out = vec![0.0; g.batch * o * p];
    for n in 0..g.batch {
        im2col(&x[n * sample_len..(n + 1) * sample_len], &table, &mut col);
        gemm(o, r, p, w, r, 1, &col, p, 1, 0.0, &mut out[n * o * p..(n + 1) * o * p]);
    }
    out
}

/// Adjoint of [`conv2d`] in its input: maps an output-shaped tensor back onto
/// the input grid.
pub(crate) fn conv2d_input_adjoint(gy: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (r, p, o) = (g.patch_len(), g.positions(), g.out_channels);
    let sample_len = g.in_channels * g.height * g.width;
    let table = g.im2col_table();
    let mut col = vec![0.0; r * p];
    let mut gx = vec![0.0; g.batch * sample_len];
    for n in 0..g.batch {
        // col = W^T gy_n
        gemm(r, o, p, w, 1, r, &gy[n * o * p..(n + 1) * o * p], p, 1, 0.0, &mut col);
        let dst = &mut gx[n * sample_len..(n + 1) * sample_len];
        for (&src, &v) in table.iter().zip(&col) {
            if src != usize::MAX {
                dst[src] += v;
            }
        }
    }
    gx
}

/// Adjoint of [`conv2d`] in its weight.
pub(crate) fn conv2d_weight_adjoint(x: &[f64], gy: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (r, p, o) = (g.patch_len(), g.positions(), g.out_channels);
    let sample_len = g.in_channels * g.height * g.width;
    let table = g.im2col_table();
    let mut col = vec![0.0; r * p];
    let mut gw = vec![0.0; o * r];
    for n in 0..g.batch {
        im2col(&x[n * sample_len..(n + 1) * sample_len], &table, &mut col);
        // gw += gy_n col^T
        gemm(o, p, r, &gy[n * o * p..(n + 1) * o * p], p, 1, &col, 1, p, 1.0, &mut gw);
    }
    gw
}

/// Window geometry shared by max and average pooling (no padding).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeom {
    pub outer: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeom {
    pub fn new(input: &[usize], kernel: usize, stride: usize) -> Option<Self> {
        if input.len() != 4 || kernel == 0 || stride == 0 {
            return None;
        }
        let (height, width) = (input[2], input[3]);
        if height < kernel || width < kernel {
            return None;
        }
        Some(Self {
            outer: input[0] * input[1],
            height,
            width,
            kernel,
            stride,
            out_h: (height - kernel) / stride + 1,
            out_w: (width - kernel) / stride + 1,
        })
    }

    fn for_each_window(&self, mut f: impl FnMut(usize, &mut dyn Iterator<Item = usize>)) {
        let plane = self.height * self.width;
        let mut out = 0;
        for plane_idx in 0..self.outer {
            let base = plane_idx * plane;
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let y0 = oy * self.stride;
                    let x0 = ox * self.stride;
                    let (k, w) = (self.kernel, self.width);
                    let mut it = (0..k * k).map(move |t| base + (y0 + t / k) * w + x0 + t % k);
                    f(out, &mut it);
                    out += 1;
                }
            }
        }
    }

    pub fn output_len(&self) -> usize {
        self.outer * self.out_h * self.out_w
    }
}

/// Per-window argmax (first maximum wins on ties).
pub(crate) fn max_pool_indices(x: &[f64], g: &PoolGeom) -> Vec<usize> {
    let mut idx = vec![0; g.output_len()];
    g.for_each_window(|out, window| {
        let mut best = usize::MAX;
        for i in window {
            if best == usize::MAX || x[i] > x[best] {
                best = i;
            }
        }
        idx[out] = best;
    });
    idx
}

pub(crate) fn avg_pool(x: &[f64], g: &PoolGeom) -> Vec<f64> {
    let scale = 1.0 / (g.kernel * g.kernel) as f64;
    let mut out = vec![0.0; g.output_len()];
    g.for_each_window(|o, window| {
        out[o] = window.map(|i| x[i]).sum::<f64>() * scale;
    });
    out
}

pub(crate) fn avg_pool_adjoint(gy: &[f64], g: &PoolGeom) -> Vec<f64> {
    let scale = 1.0 / (g.kernel * g.kernel) as f64;
    let mut gx = vec![0.0; g.outer * g.height * g.width];
    g.for_each_window(|o, window| {
        for i in window {
            gx[i] += gy[o] * scale;
        }
    });
    gx
}

/// Row-wise softmax over `rows x cols`.
pub(crate) fn softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        dst.iter_mut().for_each(|d| *d /= total);
    }
    out
}

/// Mean softmax cross-entropy of `rows x cols` logits against integer labels.
pub(crate) fn softmax_cross_entropy(x: &[f64], cols: usize, labels: &[usize]) -> f64 {
    let rows = x.len() / cols;
    let mut total = 0.0;
    for (row, &label) in x.chunks(cols).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    total / rows as f64
}

pub(crate) fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}
