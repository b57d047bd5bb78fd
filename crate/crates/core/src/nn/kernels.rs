//! Batched forward/backward kernels, NHWC layout.

use super::gemm::gemm;
use super::layers::{ConvSpec, TransposedConvSpec, BN_EPS};
use super::par;
use super::tensor::Tensor;

fn batched_shape(n: usize, sample: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(sample.len() + 1);
    s.push(n);
    s.extend_from_slice(sample);
    s
}

fn fill_bias(out: &mut [f64], bias: &[f64]) {
    for row in out.chunks_exact_mut(bias.len()) {
        row.copy_from_slice(bias);
    }
}

fn column_sums_into(dy: &[f64], cols: usize, into: &mut [f64]) {
    for row in dy.chunks_exact(cols) {
        for (a, b) in into.iter_mut().zip(row) {
            *a += b;
        }
    }
}

// ---------------------------------------------------------------- dense

pub(crate) fn dense_forward(x: &Tensor, n_in: usize, n_out: usize, w: &[f64], b: &[f64]) -> Tensor {
    let n = x.batch();
    let mut y = vec![0.0; n * n_out];
    fill_bias(&mut y, b);
    gemm(n, n_in, n_out, x.data(), false, w, false, 1.0, &mut y);
    Tensor::new(vec![n, n_out], y).expect("dense output shape")
}

/// Returns (dx, dw, db).
pub(crate) fn dense_backward(x: &Tensor, dy: &Tensor, n_in: usize, n_out: usize, w: &[f64], need_dx: bool) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let n = x.batch();
    let mut dw = vec![0.0; n_in * n_out];
    gemm(n_in, n, n_out, x.data(), true, dy.data(), false, 0.0, &mut dw);
    let mut db = vec![0.0; n_out];
    column_sums_into(dy.data(), n_out, &mut db);
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; n * n_in];
        gemm(n, n_out, n_in, dy.data(), false, w, true, 0.0, &mut dx);
        dx
    });
    (dx, dw, db)
}

// ---------------------------------------------------------------- conv

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    h: usize,
    w: usize,
    cin: usize,
    ho: usize,
    wo: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    pt: usize,
    pl: usize,
}

impl ConvGeom {
    fn new(spec: &ConvSpec, in_shape: &[usize], out_shape: &[usize]) -> Self {
        Self {
            h: in_shape[0],
            w: in_shape[1],
            cin: spec.in_ch,
            ho: out_shape[0],
            wo: out_shape[1],
            cout: spec.out_ch,
            kh: spec.kernel.0,
            kw: spec.kernel.1,
            sh: spec.stride.0,
            sw: spec.stride.1,
            pt: spec.padding.top,
            pl: spec.padding.left,
        }
    }

    fn k(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.pt == 0 && self.pl == 0 && self.ho == self.h && self.wo == self.w
    }

    fn in_len(&self) -> usize {
        self.h * self.w * self.cin
    }

    fn out_len(&self) -> usize {
        self.ho * self.wo * self.cout
    }

    /// Visits every (patch row, patch column offset, input offset) triple
    /// whose source pixel lies inside the input.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, Option<usize>)) {
        let k = self.k();
        for oy in 0..self.ho {
            for ox in 0..self.wo {
                let row = (oy * self.wo + ox) * k;
                for ky in 0..self.kh {
                    let iy = (oy * self.sh + ky) as isize - self.pt as isize;
                    for kx in 0..self.kw {
                        let ix = (ox * self.sw + kx) as isize - self.pl as isize;
                        let dst = row + (ky * self.kw + kx) * self.cin;
                        let src = (iy >= 0 && iy < self.h as isize && ix >= 0 && ix < self.w as isize)
                            .then(|| (iy as usize * self.w + ix as usize) * self.cin);
                        f(row, dst, src);
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let c = self.cin;
        self.for_each_tap(|_, dst, src| match src {
            Some(s) => col[dst..dst + c].copy_from_slice(&x[s..s + c]),
            None => col[dst..dst + c].fill(0.0),
        });
    }

    fn col2im_add(&self, dcol: &[f64], dx: &mut [f64]) {
        let c = self.cin;
        self.for_each_tap(|_, dst, src| {
            if let Some(s) = src {
                for (a, b) in dx[s..s + c].iter_mut().zip(&dcol[dst..dst + c]) {
                    *a += b;
                }
            }
        });
    }
}

pub(crate) fn conv_forward(x: &Tensor, spec: &ConvSpec, out_shape: &[usize], w: &[f64], b: &[f64]) -> Tensor {
    let g = ConvGeom::new(spec, x.sample_shape(), out_shape);
    let n = x.batch();
    let (m, k) = (g.ho * g.wo, g.k());
    let mut y = vec![0.0; n * g.out_len()];
    par::chunks_mut(&mut y, g.out_len(), |first, ys| {
        let mut col = if g.pointwise() { Vec::new() } else { vec![0.0; m * k] };
        for (j, out) in ys.chunks_mut(g.out_len()).enumerate() {
            let xs = x.sample(first + j);
            let a: &[f64] = if g.pointwise() {
                xs
            } else {
                g.im2col(xs, &mut col);
                &col
            };
            fill_bias(out, b);
            gemm(m, k, g.cout, a, false, w, false, 1.0, out);
        }
    });
    Tensor::new(batched_shape(n, out_shape), y).expect("conv output shape")
}

type ParamGrads = (Vec<f64>, Vec<f64>);

pub(crate) fn conv_backward(x: &Tensor, dy: &Tensor, spec: &ConvSpec, w: &[f64], need_dx: bool) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let g = ConvGeom::new(spec, x.sample_shape(), dy.sample_shape());
    let n = x.batch();
    let (m, k) = (g.ho * g.wo, g.k());
    let chunk_grads = |first: usize, count: usize, mut dxs: Option<&mut [f64]>| -> ParamGrads {
        let mut dw = vec![0.0; k * g.cout];
        let mut db = vec![0.0; g.cout];
        let mut col = if g.pointwise() { Vec::new() } else { vec![0.0; m * k] };
        let mut dcol = if dxs.is_some() && !g.pointwise() { vec![0.0; m * k] } else { Vec::new() };
        for j in 0..count {
            let xs = x.sample(first + j);
            let dys = dy.sample(first + j);
            let a: &[f64] = if g.pointwise() {
                xs
            } else {
                g.im2col(xs, &mut col);
                &col
            };
            gemm(k, m, g.cout, a, true, dys, false, 1.0, &mut dw);
            column_sums_into(dys, g.cout, &mut db);
            if let Some(dx) = dxs.as_deref_mut() {
                let dx = &mut dx[j * g.in_len()..(j + 1) * g.in_len()];
                if g.pointwise() {
                    gemm(m, g.cout, k, dys, false, w, true, 0.0, dx);
                } else {
                    gemm(m, g.cout, k, dys, false, w, true, 0.0, &mut dcol);
                    g.col2im_add(&dcol, dx);
                }
            }
        }
        (dw, db)
    };
    let (dx, parts) = if need_dx {
        let mut dx = vec![0.0; n * g.in_len()];
        let parts = par::chunks_mut(&mut dx, g.in_len(), |first, dxs| {
            let count = dxs.len() / g.in_len();
            chunk_grads(first, count, Some(dxs))
        });
        (Some(dx), parts)
    } else {
        (None, par::ranges(n, |r| chunk_grads(r.start, r.len(), None)))
    };
    let mut dw = vec![0.0; k * g.cout];
    let mut db = vec![0.0; g.cout];
    let (pw, pb): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    par::sum_in_order(pw, &mut dw);
    par::sum_in_order(pb, &mut db);
    (dx, dw, db)
}

// ---------------------------------------------------------------- transposed conv

#[derive(Debug, Clone, Copy)]
struct TGeom {
    h: usize,
    w: usize,
    cin: usize,
    ho: usize,
    wo: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
}

impl TGeom {
    fn new(spec: &TransposedConvSpec, in_shape: &[usize], out_shape: &[usize]) -> Self {
        Self {
            h: in_shape[0],
            w: in_shape[1],
            cin: spec.in_ch,
            ho: out_shape[0],
            wo: out_shape[1],
            cout: spec.out_ch,
            kh: spec.kernel.0,
            kw: spec.kernel.1,
            sh: spec.stride.0,
            sw: spec.stride.1,
            ph: spec.padding.0,
            pw: spec.padding.1,
        }
    }

    fn kk(&self) -> usize {
        self.kh * self.kw * self.cout
    }

    fn in_len(&self) -> usize {
        self.h * self.w * self.cin
    }

    fn out_len(&self) -> usize {
        self.ho * self.wo * self.cout
    }

    /// Visits (column offset into the scattered rows, output offset) for
    /// every kernel tap landing inside the cropped output.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let kk = self.kk();
        for iy in 0..self.h {
            for ix in 0..self.w {
                let row = (iy * self.w + ix) * kk;
                for ky in 0..self.kh {
                    let oy = (iy * self.sh + ky) as isize - self.ph as isize;
                    if oy < 0 || oy >= self.ho as isize {
                        continue;
                    }
                    for kx in 0..self.kw {
                        let ox = (ix * self.sw + kx) as isize - self.pw as isize;
                        if ox < 0 || ox >= self.wo as isize {
                            continue;
                        }
                        let src = row + (ky * self.kw + kx) * self.cout;
                        let dst = (oy as usize * self.wo + ox as usize) * self.cout;
                        f(src, dst);
                    }
                }
            }
        }
    }
}

pub(crate) fn tconv_forward(x: &Tensor, spec: &TransposedConvSpec, out_shape: &[usize], w: &[f64], b: &[f64]) -> Tensor {
    let g = TGeom::new(spec, x.sample_shape(), out_shape);
    let n = x.batch();
    let m = g.h * g.w;
    let mut y = vec![0.0; n * g.out_len()];
    par::chunks_mut(&mut y, g.out_len(), |first, ys| {
        let mut cols = vec![0.0; m * g.kk()];
        for (j, out) in ys.chunks_mut(g.out_len()).enumerate() {
            gemm(m, g.cin, g.kk(), x.sample(first + j), false, w, false, 0.0, &mut cols);
            fill_bias(out, b);
            let c = g.cout;
            g.for_each_tap(|src, dst| {
                for (a, v) in out[dst..dst + c].iter_mut().zip(&cols[src..src + c]) {
                    *a += v;
                }
            });
        }
    });
    Tensor::new(batched_shape(n, out_shape), y).expect("transposed conv output shape")
}

pub(crate) fn tconv_backward(
    x: &Tensor,
    dy: &Tensor,
    spec: &TransposedConvSpec,
    w: &[f64],
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let g = TGeom::new(spec, x.sample_shape(), dy.sample_shape());
    let n = x.batch();
    let m = g.h * g.w;
    let chunk_grads = |first: usize, count: usize, mut dxs: Option<&mut [f64]>| -> ParamGrads {
        let mut dw = vec![0.0; g.cin * g.kk()];
        let mut db = vec![0.0; g.cout];
        let mut dcols = vec![0.0; m * g.kk()];
        for j in 0..count {
            let dys = dy.sample(first + j);
            dcols.fill(0.0);
            let c = g.cout;
            g.for_each_tap(|src, dst| dcols[src..src + c].copy_from_slice(&dys[dst..dst + c]));
            gemm(g.cin, m, g.kk(), x.sample(first + j), true, &dcols, false, 1.0, &mut dw);
            column_sums_into(dys, g.cout, &mut db);
            if let Some(dx) = dxs.as_deref_mut() {
                let dx = &mut dx[j * g.in_len()..(j + 1) * g.in_len()];
                gemm(m, g.kk(), g.cin, &dcols, false, w, true, 0.0, dx);
            }
        }
        (dw, db)
    };
    let (dx, parts) = if need_dx {
        let mut dx = vec![0.0; n * g.in_len()];
        let parts = par::chunks_mut(&mut dx, g.in_len(), |first, dxs| {
            let count = dxs.len() / g.in_len();
            chunk_grads(first, count, Some(dxs))
        });
        (Some(dx), parts)
    } else {
        (None, par::ranges(n, |r| chunk_grads(r.start, r.len(), None)))
    };
    let mut dw = vec![0.0; g.cin * g.kk()];
    let mut db = vec![0.0; g.cout];
    let (pw, pb): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    par::sum_in_order(pw, &mut dw);
    par::sum_in_order(pb, &mut db);
    (dx, dw, db)
}

// ---------------------------------------------------------------- batch norm

#[derive(Debug, Clone)]
pub(crate) struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn bn_batch_stats(x: &Tensor, channels: usize) -> BnStats {
    let rows = x.data().len() / channels;
    let mut mean = vec![0.0; channels];
    column_sums_into(x.data(), channels, &mut mean);
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0; channels];
    for row in x.data().chunks_exact(channels) {
        for c in 0..channels {
            let d = row[c] - mean[c];
            var[c] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= rows as f64);
    let inv_std = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    BnStats { mean, var, inv_std }
}

pub(crate) fn bn_apply(x: &Tensor, mean: &[f64], inv_std: &[f64], gamma: &[f64], beta: &[f64]) -> Tensor {
    let c = mean.len();
    let mut y = x.data().to_vec();
    for row in y.chunks_exact_mut(c) {
        for j in 0..c {
            row[j] = gamma[j] * (row[j] - mean[j]) * inv_std[j] + beta[j];
        }
    }
    Tensor::new(x.shape().to_vec(), y).expect("same shape")
}

/// Returns (dx, dgamma, dbeta) for training-mode normalization.
pub(crate) fn bn_backward(x: &Tensor, dy: &Tensor, stats: &BnStats, gamma: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c = gamma.len();
    let rows = (x.data().len() / c) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (xr, dr) in x.data().chunks_exact(c).zip(dy.data().chunks_exact(c)) {
        for j in 0..c {
            let xhat = (xr[j] - stats.mean[j]) * stats.inv_std[j];
            dgamma[j] += dr[j] * xhat;
            dbeta[j] += dr[j];
        }
    }
    let mut dx = vec![0.0; x.data().len()];
    for ((out, xr), dr) in dx.chunks_exact_mut(c).zip(x.data().chunks_exact(c)).zip(dy.data().chunks_exact(c)) {
        for j in 0..c {
            let xhat = (xr[j] - stats.mean[j]) * stats.inv_std[j];
            out[j] = gamma[j] * stats.inv_std[j] / rows * (rows * dr[j] - dbeta[j] - xhat * dgamma[j]);
        }
    }
    (dx, dgamma, dbeta)
}

// ---------------------------------------------------------------- bilinear upsample

/// (lower index, upper index, upper weight) per output position, half-pixel
/// centres, clamped at the borders.
fn axis_weights(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn upsample_taps(in_shape: &[usize], out_shape: &[usize], mut f: impl FnMut(usize, usize, f64)) {
    let (h, w, c) = (in_shape[0], in_shape[1], in_shape[2]);
    let ys = axis_weights(h, out_shape[0]);
    let xs = axis_weights(w, out_shape[1]);
    for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
            let out = (oy * out_shape[1] + ox) * c;
            for (iy, wy) in [(y0, 1.0 - ty), (y1, ty)] {
                for (ix, wx) in [(x0, 1.0 - tx), (x1, tx)] {
                    let wgt = wy * wx;
                    if wgt != 0.0 {
                        f(out, (iy * w + ix) * c, wgt);
                    }
                }
            }
        }
    }
}

pub(crate) fn upsample_forward(x: &Tensor, out_shape: &[usize]) -> Tensor {
    let n = x.batch();
    let c = out_shape[2];
    let out_len: usize = out_shape.iter().product();
    let mut y = vec![0.0; n * out_len];
    for (s, out) in y.chunks_mut(out_len).enumerate() {
        let xs = x.sample(s);
        upsample_taps(x.sample_shape(), out_shape, |o, i, wgt| {
            for j in 0..c {
                out[o + j] += wgt * xs[i + j];
            }
        });
    }
    Tensor::new(batched_shape(n, out_shape), y).expect("upsample output shape")
}

pub(crate) fn upsample_backward(in_shape: &[usize], dy: &Tensor) -> Vec<f64> {
    let n = dy.batch();
    let in_len: usize = in_shape.iter().product();
    let c = in_shape[2];
    let mut dx = vec![0.0; n * in_len];
    for (s, dxs) in dx.chunks_mut(in_len).enumerate() {
        let dys = dy.sample(s);
        upsample_taps(in_shape, dy.sample_shape(), |o, i, wgt| {
            for j in 0..c {
                dxs[i + j] += wgt * dys[o + j];
            }
        });
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Padding;

    #[test]
    fn hand_convolution() {
        // 3x3 all-ones kernel, zero padding, constant-1 input
        let spec = ConvSpec {
            in_ch: 1,
            out_ch: 1,
            kernel: (3, 3),
            stride: (1, 1),
            padding: Padding::symmetric(1, 1),
        };
        let x = Tensor::new(vec![1, 4, 5, 1], vec![1.0; 20]).unwrap();
        let y = conv_forward(&x, &spec, &[4, 5, 1], &[1.0; 9], &[0.0]);
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[5 + 1], 9.0);
        assert_eq!(y.data()[4], 4.0);
        assert_eq!(y.data()[5], 6.0);
    }

    #[test]
    fn pointwise_identity() {
        let spec = ConvSpec::same(3, 3, (1, 1));
        let x = Tensor::new(vec![2, 2, 2, 3], (0..24).map(|v| v as f64 - 7.5).collect()).unwrap();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let y = conv_forward(&x, &spec, &[2, 2, 3], &eye, &[0.0; 3]);
        assert_eq!(y, x);
    }

    #[test]
    fn upsample_preserves_constants() {
        let x = Tensor::new(vec![1, 24, 2, 2], [0.5, -2.0].repeat(48)).unwrap();
        let y = upsample_forward(&x, &[72, 14, 2]);
        for px in y.data().chunks_exact(2) {
            assert!((px[0] - 0.5).abs() < 1e-15 && (px[1] + 2.0).abs() < 1e-15);
        }
    }
}
