//! Convolution, transposed convolution and batch norm kernels.
//!
//! Convolutions go through im2col + the matmul kernels in `linalg`; the
//! transposed convolution is written as an independent scatter so the adjoint
//! identity between the two can be tested rather than being true by aliasing.

use super::linalg;
use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ConvGeom {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn for_conv(x_shape: &[usize], k_shape: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if x_shape.len() != 4 || k_shape.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("want NCHW input and OIKK kernel, got {:?} / {:?}", x_shape, k_shape),
            ));
        }
        if stride < 1 {
            return Err(Error::arg("conv2d", "stride must be >= 1"));
        }
        let (n, ci, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
        let (co, ki, kh, kw) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
        if ci != ki {
            return Err(Error::shape(
                "conv2d",
                format!("input has {} channels but kernel expects {}", ci, ki),
            ));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {}x{} larger than padded input {}x{}", kh, kw, h + 2 * padding, w + 2 * padding),
            ));
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        Ok(ConvGeom { n, ci, h, w, co, kh, kw, stride, padding, oh, ow })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.co, self.oh, self.ow]
    }

    fn patch_len(&self) -> usize {
        self.ci * self.kh * self.kw
    }
}

/// Gather input patches: rows indexed by (n, oh, ow), columns by (ci, kh, kw).
fn im2col<F: Scalar>(x: &[F], g: &ConvGeom) -> Vec<F> {
    let pl = g.patch_len();
    let mut patches = vec![F::zero(); g.n * g.oh * g.ow * pl];
    let hw = g.h * g.w;
    for ni in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((ni * g.oh + oy) * g.ow + ox) * pl;
                for ci in 0..g.ci {
                    let base = (ni * g.ci + ci) * hw;
                    for ky in 0..g.kh {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for kx in 0..g.kw {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            patches[row + (ci * g.kh + ky) * g.kw + kx] =
                                x[base + iy as usize * g.w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    patches
}

/// Scatter-add of patch rows back into input layout (adjoint of `im2col`).
fn col2im_add<F: Scalar>(patches: &[F], g: &ConvGeom) -> Vec<F> {
    let pl = g.patch_len();
    let hw = g.h * g.w;
    let mut x = vec![F::zero(); g.n * g.ci * hw];
    for ni in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((ni * g.oh + oy) * g.ow + ox) * pl;
                for ci in 0..g.ci {
                    let base = (ni * g.ci + ci) * hw;
                    for ky in 0..g.kh {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for kx in 0..g.kw {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            x[base + iy as usize * g.w + ix as usize] +=
                                patches[row + (ci * g.kh + ky) * g.kw + kx];
                        }
                    }
                }
            }
        }
    }
    x
}

pub fn conv2d_forward<F: Scalar>(x: &[F], kernel: &[F], g: &ConvGeom) -> Vec<F> {
    let pl = g.patch_len();
    let rows = g.n * g.oh * g.ow;
    let patches = im2col(x, g);
    // out_rows[(n,oy,ox), co] = patches . kernel_row(co)
    let out_rows = linalg::matmul_nt(&patches, kernel, rows, pl, g.co);
    // reorder to NCHW
    let mut out = vec![F::zero(); g.n * g.co * g.oh * g.ow];
    let ohw = g.oh * g.ow;
    for ni in 0..g.n {
        for p in 0..ohw {
            let row = (ni * ohw + p) * g.co;
            for co in 0..g.co {
                out[(ni * g.co + co) * ohw + p] = out_rows[row + co];
            }
        }
    }
    out
}

/// Gradient rows in (n*oh*ow, co) layout from an NCHW gradient.
fn grad_rows<F: Scalar>(dy: &[F], g: &ConvGeom) -> Vec<F> {
    let ohw = g.oh * g.ow;
    let mut rows = vec![F::zero(); g.n * ohw * g.co];
    for ni in 0..g.n {
        for co in 0..g.co {
            for p in 0..ohw {
                rows[(ni * ohw + p) * g.co + co] = dy[(ni * g.co + co) * ohw + p];
            }
        }
    }
    rows
}

pub fn conv2d_backward_input<F: Scalar>(dy: &[F], kernel: &[F], g: &ConvGeom) -> Vec<F> {
    let rows = g.n * g.oh * g.ow;
    let pl = g.patch_len();
    let dyr = grad_rows(dy, g);
    let dpatches = linalg::matmul_nn(&dyr, kernel, rows, g.co, pl);
    col2im_add(&dpatches, g)
}

pub fn conv2d_backward_kernel<F: Scalar>(dy: &[F], x: &[F], g: &ConvGeom) -> Vec<F> {
    let rows = g.n * g.oh * g.ow;
    let pl = g.patch_len();
    let patches = im2col(x, g);
    let dyr = grad_rows(dy, g);
    // dk[co, (ci,kh,kw)] = sum_rows dyr[row, co] * patches[row, :]
    linalg::matmul_tn(&dyr, &patches, rows, g.co, pl)
}

#[derive(Debug, Clone)]
pub struct TConvGeom {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

impl TConvGeom {
    pub fn for_tconv(x_shape: &[usize], k_shape: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if x_shape.len() != 4 || k_shape.len() != 4 {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("want NCHW input and IOKK kernel, got {:?} / {:?}", x_shape, k_shape),
            ));
        }
        if stride < 1 {
            return Err(Error::arg("conv_transpose2d", "stride must be >= 1"));
        }
        let (n, ci, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
        let (ki, co, kh, kw) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
        if ci != ki {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("input has {} channels but kernel expects {}", ci, ki),
            ));
        }
        let oh_signed = (h - 1) * stride + kh;
        let ow_signed = (w - 1) * stride + kw;
        if oh_signed < 2 * padding + 1 || ow_signed < 2 * padding + 1 {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("padding {} swallows the whole {}x{} output", padding, oh_signed, ow_signed),
            ));
        }
        let oh = oh_signed - 2 * padding;
        let ow = ow_signed - 2 * padding;
        Ok(TConvGeom { n, ci, h, w, co, kh, kw, stride, padding, oh, ow })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.co, self.oh, self.ow]
    }
}

pub fn tconv2d_forward<F: Scalar>(x: &[F], kernel: &[F], g: &TConvGeom) -> Vec<F> {
    let mut out = vec![F::zero(); g.n * g.co * g.oh * g.ow];
    let hw = g.h * g.w;
    let ohw = g.oh * g.ow;
    let kk = g.kh * g.kw;
    for ni in 0..g.n {
        for ci in 0..g.ci {
            let xin = &x[(ni * g.ci + ci) * hw..(ni * g.ci + ci + 1) * hw];
            for co in 0..g.co {
                let kslice = &kernel[(ci * g.co + co) * kk..(ci * g.co + co + 1) * kk];
                let oslice = &mut out[(ni * g.co + co) * ohw..(ni * g.co + co + 1) * ohw];
                for iy in 0..g.h {
                    for ix in 0..g.w {
                        let v = xin[iy * g.w + ix];
                        if v == F::zero() {
                            continue;
                        }
                        for ky in 0..g.kh {
                            let oy = (iy * g.stride + ky) as isize - g.padding as isize;
                            if oy < 0 || oy >= g.oh as isize {
                                continue;
                            }
                            for kx in 0..g.kw {
                                let ox = (ix * g.stride + kx) as isize - g.padding as isize;
                                if ox < 0 || ox >= g.ow as isize {
                                    continue;
                                }
                                oslice[oy as usize * g.ow + ox as usize] += v * kslice[ky * g.kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn tconv2d_backward_input<F: Scalar>(dy: &[F], kernel: &[F], g: &TConvGeom) -> Vec<F> {
    // d_x[n,ci,iy,ix] = sum_{co,ky,kx} dy[n,co,iy*s+ky-p, ix*s+kx-p] * k[ci,co,ky,kx]
    let mut dx = vec![F::zero(); g.n * g.ci * g.h * g.w];
    let hw = g.h * g.w;
    let ohw = g.oh * g.ow;
    let kk = g.kh * g.kw;
    for ni in 0..g.n {
        for ci in 0..g.ci {
            let dslice = &mut dx[(ni * g.ci + ci) * hw..(ni * g.ci + ci + 1) * hw];
            for co in 0..g.co {
                let kslice = &kernel[(ci * g.co + co) * kk..(ci * g.co + co + 1) * kk];
                let dys = &dy[(ni * g.co + co) * ohw..(ni * g.co + co + 1) * ohw];
                for iy in 0..g.h {
                    for ix in 0..g.w {
                        let mut acc = F::zero();
                        for ky in 0..g.kh {
                            let oy = (iy * g.stride + ky) as isize - g.padding as isize;
                            if oy < 0 || oy >= g.oh as isize {
                                continue;
                            }
                            for kx in 0..g.kw {
                                let ox = (ix * g.stride + kx) as isize - g.padding as isize;
                                if ox < 0 || ox >= g.ow as isize {
                                    continue;
                                }
                                acc += dys[oy as usize * g.ow + ox as usize] * kslice[ky * g.kw + kx];
                            }
                        }
                        dslice[iy * g.w + ix] += acc;
                    }
                }
            }
        }
    }
    dx
}

pub fn tconv2d_backward_kernel<F: Scalar>(dy: &[F], x: &[F], g: &TConvGeom) -> Vec<F> {
    let mut dk = vec![F::zero(); g.ci * g.co * g.kh * g.kw];
    let hw = g.h * g.w;
    let ohw = g.oh * g.ow;
    let kk = g.kh * g.kw;
    for ni in 0..g.n {
        for ci in 0..g.ci {
            let xin = &x[(ni * g.ci + ci) * hw..(ni * g.ci + ci + 1) * hw];
            for co in 0..g.co {
                let dys = &dy[(ni * g.co + co) * ohw..(ni * g.co + co + 1) * ohw];
                let kslice = &mut dk[(ci * g.co + co) * kk..(ci * g.co + co + 1) * kk];
                for iy in 0..g.h {
                    for ix in 0..g.w {
                        let v = xin[iy * g.w + ix];
                        if v == F::zero() {
                            continue;
                        }
                        for ky in 0..g.kh {
                            let oy = (iy * g.stride + ky) as isize - g.padding as isize;
                            if oy < 0 || oy >= g.oh as isize {
                                continue;
                            }
                            for kx in 0..g.kw {
                                let ox = (ix * g.stride + kx) as isize - g.padding as isize;
                                if ox < 0 || ox >= g.ow as isize {
                                    continue;
                                }
                                kslice[ky * g.kw + kx] += v * dys[oy as usize * g.ow + ox as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    dk
}

/// Returns (y, mean, var, inv_std). `var` is the biased batch variance; the
/// caller converts to the unbiased estimate for running statistics.
pub fn batchnorm_train_forward<F: Scalar>(
    x: &[F],
    gamma: &[F],
    beta: &[F],
    shape: &[usize],
    eps: F,
) -> (Vec<F>, Vec<F>, Vec<F>, Vec<F>) {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let hw = h * w;
    let count = F::from_f64((n * hw) as f64);
    let mut mean = vec![F::zero(); c];
    let mut var = vec![F::zero(); c];
    let mut inv_std = vec![F::zero(); c];
    let mut y = vec![F::zero(); x.len()];
    for ci in 0..c {
        let mut s = F::zero();
        for ni in 0..n {
            for v in &x[(ni * c + ci) * hw..(ni * c + ci + 1) * hw] {
                s += *v;
            }
        }
        let m = s / count;
        let mut sv = F::zero();
        for ni in 0..n {
            for v in &x[(ni * c + ci) * hw..(ni * c + ci + 1) * hw] {
                let d = *v - m;
                sv += d * d;
            }
        }
        let vr = sv / count;
        let istd = F::one() / (vr + eps).sqrt();
        mean[ci] = m;
        var[ci] = vr;
        inv_std[ci] = istd;
        let (gm, bt) = (gamma[ci], beta[ci]);
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            for j in 0..hw {
                y[base + j] = gm * (x[base + j] - m) * istd + bt;
            }
        }
    }
    (y, mean, var, inv_std)
}

pub fn batchnorm_train_backward<F: Scalar>(
    dy: &[F],
    x: &[F],
    gamma: &[F],
    mean: &[F],
    inv_std: &[F],
    shape: &[usize],
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let hw = h * w;
    let count = F::from_f64((n * hw) as f64);
    let mut dx = vec![F::zero(); x.len()];
    let mut dgamma = vec![F::zero(); c];
    let mut dbeta = vec![F::zero(); c];
    for ci in 0..c {
        let (m, istd, gm) = (mean[ci], inv_std[ci], gamma[ci]);
        let mut sum_dy = F::zero();
        let mut sum_dy_xhat = F::zero();
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            for j in 0..hw {
                let xhat = (x[base + j] - m) * istd;
                sum_dy += dy[base + j];
                sum_dy_xhat += dy[base + j] * xhat;
            }
        }
        dbeta[ci] = sum_dy;
        dgamma[ci] = sum_dy_xhat;
        let mean_dy = sum_dy / count;
        let mean_dy_xhat = sum_dy_xhat / count;
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            for j in 0..hw {
                let xhat = (x[base + j] - m) * istd;
                dx[base + j] = gm * istd * (dy[base + j] - mean_dy - xhat * mean_dy_xhat);
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn batchnorm_eval_forward<F: Scalar>(
    x: &[F],
    gamma: &[F],
    beta: &[F],
    mean: &[F],
    var: &[F],
    shape: &[usize],
    eps: F,
) -> Vec<F> {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let hw = h * w;
    let mut y = vec![F::zero(); x.len()];
    for ci in 0..c {
        let istd = F::one() / (var[ci] + eps).sqrt();
        let (m, gm, bt) = (mean[ci], gamma[ci], beta[ci]);
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            for j in 0..hw {
                y[base + j] = gm * (x[base + j] - m) * istd + bt;
            }
        }
    }
    y
}

pub fn batchnorm_eval_backward<F: Scalar>(
    dy: &[F],
    x: &[F],
    gamma: &[F],
    mean: &[F],
    var: &[F],
    shape: &[usize],
    eps: F,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let hw = h * w;
    let mut dx = vec![F::zero(); x.len()];
    let mut dgamma = vec![F::zero(); c];
    let mut dbeta = vec![F::zero(); c];
    for ci in 0..c {
        let istd = F::one() / (var[ci] + eps).sqrt();
        let (m, gm) = (mean[ci], gamma[ci]);
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            for j in 0..hw {
                let xhat = (x[base + j] - m) * istd;
                dx[base + j] = dy[base + j] * gm * istd;
                dgamma[ci] += dy[base + j] * xhat;
                dbeta[ci] += dy[base + j];
            }
        }
    }
    (dx, dgamma, dbeta)
}
