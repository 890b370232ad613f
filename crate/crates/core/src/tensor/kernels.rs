//! Forward and adjoint kernels on raw tensors, with no graph bookkeeping.
//!
//! Convolutions lower to im2col + SGEMM. Every routine here is single-threaded
//! and iterates in a fixed order, so results are bitwise reproducible.

use crate::error::{Error, Result};
use crate::tensor::{Padding, Shape, Tensor};

/// `c = a·b` (or `c += a·b` when `accumulate`), row-major, with optional
/// transposition of either operand. `a` is m×k, `b` is k×n after transposition.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// [`gemm`] with f64 operands and accumulation, rounded once into `c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_f64(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let a64: Vec<f64> = a[..m * k].iter().map(|&v| v as f64).collect();
    let b64: Vec<f64> = b[..k * n].iter().map(|&v| v as f64).collect();
    let mut c64 = vec![0.0f64; m * n];
    dgemm(m, k, n, &a64, a_t, &b64, b_t, &mut c64);
    for (dst, v) in c.iter_mut().zip(c64) {
        *dst = v as f32;
    }
}

/// `c = op(a) · op(b)` entirely in f64.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dgemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].fill(0.0);
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the bounds were checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of one sliding-window pass over a (C, H, W) image.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub reflect: bool,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    #[inline]
    fn source(&self, pos: isize, len: usize) -> Option<usize> {
        if pos >= 0 && (pos as usize) < len {
            Some(pos as usize)
        } else if self.reflect {
            let n = len as isize;
            let r = if pos < 0 { -pos } else { 2 * (n - 1) - pos };
            Some(r as usize)
        } else {
            None
        }
    }
}

/// Unfold one sample `src` (C·H·W) into `cols` ((C·kh·kw) × (out_h·out_w)).
pub(crate) fn im2col<T: Copy + Default>(src: &[T], g: &Window, cols: &mut [T]) {
    let p = g.cols();
    let plane = g.height * g.width;
    for c in 0..g.channels {
        let img = &src[c * plane..(c + 1) * plane];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    let Some(iy) = g.source(iy, g.height) else {
                        line.fill(T::default());
                        continue;
                    };
                    let img_row = &img[iy * g.width..(iy + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = match g.source(ix, g.width) {
                            Some(ix) => img_row[ix],
                            None => T::default(),
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `cols` back into `dst` (C·H·W).
pub(crate) fn col2im<T: Copy + std::ops::AddAssign>(cols: &[T], g: &Window, dst: &mut [T]) {
    let p = g.cols();
    let plane = g.height * g.width;
    for c in 0..g.channels {
        let img = &mut dst[c * plane..(c + 1) * plane];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let Some(iy) = g.source(iy, g.height) else {
                        continue;
                    };
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if let Some(ix) = g.source(ix, g.width) {
                            img[iy * g.width + ix] += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_window(
    input: Shape,
    kernel: Shape,
    stride: usize,
    padding: Padding,
) -> Result<Window> {
    const OP: &str = "conv2d";
    if stride == 0 {
        return Err(Error::invalid(OP, "stride must be at least 1"));
    }
    if kernel.channels != input.channels {
        return Err(Error::shape(
            OP,
            format!(
                "channel dimension: input has {} channels, kernel expects {}",
                input.channels, kernel.channels
            ),
        ));
    }
    let (pad, reflect) = match padding {
        Padding::Zero(p) => (p, false),
        Padding::Reflect(p) => (p, true),
    };
    if reflect && (pad >= input.height || pad >= input.width) {
        return Err(Error::invalid(
            OP,
            format!("reflect padding {pad} needs height and width > {pad}, got {input}"),
        ));
    }
    let ph = input.height + 2 * pad;
    let pw = input.width + 2 * pad;
    if kernel.height > ph {
        return Err(Error::shape(
            OP,
            format!("height dimension: kernel {} exceeds padded input {ph}", kernel.height),
        ));
    }
    if kernel.width > pw {
        return Err(Error::shape(
            OP,
            format!("width dimension: kernel {} exceeds padded input {pw}", kernel.width),
        ));
    }
    Ok(Window {
        channels: input.channels,
        height: input.height,
        width: input.width,
        kh: kernel.height,
        kw: kernel.width,
        stride,
        pad,
        reflect,
        out_h: (ph - kernel.height) / stride + 1,
        out_w: (pw - kernel.width) / stride + 1,
    })
}

/// Cross-correlation of `input` (N, C, H, W) with `kernel` (O, C, kh, kw).
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: Padding) -> Result<Tensor> {
    let g = conv2d_window(input.shape(), kernel.shape(), stride, padding)?;
    Ok(conv2d_forward(input, kernel, &g, false))
}

/// `precise` accumulates in f64 (slower; used by numeric gradient checks).
pub(crate) fn conv2d_forward(input: &Tensor, kernel: &Tensor, g: &Window, precise: bool) -> Tensor {
    let s = input.shape();
    let o = kernel.shape().batch;
    let out_shape = Shape::new(s.batch, o, g.out_h, g.out_w);
    let mut out = Tensor::zeros(out_shape);
    let (rows, p) = (g.rows(), g.cols());
    let mut cols = vec![0.0; rows * p];
    let in_per = s.channels * s.plane();
    let out_per = o * p;
    for n in 0..s.batch {
        im2col(&input.data()[n * in_per..(n + 1) * in_per], g, &mut cols);
        let dst = &mut out.data_mut()[n * out_per..(n + 1) * out_per];
        if precise {
            gemm_f64(o, rows, p, kernel.data(), false, &cols, false, dst);
        } else {
            gemm(o, rows, p, kernel.data(), false, &cols, false, dst, false);
        }
    }
    out
}

/// Gradients of [`conv2d`] with respect to input and kernel.
pub(crate) fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    g: &Window,
    grad_out: &Tensor,
    want_input: bool,
    want_kernel: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let s = input.shape();
    let o = kernel.shape().batch;
    let (rows, p) = (g.rows(), g.cols());
    let in_per = s.channels * s.plane();
    let out_per = o * p;
    let mut cols = vec![0.0; rows * p];
    let mut d_input = want_input.then(|| Tensor::zeros(s));
    let mut d_kernel = want_kernel.then(|| Tensor::zeros(kernel.shape()));
    for n in 0..s.batch {
        let dy = &grad_out.data()[n * out_per..(n + 1) * out_per];
        if let Some(dk) = d_kernel.as_mut() {
            im2col(&input.data()[n * in_per..(n + 1) * in_per], g, &mut cols);
            gemm(o, p, rows, dy, false, &cols, true, dk.data_mut(), true);
        }
        if let Some(dx) = d_input.as_mut() {
            gemm(rows, o, p, kernel.data(), true, dy, false, &mut cols, false);
            col2im(&cols, g, &mut dx.data_mut()[n * in_per..(n + 1) * in_per]);
        }
    }
    (d_input, d_kernel)
}

/// Window over the *output* of a transposed convolution: its sliding grid is
/// the transposed-conv input grid.
pub(crate) fn conv_transpose_window(input: Shape, kernel: Shape, stride: usize) -> Result<Window> {
    const OP: &str = "conv_transpose2d";
    if stride == 0 {
        return Err(Error::invalid(OP, "stride must be at least 1"));
    }
    if kernel.batch != input.channels {
        return Err(Error::shape(
            OP,
            format!(
                "channel dimension: input has {} channels, kernel expects {}",
                input.channels, kernel.batch
            ),
        ));
    }
    if input.height == 0 || input.width == 0 {
        return Err(Error::shape(OP, format!("empty spatial dims {input}")));
    }
    Ok(Window {
        channels: kernel.channels,
        height: (input.height - 1) * stride + kernel.height,
        width: (input.width - 1) * stride + kernel.width,
        kh: kernel.height,
        kw: kernel.width,
        stride,
        pad: 0,
        reflect: false,
        out_h: input.height,
        out_w: input.width,
    })
}

/// Transposed convolution of `input` (N, Ci, H, W) with `kernel` (Ci, Co, kh, kw).
/// Output is (N, Co, (H-1)·stride + kh, (W-1)·stride + kw).
pub fn conv_transpose2d(input: &Tensor, kernel: &Tensor, stride: usize) -> Result<Tensor> {
    let g = conv_transpose_window(input.shape(), kernel.shape(), stride)?;
    Ok(conv_transpose2d_forward(input, kernel, &g, false))
}

pub(crate) fn conv_transpose2d_forward(input: &Tensor, kernel: &Tensor, g: &Window, precise: bool) -> Tensor {
    let s = input.shape();
    let ci = s.channels;
    let out_shape = Shape::new(s.batch, g.channels, g.height, g.width);
    let mut out = Tensor::zeros(out_shape);
    let (rows, p) = (g.rows(), g.cols());
    let mut cols = vec![0.0; rows * p];
    let in_per = ci * p;
    let out_per = g.channels * g.height * g.width;
    for n in 0..s.batch {
        let x = &input.data()[n * in_per..(n + 1) * in_per];
        if precise {
            gemm_f64(rows, ci, p, kernel.data(), true, x, false, &mut cols);
        } else {
            gemm(rows, ci, p, kernel.data(), true, x, false, &mut cols, false);
        }
        col2im(&cols, g, &mut out.data_mut()[n * out_per..(n + 1) * out_per]);
    }
    out
}

pub(crate) fn conv_transpose2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    g: &Window,
    grad_out: &Tensor,
    want_input: bool,
    want_kernel: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let s = input.shape();
    let ci = s.channels;
    let (rows, p) = (g.rows(), g.cols());
    let in_per = ci * p;
    let out_per = g.channels * g.height * g.width;
    let mut cols = vec![0.0; rows * p];
    let mut d_input = want_input.then(|| Tensor::zeros(s));
    let mut d_kernel = want_kernel.then(|| Tensor::zeros(kernel.shape()));
    for n in 0..s.batch {
        im2col(&grad_out.data()[n * out_per..(n + 1) * out_per], g, &mut cols);
        if let Some(dx) = d_input.as_mut() {
            gemm(
                ci,
                rows,
                p,
                kernel.data(),
                false,
                &cols,
                false,
                &mut dx.data_mut()[n * in_per..(n + 1) * in_per],
                false,
            );
        }
        if let Some(dk) = d_kernel.as_mut() {
            let x = &input.data()[n * in_per..(n + 1) * in_per];
            gemm(ci, p, rows, x, false, &cols, true, dk.data_mut(), true);
        }
    }
    (d_input, d_kernel)
}

/// f64 reference of [`conv2d_forward`].
pub(crate) fn conv2d_f64(x: &[f64], batch: usize, k: &[f64], out_c: usize, g: &Window) -> Vec<f64> {
    let (rows, p) = (g.rows(), g.cols());
    let in_per = g.channels * g.height * g.width;
    let mut cols = vec![0.0; rows * p];
    let mut out = vec![0.0; batch * out_c * p];
    for n in 0..batch {
        im2col(&x[n * in_per..(n + 1) * in_per], g, &mut cols);
        dgemm(out_c, rows, p, k, false, &cols, false, &mut out[n * out_c * p..(n + 1) * out_c * p]);
    }
    out
}

/// f64 reference of [`conv_transpose2d_forward`].
pub(crate) fn conv_transpose2d_f64(x: &[f64], batch: usize, in_c: usize, k: &[f64], g: &Window) -> Vec<f64> {
    let (rows, p) = (g.rows(), g.cols());
    let out_per = g.channels * g.height * g.width;
    let mut cols = vec![0.0; rows * p];
    let mut out = vec![0.0; batch * out_per];
    for n in 0..batch {
        dgemm(rows, in_c, p, k, true, &x[n * in_c * p..(n + 1) * in_c * p], false, &mut cols);
        col2im(&cols, g, &mut out[n * out_per..(n + 1) * out_per]);
    }
    out
}

/// f64 reference of [`instance_norm_forward`].
pub(crate) fn instance_norm_f64(x: &[f64], channels: usize, plane: usize, scale: &[f64], shift: &[f64], eps: f32) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for (i, v) in x.chunks(plane).enumerate() {
        let c = i % channels;
        let mean = v.iter().sum::<f64>() / plane as f64;
        let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / plane as f64;
        let istd = 1.0 / (var + eps as f64).sqrt();
        out.extend(v.iter().map(|a| (a - mean) * istd * scale[c] + shift[c]));
    }
    out
}

/// Per-plane statistics saved by the instance-norm forward pass.
#[derive(Clone, Debug)]
pub(crate) struct NormStats {
    pub normalized: Vec<f32>,
    pub inv_std: Vec<f32>,
}

/// Instance normalization: each (n, c) plane is shifted to zero mean and
/// scaled to unit variance, then `scale[c]`, `shift[c]` are applied.
pub(crate) fn instance_norm_forward(
    input: &Tensor,
    scale: &[f32],
    shift: &[f32],
    eps: f32,
) -> (Tensor, NormStats) {
    let s = input.shape();
    let plane = s.plane();
    let mut out = Tensor::zeros(s);
    let mut normalized = vec![0.0f32; s.numel()];
    let mut inv_std = Vec::with_capacity(s.batch * s.channels);
    for (i, (x, (y, xh))) in input
        .data()
        .chunks(plane)
        .zip(out.data_mut().chunks_mut(plane).zip(normalized.chunks_mut(plane)))
        .enumerate()
    {
        let c = i % s.channels;
        let mean = x.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
        let var = x
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / plane as f64;
        let istd = 1.0 / (var + eps as f64).sqrt();
        for ((yv, xhv), &xv) in y.iter_mut().zip(xh.iter_mut()).zip(x) {
            let n = (xv as f64 - mean) * istd;
            *xhv = n as f32;
            *yv = (n * scale[c] as f64 + shift[c] as f64) as f32;
        }
        inv_std.push(istd as f32);
    }
    (
        out,
        NormStats {
            normalized,
            inv_std,
        },
    )
}

/// Returns (d_input, d_scale, d_shift).
pub(crate) fn instance_norm_backward(
    shape: Shape,
    scale: &[f32],
    stats: &NormStats,
    grad_out: &Tensor,
) -> (Tensor, Vec<f32>, Vec<f32>) {
    let plane = shape.plane();
    let m = plane as f64;
    let mut dx = Tensor::zeros(shape);
    let mut dscale = vec![0.0f64; shape.channels];
    let mut dshift = vec![0.0f64; shape.channels];
    for (i, ((dy, xh), dxp)) in grad_out
        .data()
        .chunks(plane)
        .zip(stats.normalized.chunks(plane))
        .zip(dx.data_mut().chunks_mut(plane))
        .enumerate()
    {
        let c = i % shape.channels;
        let g = scale[c] as f64;
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xh = 0.0f64;
        for (&d, &h) in dy.iter().zip(xh) {
            sum_dy += d as f64;
            sum_dy_xh += d as f64 * h as f64;
        }
        dscale[c] += sum_dy_xh;
        dshift[c] += sum_dy;
        // d xhat = dy * g; sums scale the same way.
        let k = g * stats.inv_std[i] as f64 / m;
        for ((o, &d), &h) in dxp.iter_mut().zip(dy).zip(xh) {
            *o = (k * (m * d as f64 - sum_dy - h as f64 * sum_dy_xh)) as f32;
        }
    }
    (
        dx,
        dscale.into_iter().map(|v| v as f32).collect(),
        dshift.into_iter().map(|v| v as f32).collect(),
    )
}

/// Source index of each destination row/column under nearest-neighbour resize.
pub(crate) fn nearest_index(src: usize, dst: usize) -> Vec<usize> {
    (0..dst).map(|i| i * src / dst).collect()
}

pub fn resize_nearest(input: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::invalid(
            "resize_nearest",
            format!("target dims must be >= 1, got {target_h}x{target_w}"),
        ));
    }
    let s = input.shape();
    let ys = nearest_index(s.height, target_h);
    let xs = nearest_index(s.width, target_w);
    let out_shape = Shape::new(s.batch, s.channels, target_h, target_w);
    Ok(Tensor::from_fn(out_shape, |n, c, y, x| input.at(n, c, ys[y], xs[x])))
}

/// Sum over the channel axis: (N, C, H, W) → (N, 1, H, W).
pub fn sum_channels(input: &Tensor) -> Tensor {
    let s = input.shape();
    let plane = s.plane();
    let mut out = Tensor::zeros(Shape::new(s.batch, 1, s.height, s.width));
    for n in 0..s.batch {
        let dst = &mut out.data_mut()[n * plane..(n + 1) * plane];
        for c in 0..s.channels {
            let start = s.index(n, c, 0, 0);
            for (d, &v) in dst.iter_mut().zip(&input.data()[start..start + plane]) {
                *d += v;
            }
        }
    }
    out
}
