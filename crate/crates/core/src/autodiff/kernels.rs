//! Raw forward/backward kernels on row-major slices. Shapes are validated by
//! the tape before these are called.

/// Geometry of one 2-D convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        self.height + 2 * self.padding + 1 - self.kernel
    }

    pub fn out_width(&self) -> usize {
        self.width + 2 * self.padding + 1 - self.kernel
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Output columns `x` whose tap at kernel column `kx` lands inside the
    /// input row.
    fn valid_x(&self, kx: usize) -> (usize, usize) {
        let lo = self.padding.saturating_sub(kx);
        let hi = (self.width + self.padding)
            .saturating_sub(kx)
            .min(self.out_width());
        (lo, hi.max(lo))
    }
}

/// Unfolds one C×H×W image into a (C·k·k)×(H'·W') matrix. Entries that
/// fall in the padding are not written, so `cols` must arrive zeroed.
pub(crate) fn im2col(input: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let (oh, ow, k, p) = (g.out_height(), g.out_width(), g.kernel, g.padding);
    let plane = oh * ow;
    for c in 0..g.channels {
        let src = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (x0, x1) = g.valid_x(kx);
                for y in 0..oh {
                    let iy = y + ky;
                    if iy < p || iy - p >= g.height {
                        continue;
                    }
                    let srow = &src[(iy - p) * g.width..(iy - p + 1) * g.width];
                    let drow = &mut dst[y * ow..(y + 1) * ow];
                    drow[x0..x1].copy_from_slice(&srow[x0 + kx - p..x1 + kx - p]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates a column matrix back into an image.
pub(crate) fn col2im_add(cols: &[f64], g: &ConvGeom, grad_input: &mut [f64]) {
    let (oh, ow, k, p) = (g.out_height(), g.out_width(), g.kernel, g.padding);
    let plane = oh * ow;
    for c in 0..g.channels {
        let dst = &mut grad_input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                let (x0, x1) = g.valid_x(kx);
                for y in 0..oh {
                    let iy = y + ky;
                    if iy < p || iy - p >= g.height {
                        continue;
                    }
                    let drow = &mut dst[(iy - p) * g.width..(iy - p + 1) * g.width];
                    let srow = &src[y * ow..(y + 1) * ow];
                    for (d, s) in drow[x0 + kx - p..x1 + kx - p].iter_mut().zip(&srow[x0..x1]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// `c = alpha·op(a)·op(b) + beta·c` for row-major matrices. `a` is m×k after
/// the optional transpose, `b` is k×n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the strides above describe exactly the m×k, k×n and m×n
    // row-major buffers whose lengths are asserted above.
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
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 2×2 max pooling of N·C planes; returns the flat input index of each max.
pub(crate) fn maxpool2(
    input: &[f64],
    planes: usize,
    height: usize,
    width: usize,
    out: &mut [f64],
) -> Vec<usize> {
    let (oh, ow) = (height / 2, width / 2);
    let mut argmax = vec![0usize; planes * oh * ow];
    for pl in 0..planes {
        let base = pl * height * width;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * width + 2 * x;
                for idx in [
                    base + 2 * y * width + 2 * x + 1,
                    base + (2 * y + 1) * width + 2 * x,
                    base + (2 * y + 1) * width + 2 * x + 1,
                ] {
                    // strict comparison keeps the first maximum in row-major order
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                let o = (pl * oh + y) * ow + x;
                out[o] = input[best];
                argmax[o] = best;
            }
        }
    }
    argmax
}

pub(crate) fn upsample2(input: &[f64], planes: usize, height: usize, width: usize) -> Vec<f64> {
    let ow = 2 * width;
    let mut out = vec![0.0; planes * 4 * height * width];
    for pl in 0..planes {
        let src = &input[pl * height * width..(pl + 1) * height * width];
        let dst = &mut out[pl * 4 * height * width..(pl + 1) * 4 * height * width];
        for y in 0..height {
            for x in 0..width {
                let v = src[y * width + x];
                let o = 2 * y * ow + 2 * x;
                dst[o] = v;
                dst[o + 1] = v;
                dst[o + ow] = v;
                dst[o + ow + 1] = v;
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward(
    grad_out: &[f64],
    planes: usize,
    height: usize,
    width: usize,
    grad_in: &mut [f64],
) {
    let ow = 2 * width;
    for pl in 0..planes {
        let src = &grad_out[pl * 4 * height * width..(pl + 1) * 4 * height * width];
        let dst = &mut grad_in[pl * height * width..(pl + 1) * height * width];
        for y in 0..height {
            for x in 0..width {
                let o = 2 * y * ow + 2 * x;
                dst[y * width + x] += src[o] + src[o + 1] + src[o + ow] + src[o + ow + 1];
            }
        }
    }
}

/// Iterates over the spatial block of channel `c` in every sample.
pub(crate) fn channel_blocks(
    n: usize,
    channels: usize,
    plane: usize,
    c: usize,
) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..n).map(move |s| {
        let start = (s * channels + c) * plane;
        start..start + plane
    })
}
