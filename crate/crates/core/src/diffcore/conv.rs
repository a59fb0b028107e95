//! im2col convolution kernels.
//!
//! A transposed convolution is evaluated as the input-adjoint of the
//! convolution with the same kernel, so three kernels cover both layer
//! types: forward, backward-to-input and backward-to-weight. Reductions run
//! in a fixed order (single-threaded GEMM), which keeps results bit-identical
//! between runs.

/// Geometry of a plain convolution `[n, c_in, h, w] -> [n, c_out, oh, ow]`
/// with a square `k x k` kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Returns `None` when the padded input is smaller than the kernel.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        if stride == 0 || k == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        Some(ConvGeom {
            n,
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn col_cols(&self) -> usize {
        self.n * self.out_plane()
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let cols_n = g.col_cols();
    let plane = g.out_plane();
    let mut cols = vec![0.0; g.col_rows() * cols_n];
    for c in 0..g.c_in {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst_row = &mut cols[row * cols_n..(row + 1) * cols_n];
                for n in 0..g.n {
                    let src = &x[(n * g.c_in + c) * g.h * g.w..][..g.h * g.w];
                    let dst = &mut dst_row[n * plane..(n + 1) * plane];
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..][..g.w];
                        for ox in 0..g.ow {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[oy * g.ow + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let cols_n = g.col_cols();
    let plane = g.out_plane();
    let mut x = vec![0.0; g.n * g.c_in * g.h * g.w];
    for c in 0..g.c_in {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src_row = &cols[row * cols_n..(row + 1) * cols_n];
                for n in 0..g.n {
                    let dst = &mut x[(n * g.c_in + c) * g.h * g.w..][..g.h * g.w];
                    let src = &src_row[n * plane..(n + 1) * plane];
                    for oy in 0..g.oh {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * g.w..][..g.w];
                        for ox in 0..g.ow {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[ix as usize] += src[oy * g.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[n, c, p]` -> `[c, n * p]`
fn to_channel_major(y: &[f64], n: usize, c: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for ni in 0..n {
        for ci in 0..c {
            out[ci * n * p + ni * p..][..p].copy_from_slice(&y[(ni * c + ci) * p..][..p]);
        }
    }
    out
}

/// `[c, n * p]` -> `[n, c, p]`
fn from_channel_major(t: &[f64], n: usize, c: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; t.len()];
    for ni in 0..n {
        for ci in 0..c {
            out[(ni * c + ci) * p..][..p].copy_from_slice(&t[ci * n * p + ni * p..][..p]);
        }
    }
    out
}

/// `c[m x n] = a[m x k] * b[k x n]`, with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].fill(0.0);
        return;
    }
    // SAFETY: the caller supplies slices covering every strided index; the
    // asserts below check the extents that the strides address.
    assert!(a.len() >= m * k && b.len() >= k * n);
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

/// `y = conv(x, w) + b`; `w` is `[c_out, c_in, k, k]`.
pub fn conv_forward(x: &[f64], w: &[f64], b: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let cols = im2col(x, g);
    let rows = g.col_rows();
    let np = g.col_cols();
    let mut t = vec![0.0; g.c_out * np];
    gemm(
        g.c_out, rows, np, w, rows as isize, 1, &cols, np as isize, 1, &mut t,
    );
    if let Some(b) = b {
        for (o, chunk) in t.chunks_mut(np).enumerate() {
            chunk.iter_mut().for_each(|v| *v += b[o]);
        }
    }
    from_channel_major(&t, g.n, g.c_out, g.out_plane())
}

/// Gradient of `conv(x, w)` with respect to `x`, given the output gradient.
pub fn conv_backward_input(dy: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let rows = g.col_rows();
    let np = g.col_cols();
    let dyt = to_channel_major(dy, g.n, g.c_out, g.out_plane());
    let mut dcols = vec![0.0; rows * np];
    // w^T: [rows x c_out] read with swapped strides.
    gemm(
        rows, g.c_out, np, w, 1, rows as isize, &dyt, np as isize, 1, &mut dcols,
    );
    col2im(&dcols, g)
}

/// Gradient of `conv(x, w)` with respect to `w`, given the output gradient.
pub fn conv_backward_weight(x: &[f64], dy: &[f64], g: &ConvGeom) -> Vec<f64> {
    let rows = g.col_rows();
    let np = g.col_cols();
    let cols = im2col(x, g);
    let dyt = to_channel_major(dy, g.n, g.c_out, g.out_plane());
    let mut dw = vec![0.0; g.c_out * rows];
    // cols^T: [np x rows] read with swapped strides.
    gemm(
        g.c_out, np, rows, &dyt, np as isize, 1, &cols, 1, np as isize, &mut dw,
    );
    dw
}

/// Per-channel sum of an `[n, c, p]` gradient (bias gradient).
pub fn channel_sum(dy: &[f64], n: usize, c: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; c];
    for ni in 0..n {
        for (ci, o) in out.iter_mut().enumerate() {
            *o += dy[(ni * c + ci) * p..][..p].iter().sum::<f64>();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Direct six-fold loop; independent of im2col.
    fn naive_conv(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut y = vec![0.0; g.n * g.c_out * g.oh * g.ow];
        for n in 0..g.n {
            for o in 0..g.c_out {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let mut acc = 0.0;
                        for c in 0..g.c_in {
                            for ki in 0..g.k {
                                for kj in 0..g.k {
                                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                        continue;
                                    }
                                    acc += x[((n * g.c_in + c) * g.h + iy as usize) * g.w + ix as usize]
                                        * w[((o * g.c_in + c) * g.k + ki) * g.k + kj];
                                }
                            }
                        }
                        y[((n * g.c_out + o) * g.oh + oy) * g.ow + ox] = acc;
                    }
                }
            }
        }
        y
    }

    fn randv(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.normal()).collect()
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = Rng::new(5);
        for &(k, s, p, h) in &[(3, 1, 0, 5), (3, 2, 1, 9), (4, 2, 1, 8), (1, 1, 0, 3), (3, 2, 1, 6)] {
            let g = ConvGeom::new(2, 3, h, h, 4, k, s, p).unwrap();
            let x = randv(&mut rng, 2 * 3 * h * h);
            let w = randv(&mut rng, 4 * 3 * k * k);
            let fast = conv_forward(&x, &w, None, &g);
            let slow = naive_conv(&x, &w, &g);
            let err = fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "k={k} s={s} p={p}: {err}");
        }
    }

    #[test]
    fn backward_input_is_adjoint() {
        let mut rng = Rng::new(8);
        let g = ConvGeom::new(2, 2, 7, 7, 3, 3, 2, 1).unwrap();
        let x = randv(&mut rng, 2 * 2 * 49);
        let w = randv(&mut rng, 3 * 2 * 9);
        let dy = randv(&mut rng, 2 * 3 * g.oh * g.ow);
        let lhs: f64 = conv_forward(&x, &w, None, &g).iter().zip(&dy).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(conv_backward_input(&dy, &w, &g)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        let lhs_w: f64 = w.iter().zip(conv_backward_weight(&x, &dy, &g)).map(|(a, b)| a * b).sum();
        assert!((lhs - lhs_w).abs() < 1e-10);
    }

    #[test]
    fn geometry() {
        let g = ConvGeom::new(1, 1, 64, 64, 8, 3, 2, 1).unwrap();
        assert_eq!((g.oh, g.ow), (32, 32));
        assert!(ConvGeom::new(1, 1, 2, 2, 1, 5, 1, 0).is_none());
    }
}
