//! Raw numeric kernels on flat slices. These carry no shape bookkeeping;
//! the graph layer validates shapes before calling in.

/// `c = a · b` (or `c += a · b` when `accumulate`), where `a` is logically
/// `m×k` and `b` is `k×n`. A transposed flag means the operand is stored
/// row-major in its transposed shape.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
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
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: bounds checked above; the strides describe row-major buffers
    // of exactly the asserted sizes and `c` does not alias `a` or `b`.
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

/// Geometry of a 2-D convolution over NHWC input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_c: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.k_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.k_w) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.k_h * self.k_w * self.in_c
    }

    pub fn rows(&self) -> usize {
        self.batch * self.out_h() * self.out_w()
    }
}

/// Output spatial size of an unpadded/padded convolution, or `None` when the
/// kernel does not fit.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

/// Unfolds patches: one row per output position, columns ordered (kh, kw, c)
/// to match a `[kh, kw, in_c, out_c]` weight layout.
pub fn im2col(x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plen = g.patch_len();
    let mut cols = vec![0.0; g.rows() * plen];
    let pad = g.padding as isize;
    for n in 0..g.batch {
        let img = &x[n * g.in_h * g.in_w * g.in_c..(n + 1) * g.in_h * g.in_w * g.in_c];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &mut cols[((n * oh + oy) * ow + ox) * plen..][..plen];
                for ky in 0..g.k_h {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for kx in 0..g.k_w {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix < 0 || ix >= g.in_w as isize {
                            continue;
                        }
                        let src = (iy as usize * g.in_w + ix as usize) * g.in_c;
                        let dst = (ky * g.k_w + kx) * g.in_c;
                        row[dst..dst + g.in_c].copy_from_slice(&img[src..src + g.in_c]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients back onto the input.
pub fn col2im(cols: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plen = g.patch_len();
    let mut dx = vec![0.0; g.batch * g.in_h * g.in_w * g.in_c];
    let pad = g.padding as isize;
    for n in 0..g.batch {
        let img = &mut dx[n * g.in_h * g.in_w * g.in_c..(n + 1) * g.in_h * g.in_w * g.in_c];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &cols[((n * oh + oy) * ow + ox) * plen..][..plen];
                for ky in 0..g.k_h {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for kx in 0..g.k_w {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix < 0 || ix >= g.in_w as isize {
                            continue;
                        }
                        let dst = (iy as usize * g.in_w + ix as usize) * g.in_c;
                        let src = (ky * g.k_w + kx) * g.in_c;
                        for (d, s) in img[dst..dst + g.in_c].iter_mut().zip(&row[src..src + g.in_c]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Numerically stable softmax of one row, written into `out`.
pub fn softmax_row(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Euclidean projection of `z` onto the probability simplex.
///
/// Sort-based: with `z` sorted descending, the support size is the largest
/// `k` with `1 + k·z_(k) > Σ_{j≤k} z_(j)`, and the threshold is
/// `(Σ_{j≤k} z_(j) − 1) / k`.
pub fn sparsemax_row(z: &[f64], out: &mut [f64]) {
    let mut sorted = z.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut support = 0;
    let mut support_sum = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let k = (i + 1) as f64;
        if 1.0 + k * v > cumsum {
            support = i + 1;
            support_sum = cumsum;
        }
    }
    let tau = (support_sum - 1.0) / support as f64;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - tau).max(0.0);
    }
}

/// Vector-Jacobian product of sparsemax: over the support `S` of the forward
/// output, `dz_i = g_i − mean_{j∈S} g_j`; zero off the support.
pub fn sparsemax_row_backward(p: &[f64], g: &[f64], dz: &mut [f64]) {
    let mut count = 0usize;
    let mut total = 0.0;
    for (&pi, &gi) in p.iter().zip(g) {
        if pi > 0.0 {
            count += 1;
            total += gi;
        }
    }
    let mean = if count > 0 { total / count as f64 } else { 0.0 };
    for ((d, &pi), &gi) in dz.iter_mut().zip(p).zip(g) {
        *d = if pi > 0.0 { gi - mean } else { 0.0 };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3x2
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        // aᵀ stored as 3x2
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut c2 = [0.0; 4];
        gemm(2, 3, 2, &at, true, &b, false, &mut c2, false);
        assert_eq!(c, c2);
        gemm(2, 3, 2, &at, true, &b, false, &mut c2, true);
        assert_eq!(c2, [8.0, 10.0, 20.0, 22.0]);
    }

    #[test]
    fn conv_output_lengths() {
        assert_eq!(conv_out_len(160, 4, 2, 0), Some(79));
        assert_eq!(conv_out_len(3, 4, 1, 0), None);
        assert_eq!(conv_out_len(9, 3, 1, 1), Some(9));
    }

    #[test]
    fn sparsemax_known_values() {
        let mut out = [0.0; 3];
        sparsemax_row(&[10.0, 0.0, 0.0], &mut out);
        assert_eq!(out, [1.0, 0.0, 0.0]);
        sparsemax_row(&[2.0, 2.0, 2.0], &mut out);
        for v in out {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}
