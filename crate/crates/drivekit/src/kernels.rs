//! Hot numeric kernels: matrix products, im2col convolution, pooling.
//! Written so the inner loops stay branch-free and autovectorize.

use crate::scalar::Scalar;

/// Four simultaneous axpy passes over one output row; unrolling over the
/// reduction axis quarters the traffic on `c_row` and feeds the FMA units.
#[inline]
fn axpy4<S: Scalar>(c_row: &mut [S], a: [S; 4], b0: &[S], b1: &[S], b2: &[S], b3: &[S]) {
    let n = c_row.len();
    let (b0, b1, b2, b3) = (&b0[..n], &b1[..n], &b2[..n], &b3[..n]);
    for j in 0..n {
        c_row[j] += a[0] * b0[j] + a[1] * b1[j] + a[2] * b2[j] + a[3] * b3[j];
    }
}

#[inline]
fn axpy<S: Scalar>(c_row: &mut [S], a: S, b_row: &[S]) {
    for (cv, &bv) in c_row.iter_mut().zip(b_row.iter()) {
        *cv += a * bv;
    }
}

/// Dot product with eight independent accumulators so the reduction
/// vectorizes despite strict float semantics.
#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = [S::ZERO; 8];
    let mut ai = a.chunks_exact(8);
    let mut bi = b.chunks_exact(8);
    for (ca, cb) in (&mut ai).zip(&mut bi) {
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = S::ZERO;
    for (&av, &bv) in ai.remainder().iter().zip(bi.remainder().iter()) {
        tail += av * bv;
    }
    let s0 = (acc[0] + acc[4]) + (acc[2] + acc[6]);
    let s1 = (acc[1] + acc[5]) + (acc[3] + acc[7]);
    s0 + s1 + tail
}

/// C[m,n] = A[m,k] · B[k,n]
pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![S::ZERO; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        let mut p = 0;
        while p + 4 <= k {
            axpy4(
                c_row,
                [a_row[p], a_row[p + 1], a_row[p + 2], a_row[p + 3]],
                &b[p * n..],
                &b[(p + 1) * n..],
                &b[(p + 2) * n..],
                &b[(p + 3) * n..],
            );
            p += 4;
        }
        while p < k {
            axpy(c_row, a_row[p], &b[p * n..(p + 1) * n]);
            p += 1;
        }
    }
    c
}

/// C[m,n] = A[m,k] · B[n,k]ᵀ  (rows of B used as dot-product partners).
/// The reduction axis is chunked so row blocks of both operands stay cached
/// when k is large.
pub fn matmul_bt<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    const KC: usize = 1024;
    let mut c = vec![S::ZERO; m * n];
    let mut k0 = 0;
    while k0 < k {
        let kc = KC.min(k - k0);
        for i in 0..m {
            let a_seg = &a[i * k + k0..i * k + k0 + kc];
            let c_row = &mut c[i * n..(i + 1) * n];
            for (j, cv) in c_row.iter_mut().enumerate() {
                *cv += dot(a_seg, &b[j * k + k0..j * k + k0 + kc]);
            }
        }
        k0 += kc;
    }
    c
}

/// C[k,n] = A[m,k]ᵀ · B[m,n]
pub fn matmul_at_b<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut c = vec![S::ZERO; k * n];
    for p in 0..k {
        let c_row = &mut c[p * n..(p + 1) * n];
        let mut i = 0;
        while i + 4 <= m {
            axpy4(
                c_row,
                [
                    a[i * k + p],
                    a[(i + 1) * k + p],
                    a[(i + 2) * k + p],
                    a[(i + 3) * k + p],
                ],
                &b[i * n..],
                &b[(i + 1) * n..],
                &b[(i + 2) * n..],
                &b[(i + 3) * n..],
            );
            i += 4;
        }
        while i < m {
            axpy(c_row, a[i * k + p], &b[i * n..(i + 1) * n]);
            i += 1;
        }
    }
    c
}

/// Output spatial size of a convolution/pool along one axis.
pub fn conv_out_dim(input: usize, ksize: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - ksize) / stride + 1
}

/// Lower a [c,h,w] input into the [c*k*k, oh*ow] patch matrix used by the
/// GEMM formulation of convolution. Out-of-bounds taps read as zero.
pub fn im2col<S: Scalar>(
    input: &[S],
    c: usize,
    h: usize,
    w: usize,
    ksize: usize,
    stride: usize,
    pad: usize,
) -> Vec<S> {
    let oh = conv_out_dim(h, ksize, stride, pad);
    let ow = conv_out_dim(w, ksize, stride, pad);
    let cols_w = oh * ow;
    let mut cols = vec![S::ZERO; c * ksize * ksize * cols_w];
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ki in 0..ksize {
            for kj in 0..ksize {
                let row_idx = (ci * ksize + ki) * ksize + kj;
                let out_row = &mut cols[row_idx * cols_w..(row_idx + 1) * cols_w];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut out_row[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add the column matrix back into input layout; adjoint of `im2col`.
pub fn col2im_accumulate<S: Scalar>(
    cols: &[S],
    c: usize,
    h: usize,
    w: usize,
    ksize: usize,
    stride: usize,
    pad: usize,
    out: &mut [S],
) {
    let oh = conv_out_dim(h, ksize, stride, pad);
    let ow = conv_out_dim(w, ksize, stride, pad);
    let cols_w = oh * ow;
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ki in 0..ksize {
            for kj in 0..ksize {
                let row_idx = (ci * ksize + ki) * ksize + kj;
                let col_row = &cols[row_idx * cols_w..(row_idx + 1) * cols_w];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &col_row[oy * ow..(oy + 1) * ow];
                    for (ox, &s) in src.iter().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

/// Max pooling over [c,h,w]; returns (values, argmax as flat input indices).
pub fn maxpool2d<S: Scalar>(
    input: &[S],
    c: usize,
    h: usize,
    w: usize,
    ksize: usize,
    stride: usize,
    pad: usize,
) -> (Vec<S>, Vec<u32>) {
    let oh = conv_out_dim(h, ksize, stride, pad);
    let ow = conv_out_dim(w, ksize, stride, pad);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = None::<(S, usize)>;
                for ki in 0..ksize {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kj in 0..ksize {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = iy as usize * w + ix as usize;
                        let v = plane[idx];
                        match best {
                            Some((bv, _)) if bv >= v => {}
                            _ => best = Some((v, idx)),
                        }
                    }
                }
                let (v, idx) = best.expect("pool window entirely out of bounds");
                out.push(v);
                arg.push((ci * h * w + idx) as u32);
            }
        }
    }
    (out, arg)
}
