//! Flat-slice matrix kernels shared by the dense and convolution ops.
//!
//! Reduction order is fixed (8 accumulator lanes over `chunks_exact`, then a
//! fixed-order horizontal sum), so results are bitwise reproducible run to run.

use super::Scalar;

/// Dot product with 8 accumulator lanes. The lane layout is part of the
/// determinism contract; do not "simplify" to a plain fold.
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [F::zero(); 8];
    let mut ac = a.chunks_exact(8);
    let mut bc = b.chunks_exact(8);
    for (ca, cb) in (&mut ac).zip(&mut bc) {
        for l in 0..8 {
            lanes[l] = lanes[l] + ca[l] * cb[l];
        }
    }
    let mut tail = F::zero();
    for (x, y) in ac.remainder().iter().zip(bc.remainder()) {
        tail = tail + *x * *y;
    }
    let s01 = lanes[0] + lanes[1];
    let s23 = lanes[2] + lanes[3];
    let s45 = lanes[4] + lanes[5];
    let s67 = lanes[6] + lanes[7];
    ((s01 + s23) + (s45 + s67)) + tail
}

/// out[i] += alpha * x[i]
pub fn axpy<F: Scalar>(alpha: F, x: &[F], out: &mut [F]) {
    debug_assert_eq!(x.len(), out.len());
    for (o, v) in out.iter_mut().zip(x) {
        *o = *o + alpha * *v;
    }
}

/// C (m x n) = A (m x k) * B^T, with B given as (n x k).
pub fn matmul_nt<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            orow[j] = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
    out
}

/// C (m x n) = A (m x k) * B (k x n).
pub fn matmul_nn<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let alpha = a[i * k + p];
            if alpha != F::zero() {
                axpy(alpha, &b[p * n..(p + 1) * n], orow);
            }
        }
    }
    out
}

/// C (k x n) = A^T * B, with A given as (m x k) and B as (m x n).
pub fn matmul_tn<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut out = vec![F::zero(); k * n];
    for p in 0..m {
        let brow = &b[p * n..(p + 1) * n];
        for kk in 0..k {
            let alpha = a[p * k + kk];
            if alpha != F::zero() {
                axpy(alpha, brow, &mut out[kk * n..(kk + 1) * n]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn matmul_variants_agree_with_naive() {
        let m = 3;
        let k = 17; // exercises the chunk remainder
        let n = 5;
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive_matmul(&a, &b, m, k, n);

        let nn = matmul_nn(&a, &b, m, k, n);
        for (x, y) in nn.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // A * B == A * (B^T)^T; build b_t as (n x k)
        let mut b_t = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                b_t[j * k + p] = b[p * n + j];
            }
        }
        let nt = matmul_nt(&a, &b_t, m, k, n);
        for (x, y) in nt.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // (A^T)^T * B via matmul_tn with a_t as (k x m) swapped dims
        let mut a_t = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                a_t[p * m + i] = a[i * k + p];
            }
        }
        let tn = matmul_tn(&a_t, &b, k, m, n);
        let want_tn = naive_matmul(&a, &b, m, k, n); // same product: (a_t)^T = a
        assert_eq!(tn.len(), m * n);
        for (x, y) in tn.iter().zip(&want_tn) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
