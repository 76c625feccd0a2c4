//! Small fixed-order matrix kernels.
//!
//! Accumulation order over the inner dimension is identical for every
//! output element and never depends on blocking, threading or the target
//! CPU, so results are bitwise reproducible across platforms. The j-loops
//! are written so LLVM can vectorize them without reassociating sums.

use crate::scalar::Scalar;

const KB: usize = 64;

/// C[m,n] += A[m,k] * B[k,n], all row-major.
pub fn gemm_acc<S: Scalar>(c: &mut [S], a: &[S], b: &[S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut k0 = 0;
    while k0 < k {
        let kend = (k0 + KB).min(k);
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut c[i * n..(i + 1) * n];
            for kk in k0..kend {
                let aik = arow[kk];
                let brow = &b[kk * n..kk * n + n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += aik * bv;
                }
            }
        }
        k0 = kend;
    }
}

/// C[m,n] += A[m,k] * B[n,k]^T, all row-major.
pub fn gemm_acc_nt<S: Scalar>(c: &mut [S], a: &[S], b: &[S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = S::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            crow[j] += acc;
        }
    }
}

/// Row-major transpose: out[j,i] = a[i,j] for a of shape [m,n].
pub fn transpose<S: Scalar>(a: &[S], m: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let m = 7;
        let k = 130; // crosses the k-block boundary
        let n = 9;
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 37 % 23) as f64) - 11.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 17 % 19) as f64) * 0.5 - 4.0).collect();
        let mut c = vec![0.0; m * n];
        gemm_acc(&mut c, &a, &b, m, k, n);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|kk| a[i * k + kk] * b[kk * n + j]).sum();
                assert!((c[i * n + j] - want).abs() < 1e-9);
            }
        }
        // NT variant against the same reference.
        let bt = transpose(&b, k, n);
        let mut c2 = vec![0.0; m * n];
        gemm_acc_nt(&mut c2, &a, &bt, m, k, n);
        for (x, y) in c.iter().zip(&c2) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
