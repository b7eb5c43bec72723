//! Row-major GEMM wrappers over `matrixmultiply`.

fn dgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    (rsc, csc): (usize, usize),
    acc: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !acc {
            for i in 0..m {
                for j in 0..n {
                    c[i * rsc + j * csc] = 0.0;
                }
            }
        }
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserts above bound every index the kernel touches.
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
            if acc { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// `c (+)= a * b` with `a: m x k`, `b: k x n`.
pub fn mm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], acc: bool) {
    dgemm(m, k, n, a, (k, 1), b, (n, 1), c, (n, 1), acc);
}

/// `c (+)= a^T * b` with `a: k x m`, `b: k x n`.
pub fn mm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], acc: bool) {
    dgemm(m, k, n, a, (1, m), b, (n, 1), c, (n, 1), acc);
}

/// `c (+)= a * b^T` with `a: m x k`, `b: n x k`.
pub fn mm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], acc: bool) {
    dgemm(m, k, n, a, (k, 1), b, (1, k), c, (n, 1), acc);
}

/// General strided product, used on head slices of packed activations.
#[allow(clippy::too_many_arguments)]
pub fn mm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
    c: &mut [f64],
    sc: (usize, usize),
    acc: bool,
) {
    dgemm(m, k, n, a, sa, b, sb, c, sc, acc);
}
