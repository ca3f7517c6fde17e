/// `op(A) · op(B)` for row-major matrices, where `op` optionally transposes.
/// Returns the product and its `(rows, cols)`.
pub(crate) fn matmul(
    a: &[f64],
    a_shape: (usize, usize),
    ta: bool,
    b: &[f64],
    b_shape: (usize, usize),
    tb: bool,
) -> (Vec<f64>, usize, usize) {
    let (ar, ac) = a_shape;
    let (br, bc) = b_shape;
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let n = if tb { br } else { bc };
    // Transposition is a stride swap.
    let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return (c, m, n);
    }
    // SAFETY: the pointers come from slices whose lengths are ar*ac, br*bc and
    // m*n; the strides above address exactly those elements.
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
    (c, m, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn all_transpose_variants_match_naive() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect(); // 3x4
        let want = naive(&a, 2, 3, &b, 4);
        let at = transpose(&a, 2, 3);
        let bt = transpose(&b, 3, 4);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let (aa, ash) = if ta { (&at, (3, 2)) } else { (&a, (2, 3)) };
            let (bb, bsh) = if tb { (&bt, (4, 3)) } else { (&b, (3, 4)) };
            let (c, m, n) = matmul(aa, ash, ta, bb, bsh, tb);
            assert_eq!((m, n), (2, 4));
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
