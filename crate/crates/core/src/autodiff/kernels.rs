//! Dense row-major matrix kernels.

/// `out[n, m] += a[n, k] * b[k, m]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(out.len(), n * m);
    // four rows at a time so each row of `b` is loaded once per block
    let blocks = n / 4;
    for blk in 0..blocks {
        let a4 = &a[4 * blk * k..4 * (blk + 1) * k];
        let (o0, rest) = out[4 * blk * m..4 * (blk + 1) * m].split_at_mut(m);
        let (o1, rest) = rest.split_at_mut(m);
        let (o2, o3) = rest.split_at_mut(m);
        for (p, brow) in b.chunks_exact(m).enumerate() {
            let (x0, x1, x2, x3) = (a4[p], a4[k + p], a4[2 * k + p], a4[3 * k + p]);
            let rows = o0.iter_mut().zip(o1.iter_mut()).zip(o2.iter_mut().zip(o3.iter_mut()));
            for (((y0, y1), (y2, y3)), &bv) in rows.zip(brow) {
                *y0 += x0 * bv;
                *y1 += x1 * bv;
                *y2 += x2 * bv;
                *y3 += x3 * bv;
            }
        }
    }
    for (arow, orow) in a[4 * blocks * k..].chunks_exact(k).zip(out[4 * blocks * m..].chunks_exact_mut(m)) {
        for (&aip, brow) in arow.iter().zip(b.chunks_exact(m)) {
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[k, m] += a[n, k]^T * g[n, m]`
pub(crate) fn matmul_tn_acc(a: &[f64], g: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(g.len(), n * m);
    debug_assert_eq!(out.len(), k * m);
    let blocks = n / 4;
    for blk in 0..blocks {
        let a4 = &a[4 * blk * k..4 * (blk + 1) * k];
        let g4 = &g[4 * blk * m..4 * (blk + 1) * m];
        let (g0, rest) = g4.split_at(m);
        let (g1, rest) = rest.split_at(m);
        let (g2, g3) = rest.split_at(m);
        for (p, orow) in out.chunks_exact_mut(m).enumerate() {
            let (x0, x1, x2, x3) = (a4[p], a4[k + p], a4[2 * k + p], a4[3 * k + p]);
            if x0 == 0.0 && x1 == 0.0 && x2 == 0.0 && x3 == 0.0 {
                continue;
            }
            let gs = g0.iter().zip(g1).zip(g2.iter().zip(g3));
            for (o, ((&v0, &v1), (&v2, &v3))) in orow.iter_mut().zip(gs) {
                *o += x0 * v0 + x1 * v1 + x2 * v2 + x3 * v3;
            }
        }
    }
    for (arow, grow) in a[4 * blocks * k..].chunks_exact(k).zip(g[4 * blocks * m..].chunks_exact(m)) {
        for (&aip, orow) in arow.iter().zip(out.chunks_exact_mut(m)) {
            if aip == 0.0 {
                continue;
            }
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += aip * gv;
            }
        }
    }
}

/// Transpose of a `[rows, cols]` matrix.
pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> alloc::vec::Vec<f64> {
    let mut t = alloc::vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn naive(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> vec::Vec<f64> {
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = (0..k).map(|p| a[i * k + p] * b[p * m + j]).sum();
            }
        }
        out
    }

    #[test]
    fn blocked_kernels_match_naive_products() {
        use rand::Rng as _;
        let mut rng = crate::rng_from_seed(1);
        for (n, k, m) in [(1, 1, 1), (4, 3, 5), (7, 2, 3), (9, 6, 1), (13, 5, 8)] {
            let a: vec::Vec<f64> = (0..n * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: vec::Vec<f64> = (0..k * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut out = vec![0.0; n * m];
            matmul_acc(&a, &b, &mut out, n, k, m);
            for (x, y) in out.iter().zip(naive(&a, &b, n, k, m)) {
                assert!((x - y).abs() < 1e-12);
            }
            let g: vec::Vec<f64> = (0..n * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut out = vec![0.0; k * m];
            matmul_tn_acc(&a, &g, &mut out, n, k, m);
            let at = transpose(&a, n, k);
            for (x, y) in out.iter().zip(naive(&at, &g, k, n, m)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn small_products() {
        // [1 2; 3 4] * [5 6; 7 8]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut out = vec![0.0; 4];
        matmul_acc(&a, &b, &mut out, 2, 2, 2);
        assert_eq!(out, vec![19.0, 22.0, 43.0, 50.0]);
        let mut out = vec![0.0; 4];
        matmul_tn_acc(&a, &b, &mut out, 2, 2, 2);
        // a^T b = [1 3; 2 4] * b
        assert_eq!(out, vec![26.0, 30.0, 38.0, 44.0]);
        assert_eq!(transpose(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 3), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }
}
