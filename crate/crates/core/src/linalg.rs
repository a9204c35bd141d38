//! Small dense kernels used on the per-round hot path.
//!
//! Rows are stored contiguously as `&[f64]`; the reductions use several
//! independent accumulators so they vectorize without relying on
//! floating-point reassociation.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 2];
    let chunks = a.len() / 2;
    for c in 0..chunks {
        let i = 2 * c;
        let d0 = a[i] - b[i];
        let d1 = a[i + 1] - b[i + 1];
        acc[0] += d0 * d0;
        acc[1] += d1 * d1;
    }
    let mut s = acc[0] + acc[1];
    if a.len() % 2 == 1 {
        let d = a[a.len() - 1] - b[b.len() - 1];
        s += d * d;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = A x` for a symmetric row-major `d x d` matrix, accumulated as a
/// sum of scaled rows (row j equals column j).
#[inline]
pub fn sym_matvec(a: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    debug_assert_eq!(a.len(), d * d);
    out.fill(0.0);
    for (j, &xj) in x.iter().enumerate() {
        axpy(xj, &a[j * d..(j + 1) * d], out);
    }
}

/// `0.5 * x^T A x` for symmetric row-major `A`, using `scratch` of length d.
pub fn half_quad_form(a: &[f64], x: &[f64], scratch: &mut [f64]) -> f64 {
    sym_matvec(a, x, scratch);
    0.5 * dot(x, scratch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_match_naive() {
        let a: Vec<f64> = (0..7).map(|i| i as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..7).map(|i| (i as f64).sin()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-14);
        let naive_d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        assert!((dist_sq(&a, &b) - naive_d).abs() < 1e-14);
    }

    #[test]
    fn sym_matvec_small() {
        // [[2, 1], [1, 3]] * [1, -1] = [1, -2]
        let a = [2.0, 1.0, 1.0, 3.0];
        let mut out = [0.0; 2];
        sym_matvec(&a, &[1.0, -1.0], &mut out);
        assert_eq!(out, [1.0, -2.0]);
        let mut s = [0.0; 2];
        assert_eq!(half_quad_form(&a, &[1.0, -1.0], &mut s), 1.5);
    }
}
