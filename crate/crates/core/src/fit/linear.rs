//! Ordinary least squares through Householder QR.

use alloc::vec::Vec;

use crate::math::sqrt;

/// Solves `min ||A x - y||²` for a column-major design `cols` (each inner
/// vector is one column). Returns `None` when the design is rank deficient.
pub(crate) fn least_squares(cols: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let m = y.len();
    let n = cols.len();
    if n == 0 || m < n || cols.iter().any(|c| c.len() != m) {
        return None;
    }
    let mut a: Vec<Vec<f64>> = cols.to_vec();
    let mut b = y.to_vec();
    let scale: f64 = a.iter().flatten().fold(0.0, |s, v| s.max(v.abs()));
    for k in 0..n {
        let norm = sqrt(a[k][k..].iter().map(|v| v * v).sum());
        if norm <= 1e-12 * scale.max(1.0) {
            return None;
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv == 0.0 {
            continue;
        }
        for col in a.iter_mut().skip(k) {
            let proj: f64 = v.iter().zip(&col[k..]).map(|(p, q)| p * q).sum::<f64>() * 2.0 / vv;
            for (c, vi) in col[k..].iter_mut().zip(&v) {
                *c -= proj * vi;
            }
        }
        let proj: f64 = v.iter().zip(&b[k..]).map(|(p, q)| p * q).sum::<f64>() * 2.0 / vv;
        for (c, vi) in b[k..].iter_mut().zip(&v) {
            *c -= proj * vi;
        }
    }
    let mut x = alloc::vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s -= a[j][k] * x[j];
        }
        x[k] = s / a[k][k];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn recovers_exact_line() {
        let xs: Vec<f64> = (0..10).map(|i| 7.0 + 0.2 * i as f64).collect();
        let y: Vec<f64> = xs.iter().map(|x| -0.078 * x + 1.0571).collect();
        let sol = least_squares(&[xs, vec![1.0; 10]], &y).unwrap();
        assert!((sol[0] + 0.078).abs() < 1e-13);
        assert!((sol[1] - 1.0571).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_is_none() {
        let c = vec![1.0; 5];
        assert!(least_squares(&[c.clone(), c], &[1.0; 5]).is_none());
    }
}
