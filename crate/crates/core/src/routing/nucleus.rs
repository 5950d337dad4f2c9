use alloc::vec::Vec;

use crate::{Error, Result};

/// Top-`p` truncation: keeps the smallest set of most likely experts whose
/// mass reaches `p`, renormalized, and zeroes the rest.
///
/// Equal probabilities are ordered by index, so the lower index is kept first.
pub fn nucleus_filter(probs: &[f64], p: f64) -> Result<Vec<f64>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain(alloc::format!("top-p must be in (0, 1], got {p}")));
    }
    let total: f64 = probs.iter().sum();
    if probs.is_empty() || (total - 1.0).abs() > 1e-6 || probs.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Data(alloc::format!("not a distribution (sum {total})")));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let mut kept = 0.0;
    let mut cut = order.len();
    for (rank, &i) in order.iter().enumerate() {
        kept += probs[i];
        if kept >= p - 1e-12 {
            cut = rank + 1;
            break;
        }
    }
    let mut out = alloc::vec![0.0; probs.len()];
    let mass: f64 = order[..cut].iter().map(|&i| probs[i]).sum();
    for &i in &order[..cut] {
        out[i] = probs[i] / mass;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_one_keeps_everything() {
        let d = [0.5, 0.3, 0.2];
        let out = nucleus_filter(&d, 1.0).unwrap();
        for (a, b) in out.iter().zip(d) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn truncates_and_renormalizes() {
        let out = nucleus_filter(&[0.5, 0.3, 0.2], 0.7).unwrap();
        assert!((out[0] - 0.625).abs() < 1e-12);
        assert!((out[1] - 0.375).abs() < 1e-12);
        assert_eq!(out[2], 0.0);
    }

    #[test]
    fn one_hot_is_fixed() {
        for p in [0.1, 0.5, 1.0] {
            assert_eq!(nucleus_filter(&[0.0, 1.0, 0.0], p).unwrap(), [0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn tie_keeps_lower_index() {
        assert_eq!(nucleus_filter(&[0.5, 0.5], 0.5).unwrap(), [1.0, 0.0]);
    }

    #[test]
    fn bad_arguments() {
        assert!(nucleus_filter(&[1.0], 0.0).is_err());
        assert!(nucleus_filter(&[1.0], 1.5).is_err());
        assert!(nucleus_filter(&[0.3, 0.3], 0.5).is_err());
    }

    #[test]
    fn refiltering_can_shrink_support() {
        // (0.6, 0.3, 0.1) at p = 0.65 keeps two experts, (2/3, 1/3); the first
        // of those alone already reaches 0.65, so a second pass keeps one.
        let once = nucleus_filter(&[0.6, 0.3, 0.1], 0.65).unwrap();
        let twice = nucleus_filter(&once, 0.65).unwrap();
        assert_eq!(once.iter().filter(|v| **v > 0.0).count(), 2);
        assert_eq!(twice, [1.0, 0.0, 0.0]);
    }
}
