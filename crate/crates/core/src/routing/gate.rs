use alloc::vec::Vec;

use crate::math::exp;
use crate::{Error, Matrix, Result};

/// Router output for a batch: `T` tokens by `E` experts.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterLogits(Matrix);

impl RouterLogits {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() == 0 || m.cols() == 0 {
            return Err(Error::InvalidShape("router logits need T >= 1 and E >= 1".into()));
        }
        if m.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("router logits must be finite".into()));
        }
        Ok(RouterLogits(m))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn tokens(&self) -> usize {
        self.0.rows()
    }

    pub fn experts(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    /// Row-wise softmax probabilities.
    pub fn probabilities(&self) -> Matrix {
        let mut out = Matrix::zeros(self.tokens(), self.experts());
        for t in 0..self.tokens() {
            out.row_mut(t).copy_from_slice(&softmax(self.0.row(t)));
        }
        out
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| exp(l - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

/// Top-`K` selection per token.
#[derive(Debug, Clone, PartialEq)]
pub struct GateOutput {
    pub top_k: usize,
    /// `T × K` expert indices, best first.
    pub selected: Vec<Vec<usize>>,
    /// `T × K` softmax probabilities of the selected experts.
    pub weights: Vec<Vec<f64>>,
}

/// Picks the `K` largest logits per token (ties toward the lower index) and
/// reuses their softmax probabilities as gate weights.
pub fn softmax_gate(logits: &RouterLogits, k: usize) -> Result<GateOutput> {
    let e = logits.experts();
    if k == 0 || k > e {
        return Err(Error::Domain(alloc::format!("need 1 <= K <= E, got K={k}, E={e}")));
    }
    let mut selected = Vec::with_capacity(logits.tokens());
    let mut weights = Vec::with_capacity(logits.tokens());
    for t in 0..logits.tokens() {
        let row = logits.matrix().row(t);
        let probs = softmax(row);
        let mut order: Vec<usize> = (0..e).collect();
        // Stable sort keeps lower indices first among equal logits.
        order.sort_by(|&i, &j| row[j].total_cmp(&row[i]));
        order.truncate(k);
        weights.push(order.iter().map(|&i| probs[i]).collect());
        selected.push(order);
    }
    Ok(GateOutput { top_k: k, selected, weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_goes_to_lower_index() {
        let l = RouterLogits::from_rows(&[[0.0, 0.0]]).unwrap();
        let g = softmax_gate(&l, 1).unwrap();
        assert_eq!(g.selected[0], [0]);
        assert_eq!(g.weights[0], [0.5]);
    }

    #[test]
    fn top_two_of_three() {
        let l = RouterLogits::from_rows(&[[2.0, 1.0, 0.0]]).unwrap();
        let g = softmax_gate(&l, 2).unwrap();
        assert_eq!(g.selected[0], [0, 1]);
        // e^2 / (e^2 + e + 1), e / (e^2 + e + 1)
        let z = 1f64.exp().powi(2) + 1f64.exp() + 1.0;
        assert!((g.weights[0][0] - 1f64.exp().powi(2) / z).abs() < 1e-12);
        assert!((g.weights[0][1] - 1f64.exp() / z).abs() < 1e-12);
        assert!((g.weights[0][0] - 0.665).abs() < 1e-3);
        assert!((g.weights[0][1] - 0.245).abs() < 1e-3);
    }

    #[test]
    fn all_experts_sum_to_one() {
        let l = RouterLogits::from_rows(&[[0.3, -1.0, 2.0, 0.1], [5.0, 5.0, -3.0, 0.0]]).unwrap();
        let g = softmax_gate(&l, 4).unwrap();
        for w in &g.weights {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let l = RouterLogits::from_rows(&[[0.0, 1.0]]).unwrap();
        assert!(matches!(softmax_gate(&l, 3), Err(Error::Domain(_))));
        assert!(RouterLogits::from_rows(&[[f64::NAN, 1.0]]).is_err());
    }
}
