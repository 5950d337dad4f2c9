use crate::{Error, Matrix, Result};

/// Load-balancing loss `E · Σ_e m_e · g_e / T`.
///
/// `m_e` is the mean router probability of expert `e` over the batch and
/// `g_e` the number of tokens whose hard choice is `e`. Pass the router's own
/// argmax choices, not assignments after rebalancing or dropping. The result
/// is 1 for uniform probabilities and choices, and `E` when everything goes
/// to one expert.
pub fn balancing_loss(router_probs: &Matrix, hard_choices: &[usize]) -> Result<f64> {
    let (t, e) = (router_probs.rows(), router_probs.cols());
    if t == 0 || e == 0 {
        return Err(Error::InvalidShape("empty router probabilities".into()));
    }
    if hard_choices.len() != t {
        return Err(Error::Data(alloc::format!("{} choices for {t} tokens", hard_choices.len())));
    }
    for (i, s) in router_probs.row_sums().iter().enumerate() {
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Data(alloc::format!("probabilities of token {i} sum to {s}")));
        }
    }
    let mut counts = alloc::vec![0usize; e];
    for &c in hard_choices {
        if c >= e {
            return Err(Error::Data(alloc::format!("choice {c} out of range for {e} experts")));
        }
        counts[c] += 1;
    }
    let tf = t as f64;
    let mean_probs = router_probs.col_sums();
    let dot: f64 = mean_probs.iter().zip(&counts).map(|(m, &g)| (m / tf) * (g as f64 / tf)).sum();
    Ok(e as f64 * dot)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_is_one() {
        let p = Matrix::filled(4, 4, 0.25);
        assert_eq!(balancing_loss(&p, &[0, 1, 2, 3]).unwrap(), 1.0);
    }

    #[test]
    fn collapsed_is_e() {
        let mut p = Matrix::zeros(3, 3);
        for t in 0..3 {
            p.set(t, 0, 1.0);
        }
        assert_eq!(balancing_loss(&p, &[0, 0, 0]).unwrap(), 3.0);
    }

    #[test]
    fn mixed_case() {
        // m = (0.75, 0.25), g = (2, 0): 2 · 0.75 · 1 = 1.5
        let p = Matrix::from_rows(&[[0.5, 0.5], [1.0, 0.0]]).unwrap();
        assert_eq!(balancing_loss(&p, &[0, 0]).unwrap(), 1.5);
    }

    #[test]
    fn rejects_unnormalized_rows() {
        let p = Matrix::from_rows(&[[0.5, 0.6]]).unwrap();
        assert!(matches!(balancing_loss(&p, &[0]), Err(Error::Data(_))));
        let q = Matrix::from_rows(&[[0.5, 0.5]]).unwrap();
        assert!(balancing_loss(&q, &[2]).is_err());
    }
}
