//! Entropy-regularized balanced assignment of tokens to experts.
//!
//! Solves `max <Π, L> - H(Π)` subject to rows summing to `1/T` and columns to
//! `1/E` by alternating ascent on the dual potentials `(f, g)`:
//!
//! ```text
//! f_i = -ln( (1/E) Σ_j exp(L_ij + g_j) )
//! g_j = -ln( (1/T) Σ_i exp(L_ij + f_i) )
//! Π   = exp(L + f ⊕ g) / (T·E)
//! ```
//!
//! Both updates are log-sum-exps with max subtraction. Iteration stops when
//! the L1 violation of both marginals is at most `e_tol`.

use alloc::vec;
use alloc::vec::Vec;

use super::RouterLogits;
use crate::math::{argmax, exp, ln, log_sum_exp};
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    pub e_tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions { e_tol: 1e-2, max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentPlan {
    /// `T × E` soft assignment; rows sum to `1/T`, columns to `1/E`.
    pub plan: Matrix,
    pub dual_f: Vec<f64>,
    pub dual_g: Vec<f64>,
    /// Completed `(f, g)` update pairs.
    pub iterations: usize,
    /// L1 marginal violation of the returned plan.
    pub constraint_violation: f64,
    pub converged: bool,
}

fn build_plan(l: &Matrix, f: &[f64], g: &[f64]) -> Matrix {
    let (t, e) = (l.rows(), l.cols());
    let norm = (t * e) as f64;
    let mut plan = Matrix::zeros(t, e);
    for (i, fi) in f.iter().enumerate() {
        for (j, gj) in g.iter().enumerate() {
            plan.set(i, j, exp(l.get(i, j) + fi + gj) / norm);
        }
    }
    plan
}

fn violation(plan: &Matrix) -> f64 {
    let (t, e) = (plan.rows() as f64, plan.cols() as f64);
    let cols: f64 = plan.col_sums().iter().map(|s| (s - 1.0 / e).abs()).sum();
    let rows: f64 = plan.row_sums().iter().map(|s| (s - 1.0 / t).abs()).sum();
    cols + rows
}

/// Runs Sinkhorn from zero potentials. A plan that misses the tolerance
/// within `max_iter` updates is returned with `converged = false`.
///
/// Works for any `T` and `E`, but balanced routing only makes sense with
/// `T >= E`.
pub fn sinkhorn_plan(logits: &RouterLogits, e_tol: f64, max_iter: usize) -> Result<AssignmentPlan> {
    if !(e_tol > 0.0) {
        return Err(Error::Domain(alloc::format!("e_tol must be positive, got {e_tol}")));
    }
    let l = logits.matrix();
    let (t, e) = (l.rows(), l.cols());
    let (ln_t, ln_e) = (ln(t as f64), ln(e as f64));
    let mut f = vec![0.0; t];
    let mut g = vec![0.0; e];
    let mut plan = build_plan(l, &f, &g);
    let mut err = violation(&plan);
    let mut iterations = 0;
    while err > e_tol && iterations < max_iter {
        for (i, fi) in f.iter_mut().enumerate() {
            let row = l.row(i);
            *fi = ln_e - log_sum_exp((0..e).map(|j| row[j] + g[j]));
        }
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = ln_t - log_sum_exp((0..t).map(|i| l.get(i, j) + f[i]));
        }
        iterations += 1;
        plan = build_plan(l, &f, &g);
        err = violation(&plan);
        if !err.is_finite() {
            return Err(Error::Divergence("Sinkhorn potentials became non-finite".into()));
        }
    }
    Ok(AssignmentPlan {
        plan,
        dual_f: f,
        dual_g: g,
        iterations,
        constraint_violation: err,
        converged: err <= e_tol,
    })
}

/// Hard assignment: for each token the expert with the largest plan entry,
/// ties toward the lower index.
pub fn greedy_project(plan: &AssignmentPlan) -> Vec<usize> {
    (0..plan.plan.rows()).map(|i| argmax(plan.plan.row(i))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_are_balanced_immediately() {
        let l = RouterLogits::new(Matrix::zeros(4, 2)).unwrap();
        let p = sinkhorn_plan(&l, 1e-6, 100).unwrap();
        assert!(p.converged);
        assert!(p.iterations <= 1);
        for v in p.plan.as_slice() {
            assert!((v - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn balance_overrides_preference() {
        let l = RouterLogits::from_rows(&[[10.0, 0.0]; 4]).unwrap();
        let p = sinkhorn_plan(&l, 1e-6, 1000).unwrap();
        assert!(p.converged);
        for s in p.plan.col_sums() {
            assert!((s - 0.5).abs() <= 1e-6);
        }
    }

    #[test]
    fn projection_ties_and_preferences() {
        let mut plan = sinkhorn_plan(&RouterLogits::new(Matrix::zeros(2, 2)).unwrap(), 1e-3, 10).unwrap();
        assert_eq!(greedy_project(&plan), [0, 0]);
        plan.plan = Matrix::from_rows(&[[0.9, 0.1], [0.2, 0.3]]).unwrap();
        assert_eq!(greedy_project(&plan), [0, 1]);
    }

    #[test]
    fn unconverged_is_flagged() {
        let l = RouterLogits::from_rows(&[[30.0, 0.0], [30.0, 0.0], [29.0, 0.0]]).unwrap();
        let p = sinkhorn_plan(&l, 1e-12, 1).unwrap();
        assert!(!p.converged);
        assert_eq!(p.iterations, 1);
    }

    #[test]
    fn rejects_bad_tolerance() {
        let l = RouterLogits::new(Matrix::zeros(2, 2)).unwrap();
        assert!(sinkhorn_plan(&l, 0.0, 10).is_err());
    }
}
