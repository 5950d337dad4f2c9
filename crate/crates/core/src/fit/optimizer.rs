//! Projected limited-memory BFGS for box-constrained smooth minimization.
//!
//! Each iteration builds an L-BFGS direction on the coordinates that are not
//! pinned at a bound (a coordinate is pinned when it sits on a bound and the
//! gradient pushes outward), then runs a projected Armijo backtracking search.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

/// A smooth objective with an analytic gradient.
pub trait Objective {
    fn dim(&self) -> usize;
    /// Returns `f(x)` and writes `∇f(x)` into `grad`.
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the projected gradient's infinity norm drops below this.
    pub pg_tol: f64,
    /// Stop when `(f_k - f_{k+1}) / max(|f_k|, |f_{k+1}|, 1)` drops below this.
    pub f_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions { memory: 10, max_iter: 1000, pg_tol: 1e-10, f_tol: 1e-15 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(l, h);
    }
}

fn pinned(x: f64, g: f64, lo: f64, hi: f64) -> bool {
    (x <= lo && g > 0.0) || (x >= hi && g < 0.0)
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Two-loop recursion restricted to the free coordinates.
fn direction(grad: &[f64], free: &[bool], memory: &VecDeque<Pair>) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> {
        v.iter().zip(free).map(|(&x, &f)| if f { x } else { 0.0 }).collect()
    };
    let mut q = mask(grad);
    let mut alphas = Vec::with_capacity(memory.len());
    for p in memory.iter().rev() {
        let s = mask(&p.s);
        let y = mask(&p.y);
        let rho = {
            let sy = dot(&s, &y);
            if sy > 0.0 { 1.0 / sy } else { p.rho }
        };
        let alpha = rho * dot(&s, &q);
        for (qi, yi) in q.iter_mut().zip(&y) {
            *qi -= alpha * yi;
        }
        alphas.push((alpha, rho, s, y));
    }
    if let Some(last) = memory.back() {
        let y = mask(&last.y);
        let s = mask(&last.s);
        let yy = dot(&y, &y);
        let sy = dot(&s, &y);
        if yy > 0.0 && sy > 0.0 {
            let gamma = sy / yy;
            q.iter_mut().for_each(|v| *v *= gamma);
        }
    }
    for (alpha, rho, s, y) in alphas.into_iter().rev() {
        let beta = rho * dot(&y, &q);
        for (qi, si) in q.iter_mut().zip(&s) {
            *qi += (alpha - beta) * si;
        }
    }
    q.iter().zip(free).map(|(&v, &f)| if f { -v } else { 0.0 }).collect()
}

/// Minimizes `obj` over the box `[lo, hi]` starting from `x0`.
pub fn minimize_box<O: Objective>(obj: &O, x0: &[f64], lo: &[f64], hi: &[f64], opts: &LbfgsOptions) -> Minimum {
    let n = obj.dim();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut g = vec![0.0; n];
    let mut f = obj.value_grad(&x, &mut g);
    let mut memory: VecDeque<Pair> = VecDeque::with_capacity(opts.memory);
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    for iter in 0..opts.max_iter {
        if !f.is_finite() {
            return Minimum { x, value: f, iterations: iter, converged: false };
        }
        let free: Vec<bool> = (0..n).map(|i| !pinned(x[i], g[i], lo[i], hi[i])).collect();
        let pg_norm = (0..n)
            .filter(|&i| free[i])
            .map(|i| g[i].abs())
            .fold(0.0, f64::max);
        if pg_norm <= opts.pg_tol {
            return Minimum { x, value: f, iterations: iter, converged: true };
        }

        let mut d = direction(&g, &free, &memory);
        if dot(&d, &g) >= 0.0 {
            memory.clear();
            d = g.iter().zip(&free).map(|(&v, &fr)| if fr { -v } else { 0.0 }).collect();
        }
        // Without curvature information, start from a unit-length step.
        let mut step = if memory.is_empty() {
            let norm = crate::math::sqrt(dot(&d, &d));
            if norm > 1.0 { 1.0 / norm } else { 1.0 }
        } else {
            1.0
        };

        let mut accepted = false;
        let mut f_next = f;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            project(&mut x_new, lo, hi);
            let decrease: f64 = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum();
            if decrease >= 0.0 {
                break;
            }
            f_next = obj.value_grad(&x_new, &mut g_new);
            if f_next.is_finite() && f_next <= f + 1e-4 * decrease {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if memory.is_empty() {
                // No descent possible along the projected gradient.
                return Minimum { x, value: f, iterations: iter, converged: pg_norm <= 1e3 * opts.pg_tol };
            }
            memory.clear();
            continue;
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back(Pair { s, y, rho: 1.0 / sy });
        }

        let rel = (f - f_next) / f.abs().max(f_next.abs()).max(1.0);
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        f = f_next;
        if rel <= opts.f_tol {
            return Minimum { x, value: f, iterations: iter + 1, converged: true };
        }
    }
    Minimum { x, value: f, iterations: opts.max_iter, converged: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn dim(&self) -> usize {
            2
        }
        fn value_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        }
    }

    #[test]
    fn unconstrained_rosenbrock() {
        let m = minimize_box(&Rosenbrock, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &LbfgsOptions::default());
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn active_bound() {
        // Minimum of Rosenbrock on x <= 0.5 lies on the bound at (0.5, 0.25).
        let m = minimize_box(&Rosenbrock, &[-1.2, 1.0], &[-5.0, -5.0], &[0.5, 5.0], &LbfgsOptions::default());
        assert!((m.x[0] - 0.5).abs() < 1e-9);
        assert!((m.x[1] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn start_outside_box_is_projected() {
        let m = minimize_box(&Rosenbrock, &[9.0, 9.0], &[2.0, -5.0], &[3.0, 5.0], &LbfgsOptions::default());
        assert_eq!(m.x[0], 2.0);
        assert!((m.x[1] - 4.0).abs() < 1e-6);
    }
}
