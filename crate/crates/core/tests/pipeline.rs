use routescale_core::fit::{fit_law, FitOptions, Technique};
use routescale_core::law::{effective_param_count, eval_law, n_cutoff, LawCoefficients, LawForm};
use routescale_core::routing::{balancing_loss, greedy_project, sinkhorn_plan, RouterLogits};
use routescale_core::synth::{grid_records, GRID_EXPERTS, GRID_SIZES};

fn truth() -> LawCoefficients {
    LawCoefficients::saturated(-0.082, -0.108, 0.009, 1.104, 1.847, 314.478)
}

#[test]
fn noiseless_grid_fit_gives_the_same_epc() {
    let records = grid_records(&truth(), Technique::SBase, &GRID_SIZES, &GRID_EXPERTS, 0.0, 0).unwrap();
    let fitted = fit_law(&records, LawForm::Saturated, &FitOptions::with_seed(1)).unwrap();
    assert!(fitted.rmsle < 1e-6, "rmsle {}", fitted.rmsle);
    for (n, e) in [(2e7, 8.0), (3e8, 64.0), (1e9, 256.0)] {
        let want = effective_param_count(&truth(), n, e).unwrap();
        let got = effective_param_count(&fitted.coefficients, n, e).unwrap();
        assert!((got / want - 1.0).abs() < 1e-3, "EPC({n:e}, {e}): {got:e} vs {want:e}");
    }
    let cut = n_cutoff(&fitted.coefficients).unwrap();
    assert!((cut.log10() - 12.0).abs() < 0.05, "cutoff {cut:e}");
}

#[test]
fn epc_matches_the_dense_size_with_equal_loss() {
    let c = truth();
    let n = 1.3e8;
    for e in [4.0, 32.0, 512.0] {
        let epc = effective_param_count(&c, n, e).unwrap();
        let routed = eval_law(&c, n, e).unwrap();
        let dense = eval_law(&c, epc, 1.0).unwrap();
        assert!((routed - dense).abs() < 1e-10, "E={e}: {routed} vs {dense}");
    }
}

#[test]
fn balanced_assignment_has_low_balancing_loss() {
    // Skewed logits: every token prefers expert 0 by a wide margin.
    let rows: Vec<Vec<f64>> = (0..32).map(|i| (0..4).map(|j| if j == 0 { 3.0 } else { 0.1 * ((i * j) % 5) as f64 }).collect()).collect();
    let logits = RouterLogits::from_rows(&rows).unwrap();
    let softmax_choice: Vec<usize> = vec![0; 32];
    let plan = sinkhorn_plan(&logits, 1e-8, 10_000).unwrap();
    let balanced = greedy_project(&plan);
    let probs = logits.probabilities();
    let skewed = balancing_loss(&probs, &softmax_choice).unwrap();
    let even = balancing_loss(&probs, &balanced).unwrap();
    assert!(even < skewed, "{even} vs {skewed}");
    let mut counts = [0usize; 4];
    for &c in &balanced {
        counts[c] += 1;
    }
    assert!(counts.iter().all(|&k| k >= 4), "{counts:?}");
}
