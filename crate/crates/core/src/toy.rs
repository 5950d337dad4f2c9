//! A tabular router trained with REINFORCE on a fixed reward table.
//!
//! Each vocabulary entry owns one row of logits, and experts are frozen: the
//! reward for sending token `v` to expert `e` is `reward(v, e)`. Training
//! minimizes
//!
//! ```text
//! -w_p·mean(ln π(a|v)·A) + w_e·mean(π(a|v)·ln π(a|v)) + w_v·mean(huber(R - b_v))
//!     + w_b·balancing_loss
//! ```
//!
//! with Adam on analytic gradients. `A = R - b_v` for the baseline method and
//! `A = R` otherwise. The balancing loss counts the actions actually taken.
//! Baselines receive the gradient of the value term only; inside the policy
//! term they are constants.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math::{ln, sqrt};
use crate::routing::{balancing_loss, nucleus_filter, rl_losses, softmax, RlLossTerms, RlWeights};
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticTask {
    pub vocab: usize,
    pub experts: usize,
    /// `vocab × experts`, entries in `[0, 1]`.
    pub rewards: Matrix,
    /// Best expert for each token.
    pub optimal: Vec<usize>,
    pub seed: u64,
}

impl SyntheticTask {
    /// Expected reward of routing uniformly at random.
    pub fn mean_reward(&self) -> f64 {
        self.rewards.as_slice().iter().sum::<f64>() / (self.vocab * self.experts) as f64
    }
}

fn build_task(vocab: usize, experts: usize, seed: u64, best: impl Fn(usize) -> usize) -> Result<SyntheticTask> {
    if experts == 0 || vocab < experts {
        return Err(Error::Domain(alloc::format!("need 0 < E <= V, got V={vocab}, E={experts}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rewards = Matrix::zeros(vocab, experts);
    let optimal: Vec<usize> = (0..vocab).map(&best).collect();
    for (v, &best) in optimal.iter().enumerate() {
        for e in 0..experts {
            let r = if e == best { 1.0 } else { rng.random_range(0.0..0.5) };
            rewards.set(v, e, r);
        }
    }
    Ok(SyntheticTask { vocab, experts, rewards, optimal, seed })
}

/// Token `v` is best served by expert `v mod E` (reward 1); every other pair
/// draws its reward uniformly from `[0, 0.5)`.
pub fn make_task(vocab: usize, experts: usize, seed: u64) -> Result<SyntheticTask> {
    build_task(vocab, experts, seed, |v| v % experts)
}

/// Like [`make_task`] but expert 0 is best for every token.
pub fn make_dominant_task(vocab: usize, experts: usize, seed: u64) -> Result<SyntheticTask> {
    build_task(vocab, experts, seed, |_| 0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum RouterMethod {
    /// Always take the most probable expert.
    Greedy,
    /// Sample from the top-`p` truncated distribution.
    Nucleus(f64),
    /// Sample from the full distribution, learn a per-token baseline.
    Baseline,
}

impl RouterMethod {
    pub fn name(&self) -> &'static str {
        match self {
            RouterMethod::Greedy => "greedy",
            RouterMethod::Nucleus(_) => "nucleus",
            RouterMethod::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RouterPolicy {
    /// `vocab × experts` logits.
    pub weights: Matrix,
    pub method: RouterMethod,
    /// Per-token value estimate; only trained for [`RouterMethod::Baseline`].
    pub baseline: Vec<f64>,
}

impl RouterPolicy {
    pub fn uniform(vocab: usize, experts: usize, method: RouterMethod) -> Self {
        RouterPolicy { weights: Matrix::zeros(vocab, experts), method, baseline: alloc::vec![0.0; vocab] }
    }

    /// A policy whose greedy choice and almost all sampled mass is `choices[v]`.
    pub fn from_choices(choices: &[usize], experts: usize, method: RouterMethod) -> Self {
        let mut p = RouterPolicy::uniform(choices.len(), experts, method);
        for (v, &c) in choices.iter().enumerate() {
            p.weights.set(v, c, 50.0);
        }
        p
    }

    pub fn probabilities(&self, token: usize) -> Vec<f64> {
        softmax(self.weights.row(token))
    }

    /// Router probabilities for every token, one row each.
    pub fn probability_table(&self) -> Matrix {
        let mut m = self.weights.clone();
        for v in 0..m.rows() {
            let p = softmax(m.row(v));
            m.row_mut(v).copy_from_slice(&p);
        }
        m
    }

    /// Distribution over experts that acting with this policy induces.
    pub fn action_distribution(&self, token: usize) -> Result<Vec<f64>> {
        self.act_on(self.probabilities(token))
    }

    fn act_on(&self, p: Vec<f64>) -> Result<Vec<f64>> {
        match self.method {
            RouterMethod::Greedy => {
                let mut d = alloc::vec![0.0; p.len()];
                d[crate::math::argmax(&p)] = 1.0;
                Ok(d)
            }
            RouterMethod::Nucleus(top_p) => nucleus_filter(&p, top_p),
            RouterMethod::Baseline => Ok(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainHyper {
    /// Adam step size.
    pub lr: f64,
    pub steps: usize,
    /// Tokens per step. Each token's own action enters the load it is
    /// penalized for, which pushes every row toward uniform with strength
    /// about `balance_w·E/batch`; small batches let that swamp the policy term.
    pub batch: usize,
    pub entropy_w: f64,
    pub balance_w: f64,
    pub pg_w: f64,
    pub value_w: f64,
    /// Huber threshold for the value loss.
    pub delta: f64,
    pub seed: u64,
}

impl TrainHyper {
    pub fn for_method(method: RouterMethod) -> Self {
        let w = match method {
            RouterMethod::Baseline => RlWeights::BASELINE,
            RouterMethod::Greedy => RlWeights::GREEDY,
            RouterMethod::Nucleus(_) => RlWeights::NUCLEUS,
        };
        TrainHyper {
            lr: 0.05,
            steps: 5000,
            batch: 4096,
            entropy_w: w.entropy,
            balance_w: 1.0,
            pg_w: w.policy,
            value_w: w.value,
            delta: 1.0,
            seed: 0,
        }
    }

    fn rl_weights(&self) -> RlWeights {
        RlWeights { policy: self.pg_w, entropy: self.entropy_w, value: self.value_w }
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.lr, self.entropy_w, self.balance_w, self.pg_w, self.value_w, self.delta]
            .iter()
            .all(|x| x.is_finite());
        if !finite || !(self.lr > 0.0) || !(self.delta > 0.0) || self.batch == 0 {
            return Err(Error::Domain("invalid training hyperparameters".into()));
        }
        Ok(())
    }
}

/// One sampled batch of routing decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub tokens: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

/// Value of every loss term on a fixed batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeLoss {
    pub rl: RlLossTerms,
    pub balance: f64,
    pub total: f64,
}

/// Composite loss of `policy` on `batch`, actions held fixed.
pub fn composite_loss(policy: &RouterPolicy, batch: &Batch, hyper: &TrainHyper) -> Result<CompositeLoss> {
    let e = policy.weights.cols();
    let table = policy.probability_table();
    let mut probs = Matrix::zeros(batch.tokens.len(), e);
    let mut log_probs = Vec::with_capacity(batch.tokens.len());
    for (i, (&v, &a)) in batch.tokens.iter().zip(&batch.actions).enumerate() {
        let p = table.row(v);
        log_probs.push(ln(p[a]));
        probs.row_mut(i).copy_from_slice(p);
    }
    let baselines: Option<Vec<f64>> = (policy.method == RouterMethod::Baseline)
        .then(|| batch.tokens.iter().map(|&v| policy.baseline[v]).collect());
    let rl = rl_losses(&log_probs, &batch.rewards, baselines.as_deref(), hyper.rl_weights(), hyper.delta)?;
    let balance = balancing_loss(&probs, &batch.actions)?;
    Ok(CompositeLoss { rl, balance, total: rl.combined + hyper.balance_w * balance })
}

/// Gradient of [`composite_loss`] with respect to the logits and baselines.
pub fn composite_gradient(policy: &RouterPolicy, batch: &Batch, hyper: &TrainHyper) -> (Matrix, Vec<f64>) {
    let (vocab, e) = (policy.weights.rows(), policy.weights.cols());
    let n = batch.tokens.len();
    let nf = n as f64;
    let mut grad_w = Matrix::zeros(vocab, e);
    let mut grad_b = alloc::vec![0.0; vocab];
    let mut counts = alloc::vec![0.0; e];
    for &a in &batch.actions {
        counts[a] += 1.0;
    }
    let with_baseline = policy.method == RouterMethod::Baseline;
    let bal_scale = hyper.balance_w * e as f64 / (nf * nf);
    let table = policy.probability_table();
    for i in 0..n {
        let (v, a, r) = (batch.tokens[i], batch.actions[i], batch.rewards[i]);
        let p = table.row(v);
        let advantage = if with_baseline { r - policy.baseline[v] } else { r };
        // d ln π_a / dz_j = [j = a] - π_j, shared by the policy and entropy terms.
        let coef = (-hyper.pg_w * advantage + hyper.entropy_w * p[a] * (ln(p[a]) + 1.0)) / nf;
        let mixed: f64 = p.iter().zip(&counts).map(|(pi, c)| pi * c).sum();
        let row = grad_w.row_mut(v);
        for j in 0..e {
            let dlog = if j == a { 1.0 } else { 0.0 } - p[j];
            row[j] += coef * dlog + bal_scale * p[j] * (counts[j] - mixed);
        }
        if with_baseline {
            let clipped = advantage.clamp(-hyper.delta, hyper.delta);
            grad_b[v] += -hyper.value_w * clipped / nf;
        }
    }
    (grad_w, grad_b)
}

/// One learning-curve sample.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurvePoint {
    pub step: usize,
    pub mean_reward: f64,
    pub optimal_rate: f64,
    pub balance_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainOutcome {
    pub policy: RouterPolicy,
    pub curve: Vec<CurvePoint>,
}

fn sample(dist: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam { m: alloc::vec![0.0; n], v: alloc::vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - crate::math::powf(Self::B1, self.t as f64);
        let c2 = 1.0 - crate::math::powf(Self::B2, self.t as f64);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / (sqrt(self.v[i] / c2) + Self::EPS);
        }
    }
}

/// Trains a router from uniform logits; one curve point per step.
pub fn train_router(task: &SyntheticTask, method: RouterMethod, hyper: &TrainHyper) -> Result<TrainOutcome> {
    hyper.validate()?;
    let mut policy = RouterPolicy::uniform(task.vocab, task.experts, method);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut adam_w = Adam::new(task.vocab * task.experts);
    let mut adam_b = Adam::new(task.vocab);
    let mut curve = Vec::with_capacity(hyper.steps);
    for step in 0..hyper.steps {
        let mut batch = Batch {
            tokens: Vec::with_capacity(hyper.batch),
            actions: Vec::with_capacity(hyper.batch),
            rewards: Vec::with_capacity(hyper.batch),
        };
        let table = policy.probability_table();
        let acting = (0..task.vocab)
            .map(|v| policy.act_on(table.row(v).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        for _ in 0..hyper.batch {
            let v = rng.random_range(0..task.vocab);
            let a = sample(&acting[v], &mut rng);
            batch.tokens.push(v);
            batch.actions.push(a);
            batch.rewards.push(task.rewards.get(v, a));
        }
        let loss = composite_loss(&policy, &batch, hyper)?;
        let (gw, gb) = composite_gradient(&policy, &batch, hyper);
        let mut w = policy.weights.as_slice().to_vec();
        adam_w.step(&mut w, gw.as_slice(), hyper.lr);
        policy.weights = Matrix::from_vec(task.vocab, task.experts, w)?;
        if method == RouterMethod::Baseline {
            adam_b.step(&mut policy.baseline, &gb, hyper.lr);
        }
        if policy.weights.as_slice().iter().chain(&policy.baseline).any(|x| !x.is_finite()) {
            return Err(Error::Divergence(alloc::format!(
                "non-finite router parameters after step {step} (loss {:e})",
                loss.total
            )));
        }
        let nf = hyper.batch as f64;
        curve.push(CurvePoint {
            step,
            mean_reward: batch.rewards.iter().sum::<f64>() / nf,
            optimal_rate: batch.tokens.iter().zip(&batch.actions).filter(|(v, a)| task.optimal[**v] == **a).count() as f64 / nf,
            balance_loss: loss.balance,
        });
    }
    Ok(TrainOutcome { policy, curve })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PolicyEval {
    pub mean_reward: f64,
    pub optimal_rate: f64,
    /// Entropy in nats of the expected expert load; `ln E` when balanced.
    pub expert_load_entropy: f64,
}

/// Exact expectations under uniformly distributed tokens and the policy's
/// own action distribution.
pub fn eval_policy(task: &SyntheticTask, policy: &RouterPolicy) -> Result<PolicyEval> {
    if policy.weights.rows() != task.vocab || policy.weights.cols() != task.experts {
        return Err(Error::InvalidShape(alloc::format!(
            "policy is {}x{}, task is {}x{}",
            policy.weights.rows(),
            policy.weights.cols(),
            task.vocab,
            task.experts
        )));
    }
    let vf = task.vocab as f64;
    let mut reward = 0.0;
    let mut optimal = 0.0;
    let mut load = alloc::vec![0.0; task.experts];
    for v in 0..task.vocab {
        let d = policy.action_distribution(v)?;
        for (e, &pe) in d.iter().enumerate() {
            reward += pe * task.rewards.get(v, e);
            load[e] += pe / vf;
        }
        optimal += d[task.optimal[v]];
    }
    let entropy = -load.iter().filter(|&&l| l > 0.0).map(|&l| l * ln(l)).sum::<f64>();
    Ok(PolicyEval { mean_reward: reward / vf, optimal_rate: optimal / vf, expert_load_entropy: entropy })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_shape_and_determinism() {
        let t = make_task(256, 8, 3).unwrap();
        assert_eq!(t, make_task(256, 8, 3).unwrap());
        assert_ne!(t.rewards, make_task(256, 8, 4).unwrap().rewards);
        for v in 0..256 {
            assert_eq!(t.rewards.get(v, v % 8), 1.0);
            assert_eq!(t.optimal[v], v % 8);
            for e in (0..8).filter(|e| *e != v % 8) {
                assert!((0.0..0.5).contains(&t.rewards.get(v, e)));
            }
        }
        assert!(make_task(4, 8, 0).is_err());
    }

    #[test]
    fn square_task_is_identity_map() {
        let t = make_task(5, 5, 0).unwrap();
        assert_eq!(t.optimal, [0, 1, 2, 3, 4]);
    }

    #[test]
    fn eval_of_optimal_and_uniform_policies() {
        let t = make_task(256, 8, 1).unwrap();
        let best = RouterPolicy::from_choices(&t.optimal, 8, RouterMethod::Greedy);
        let ev = eval_policy(&t, &best).unwrap();
        assert_eq!(ev.mean_reward, 1.0);
        assert_eq!(ev.optimal_rate, 1.0);
        assert!((ev.expert_load_entropy - 8f64.ln()).abs() < 1e-12);

        let uniform = RouterPolicy::uniform(256, 8, RouterMethod::Baseline);
        let ev = eval_policy(&t, &uniform).unwrap();
        // Independent enumeration of the table average.
        let mut avg = 0.0;
        for v in 0..256 {
            for e in 0..8 {
                avg += t.rewards.get(v, e);
            }
        }
        avg /= 2048.0;
        assert!((ev.mean_reward - avg).abs() < 1e-12);
        assert!((ev.optimal_rate - 0.125).abs() < 1e-12);
    }

    #[test]
    fn single_expert_has_constant_reward() {
        let t = make_task(16, 1, 0).unwrap();
        let h = TrainHyper { steps: 20, ..TrainHyper::for_method(RouterMethod::Baseline) };
        let out = train_router(&t, RouterMethod::Baseline, &h).unwrap();
        assert!(out.curve.iter().all(|c| c.mean_reward == t.mean_reward()));
    }

    fn fd_instance(method: RouterMethod) -> (RouterPolicy, Batch, TrainHyper) {
        let mut policy = RouterPolicy::uniform(2, 2, method);
        policy.weights = Matrix::from_rows(&[[0.3, -0.4], [1.1, 0.2]]).unwrap();
        policy.baseline = alloc::vec![0.2, 0.9];
        let batch = Batch { tokens: alloc::vec![0, 1, 1, 0, 1], actions: alloc::vec![1, 0, 1, 0, 0], rewards: alloc::vec![0.3, 1.0, 0.1, 1.0, 0.7] };
        let hyper = TrainHyper { pg_w: 0.7, entropy_w: -0.3, value_w: 0.5, balance_w: 0.8, delta: 0.25, ..TrainHyper::for_method(method) };
        (policy, batch, hyper)
    }

    #[test]
    fn gradient_matches_central_differences() {
        for method in [RouterMethod::Baseline, RouterMethod::Greedy] {
            let (policy, batch, hyper) = fd_instance(method);
            let (gw, gb) = composite_gradient(&policy, &batch, &hyper);
            let h = 1e-6;
            for idx in 0..4 {
                let mut plus = policy.clone();
                let mut minus = policy.clone();
                let (r, c) = (idx / 2, idx % 2);
                plus.weights.set(r, c, policy.weights.get(r, c) + h);
                minus.weights.set(r, c, policy.weights.get(r, c) - h);
                let fd = (composite_loss(&plus, &batch, &hyper).unwrap().total
                    - composite_loss(&minus, &batch, &hyper).unwrap().total)
                    / (2.0 * h);
                assert!((fd - gw.get(r, c)).abs() < 1e-5, "{method:?} w[{r},{c}]: {fd} vs {}", gw.get(r, c));
            }
            if method == RouterMethod::Baseline {
                for (v, &g) in gb.iter().enumerate().take(2) {
                    let mut plus = policy.clone();
                    let mut minus = policy.clone();
                    plus.baseline[v] += h;
                    minus.baseline[v] -= h;
                    let value = |p: &RouterPolicy| hyper.value_w * composite_loss(p, &batch, &hyper).unwrap().rl.value;
                    let fd = (value(&plus) - value(&minus)) / (2.0 * h);
                    assert!((fd - g).abs() < 1e-5, "b[{v}]: {fd} vs {g}");
                }
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let t = make_task(32, 4, 0).unwrap();
        let h = TrainHyper { steps: 100, batch: 256, seed: 9, ..TrainHyper::for_method(RouterMethod::Nucleus(0.9)) };
        let a = train_router(&t, RouterMethod::Nucleus(0.9), &h).unwrap();
        assert_eq!(a, train_router(&t, RouterMethod::Nucleus(0.9), &h).unwrap());
    }

    #[test]
    fn baseline_method_learns_small_task() {
        let t = make_task(32, 4, 2).unwrap();
        let h = TrainHyper { steps: 2000, batch: 1024, ..TrainHyper::for_method(RouterMethod::Baseline) };
        let out = train_router(&t, RouterMethod::Baseline, &h).unwrap();
        let ev = eval_policy(&t, &out.policy).unwrap();
        assert!(ev.optimal_rate > 0.9, "{ev:?}");
    }

    #[test]
    fn balancing_keeps_load_spread() {
        let t = make_dominant_task(64, 4, 0).unwrap();
        let run = |balance_w: f64| {
            let h = TrainHyper { balance_w, steps: 1000, batch: 1024, ..TrainHyper::for_method(RouterMethod::Baseline) };
            let out = train_router(&t, RouterMethod::Baseline, &h).unwrap();
            eval_policy(&t, &out.policy).unwrap().expert_load_entropy
        };
        let free = run(0.0);
        let balanced = run(1.0);
        assert!(free < 0.1, "{free}");
        assert!(balanced > 0.5 * 4f64.ln(), "{balanced}");
    }

    #[test]
    fn divergence_is_reported() {
        let t = make_task(8, 2, 0).unwrap();
        let h = TrainHyper { lr: f64::MAX, steps: 50, ..TrainHyper::for_method(RouterMethod::Baseline) };
        assert!(matches!(train_router(&t, RouterMethod::Baseline, &h), Err(Error::Divergence(_))));
    }
}
