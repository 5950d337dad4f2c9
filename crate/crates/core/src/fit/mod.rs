//! Fitting scaling laws to trained-model observations.
//!
//! Fits minimize the sum of squared `log10` residuals over a box of
//! coefficients with a projected L-BFGS solver started from many points: one
//! closed-form least-squares warm start followed by a seeded Latin-hypercube
//! design over the box. The best local optimum wins; ties go to the earliest
//! start, so results are a pure function of the data and the seed.

mod linear;
pub mod optimizer;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::law::{LawCoefficients, LawForm, SaturationTransform};
use crate::math::{exp10, log10, sqrt};
use crate::{Error, Result};
use optimizer::{minimize_box, LbfgsOptions, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Technique {
    SBase,
    RLR,
    Hash,
    Dense,
}

impl Technique {
    pub fn name(self) -> &'static str {
        match self {
            Technique::SBase => "sbase",
            Technique::RLR => "rlr",
            Technique::Hash => "hash",
            Technique::Dense => "dense",
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Technique {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "").as_str() {
            "sbase" => Ok(Technique::SBase),
            "rlr" => Ok(Technique::RLR),
            "hash" => Ok(Technique::Hash),
            "dense" => Ok(Technique::Dense),
            other => Err(Error::Data(alloc::format!("unknown technique `{other}`"))),
        }
    }
}

/// One trained model: its routing setup and converged validation loss.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunRecord {
    pub technique: Technique,
    /// Dense parameter count.
    pub n: u64,
    pub e: u64,
    pub k: u64,
    pub r: f64,
    pub tokens_seen: u64,
    /// Validation loss in natural units (nats per token).
    pub loss: f64,
}

impl RunRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.loss > 0.0) || !self.loss.is_finite() {
            return Err(Error::Data(alloc::format!("loss must be positive and finite, got {}", self.loss)));
        }
        if self.n == 0 {
            return Err(Error::Data("N must be positive".into()));
        }
        if self.e == 0 || self.k == 0 || self.k > self.e {
            return Err(Error::Data(alloc::format!("need 1 <= K <= E, got K={}, E={}", self.k, self.e)));
        }
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(Error::Data(alloc::format!("R must be in (0, 1], got {}", self.r)));
        }
        if self.technique == Technique::Dense && self.e != 1 {
            return Err(Error::Data(alloc::format!("dense record with E = {}", self.e)));
        }
        Ok(())
    }
}

/// A point the law is fitted to: size variable, routing variable, loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub x1: f64,
    pub x2: f64,
    pub loss: f64,
}

impl From<&RunRecord> for Observation {
    fn from(r: &RunRecord) -> Self {
        Observation { x1: r.n as f64, x2: r.e as f64, loss: r.loss }
    }
}

/// Box constraints of the fit, in coefficient space.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitBounds {
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub c: (f64, f64),
    pub d: (f64, f64),
    pub e_start: (f64, f64),
    pub e_max: (f64, f64),
}

impl Default for FitBounds {
    fn default() -> Self {
        FitBounds {
            a: (-1.0, 0.0),
            b: (-1.0, 0.0),
            c: (0.0, 0.1),
            d: (0.0, 3.0),
            e_start: (1.0, 16.0),
            e_max: (32.0, 1e5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Number of starting points, warm start included.
    pub starts: usize,
    pub seed: u64,
    pub bounds: FitBounds,
    pub lbfgs: LbfgsOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { starts: 64, seed: 0, bounds: FitBounds::default(), lbfgs: LbfgsOptions::default() }
    }
}

impl FitOptions {
    pub fn with_seed(seed: u64) -> Self {
        FitOptions { seed, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitResult {
    pub coefficients: LawCoefficients,
    /// Root mean square of `residuals`.
    pub rmsle: f64,
    /// `predicted log10 L - observed log10 L`, in input order.
    pub residuals: Vec<f64>,
    /// Sum of squared residuals at the returned point.
    pub objective: f64,
    pub starts_tried: usize,
    pub converged: bool,
    pub seed: u64,
}

/// Sum-of-squares objective over internal parameters.
///
/// Layout: `[a, d]`, `[a, b, d]`, `[a, b, c, d]`, or
/// `[a, b, c, d, log10 e_start, log10 e_max]`.
struct LawObjective<'a> {
    form: LawForm,
    lx: &'a [f64],
    x2: &'a [f64],
    lx2: &'a [f64],
    y: &'a [f64],
}

fn to_coefficients(form: LawForm, p: &[f64]) -> LawCoefficients {
    match form {
        LawForm::Dense => LawCoefficients::dense(p[0], p[1]),
        LawForm::Separable => LawCoefficients::separable(p[0], p[1], p[2]),
        LawForm::Bilinear => LawCoefficients::bilinear(p[0], p[1], p[2], p[3]),
        LawForm::Saturated => LawCoefficients::saturated(p[0], p[1], p[2], p[3], exp10(p[4]), exp10(p[5])),
        LawForm::FlopParam => LawCoefficients::flop_param(p[0], p[1], p[2], p[3], exp10(p[4]), exp10(p[5])),
    }
}

fn from_coefficients(c: &LawCoefficients) -> Vec<f64> {
    match c.form {
        LawForm::Dense => alloc::vec![c.a, c.d],
        LawForm::Separable => alloc::vec![c.a, c.b, c.d],
        LawForm::Bilinear => alloc::vec![c.a, c.b, c.c, c.d],
        LawForm::Saturated | LawForm::FlopParam => alloc::vec![
            c.a,
            c.b,
            c.c,
            c.d,
            log10(c.e_start.unwrap_or(2.0)),
            log10(c.e_max.unwrap_or(512.0)),
        ],
    }
}

fn internal_bounds(form: LawForm, b: &FitBounds) -> (Vec<f64>, Vec<f64>) {
    let pairs: Vec<(f64, f64)> = match form {
        LawForm::Dense => alloc::vec![b.a, b.d],
        LawForm::Separable => alloc::vec![b.a, b.b, b.d],
        LawForm::Bilinear => alloc::vec![b.a, b.b, b.c, b.d],
        LawForm::Saturated | LawForm::FlopParam => alloc::vec![
            b.a,
            b.b,
            b.c,
            b.d,
            (log10(b.e_start.0), log10(b.e_start.1)),
            (log10(b.e_max.0), log10(b.e_max.1)),
        ],
    };
    pairs.into_iter().unzip()
}

impl Objective for LawObjective<'_> {
    fn dim(&self) -> usize {
        self.form.free_params()
    }

    fn value_grad(&self, p: &[f64], g: &mut [f64]) -> f64 {
        g.iter_mut().for_each(|v| *v = 0.0);
        let mut sum = 0.0;
        match self.form {
            LawForm::Dense => {
                for (&lx, &y) in self.lx.iter().zip(self.y) {
                    let r = p[0] * lx + p[1] - y;
                    sum += r * r;
                    g[0] += 2.0 * r * lx;
                    g[1] += 2.0 * r;
                }
            }
            LawForm::Separable => {
                for ((&lx, &ly), &y) in self.lx.iter().zip(self.lx2).zip(self.y) {
                    let r = p[0] * lx + p[1] * ly + p[2] - y;
                    sum += r * r;
                    g[0] += 2.0 * r * lx;
                    g[1] += 2.0 * r * ly;
                    g[2] += 2.0 * r;
                }
            }
            LawForm::Bilinear => {
                for ((&lx, &ly), &y) in self.lx.iter().zip(self.lx2).zip(self.y) {
                    let r = p[0] * lx + p[1] * ly + p[2] * lx * ly + p[3] - y;
                    sum += r * r;
                    g[0] += 2.0 * r * lx;
                    g[1] += 2.0 * r * ly;
                    g[2] += 2.0 * r * lx * ly;
                    g[3] += 2.0 * r;
                }
            }
            LawForm::Saturated | LawForm::FlopParam => {
                let e_min = self.form.e_min();
                let s = exp10(p[4]);
                let m = exp10(p[5]);
                let t = SaturationTransform { e_min, e_start: s, e_max: m };
                let k = 1.0 / (1.0 / s - 1.0 / m);
                for ((&lx, &x2), &y) in self.lx.iter().zip(self.x2).zip(self.y) {
                    let e_hat = t.apply_unchecked(x2);
                    let ly = log10(e_hat);
                    let r = p[0] * lx + p[1] * ly + p[2] * lx * ly + p[3] - y;
                    sum += r * r;
                    g[0] += 2.0 * r * lx;
                    g[1] += 2.0 * r * ly;
                    g[2] += 2.0 * r * lx * ly;
                    g[3] += 2.0 * r;
                    // d log10 Ê / d log10 s = s · (dÊ/ds) / Ê, likewise for m.
                    let u = x2 - e_min + k;
                    let ratio = e_hat * e_hat / (u * u);
                    let de_ds = ratio * k * k / (s * s);
                    let de_dm = -ratio * k * k / (m * m) + e_hat * e_hat / (m * m);
                    let dly = p[1] + p[2] * lx;
                    g[4] += 2.0 * r * dly * s * de_ds / e_hat;
                    g[5] += 2.0 * r * dly * m * de_dm / e_hat;
                }
            }
        }
        sum
    }
}

struct Prepared {
    lx: Vec<f64>,
    x2: Vec<f64>,
    lx2: Vec<f64>,
    y: Vec<f64>,
}

fn prepare(points: &[Observation], form: LawForm) -> Result<Prepared> {
    for (i, p) in points.iter().enumerate() {
        if !(p.loss > 0.0) || !p.loss.is_finite() {
            return Err(Error::Data(alloc::format!("observation {i}: loss must be positive, got {}", p.loss)));
        }
        if !(p.x1 > 0.0) || !p.x1.is_finite() {
            return Err(Error::Data(alloc::format!("observation {i}: size must be positive, got {}", p.x1)));
        }
        if form != LawForm::Dense && !(p.x2 >= form.e_min()) {
            return Err(Error::Data(alloc::format!(
                "observation {i}: routing variable {} below {}",
                p.x2,
                form.e_min()
            )));
        }
    }
    let needed = form.free_params() + 2;
    if points.len() < needed {
        return Err(Error::FitInfeasible(alloc::format!(
            "{} law needs at least {needed} observations, got {}",
            form,
            points.len()
        )));
    }
    let distinct = |f: fn(&Observation) -> f64| {
        let mut v: Vec<f64> = points.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    if distinct(|p| p.x1) < 2 {
        return Err(Error::FitInfeasible("need at least two distinct sizes".into()));
    }
    if form != LawForm::Dense && distinct(|p| p.x2) < 2 {
        return Err(Error::FitInfeasible("need at least two distinct routing values".into()));
    }
    Ok(Prepared {
        lx: points.iter().map(|p| log10(p.x1)).collect(),
        x2: points.iter().map(|p| p.x2).collect(),
        lx2: points.iter().map(|p| if p.x2 > 0.0 { log10(p.x2) } else { 0.0 }).collect(),
        y: points.iter().map(|p| log10(p.loss)).collect(),
    })
}

/// Closed-form least-squares start in the unsaturated version of `form`.
fn warm_start(form: LawForm, data: &Prepared, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let ones = alloc::vec![1.0; data.y.len()];
    let cross: Vec<f64> = data.lx.iter().zip(&data.lx2).map(|(a, b)| a * b).collect();
    let cols: Vec<Vec<f64>> = match form {
        LawForm::Dense => alloc::vec![data.lx.clone(), ones],
        LawForm::Separable => alloc::vec![data.lx.clone(), data.lx2.clone(), ones],
        _ => alloc::vec![data.lx.clone(), data.lx2.clone(), cross, ones],
    };
    let mut p = match linear::least_squares(&cols, &data.y) {
        Some(sol) => sol,
        None => lo.iter().zip(hi).take(cols.len()).map(|(l, h)| 0.5 * (l + h)).collect(),
    };
    if form.is_saturating() {
        p.push(log10(2.0));
        p.push(log10(512.0));
    }
    for ((v, &l), &h) in p.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(l, h);
    }
    p
}

/// Latin-hypercube design of `count` points over the box.
fn design(count: usize, lo: &[f64], hi: &[f64], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = lo.len();
    let mut points = alloc::vec![alloc::vec![0.0; dim]; count];
    for j in 0..dim {
        let mut strata: Vec<usize> = (0..count).collect();
        strata.shuffle(&mut rng);
        for (i, &s) in strata.iter().enumerate() {
            let u: f64 = rng.random();
            points[i][j] = lo[j] + (hi[j] - lo[j]) * (s as f64 + u) / count as f64;
        }
    }
    points
}

fn run_starts(form: LawForm, data: &Prepared, starts: &[Vec<f64>], lo: &[f64], hi: &[f64], opts: &FitOptions) -> (Vec<f64>, f64, bool) {
    let obj = LawObjective { form, lx: &data.lx, x2: &data.x2, lx2: &data.lx2, y: &data.y };
    let mut best: Option<optimizer::Minimum> = None;
    for x0 in starts {
        let m = minimize_box(&obj, x0, lo, hi, &opts.lbfgs);
        let better = match &best {
            None => m.value.is_finite(),
            Some(b) => m.value < b.value,
        };
        if better {
            best = Some(m);
        }
    }
    match best {
        Some(m) => (m.x, m.value, m.converged),
        None => (starts[0].clone(), f64::INFINITY, false),
    }
}

fn finish(form: LawForm, data: &Prepared, p: Vec<f64>, value: f64, converged: bool, starts: usize, seed: u64) -> Result<FitResult> {
    if !value.is_finite() {
        return Err(Error::Divergence("no start reached a finite objective".into()));
    }
    let coefficients = to_coefficients(form, &p);
    let residuals: Vec<f64> = (0..data.y.len())
        .map(|i| predict_internal(&coefficients, data.lx[i], data.x2[i]) - data.y[i])
        .collect();
    let objective: f64 = residuals.iter().map(|r| r * r).sum();
    let rmsle = sqrt(objective / residuals.len() as f64);
    Ok(FitResult { coefficients, rmsle, residuals, objective, starts_tried: starts, converged, seed })
}

fn predict_internal(c: &LawCoefficients, lx: f64, x2: f64) -> f64 {
    let ly = match c.form {
        LawForm::Dense => 0.0,
        LawForm::Separable | LawForm::Bilinear => log10(x2),
        LawForm::Saturated | LawForm::FlopParam => {
            let t = SaturationTransform {
                e_min: c.form.e_min(),
                e_start: c.e_start.unwrap_or(1.0),
                e_max: c.e_max.unwrap_or(f64::INFINITY),
            };
            log10(t.apply_unchecked(x2))
        }
    };
    crate::law::eval_logs(c, lx, ly)
}

/// Fits `form` to arbitrary `(x1, x2, loss)` observations.
///
/// Use this for the FLOP/parameter law, whose features come from
/// [`crate::arch::param_flop_model`].
pub fn fit_points(points: &[Observation], form: LawForm, opts: &FitOptions) -> Result<FitResult> {
    if opts.starts == 0 {
        return Err(Error::FitInfeasible("at least one start is required".into()));
    }
    let data = prepare(points, form)?;
    let (lo, hi) = internal_bounds(form, &opts.bounds);
    let mut starts = alloc::vec![warm_start(form, &data, &lo, &hi)];
    starts.extend(design(opts.starts - 1, &lo, &hi, opts.seed));
    let (p, value, converged) = run_starts(form, &data, &starts, &lo, &hi, opts);
    finish(form, &data, p, value, converged, starts.len(), opts.seed)
}

/// Refits from a single given start. Used to check that a returned optimum
/// is stationary.
pub fn refit_from(points: &[Observation], start: &LawCoefficients, opts: &FitOptions) -> Result<FitResult> {
    let form = start.form;
    let data = prepare(points, form)?;
    let (lo, hi) = internal_bounds(form, &opts.bounds);
    let starts = alloc::vec![from_coefficients(start)];
    let (p, value, converged) = run_starts(form, &data, &starts, &lo, &hi, opts);
    finish(form, &data, p, value, converged, 1, opts.seed)
}

/// Fits `form` in `(N, E)` to run records.
pub fn fit_law(records: &[RunRecord], form: LawForm, opts: &FitOptions) -> Result<FitResult> {
    if form == LawForm::FlopParam {
        return Err(Error::UnsupportedForm(
            "fit_law for the (F, B) law: map records through param_flop_model and call fit_points",
        ));
    }
    for r in records {
        r.validate()?;
    }
    let points: Vec<Observation> = records.iter().map(Observation::from).collect();
    fit_points(&points, form, opts)
}

/// Root mean square error between predicted `log10` losses and observed losses.
pub fn rmsle(predicted_log10: &[f64], observed_loss: &[f64]) -> Result<f64> {
    if predicted_log10.len() != observed_loss.len() {
        return Err(Error::Data(alloc::format!(
            "length mismatch: {} predictions vs {} observations",
            predicted_log10.len(),
            observed_loss.len()
        )));
    }
    if predicted_log10.is_empty() {
        return Err(Error::Data("no observations".into()));
    }
    let mut sum = 0.0;
    for (p, &o) in predicted_log10.iter().zip(observed_loss) {
        if !(o > 0.0) {
            return Err(Error::Data(alloc::format!("non-positive observation {o}")));
        }
        let r = p - log10(o);
        sum += r * r;
    }
    Ok(sqrt(sum / predicted_log10.len() as f64))
}

/// Held-out `log10` errors, one per observation, each from a fit on all the
/// other observations.
pub fn loo_errors(points: &[Observation], form: LawForm, opts: &FitOptions) -> Result<Vec<f64>> {
    if points.len() < form.free_params() + 3 {
        return Err(Error::FitInfeasible(alloc::format!(
            "leave-one-out for the {form} law needs at least {} observations",
            form.free_params() + 3
        )));
    }
    let mut errors = Vec::with_capacity(points.len());
    let mut rest: Vec<Observation> = Vec::with_capacity(points.len() - 1);
    for i in 0..points.len() {
        rest.clear();
        rest.extend(points.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, p)| *p));
        let fit = fit_points(&rest, form, opts)?;
        let held = &points[i];
        let pred = predict_internal(&fit.coefficients, log10(held.x1), held.x2);
        errors.push(pred - log10(held.loss));
    }
    Ok(errors)
}

/// Leave-one-out RMSLE over per-record folds.
pub fn loo_rmsle(records: &[RunRecord], form: LawForm, opts: &FitOptions) -> Result<f64> {
    for r in records {
        r.validate()?;
    }
    let points: Vec<Observation> = records.iter().map(Observation::from).collect();
    loo_rmsle_points(&points, form, opts)
}

pub fn loo_rmsle_points(points: &[Observation], form: LawForm, opts: &FitOptions) -> Result<f64> {
    let errors = loo_errors(points, form, opts)?;
    Ok(sqrt(errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SliceBy {
    /// One fit of `log L` against `log E` per model size.
    N,
    /// One fit of `log L` against `log N` per expert count.
    E,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SliceFit {
    /// The fixed value (N or E) of the slice.
    pub key: f64,
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
    pub rmsle: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SliceTable {
    pub slices: Vec<SliceFit>,
    pub skipped: Vec<(f64, String)>,
}

/// Per-slice power laws fitted by ordinary least squares in log-log space.
pub fn per_slice_fits(records: &[RunRecord], slice_by: SliceBy) -> Result<SliceTable> {
    for r in records {
        r.validate()?;
    }
    let key_of = |r: &RunRecord| match slice_by {
        SliceBy::N => r.n as f64,
        SliceBy::E => r.e as f64,
    };
    let var_of = |r: &RunRecord| match slice_by {
        SliceBy::N => r.e as f64,
        SliceBy::E => r.n as f64,
    };
    let mut keys: Vec<f64> = records.iter().map(key_of).collect();
    keys.sort_by(f64::total_cmp);
    keys.dedup();
    let mut table = SliceTable::default();
    for key in keys {
        let slice: Vec<&RunRecord> = records.iter().filter(|r| key_of(r) == key).collect();
        if slice.len() < 3 {
            table.skipped.push((key, alloc::format!("{} points, need at least 3", slice.len())));
            continue;
        }
        let xs: Vec<f64> = slice.iter().map(|r| log10(var_of(r))).collect();
        let ys: Vec<f64> = slice.iter().map(|r| log10(r.loss)).collect();
        let Some(sol) = linear::least_squares(&[xs.clone(), alloc::vec![1.0; xs.len()]], &ys) else {
            table.skipped.push((key, "all points share the same abscissa".into()));
            continue;
        };
        let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| {
            let r = sol[0] * x + sol[1] - y;
            r * r
        }).sum();
        table.slices.push(SliceFit {
            key,
            slope: sol[0],
            intercept: sol[1],
            points: xs.len(),
            rmsle: sqrt(sse / xs.len() as f64),
        });
    }
    Ok(table)
}
