//! Scaling-law families for routed language models.
//!
//! Every law predicts `log10 L` from a size variable `x1` (dense parameter
//! count `N`, or inference TeraFLOPs `F`) and a routing variable `x2` (expert
//! count `E`, or parameter utilization ratio `B`):
//!
//! ```text
//! log10 L = a·log10 x1 + b·log10 x̂2 + c·log10 x1·log10 x̂2 + d
//! ```
//!
//! Coefficients keep the fitted sign convention: `a, b <= 0`, `c >= 0`,
//! `d > 0`. `x̂2` is `x2` for the separable and bilinear forms and the
//! saturating transform `Ê(x2)` for the saturated and FLOP/parameter forms.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::math::{exp10, log10};
use crate::{Error, Result};

/// Lower end of the saturating transform for `(N, E)` laws.
pub const E_MIN_EXPERTS: f64 = 1.0;
/// Lower end of the saturating transform for `(F, B)` laws: a dense model has
/// `P / F = N / 2N`.
pub const E_MIN_UTILIZATION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LawForm {
    /// `a·log N + d`; ignores the routing variable.
    Dense,
    /// `a·log N + b·log E + d`.
    Separable,
    /// `a·log N + b·log E + c·log N·log E + d`.
    Bilinear,
    /// Bilinear in `(log N, log Ê)`.
    Saturated,
    /// Bilinear in `(log F, log B̂)` with `E_min = 1/2`.
    FlopParam,
}

impl LawForm {
    pub const ALL: [LawForm; 5] = [
        LawForm::Dense,
        LawForm::Separable,
        LawForm::Bilinear,
        LawForm::Saturated,
        LawForm::FlopParam,
    ];

    /// Number of coefficients a fit of this form estimates.
    pub fn free_params(self) -> usize {
        match self {
            LawForm::Dense => 2,
            LawForm::Separable => 3,
            LawForm::Bilinear => 4,
            LawForm::Saturated | LawForm::FlopParam => 6,
        }
    }

    pub fn is_saturating(self) -> bool {
        matches!(self, LawForm::Saturated | LawForm::FlopParam)
    }

    /// Lower end of the routing variable's domain.
    pub fn e_min(self) -> f64 {
        match self {
            LawForm::FlopParam => E_MIN_UTILIZATION,
            _ => E_MIN_EXPERTS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LawForm::Dense => "dense",
            LawForm::Separable => "separable",
            LawForm::Bilinear => "bilinear",
            LawForm::Saturated => "saturated",
            LawForm::FlopParam => "fb",
        }
    }
}

impl fmt::Display for LawForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LawForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dense" => Ok(LawForm::Dense),
            "separable" => Ok(LawForm::Separable),
            "bilinear" => Ok(LawForm::Bilinear),
            "saturated" => Ok(LawForm::Saturated),
            "fb" | "flopparam" | "flop-param" => Ok(LawForm::FlopParam),
            other => Err(Error::Domain(alloc::format!("unknown law form `{other}`"))),
        }
    }
}

/// Bounded, strictly increasing map of the expert count.
///
/// `Ê(e_min) = e_start` and `Ê(E) → e_max` as `E → ∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SaturationTransform {
    pub e_min: f64,
    pub e_start: f64,
    pub e_max: f64,
}

impl SaturationTransform {
    pub fn new(e_min: f64, e_start: f64, e_max: f64) -> Result<Self> {
        let t = SaturationTransform { e_min, e_start, e_max };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.e_min.is_finite()
            && self.e_start.is_finite()
            && self.e_min <= self.e_start
            && self.e_start < self.e_max
            && self.e_start > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidTransform {
                e_min: self.e_min,
                e_start: self.e_start,
                e_max: self.e_max,
            })
        }
    }

    /// Offset added to `E - e_min` so that the transform starts at `e_start`.
    fn offset(&self) -> f64 {
        1.0 / (1.0 / self.e_start - 1.0 / self.e_max)
    }

    pub fn apply(&self, e: f64) -> Result<f64> {
        self.validate()?;
        if !(e >= self.e_min) {
            return Err(Error::Domain(alloc::format!(
                "expert count {e} below e_min = {}",
                self.e_min
            )));
        }
        Ok(self.apply_unchecked(e))
    }

    pub(crate) fn apply_unchecked(&self, e: f64) -> f64 {
        if e == self.e_min {
            return self.e_start;
        }
        if e == f64::INFINITY {
            return self.e_max;
        }
        1.0 / (1.0 / (e - self.e_min + self.offset()) + 1.0 / self.e_max)
    }
}

/// `Ê(E)` for the given transform.
pub fn saturate(e: f64, t: &SaturationTransform) -> Result<f64> {
    t.apply(e)
}

/// Coefficients of one law form, in the fitted sign convention.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LawCoefficients {
    pub form: LawForm,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e_start: Option<f64>,
    pub e_max: Option<f64>,
}

impl LawCoefficients {
    pub fn dense(a: f64, d: f64) -> Self {
        Self::raw(LawForm::Dense, a, 0.0, 0.0, d, None, None)
    }

    pub fn separable(a: f64, b: f64, d: f64) -> Self {
        Self::raw(LawForm::Separable, a, b, 0.0, d, None, None)
    }

    pub fn bilinear(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self::raw(LawForm::Bilinear, a, b, c, d, None, None)
    }

    pub fn saturated(a: f64, b: f64, c: f64, d: f64, e_start: f64, e_max: f64) -> Self {
        Self::raw(LawForm::Saturated, a, b, c, d, Some(e_start), Some(e_max))
    }

    pub fn flop_param(a: f64, b: f64, c: f64, d: f64, e_start: f64, e_max: f64) -> Self {
        Self::raw(LawForm::FlopParam, a, b, c, d, Some(e_start), Some(e_max))
    }

    fn raw(
        form: LawForm,
        a: f64,
        b: f64,
        c: f64,
        d: f64,
        e_start: Option<f64>,
        e_max: Option<f64>,
    ) -> Self {
        LawCoefficients { form, a, b, c, d, e_start, e_max }
    }

    /// Checks that the form's required fields are present and well ordered.
    pub fn validate(&self) -> Result<()> {
        let finite = [self.a, self.b, self.c, self.d].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidCoefficients("non-finite coefficient".into()));
        }
        match self.form {
            LawForm::Saturated | LawForm::FlopParam => {
                let (Some(e_start), Some(e_max)) = (self.e_start, self.e_max) else {
                    return Err(Error::InvalidCoefficients(alloc::format!(
                        "{} law requires e_start and e_max",
                        self.form
                    )));
                };
                if !(e_start >= 1.0 && e_start < e_max) {
                    return Err(Error::InvalidTransform {
                        e_min: self.form.e_min(),
                        e_start,
                        e_max,
                    });
                }
                Ok(())
            }
            LawForm::Dense | LawForm::Separable => {
                if self.c != 0.0 {
                    return Err(Error::InvalidCoefficients(alloc::format!(
                        "{} law has no interaction term but c = {}",
                        self.form,
                        self.c
                    )));
                }
                if self.form == LawForm::Dense && self.b != 0.0 {
                    return Err(Error::InvalidCoefficients("dense law has no b term".into()));
                }
                Ok(())
            }
            LawForm::Bilinear => Ok(()),
        }
    }

    /// The saturating transform carried by saturating forms.
    pub fn transform(&self) -> Result<Option<SaturationTransform>> {
        if !self.form.is_saturating() {
            return Ok(None);
        }
        self.validate()?;
        // validate() guarantees both fields.
        let t = SaturationTransform::new(
            self.form.e_min(),
            self.e_start.unwrap_or_default(),
            self.e_max.unwrap_or_default(),
        )?;
        Ok(Some(t))
    }

    /// `α(x) = a + c·log10 x`: the log-log slope in the size variable at
    /// routing value `x`.
    pub fn alpha(&self, x2_hat: f64) -> f64 {
        self.a + self.c * log10(x2_hat)
    }

    /// `log10 x̂2` for this form, with domain checks.
    pub fn log_routing_term(&self, x2: f64) -> Result<f64> {
        match self.form {
            LawForm::Dense => Ok(0.0),
            LawForm::Separable | LawForm::Bilinear => {
                if !(x2 >= 1.0) || !x2.is_finite() {
                    return Err(Error::Domain(alloc::format!(
                        "routing variable must be >= 1, got {x2}"
                    )));
                }
                Ok(log10(x2))
            }
            LawForm::Saturated | LawForm::FlopParam => {
                let t = self.transform()?.unwrap_or(SaturationTransform {
                    e_min: 1.0,
                    e_start: 1.0,
                    e_max: f64::INFINITY,
                });
                if x2.is_nan() {
                    return Err(Error::Domain("routing variable is NaN".into()));
                }
                Ok(log10(t.apply(x2)?))
            }
        }
    }

    /// Predicted loss in natural units.
    pub fn predict_loss(&self, x1: f64, x2: f64) -> Result<f64> {
        eval_law(self, x1, x2).map(exp10)
    }
}

/// Kaplan-style dense power law `L(N) = (N_c / N)^α_N`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DenseLaw {
    pub alpha_n: f64,
    pub n_c: f64,
}

impl DenseLaw {
    pub fn new(alpha_n: f64, n_c: f64) -> Result<Self> {
        if !(alpha_n > 0.0 && n_c > 0.0) || !alpha_n.is_finite() || !n_c.is_finite() {
            return Err(Error::InvalidCoefficients(alloc::format!(
                "dense law needs alpha_n > 0 and n_c > 0, got {alpha_n}, {n_c}"
            )));
        }
        Ok(DenseLaw { alpha_n, n_c })
    }

    /// `log10 L(N)`; exactly zero at `N = N_c`.
    pub fn log_loss(&self, n: f64) -> Result<f64> {
        if !(n > 0.0) {
            return Err(Error::Domain(alloc::format!("N must be positive, got {n}")));
        }
        Ok(self.alpha_n * (log10(self.n_c) - log10(n)))
    }

    pub fn loss(&self, n: f64) -> Result<f64> {
        self.log_loss(n).map(exp10)
    }

    /// `a = -α_N`, `d = α_N·log10 N_c`.
    pub fn to_coefficients(&self) -> LawCoefficients {
        LawCoefficients::dense(-self.alpha_n, self.alpha_n * log10(self.n_c))
    }

    /// Inverse of [`DenseLaw::to_coefficients`]: `α_N = -a`, `N_c = 10^(d / -a)`.
    pub fn from_coefficients(c: &LawCoefficients) -> Result<Self> {
        if c.a == 0.0 {
            return Err(Error::DegenerateCoefficients);
        }
        DenseLaw::new(-c.a, exp10(c.d / -c.a))
    }
}

/// `log10 L` predicted by `coeffs` at `(x1, x2)`.
pub fn eval_law(coeffs: &LawCoefficients, x1: f64, x2: f64) -> Result<f64> {
    coeffs.validate()?;
    if !(x1 > 0.0) || !x1.is_finite() {
        return Err(Error::Domain(alloc::format!("size variable must be positive, got {x1}")));
    }
    let lx = log10(x1);
    let ly = coeffs.log_routing_term(x2)?;
    Ok(eval_logs(coeffs, lx, ly))
}

/// The bilinear polynomial in already-logged inputs.
pub(crate) fn eval_logs(c: &LawCoefficients, lx: f64, ly: f64) -> f64 {
    c.a * lx + c.b * ly + c.c * lx * ly + c.d
}

/// Log-log slopes of the law at a point.
///
/// Reported as partial derivatives of `log10 L`, so they carry the same sign
/// as `a` and `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slopes {
    /// `∂ log L / ∂ log N = a + c·log10 Ê`.
    pub a_of_e: f64,
    /// `∂ log L / ∂ log Ê = b + c·log10 N`.
    pub b_of_n: f64,
}

pub fn slopes(coeffs: &LawCoefficients, n: f64, e: f64) -> Result<Slopes> {
    if coeffs.form == LawForm::Dense {
        return Err(Error::UnsupportedForm("slopes"));
    }
    coeffs.validate()?;
    if !(n > 0.0) {
        return Err(Error::Domain(alloc::format!("N must be positive, got {n}")));
    }
    let ly = coeffs.log_routing_term(e)?;
    Ok(Slopes {
        a_of_e: coeffs.a + coeffs.c * ly,
        b_of_n: coeffs.b + coeffs.c * log10(n),
    })
}

/// `log10 N̄` given `log10 N`, `log10 Ê` and `log10 E_start`.
fn log_epc(c: &LawCoefficients, log_n: f64, log_e_hat: f64, log_e_start: f64) -> Result<f64> {
    let alpha_start = c.a + c.c * log_e_start;
    if alpha_start == 0.0 {
        return Err(Error::DegenerateCoefficients);
    }
    let alpha_hat = c.a + c.c * log_e_hat;
    Ok((alpha_hat * log_n + c.b * (log_e_hat - log_e_start)) / alpha_start)
}

fn check_n(n: f64) -> Result<()> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Domain(alloc::format!("N must be positive, got {n}")));
    }
    Ok(())
}

/// Effective parameter count: the dense size with the same predicted loss as
/// a routed model with `N` parameters and `E` experts.
///
/// `N̄ = N^(α(Ê)/α(E_start)) · (Ê/E_start)^(b/α(E_start))`.
pub fn effective_param_count(coeffs: &LawCoefficients, n: f64, e: f64) -> Result<f64> {
    if coeffs.form != LawForm::Saturated {
        return Err(Error::UnsupportedForm("effective_param_count (needs saturated)"));
    }
    check_n(n)?;
    let t = coeffs.transform()?.ok_or(Error::UnsupportedForm("effective_param_count"))?;
    if e == E_MIN_EXPERTS {
        return Ok(n);
    }
    let e_hat = t.apply(e)?;
    log_epc(coeffs, log10(n), log10(e_hat), log10(t.e_start)).map(exp10)
}

/// Effective parameter count with `E_start = 1` and no saturation (`Ê = E`),
/// for coefficients of the bilinear law.
pub fn simplified_epc(coeffs: &LawCoefficients, n: f64, e: f64) -> Result<f64> {
    if !matches!(coeffs.form, LawForm::Bilinear | LawForm::Separable) {
        return Err(Error::UnsupportedForm("simplified_epc (needs bilinear)"));
    }
    coeffs.validate()?;
    check_n(n)?;
    if !(e >= 1.0) {
        return Err(Error::Domain(alloc::format!("expert count must be >= 1, got {e}")));
    }
    if e == 1.0 {
        return Ok(n);
    }
    log_epc(coeffs, log10(n), log10(e), 0.0).map(exp10)
}

/// Dense size beyond which routing stops improving the effective parameter
/// count: `10^(-b/c)`.
pub fn n_cutoff(coeffs: &LawCoefficients) -> Result<f64> {
    if coeffs.form == LawForm::Dense {
        return Err(Error::UnsupportedForm("n_cutoff"));
    }
    coeffs.validate()?;
    if coeffs.c == 0.0 {
        return Err(Error::NoCutoff);
    }
    Ok(exp10(-coeffs.b / coeffs.c))
}

/// Largest effective parameter count reachable at size `N` over all `E`.
///
/// Below the cutoff this is `N̄(N, E → ∞)`, i.e. `Ê = E_max`; above it routing
/// no longer helps and the value is `N`.
pub fn n_max(coeffs: &LawCoefficients, n: f64) -> Result<f64> {
    if coeffs.form != LawForm::Saturated {
        return Err(Error::UnsupportedForm("n_max (needs saturated)"));
    }
    check_n(n)?;
    let t = coeffs.transform()?.ok_or(Error::UnsupportedForm("n_max"))?;
    match n_cutoff(coeffs) {
        Ok(cut) if n >= cut => return Ok(n),
        Ok(_) | Err(Error::NoCutoff) => {}
        Err(e) => return Err(e),
    }
    log_epc(coeffs, log10(n), log10(t.e_max), log10(t.e_start)).map(exp10)
}

/// `true` when `N̄_max` is non-decreasing below the cutoff.
///
/// There `log N̄_max` is affine in `log N` with slope `α(E_max)/α(E_start)`, so
/// this holds exactly when `α(E_max) <= 0`, that is `E_max <= 10^(-a/c)`.
pub fn n_max_is_monotone(coeffs: &LawCoefficients) -> Result<bool> {
    let t = coeffs.transform()?.ok_or(Error::UnsupportedForm("n_max_is_monotone"))?;
    if coeffs.c == 0.0 {
        return Ok(true);
    }
    Ok(coeffs.alpha(t.e_max) <= 0.0)
}

/// Lower bound of the level-curve search in `log10 E`.
pub const LEVEL_LOG_E_MIN: f64 = 0.0;
/// Upper bound of the level-curve search in `log10 E`.
pub const LEVEL_LOG_E_MAX: f64 = 6.0;
/// Bisection tolerance in `log10 E`.
pub const LEVEL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Unreachable {
    /// Even `E = 1` beats the target: it would need fewer than one expert.
    BelowOneExpert,
    /// The target is below what `E = 10^6` experts reach at this size.
    BeyondSearchRange,
    /// The law does not decrease in `E` at this size.
    NotDecreasing,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LevelCurve {
    /// `(N, E)` pairs with `log10 L(N, E) = target`.
    pub points: Vec<(f64, f64)>,
    /// Sizes for which no expert count reaches the target.
    pub skipped: Vec<(f64, Unreachable)>,
}

/// Solves `log10 L(N, E) = target` for `E` at every `N` in the grid.
///
/// The search is a bisection on `log10 E` over `[0, 6]`. Sizes for which the
/// target is unreachable are reported in [`LevelCurve::skipped`]; an empty
/// `points` list means the target is out of reach everywhere on the grid.
pub fn level_curve(coeffs: &LawCoefficients, target_log_loss: f64, n_grid: &[f64]) -> Result<LevelCurve> {
    if coeffs.form == LawForm::Dense {
        return Err(Error::UnsupportedForm("level_curve"));
    }
    coeffs.validate()?;
    if !target_log_loss.is_finite() {
        return Err(Error::Domain("target must be finite".into()));
    }
    let mut curve = LevelCurve { points: Vec::new(), skipped: Vec::new() };
    for &n in n_grid {
        check_n(n)?;
        let f = |log_e: f64| eval_law(coeffs, n, exp10(log_e)).map(|v| v - target_log_loss);
        let lo_val = f(LEVEL_LOG_E_MIN)?;
        let hi_val = f(LEVEL_LOG_E_MAX)?;
        if lo_val == 0.0 {
            curve.points.push((n, 1.0));
            continue;
        }
        if hi_val > lo_val {
            curve.skipped.push((n, Unreachable::NotDecreasing));
            continue;
        }
        if lo_val < 0.0 {
            curve.skipped.push((n, Unreachable::BelowOneExpert));
            continue;
        }
        if hi_val > 0.0 {
            curve.skipped.push((n, Unreachable::BeyondSearchRange));
            continue;
        }
        let (mut lo, mut hi) = (LEVEL_LOG_E_MIN, LEVEL_LOG_E_MAX);
        while hi - lo > LEVEL_TOL {
            let mid = 0.5 * (lo + hi);
            if f(mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        curve.points.push((n, exp10(0.5 * (lo + hi))));
    }
    Ok(curve)
}

impl fmt::Display for Unreachable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Unreachable::BelowOneExpert => "target already beaten at E=1",
            Unreachable::BeyondSearchRange => "target not reached by E=1e6",
            Unreachable::NotDecreasing => "loss does not decrease with E",
        };
        f.write_str(s)
    }
}

/// Human-readable name of a coefficient set, used in reports.
pub fn describe(c: &LawCoefficients) -> String {
    match (c.e_start, c.e_max) {
        (Some(s), Some(m)) => alloc::format!(
            "{} a={} b={} c={} d={} e_start={} e_max={}",
            c.form, c.a, c.b, c.c, c.d, s, m
        ),
        _ => alloc::format!("{} a={} b={} c={} d={}", c.form, c.a, c.b, c.c, c.d),
    }
}
