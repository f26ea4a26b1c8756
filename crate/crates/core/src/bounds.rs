//! Certificates built from comparison functions.
//!
//! The stabilizability/detectability data of a system are three comparison
//! functions `α_W`, `ᾱ_V`, `ᾱ_W` (and optionally the storage function `W`).
//! From them we derive `α_Y = α_W` and `ᾱ_Y = ᾱ_V + ᾱ_W` and evaluate:
//!
//! * the finite-horizon error bound `v_{γ,d}` and its linear, γ-uniform form `v̂_d`;
//! * the exponential-stability condition on `(γ*, d̄)` and the threshold `d̃`;
//! * the running-cost gap `w_{γ,d̄}` and the relative performance bound;
//! * the Lyapunov decrease term `Υ(s, γ, d̄)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Class of a comparison function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComparisonKind {
    /// Continuous, zero at zero, strictly increasing and unbounded.
    KInfinity,
    /// Continuous, nondecreasing and zero at zero.
    Nondecreasing,
}

/// A scalar map `R≥0 → R≥0` used in certificates.
#[derive(Clone)]
pub struct ComparisonFunction {
    eval: ScalarFn,
    inverse: Option<ScalarFn>,
    slope: Option<f64>,
    kind: ComparisonKind,
    domain_hint: f64,
    label: String,
}

impl fmt::Debug for ComparisonFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComparisonFunction")
            .field("label", &self.label)
            .field("kind", &self.kind)
            .field("domain_hint", &self.domain_hint)
            .finish()
    }
}

const INVERT_ABS_TOL: f64 = 1e-12;
const INVERT_REL_TOL: f64 = 1e-10;
const BRACKET_DOUBLINGS: u32 = 60;
const UNBOUNDED_PROBE_DOUBLINGS: u32 = 1000;
const UNBOUNDED_PROBE_TARGET: f64 = 1e6;

impl ComparisonFunction {
    /// `s ↦ a·s`. `a > 0` gives a K∞ function, `a = 0` the zero function.
    pub fn linear(a: f64) -> Result<Self> {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::InvalidComparison(format!("slope {a} must be a nonnegative real")));
        }
        if a == 0.0 {
            return Ok(Self::zero());
        }
        Ok(ComparisonFunction {
            eval: Arc::new(move |s| a * s),
            inverse: Some(Arc::new(move |y| y / a)),
            slope: Some(a),
            kind: ComparisonKind::KInfinity,
            domain_hint: 1.0,
            label: format!("{a}*s"),
        })
    }

    pub fn identity() -> Self {
        Self::linear(1.0).expect("1 is a valid slope")
    }

    pub fn zero() -> Self {
        ComparisonFunction {
            eval: Arc::new(|_| 0.0),
            inverse: None,
            slope: Some(0.0),
            kind: ComparisonKind::Nondecreasing,
            domain_hint: 1.0,
            label: "0".into(),
        }
    }

    /// `s ↦ c·s^p` with `c, p > 0`.
    pub fn power(c: f64, p: f64) -> Result<Self> {
        if !(c > 0.0 && p > 0.0 && c.is_finite() && p.is_finite()) {
            return Err(Error::InvalidComparison(format!("power needs c, p > 0, got {c}, {p}")));
        }
        Ok(ComparisonFunction {
            eval: Arc::new(move |s| c * s.powf(p)),
            inverse: Some(Arc::new(move |y| (y / c).powf(1.0 / p))),
            slope: (p == 1.0).then_some(c),
            kind: ComparisonKind::KInfinity,
            domain_hint: 1.0,
            label: format!("{c}*s^{p}"),
        })
    }

    /// Wraps an arbitrary function and validates it against `kind`.
    /// `domain_hint` is the starting upper bracket for numerical inversion.
    pub fn from_fn(
        kind: ComparisonKind,
        domain_hint: f64,
        label: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(domain_hint > 0.0 && domain_hint.is_finite()) {
            return Err(Error::InvalidComparison(format!("domain hint {domain_hint} must be > 0")));
        }
        let func = ComparisonFunction {
            eval: Arc::new(f),
            inverse: None,
            slope: None,
            kind,
            domain_hint,
            label: label.into(),
        };
        func.validate()?;
        Ok(func)
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.eval)(s)
    }

    pub fn kind(&self) -> ComparisonKind {
        self.kind
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Slope when the function is known to be linear.
    pub fn slope(&self) -> Option<f64> {
        self.slope
    }

    /// Pointwise sum. The result is K∞ if either operand is.
    pub fn sum(&self, other: &ComparisonFunction) -> ComparisonFunction {
        let kind = if self.kind == ComparisonKind::KInfinity
            || other.kind == ComparisonKind::KInfinity
        {
            ComparisonKind::KInfinity
        } else {
            ComparisonKind::Nondecreasing
        };
        if let (Some(a), Some(b)) = (self.slope, other.slope) {
            if a + b > 0.0 {
                return Self::linear(a + b).expect("sum of valid slopes");
            }
        }
        let (f, g) = (self.eval.clone(), other.eval.clone());
        ComparisonFunction {
            eval: Arc::new(move |s| f(s) + g(s)),
            inverse: None,
            slope: None,
            kind,
            domain_hint: self.domain_hint.min(other.domain_hint),
            label: format!("({}) + ({})", self.label, other.label),
        }
    }

    /// Checks zero at zero, monotonicity on a geometric grid, and for K∞
    /// functions strict increase and unboundedness by a doubling probe.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidComparison(format!("{}: {msg}", self.label)));
        let at_zero = self.eval(0.0);
        if at_zero != 0.0 {
            return bad(format!("value at zero is {at_zero}"));
        }
        let strict = self.kind == ComparisonKind::KInfinity;
        let mut prev_s = 0.0;
        let mut prev = 0.0;
        for i in -40..=40 {
            let s = self.domain_hint * 2f64.powf(i as f64 / 2.0);
            let v = self.eval(s);
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("value {v} at {s}"));
            }
            if v < prev || (strict && v <= prev) {
                return bad(format!("not increasing between {prev_s} and {s}"));
            }
            prev_s = s;
            prev = v;
        }
        if strict {
            let base = self.eval(self.domain_hint);
            let mut s = self.domain_hint;
            let mut reached = false;
            for _ in 0..UNBOUNDED_PROBE_DOUBLINGS {
                s *= 2.0;
                if !s.is_finite() {
                    break;
                }
                let v = self.eval(s);
                if v >= UNBOUNDED_PROBE_TARGET * (1.0 + base) {
                    reached = true;
                    break;
                }
            }
            if !reached {
                return bad("appears bounded; a K-infinity function must be unbounded".into());
            }
        }
        Ok(())
    }
}

/// Numerical inverse of a K∞ function: geometric bracket expansion from the
/// domain hint followed by bisection.
pub fn invert(f: &ComparisonFunction, y: f64) -> Result<f64> {
    if f.kind != ComparisonKind::KInfinity {
        return Err(Error::InvalidComparison(format!("{} is not K-infinity", f.label)));
    }
    if !(y >= 0.0) || !y.is_finite() {
        return Err(Error::Precondition(format!("cannot invert at y = {y}")));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    if let Some(inv) = &f.inverse {
        return Ok(inv(y));
    }
    let mut lo = 0.0;
    let mut hi = f.domain_hint;
    let mut doublings = 0;
    while f.eval(hi) < y {
        if doublings == BRACKET_DOUBLINGS {
            return Err(Error::InversionRange { y, doublings });
        }
        lo = hi;
        hi *= 2.0;
        doublings += 1;
    }
    // bisect down to adjacent floats
    loop {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = f.eval(mid);
        if v == y {
            return Ok(mid);
        }
        if v < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = if (f.eval(lo) - y).abs() <= (f.eval(hi) - y).abs() { lo } else { hi };
    if (f.eval(s) - y).abs() > INVERT_ABS_TOL.max(INVERT_REL_TOL * y) {
        return Err(Error::InvalidComparison(format!(
            "{}: bisection stalled at {s} with residual {}",
            f.label,
            f.eval(s) - y
        )));
    }
    Ok(s)
}

type StorageFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Stabilizability/detectability data: `V_∞ ≤ ᾱ_V(σ)`, `W ≤ ᾱ_W(σ)`,
/// `W(f_u(x)) − W(x) ≤ −α_W(σ(x)) + ℓ_u(x)`.
#[derive(Clone)]
pub struct ComparisonData {
    alpha_w: ComparisonFunction,
    bar_alpha_v: ComparisonFunction,
    bar_alpha_w: ComparisonFunction,
    bar_alpha_y: ComparisonFunction,
    storage: Option<StorageFn>,
}

impl fmt::Debug for ComparisonData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComparisonData")
            .field("alpha_w", &self.alpha_w.label)
            .field("bar_alpha_v", &self.bar_alpha_v.label)
            .field("bar_alpha_w", &self.bar_alpha_w.label)
            .field("has_storage", &self.storage.is_some())
            .finish()
    }
}

impl ComparisonData {
    pub fn new(
        alpha_w: ComparisonFunction,
        bar_alpha_v: ComparisonFunction,
        bar_alpha_w: ComparisonFunction,
    ) -> Result<Self> {
        if alpha_w.kind != ComparisonKind::KInfinity {
            return Err(Error::InvalidComparison("alpha_W must be K-infinity".into()));
        }
        if bar_alpha_v.kind != ComparisonKind::KInfinity {
            return Err(Error::InvalidComparison("bar alpha_V must be K-infinity".into()));
        }
        alpha_w.validate()?;
        bar_alpha_v.validate()?;
        bar_alpha_w.validate()?;
        let bar_alpha_y = bar_alpha_v.sum(&bar_alpha_w);
        let data = ComparisonData { alpha_w, bar_alpha_v, bar_alpha_w, bar_alpha_y, storage: None };
        for i in -30..=30 {
            let s = 2f64.powi(i);
            if data.alpha_y(s) > data.bar_alpha_y(s) * (1.0 + 1e-12) {
                return Err(Error::InvalidComparison(format!(
                    "alpha_Y({s}) = {} exceeds bar alpha_Y({s}) = {}",
                    data.alpha_y(s),
                    data.bar_alpha_y(s)
                )));
            }
        }
        Ok(data)
    }

    /// Exact linear functions `a_W·s`, `ā_V·s`, `ā_W·s`.
    pub fn from_linear(params: &LinearBoundParams) -> Self {
        Self::new(
            ComparisonFunction::linear(params.a_w).expect("validated"),
            ComparisonFunction::linear(params.bar_a_v).expect("validated"),
            ComparisonFunction::linear(params.bar_a_w).expect("validated"),
        )
        .expect("linear params satisfy a_W <= bar a_V + bar a_W")
    }

    /// Attaches the storage function `W`.
    pub fn with_storage(mut self, w: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.storage = Some(Arc::new(w));
        self
    }

    /// Shorthand for `W ≡ 0`.
    pub fn with_zero_storage(self) -> Self {
        self.with_storage(|_| 0.0)
    }

    pub fn storage(&self, x: &[f64]) -> Option<f64> {
        self.storage.as_ref().map(|w| w(x))
    }

    pub fn has_storage(&self) -> bool {
        self.storage.is_some()
    }

    pub fn alpha_y(&self, s: f64) -> f64 {
        self.alpha_w.eval(s)
    }

    pub fn bar_alpha_y(&self, s: f64) -> f64 {
        self.bar_alpha_y.eval(s)
    }

    pub fn bar_alpha_v(&self, s: f64) -> f64 {
        self.bar_alpha_v.eval(s)
    }

    pub fn alpha_w_fn(&self) -> &ComparisonFunction {
        &self.alpha_w
    }

    pub fn bar_alpha_y_fn(&self) -> &ComparisonFunction {
        &self.bar_alpha_y
    }
}

/// Linear certificate constants: `α_W(s) ≥ a_W s`, `ᾱ_V(s) ≤ ā_V s`, `ᾱ_W(s) ≤ ā_W s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawLinearParams")]
pub struct LinearBoundParams {
    pub a_w: f64,
    pub bar_a_v: f64,
    pub bar_a_w: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLinearParams {
    a_w: f64,
    bar_a_v: f64,
    bar_a_w: f64,
}

impl TryFrom<RawLinearParams> for LinearBoundParams {
    type Error = Error;
    fn try_from(raw: RawLinearParams) -> Result<Self> {
        LinearBoundParams::new(raw.a_w, raw.bar_a_v, raw.bar_a_w)
    }
}

impl LinearBoundParams {
    pub fn new(a_w: f64, bar_a_v: f64, bar_a_w: f64) -> Result<Self> {
        let finite = a_w.is_finite() && bar_a_v.is_finite() && bar_a_w.is_finite();
        if !(finite && a_w > 0.0 && bar_a_v > 0.0 && bar_a_w >= 0.0) {
            return Err(Error::InvalidComparison(format!(
                "need a_W > 0, bar a_V > 0, bar a_W >= 0; got ({a_w}, {bar_a_v}, {bar_a_w})"
            )));
        }
        if a_w > bar_a_v + bar_a_w {
            return Err(Error::InvalidComparison(format!(
                "a_W = {a_w} exceeds bar a_V + bar a_W = {}",
                bar_a_v + bar_a_w
            )));
        }
        Ok(LinearBoundParams { a_w, bar_a_v, bar_a_w })
    }

    /// `1 − a_W/(ā_V + ā_W)`, in `[0, 1)`. Also the threshold `γ̄` on `γ*`.
    pub fn rate(&self) -> f64 {
        1.0 - self.a_w / (self.bar_a_v + self.bar_a_w)
    }

    /// `ā_V(ā_V + ā_W)/a_W`.
    pub fn coefficient(&self) -> f64 {
        self.bar_a_v * (self.bar_a_v + self.bar_a_w) / self.a_w
    }
}

/// Certificate data accepted by the error-bound routines.
#[derive(Debug, Clone)]
pub enum BoundParams {
    Linear(LinearBoundParams),
    General(Box<ComparisonData>),
}

/// Where the `(K, λ)` pair of a certificate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    UserSupplied,
    Fitted,
}

/// `σ(φ(k, x)) ≤ K σ(x) e^{−λk}` for `γ ∈ (γ*, 1]` and budgets above
/// the stability budget of `d̄`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityCertificate {
    pub gamma_star: f64,
    pub d_bar: u32,
    pub k: f64,
    pub lambda: f64,
    pub provenance: Provenance,
    /// Margin of the exponential-stability condition at `(γ*, d̄)`;
    /// positive iff the condition holds.
    pub ges_margin: f64,
}

impl StabilityCertificate {
    /// Builds a certificate and requires the exponential-stability condition
    /// to hold at `(γ*, d̄)`.
    pub fn new(
        gamma_star: f64,
        d_bar: u32,
        k: f64,
        lambda: f64,
        provenance: Provenance,
        params: &LinearBoundParams,
    ) -> Result<Self> {
        let cert = Self::unchecked(gamma_star, d_bar, k, lambda, provenance, params)?;
        if !cert.holds() {
            return Err(Error::Precondition(format!(
                "stability condition fails at gamma* = {gamma_star}, d_bar = {d_bar} (margin {})",
                cert.ges_margin
            )));
        }
        Ok(cert)
    }

    /// Like [`StabilityCertificate::new`] but only records the margin, for
    /// inspecting empirical `(K, λ)` outside the certified regime.
    pub fn unchecked(
        gamma_star: f64,
        d_bar: u32,
        k: f64,
        lambda: f64,
        provenance: Provenance,
        params: &LinearBoundParams,
    ) -> Result<Self> {
        if !(gamma_star > 0.0 && gamma_star < 1.0) {
            return Err(Error::Precondition(format!("gamma* = {gamma_star} not in (0, 1)")));
        }
        if d_bar < 1 {
            return Err(Error::Precondition("d_bar must be at least 1".into()));
        }
        if !(k > 0.0 && lambda > 0.0 && k.is_finite() && lambda.is_finite()) {
            return Err(Error::Precondition(format!("need K, lambda > 0, got {k}, {lambda}")));
        }
        Ok(StabilityCertificate {
            gamma_star,
            d_bar,
            k,
            lambda,
            provenance,
            ges_margin: ges_margin(gamma_star, d_bar, params),
        })
    }

    pub fn holds(&self) -> bool {
        self.ges_margin > 0.0
    }
}

// Shared kernel: s ↦ ((I − α_Y∘ᾱ_Y⁻¹)/γ)^{(d)}(s), then γ^d ᾱ_V(α_Y⁻¹(·)).
fn contraction_tail(s0: f64, gamma: f64, d: usize, data: &ComparisonData) -> Result<f64> {
    const NEGATIVE_GUARD: f64 = 1e-15;
    const OVERFLOW_GUARD: f64 = 1e300;
    let mut s = s0;
    for step in 0..d {
        let inner = invert(&data.bar_alpha_y, s)?;
        let mut next = (s - data.alpha_y(inner)) / gamma;
        if next < 0.0 {
            if -next <= NEGATIVE_GUARD * s.max(1.0) {
                next = 0.0;
            } else {
                return Err(Error::InvalidComparison(format!(
                    "iterate {next} < 0 at step {}: alpha_Y exceeds bar alpha_Y",
                    step + 1
                )));
            }
        }
        if !(next <= OVERFLOW_GUARD) {
            return Err(Error::Divergence { step: step + 1, value: next });
        }
        s = next;
    }
    let weight = gamma.powi(d as i32);
    Ok(weight * data.bar_alpha_v(invert(&data.alpha_w, s)?))
}

fn check_gamma_open(gamma: f64) -> Result<()> {
    crate::system::check_gamma(gamma)
}

/// `v_{γ,d}(x) = γ^d ᾱ_V ∘ α_Y⁻¹ ∘ ((I − α_Y∘ᾱ_Y⁻¹)/γ)^{(d)} ∘ ᾱ_Y(σ(x))`.
pub fn error_bound_general(
    sigma_x: f64,
    gamma: f64,
    d: usize,
    data: &ComparisonData,
) -> Result<f64> {
    check_gamma_open(gamma)?;
    if d < 1 {
        return Err(Error::Precondition("horizon must be at least 1".into()));
    }
    if !(sigma_x >= 0.0) {
        return Err(Error::Precondition(format!("sigma = {sigma_x} < 0")));
    }
    contraction_tail(data.bar_alpha_y(sigma_x), gamma, d, data)
}

/// `v̂_d(x) = ā_V(ā_V + ā_W)/a_W · (1 − a_W/(ā_V + ā_W))^d · σ(x)`, independent of `γ`.
pub fn error_bound_linear(sigma_x: f64, params: &LinearBoundParams, d: usize) -> f64 {
    params.coefficient() * params.rate().powi(d as i32) * sigma_x
}

/// `a_W/(ā_V+ā_W) − (1 − γ* + (ā_V/a_W)(1 − a_W/(ā_V+ā_W))^{d̄})`.
pub fn ges_margin(gamma_star: f64, d_bar: u32, params: &LinearBoundParams) -> f64 {
    let rhs = params.a_w / (params.bar_a_v + params.bar_a_w);
    let lhs = 1.0 - gamma_star + params.bar_a_v / params.a_w * params.rate().powi(d_bar as i32);
    rhs - lhs
}

/// Exponential-stability condition
/// `1 − γ* + (ā_V/a_W)(1 − a_W/(ā_V+ā_W))^{d̄} < a_W/(ā_V+ā_W)`, strict, no epsilon.
pub fn ges_condition(gamma_star: f64, d_bar: u32, params: &LinearBoundParams) -> bool {
    let rhs = params.a_w / (params.bar_a_v + params.bar_a_w);
    let lhs = 1.0 - gamma_star + params.bar_a_v / params.a_w * params.rate().powi(d_bar as i32);
    lhs < rhs
}

const D_BAR_SCAN_LIMIT: u32 = 10_000_000;

/// Smallest `d̄ ≥ 1` satisfying [`ges_condition`].
pub fn min_d_bar(gamma_star: f64, params: &LinearBoundParams) -> Result<u32> {
    let threshold = params.rate();
    if !(gamma_star > threshold && gamma_star <= 1.0) {
        return Err(Error::Infeasible { gamma_star, threshold });
    }
    (1..=D_BAR_SCAN_LIMIT)
        .find(|&d| ges_condition(gamma_star, d, params))
        .ok_or(Error::Infeasible { gamma_star, threshold })
}

/// `d̃ = ⌊ln(ā_V(ā_V+ā_W)/a_W²) / −ln(1 − a_W/(ā_V+ā_W))⌋`; any `d̄ > d̃`
/// admits some `γ* < 1`.
pub fn d_tilde(params: &LinearBoundParams) -> u32 {
    let num = (params.coefficient() / params.a_w).ln();
    let den = -params.rate().ln();
    let ratio = num / den;
    if !(ratio > 0.0) {
        return 0;
    }
    // values within 1e-12 of an integer are snapped before flooring
    let nearest = ratio.round();
    let floored = if (ratio - nearest).abs() < 1e-12 { nearest } else { ratio.floor() };
    floored as u32
}

/// The γ* halfway between the infimum admitted by `d̄` and 1, if any.
pub fn gamma_star_for(d_bar: u32, params: &LinearBoundParams) -> Option<f64> {
    let margin_at_one = ges_margin(1.0, d_bar, params);
    (margin_at_one > 0.0).then_some(1.0 - 0.5 * margin_at_one)
}

/// `w_{γ,d̄} = (1 − a_W/(ā_V+ā_W))^{d̄} K ā_V(ā_V+ā_W) γ / (a_W (e^λ − γ))`.
pub fn running_cost_gap(
    params: &LinearBoundParams,
    cert: &StabilityCertificate,
    gamma: f64,
    d_bar: u32,
) -> Result<f64> {
    if !(gamma > cert.gamma_star && gamma <= 1.0) {
        return Err(Error::Precondition(format!(
            "gamma = {gamma} not in (gamma* = {}, 1]",
            cert.gamma_star
        )));
    }
    let decay = cert.lambda.exp() - gamma;
    Ok(params.rate().powi(d_bar as i32) * cert.k * params.coefficient() * gamma / decay)
}

/// Bound `w_{γ,d̄}/a_W` on `(V_run − V_∞)/(V_∞ + W)`.
pub fn relative_performance_bound(
    params: &LinearBoundParams,
    cert: &StabilityCertificate,
    gamma: f64,
    d_bar: u32,
) -> Result<f64> {
    Ok(running_cost_gap(params, cert, gamma, d_bar)? / params.a_w)
}

/// `Υ(s, γ, d̄) = (1 − γ)s + γ^{d̄} ᾱ_V ∘ α_Y⁻¹ ∘ ((I − α_Y∘ᾱ_Y⁻¹)/γ)^{(d̄)}(s)`.
pub fn upsilon(s: f64, gamma: f64, d_bar: usize, data: &ComparisonData) -> Result<f64> {
    check_gamma_open(gamma)?;
    if !(s >= 0.0) {
        return Err(Error::Precondition(format!("s = {s} < 0")));
    }
    Ok((1.0 - gamma) * s + contraction_tail(s, gamma, d_bar, data)?)
}
