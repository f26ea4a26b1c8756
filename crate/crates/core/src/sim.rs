//! Receding-horizon closed loop and the checks run on its trajectories.

use std::ops::Range;

use serde::Serialize;

use crate::bounds::{
    gamma_star_for, running_cost_gap, upsilon, ComparisonData, LinearBoundParams, Provenance,
    StabilityCertificate,
};
use crate::error::{Error, Result};
use crate::planner::plan;
use crate::system::{check_gamma, check_state, discount_weight, step, InputSequence, SwitchedSystem};

/// A closed-loop run of `T` steps.
///
/// `states` and `sigmas` hold `T + 1` entries (including the final state);
/// the per-decision vectors hold `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub modes: Vec<usize>,
    pub stage_costs: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub horizons: Vec<usize>,
    pub plan_values: Vec<f64>,
    /// The full sequence returned by each planner call.
    pub planned_sequences: Vec<InputSequence>,
    pub gamma: f64,
    pub budget: u64,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.modes.len()
    }
}

/// Plans at each state with budget `B`, applies the first input, repeats `T` times.
pub fn closed_loop(
    system: &dyn SwitchedSystem,
    x0: &[f64],
    gamma: f64,
    budget: u64,
    steps: usize,
) -> Result<Trajectory> {
    check_gamma(gamma)?;
    check_state(system, x0)?;
    if budget < 1 {
        return Err(Error::Precondition("budget must be at least 1".into()));
    }
    if steps < 1 {
        return Err(Error::Precondition("closed loop needs at least one step".into()));
    }
    let mut traj = Trajectory {
        states: Vec::with_capacity(steps + 1),
        modes: Vec::with_capacity(steps),
        stage_costs: Vec::with_capacity(steps),
        sigmas: Vec::with_capacity(steps + 1),
        horizons: Vec::with_capacity(steps),
        plan_values: Vec::with_capacity(steps),
        planned_sequences: Vec::with_capacity(steps),
        gamma,
        budget,
    };
    let mut x = x0.to_vec();
    for k in 0..steps {
        let wrap = |e| Error::ClosedLoop { step: k, source: Box::new(e) };
        let result = plan(system, &x, gamma, budget).map_err(wrap)?;
        let u = result.first_input();
        let next = step(system, u, &x).map_err(wrap)?;
        traj.sigmas.push(system.measure(&x));
        traj.stage_costs.push(system.stage_cost(u, &x));
        traj.modes.push(u);
        traj.horizons.push(result.horizon);
        traj.plan_values.push(result.value);
        traj.planned_sequences.push(result.sequence);
        traj.states.push(std::mem::replace(&mut x, next));
    }
    traj.sigmas.push(system.measure(&x));
    traj.states.push(x);
    Ok(traj)
}

/// `Σ_{k<T} γ^k ℓ_{u_k}(φ(k, x))`, the finite-`T` estimate of the running cost.
pub fn running_cost(traj: &Trajectory) -> f64 {
    partial_running_costs(traj).last().copied().unwrap_or(0.0)
}

/// Cumulative discounted sums; entry `k` covers stages `0..=k`.
pub fn partial_running_costs(traj: &Trajectory) -> Vec<f64> {
    let mut acc = 0.0;
    traj.stage_costs
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            acc += discount_weight(traj.gamma, k) * c;
            acc
        })
        .collect()
}

/// A dominating exponential envelope `σ(φ(k)) ≤ K σ(x) e^{−λk}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentialFit {
    pub k: f64,
    pub lambda: f64,
    /// `max_k ln σ_k − (ln K + ln σ_0 − λk)`; nonpositive up to rounding.
    pub residual: f64,
    /// Index range actually used, after truncation at the first zero.
    pub window_start: usize,
    pub window_end: usize,
}

/// Fits a dominating envelope on `window`.
///
/// Every `λ` gets the smallest dominating `K(λ) = max_k σ_k e^{λk}/σ_0`.
/// Among `λ ∈ (0, λ*]` the fit minimizes `K(λ)/(e^λ − γ)`, the factor that
/// enters the running-cost gap, where `λ*` is the largest rate supported by
/// the last sample of the window. Both `ln K(λ)` and `−ln(e^λ − γ)` are
/// convex, so a golden-section search finds the minimum.
pub fn fit_exponential_envelope(traj: &Trajectory, window: Range<usize>) -> Result<ExponentialFit> {
    fit_envelope_to_sigmas(&traj.sigmas, window, traj.gamma)
}

/// [`fit_exponential_envelope`] on a bare `σ` sequence.
pub fn fit_envelope_to_sigmas(sigmas: &[f64], window: Range<usize>, gamma: f64) -> Result<ExponentialFit> {
    check_gamma(gamma)?;
    let sigma0 = *sigmas.first().ok_or_else(|| Error::Fit("empty trajectory".into()))?;
    if !(sigma0 > 0.0) {
        return Err(Error::Fit("sigma(x0) = 0, the envelope is undefined".into()));
    }
    if window.start >= window.end || window.end > sigmas.len() {
        return Err(Error::Fit(format!(
            "window {window:?} is empty or exceeds {} samples",
            sigmas.len()
        )));
    }
    let end = (window.start..window.end)
        .find(|&k| sigmas[k] == 0.0)
        .unwrap_or(window.end);
    if end <= window.start + 1 {
        return Err(Error::Fit("fewer than two positive samples in the window".into()));
    }
    let log_r: Vec<(usize, f64)> = (window.start..end).map(|k| (k, (sigmas[k] / sigma0).ln())).collect();
    let &(t, log_rt) = log_r.last().expect("window has at least two samples");
    let lambda_max = log_r[..log_r.len() - 1]
        .iter()
        .map(|&(k, lr)| (lr - log_rt) / (t - k) as f64)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(lambda_max > 0.0) {
        return Err(Error::Fit(format!(
            "sigma does not decay over the window (best rate {lambda_max})"
        )));
    }
    let log_k = |lambda: f64| {
        log_r.iter().map(|&(k, lr)| lr + lambda * k as f64).fold(f64::NEG_INFINITY, f64::max)
    };
    let objective = |lambda: f64| log_k(lambda) - (lambda.exp() - gamma).ln();

    // golden-section search on the convex objective over (0, λ*]
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (0.0, lambda_max);
    let mut a = hi - phi * (hi - lo);
    let mut b = lo + phi * (hi - lo);
    let (mut fa, mut fb) = (objective(a), objective(b));
    for _ in 0..200 {
        if hi - lo <= 1e-12 * hi {
            break;
        }
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = objective(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = objective(b);
        }
    }
    // the interval end may beat the interior when the minimum sits at λ*
    let (lambda, _) = [(a, fa), (b, fb), (lambda_max, objective(lambda_max))]
        .into_iter()
        .filter(|(l, f)| *l > 0.0 && f.is_finite())
        .fold((f64::NAN, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
    if !lambda.is_finite() {
        return Err(Error::Fit("no finite envelope on the window".into()));
    }
    let lk = log_k(lambda);
    let k_fit = lk.exp();
    if !k_fit.is_finite() {
        return Err(Error::Fit(format!("envelope constant overflows (ln K = {lk})")));
    }
    let residual = log_r
        .iter()
        .map(|&(k, lr)| lr - (lk - lambda * k as f64))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ExponentialFit { k: k_fit, lambda, residual, window_start: window.start, window_end: end })
}

/// Certificate from a fitted envelope at horizon bound `d̄`.
///
/// `γ*` is taken from [`gamma_star_for`] when the stability condition is
/// satisfiable at `d̄`; otherwise the certificate is uncertified and `γ*`
/// falls back to the threshold `1 − a_W/(ā_V+ā_W)`, so that the gap can
/// still be evaluated for inspection.
pub fn fitted_certificate(
    params: &LinearBoundParams,
    fit: &ExponentialFit,
    d_bar: u32,
) -> Result<StabilityCertificate> {
    let gamma_star = gamma_star_for(d_bar, params).unwrap_or_else(|| params.rate().max(f64::EPSILON));
    StabilityCertificate::unchecked(gamma_star, d_bar.max(1), fit.k, fit.lambda, Provenance::Fitted, params)
}

/// Entry into and invariance of the ball `{σ ≤ δ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PracticalStabilityReport {
    pub delta: f64,
    pub big_delta: f64,
    /// Whether `σ(x0) ≤ Δ`; the check is only meaningful when it holds.
    pub starts_within_big_delta: bool,
    /// First `k` with `σ_k ≤ δ`.
    pub entry_time: Option<usize>,
    /// Whether every later sample also satisfies `σ_k ≤ δ`.
    pub remains: bool,
    pub peak_sigma: f64,
}

impl PracticalStabilityReport {
    pub fn passed(&self) -> bool {
        self.starts_within_big_delta && self.entry_time.is_some() && self.remains
    }
}

/// Trajectory-wise practical-stability check; failures are reported, not raised.
pub fn check_practical_stability(traj: &Trajectory, delta: f64, big_delta: f64) -> PracticalStabilityReport {
    let entry_time = traj.sigmas.iter().position(|&s| s <= delta);
    let remains = entry_time.is_some_and(|t| traj.sigmas[t..].iter().all(|&s| s <= delta));
    PracticalStabilityReport {
        delta,
        big_delta,
        starts_within_big_delta: traj.sigmas[0] <= big_delta,
        entry_time,
        remains,
        peak_sigma: traj.sigmas.iter().copied().fold(0.0, f64::max),
    }
}

/// One failed check of the Lyapunov diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovViolation {
    pub step: usize,
    /// `"decrease"`, `"lower"` or `"upper"`.
    pub check: &'static str,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub d_bar: usize,
    /// `Y_k = V_{γ,d(x_k)}(x_k) + W(x_k)`.
    pub y: Vec<f64>,
    pub violations: Vec<LyapunovViolation>,
    /// Whether every horizon reached `d̄`, the precondition of the decrease bound.
    pub horizons_reach_d_bar: bool,
}

/// Checks `Y_{k+1} − Y_k ≤ (−α_Y(σ_k) + Υ(Y_k, γ, d̄))/γ` and
/// `α_Y(σ_k) ≤ Y_k ≤ ᾱ_Y(σ_k)` along the trajectory.
pub fn lyapunov_diagnostic(traj: &Trajectory, data: &ComparisonData, d_bar: usize) -> Result<LyapunovReport> {
    if !data.has_storage() {
        return Err(Error::Config("the Lyapunov diagnostic needs the storage function W".into()));
    }
    let gamma = traj.gamma;
    let y: Vec<f64> = (0..traj.steps())
        .map(|k| traj.plan_values[k] + data.storage(&traj.states[k]).expect("checked above"))
        .collect();
    let mut violations = Vec::new();
    for (k, &yk) in y.iter().enumerate() {
        let tol = 1e-8 * yk.max(1.0);
        let sigma = traj.sigmas[k];
        let lower = data.alpha_y(sigma);
        if lower > yk + tol {
            violations.push(LyapunovViolation { step: k, check: "lower", lhs: lower, rhs: yk });
        }
        let upper = data.bar_alpha_y(sigma);
        if yk > upper + tol {
            violations.push(LyapunovViolation { step: k, check: "upper", lhs: yk, rhs: upper });
        }
        if let Some(&next) = y.get(k + 1) {
            let lhs = next - yk;
            let rhs = (-data.alpha_y(sigma) + upsilon(yk, gamma, d_bar, data)?) / gamma;
            if lhs > rhs + tol {
                violations.push(LyapunovViolation { step: k, check: "decrease", lhs, rhs });
            }
        }
    }
    Ok(LyapunovReport {
        d_bar,
        y,
        violations,
        horizons_reach_d_bar: traj.horizons.iter().all(|&h| h >= d_bar),
    })
}

/// The computable chain `V_{γ,d(x0)}(x0) ≤ V^run ≤ V_{γ,d(x0)}(x0) + w_{γ,d̄} σ(x0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunningCostChainReport {
    pub lower: f64,
    pub running_cost: f64,
    pub upper: f64,
    pub gap_w: f64,
    /// `γ^T · max_k ℓ_k`, allowance for the truncated tail of the running cost.
    pub tail_allowance: f64,
    /// `running_cost − lower`.
    pub lower_slack: f64,
    /// `upper − running_cost`.
    pub upper_slack: f64,
    pub lower_holds: bool,
    pub upper_holds: bool,
    /// Whether the certificate's stability condition holds, i.e. the chain is
    /// backed by the theory rather than only observed.
    pub certified: bool,
}

impl RunningCostChainReport {
    pub fn holds(&self) -> bool {
        self.lower_holds && self.upper_holds
    }
}

/// Evaluates the running-cost chain for `traj` under `cert` and horizon lower bound `d̄`.
pub fn verify_running_cost_bounds(
    traj: &Trajectory,
    params: &LinearBoundParams,
    cert: &StabilityCertificate,
    d_bar: u32,
) -> Result<RunningCostChainReport> {
    let gamma = traj.gamma;
    let rc = running_cost(traj);
    let lower = traj.plan_values[0];
    let gap_w = running_cost_gap(params, cert, gamma, d_bar)?;
    let upper = lower + gap_w * traj.sigmas[0];
    let max_stage = traj.stage_costs.iter().copied().fold(0.0, f64::max);
    let tail_allowance = discount_weight(gamma, traj.steps()) * max_stage;
    let tol = 1e-12 * upper.abs().max(1.0);
    Ok(RunningCostChainReport {
        lower,
        running_cost: rc,
        upper,
        gap_w,
        tail_allowance,
        lower_slack: rc - lower,
        upper_slack: upper - rc,
        lower_holds: lower <= rc + tail_allowance + tol,
        upper_holds: rc <= upper + tol,
        certified: cert.holds(),
    })
}
