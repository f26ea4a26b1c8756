//! Switched discrete-time systems `x⁺ = f_u(x)` over a finite mode set,
//! together with the stage costs `ℓ_u` and the measuring function `σ`.
//!
//! Modes are 1-based throughout the crate: a system with `M` modes accepts
//! `1..=M`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A switched system with finitely many modes.
///
/// Implementations must be pure: the same inputs always produce the same
/// outputs. Methods receive a mode that has already been range-checked.
pub trait SwitchedSystem: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn mode_count(&self) -> usize;
    /// `f_mode(x)`.
    fn dynamics(&self, mode: usize, x: &[f64]) -> Vec<f64>;
    /// `ℓ_mode(x)`, nonnegative.
    fn stage_cost(&self, mode: usize, x: &[f64]) -> f64;
    /// The measuring function `σ(x)`, nonnegative.
    fn measure(&self, x: &[f64]) -> f64;
}

/// Weight `γ^k` of the k-th stage cost.
///
/// Every cost accumulation in the crate goes through this function so that
/// the planner, the oracle and `rollout` produce bit-identical sums.
#[inline]
pub fn discount_weight(gamma: f64, k: usize) -> f64 {
    gamma.powi(k as i32)
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::Precondition(format!("gamma = {gamma} not in (0, 1]")))
    }
}

pub(crate) fn check_mode(system: &dyn SwitchedSystem, mode: usize) -> Result<()> {
    let m = system.mode_count();
    if (1..=m).contains(&mode) {
        Ok(())
    } else {
        Err(Error::ModeOutOfRange { mode, mode_count: m })
    }
}

pub(crate) fn check_state(system: &dyn SwitchedSystem, x: &[f64]) -> Result<()> {
    if x.len() != system.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: system.state_dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// One transition `f_mode(x)` with range and finiteness checks.
pub fn step(system: &dyn SwitchedSystem, mode: usize, x: &[f64]) -> Result<Vec<f64>> {
    check_mode(system, mode)?;
    check_state(system, x)?;
    let next = system.dynamics(mode, x);
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::NumericalOverflow { step: 0, state: next })
    }
}

/// An ordered list of modes `[u_0, …, u_d]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InputSequence(Vec<usize>);

impl InputSequence {
    pub fn new(modes: Vec<usize>, mode_count: usize) -> Result<Self> {
        if let Some(&bad) = modes.iter().find(|&&u| u == 0 || u > mode_count) {
            return Err(Error::ModeOutOfRange { mode: bad, mode_count });
        }
        Ok(InputSequence(modes))
    }

    pub(crate) fn from_vec_unchecked(modes: Vec<usize>) -> Self {
        InputSequence(modes)
    }

    pub fn empty() -> Self {
        InputSequence(Vec::new())
    }

    pub fn modes(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Option<usize> {
        self.0.first().copied()
    }

    /// The first `k` elements, `u|_k`.
    pub fn prefix(&self, k: usize) -> InputSequence {
        InputSequence(self.0[..k.min(self.0.len())].to_vec())
    }
}

impl fmt::Display for InputSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, u) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{u}")?;
        }
        Ok(())
    }
}

/// States visited by an open-loop input sequence and its discounted cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// `φ(0, x) … φ(d+1, x)`; one more entry than the sequence length.
    pub states: Vec<Vec<f64>>,
    /// `Σ_{k=0}^{d} γ^k ℓ_{u_k}(φ(k, x))`.
    pub cost: f64,
}

/// Applies `seq` from `x0` and accumulates the discounted stage costs.
pub fn rollout(
    system: &dyn SwitchedSystem,
    x0: &[f64],
    seq: &InputSequence,
    gamma: f64,
) -> Result<Rollout> {
    check_gamma(gamma)?;
    check_state(system, x0)?;
    let mut states = Vec::with_capacity(seq.len() + 1);
    states.push(x0.to_vec());
    let mut cost = 0.0;
    for (k, &mode) in seq.modes().iter().enumerate() {
        check_mode(system, mode)?;
        let x = &states[k];
        cost += discount_weight(gamma, k) * system.stage_cost(mode, x);
        let next = system.dynamics(mode, x);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalOverflow { step: k + 1, state: next });
        }
        states.push(next);
    }
    Ok(Rollout { states, cost })
}

/// Samples states and checks the structural contract of a system:
/// at least two modes, nonnegative finite stage costs and measure.
pub fn validate(system: &dyn SwitchedSystem, samples: usize, seed: u64) -> Result<()> {
    if system.mode_count() < 2 {
        return Err(Error::InvalidSystem(format!(
            "{}: needs at least 2 modes, has {}",
            system.name(),
            system.mode_count()
        )));
    }
    if system.state_dim() == 0 {
        return Err(Error::InvalidSystem(format!("{}: zero state dimension", system.name())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = system.state_dim();
    for i in 0..samples {
        // the origin is always part of the sample
        let x: Vec<f64> = if i == 0 {
            vec![0.0; n]
        } else {
            (0..n).map(|_| rng.random_range(-10.0..10.0)).collect()
        };
        let s = system.measure(&x);
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::InvalidSystem(format!(
                "{}: measure {s} at {x:?} is not a nonnegative real",
                system.name()
            )));
        }
        for u in 1..=system.mode_count() {
            let c = system.stage_cost(u, &x);
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::InvalidSystem(format!(
                    "{}: stage cost {c} of mode {u} at {x:?} is not a nonnegative real",
                    system.name()
                )));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Builtin systems
// ---------------------------------------------------------------------------

/// Coefficient of the third feedback gain of the cubic integrator, `−1/2 + √(7/12)`.
pub fn cubic_gain3_coefficient() -> f64 {
    -0.5 + (7.0f64 / 12.0).sqrt()
}

/// Cubic integrator `x₁⁺ = x₁ + u`, `x₂⁺ = x₂ + u³`, switched between three
/// feedback gains `K₁(x) = −x₁`, `K₂(x) = ∛x₂`, `K₃(x) = (−1/2 + √(7/12))∛x₂`.
///
/// Stage cost `ℓ_u(x) = |x₁|³ + |x₂| + |K_u(x)|³`, measure `σ(x) = |x₁|³ + |x₂|`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CubicIntegrator;

impl CubicIntegrator {
    /// Feedback input of mode `mode` at `x`. Cube roots are the real odd root.
    pub fn gain(mode: usize, x: &[f64]) -> f64 {
        match mode {
            1 => -x[0],
            2 => x[1].cbrt(),
            3 => cubic_gain3_coefficient() * x[1].cbrt(),
            _ => unreachable!("mode checked by caller"),
        }
    }

    /// The unswitched integrator driven by a raw scalar input `u`.
    pub fn apply_input(x: &[f64], u: f64) -> [f64; 2] {
        [x[0] + u, x[1] + u * u * u]
    }

    /// Open-loop inputs that bring `x` to the origin in four steps:
    /// `[−x₁, c∛z, ∛z, −(1 + c)∛z]` with `z = x₂ − x₁³` and `c` the
    /// coefficient of `K₃`. The last three inputs sum to zero and their
    /// cubes sum to `−z` because `3c(1 + c) = 1`.
    pub fn deadbeat_inputs(x: &[f64]) -> [f64; 4] {
        let c = cubic_gain3_coefficient();
        let r = (x[1] - x[0].powi(3)).cbrt();
        [-x[0], c * r, r, -(1.0 + c) * r]
    }
}

pub fn cubic_integrator() -> CubicIntegrator {
    CubicIntegrator
}

impl SwitchedSystem for CubicIntegrator {
    fn name(&self) -> &str {
        "cubic_integrator"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn mode_count(&self) -> usize {
        3
    }
    fn dynamics(&self, mode: usize, x: &[f64]) -> Vec<f64> {
        let u = Self::gain(mode, x);
        vec![x[0] + u, x[1] + u * u * u]
    }
    fn stage_cost(&self, mode: usize, x: &[f64]) -> f64 {
        let u = Self::gain(mode, x);
        x[0].abs().powi(3) + x[1].abs() + u.abs().powi(3)
    }
    fn measure(&self, x: &[f64]) -> f64 {
        x[0].abs().powi(3) + x[1].abs()
    }
}

/// Identity dynamics with zero stage cost; `σ` is the 1-norm.
#[derive(Debug, Clone, Copy)]
pub struct ZeroCostFixture {
    pub state_dim: usize,
    pub modes: usize,
}

impl Default for ZeroCostFixture {
    fn default() -> Self {
        ZeroCostFixture { state_dim: 2, modes: 2 }
    }
}

impl SwitchedSystem for ZeroCostFixture {
    fn name(&self) -> &str {
        "zero_cost_fixture"
    }
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn mode_count(&self) -> usize {
        self.modes
    }
    fn dynamics(&self, _mode: usize, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
    fn stage_cost(&self, _mode: usize, _x: &[f64]) -> f64 {
        0.0
    }
    fn measure(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v.abs()).sum()
    }
}

fn mat_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(r, v)| r * v).sum())
        .collect()
}

/// Seeded random affine modes `x⁺ = A_u x + b_u` with
/// `ℓ_u(x) = |x|² + c_u` and `σ(x) = |x|²`.
#[derive(Debug, Clone)]
pub struct RandomAffine {
    pub seed: u64,
    matrices: Vec<Vec<Vec<f64>>>,
    offsets: Vec<Vec<f64>>,
    cost_offsets: Vec<f64>,
}

impl RandomAffine {
    pub fn new(seed: u64, state_dim: usize, modes: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut matrices = Vec::with_capacity(modes);
        let mut offsets = Vec::with_capacity(modes);
        let mut cost_offsets = Vec::with_capacity(modes);
        for _ in 0..modes {
            matrices.push(
                (0..state_dim)
                    .map(|_| (0..state_dim).map(|_| rng.random_range(-0.8..0.8)).collect())
                    .collect(),
            );
            offsets.push((0..state_dim).map(|_| rng.random_range(-0.5..0.5)).collect());
            cost_offsets.push(rng.random_range(0.0..0.5));
        }
        RandomAffine { seed, matrices, offsets, cost_offsets }
    }
}

impl SwitchedSystem for RandomAffine {
    fn name(&self) -> &str {
        "random_affine"
    }
    fn state_dim(&self) -> usize {
        self.offsets[0].len()
    }
    fn mode_count(&self) -> usize {
        self.matrices.len()
    }
    fn dynamics(&self, mode: usize, x: &[f64]) -> Vec<f64> {
        let mut y = mat_vec(&self.matrices[mode - 1], x);
        for (yi, bi) in y.iter_mut().zip(&self.offsets[mode - 1]) {
            *yi += bi;
        }
        y
    }
    fn stage_cost(&self, mode: usize, x: &[f64]) -> f64 {
        self.measure(x) + self.cost_offsets[mode - 1]
    }
    fn measure(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }
}

/// Seeded linear modes `x⁺ = A_u x` with `ℓ_u = σ = |x|_∞`.
///
/// Mode 1 is a contraction with `|A₁ x|_∞ ≤ ρ|x|_∞`, so the infinite-horizon
/// value is at most `σ(x)/(1 − ρ)` for every `γ ∈ (0, 1]`. Together with
/// `W ≡ 0` and `α_W = I` this gives linear certificate data that hold by
/// construction; see [`SigmaCostFixture::linear_params`].
#[derive(Debug, Clone)]
pub struct SigmaCostFixture {
    pub seed: u64,
    pub rho: f64,
    matrices: Vec<Vec<Vec<f64>>>,
}

impl SigmaCostFixture {
    pub fn new(seed: u64, state_dim: usize, modes: usize, rho: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut matrices = Vec::with_capacity(modes);
        for u in 0..modes {
            let mut a: Vec<Vec<f64>> = (0..state_dim)
                .map(|_| (0..state_dim).map(|_| rng.random_range(-1.2..1.2)).collect())
                .collect();
            if u == 0 {
                for row in &mut a {
                    let abs_sum: f64 = row.iter().map(|v| v.abs()).sum();
                    let scale = if abs_sum > 0.0 { rho / abs_sum } else { 0.0 };
                    row.iter_mut().for_each(|v| *v *= scale);
                }
            }
            matrices.push(a);
        }
        SigmaCostFixture { seed, rho, matrices }
    }

    /// `(a_W, ā_V, ā_W) = (1, 1/(1 − ρ), 0)`.
    pub fn linear_params(&self) -> crate::bounds::LinearBoundParams {
        crate::bounds::LinearBoundParams::new(1.0, 1.0 / (1.0 - self.rho), 0.0)
            .expect("rho in [0, 1) gives valid parameters")
    }
}

impl SwitchedSystem for SigmaCostFixture {
    fn name(&self) -> &str {
        "sigma_cost_fixture"
    }
    fn state_dim(&self) -> usize {
        self.matrices[0].len()
    }
    fn mode_count(&self) -> usize {
        self.matrices.len()
    }
    fn dynamics(&self, mode: usize, x: &[f64]) -> Vec<f64> {
        mat_vec(&self.matrices[mode - 1], x)
    }
    fn stage_cost(&self, _mode: usize, x: &[f64]) -> f64 {
        self.measure(x)
    }
    fn measure(&self, x: &[f64]) -> f64 {
        x.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// One-dimensional system whose modes all expand: `x⁺ = 2x` or `x⁺ = 3x`,
/// with `ℓ = σ = |x|`. No input sequence converges.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpansiveFixture;

impl SwitchedSystem for ExpansiveFixture {
    fn name(&self) -> &str {
        "expansive_fixture"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn mode_count(&self) -> usize {
        2
    }
    fn dynamics(&self, mode: usize, x: &[f64]) -> Vec<f64> {
        vec![(mode as f64 + 1.0) * x[0]]
    }
    fn stage_cost(&self, _mode: usize, x: &[f64]) -> f64 {
        x[0].abs()
    }
    fn measure(&self, x: &[f64]) -> f64 {
        x[0].abs()
    }
}

type DynamicsFn = dyn Fn(usize, &[f64]) -> Vec<f64> + Send + Sync;
type CostFn = dyn Fn(usize, &[f64]) -> f64 + Send + Sync;
type MeasureFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A system assembled from closures.
pub struct FnSystem {
    name: String,
    state_dim: usize,
    modes: usize,
    dynamics: Box<DynamicsFn>,
    stage_cost: Box<CostFn>,
    measure: Box<MeasureFn>,
}

impl FnSystem {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        modes: usize,
        dynamics: impl Fn(usize, &[f64]) -> Vec<f64> + Send + Sync + 'static,
        stage_cost: impl Fn(usize, &[f64]) -> f64 + Send + Sync + 'static,
        measure: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        FnSystem {
            name: name.into(),
            state_dim,
            modes,
            dynamics: Box::new(dynamics),
            stage_cost: Box::new(stage_cost),
            measure: Box::new(measure),
        }
    }
}

impl fmt::Debug for FnSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnSystem")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("modes", &self.modes)
            .finish_non_exhaustive()
    }
}

impl SwitchedSystem for FnSystem {
    fn name(&self) -> &str {
        &self.name
    }
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn mode_count(&self) -> usize {
        self.modes
    }
    fn dynamics(&self, mode: usize, x: &[f64]) -> Vec<f64> {
        (self.dynamics)(mode, x)
    }
    fn stage_cost(&self, mode: usize, x: &[f64]) -> f64 {
        (self.stage_cost)(mode, x)
    }
    fn measure(&self, x: &[f64]) -> f64 {
        (self.measure)(x)
    }
}

/// Named builtin system plus its construction parameters, as found in
/// experiment config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

impl SystemSpec {
    pub fn named(name: &str) -> Self {
        SystemSpec { name: name.to_string(), seed: None, state_dim: None, modes: None, rho: None }
    }
}

/// Names accepted by [`build_system`].
pub const BUILTIN_SYSTEMS: &[&str] = &[
    "cubic_integrator",
    "zero_cost_fixture",
    "random_affine",
    "sigma_cost_fixture",
    "expansive_fixture",
];

const VALIDATION_SAMPLES: usize = 256;

/// Constructs and validates a builtin system.
pub fn build_system(spec: &SystemSpec) -> Result<Arc<dyn SwitchedSystem>> {
    let reject = |field: &str| {
        Err(Error::Config(format!("system `{}` does not take `{field}`", spec.name)))
    };
    let system: Arc<dyn SwitchedSystem> = match spec.name.as_str() {
        "cubic_integrator" | "expansive_fixture" => {
            if spec.seed.is_some() {
                return reject("seed");
            }
            if spec.state_dim.is_some() {
                return reject("state_dim");
            }
            if spec.modes.is_some() {
                return reject("modes");
            }
            if spec.rho.is_some() {
                return reject("rho");
            }
            if spec.name == "cubic_integrator" {
                Arc::new(CubicIntegrator)
            } else {
                Arc::new(ExpansiveFixture)
            }
        }
        "zero_cost_fixture" => {
            if spec.seed.is_some() {
                return reject("seed");
            }
            if spec.rho.is_some() {
                return reject("rho");
            }
            Arc::new(ZeroCostFixture {
                state_dim: spec.state_dim.unwrap_or(2),
                modes: spec.modes.unwrap_or(2),
            })
        }
        "random_affine" => {
            if spec.rho.is_some() {
                return reject("rho");
            }
            let seed = spec
                .seed
                .ok_or_else(|| Error::Config("random_affine requires `seed`".into()))?;
            Arc::new(RandomAffine::new(seed, spec.state_dim.unwrap_or(2), spec.modes.unwrap_or(3)))
        }
        "sigma_cost_fixture" => {
            let seed = spec
                .seed
                .ok_or_else(|| Error::Config("sigma_cost_fixture requires `seed`".into()))?;
            let rho = spec.rho.unwrap_or(0.5);
            if !(0.0..1.0).contains(&rho) {
                return Err(Error::Config(format!("rho = {rho} not in [0, 1)")));
            }
            Arc::new(SigmaCostFixture::new(
                seed,
                spec.state_dim.unwrap_or(2),
                spec.modes.unwrap_or(2),
                rho,
            ))
        }
        other => return Err(Error::UnknownSystem(other.to_string())),
    };
    validate(system.as_ref(), VALIDATION_SAMPLES, 0)?;
    Ok(system)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cubic_step_examples() {
        let sys = cubic_integrator();
        assert_eq!(step(&sys, 1, &[2.0, 5.0]).unwrap(), vec![0.0, -3.0]);
        assert_eq!(step(&sys, 2, &[0.0, 8.0]).unwrap(), vec![2.0, 16.0]);
    }

    #[test]
    fn zero_cost_fixture_is_identity() {
        let sys = ZeroCostFixture::default();
        assert_eq!(step(&sys, 2, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(step(&sys, 1, &[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
    }

    #[test]
    fn step_rejects_bad_mode_and_overflow() {
        let sys = cubic_integrator();
        assert!(matches!(step(&sys, 0, &[1.0, 1.0]), Err(Error::ModeOutOfRange { .. })));
        assert!(matches!(step(&sys, 4, &[1.0, 1.0]), Err(Error::ModeOutOfRange { .. })));
        assert!(matches!(
            step(&sys, 2, &[0.0, f64::MAX]),
            Err(Error::NumericalOverflow { .. })
        ));
        assert!(matches!(step(&sys, 1, &[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn cubic_measure_and_coefficient() {
        let sys = cubic_integrator();
        assert_eq!(sys.measure(&[-1.0, 1.5]), 2.5);
        assert_eq!(sys.measure(&[0.0, 0.0]), 0.0);
        assert!((cubic_gain3_coefficient() - 0.263_762_615_825_973_3).abs() < 1e-15);
    }

    #[test]
    fn cube_root_is_odd() {
        assert_eq!(CubicIntegrator::gain(2, &[0.0, -8.0]), -2.0);
    }

    #[test]
    fn rollout_single_step_cost() {
        let sys = cubic_integrator();
        let seq = InputSequence::new(vec![1], 3).unwrap();
        let r = rollout(&sys, &[-1.0, 1.5], &seq, 1.0).unwrap();
        assert_eq!(r.cost, 3.5);
        assert_eq!(r.states.len(), 2);
    }

    #[test]
    fn rollout_empty_sequence() {
        let sys = cubic_integrator();
        let r = rollout(&sys, &[-1.0, 1.5], &InputSequence::empty(), 0.7).unwrap();
        assert_eq!(r.cost, 0.0);
        assert_eq!(r.states, vec![vec![-1.0, 1.5]]);
    }

    #[test]
    fn rollout_rejects_bad_gamma() {
        let sys = cubic_integrator();
        let seq = InputSequence::new(vec![1], 3).unwrap();
        assert!(rollout(&sys, &[0.0, 0.0], &seq, 0.0).is_err());
        assert!(rollout(&sys, &[0.0, 0.0], &seq, 1.5).is_err());
    }

    #[test]
    fn rollout_reports_overflow_step() {
        let sys = ExpansiveFixture;
        let seq = InputSequence::new(vec![2; 700], 2).unwrap();
        match rollout(&sys, &[1.0], &seq, 1.0) {
            Err(Error::NumericalOverflow { step, .. }) => assert!(step > 600),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn zero_cost_rollout_is_zero() {
        let sys = ZeroCostFixture { state_dim: 3, modes: 4 };
        let seq = InputSequence::new(vec![4, 1, 2, 3, 3], 4).unwrap();
        assert_eq!(rollout(&sys, &[1.0, 2.0, 3.0], &seq, 0.5).unwrap().cost, 0.0);
    }

    #[test]
    fn input_sequence_validation() {
        assert!(InputSequence::new(vec![1, 2, 3], 3).is_ok());
        assert!(InputSequence::new(vec![1, 0], 3).is_err());
        assert!(InputSequence::new(vec![4], 3).is_err());
        assert_eq!(InputSequence::new(vec![3, 1, 2], 3).unwrap().to_string(), "3 1 2");
    }

    #[test]
    fn validation_rejects_negative_cost() {
        let sys = FnSystem::new("neg", 1, 2, |_, x| x.to_vec(), |_, x| x[0], |x| x[0].abs());
        assert!(matches!(validate(&sys, 64, 1), Err(Error::InvalidSystem(_))));
        let single = FnSystem::new("one", 1, 1, |_, x| x.to_vec(), |_, _| 0.0, |_| 0.0);
        assert!(validate(&single, 8, 1).is_err());
    }

    #[test]
    fn registry_builds_every_builtin() {
        for name in BUILTIN_SYSTEMS {
            let mut spec = SystemSpec::named(name);
            if name.starts_with("random") || name.starts_with("sigma") {
                spec.seed = Some(42);
            }
            let sys = build_system(&spec).unwrap();
            assert_eq!(sys.name(), *name);
        }
        assert!(matches!(
            build_system(&SystemSpec::named("nope")),
            Err(Error::UnknownSystem(_))
        ));
        assert!(build_system(&SystemSpec::named("random_affine")).is_err());
        let mut bad = SystemSpec::named("cubic_integrator");
        bad.seed = Some(1);
        assert!(build_system(&bad).is_err());
    }

    #[test]
    fn sigma_fixture_mode_one_contracts() {
        let sys = SigmaCostFixture::new(3, 3, 2, 0.6);
        let x = [1.0, -2.0, 0.5];
        let y = sys.dynamics(1, &x);
        assert!(sys.measure(&y) <= 0.6 * sys.measure(&x) + 1e-12);
    }

    fn naive_cost(sys: &dyn SwitchedSystem, x0: &[f64], seq: &[usize], gamma: f64) -> f64 {
        let mut x = x0.to_vec();
        let mut total = 0.0;
        let mut weight = 1.0;
        for &u in seq {
            total += weight * sys.stage_cost(u, &x);
            x = sys.dynamics(u, &x);
            weight *= gamma;
        }
        total
    }

    proptest! {
        #[test]
        fn rollout_matches_naive_sum(
            seed in 0u64..1000,
            seq in prop::collection::vec(1usize..=3, 0..8),
            gamma in 0.05f64..=1.0,
        ) {
            let sys = RandomAffine::new(seed, 2, 3);
            let x0 = [0.3, -0.7];
            let r = rollout(&sys, &x0, &InputSequence::new(seq.clone(), 3).unwrap(), gamma).unwrap();
            let expected = naive_cost(&sys, &x0, &seq, gamma);
            prop_assert!((r.cost - expected).abs() <= 1e-12 * expected.max(1.0));
            prop_assert_eq!(r.states.len(), seq.len() + 1);
        }

        #[test]
        fn undiscounted_rollout_is_plain_sum(seq in prop::collection::vec(1usize..=3, 1..6)) {
            let sys = cubic_integrator();
            let x0 = [0.4, -1.1];
            let r = rollout(&sys, &x0, &InputSequence::new(seq.clone(), 3).unwrap(), 1.0).unwrap();
            let plain: f64 = seq.iter().enumerate()
                .map(|(k, &u)| sys.stage_cost(u, &r.states[k]))
                .sum();
            prop_assert!((r.cost - plain).abs() <= 1e-12 * plain.max(1.0));
        }

        #[test]
        fn extending_a_sequence_never_lowers_cost(
            prefix in prop::collection::vec(1usize..=3, 1..5),
            suffix in prop::collection::vec(1usize..=3, 0..5),
            gamma in 0.1f64..=1.0,
        ) {
            let sys = cubic_integrator();
            let x0 = [1.2, -0.4];
            let short = rollout(&sys, &x0, &InputSequence::new(prefix.clone(), 3).unwrap(), gamma).unwrap();
            let mut long_seq = prefix;
            long_seq.extend(suffix);
            let long = rollout(&sys, &x0, &InputSequence::new(long_seq, 3).unwrap(), gamma).unwrap();
            prop_assert!(long.cost >= short.cost);
        }

        #[test]
        fn cubic_open_loop_deadbeat(x1 in -20.0f64..20.0, x2 in -20.0f64..20.0) {
            let sys = cubic_integrator();
            let mut x = [x1, x2];
            for u in CubicIntegrator::deadbeat_inputs(&x) {
                x = CubicIntegrator::apply_input(&x, u);
            }
            prop_assert!(sys.measure(&x) < 1e-9, "sigma = {}", sys.measure(&x));
        }
    }
}
