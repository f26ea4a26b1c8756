//! Brute-force references for small instances.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bounds::{error_bound_general, error_bound_linear, BoundParams};
use crate::error::{Error, Result};
use crate::planner::{plan, solve_fixed_horizon};
use crate::system::{
    check_gamma, check_state, discount_weight, InputSequence, RandomAffine, SwitchedSystem,
};

/// Default cap on the number of enumerated sequences.
pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;

/// Exact minimum of the horizon-`d` cost over all `M^{d+1}` sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub value: f64,
    /// Every minimizer, in lexicographic order.
    pub optimal_sequences: Vec<InputSequence>,
    /// `U*_{γ,d}(x)`.
    pub first_input_set: BTreeSet<usize>,
    /// Number of complete sequences evaluated; always `M^{d+1}`.
    pub enumerated: u64,
}

/// Enumerates every sequence of length `d + 1`. Fails when `M^{d+1}`
/// exceeds `cap`.
pub fn brute_force_value(
    system: &dyn SwitchedSystem,
    x: &[f64],
    d: usize,
    gamma: f64,
    cap: u64,
) -> Result<OracleResult> {
    check_gamma(gamma)?;
    check_state(system, x)?;
    let m = system.mode_count();
    let count = u32::try_from(d + 1)
        .ok()
        .and_then(|e| (m as u64).checked_pow(e))
        .filter(|&c| c <= cap)
        .ok_or_else(|| Error::ResourceCap { count: format!("{m}^{}", d + 1), cap })?;

    let mut search = Enumeration::new(system, gamma, d, None);
    search.descend(x, 0.0)?;
    debug_assert_eq!(search.enumerated, count);
    Ok(search.finish())
}

/// Exhaustive depth-first search that skips a subtree once its partial cost
/// strictly exceeds the best complete cost found so far. Stage costs are
/// nonnegative, so this returns exactly what [`brute_force_value`] would,
/// including every tied minimizer; `enumerated` counts complete sequences
/// actually evaluated. Fails after visiting `node_cap` nodes.
pub fn pruned_exhaustive_value(
    system: &dyn SwitchedSystem,
    x: &[f64],
    d: usize,
    gamma: f64,
    node_cap: u64,
) -> Result<OracleResult> {
    check_gamma(gamma)?;
    check_state(system, x)?;
    let mut search = Enumeration::new(system, gamma, d, Some(node_cap));
    search.descend(x, 0.0)?;
    Ok(search.finish())
}

struct Enumeration<'a> {
    system: &'a dyn SwitchedSystem,
    gamma: f64,
    horizon: usize,
    best: f64,
    argmin: Vec<Vec<usize>>,
    prefix: Vec<usize>,
    enumerated: u64,
    /// Set for the pruned variant.
    node_cap: Option<u64>,
    visited: u64,
}

impl<'a> Enumeration<'a> {
    fn new(system: &'a dyn SwitchedSystem, gamma: f64, horizon: usize, node_cap: Option<u64>) -> Self {
        Enumeration {
            system,
            gamma,
            horizon,
            best: f64::INFINITY,
            argmin: Vec::new(),
            prefix: Vec::with_capacity(horizon + 1),
            enumerated: 0,
            node_cap,
            visited: 0,
        }
    }

    fn finish(self) -> OracleResult {
        let first_input_set = self.argmin.iter().map(|s| s[0]).collect();
        OracleResult {
            value: self.best,
            optimal_sequences: self.argmin.into_iter().map(InputSequence::from_vec_unchecked).collect(),
            first_input_set,
            enumerated: self.enumerated,
        }
    }

    // Depth-first with the same accumulation order as the planner and
    // `rollout`, so equal sequences give bit-equal costs.
    fn descend(&mut self, x: &[f64], cost: f64) -> Result<()> {
        let k = self.prefix.len();
        let weight = discount_weight(self.gamma, k);
        for mode in 1..=self.system.mode_count() {
            let total = cost + weight * self.system.stage_cost(mode, x);
            if let Some(cap) = self.node_cap {
                self.visited += 1;
                if self.visited > cap {
                    return Err(Error::ResourceCap { count: format!("more than {cap} nodes"), cap });
                }
                if total > self.best {
                    continue;
                }
            }
            self.prefix.push(mode);
            if k == self.horizon {
                self.enumerated += 1;
                if total < self.best {
                    self.best = total;
                    self.argmin.clear();
                    self.argmin.push(self.prefix.clone());
                } else if total == self.best {
                    self.argmin.push(self.prefix.clone());
                }
            } else {
                let next = self.system.dynamics(mode, x);
                if !next.iter().all(|v| v.is_finite()) {
                    return Err(Error::NumericalOverflow { step: k + 1, state: next });
                }
                self.descend(&next, total)?;
            }
            self.prefix.pop();
        }
        Ok(())
    }
}

/// `V_{γ,D}(x)` by enumeration when `M^{D+1} ≤ cap`, otherwise by the
/// optimistic fixed-horizon search bounded by `cap` expansions.
pub fn value_at_horizon(
    system: &dyn SwitchedSystem,
    x: &[f64],
    d: usize,
    gamma: f64,
    cap: u64,
) -> Result<f64> {
    match brute_force_value(system, x, d, gamma, cap) {
        Ok(r) => Ok(r.value),
        Err(Error::ResourceCap { .. }) => Ok(solve_fixed_horizon(system, x, gamma, d, cap)?.0),
        Err(e) => Err(e),
    }
}

/// Interval containing `V_{γ,∞}(x)`: `[V_{γ,D}(x), V_{γ,D}(x) + v_{γ,D}(x)]`.
pub fn bracket_infinite_value(
    system: &dyn SwitchedSystem,
    x: &[f64],
    gamma: f64,
    horizon: usize,
    params: &BoundParams,
    cap: u64,
) -> Result<(f64, f64)> {
    let lower = value_at_horizon(system, x, horizon, gamma, cap)?;
    let sigma = system.measure(x);
    let width = match params {
        BoundParams::Linear(p) => error_bound_linear(sigma, p, horizon),
        BoundParams::General(data) => error_bound_general(sigma, gamma, horizon, data)?,
    };
    Ok((lower, lower + width))
}

/// A randomized planner-vs-enumeration instance on a [`RandomAffine`] system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleInstance {
    pub index: usize,
    pub system_seed: u64,
    pub modes: usize,
    pub state_dim: usize,
    pub gamma: f64,
    pub budget: u64,
    pub x0: Vec<f64>,
}

/// Outcome of [`check_instance`].
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub instance: OracleInstance,
    pub horizon: usize,
    pub plan_value: f64,
    pub oracle_value: f64,
    pub relative_error: f64,
    pub first_input: usize,
    pub first_input_set: BTreeSet<usize>,
    pub passed: bool,
}

/// Draws `count` instances with `M ∈ {2, 3}`, `n ∈ {1, 2, 3}`,
/// `γ ∈ {0.8, 0.95, 1}`, `B ∈ [1, max_budget]` and `x0 ∈ [−2, 2]^n`.
pub fn sample_instances(seed: u64, count: usize, max_budget: u64) -> Vec<OracleInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|index| {
            let modes = rng.random_range(2..=3);
            let state_dim = rng.random_range(1..=3);
            let gamma = [0.8, 0.95, 1.0][rng.random_range(0..3)];
            let budget = rng.random_range(1..=max_budget.max(1));
            let x0 = (0..state_dim).map(|_| rng.random_range(-2.0..=2.0)).collect();
            OracleInstance { index, system_seed: rng.random(), modes, state_dim, gamma, budget, x0 }
        })
        .collect()
}

/// Plans on the instance and compares with enumeration at the reached horizon,
/// switching to [`pruned_exhaustive_value`] when `M^{d+1}` exceeds `cap`.
pub fn check_instance(instance: &OracleInstance, cap: u64, rel_tol: f64) -> Result<OracleCheck> {
    let sys = RandomAffine::new(instance.system_seed, instance.state_dim, instance.modes);
    let result = plan(&sys, &instance.x0, instance.gamma, instance.budget)?;
    let oracle = match brute_force_value(&sys, &instance.x0, result.horizon, instance.gamma, cap) {
        Err(Error::ResourceCap { .. }) => {
            pruned_exhaustive_value(&sys, &instance.x0, result.horizon, instance.gamma, cap)?
        }
        other => other?,
    };
    let diff = (result.value - oracle.value).abs();
    let relative_error = if oracle.value == 0.0 { diff } else { diff / oracle.value.abs() };
    let first_input = result.first_input();
    Ok(OracleCheck {
        instance: instance.clone(),
        horizon: result.horizon,
        plan_value: result.value,
        oracle_value: oracle.value,
        relative_error,
        first_input,
        passed: relative_error <= rel_tol && oracle.first_input_set.contains(&first_input),
        first_input_set: oracle.first_input_set,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::LinearBoundParams;
    use crate::planner::plan;
    use crate::system::{cubic_integrator, rollout, RandomAffine, ZeroCostFixture};

    #[test]
    fn zero_cost_everything_ties() {
        let sys = ZeroCostFixture::default();
        let r = brute_force_value(&sys, &[1.0, 1.0], 2, 0.9, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.optimal_sequences.len(), 8);
        assert_eq!(r.first_input_set, BTreeSet::from([1, 2]));
        assert_eq!(r.enumerated, 8);
        let mut sorted = r.optimal_sequences.clone();
        sorted.sort();
        assert_eq!(sorted, r.optimal_sequences);
    }

    #[test]
    fn horizon_zero_is_min_stage_cost() {
        let sys = cubic_integrator();
        let x = [-1.0, 1.5];
        let r = brute_force_value(&sys, &x, 0, 1.0, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(sys.stage_cost(1, &x), 3.5);
        // ℓ₂ = 4, ℓ₃ = 2.5 + (0.26376·∛1.5)³ ≈ 2.5275
        assert!((sys.stage_cost(2, &x) - 4.0).abs() < 1e-12);
        assert!((r.value - 2.527_525_231_651_946_7).abs() < 1e-12);
        assert_eq!(r.first_input_set, BTreeSet::from([3]));
    }

    #[test]
    fn random_affine_matches_planner() {
        let sys = RandomAffine::new(42, 2, 3);
        let x = [0.5, -0.5];
        let r = plan(&sys, &x, 0.9, 30).unwrap();
        let o = brute_force_value(&sys, &x, r.horizon, 0.9, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(r.value, o.value);
        assert!(o.first_input_set.contains(&r.first_input()));
        let o3 = brute_force_value(&sys, &x, 3, 0.9, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(o3.value, r.values_by_horizon[3]);
    }

    #[test]
    fn every_minimizer_attains_value() {
        let sys = RandomAffine::new(5, 2, 2);
        let x = [1.0, 0.0];
        let r = brute_force_value(&sys, &x, 4, 1.0, DEFAULT_ENUMERATION_CAP).unwrap();
        for s in &r.optimal_sequences {
            assert_eq!(rollout(&sys, &x, s, 1.0).unwrap().cost, r.value);
        }
        assert_eq!(r.enumerated, 32);
    }

    #[test]
    fn cap_is_enforced() {
        let sys = cubic_integrator();
        match brute_force_value(&sys, &[1.0, 1.0], 5, 1.0, 100) {
            Err(Error::ResourceCap { count, cap }) => {
                assert_eq!(count, "3^6");
                assert_eq!(cap, 100);
            }
            other => panic!("expected cap error, got {other:?}"),
        }
    }

    #[test]
    fn cubic_first_input_in_oracle_set() {
        let sys = cubic_integrator();
        let x = [-1.0, 1.5];
        // with B = 3000 the horizon is far beyond enumeration, so use a budget giving d ≤ 6
        let r = plan(&sys, &x, 1.0, 7).unwrap();
        assert!(r.horizon <= 6);
        let o = brute_force_value(&sys, &x, r.horizon, 1.0, DEFAULT_ENUMERATION_CAP).unwrap();
        assert!(o.first_input_set.contains(&r.first_input()));
        assert_eq!(r.value, o.value);
    }

    #[test]
    fn bracket_at_sigma_zero_is_degenerate() {
        let sys = ZeroCostFixture::default();
        let p = BoundParams::Linear(LinearBoundParams::new(1.0, 14.0, 0.0).unwrap());
        let (lo, hi) = bracket_infinite_value(&sys, &[0.0, 0.0], 1.0, 3, &p, 1000).unwrap();
        assert_eq!((lo, hi), (0.0, 0.0));
    }

    #[test]
    fn cubic_bracket_width() {
        let sys = cubic_integrator();
        let p = BoundParams::Linear(LinearBoundParams::new(1.0, 14.0, 0.0).unwrap());
        let (lo, hi) =
            bracket_infinite_value(&sys, &[-1.0, 1.5], 1.0, 10, &p, DEFAULT_ENUMERATION_CAP)
                .unwrap();
        // 196·(13/14)^10·2.5, evaluated at 40 digits
        assert!((hi - lo - 233.533_531_246_419_54).abs() < 1e-9);
    }

    #[test]
    fn fallback_search_agrees_with_enumeration() {
        let sys = RandomAffine::new(11, 2, 3);
        let x = [0.2, 0.9];
        let exact = brute_force_value(&sys, &x, 6, 0.95, DEFAULT_ENUMERATION_CAP).unwrap().value;
        // cap below 3^7 forces the optimistic fixed-horizon route
        let fallback = value_at_horizon(&sys, &x, 6, 0.95, 2000).unwrap();
        assert_eq!(exact, fallback);
    }

    #[test]
    fn pruned_search_matches_full_enumeration() {
        for seed in 0..20 {
            let sys = RandomAffine::new(seed, 2, 3);
            let x = [1.0 - 0.1 * seed as f64, 0.5];
            let full = brute_force_value(&sys, &x, 6, 0.95, DEFAULT_ENUMERATION_CAP).unwrap();
            let pruned = pruned_exhaustive_value(&sys, &x, 6, 0.95, DEFAULT_ENUMERATION_CAP).unwrap();
            assert_eq!(full.value, pruned.value);
            assert_eq!(full.optimal_sequences, pruned.optimal_sequences);
            assert!(pruned.enumerated <= full.enumerated);
        }
        // every sequence ties
        let z = ZeroCostFixture::default();
        let r = pruned_exhaustive_value(&z, &[1.0, 1.0], 2, 0.9, 1000).unwrap();
        assert_eq!(r.optimal_sequences.len(), 8);
        assert!(pruned_exhaustive_value(&z, &[1.0, 1.0], 12, 0.9, 1000).is_err());
    }

    #[test]
    fn sampled_instances_are_reproducible_and_pass() {
        let a = sample_instances(7, 20, 30);
        assert_eq!(a, sample_instances(7, 20, 30));
        assert_ne!(a, sample_instances(8, 20, 30));
        for inst in &a {
            assert!((2..=3).contains(&inst.modes) && (1..=3).contains(&inst.state_dim));
            let c = check_instance(inst, DEFAULT_ENUMERATION_CAP, 1e-9).unwrap();
            assert!(c.passed, "{c:?}");
        }
    }
}
