//! Optimistic best-first planning (OPmin).
//!
//! The planner grows a tree of input sequences from the current state. At
//! every iteration the non-expanded leaf with the smallest discounted cost
//! `J` is expanded, i.e. one child per mode is added. Because stage costs
//! are nonnegative, `J` never decreases along a path, so the first time a
//! leaf of depth `d + 1` is popped its cost is the exact optimum of the
//! horizon-`d` problem. With budget `B` the planner performs `B + 1`
//! expansions and returns the deepest such optimum.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_bigint::BigUint;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::system::{check_gamma, check_state, discount_weight, InputSequence, SwitchedSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A node of the exploration tree.
#[derive(Debug, Clone)]
pub struct TreeNode {
    pub parent: Option<NodeId>,
    /// Mode on the edge from the parent; `None` at the root.
    pub edge_mode: Option<usize>,
    /// `φ(depth, x, u(node))`.
    pub state: Vec<f64>,
    /// Number of edges from the root.
    pub depth: usize,
    /// Discounted cost of the path from the root, `J_{γ, depth−1}`.
    pub cost: f64,
    pub expanded: bool,
}

/// Open-list key. `BinaryHeap` is a max-heap, so `Ord` is reversed:
/// the greatest entry is the one with the smallest cost, then the deepest,
/// then the smallest edge mode, then the earliest inserted.
#[derive(Debug, Clone, Copy)]
struct OpenEntry {
    cost: f64,
    depth: usize,
    mode: usize,
    insertion: u64,
    id: NodeId,
}

impl Ord for OpenEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then(self.depth.cmp(&other.depth))
            .then(other.mode.cmp(&self.mode))
            .then(other.insertion.cmp(&self.insertion))
    }
}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenEntry {}

/// Counters describing one planner run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SearchStats {
    pub nodes_expanded: u64,
    pub nodes_created: u64,
    pub max_depth_reached: usize,
    pub open_list_peak: usize,
}

/// The exploration tree with its open list of non-expanded leaves.
pub struct PlanTree<'a> {
    system: &'a dyn SwitchedSystem,
    gamma: f64,
    nodes: Vec<TreeNode>,
    open: BinaryHeap<OpenEntry>,
    stats: SearchStats,
}

impl<'a> PlanTree<'a> {
    /// A tree holding only the root: the empty sequence with cost 0.
    pub fn new(system: &'a dyn SwitchedSystem, x: &[f64], gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        check_state(system, x)?;
        let root = TreeNode {
            parent: None,
            edge_mode: None,
            state: x.to_vec(),
            depth: 0,
            cost: 0.0,
            expanded: false,
        };
        let mut open = BinaryHeap::new();
        open.push(OpenEntry { cost: 0.0, depth: 0, mode: 0, insertion: 0, id: NodeId(0) });
        Ok(PlanTree {
            system,
            gamma,
            nodes: vec![root],
            open,
            stats: SearchStats { nodes_created: 1, open_list_peak: 1, ..SearchStats::default() },
        })
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id.index()]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn stats(&self) -> SearchStats {
        self.stats
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Ids of the current leaves (non-expanded nodes), in open-list order.
    pub fn open_leaves(&self) -> Vec<NodeId> {
        let mut entries: Vec<OpenEntry> = self.open.iter().copied().collect();
        entries.sort_by(|a, b| b.cmp(a));
        entries.into_iter().map(|e| e.id).collect()
    }

    /// Input sequence from the root to `id`.
    pub fn sequence_to(&self, id: NodeId) -> InputSequence {
        let mut modes = Vec::with_capacity(self.node(id).depth);
        let mut cur = id;
        while let Some(parent) = self.node(cur).parent {
            modes.push(self.node(cur).edge_mode.expect("non-root node has an edge mode"));
            cur = parent;
        }
        modes.reverse();
        InputSequence::from_vec_unchecked(modes)
    }

    /// Pops the optimistic leaf and adds its children. Returns the popped id.
    pub fn expand_optimistic(&mut self) -> Result<NodeId> {
        let entry = self.open.pop().expect("a finite tree always has a leaf");
        debug_assert!(self
            .open
            .peek()
            .is_none_or(|next| entry.cost.total_cmp(&next.cost).is_le()));
        let id = entry.id;
        let (parent_state, parent_cost, parent_depth) = {
            let node = &self.nodes[id.index()];
            (node.state.clone(), node.cost, node.depth)
        };
        let weight = discount_weight(self.gamma, parent_depth);
        let mut insertion = self.stats.nodes_created;
        for mode in 1..=self.system.mode_count() {
            let stage = self.system.stage_cost(mode, &parent_state);
            let state = self.system.dynamics(mode, &parent_state);
            let cost = parent_cost + weight * stage;
            if !cost.is_finite() || !state.iter().all(|v| v.is_finite()) {
                return Err(Error::PlanOverflow { stats: self.stats, state });
            }
            let child = NodeId(
                u32::try_from(self.nodes.len())
                    .map_err(|_| Error::IntegerOverflow("tree node count".into()))?,
            );
            self.nodes.push(TreeNode {
                parent: Some(id),
                edge_mode: Some(mode),
                state,
                depth: parent_depth + 1,
                cost,
                expanded: false,
            });
            self.open.push(OpenEntry { cost, depth: parent_depth + 1, mode, insertion, id: child });
            insertion += 1;
        }
        self.nodes[id.index()].expanded = true;
        self.stats.nodes_expanded += 1;
        self.stats.nodes_created = insertion;
        self.stats.max_depth_reached = self.stats.max_depth_reached.max(parent_depth + 1);
        self.stats.open_list_peak = self.stats.open_list_peak.max(self.open.len());
        Ok(id)
    }
}

/// Output of one planner call.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    /// Reached horizon `d(x) = depth(S) − 1`.
    pub horizon: usize,
    /// Optimal sequence of length `d(x) + 1`.
    pub sequence: InputSequence,
    /// `V_{γ, d(x)}(x)`.
    pub value: f64,
    /// `values_by_horizon[d] = V_{γ, d}(x)` for every `d ≤ d(x)`, recorded at
    /// each leaf-selection update.
    pub values_by_horizon: Vec<f64>,
    pub stats: SearchStats,
}

impl PlanResult {
    /// The mode applied in receding-horizon control: an element of `U*_{γ,d(x)}(x)`.
    pub fn first_input(&self) -> usize {
        self.sequence.first().expect("plan sequences are never empty")
    }
}

/// Free-function form of [`PlanResult::first_input`].
pub fn first_input(result: &PlanResult) -> usize {
    result.first_input()
}

/// One iteration of the search, passed to the trace callback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpansionEvent {
    pub iteration: u64,
    pub depth: usize,
    pub cost: f64,
    /// Whether this expansion updated the selected leaf `S`.
    pub selected: bool,
    /// Horizon after this iteration (`None` while only the root has been expanded).
    pub horizon: Option<usize>,
}

/// Runs OPmin with budget `B`, i.e. `B + 1` leaf expansions.
pub fn plan(system: &dyn SwitchedSystem, x: &[f64], gamma: f64, budget: u64) -> Result<PlanResult> {
    plan_with_trace(system, x, gamma, budget, |_| {})
}

/// [`plan`] with a callback invoked after each expansion.
pub fn plan_with_trace(
    system: &dyn SwitchedSystem,
    x: &[f64],
    gamma: f64,
    budget: u64,
    mut on_expand: impl FnMut(&ExpansionEvent),
) -> Result<PlanResult> {
    if budget < 1 {
        return Err(Error::Precondition("budget must be at least 1".into()));
    }
    let mut tree = PlanTree::new(system, x, gamma)?;
    let mut selected: Option<NodeId> = None;
    let mut values_by_horizon = Vec::new();
    for iteration in 0..=budget {
        let leaf = tree.expand_optimistic()?;
        let node = tree.node(leaf);
        // depth(L) − 1 > d, with d = −1 before the first update
        let is_update = node.depth > values_by_horizon.len();
        if is_update {
            debug_assert_eq!(node.depth - 1, values_by_horizon.len());
            values_by_horizon.push(node.cost);
            selected = Some(leaf);
        }
        on_expand(&ExpansionEvent {
            iteration,
            depth: node.depth,
            cost: node.cost,
            selected: is_update,
            horizon: values_by_horizon.len().checked_sub(1),
        });
    }
    let s = selected.expect("iteration 1 always selects a leaf when B >= 1");
    let leaf = tree.node(s);
    Ok(PlanResult {
        horizon: leaf.depth - 1,
        sequence: tree.sequence_to(s),
        value: leaf.cost,
        values_by_horizon,
        stats: tree.stats(),
    })
}

/// Exact `V_{γ,d}(x)` and a minimizing sequence for a fixed horizon `d`.
///
/// Expands optimistically until the first leaf of depth `d + 1` is popped.
/// Fails with [`Error::ResourceCap`] after `max_expansions` expansions.
pub fn solve_fixed_horizon(
    system: &dyn SwitchedSystem,
    x: &[f64],
    gamma: f64,
    horizon: usize,
    max_expansions: u64,
) -> Result<(f64, InputSequence)> {
    let mut tree = PlanTree::new(system, x, gamma)?;
    loop {
        if tree.stats().nodes_expanded >= max_expansions {
            return Err(Error::ResourceCap {
                count: format!("more than {max_expansions} expansions"),
                cap: max_expansions,
            });
        }
        let leaf = tree.expand_optimistic()?;
        if tree.node(leaf).depth == horizon + 1 {
            return Ok((tree.node(leaf).cost, tree.sequence_to(leaf)));
        }
    }
}

fn check_modes(modes: usize) -> Result<()> {
    if modes < 2 {
        return Err(Error::Precondition(format!("mode count {modes} < 2")));
    }
    Ok(())
}

/// `(M^{d̄+1} − 1)/(M − 1)` computed exactly.
pub fn min_budget_for_depth_exact(d_bar: u32, modes: usize) -> Result<BigUint> {
    check_modes(modes)?;
    let m = BigUint::from(modes);
    Ok((m.pow(d_bar + 1) - 1u32) / (m - 1u32))
}

/// Budget guaranteeing `d̄ ≤ d(x) ≤ B − 1` for any system with `modes` modes.
pub fn min_budget_for_depth(d_bar: u32, modes: usize) -> Result<u64> {
    check_modes(modes)?;
    let m = modes as u64;
    // 1 + M + … + M^{d̄}
    let mut total: u64 = 0;
    let mut power: u64 = 1;
    for i in 0..=d_bar {
        total = total.checked_add(power).ok_or_else(|| overflow(d_bar, modes))?;
        if i < d_bar {
            power = power.checked_mul(m).ok_or_else(|| overflow(d_bar, modes))?;
        }
    }
    Ok(total)
}

fn overflow(d_bar: u32, modes: usize) -> Error {
    Error::IntegerOverflow(format!(
        "(M^(d+1) - 1)/(M - 1) for M = {modes}, d = {d_bar} exceeds 64 bits"
    ))
}

/// `(M^{d̄+2} − 1)/(M − 1)`: the budget ensuring `d(x) > d̄` at every state.
pub fn budget_for_stability(d_bar: u32, modes: usize) -> Result<u64> {
    min_budget_for_depth(d_bar + 1, modes)
}

pub fn budget_for_stability_exact(d_bar: u32, modes: usize) -> Result<BigUint> {
    min_budget_for_depth_exact(d_bar + 1, modes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{cubic_integrator, rollout, RandomAffine, ZeroCostFixture};
    use proptest::prelude::*;

    #[test]
    fn zero_cost_goes_depth_first() {
        let sys = ZeroCostFixture::default();
        let r = plan(&sys, &[1.0, -2.0], 0.9, 5).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.horizon, 4);
        assert_eq!(r.sequence.modes(), &[1, 1, 1, 1, 1]);
        assert_eq!(r.first_input(), 1);
    }

    #[test]
    fn budget_one_picks_cheapest_first_stage() {
        let sys = cubic_integrator();
        let x = [-1.0, 1.5];
        let r = plan(&sys, &x, 1.0, 1).unwrap();
        assert_eq!(r.horizon, 0);
        let costs: Vec<f64> = (1..=3).map(|u| sys.stage_cost(u, &x)).collect();
        let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(r.value, best);
        // ℓ₃ ≈ 2.5275 is the smallest of 3.5, 4.0, 2.5275
        assert_eq!(r.sequence.modes(), &[3]);
    }

    #[test]
    fn zero_budget_is_rejected() {
        let sys = cubic_integrator();
        assert!(matches!(plan(&sys, &[0.0, 0.0], 1.0, 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn budget_accounting() {
        let sys = cubic_integrator();
        let r = plan(&sys, &[-1.0, 1.5], 1.0, 40).unwrap();
        assert_eq!(r.stats.nodes_expanded, 41);
        assert_eq!(r.stats.nodes_created, 3 * 41 + 1);
        assert_eq!(r.sequence.len(), r.horizon + 1);
        assert_eq!(r.values_by_horizon.len(), r.horizon + 1);
    }

    #[test]
    fn value_matches_rollout_bitwise() {
        let sys = cubic_integrator();
        let x = [10.0, -15.0];
        let r = plan(&sys, &x, 0.95, 300).unwrap();
        assert_eq!(rollout(&sys, &x, &r.sequence, 0.95).unwrap().cost, r.value);
    }

    #[test]
    fn overflow_carries_partial_stats() {
        let sys = crate::system::ExpansiveFixture;
        match plan(&sys, &[1e307], 1.0, 50) {
            Err(Error::PlanOverflow { stats, .. }) => assert!(stats.nodes_expanded < 51),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn trace_reports_every_iteration() {
        let sys = cubic_integrator();
        let mut events = Vec::new();
        let r = plan_with_trace(&sys, &[-1.0, 1.5], 1.0, 20, |e| events.push(*e)).unwrap();
        assert_eq!(events.len(), 21);
        assert!(!events[0].selected);
        assert!(events[1].selected);
        assert_eq!(events.iter().filter(|e| e.selected).count(), r.horizon + 1);
        assert_eq!(events.last().unwrap().horizon, Some(r.horizon));
    }

    #[test]
    fn open_list_holds_exactly_the_leaves() {
        let sys = RandomAffine::new(9, 2, 3);
        let mut tree = PlanTree::new(&sys, &[0.5, 0.5], 0.9).unwrap();
        for _ in 0..30 {
            tree.expand_optimistic().unwrap();
        }
        let mut open: Vec<usize> = tree.open_leaves().iter().map(|id| id.index()).collect();
        open.sort();
        let has_child: std::collections::HashSet<usize> =
            tree.nodes().iter().filter_map(|n| n.parent.map(|p| p.index())).collect();
        let leaves: Vec<usize> = (0..tree.nodes().len())
            .filter(|i| !has_child.contains(i) && !tree.nodes()[*i].expanded)
            .collect();
        assert_eq!(open, leaves);
    }

    #[test]
    fn child_cost_recursion_holds() {
        let sys = RandomAffine::new(4, 3, 2);
        let gamma = 0.8;
        let mut tree = PlanTree::new(&sys, &[0.1, -0.3, 0.9], gamma).unwrap();
        for _ in 0..50 {
            tree.expand_optimistic().unwrap();
        }
        for node in tree.nodes().iter().skip(1) {
            let parent = tree.node(node.parent.unwrap());
            let expected = parent.cost
                + discount_weight(gamma, parent.depth)
                    * sys.stage_cost(node.edge_mode.unwrap(), &parent.state);
            assert_eq!(node.cost, expected);
            assert!(node.cost >= parent.cost);
        }
    }

    #[test]
    fn budget_formulas() {
        assert_eq!(min_budget_for_depth(0, 2).unwrap(), 1);
        assert_eq!(min_budget_for_depth(2, 3).unwrap(), 13);
        assert_eq!(min_budget_for_depth(6, 3).unwrap(), 1093);
        assert_eq!(budget_for_stability(0, 2).unwrap(), 3);
        assert_eq!(budget_for_stability(1, 3).unwrap(), 13);
        let three = BigUint::from(3u32);
        let b73 = (three.pow(73) - 1u32) / 2u32;
        assert_eq!(min_budget_for_depth_exact(72, 3).unwrap(), b73);
        assert_eq!(budget_for_stability_exact(71, 3).unwrap(), b73);
        assert_eq!(b73.to_string(), "33792599317408761617760221812158961");
        assert!(matches!(min_budget_for_depth(72, 3), Err(Error::IntegerOverflow(_))));
        assert!(min_budget_for_depth(3, 1).is_err());
    }

    #[test]
    fn fixed_horizon_matches_planner_values() {
        let sys = cubic_integrator();
        let x = [-1.0, 1.5];
        let r = plan(&sys, &x, 1.0, 200).unwrap();
        for (d, &v) in r.values_by_horizon.iter().enumerate() {
            let (fixed, seq) = solve_fixed_horizon(&sys, &x, 1.0, d, 1_000_000).unwrap();
            assert_eq!(fixed, v);
            assert_eq!(seq.len(), d + 1);
        }
    }

    proptest! {
        #[test]
        fn depth_bracket_and_anytime_monotonicity(
            seed in 0u64..500,
            d_bar in 0u32..4,
            modes in 2usize..=3,
            gamma in prop::sample::select(vec![0.8, 0.95, 1.0]),
        ) {
            let sys = RandomAffine::new(seed, 2, modes);
            let b = min_budget_for_depth(d_bar, modes).unwrap();
            let r = plan(&sys, &[0.7, -0.2], gamma, b).unwrap();
            prop_assert!(r.horizon as u64 >= d_bar as u64);
            prop_assert!((r.horizon as u64) < b);
            for w in r.values_by_horizon.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
        }
    }
}
