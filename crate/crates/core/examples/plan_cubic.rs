//! One planner call on the cubic integrator, with the anytime values.
//!
//! `cargo run --release --example plan_cubic -- 3000`

use opmin::planner::min_budget_for_depth;
use opmin::{cubic_integrator, plan, rollout};

fn main() -> opmin::Result<()> {
    let budget: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(3000);
    let sys = cubic_integrator();
    let x = [-1.0, 1.5];
    let r = plan(&sys, &x, 1.0, budget)?;

    println!("budget {budget}: horizon d(x) = {}", r.horizon);
    println!("value V = {:.17e}", r.value);
    println!("first input {} from sequence [{}]", r.first_input(), r.sequence);
    println!("stats {:?}", r.stats);
    for (d, v) in r.values_by_horizon.iter().enumerate() {
        println!("  V_{d} = {v:.6}");
    }

    let guaranteed = (0..).take_while(|&d| min_budget_for_depth(d, 3).is_ok_and(|b| b <= budget)).last();
    println!("guaranteed horizon for this budget: {guaranteed:?}");
    // the returned value is the exact rollout cost of the returned sequence
    assert_eq!(rollout(&sys, &x, &r.sequence, 1.0)?.cost, r.value);
    Ok(())
}
