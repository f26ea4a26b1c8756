//! Certificate arithmetic for the cubic integrator constants a_W = 1, ā_V = 14, ā_W = 0.

use opmin::bounds::{
    d_tilde, error_bound_linear, ges_condition, ges_margin, min_d_bar, running_cost_gap,
    LinearBoundParams, Provenance, StabilityCertificate,
};
use opmin::planner::{budget_for_stability_exact, min_budget_for_depth_exact};

fn main() -> opmin::Result<()> {
    let p = LinearBoundParams::new(1.0, 14.0, 0.0)?;
    println!("rate 1 - a_W/(ā_V + ā_W) = {:.6}", p.rate());
    println!("d̃ = {}", d_tilde(&p));
    let d = min_d_bar(1.0, &p)?;
    println!("smallest d̄ at γ* = 1: {d}");
    for d_bar in [d - 1, d] {
        println!(
            "  d̄ = {d_bar}: condition {} (margin {:+.6e}), budgets {} / {}",
            ges_condition(1.0, d_bar, &p),
            ges_margin(1.0, d_bar, &p),
            min_budget_for_depth_exact(d_bar, 3)?,
            budget_for_stability_exact(d_bar, 3)?
        );
    }
    for horizon in [0, 10, 50, 100] {
        println!("error bound at σ = 2.5, d = {horizon}: {:.6}", error_bound_linear(2.5, &p, horizon));
    }
    let cert = StabilityCertificate::new(0.999, d, 2.0, 0.1, Provenance::UserSupplied, &p)?;
    println!("w for K = 2, λ = 0.1, γ = 1: {:.6}", running_cost_gap(&p, &cert, 1.0, d)?);
    Ok(())
}
