//! Lyapunov decrease check along a closed-loop run, plus a planted violation.

use opmin::bounds::{ComparisonData, LinearBoundParams};
use opmin::sim::lyapunov_diagnostic;
use opmin::{closed_loop, cubic_integrator};

fn main() -> opmin::Result<()> {
    let sys = cubic_integrator();
    let data = ComparisonData::from_linear(&LinearBoundParams::new(1.0, 14.0, 0.0)?).with_zero_storage();
    let mut traj = closed_loop(&sys, &[-1.0, 1.5], 1.0, 3000, 60)?;
    let d_bar = *traj.horizons.iter().min().expect("nonempty");

    let report = lyapunov_diagnostic(&traj, &data, d_bar)?;
    println!("d̄ = {d_bar}, violations on the closed loop: {}", report.violations.len());

    // inflate one value so that Y increases far more than the bound allows
    traj.plan_values[20] *= 1e6;
    let report = lyapunov_diagnostic(&traj, &data, d_bar)?;
    for v in &report.violations {
        println!("step {} ({}): {:.4e} > {:.4e}", v.step, v.check, v.lhs, v.rhs);
    }
    Ok(())
}
