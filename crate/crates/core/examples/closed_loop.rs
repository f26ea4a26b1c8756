//! Receding-horizon control of the cubic integrator from (-1, 1.5).
//!
//! `cargo run --release --example closed_loop -- 3000`

use opmin::sim::{check_practical_stability, fit_exponential_envelope};
use opmin::{closed_loop, cubic_integrator, running_cost};

fn main() -> opmin::Result<()> {
    let budget: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(3000);
    let sys = cubic_integrator();
    let traj = closed_loop(&sys, &[-1.0, 1.5], 1.0, budget, 200)?;

    println!("{:>4} {:>12} {:>12} {:>4} {:>10} {:>4}", "k", "x1", "x2", "u", "sigma", "d");
    for k in 0..30 {
        let x = &traj.states[k];
        println!(
            "{k:>4} {:>12.4e} {:>12.4e} {:>4} {:>10.3e} {:>4}",
            x[0], x[1], traj.modes[k], traj.sigmas[k], traj.horizons[k]
        );
    }
    println!("running cost over 200 steps: {:.6}", running_cost(&traj));

    let ps = check_practical_stability(&traj, 1e-3, f64::INFINITY);
    println!("entered sigma <= 1e-3 at k = {:?}, stays: {}", ps.entry_time, ps.remains);
    match fit_exponential_envelope(&traj, 0..traj.sigmas.len()) {
        Ok(fit) => println!("envelope: sigma_k <= {:.4} sigma_0 exp(-{:.4} k)", fit.k, fit.lambda),
        Err(e) => println!("no envelope: {e}"),
    }
    Ok(())
}
