//! V_D ≤ V_{D+5} ≤ V_D + v_D on a fixture where the linear certificate holds by construction.

use opmin::bounds::{error_bound_general, ComparisonData};
use opmin::oracle::{brute_force_value, DEFAULT_ENUMERATION_CAP};
use opmin::system::{SigmaCostFixture, SwitchedSystem};

fn main() -> opmin::Result<()> {
    let sys = SigmaCostFixture::new(3, 2, 3, 0.6);
    let data = ComparisonData::from_linear(&sys.linear_params());
    let x = [1.5, -2.0];
    let gamma = 0.95;
    for d in 1..=5 {
        let v_d = brute_force_value(&sys, &x, d, gamma, DEFAULT_ENUMERATION_CAP)?.value;
        let v_far = brute_force_value(&sys, &x, d + 5, gamma, DEFAULT_ENUMERATION_CAP)?.value;
        let bound = error_bound_general(sys.measure(&x), gamma, d, &data)?;
        println!("D = {d}: {v_d:.6} <= {v_far:.6} <= {:.6}", v_d + bound);
    }
    Ok(())
}
