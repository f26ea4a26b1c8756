//! Planner values against exhaustive enumeration on random affine systems.

use opmin::oracle::{check_instance, sample_instances, DEFAULT_ENUMERATION_CAP};

fn main() -> opmin::Result<()> {
    let instances = sample_instances(7, 25, 30);
    let mut passed = 0;
    for inst in &instances {
        let c = check_instance(inst, DEFAULT_ENUMERATION_CAP, 1e-9)?;
        println!(
            "#{:<3} M={} n={} gamma={:<4} B={:<3} d={:<3} plan={:.12e} oracle={:.12e} u0={} U*={:?} {}",
            inst.index,
            inst.modes,
            inst.state_dim,
            inst.gamma,
            inst.budget,
            c.horizon,
            c.plan_value,
            c.oracle_value,
            c.first_input,
            c.first_input_set,
            if c.passed { "ok" } else { "MISMATCH" }
        );
        passed += usize::from(c.passed);
    }
    println!("{passed}/{} instances agree", instances.len());
    Ok(())
}
