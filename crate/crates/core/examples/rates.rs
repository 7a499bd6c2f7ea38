//! Linear convergence rates of SPDHG for strongly convex problems under
//! different samplings, per iteration and per epoch.

use spdhg::sampling::{consecutive_partition, equidistant_partition};
use spdhg::stepsize::{
    rate_bserial_sc, rate_full_sc, rate_per_epoch, rate_serial_optimized_sc, rate_serial_uniform_sc, ProbabilityMode,
    RateInputs,
};

fn main() -> spdhg::Result<()> {
    // six blocks whose norms decay geometrically
    let norms: Vec<f64> = (0..6).map(|i| 2.0 * 0.6f64.powi(i)).collect();
    let inputs = RateInputs {
        mu_g: 0.5,
        mus: vec![1.0; 6],
        norms: norms.clone(),
        rho: 0.99,
    };
    let full_norm = norms.iter().map(|a| a * a).sum::<f64>().sqrt();

    let us = rate_serial_uniform_sc(&inputs)?;
    let os = rate_serial_optimized_sc(&inputs)?;
    let pdhg = rate_full_sc(&inputs, full_norm)?;
    println!("uniform serial    θ = {:.6}, per epoch {:.6}", us.theta, rate_per_epoch(us.theta, 6)?);
    println!("optimized serial  θ = {:.6}, per epoch {:.6}", os.theta, rate_per_epoch(os.theta, 6)?);
    println!("  probabilities {:.4?}", os.probabilities);
    println!("PDHG              θ = {:.6}, per epoch {:.6}", pdhg.theta, pdhg.theta);

    // block norms below are the upper bound √(Σ‖A_i‖²); real stacked norms are smaller
    for (name, p) in [
        ("consecutive", consecutive_partition(6, 2)?),
        ("equidistant", equidistant_partition(6, 2)?),
    ] {
        let bn: Vec<f64> = p
            .blocks()
            .iter()
            .map(|b| b.iter().map(|&i| norms[i] * norms[i]).sum::<f64>().sqrt())
            .collect();
        let plan = rate_bserial_sc(&inputs, &p, &bn, ProbabilityMode::Optimized)?;
        println!("2-serial {name:<12} θ = {:.6}, per epoch {:.6}", plan.theta, rate_per_epoch(plan.theta, 3)?);
    }
    Ok(())
}
