//! Step-size planning for convex problems and the certificate `‖D‖ < 1/θ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spdhg::operators::dense;
use spdhg::proximal::ProxFn;
use spdhg::sampling::{consecutive_partition, Sampling};
use spdhg::solver::SaddleProblem;
use spdhg::stepsize::{plan_bnice_convex, plan_bserial_convex, plan_serial_convex, NormCache};

fn main() -> spdhg::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, d) = (4, 3);
    let blocks = (0..n)
        .map(|_| {
            let a = dense(2, d, (0..2 * d).map(|_| rng.random::<f64>() - 0.5).collect())?;
            Ok((a, ProxFn::L2ConjDataFit { data: vec![0.0; 2] }))
        })
        .collect::<spdhg::Result<Vec<_>>>()?;
    let problem = SaddleProblem::new(blocks, ProxFn::L1Norm { weight: 0.1 })?;
    let cache = NormCache::for_problem(&problem);
    let gamma = 0.99;

    let serial = Sampling::serial_uniform(n)?;
    let plan = plan_serial_convex(&cache.block_norms()?, &serial.inclusion_probs(), gamma)?;
    report("serial", plan.certified(&problem, &serial)?);

    let partition = consecutive_partition(n, 2)?;
    let bserial = Sampling::b_serial_uniform(partition.clone())?;
    let plan = plan_bserial_convex(&cache.partition_norms(&partition)?, &partition, &[0.5, 0.5], gamma)?;
    report("2-serial", plan.certified(&problem, &bserial)?);

    let plan = plan_bnice_convex(&problem, 2, gamma)?;
    report("2-nice", plan.certified(&problem, &Sampling::b_nice(n, 2)?)?);

    // a plan that is too aggressive fails
    let mut bad = plan_serial_convex(&cache.block_norms()?, &serial.inclusion_probs(), gamma)?;
    bad.tau *= 10.0;
    report("serial, τ × 10", bad.certified(&problem, &serial)?);
    Ok(())
}

fn report(name: &str, plan: spdhg::stepsize::StepPlan) {
    let c = plan.certificate.as_ref().unwrap();
    println!(
        "{name:<16} τ = {:.4}  ‖D‖ = {:.6}  margin {:+.6}  passed {}",
        plan.tau, c.norm_d, c.margin, c.passed
    );
}
