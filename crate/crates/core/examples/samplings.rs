//! Random samplings of dual blocks and exhaustive partition enumeration.

use spdhg::sampling::{
    count_partitions, enumerate_partitions, equidistant_partition, run_rng, Sampling,
};

fn main() -> spdhg::Result<()> {
    let n = 6;
    let schemes = [
        Sampling::serial_uniform(n)?,
        Sampling::serial(vec![0.3, 0.1, 0.1, 0.2, 0.2, 0.1])?,
        Sampling::b_serial_uniform(equidistant_partition(n, 2)?)?,
        Sampling::b_nice(n, 2)?,
        Sampling::full(n)?,
    ];
    let mut rng = run_rng(42, 0);
    for s in &schemes {
        let draws: Vec<Vec<usize>> = (0..4).map(|_| s.draw(&mut rng)).collect();
        println!(
            "{:<24} p = {:?}  P(0,1 together) = {:.3}  draws {draws:?}",
            s.id(),
            s.inclusion_probs().iter().map(|p| (p * 1e3).round() / 1e3).collect::<Vec<_>>(),
            s.pair_prob(0, 1)?
        );
    }

    for (n, b) in [(12, 4), (12, 6), (12, 3)] {
        println!("partitions of {n} into blocks of {b}: {}", count_partitions(n, b)?);
    }
    for p in enumerate_partitions(6, 3)? {
        println!("  {p}");
    }
    Ok(())
}
