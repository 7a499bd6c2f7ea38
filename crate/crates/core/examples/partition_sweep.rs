//! Rates of all 5775 ways to split 12 coils into three groups of four,
//! showing how much the grouping matters.

use spdhg::harness::{mri_norms, partition_rates};
use spdhg::mri_bench::{build_problem, InstanceSpec};
use spdhg::sampling::{consecutive_partition, equidistant_partition};
use spdhg::stepsize::ProbabilityMode;

fn main() -> spdhg::Result<()> {
    let (inst, problem) = build_problem(&InstanceSpec::default())?;
    let cache = mri_norms(&inst, &problem)?;
    let mut rows = partition_rates(&problem, &cache, 0.99, 4, ProbabilityMode::Optimized, 100_000)?;
    rows.sort_by(|a, b| a.1.total_cmp(&b.1));

    println!("{} partitions", rows.len());
    for (p, r) in rows.iter().take(3) {
        println!("  best   {p}  ϑ = {r:.6}");
    }
    for (p, r) in rows.iter().rev().take(3) {
        println!("  worst  {p}  ϑ = {r:.6}");
    }
    for p in [consecutive_partition(12, 4)?, equidistant_partition(12, 4)?] {
        let r = rows.iter().find(|(q, _)| *q == p).unwrap().1;
        println!("  {p}  ϑ = {r:.6}");
    }
    Ok(())
}
