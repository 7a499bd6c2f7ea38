//! The coil-weighted, subsampled Fourier transform of the MRI benchmark,
//! checked against its adjoint and its exact norm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spdhg::mri_bench::{build_problem, InstanceSpec, MriNorms};
use spdhg::operators::{dot, gradient_op, operator_norm, Boundary, Field};

fn main() -> spdhg::Result<()> {
    let spec = InstanceSpec {
        shape: [16, 16],
        coils: 4,
        ..Default::default()
    };
    let (inst, problem) = build_problem(&spec)?;
    let exact = MriNorms::for_instance(&inst)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    for (i, block) in problem.blocks().iter().enumerate() {
        let op = &block.op;
        let x: Vec<f64> = (0..op.domain().len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let y: Vec<f64> = (0..op.codomain().len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let gap = dot(&op.apply(&x)?, &y) - dot(&x, &op.adjoint_apply(&y)?);
        let est = operator_norm(op, 1e-10, 50_000, 0)?;
        println!(
            "A_{i}: adjoint gap {gap:+.1e}, power norm {:.6} ({} its), exact {:.6}, bound max|c| {:.6}",
            est.value,
            est.iterations,
            exact.subset_norm(&[i])?,
            op.cached_norm().unwrap_or(f64::NAN)
        );
    }

    let grad = gradient_op(&[16, 16], Field::Complex, Boundary::Neumann)?;
    println!("‖∇‖ = {:.6} (at most √8)", operator_norm(&grad, 1e-10, 50_000, 0)?.value);
    Ok(())
}
