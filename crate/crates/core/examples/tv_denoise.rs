//! Denoising a phantom with the TV + ℓ2 prox evaluated by FISTA.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use spdhg::mri_bench::{make_phantom, realify, PhantomKind};
use spdhg::operators::{distance, gradient_op, norm, Boundary, Field};
use spdhg::proximal::{ProxFn, TvVariant};

fn main() -> spdhg::Result<()> {
    let shape = [32, 32];
    let clean = realify(&make_phantom(shape, PhantomKind::Rings, 3)?);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let noisy: Vec<f64> = clean.iter().map(|v| v + noise.sample(&mut rng)).collect();
    println!("noisy error {:.4}", distance(&noisy, &clean) / norm(&clean));

    for variant in [TvVariant::Anisotropic, TvVariant::Isotropic] {
        for iters in [10, 50, 200] {
            let grad = gradient_op(&shape, Field::Complex, Boundary::Neumann)?;
            let g = ProxFn::tv_l2(1.0, 0.01, grad, variant, iters)?;
            let u = g.prox(0.08, &noisy)?;
            println!(
                "{variant:?} with {iters:>3} FISTA iterations: error {:.4}, objective {:.4}",
                distance(&u, &clean) / norm(&clean),
                g.value(&u)?
            );
        }
    }
    Ok(())
}
