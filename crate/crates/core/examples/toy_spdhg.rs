//! SPDHG against PDHG on a strongly convex problem with a closed-form
//! saddle point: `min_x Σ ½(a_i x − b_i)² + (μ/2)(x − s)²`.

use spdhg::operators::dense;
use spdhg::proximal::ProxFn;
use spdhg::sampling::{run_rng, Sampling};
use spdhg::solver::{pdhg_run, spdhg_run_observed, weighted_distance, RunOptions, SaddleProblem, SolverState};
use spdhg::stepsize::{rate_full_sc, rate_serial_optimized_sc, rate_serial_uniform_sc, NormCache, RateInputs, StepPlan};

const A: [f64; 4] = [1.0, 0.5, 2.0, 0.25];
const B: [f64; 4] = [1.0, -1.0, 0.5, 2.0];
const MU: f64 = 0.3;
const SHIFT: f64 = 0.7;

fn main() -> spdhg::Result<()> {
    let blocks = A
        .iter()
        .zip(B)
        .map(|(&a, b)| Ok((dense(1, 1, vec![a])?, ProxFn::L2ConjDataFit { data: vec![b] })))
        .collect::<spdhg::Result<Vec<_>>>()?;
    let problem = SaddleProblem::new(blocks, ProxFn::L2SquaredShifted { weight: MU, shift: vec![SHIFT] })?;

    let x_hat = (A.iter().zip(B).map(|(a, b)| a * b).sum::<f64>() + MU * SHIFT)
        / (A.iter().map(|a| a * a).sum::<f64>() + MU);
    let y_hat: Vec<Vec<f64>> = A.iter().zip(B).map(|(a, b)| vec![a * x_hat - b]).collect();
    println!("saddle point x̂ = {x_hat:.6}");

    let cache = NormCache::for_problem(&problem);
    let inputs = RateInputs::from_problem(&problem, cache.block_norms()?, 0.99)?;
    let k = 200;

    for (name, plan) in [
        ("uniform serial", rate_serial_uniform_sc(&inputs)?),
        ("optimized serial", rate_serial_optimized_sc(&inputs)?),
    ] {
        let sampling = Sampling::serial(plan.probabilities.clone())?;
        let plan = plan.certified(&problem, &sampling)?;
        let runs = 100;
        let mut mean = 0.0;
        let mut initial = 0.0;
        for r in 0..runs {
            let opts = RunOptions {
                epochs: 1,
                iters_per_epoch: Some(k),
                ..Default::default()
            };
            initial = distance(&problem, &plan, &SolverState::zeros(&problem), x_hat, &y_hat);
            let mut last = 0.0;
            spdhg_run_observed(&problem, &sampling, &plan, &opts, &mut run_rng(0, r), &mut |s, _| {
                last = distance(&problem, &plan, s, x_hat, &y_hat)
            })?;
            mean += last / runs as f64;
        }
        println!(
            "{name:<17} θ = {:.5}: mean distance after {k} iterations {mean:.3e}, bound θ^k·Φ₀ = {:.3e}",
            plan.theta,
            plan.theta.powi(k as i32) * initial
        );
    }

    let plan = rate_full_sc(&inputs, cache.full_norm()?)?.certified(&problem, &Sampling::full(4)?)?;
    let opts = RunOptions {
        epochs: 50,
        ..Default::default()
    };
    let (_, state) = pdhg_run(&problem, &plan, &opts)?;
    println!("PDHG θ = {:.5}: x after 50 iterations {:.6}", plan.theta, state.x[0]);
    Ok(())
}

fn distance(problem: &SaddleProblem, plan: &StepPlan, s: &SolverState, x_hat: f64, y_hat: &[Vec<f64>]) -> f64 {
    let norm_d = plan.certificate.as_ref().map_or(0.0, |c| c.norm_d);
    weighted_distance(problem, plan, norm_d, s, &[x_hat], y_hat)
}
