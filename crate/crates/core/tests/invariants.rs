//! Property tests over the library's invariants.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spdhg::operators::{dense, distance, dot, gradient_op, Boundary, Field};
use spdhg::proximal::{moreau_objective, ProxFn, TvVariant};
use spdhg::sampling::{count_partitions, enumerate_partitions, Partition, Sampling};
use spdhg::stepsize::{plan_serial_convex, rate_serial_optimized_sc, rate_serial_uniform_sc, RateInputs};

fn partition_strategy() -> impl Strategy<Value = Partition> {
    (1usize..=4, 1usize..=4)
        .prop_flat_map(|(b, m)| Just((0..b * m).collect::<Vec<usize>>()).prop_shuffle().prop_map(move |v| (b, v)))
        .prop_map(|(b, v)| Partition::new(v.len(), v.chunks(b).map(<[usize]>::to_vec).collect()).unwrap())
}

fn probs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, n).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    })
}

proptest! {
    #[test]
    fn partition_text_round_trips(p in partition_strategy()) {
        let back: Partition = p.to_string().parse().unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn enumeration_is_exhaustive_and_canonical(b in 1usize..=3, m in 1usize..=3) {
        let n = b * m;
        let all: Vec<Partition> = enumerate_partitions(n, b).unwrap().collect();
        prop_assert_eq!(all.len() as u128, count_partitions(n, b).unwrap());
        for p in &all {
            let again = Partition::new(n, p.blocks().to_vec()).unwrap();
            prop_assert_eq!(&again, p);
        }
    }

    #[test]
    fn draws_respect_the_scheme(n in 2usize..=8, b in 1usize..=8, seed in any::<u64>()) {
        let b = b.min(n);
        let nice = Sampling::b_nice(n, b).unwrap();
        let total: f64 = nice.inclusion_probs().iter().sum();
        prop_assert!((total - b as f64).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let s = nice.draw(&mut rng);
            prop_assert_eq!(s.len(), b);
            prop_assert!(s.windows(2).all(|w| w[0] < w[1]) && s[b - 1] < n);
        }
        for i in 0..n {
            for j in 0..n {
                let pij = nice.pair_prob(i, j).unwrap();
                prop_assert_eq!(pij, nice.pair_prob(j, i).unwrap());
                prop_assert!(pij <= nice.inclusion_prob(i).unwrap().min(nice.inclusion_prob(j).unwrap()) + 1e-15);
            }
        }
    }

    #[test]
    fn serial_draws_are_singletons(p in probs(5), seed in any::<u64>()) {
        let s = Sampling::serial(p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            prop_assert_eq!(s.draw(&mut rng).len(), 1);
        }
    }

    #[test]
    fn dense_adjoint_identity(
        (rows, cols, data) in (1usize..5, 1usize..5).prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-2.0f64..2.0, r * c))),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let op = dense(rows, cols, data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gap = dot(&op.apply(&x).unwrap(), &y) - dot(&x, &op.adjoint_apply(&y).unwrap());
        prop_assert!(gap.abs() < 1e-12);
    }

    #[test]
    fn closed_form_proxes_are_firmly_nonexpansive(
        v1 in prop::collection::vec(-3.0f64..3.0, 4),
        v2 in prop::collection::vec(-3.0f64..3.0, 4),
        step in 0.1f64..3.0,
        w in 0.0f64..2.0,
    ) {
        let kinds = [
            ProxFn::Zero,
            ProxFn::L1Norm { weight: w },
            ProxFn::L2SquaredShifted { weight: w, shift: vec![0.5, -0.5, 1.0, 0.0] },
            ProxFn::L2ConjDataFit { data: vec![1.0, 2.0, -1.0, 0.5] },
        ];
        for f in &kinds {
            let (p1, p2) = (f.prox(step, &v1).unwrap(), f.prox(step, &v2).unwrap());
            let d: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| a - b).collect();
            let e: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| a - b).collect();
            prop_assert!(dot(&e, &e) <= dot(&e, &d) + 1e-12);
            prop_assert!(distance(&p1, &p2) <= distance(&v1, &v2) + 1e-12);
        }
    }

    #[test]
    fn tv_prox_does_not_increase_the_moreau_objective(
        v in prop::collection::vec(0.0f64..1.0, 16),
        lambda1 in 0.01f64..0.5,
        isotropic in any::<bool>(),
    ) {
        let grad = gradient_op(&[4, 4], Field::Real, Boundary::Neumann).unwrap();
        let variant = if isotropic { TvVariant::Isotropic } else { TvVariant::Anisotropic };
        let g = ProxFn::tv_l2(lambda1, 0.05, grad, variant, 30).unwrap();
        let u = g.prox(0.7, &v).unwrap();
        prop_assert!(moreau_objective(&g, 0.7, &v, &u).unwrap() <= moreau_objective(&g, 0.7, &v, &v).unwrap() + 1e-12);
    }

    #[test]
    fn convex_serial_plan_is_tight(norms in prop::collection::vec(0.1f64..5.0, 1..6), gamma in 0.1f64..0.99) {
        let n = norms.len();
        let p = vec![1.0 / n as f64; n];
        let plan = plan_serial_convex(&norms, &p, gamma).unwrap();
        for i in 0..n {
            let lhs = plan.tau * plan.sigmas[i] * norms[i] * norms[i];
            prop_assert!((lhs - gamma * p[i]).abs() < 1e-12 * gamma);
        }
    }

    #[test]
    fn optimized_probabilities_never_slow_down(
        norms in prop::collection::vec(0.01f64..10.0, 1..8),
        mu_g in 0.01f64..3.0,
        rho in 0.5f64..0.999,
    ) {
        let n = norms.len();
        let inputs = RateInputs { mu_g, mus: vec![1.0; n], norms, rho };
        let us = rate_serial_uniform_sc(&inputs).unwrap();
        let os = rate_serial_optimized_sc(&inputs).unwrap();
        prop_assert!(os.theta <= us.theta);
        prop_assert!(os.theta > 0.0 && us.theta < 1.0);
        prop_assert!((os.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
