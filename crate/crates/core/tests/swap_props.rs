use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reflexmc::potentials::Potential;
use reflexmc::sampler::{
    adapt_correction, corrected_swap_probability, deo_window_size, swap_log_intensity,
    swap_probability, ReplicaEnsemble, SamplerConfig, SamplerKind, ScheduleSpec,
};

fn temperatures() -> impl Strategy<Value = (f64, f64)> {
    (0.1f64..5.0, 0.01f64..5.0).prop_map(|(a, d)| (a, a + d))
}

proptest! {
    #[test]
    fn uncapped_intensity_is_reciprocal(u1 in -10.0f64..10.0, u2 in -10.0f64..10.0, (t1, t2) in temperatures()) {
        let s12 = swap_log_intensity(u1, u2, t1, t2).exp();
        let s21 = swap_log_intensity(u2, u1, t1, t2).exp();
        prop_assert!((s12 * s21 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn corrected_probability_non_increasing_in_variance(
        u2 in -5.0f64..5.0,
        gap in 0.0f64..5.0,
        (t1, t2) in temperatures(),
        c in 0.1f64..10.0,
    ) {
        let u1 = u2 + gap;
        let mut last = f64::INFINITY;
        for i in 0..50 {
            let sigma2 = 0.2 * i as f64;
            let p = corrected_swap_probability(u1, u2, t1, t2, sigma2, c).unwrap();
            prop_assert!(p <= last);
            last = p;
        }
    }
}

#[test]
fn metropolis_form_on_random_tuples() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let t1 = rng.random_range(0.1..2.0);
        let t2 = t1 + rng.random_range(0.1..3.0);
        let u_a: f64 = rng.random_range(0.0..5.0);
        let u_b: f64 = rng.random_range(0.0..5.0);
        let density = |cold: f64, hot: f64| (-cold / t1 - hot / t2).exp();
        let forward = density(u_a, u_b) * swap_probability(u_a, u_b, t1, t2).unwrap();
        let backward = density(u_b, u_a) * swap_probability(u_b, u_a, t1, t2).unwrap();
        assert!(
            (forward - backward).abs() <= 1e-12 * forward.max(backward),
            "{forward} vs {backward}"
        );
    }
}

#[test]
fn equal_energies_without_variance_always_swap() {
    assert_eq!(swap_probability(2.0, 2.0, 0.5, 1.0).unwrap(), 1.0);
    assert_eq!(
        corrected_swap_probability(2.0, 2.0, 0.5, 1.0, 0.0, 1.0).unwrap(),
        1.0
    );

    struct Level;
    impl Potential for Level {
        fn dim(&self) -> usize {
            1
        }
        fn energy<R: Rng + ?Sized>(&self, _x: &[f64], _rng: &mut R) -> f64 {
            3.0
        }
        fn gradient<R: Rng + ?Sized>(&self, _x: &[f64], grad: &mut [f64], _rng: &mut R) {
            grad[0] = 0.0;
        }
    }
    let mut config = SamplerConfig::new(
        SamplerKind::Resgld,
        100,
        vec![0.5, 1.0],
        vec![ScheduleSpec::Constant { eta0: 1e-3 }],
    );
    config.init = Some(vec![0.0]);
    let mut ens = ReplicaEnsemble::new(&config, &Level, None).unwrap();
    for k in 1..=100 {
        let out = ens.dual_chain_step(k, 1).unwrap();
        assert!(out.accepted[0]);
    }
}

#[test]
fn correction_moves_toward_target_rate() {
    for (rate, expected) in [
        (0.6, std::cmp::Ordering::Greater),
        (0.1, std::cmp::Ordering::Less),
        (0.4, std::cmp::Ordering::Equal),
    ] {
        let mut c = 1.0;
        for _ in 0..100 {
            let next = adapt_correction(c, 0.01, rate, 0.4);
            assert_eq!(next.partial_cmp(&c), Some(expected), "rate {rate}");
            c = next;
        }
    }
}

#[test]
fn deo_window_formula() {
    assert_eq!(deo_window_size(4, 0.5).unwrap(), 3);
    assert!(deo_window_size(1, 0.5).is_err());
    assert!(deo_window_size(4, 1.0).is_err());
}
