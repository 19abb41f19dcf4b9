use proptest::prelude::*;
use reflexmc::domain::{build_boundary, BoundaryKind, BoundarySpec};
use reflexmc::potentials::{GaussianMixture, Quadratic};
use reflexmc::sampler::{run_sampler, SamplerConfig, SamplerKind, ScheduleSpec};

#[test]
fn sgld_quadratic_variance() {
    let mut config = SamplerConfig::new(
        SamplerKind::Sgld,
        1_000_000,
        vec![1.0],
        vec![ScheduleSpec::Constant { eta0: 1e-3 }],
    );
    config.burn_in = Some(0);
    config.init = Some(vec![0.0]);
    let trace = run_sampler(&config, &Quadratic { dim: 1 }, None).unwrap();
    let x = trace.coordinate(0);
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((0.9..=1.1).contains(&var), "variance {var}");
}

#[test]
fn identical_seeds_give_identical_traces() {
    let domain = build_boundary(&BoundarySpec::new(BoundaryKind::Flower {
        petals: 5,
        offset: 3.0,
    }))
    .unwrap();
    let gmm = GaussianMixture::grid(5, 1.5, 0.05, [0.0, 0.0]).unwrap();
    let mut config = SamplerConfig::new(
        SamplerKind::R2sgld,
        5000,
        vec![1.0, 10.0],
        vec![
            ScheduleSpec::Constant { eta0: 5e-4 },
            ScheduleSpec::Constant { eta0: 1.5e-3 },
        ],
    );
    config.seed = 7;
    let a = run_sampler(&config, &gmm, Some(&domain)).unwrap();
    let b = run_sampler(&config, &gmm, Some(&domain)).unwrap();
    assert_eq!(a, b);
    config.seed = 8;
    let c = run_sampler(&config, &gmm, Some(&domain)).unwrap();
    assert_ne!(a.samples, c.samples);
}

fn reflected_kinds() -> impl Strategy<Value = SamplerKind> {
    prop_oneof![
        Just(SamplerKind::ReflectedSgld),
        Just(SamplerKind::ReflectedCycSgld),
        Just(SamplerKind::R2sgld),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reflected_samples_stay_inside(kind in reflected_kinds(), shape in 0usize..3, seed in 0u64..1000, eta in 1e-3f64..0.2) {
        let spec = match shape {
            0 => BoundarySpec::new(BoundaryKind::Flower { petals: 5, offset: 3.0 }),
            1 => BoundarySpec::new(BoundaryKind::Heart).with_scale(0.2),
            _ => BoundarySpec::new(BoundaryKind::Cross { half_width: 0.5, half_length: 2.0 }),
        };
        let domain = build_boundary(&spec).unwrap();
        let gmm = GaussianMixture::grid(5, 1.0, 0.05, [0.0, 0.0]).unwrap();
        let (temps, schedules) = match kind {
            SamplerKind::R2sgld => (vec![1.0, 10.0], vec![ScheduleSpec::Constant { eta0: eta }]),
            SamplerKind::ReflectedCycSgld => (vec![1.0], vec![ScheduleSpec::CosineCyclic { eta0: eta, total: 2000, cycles: 4 }]),
            _ => (vec![1.0], vec![ScheduleSpec::Constant { eta0: eta }]),
        };
        let mut config = SamplerConfig::new(kind, 2000, temps, schedules);
        config.seed = seed;
        config.burn_in = Some(0);
        let trace = run_sampler(&config, &gmm, Some(&domain)).unwrap();
        for x in trace.iter() {
            prop_assert!(domain.contains(x).unwrap());
        }
    }
}
