use dynsde::config::{AdaptiveSection, DataConfig, ExperimentConfig, NormChoice, ProcessConfig, TweedieChoice};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, 1e-9..1.0f64, Just(0.1), Just(1.0 / 3.0)]
}

proptest! {
    #[test]
    fn parse_serialize_parse_is_identity(
        seed in any::<u64>(),
        n in 1usize..100_000,
        dim in 1usize..1024,
        eps in proptest::collection::vec(finite(), 0..6),
        r in finite(),
        ve in any::<bool>(),
        mix in any::<bool>(),
        linf in any::<bool>(),
        t_end in proptest::option::of(1e-6..0.5f64),
        eps_abs in proptest::option::of(finite()),
    ) {
        let cfg = ExperimentConfig {
            seed,
            n_samples: n,
            dim,
            t_end,
            method: "pc".into(),
            tweedie: if ve { TweedieChoice::Literal } else { TweedieChoice::Kernel },
            process: if ve {
                ProcessConfig::Ve { sigma_min: 0.01, sigma_max: r.abs() + 1.0 }
            } else {
                ProcessConfig::Vp { beta_min: 0.1, beta_max: r.abs() + 1.0 }
            },
            data: if mix {
                DataConfig::Mixture { components: 3, mean_range: [-1.0, r], var_range: [0.05, 0.2], seed }
            } else {
                DataConfig::Gaussian { mean: Some(vec![r; 3]), var: None, mean_range: [-1.0, 1.0], var_range: [0.5, 2.0], seed: 1 }
            },
            solver: AdaptiveSection {
                r,
                eps_abs,
                norm: if linf { NormChoice::Linf } else { NormChoice::L2 },
                ..Default::default()
            },
            benchmark: dynsde::config::BenchmarkSection { eps_rel: eps, ..Default::default() },
            ..Default::default()
        };
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_toml(), text);
    }
}
