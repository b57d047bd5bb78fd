use proptest::prelude::*;

use chanest_core::channel::{doppler_from_speed, FrameSpec, PowerDelayProfile, ProfileName};
use chanest_core::enhance::{self, AeConfig, AeMode};
use chanest_core::grid::{EdgePolicy, RealStack};
use chanest_core::link::PilotPattern;
use chanest_core::sim::Scenario;

fn scenario() -> Scenario {
    Scenario::new(
        PowerDelayProfile::make(ProfileName::Eva),
        FrameSpec::default(),
        PilotPattern::paper_default(),
        EdgePolicy::Extrapolate,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn same_seed_pairs_channels_across_snr(seed in any::<u64>(), a in 0.0..30.0f64, b in 0.0..30.0f64, fd in 0.0..400.0f64) {
        let sc = scenario();
        let (x, y) = (sc.observe(seed, fd, a).unwrap(), sc.observe(seed, fd, b).unwrap());
        prop_assert_eq!(&x.h, &y.h);
        prop_assert_eq!(sc.observe(seed, fd, a).unwrap().h_ls_p, x.h_ls_p);
    }

    #[test]
    fn interpolated_ls_passes_through_the_pilots(seed in any::<u64>(), snr in 0.0..30.0f64) {
        let sc = scenario();
        let o = sc.observe(seed, 100.0, snr).unwrap();
        for (r, c, k, i) in sc.pattern.cells() {
            prop_assert!((o.h_ls_full.get(k, i) - o.h_ls_p.get(r, c)).norm() < 1e-9);
        }
    }

    #[test]
    fn doppler_is_linear_in_speed(v in 0.0..500.0f64, k in 0.0..4.0f64) {
        let f = doppler_from_speed(v, 2.1e9).unwrap();
        let g = doppler_from_speed(k * v, 2.1e9).unwrap();
        prop_assert!((g - k * f).abs() <= 1e-9 * (1.0 + g.abs()));
    }

    #[test]
    fn enhancement_keeps_inputs_and_yields_non_negative_features(
        data in proptest::collection::vec(-3.0..3.0f64, 96),
        seed in any::<u64>(),
    ) {
        let cfg = AeConfig::new(AeMode::Pilot, &FrameSpec::default(), &PilotPattern::paper_default());
        let model = enhance::build_ae(&cfg, seed).unwrap();
        let x = RealStack::new(24, 2, 2, data).unwrap();
        let e = enhance::enhance(&model, &cfg, &x).unwrap();
        prop_assert_eq!(e.stack.plane(0), x.plane(0));
        prop_assert_eq!(e.stack.plane(1), x.plane(1));
        prop_assert!(e.stack.plane(2).iter().all(|v| *v >= 0.0));
    }
}
