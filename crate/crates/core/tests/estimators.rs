use chanest_core::channel::{doppler_from_speed, noise_variance, FrameSpec, PowerDelayProfile, ProfileName};
use chanest_core::classical::{self, MmseFilter};
use chanest_core::dataset::{Dataset, SampleMeta, TensorDims};
use chanest_core::enhance::{self, AeConfig, AeMode};
use chanest_core::grid::{ComplexGrid, EdgePolicy};
use chanest_core::link::PilotPattern;
use chanest_core::nn::{self, Select, Tensor, TrainConfig};
use chanest_core::rng::derive_seed;
use chanest_core::sim::{draw_speed, Scenario};
use chanest_core::zoo::{self, GridDims, ZooId};

fn scenario(name: ProfileName) -> Scenario {
    Scenario::new(
        PowerDelayProfile::make(name),
        FrameSpec::default(),
        PilotPattern::paper_default(),
        EdgePolicy::Extrapolate,
    )
    .unwrap()
}

fn doppler(seed: u64) -> f64 {
    doppler_from_speed(draw_speed(seed, (0.0, 50.0)).unwrap(), 2.1e9).unwrap()
}

fn pilot_dataset(sc: &Scenario, n: u64, snr: f64, salt: u64) -> Dataset {
    let mut meta = Vec::new();
    let (mut inputs, mut targets) = (Vec::new(), Vec::new());
    for i in 0..n {
        let s = derive_seed(salt, &[i]);
        let o = sc.observe(s, doppler(s), snr).unwrap();
        meta.push(SampleMeta { snr_db: snr as f32, doppler_hz: o.doppler_hz as f32, seed: s });
        inputs.extend(o.h_ls_p.data().iter().flat_map(|z| [z.re as f32, z.im as f32]));
        targets.extend(o.h.data().iter().flat_map(|z| [z.re as f32, z.im as f32]));
    }
    Dataset {
        input_dims: TensorDims::new(24, 2, 2),
        target_dims: TensorDims::new(72, 14, 2),
        carrier_freq: 2.1e9,
        subcarrier_spacing: 15e3,
        fingerprint: [0; 32],
        meta,
        inputs,
        targets,
    }
}

#[test]
fn mmse_with_matched_statistics_beats_interpolated_ls() {
    for name in [ProfileName::Epa, ProfileName::Eva] {
        let sc = scenario(name);
        let grids: Vec<(ComplexGrid, f64)> = (0..400)
            .map(|i| {
                let s = derive_seed(1, &[i]);
                (sc.channel(s, doppler(s)).unwrap(), doppler(s))
            })
            .collect();
        let stats = classical::estimate_stats(grids.iter().map(|(g, f)| (g, *f)), &sc.pattern, "x").unwrap();
        let filt = MmseFilter::new(&stats, noise_variance(5.0, 1.0), 1.0).unwrap();
        let (mut ls, mut mmse) = (0.0, 0.0);
        for i in 0..200 {
            let s = derive_seed(2, &[i]);
            let o = sc.observe(s, doppler(s), 5.0).unwrap();
            ls += classical::mse_linear(&o.h_ls_full, &o.h).unwrap();
            mmse += classical::mse_linear(&filt.estimate(&o.h_ls_p, &sc.pattern, (72, 14)).unwrap().h_hat, &o.h).unwrap();
        }
        assert!(mmse < ls, "{name}: mmse {mmse} ls {ls}");
    }
}

#[test]
fn eva_is_harder_than_epa_for_ls() {
    let mse = |name| {
        let sc = scenario(name);
        (0..150)
            .map(|i| {
                let o = sc.observe(derive_seed(3, &[i]), 50.0, 25.0).unwrap();
                classical::mse_linear(&o.h_ls_full, &o.h).unwrap()
            })
            .sum::<f64>()
    };
    assert!(mse(ProfileName::Eva) > mse(ProfileName::Epa));
}

#[test]
fn autoencoder_learns_to_reconstruct_pilot_grids() {
    let sc = scenario(ProfileName::Epa);
    let cfg = AeConfig::new(AeMode::Pilot, &sc.frame, &sc.pattern);
    let train = pilot_dataset(&sc, 400, 15.0, 4);
    let held = pilot_dataset(&sc, 100, 15.0, 5);
    let (x, xh) = (enhance::ae_inputs(&cfg, &train).unwrap(), enhance::ae_inputs(&cfg, &held).unwrap());
    let mut model = enhance::build_ae(&cfg, 6).unwrap();
    let before = enhance::reconstruction_mse(&model, &xh).unwrap();
    let tc = TrainConfig { epochs: 8, batch_size: 32, seed: 6, ..TrainConfig::default() };
    let report = enhance::train_ae(&mut model, &x, &tc).unwrap();
    let after = enhance::reconstruction_mse(&model, &xh).unwrap();
    assert!(after < 0.5 * before, "held-out {before} -> {after}");
    assert_eq!(report.epochs.len(), 8);

    let enhanced = enhance::enhance_dataset(&model, &cfg, &held).unwrap();
    assert_eq!(enhanced.input_dims.channels, 3);
    assert_eq!(enhanced.fingerprint, nn::fingerprint(&model));
}

#[test]
fn reesnet_training_improves_on_its_initial_estimate() {
    let sc = scenario(ProfileName::Epa);
    let ds = pilot_dataset(&sc, 256, 20.0, 7);
    let x = Tensor::from_f32(vec![ds.len(), 24, 2, 2], &ds.inputs).unwrap();
    let t = Tensor::from_f32(vec![ds.len(), 72, 14, 2], &ds.targets).unwrap();
    let mut model = zoo::build(ZooId::new(zoo::Family::ReEsNet, Some(12), false).unwrap(), GridDims::default(), 8).unwrap();
    let start = nn::train::evaluate(&model, &x, &t, 64).unwrap();
    let tc = TrainConfig {
        epochs: 6,
        batch_size: 32,
        seed: 8,
        select: Select::BestVal,
        ..TrainConfig::default()
    };
    let report = nn::train(&mut model, &x, &t, &tc).unwrap();
    let best = report.epochs.iter().filter_map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert!(best < 0.5 * start, "validation {best} vs initial {start}");
    let kept = &report.epochs[report.kept_epoch - 1];
    assert_eq!(kept.val_loss, Some(best));
}
