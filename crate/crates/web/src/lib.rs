//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each exported function returns a flat `Float64Array`; the layouts are
//! documented per function.

use wasm_bindgen::prelude::*;

use chanest_core::channel::{doppler_from_speed, noise_variance, FrameSpec, PowerDelayProfile, ProfileName};
use chanest_core::classical::{self, MmseFilter};
use chanest_core::dataset::{Dataset, SampleMeta, TensorDims};
use chanest_core::enhance::{self, AeConfig, AeMode};
use chanest_core::grid::{ComplexGrid, EdgePolicy};
use chanest_core::link::PilotPattern;
use chanest_core::nn::{Select, TrainConfig};
use chanest_core::rng::derive_seed;
use chanest_core::sim::Scenario;
use chanest_core::Result;

fn scenario(profile: &str) -> Result<Scenario> {
    let name: ProfileName = profile.parse()?;
    Scenario::new(
        PowerDelayProfile::make(name),
        FrameSpec::default(),
        PilotPattern::paper_default(),
        EdgePolicy::Extrapolate,
    )
}

fn doppler(sc: &Scenario, speed_kmh: f64) -> Result<f64> {
    doppler_from_speed(speed_kmh, sc.frame.carrier_freq)
}

/// `|H|` in dB, subcarrier-major (72 rows of 14 symbols).
pub fn magnitude_db(profile: &str, speed_kmh: f64, seed: u64) -> Result<Vec<f64>> {
    let sc = scenario(profile)?;
    let h = sc.channel(seed, doppler(&sc, speed_kmh)?)?;
    Ok(h.data().iter().map(|z| 10.0 * z.norm_sqr().max(1e-12).log10()).collect())
}

/// Rows of `[snr_db, ls_db, mmse_db]` for SNR 0..=25 dB in 5 dB steps,
/// averaged over `frames` paired frames. MMSE uses statistics from
/// `4 * frames` separate realizations at the same speed.
pub fn classical_curves(profile: &str, speed_kmh: f64, frames: usize, seed: u64) -> Result<Vec<f64>> {
    let sc = scenario(profile)?;
    let fd = doppler(&sc, speed_kmh)?;
    let grids: Vec<ComplexGrid> = (0..4 * frames as u64)
        .map(|i| sc.channel(derive_seed(seed, &[1, i]), fd))
        .collect::<Result<_>>()?;
    let stats = classical::estimate_stats(grids.iter().map(|g| (g, fd)), &sc.pattern, profile)?;
    let mut out = Vec::new();
    for snr in (0..=25).step_by(5).map(f64::from) {
        let filt = MmseFilter::new(&stats, noise_variance(snr, 1.0), 1.0)?;
        let (mut ls, mut mmse) = (0.0, 0.0);
        for i in 0..frames as u64 {
            let o = sc.observe(derive_seed(seed, &[2, i]), fd, snr)?;
            ls += classical::mse_linear(&o.h_ls_full, &o.h)?;
            mmse += classical::mse_linear(&filt.estimate(&o.h_ls_p, &sc.pattern, sc.frame.dims())?.h_hat, &o.h)?;
        }
        let n = frames.max(1) as f64;
        out.extend([snr, classical::to_db(ls / n), classical::to_db(mmse / n)]);
    }
    Ok(out)
}

/// Trains a pilot-mode autoencoder on `samples` LS pilot grids, then
/// enhances one fresh observation. Returns 24x2 planes, each row-major:
/// `[|H_ls|, |H|, feature, train_loss_first, train_loss_last]`
/// (the last two as single trailing values).
pub fn ae_features(profile: &str, speed_kmh: f64, snr_db: f64, samples: usize, epochs: usize, seed: u64) -> Result<Vec<f64>> {
    let sc = scenario(profile)?;
    let fd = doppler(&sc, speed_kmh)?;
    let cfg = AeConfig::new(AeMode::Pilot, &sc.frame, &sc.pattern);
    let mut meta = Vec::new();
    let mut inputs = Vec::new();
    for i in 0..samples.max(1) as u64 {
        let s = derive_seed(seed, &[3, i]);
        let o = sc.observe(s, fd, snr_db)?;
        meta.push(SampleMeta { snr_db: snr_db as f32, doppler_hz: fd as f32, seed: s });
        inputs.extend(o.h_ls_p.data().iter().flat_map(|z| [z.re as f32, z.im as f32]));
    }
    let ds = Dataset {
        input_dims: TensorDims::new(cfg.rows, cfg.cols, 2),
        target_dims: TensorDims::new(cfg.rows, cfg.cols, 2),
        carrier_freq: sc.frame.carrier_freq,
        subcarrier_spacing: sc.frame.subcarrier_spacing,
        fingerprint: [0; 32],
        targets: inputs.clone(),
        meta,
        inputs,
    };
    let x = enhance::ae_inputs(&cfg, &ds)?;
    let mut model = enhance::build_ae(&cfg, derive_seed(seed, &[4]))?;
    let tc = TrainConfig {
        epochs: epochs.max(1),
        initial_lr: 1e-3,
        lr_drop_period: None,
        lr_drop_factor: None,
        batch_size: 32,
        seed,
        val_fraction: 0.0,
        select: Select::Last,
    };
    let report = enhance::train_ae(&mut model, &x, &tc)?;

    let o = sc.observe(derive_seed(seed, &[5]), fd, snr_db)?;
    let stack = o.h_ls_p.split_reim();
    let e = enhance::enhance(&model, &cfg, &stack)?;
    let mut out: Vec<f64> = o.h_ls_p.data().iter().map(|z| z.norm()).collect();
    out.extend(sc.pattern.cells().map(|(_, _, k, i)| o.h.get(k, i).norm()));
    out.extend(e.stack.plane(2));
    let losses: Vec<f64> = report.epochs.iter().map(|r| r.train_loss).collect();
    out.push(losses[0]);
    out.push(*losses.last().unwrap_or(&losses[0]));
    Ok(out)
}

fn js(r: Result<Vec<f64>>) -> std::result::Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = magnitudeDb)]
pub fn magnitude_db_js(profile: &str, speed_kmh: f64, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
    js(magnitude_db(profile, speed_kmh, seed.into()))
}

#[wasm_bindgen(js_name = classicalCurves)]
pub fn classical_curves_js(profile: &str, speed_kmh: f64, frames: u32, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
    js(classical_curves(profile, speed_kmh, frames as usize, seed.into()))
}

#[wasm_bindgen(js_name = aeFeatures)]
pub fn ae_features_js(profile: &str, speed_kmh: f64, snr_db: f64, samples: u32, epochs: u32, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
    js(ae_features(profile, speed_kmh, snr_db, samples as usize, epochs as usize, seed.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_covers_the_grid() {
        let m = magnitude_db("EVA", 30.0, 1).unwrap();
        assert_eq!(m.len(), 72 * 14);
        assert!(m.iter().all(|v| v.is_finite()));
        assert!(magnitude_db("XYZ", 30.0, 1).is_err());
    }

    #[test]
    fn mmse_curve_beats_ls_at_low_snr() {
        let c = classical_curves("EPA", 20.0, 20, 2).unwrap();
        assert_eq!(c.len(), 18);
        assert!(c[2] < c[1]);
    }

    #[test]
    fn feature_plane_is_non_negative_and_training_helps() {
        let v = ae_features("EPA", 20.0, 15.0, 64, 6, 3).unwrap();
        assert_eq!(v.len(), 3 * 48 + 2);
        assert!(v[96..144].iter().all(|f| *f >= 0.0));
        assert!(v[145] < v[144]);
    }
}
