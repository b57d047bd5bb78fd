//! Tapped-delay-line Rayleigh fading over an OFDM frame.
//!
//! Each tap is a sum-of-sinusoids Jakes process sampled once per OFDM symbol
//! (at the symbol midpoint). The frequency response at subcarrier `k` is the
//! exact sum over taps of `a_l(t) * exp(-j 2π f_k τ_l)`, with fractional
//! delays kept as-is.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ComplexGrid;
use crate::rng::{self, purpose};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const SINUSOIDS_PER_TAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProfileName {
    #[serde(rename = "EPA")]
    Epa,
    #[serde(rename = "EVA")]
    Eva,
}

impl fmt::Display for ProfileName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProfileName::Epa => "EPA",
            ProfileName::Eva => "EVA",
        })
    }
}

impl FromStr for ProfileName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "EPA" => Ok(ProfileName::Epa),
            "EVA" => Ok(ProfileName::Eva),
            _ => Err(Error::Config(format!("unknown channel profile '{s}' (expected EPA or EVA)"))),
        }
    }
}

/// Tap delays (seconds) and linear powers normalized to unit sum.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerDelayProfile {
    name: String,
    tap_delays: Vec<f64>,
    tap_powers: Vec<f64>,
}

// 3GPP TS 36.101 Annex B.2.1
const EPA_DELAYS_NS: [f64; 7] = [0.0, 30.0, 70.0, 90.0, 110.0, 190.0, 410.0];
const EPA_POWERS_DB: [f64; 7] = [0.0, -1.0, -2.0, -3.0, -8.0, -17.2, -20.8];
const EVA_DELAYS_NS: [f64; 9] = [0.0, 30.0, 150.0, 310.0, 370.0, 710.0, 1090.0, 1730.0, 2510.0];
const EVA_POWERS_DB: [f64; 9] = [0.0, -1.5, -1.4, -3.6, -0.6, -9.1, -7.0, -12.0, -16.9];

impl PowerDelayProfile {
    pub fn make(name: ProfileName) -> Self {
        let (delays, powers): (&[f64], &[f64]) = match name {
            ProfileName::Epa => (&EPA_DELAYS_NS, &EPA_POWERS_DB),
            ProfileName::Eva => (&EVA_DELAYS_NS, &EVA_POWERS_DB),
        };
        let delays_s: Vec<f64> = delays.iter().map(|d| d * 1e-9).collect();
        Self::from_db(name.to_string(), delays_s, powers).expect("built-in profile tables are valid")
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(Self::make(name.parse()?))
    }

    /// Builds a profile from delays in seconds and relative powers in dB.
    pub fn from_db(name: impl Into<String>, tap_delays: Vec<f64>, powers_db: &[f64]) -> Result<Self> {
        if tap_delays.is_empty() || tap_delays.len() != powers_db.len() {
            return Err(Error::Config("profile needs matching, non-empty delay and power lists".into()));
        }
        if tap_delays[0] != 0.0 || tap_delays.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("tap delays must start at 0 and strictly increase".into()));
        }
        let linear: Vec<f64> = powers_db.iter().map(|db| 10f64.powf(db / 10.0)).collect();
        let total: f64 = linear.iter().sum();
        Ok(Self {
            name: name.into(),
            tap_delays,
            tap_powers: linear.iter().map(|p| p / total).collect(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tap_delays(&self) -> &[f64] {
        &self.tap_delays
    }

    pub fn tap_powers(&self) -> &[f64] {
        &self.tap_powers
    }

    pub fn n_taps(&self) -> usize {
        self.tap_delays.len()
    }

    pub fn max_delay(&self) -> f64 {
        *self.tap_delays.last().unwrap()
    }

    pub fn rms_delay_spread(&self) -> f64 {
        let mean: f64 = self.tap_delays.iter().zip(&self.tap_powers).map(|(t, p)| t * p).sum();
        let second: f64 = self.tap_delays.iter().zip(&self.tap_powers).map(|(t, p)| t * t * p).sum();
        (second - mean * mean).max(0.0).sqrt()
    }
}

/// OFDM numerology of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameSpec {
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    pub subcarrier_spacing: f64,
    pub carrier_freq: f64,
    pub fft_size: usize,
    pub cp_samples: usize,
    pub sample_rate: f64,
}

impl Default for FrameSpec {
    /// 72 subcarriers x 14 symbols at 15 kHz, 2.1 GHz carrier, 128-point FFT
    /// at 1.92 MHz with a 16-sample cyclic prefix.
    fn default() -> Self {
        Self {
            n_subcarriers: 72,
            n_symbols: 14,
            subcarrier_spacing: 15e3,
            carrier_freq: 2.1e9,
            fft_size: 128,
            cp_samples: 16,
            sample_rate: 1.92e6,
        }
    }
}

impl FrameSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_subcarriers == 0 || self.n_symbols == 0 || self.fft_size == 0 {
            return Err(Error::Config("frame dimensions must be positive".into()));
        }
        if self.n_subcarriers > self.fft_size {
            return Err(Error::Config(format!(
                "{} subcarriers do not fit a {}-point FFT",
                self.n_subcarriers, self.fft_size
            )));
        }
        if !(self.subcarrier_spacing > 0.0 && self.carrier_freq > 0.0 && self.sample_rate > 0.0) {
            return Err(Error::Config("frequencies and sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_subcarriers, self.n_symbols)
    }

    pub fn symbol_duration(&self) -> f64 {
        (self.fft_size + self.cp_samples) as f64 / self.sample_rate
    }

    /// Baseband frequency of 0-based subcarrier `k`, centred on DC.
    pub fn subcarrier_freq(&self, k: usize) -> f64 {
        (k as f64 - (self.n_subcarriers as f64 - 1.0) / 2.0) * self.subcarrier_spacing
    }

    /// Sampling instant (midpoint) of 0-based symbol `i`.
    pub fn symbol_time(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.symbol_duration()
    }
}

/// Maximum Doppler shift for a terminal moving at `speed_kmh`.
pub fn doppler_from_speed(speed_kmh: f64, carrier_freq: f64) -> Result<f64> {
    if speed_kmh.is_nan() || speed_kmh < 0.0 {
        return Err(Error::Domain(format!("speed must be non-negative, got {speed_kmh}")));
    }
    Ok(speed_kmh / 3.6 * carrier_freq / SPEED_OF_LIGHT)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h_grid: ComplexGrid,
    pub pdp_name: String,
    pub doppler_hz: f64,
    pub seed: u64,
    pub snr_db: Option<f64>,
}

/// Complex gain of every tap at every symbol: `gains[tap][symbol]`.
pub fn tap_gains(pdp: &PowerDelayProfile, doppler_hz: f64, frame: &FrameSpec, seed: u64) -> Result<Vec<Vec<Complex64>>> {
    if doppler_hz.is_nan() || doppler_hz < 0.0 {
        return Err(Error::Domain(format!("doppler must be non-negative, got {doppler_hz}")));
    }
    let times: Vec<f64> = (0..frame.n_symbols).map(|i| frame.symbol_time(i)).collect();
    let gains = pdp
        .tap_powers()
        .iter()
        .enumerate()
        .map(|(l, &power)| {
            let mut rng = rng::stream(seed, &[purpose::FADING, l as u64]);
            let mut acc = vec![Complex64::new(0.0, 0.0); times.len()];
            for _ in 0..SINUSOIDS_PER_TAP {
                let angle = 2.0 * PI * rng.random::<f64>();
                let phase = 2.0 * PI * rng.random::<f64>();
                let w = 2.0 * PI * doppler_hz * angle.cos();
                for (a, &t) in acc.iter_mut().zip(&times) {
                    *a += Complex64::from_polar(1.0, w * t + phase);
                }
            }
            let scale = (power / SINUSOIDS_PER_TAP as f64).sqrt();
            acc.into_iter().map(|a| a * scale).collect()
        })
        .collect();
    Ok(gains)
}

pub fn generate_realization(
    pdp: &PowerDelayProfile,
    doppler_hz: f64,
    frame: &FrameSpec,
    seed: u64,
) -> Result<ChannelRealization> {
    frame.validate()?;
    let gains = tap_gains(pdp, doppler_hz, frame, seed)?;
    // per (subcarrier, tap) phasor exp(-j 2π f_k τ_l)
    let phasors: Vec<Vec<Complex64>> = (0..frame.n_subcarriers)
        .map(|k| {
            let f = frame.subcarrier_freq(k);
            pdp.tap_delays()
                .iter()
                .map(|&tau| Complex64::from_polar(1.0, -2.0 * PI * f * tau))
                .collect()
        })
        .collect();
    let h = ComplexGrid::from_fn(frame.n_subcarriers, frame.n_symbols, |k, i| {
        phasors[k].iter().zip(&gains).map(|(p, g)| p * g[i]).sum()
    });
    Ok(ChannelRealization {
        h_grid: h,
        pdp_name: pdp.name().to_string(),
        doppler_hz,
        seed,
        snr_db: None,
    })
}

/// Noise variance for a given SNR and signal power; zero for infinite SNR.
pub fn noise_variance(snr_db: f64, signal_power: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        signal_power / 10f64.powf(snr_db / 10.0)
    }
}

/// Adds circular complex Gaussian noise. `snr_db = +inf` disables noise.
pub fn add_awgn(y: &ComplexGrid, snr_db: f64, signal_power: f64, seed: u64) -> Result<ComplexGrid> {
    if signal_power.is_nan() || signal_power <= 0.0 {
        return Err(Error::Domain(format!("signal power must be positive, got {signal_power}")));
    }
    if snr_db.is_nan() {
        return Err(Error::Domain("SNR is NaN".into()));
    }
    let var = noise_variance(snr_db, signal_power);
    if var == 0.0 {
        return Ok(y.clone());
    }
    let sigma = (var / 2.0).sqrt();
    let mut rng = rng::stream(seed, &[purpose::NOISE]);
    let mut out = y.clone();
    for z in out.data_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *z += Complex64::new(re * sigma, im * sigma);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_tables() {
        let epa = PowerDelayProfile::make(ProfileName::Epa);
        assert_eq!(epa.n_taps(), 7);
        assert!((epa.max_delay() - 410e-9).abs() < 1e-18);
        let eva = PowerDelayProfile::make(ProfileName::Eva);
        assert_eq!(eva.n_taps(), 9);
        assert!((eva.max_delay() - 2510e-9).abs() < 1e-18);
        for p in [&epa, &eva] {
            assert!((p.tap_powers().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(eva.rms_delay_spread() > epa.rms_delay_spread());
        assert!(PowerDelayProfile::from_name("ETU").is_err());
        assert_eq!(PowerDelayProfile::from_name("epa").unwrap(), epa);
    }

    #[test]
    fn doppler_conversion() {
        let fd = doppler_from_speed(50.0, 2.1e9).unwrap();
        assert!((fd - 97.28).abs() < 0.01, "{fd}");
        let fd = doppler_from_speed(160.0, 2.1e9).unwrap();
        assert!((fd - 311.3).abs() < 0.1, "{fd}");
        assert_eq!(doppler_from_speed(0.0, 2.1e9).unwrap(), 0.0);
        assert!(matches!(doppler_from_speed(-1.0, 2.1e9), Err(Error::Domain(_))));
    }

    #[test]
    fn numerology() {
        let f = FrameSpec::default();
        assert!((f.symbol_duration() - 75e-6).abs() < 1e-15);
        assert!((f.subcarrier_freq(0) + 35.5 * 15e3).abs() < 1e-9);
        assert!((f.subcarrier_freq(71) - 35.5 * 15e3).abs() < 1e-9);
        let bad = FrameSpec {
            n_subcarriers: 200,
            ..FrameSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn static_channel_is_constant_in_time() {
        let pdp = PowerDelayProfile::make(ProfileName::Eva);
        let r = generate_realization(&pdp, 0.0, &FrameSpec::default(), 11).unwrap();
        for k in 0..72 {
            for i in 1..14 {
                assert_eq!(r.h_grid.get(k, i), r.h_grid.get(k, 0));
            }
        }
    }

    #[test]
    fn single_tap_is_frequency_flat() {
        let pdp = PowerDelayProfile::from_db("flat", vec![0.0], &[0.0]).unwrap();
        let r = generate_realization(&pdp, 97.0, &FrameSpec::default(), 3).unwrap();
        for i in 0..14 {
            let m0 = r.h_grid.get(0, i).norm();
            for k in 1..72 {
                assert!((r.h_grid.get(k, i).norm() - m0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn realization_is_deterministic() {
        let pdp = PowerDelayProfile::make(ProfileName::Epa);
        let f = FrameSpec::default();
        let a = generate_realization(&pdp, 50.0, &f, 99).unwrap();
        let b = generate_realization(&pdp, 50.0, &f, 99).unwrap();
        assert_eq!(a, b);
        let c = generate_realization(&pdp, 50.0, &f, 100).unwrap();
        assert_ne!(a.h_grid, c.h_grid);
    }

    #[test]
    fn awgn_contract() {
        let y = ComplexGrid::filled(100, 1000, Complex64::new(0.0, 0.0));
        assert_eq!(add_awgn(&y, f64::INFINITY, 1.0, 5).unwrap(), y);
        let n = add_awgn(&y, 0.0, 1.0, 5).unwrap();
        let var = n.mean_power();
        assert!((var - 1.0).abs() < 0.02, "{var}");
        assert_eq!(n, add_awgn(&y, 0.0, 1.0, 5).unwrap());
        assert!(add_awgn(&y, 0.0, 0.0, 5).is_err());
    }
}
