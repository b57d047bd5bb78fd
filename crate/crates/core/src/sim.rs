//! One noisy pilot observation of a fading frame, end to end.

use rand::Rng;

use crate::channel::{self, FrameSpec, PowerDelayProfile};
use crate::classical;
use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, EdgePolicy};
use crate::link::{self, PilotPattern};
use crate::rng::{self, purpose};

#[derive(Debug, Clone)]
pub struct Scenario {
    pub pdp: PowerDelayProfile,
    pub frame: FrameSpec,
    pub pattern: PilotPattern,
    pub edge: EdgePolicy,
}

#[derive(Debug, Clone)]
pub struct Observation {
    /// True channel.
    pub h: ComplexGrid,
    /// LS estimates at the pilots (N_pf x N_ps).
    pub h_ls_p: ComplexGrid,
    /// Bilinear interpolation of `h_ls_p` over the frame.
    pub h_ls_full: ComplexGrid,
    pub doppler_hz: f64,
}

impl Scenario {
    pub fn new(pdp: PowerDelayProfile, frame: FrameSpec, pattern: PilotPattern, edge: EdgePolicy) -> Result<Self> {
        frame.validate()?;
        pattern.validate(frame.n_subcarriers, frame.n_symbols)?;
        Ok(Self { pdp, frame, pattern, edge })
    }

    /// Channel, frame and noise all derive from `seed`; the same seed at
    /// two SNRs gives the same channel and symbols with rescaled noise.
    pub fn observe(&self, seed: u64, doppler_hz: f64, snr_db: f64) -> Result<Observation> {
        let real = channel::generate_realization(&self.pdp, doppler_hz, &self.frame, seed)?;
        let frame = link::build_frame(&self.frame, &self.pattern, seed)?;
        let y = link::transmit(&frame, &real, snr_db, seed)?;
        let h_ls_p = classical::ls_pilots(&link::extract_pilots(&y, &self.pattern)?, &frame.pilot_values)?;
        let h_ls_full = classical::ls_full(&h_ls_p, &self.pattern, self.frame.dims(), self.edge)?.h_hat;
        Ok(Observation {
            h: real.h_grid,
            h_ls_p,
            h_ls_full,
            doppler_hz,
        })
    }

    /// Noise-free channel only.
    pub fn channel(&self, seed: u64, doppler_hz: f64) -> Result<ComplexGrid> {
        Ok(channel::generate_realization(&self.pdp, doppler_hz, &self.frame, seed)?.h_grid)
    }
}

/// Terminal speed drawn uniformly from `[lo, hi]` km/h.
pub fn draw_speed(seed: u64, range: (f64, f64)) -> Result<f64> {
    let (lo, hi) = range;
    if !(lo >= 0.0 && hi >= lo) {
        return Err(Error::Config(format!("speed range [{lo}, {hi}] is invalid")));
    }
    if hi == lo {
        return Ok(lo);
    }
    Ok(rng::stream(seed, &[purpose::SPEED]).random_range(lo..=hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ProfileName;

    #[test]
    fn noiseless_observation_is_exact_at_pilots() {
        let sc = Scenario::new(
            PowerDelayProfile::make(ProfileName::Epa),
            FrameSpec::default(),
            PilotPattern::paper_default(),
            EdgePolicy::Extrapolate,
        )
        .unwrap();
        let o = sc.observe(9, 50.0, f64::INFINITY).unwrap();
        for (r, c, k, i) in sc.pattern.cells() {
            assert!((o.h_ls_p.get(r, c) - o.h.get(k, i)).norm() < 1e-12);
        }
    }

    #[test]
    fn speeds_stay_in_range() {
        for s in 0..50 {
            let v = draw_speed(s, (0.0, 50.0)).unwrap();
            assert!((0.0..=50.0).contains(&v));
        }
        assert_eq!(draw_speed(1, (20.0, 20.0)).unwrap(), 20.0);
        assert!(draw_speed(1, (5.0, 1.0)).is_err());
    }
}
