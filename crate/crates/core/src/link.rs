//! Frame construction, channel application and pilot gathering.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{self, ChannelRealization, FrameSpec};
use crate::error::{Error, Result};
use crate::grid::ComplexGrid;
use crate::rng::{self, purpose};

/// Positions of pilot resource elements.
///
/// Pilot symbol `j` (1-based index `pilot_symbols[j]`) carries `n_pf` pilots
/// at subcarriers `offsets[j] + m * step`, `m = 0..n_pf`. Pilot grids are
/// packed with one row per pilot slot (ascending subcarrier) and one column
/// per pilot symbol (ascending symbol).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PilotPattern {
    pilot_symbols: Vec<usize>,
    offsets: Vec<usize>,
    step: usize,
    n_pf: usize,
}

impl PilotPattern {
    pub fn new(pilot_symbols: Vec<usize>, offsets: Vec<usize>, step: usize, n_pf: usize) -> Result<Self> {
        if pilot_symbols.is_empty() || pilot_symbols.len() != offsets.len() {
            return Err(Error::Config("pilot symbols and offsets must be non-empty and equal in length".into()));
        }
        if step == 0 || n_pf == 0 {
            return Err(Error::Config("pilot step and count must be positive".into()));
        }
        if pilot_symbols.contains(&0) || offsets.contains(&0) {
            return Err(Error::Config("pilot indices are 1-based".into()));
        }
        if pilot_symbols.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("pilot symbols must be strictly increasing".into()));
        }
        Ok(Self {
            pilot_symbols,
            offsets,
            step,
            n_pf,
        })
    }

    /// Symbols 1 and 13; subcarriers 1,4,...,70 and 2,5,...,71.
    pub fn paper_default() -> Self {
        Self::new(vec![1, 13], vec![1, 2], 3, 24).expect("static pattern")
    }

    /// The standard pattern, checked against `frame`.
    pub fn default_for(frame: &FrameSpec) -> Result<Self> {
        let p = Self::paper_default();
        p.validate(frame.n_subcarriers, frame.n_symbols)?;
        Ok(p)
    }

    pub fn n_pf(&self) -> usize {
        self.n_pf
    }

    pub fn n_ps(&self) -> usize {
        self.pilot_symbols.len()
    }

    pub fn len(&self) -> usize {
        self.n_pf * self.n_ps()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// 1-based pilot symbol indices.
    pub fn pilot_symbols(&self) -> &[usize] {
        &self.pilot_symbols
    }

    /// 0-based pilot symbol indices.
    pub fn symbol_positions(&self) -> Vec<usize> {
        self.pilot_symbols.iter().map(|s| s - 1).collect()
    }

    /// 1-based subcarriers of pilot symbol `j`, ascending.
    pub fn subcarriers(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        let start = self.offsets[j];
        (0..self.n_pf).map(move |m| start + m * self.step)
    }

    /// 1-based (subcarrier, symbol) of pilot-grid cell (`row`, `col`).
    pub fn position(&self, row: usize, col: usize) -> (usize, usize) {
        (self.offsets[col] + row * self.step, self.pilot_symbols[col])
    }

    /// Every pilot as (pilot row, pilot col, 0-based subcarrier, 0-based symbol).
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        (0..self.n_pf).flat_map(move |r| {
            (0..self.n_ps()).map(move |c| {
                let (k, i) = self.position(r, c);
                (r, c, k - 1, i - 1)
            })
        })
    }

    pub fn validate(&self, n_f: usize, n_s: usize) -> Result<()> {
        if let Some(&s) = self.pilot_symbols.iter().find(|&&s| s > n_s) {
            return Err(Error::Config(format!("pilot symbol {s} outside {n_s}-symbol frame")));
        }
        for j in 0..self.n_ps() {
            if let Some(k) = self.subcarriers(j).find(|&k| k > n_f) {
                return Err(Error::Config(format!(
                    "pilot subcarrier {k} outside {n_f}-subcarrier frame"
                )));
            }
        }
        // strictly increasing symbols + in-column strictly increasing subcarriers
        // already make every position unique
        Ok(())
    }
}

/// A transmitted frame: every RE is a unit-power QPSK symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub x: ComplexGrid,
    pub pilot_values: ComplexGrid,
    pub pattern: PilotPattern,
}

fn qpsk(rng: &mut impl Rng) -> Complex64 {
    let bits: u8 = rng.random_range(0..4);
    let re = if bits & 1 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
    let im = if bits & 2 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
    Complex64::new(re, im)
}

pub fn build_frame(spec: &FrameSpec, pattern: &PilotPattern, seed: u64) -> Result<Frame> {
    spec.validate()?;
    pattern.validate(spec.n_subcarriers, spec.n_symbols)?;
    let mut rng = rng::stream(seed, &[purpose::FRAME]);
    let x = ComplexGrid::from_fn(spec.n_subcarriers, spec.n_symbols, |_, _| qpsk(&mut rng));
    let pilot_values = extract_pilots(&x, pattern)?;
    Ok(Frame {
        x,
        pilot_values,
        pattern: pattern.clone(),
    })
}

/// `Y = H ∘ X + W` with unit signal power.
pub fn transmit(frame: &Frame, channel: &ChannelRealization, snr_db: f64, seed: u64) -> Result<ComplexGrid> {
    let clean = channel.h_grid.hadamard(&frame.x)?;
    channel::add_awgn(&clean, snr_db, 1.0, seed)
}

pub fn extract_pilots(y: &ComplexGrid, pattern: &PilotPattern) -> Result<ComplexGrid> {
    pattern.validate(y.rows(), y.cols())?;
    let mut out = ComplexGrid::zeros(pattern.n_pf(), pattern.n_ps());
    for (r, c, k, i) in pattern.cells() {
        out.set(r, c, y.get(k, i));
    }
    Ok(out)
}

/// Writes pilot-grid values into their frame positions of `target`.
pub fn scatter_pilots(pilots: &ComplexGrid, pattern: &PilotPattern, target: &mut ComplexGrid) -> Result<()> {
    pattern.validate(target.rows(), target.cols())?;
    if pilots.dims() != (pattern.n_pf(), pattern.n_ps()) {
        return Err(Error::Shape("pilot grid does not match pattern".into()));
    }
    for (r, c, k, i) in pattern.cells() {
        target.set(k, i, pilots.get(r, c));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_realization, PowerDelayProfile, ProfileName};

    #[test]
    fn default_pattern_layout() {
        let p = PilotPattern::default_for(&FrameSpec::default()).unwrap();
        assert_eq!(p.len(), 48);
        assert_eq!((p.n_pf(), p.n_ps()), (24, 2));
        let first: Vec<usize> = p.subcarriers(0).collect();
        assert_eq!(first[0], 1);
        assert_eq!(first[1] - first[0], 3);
        assert_eq!(*first.last().unwrap(), 70);
        let second: Vec<usize> = p.subcarriers(1).collect();
        assert_eq!(second[0], 2);
        assert_eq!(*second.last().unwrap(), 71);
        let max = p.cells().map(|(_, _, k, _)| k + 1).max().unwrap();
        assert!(max <= 72);
        assert_eq!(p.pilot_symbols(), &[1, 13]);
        // the two pilot symbols never share a subcarrier
        assert!(first.iter().all(|k| !second.contains(k)));
        let mut seen = std::collections::HashSet::new();
        assert!(p.cells().all(|(_, _, k, i)| seen.insert((k, i))));
    }

    #[test]
    fn pattern_outside_grid_is_rejected() {
        let small = FrameSpec {
            n_subcarriers: 48,
            n_symbols: 12,
            ..FrameSpec::default()
        };
        assert!(matches!(PilotPattern::default_for(&small), Err(Error::Config(_))));
        assert!(PilotPattern::new(vec![3, 2], vec![1, 1], 3, 4).is_err());
    }

    #[test]
    fn frame_is_unit_power_and_deterministic() {
        let spec = FrameSpec::default();
        let p = PilotPattern::paper_default();
        let f = build_frame(&spec, &p, 17).unwrap();
        assert!(f.x.data().iter().all(|z| (z.norm_sqr() - 1.0).abs() <= 4.0 * f64::EPSILON));
        assert_eq!(f, build_frame(&spec, &p, 17).unwrap());
        assert_eq!(extract_pilots(&f.x, &p).unwrap(), f.pilot_values);
    }

    #[test]
    fn qpsk_points_are_balanced() {
        // frequency-count oracle over ~10^5 symbols
        let spec = FrameSpec::default();
        let p = PilotPattern::paper_default();
        let mut counts = [0usize; 4];
        let mut total = 0;
        for seed in 0..100 {
            let f = build_frame(&spec, &p, seed).unwrap();
            for z in f.x.data() {
                counts[(z.re < 0.0) as usize + 2 * (z.im < 0.0) as usize] += 1;
                total += 1;
            }
        }
        assert!(total >= 100_000);
        for c in counts {
            let freq = c as f64 / total as f64;
            assert!((freq - 0.25).abs() < 0.01, "{freq}");
        }
    }

    #[test]
    fn noiseless_transmit_is_hadamard() {
        let spec = FrameSpec::default();
        let p = PilotPattern::paper_default();
        let f = build_frame(&spec, &p, 1).unwrap();
        let pdp = PowerDelayProfile::make(ProfileName::Epa);
        let mut ch = generate_realization(&pdp, 30.0, &spec, 2).unwrap();
        let y = transmit(&f, &ch, f64::INFINITY, 3).unwrap();
        assert_eq!(y, ch.h_grid.hadamard(&f.x).unwrap());
        ch.h_grid = ComplexGrid::filled(72, 14, Complex64::new(1.0, 0.0));
        assert_eq!(transmit(&f, &ch, f64::INFINITY, 3).unwrap(), f.x);
    }

    #[test]
    fn transmit_noise_power_at_zero_db() {
        let spec = FrameSpec::default();
        let p = PilotPattern::paper_default();
        let pdp = PowerDelayProfile::make(ProfileName::Epa);
        let mut acc = 0.0;
        let mut n = 0usize;
        for s in 0..100u64 {
            let f = build_frame(&spec, &p, s).unwrap();
            let ch = generate_realization(&pdp, 50.0, &spec, s + 1000).unwrap();
            let y = transmit(&f, &ch, 0.0, s + 2000).unwrap();
            let clean = ch.h_grid.hadamard(&f.x).unwrap();
            acc += y.data().iter().zip(clean.data()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
            n += y.data().len();
        }
        assert!(n >= 100_000);
        let var = acc / n as f64;
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn gather_scatter_inverse() {
        let p = PilotPattern::paper_default();
        let g = ComplexGrid::from_fn(72, 14, |k, i| Complex64::new(k as f64, i as f64 * 0.5));
        let pil = extract_pilots(&g, &p).unwrap();
        assert_eq!(pil.dims(), (24, 2));
        let mut blank = ComplexGrid::zeros(72, 14);
        scatter_pilots(&pil, &p, &mut blank).unwrap();
        assert_eq!(extract_pilots(&blank, &p).unwrap(), pil);
        for (_, _, k, i) in p.cells() {
            assert_eq!(blank.get(k, i), g.get(k, i));
        }
    }
}
