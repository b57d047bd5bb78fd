//! Complex time-frequency grids and their real-valued views.
//!
//! A [`ComplexGrid`] is indexed by (subcarrier, symbol) and stored row-major,
//! so row `k` is one subcarrier across all OFDM symbols. A [`RealStack`]
//! holds the same grid split into real/imaginary planes (plus an optional
//! learned feature plane), channel-last.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::PilotPattern;

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

/// 1-based (subcarrier, symbol) address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridIndex {
    pub subcarrier: usize,
    pub symbol: usize,
}

impl GridIndex {
    pub fn new(subcarrier: usize, symbol: usize) -> Self {
        Self { subcarrier, symbol }
    }
}

impl ComplexGrid {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "grid {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite value at flat index {pos}"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, Complex64::new(0.0, 0.0))
    }

    pub fn filled(rows: usize, cols: usize, value: Complex64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds a grid from a function of 0-based (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    /// 0-based access.
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn at(&self, idx: GridIndex) -> Result<Complex64> {
        if idx.subcarrier == 0 || idx.symbol == 0 || idx.subcarrier > self.rows || idx.symbol > self.cols {
            return Err(Error::Shape(format!(
                "index ({}, {}) outside {}x{} grid",
                idx.subcarrier, idx.symbol, self.rows, self.cols
            )));
        }
        Ok(self.get(idx.subcarrier - 1, idx.symbol - 1))
    }

    pub fn column(&self, col: usize) -> Vec<Complex64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    fn check_same_dims(&self, other: &Self, op: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "{op}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    /// Element-wise product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.check_same_dims(other, "hadamard")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_dims(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn split_reim(&self) -> RealStack {
        let n = self.data.len();
        let mut data = vec![0.0; 2 * n];
        for (i, z) in self.data.iter().enumerate() {
            data[2 * i] = z.re;
            data[2 * i + 1] = z.im;
        }
        RealStack {
            rows: self.rows,
            cols: self.cols,
            channels: 2,
            data,
        }
    }

    pub fn amp_phase(&self) -> AmpPhase {
        let amplitude = self.data.iter().map(|z| z.norm()).collect();
        let phase = self
            .data
            .iter()
            .map(|z| if z.re == 0.0 && z.im == 0.0 { 0.0 } else { z.im.atan2(z.re) })
            .collect();
        AmpPhase {
            rows: self.rows,
            cols: self.cols,
            amplitude,
            phase,
        }
    }

    /// Mean of |z|² over all elements.
    pub fn mean_power(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.data.len() as f64
    }
}

/// Amplitude and four-quadrant phase (radians, in (-π, π]) of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpPhase {
    pub rows: usize,
    pub cols: usize,
    pub amplitude: Vec<f64>,
    pub phase: Vec<f64>,
}

impl AmpPhase {
    pub fn reconstruct(&self) -> ComplexGrid {
        let data = self
            .amplitude
            .iter()
            .zip(&self.phase)
            .map(|(&a, &t)| Complex64::from_polar(a, t))
            .collect();
        ComplexGrid {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }
}

/// Real-valued rows x cols x channels stack, channel-last row-major.
///
/// Channel 0 is the real part, channel 1 the imaginary part, channel 2 (when
/// present) a learned feature plane.
#[derive(Debug, Clone, PartialEq)]
pub struct RealStack {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f64>,
}

impl RealStack {
    pub fn new(rows: usize, cols: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if !(channels == 2 || channels == 3) {
            return Err(Error::Shape(format!("stack must have 2 or 3 channels, got {channels}")));
        }
        if data.len() != rows * cols * channels {
            return Err(Error::Shape(format!(
                "stack {rows}x{cols}x{channels} needs {} values, got {}",
                rows * cols * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite value in stack".into()));
        }
        Ok(Self {
            rows,
            cols,
            channels,
            data,
        })
    }

    /// Interleaves whole planes (each row-major, length rows*cols) into a stack.
    pub fn from_planes(rows: usize, cols: usize, planes: &[&[f64]]) -> Result<Self> {
        let n = rows * cols;
        if let Some(p) = planes.iter().find(|p| p.len() != n) {
            return Err(Error::Shape(format!("plane of length {} for {rows}x{cols} grid", p.len())));
        }
        let channels = planes.len();
        let mut data = vec![0.0; n * channels];
        for (c, plane) in planes.iter().enumerate() {
            for (i, &v) in plane.iter().enumerate() {
                data[i * channels + c] = v;
            }
        }
        Self::new(rows, cols, channels, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, channel: usize) -> Vec<f64> {
        self.data.iter().skip(channel).step_by(self.channels).copied().collect()
    }

    /// Channel-block flattening: all of plane 0, then plane 1, ...
    pub fn flatten_planes(&self) -> Vec<f64> {
        (0..self.channels).flat_map(|c| self.plane(c)).collect()
    }

    /// Inverse of [`RealStack::flatten_planes`].
    pub fn unflatten_planes(rows: usize, cols: usize, channels: usize, flat: &[f64]) -> Result<Self> {
        let n = rows * cols;
        if flat.len() != n * channels {
            return Err(Error::Shape(format!(
                "flat vector of length {} for {rows}x{cols}x{channels}",
                flat.len()
            )));
        }
        let planes: Vec<&[f64]> = flat.chunks(n).collect();
        Self::from_planes(rows, cols, &planes)
    }

    pub fn merge_reim(&self) -> Result<ComplexGrid> {
        if self.channels != 2 {
            return Err(Error::Shape(format!(
                "only a 2-channel stack maps back to a complex grid (got {} channels)",
                self.channels
            )));
        }
        let data = self
            .data
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        Ok(ComplexGrid {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }
}

/// How frequency-axis interpolation covers subcarriers outside the pilot span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgePolicy {
    #[default]
    Extrapolate,
    Clamp,
}

/// Piecewise-linear interpolation of samples at strictly increasing 0-based
/// `positions` onto `0..n`. Outside the span, `edge` selects linear
/// extension of the end segment or holding the end value.
pub fn interp_linear(positions: &[usize], values: &[Complex64], n: usize, edge: EdgePolicy) -> Result<Vec<Complex64>> {
    if positions.len() != values.len() {
        return Err(Error::Shape("positions/values length differ".into()));
    }
    if positions.len() < 2 {
        return Err(Error::Config(format!(
            "linear interpolation needs at least 2 samples, got {}",
            positions.len()
        )));
    }
    if positions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("interpolation positions must be strictly increasing".into()));
    }
    let last = positions.len() - 1;
    let mut seg = 0;
    let out = (0..n)
        .map(|x| {
            if x < positions[0] && edge == EdgePolicy::Clamp {
                return values[0];
            }
            if x > positions[last] && edge == EdgePolicy::Clamp {
                return values[last];
            }
            while seg + 1 < last && x > positions[seg + 1] {
                seg += 1;
            }
            if x == positions[seg + 1] {
                return values[seg + 1];
            }
            let (p0, p1) = (positions[seg] as f64, positions[seg + 1] as f64);
            let t = (x as f64 - p0) / (p1 - p0);
            values[seg] + (values[seg + 1] - values[seg]) * t
        })
        .collect();
    Ok(out)
}

/// Expands pilot-grid values to the full `out_dims` frame.
///
/// Each pilot symbol is first interpolated along frequency (edge handling per
/// `edge`), then every subcarrier is interpolated along time between the
/// pilot symbols, holding the nearest pilot symbol outside their span.
pub fn bilinear_full_grid(
    pilot_vals: &ComplexGrid,
    pattern: &PilotPattern,
    out_dims: (usize, usize),
    edge: EdgePolicy,
) -> Result<ComplexGrid> {
    let (n_f, n_s) = out_dims;
    pattern.validate(n_f, n_s)?;
    if pilot_vals.dims() != (pattern.n_pf(), pattern.n_ps()) {
        return Err(Error::Shape(format!(
            "pilot values {}x{} do not match pattern {}x{}",
            pilot_vals.rows(),
            pilot_vals.cols(),
            pattern.n_pf(),
            pattern.n_ps()
        )));
    }
    let freq_filled: Vec<Vec<Complex64>> = (0..pattern.n_ps())
        .map(|j| {
            let pos: Vec<usize> = pattern.subcarriers(j).map(|k| k - 1).collect();
            interp_linear(&pos, &pilot_vals.column(j), n_f, edge)
        })
        .collect::<Result<_>>()?;
    interpolate_time(&pattern.symbol_positions(), &freq_filled, n_s)
}

/// Time-axis linear interpolation of full-frequency columns located at the
/// 0-based `symbols`; clamped outside their span.
pub fn interpolate_time(symbols: &[usize], columns: &[Vec<Complex64>], n_s: usize) -> Result<ComplexGrid> {
    let n_f = columns.first().map_or(0, Vec::len);
    if columns.iter().any(|c| c.len() != n_f) {
        return Err(Error::Shape("time interpolation columns differ in length".into()));
    }
    let mut out = ComplexGrid::zeros(n_f, n_s);
    let mut row_vals = vec![Complex64::new(0.0, 0.0); columns.len()];
    for k in 0..n_f {
        for (v, col) in row_vals.iter_mut().zip(columns) {
            *v = col[k];
        }
        let row = interp_linear(symbols, &row_vals, n_s, EdgePolicy::Clamp)?;
        for (i, z) in row.into_iter().enumerate() {
            out.set(k, i, z);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::PilotPattern;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn hadamard_cases() {
        let a = ComplexGrid::new(1, 2, vec![c(1.0, 1.0), c(2.0, 0.0)]).unwrap();
        let b = ComplexGrid::new(1, 2, vec![c(1.0, -1.0), c(0.0, 1.0)]).unwrap();
        let got = a.hadamard(&b).unwrap();
        // scalar-loop oracle
        let expect: Vec<Complex64> = (0..2)
            .map(|i| {
                let (x, y) = (a.data()[i], b.data()[i]);
                c(x.re * y.re - x.im * y.im, x.re * y.im + x.im * y.re)
            })
            .collect();
        assert_eq!(got.data(), &expect[..]);
        assert_eq!(got.data(), &[c(2.0, 0.0), c(0.0, 2.0)]);

        let ones = ComplexGrid::filled(1, 2, c(1.0, 0.0));
        assert_eq!(a.hadamard(&ones).unwrap(), a);
        let zeros = ComplexGrid::zeros(1, 2);
        assert_eq!(a.hadamard(&zeros).unwrap(), zeros);

        let wrong = ComplexGrid::zeros(2, 1);
        assert!(matches!(a.hadamard(&wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(ComplexGrid::new(1, 1, vec![c(f64::NAN, 0.0)]).is_err());
        assert!(ComplexGrid::new(1, 2, vec![c(0.0, 0.0)]).is_err());
    }

    #[test]
    fn split_and_merge() {
        let g = ComplexGrid::new(1, 1, vec![c(3.0, 4.0)]).unwrap();
        let s = g.split_reim();
        assert_eq!(s.plane(0), vec![3.0]);
        assert_eq!(s.plane(1), vec![4.0]);

        let real = ComplexGrid::from_fn(3, 2, |r, col| c((r + col) as f64, 0.0));
        assert!(real.split_reim().plane(1).iter().all(|&v| v == 0.0));

        let j = RealStack::from_planes(1, 1, &[&[0.0], &[1.0]]).unwrap();
        assert_eq!(j.merge_reim().unwrap().data(), &[c(0.0, 1.0)]);
        let one = RealStack::from_planes(1, 1, &[&[1.0], &[0.0]]).unwrap();
        assert_eq!(one.merge_reim().unwrap().data(), &[c(1.0, 0.0)]);

        let three = RealStack::from_planes(1, 1, &[&[1.0], &[0.0], &[2.0]]).unwrap();
        assert!(matches!(three.merge_reim(), Err(Error::Shape(_))));
        assert!(RealStack::new(1, 1, 4, vec![0.0; 4]).is_err());
    }

    #[test]
    fn amp_phase_cases() {
        let g = ComplexGrid::new(1, 4, vec![c(1.0, 0.0), c(0.0, 1.0), c(3.0, 4.0), c(0.0, 0.0)]).unwrap();
        let ap = g.amp_phase();
        assert_eq!(ap.amplitude, vec![1.0, 1.0, 5.0, 0.0]);
        assert_eq!(ap.phase[0], 0.0);
        assert!((ap.phase[1] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((ap.phase[2] - 0.927_295_218_001_612_2).abs() < 1e-12);
        assert_eq!(ap.phase[3], 0.0);
        let neg = ComplexGrid::new(1, 1, vec![c(-1.0, 0.0)]).unwrap();
        assert!((neg.amp_phase().phase[0] - std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn bilinear_constant_field() {
        let p = PilotPattern::paper_default();
        let v = c(0.3, -0.7);
        let pilots = ComplexGrid::filled(24, 2, v);
        let full = bilinear_full_grid(&pilots, &p, (72, 14), EdgePolicy::Extrapolate).unwrap();
        assert!(full.data().iter().all(|z| (z - v).norm() < 1e-15));
    }

    #[test]
    fn bilinear_reproduces_plane_and_pilots() {
        let p = PilotPattern::paper_default();
        let plane = |k: usize, i: usize| c(0.05 * k as f64 - 0.2 * i as f64 + 1.0, 0.01 * k as f64 + 0.1 * i as f64);
        let pilots = ComplexGrid::from_fn(24, 2, |r, j| {
            let (k, i) = p.position(r, j);
            plane(k, i)
        });
        let full = bilinear_full_grid(&pilots, &p, (72, 14), EdgePolicy::Extrapolate).unwrap();
        // interior: symbols 1..=13 span the two pilot symbols
        for k in 1..=72 {
            for i in 1..=13 {
                let got = full.get(k - 1, i - 1);
                assert!((got - plane(k, i)).norm() < 1e-12, "k={k} i={i}");
            }
        }
        // point-lookup oracle at all 48 pilot positions
        let mut n = 0;
        for j in 0..2 {
            for r in 0..24 {
                let (k, i) = p.position(r, j);
                assert_eq!(full.get(k - 1, i - 1), pilots.get(r, j));
                n += 1;
            }
        }
        assert_eq!(n, 48);
    }

    #[test]
    fn clamp_edge_holds_end_values() {
        let v = interp_linear(&[1, 3], &[c(1.0, 0.0), c(3.0, 0.0)], 5, EdgePolicy::Clamp).unwrap();
        assert_eq!(v.iter().map(|z| z.re).collect::<Vec<_>>(), vec![1.0, 1.0, 2.0, 3.0, 3.0]);
        let v = interp_linear(&[1, 3], &[c(1.0, 0.0), c(3.0, 0.0)], 5, EdgePolicy::Extrapolate).unwrap();
        assert_eq!(v.iter().map(|z| z.re).collect::<Vec<_>>(), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn too_few_pilots_is_config_error() {
        assert!(matches!(
            interp_linear(&[2], &[c(1.0, 0.0)], 4, EdgePolicy::Clamp),
            Err(Error::Config(_))
        ));
    }

    fn grid_strategy(rows: usize, cols: usize) -> impl Strategy<Value = ComplexGrid> {
        proptest::collection::vec((-1e6f64..1e6, -1e6f64..1e6), rows * cols).prop_map(move |v| {
            ComplexGrid::new(rows, cols, v.into_iter().map(|(a, b)| c(a, b)).collect()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn split_merge_round_trip_is_exact(g in grid_strategy(24, 2)) {
            prop_assert_eq!(g.split_reim().merge_reim().unwrap(), g);
        }

        #[test]
        fn amp_phase_reconstructs(g in grid_strategy(4, 3)) {
            let back = g.amp_phase().reconstruct();
            for (a, b) in g.data().iter().zip(back.data()) {
                prop_assert!((a - b).norm() <= 1e-12 * a.norm().max(1e-300));
            }
        }

        #[test]
        fn hadamard_commutes(a in grid_strategy(3, 3), b in grid_strategy(3, 3)) {
            prop_assert_eq!(a.hadamard(&b).unwrap(), b.hadamard(&a).unwrap());
        }

        #[test]
        fn plane_flatten_round_trip(v in proptest::collection::vec(-10f64..10.0, 24 * 2 * 3)) {
            let s = RealStack::new(24, 2, 3, v).unwrap();
            let back = RealStack::unflatten_planes(24, 2, 3, &s.flatten_planes()).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
