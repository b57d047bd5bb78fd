//! Least-squares and linear MMSE channel estimation.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::dataset::{Dataset, SampleMeta, TensorDims};
use crate::error::{Error, Result};
use crate::grid::{self, ComplexGrid, EdgePolicy};
use crate::link::PilotPattern;

pub type CMatrix = DMatrix<Complex64>;

/// MSE values at or below this are reported as the floor.
pub const MSE_FLOOR_DB: f64 = -100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub h_hat: ComplexGrid,
    pub method: &'static str,
    pub aux: Option<ComplexGrid>,
}

/// `Ĥ_p = Y_p / X_p` element-wise.
pub fn ls_pilots(y_p: &ComplexGrid, x_p: &ComplexGrid) -> Result<ComplexGrid> {
    if y_p.dims() != x_p.dims() {
        return Err(Error::Shape(format!("Y_p {:?} vs X_p {:?}", y_p.dims(), x_p.dims())));
    }
    if let Some(pos) = x_p.data().iter().position(|z| z.norm_sqr() == 0.0) {
        return Err(Error::DivisionByZero(format!("pilot symbol at flat index {pos} is zero")));
    }
    let data = y_p.data().iter().zip(x_p.data()).map(|(y, x)| y / x).collect();
    ComplexGrid::new(y_p.rows(), y_p.cols(), data)
}

pub fn ls_full(h_ls_p: &ComplexGrid, pattern: &PilotPattern, dims: (usize, usize), edge: EdgePolicy) -> Result<EstimateResult> {
    let h_hat = grid::bilinear_full_grid(h_ls_p, pattern, dims, edge)?;
    Ok(EstimateResult {
        h_hat,
        method: "LS",
        aux: Some(h_ls_p.clone()),
    })
}

/// Empirical second-order statistics of the channel at pilot subcarriers.
///
/// Pilot symbols sit on different subcarrier combs, so each pilot symbol
/// gets its own pair: `r_hhp[j] = E{h h_pj^H}` (N_f x N_pf) and
/// `r_hphp[j] = E{h_pj h_pj^H}` (N_pf x N_pf).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub r_hhp: Vec<CMatrix>,
    pub r_hphp: Vec<CMatrix>,
    pub source: StatsSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsSource {
    pub profile: String,
    pub mean_doppler_hz: f64,
    pub realizations: usize,
}

fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Sample-mean outer products over realizations, pooling every OFDM symbol
/// of each noise-free channel grid.
pub fn estimate_stats<'a, I>(channels: I, pattern: &PilotPattern, profile: &str) -> Result<ChannelStats>
where
    I: IntoIterator<Item = (&'a ComplexGrid, f64)>,
{
    let mut r_hhp: Vec<CMatrix> = Vec::new();
    let mut r_hphp: Vec<CMatrix> = Vec::new();
    let mut n_real = 0usize;
    let mut n_vec = 0usize;
    let mut doppler_sum = 0.0;
    let pilot_rows: Vec<Vec<usize>> = (0..pattern.n_ps())
        .map(|j| pattern.subcarriers(j).map(|k| k - 1).collect())
        .collect();
    for (h, doppler) in channels {
        if n_real == 0 {
            pattern.validate(h.rows(), h.cols())?;
            r_hhp = vec![CMatrix::zeros(h.rows(), pattern.n_pf()); pattern.n_ps()];
            r_hphp = vec![CMatrix::zeros(pattern.n_pf(), pattern.n_pf()); pattern.n_ps()];
        } else if h.rows() != r_hhp[0].nrows() {
            return Err(Error::Shape("channel grids differ in size".into()));
        }
        for i in 0..h.cols() {
            let col = h.column(i);
            for (j, rows) in pilot_rows.iter().enumerate() {
                let hp: Vec<Complex64> = rows.iter().map(|&k| col[k]).collect();
                let cross = &mut r_hhp[j];
                for (a, ha) in col.iter().enumerate() {
                    for (b, hb) in hp.iter().enumerate() {
                        cross[(a, b)] += ha * hb.conj();
                    }
                }
                let auto = &mut r_hphp[j];
                for (a, ha) in hp.iter().enumerate() {
                    for (b, hb) in hp.iter().enumerate() {
                        auto[(a, b)] += ha * hb.conj();
                    }
                }
            }
            n_vec += 1;
        }
        doppler_sum += doppler;
        n_real += 1;
    }
    if n_real == 0 {
        return Err(Error::Empty("no realizations for channel statistics".into()));
    }
    let scale = 1.0 / n_vec as f64;
    Ok(ChannelStats {
        r_hhp: r_hhp.into_iter().map(|m| m.scale(scale)).collect(),
        r_hphp: r_hphp.into_iter().map(|m| hermitian_part(&m.scale(scale))).collect(),
        source: StatsSource {
            profile: profile.to_string(),
            mean_doppler_hz: doppler_sum / n_real as f64,
            realizations: n_real,
        },
    })
}

impl ChannelStats {
    pub fn n_f(&self) -> usize {
        self.r_hhp[0].nrows()
    }

    pub fn n_pf(&self) -> usize {
        self.r_hphp[0].nrows()
    }

    pub fn n_ps(&self) -> usize {
        self.r_hphp.len()
    }

    /// Smallest eigenvalue across all autocorrelation matrices.
    pub fn min_eigenvalue(&self) -> f64 {
        self.r_hphp
            .iter()
            .flat_map(|m| m.clone().symmetric_eigen().eigenvalues.iter().copied().collect::<Vec<_>>())
            .fold(f64::INFINITY, f64::min)
    }

    /// Stores the matrices as a one-sample dataset file: input planes hold
    /// `r_hphp` (re, im per pilot symbol), target planes hold `r_hhp`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let (n_f, n_pf, n_ps) = (self.n_f(), self.n_pf(), self.n_ps());
        let pack = |ms: &[CMatrix], rows: usize| -> Vec<f32> {
            let mut out = Vec::with_capacity(rows * n_pf * 2 * n_ps);
            for r in 0..rows {
                for c in 0..n_pf {
                    for m in ms {
                        out.push(m[(r, c)].re as f32);
                        out.push(m[(r, c)].im as f32);
                    }
                }
            }
            out
        };
        let ds = Dataset {
            input_dims: TensorDims::new(n_pf, n_pf, 2 * n_ps),
            target_dims: TensorDims::new(n_f, n_pf, 2 * n_ps),
            carrier_freq: 0.0,
            subcarrier_spacing: 0.0,
            fingerprint: [0; 32],
            meta: vec![SampleMeta {
                snr_db: f32::INFINITY,
                doppler_hz: self.source.mean_doppler_hz as f32,
                seed: self.source.realizations as u64,
            }],
            inputs: pack(&self.r_hphp, n_pf),
            targets: pack(&self.r_hhp, n_f),
        };
        ds.write(path)
    }

    pub fn load(path: &Path, profile: &str) -> Result<Self> {
        let ds = Dataset::read(path)?;
        if ds.len() != 1 || ds.input_dims.channels % 2 != 0 || ds.input_dims.channels != ds.target_dims.channels {
            return Err(Error::corrupt(path, "not a channel statistics file"));
        }
        let n_pf = ds.input_dims.rows;
        let n_f = ds.target_dims.rows;
        let n_ps = ds.input_dims.channels / 2;
        let unpack = |data: &[f32], rows: usize| -> Vec<CMatrix> {
            (0..n_ps)
                .map(|j| {
                    CMatrix::from_fn(rows, n_pf, |r, c| {
                        let base = (r * n_pf + c) * 2 * n_ps + 2 * j;
                        Complex64::new(data[base] as f64, data[base + 1] as f64)
                    })
                })
                .collect()
        };
        Ok(Self {
            r_hphp: unpack(&ds.inputs, n_pf).iter().map(hermitian_part).collect(),
            r_hhp: unpack(&ds.targets, n_f),
            source: StatsSource {
                profile: profile.to_string(),
                mean_doppler_hz: ds.meta[0].doppler_hz as f64,
                realizations: ds.meta[0].seed as usize,
            },
        })
    }
}

/// Pre-solved frequency-domain MMSE interpolators, one per pilot symbol:
/// `W_j = R_hhp,j (R_hphp,j + λ I)^-1` with `λ = σ²_N / σ²_X`.
#[derive(Debug, Clone)]
pub struct MmseFilter {
    weights: Vec<CMatrix>,
}

impl MmseFilter {
    pub fn new(stats: &ChannelStats, noise_var: f64, signal_power: f64) -> Result<Self> {
        if noise_var.is_nan() || noise_var < 0.0 || signal_power.is_nan() || signal_power <= 0.0 {
            return Err(Error::Domain("noise variance must be >= 0 and signal power > 0".into()));
        }
        let lambda = noise_var / signal_power;
        let weights = stats
            .r_hhp
            .iter()
            .zip(&stats.r_hphp)
            .map(|(cross, auto)| solve_filter(cross, auto, lambda))
            .collect::<Result<_>>()?;
        Ok(Self { weights })
    }

    /// Applies the filter of pilot symbol `j` to one column of LS pilot values.
    pub fn apply_column(&self, j: usize, h_ls: &[Complex64]) -> Vec<Complex64> {
        let w = &self.weights[j];
        (0..w.nrows())
            .map(|r| (0..w.ncols()).map(|c| w[(r, c)] * h_ls[c]).sum())
            .collect()
    }

    pub fn estimate(&self, h_ls_p: &ComplexGrid, pattern: &PilotPattern, dims: (usize, usize)) -> Result<EstimateResult> {
        if h_ls_p.dims() != (pattern.n_pf(), pattern.n_ps()) || self.weights.len() != pattern.n_ps() {
            return Err(Error::Shape("LS pilot grid does not match statistics/pattern".into()));
        }
        if self.weights[0].nrows() != dims.0 || self.weights[0].ncols() != pattern.n_pf() {
            return Err(Error::Shape("statistics dimensions do not match frame".into()));
        }
        let cols: Vec<Vec<Complex64>> = (0..pattern.n_ps())
            .map(|j| self.apply_column(j, &h_ls_p.column(j)))
            .collect();
        let h_hat = grid::interpolate_time(&pattern.symbol_positions(), &cols, dims.1)?;
        let mut aux = ComplexGrid::zeros(pattern.n_pf(), pattern.n_ps());
        for (r, c, k, _) in pattern.cells() {
            aux.set(r, c, cols[c][k]);
        }
        Ok(EstimateResult {
            h_hat,
            method: "MMSE",
            aux: Some(aux),
        })
    }
}

fn solve_filter(cross: &CMatrix, auto: &CMatrix, lambda: f64) -> Result<CMatrix> {
    let n = auto.nrows();
    let a = auto + CMatrix::identity(n, n).scale(lambda);
    let rhs = cross.adjoint();
    if lambda > 0.0 {
        if let Some(chol) = a.clone().cholesky() {
            return Ok(chol.solve(&rhs).adjoint());
        }
    }
    // noiseless (or numerically indefinite) case: truncated pseudo-solve
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Err(Error::Domain("autocorrelation matrix is zero".into()));
    }
    let pinv = svd
        .pseudo_inverse(1e-10 * smax)
        .map_err(|e| Error::Domain(format!("pseudo-inverse failed: {e}")))?;
    Ok((pinv * rhs).adjoint())
}

pub fn mmse_estimate(
    h_ls_p: &ComplexGrid,
    stats: &ChannelStats,
    noise_var: f64,
    signal_power: f64,
    pattern: &PilotPattern,
    dims: (usize, usize),
) -> Result<EstimateResult> {
    MmseFilter::new(stats, noise_var, signal_power)?.estimate(h_ls_p, pattern, dims)
}

/// Mean of |ĥ - h|² over all resource elements.
pub fn mse_linear(h_hat: &ComplexGrid, h: &ComplexGrid) -> Result<f64> {
    if h_hat.dims() != h.dims() {
        return Err(Error::Shape(format!("estimate {:?} vs channel {:?}", h_hat.dims(), h.dims())));
    }
    let sum: f64 = h_hat.data().iter().zip(h.data()).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(sum / h.data().len() as f64)
}

pub fn to_db(mse: f64) -> f64 {
    if mse <= 0.0 {
        MSE_FLOOR_DB
    } else {
        (10.0 * mse.log10()).max(MSE_FLOOR_DB)
    }
}

pub fn mse_db(h_hat: &ComplexGrid, h: &ComplexGrid) -> Result<f64> {
    Ok(to_db(mse_linear(h_hat, h)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_realization, FrameSpec, PowerDelayProfile, ProfileName};
    use crate::link::{build_frame, extract_pilots, transmit};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn ls_identities() {
        let y = ComplexGrid::from_fn(24, 2, |r, j| c(r as f64, j as f64 - 0.5));
        let ones = ComplexGrid::filled(24, 2, c(1.0, 0.0));
        assert_eq!(ls_pilots(&y, &ones).unwrap(), y);
        let mut zero = ones.clone();
        zero.set(3, 1, c(0.0, 0.0));
        assert!(matches!(ls_pilots(&y, &zero), Err(Error::DivisionByZero(_))));
    }

    #[test]
    fn noiseless_ls_is_exact_at_pilots() {
        let spec = FrameSpec::default();
        let p = PilotPattern::paper_default();
        let pdp = PowerDelayProfile::make(ProfileName::Eva);
        let f = build_frame(&spec, &p, 4).unwrap();
        let ch = generate_realization(&pdp, 80.0, &spec, 5).unwrap();
        let y = transmit(&f, &ch, f64::INFINITY, 6).unwrap();
        let h_ls = ls_pilots(&extract_pilots(&y, &p).unwrap(), &f.pilot_values).unwrap();
        let h_p = extract_pilots(&ch.h_grid, &p).unwrap();
        for (a, b) in h_ls.data().iter().zip(h_p.data()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn ls_full_on_static_flat_channel() {
        let p = PilotPattern::paper_default();
        let v = c(0.6, -0.8);
        let r = ls_full(&ComplexGrid::filled(24, 2, v), &p, (72, 14), EdgePolicy::Extrapolate).unwrap();
        assert_eq!(r.h_hat.dims(), (72, 14));
        assert!(r.h_hat.data().iter().all(|z| (z - v).norm() < 1e-15));
    }

    #[test]
    fn scalar_mmse_closed_form() {
        let one = CMatrix::from_element(1, 1, c(1.0, 0.0));
        let stats = ChannelStats {
            r_hhp: vec![one.clone()],
            r_hphp: vec![one],
            source: StatsSource {
                profile: "toy".into(),
                mean_doppler_hz: 0.0,
                realizations: 1,
            },
        };
        for var in [0.0, 0.1, 1.0, 10.0] {
            let f = MmseFilter::new(&stats, var, 1.0).unwrap();
            let h = f.apply_column(0, &[c(2.0, -1.0)]);
            let expect = c(2.0, -1.0) / (1.0 + var);
            assert!((h[0] - expect).norm() < 1e-12, "var {var}");
        }
        let f = MmseFilter::new(&stats, 1e12, 1.0).unwrap();
        assert!(f.apply_column(0, &[c(1.0, 1.0)])[0].norm() < 1e-11);
    }

    fn flat_stats(n: usize) -> ChannelStats {
        // i.i.d. unit-power flat channels
        let spec = FrameSpec::default();
        let p = PilotPattern::paper_default();
        let pdp = PowerDelayProfile::from_db("flat", vec![0.0], &[0.0]).unwrap();
        let grids: Vec<ComplexGrid> = (0..n as u64)
            .map(|s| generate_realization(&pdp, 0.0, &spec, s).unwrap().h_grid)
            .collect();
        estimate_stats(grids.iter().map(|g| (g, 0.0)), &p, "flat").unwrap()
    }

    #[test]
    fn flat_channel_autocorrelation_is_all_ones() {
        let stats = flat_stats(10_000);
        for m in &stats.r_hphp {
            for z in m.iter() {
                assert!((z - c(1.0, 0.0)).norm() < 0.05, "{z}");
            }
        }
        assert!(stats.min_eigenvalue() >= -1e-9);
    }

    #[test]
    fn epa_stats_unit_diagonal_and_psd() {
        let spec = FrameSpec::default();
        let p = PilotPattern::paper_default();
        let pdp = PowerDelayProfile::make(ProfileName::Epa);
        let grids: Vec<ComplexGrid> = (0..2000u64)
            .map(|s| generate_realization(&pdp, 50.0, &spec, s).unwrap().h_grid)
            .collect();
        let stats = estimate_stats(grids.iter().map(|g| (g, 50.0)), &p, "EPA").unwrap();
        for m in &stats.r_hphp {
            for d in m.diagonal().iter() {
                assert!((d.re - 1.0).abs() < 0.05, "{d}");
            }
        }
        assert!(stats.min_eigenvalue() >= -1e-9);
        assert_eq!(stats.source.realizations, 2000);
    }

    #[test]
    fn empty_stats_is_error() {
        let p = PilotPattern::paper_default();
        let none: Vec<(&ComplexGrid, f64)> = vec![];
        assert!(matches!(estimate_stats(none, &p, "x"), Err(Error::Empty(_))));
    }

    #[test]
    fn stats_file_round_trip() {
        let stats = flat_stats(50);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.ofds");
        stats.save(&path).unwrap();
        let back = ChannelStats::load(&path, "flat").unwrap();
        assert_eq!(back.n_f(), 72);
        assert_eq!(back.n_pf(), 24);
        assert_eq!(back.n_ps(), 2);
        assert_eq!(back.source.realizations, 50);
        for (a, b) in stats.r_hhp.iter().zip(&back.r_hhp) {
            assert!((a - b).norm() < 1e-5);
        }
    }

    #[test]
    fn mse_cases() {
        let h = ComplexGrid::from_fn(72, 14, |k, i| c(k as f64, -(i as f64)));
        assert_eq!(mse_db(&h, &h).unwrap(), MSE_FLOOR_DB);
        let off = ComplexGrid::from_fn(72, 14, |k, i| h.get(k, i) + c(0.1, 0.0));
        assert!((mse_db(&off, &h).unwrap() + 20.0).abs() < 1e-9);
        assert!(mse_db(&h, &ComplexGrid::zeros(72, 13)).is_err());
    }
}
