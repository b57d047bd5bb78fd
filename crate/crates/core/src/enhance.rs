//! Autoencoder input enhancement.
//!
//! A four-layer fully connected autoencoder is trained to reconstruct
//! flattened 2-channel LS estimates. Its K-wide encoder output, reshaped to
//! the grid, becomes a third input channel for the estimators.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::FrameSpec;
use crate::dataset::{Dataset, TensorDims};
use crate::error::{Error, Result};
use crate::grid::RealStack;
use crate::link::PilotPattern;
use crate::nn::{self, GraphBuilder, LayerSpec, ModelGraph, Tensor, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AeMode {
    /// Pilot grid, K = N_pf · N_ps.
    Pilot,
    /// Interpolated full grid, K = N_f · N_s.
    Full,
}

impl fmt::Display for AeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AeMode::Pilot => "pilot",
            AeMode::Full => "full",
        })
    }
}

impl FromStr for AeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pilot" => Ok(AeMode::Pilot),
            "full" => Ok(AeMode::Full),
            _ => Err(Error::Config(format!("unknown AE mode {s:?} (expected pilot or full)"))),
        }
    }
}

/// Which encoder activation becomes the feature plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTap {
    #[default]
    PostRelu,
    PreRelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalize {
    #[default]
    None,
    /// Per-sample zero mean, unit variance feature plane.
    Zscore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AeConfig {
    pub mode: AeMode,
    pub rows: usize,
    pub cols: usize,
    pub feature_tap: FeatureTap,
    pub normalize: Normalize,
}

impl AeConfig {
    pub fn new(mode: AeMode, frame: &FrameSpec, pattern: &PilotPattern) -> Self {
        let (rows, cols) = match mode {
            AeMode::Pilot => (pattern.n_pf(), pattern.n_ps()),
            AeMode::Full => frame.dims(),
        };
        Self {
            mode,
            rows,
            cols,
            feature_tap: FeatureTap::default(),
            normalize: Normalize::default(),
        }
    }

    pub fn k(&self) -> usize {
        self.rows * self.cols
    }

    pub fn input_dims(&self) -> TensorDims {
        TensorDims::new(self.rows, self.cols, 2)
    }

    /// Number of layers up to and including the feature tap.
    fn tap_layers(&self) -> usize {
        match self.feature_tap {
            FeatureTap::PostRelu => 4,
            FeatureTap::PreRelu => 3,
        }
    }

    fn check_stack(&self, x: &RealStack) -> Result<()> {
        if x.dims() != (self.rows, self.cols, 2) {
            return Err(Error::Shape(format!(
                "{} mode expects a {}x{}x2 input, got {:?}",
                self.mode,
                self.rows,
                self.cols,
                x.dims()
            )));
        }
        Ok(())
    }
}

/// FC 2K→2K, ReLU, 2K→K, ReLU, K→K, ReLU, K→2K.
pub fn build_ae(cfg: &AeConfig, seed: u64) -> Result<ModelGraph> {
    let (k, k2) = (cfg.k(), 2 * cfg.k());
    if k == 0 {
        return Err(Error::Config("autoencoder width must be positive".into()));
    }
    let mut b = GraphBuilder::new(&[k2]);
    let mut h = b.input();
    for (i, (n_in, n_out)) in [(k2, k2), (k2, k), (k, k), (k, k2)].into_iter().enumerate() {
        h = b.then(LayerSpec::Dense { inputs: n_in, outputs: n_out }, h)?;
        if i < 3 {
            h = b.then(LayerSpec::Relu, h)?;
        }
    }
    b.build(seed)
}

/// Channel-block flattened batch [N, 2K] from a 2-channel dataset.
pub fn ae_inputs(cfg: &AeConfig, ds: &Dataset) -> Result<Tensor> {
    if ds.input_dims != cfg.input_dims() {
        return Err(Error::Shape(format!(
            "{} mode expects {}x{}x2 samples, dataset holds {}x{}x{}",
            cfg.mode, cfg.rows, cfg.cols, ds.input_dims.rows, ds.input_dims.cols, ds.input_dims.channels
        )));
    }
    let n = cfg.k();
    let mut data = Vec::with_capacity(ds.len() * 2 * n);
    for i in 0..ds.len() {
        let s = ds.input(i);
        for c in 0..2 {
            data.extend(s.iter().skip(c).step_by(2).map(|&v| v as f64));
        }
    }
    Tensor::new(vec![ds.len(), 2 * n], data)
}

/// Self-supervised reconstruction training: targets are the inputs.
pub fn train_ae(model: &mut ModelGraph, inputs: &Tensor, cfg: &TrainConfig) -> Result<TrainReport> {
    nn::train(model, inputs, inputs, cfg)
}

/// Encoder features [N, K] for flattened inputs [N, 2K].
pub fn extract_features(model: &ModelGraph, cfg: &AeConfig, x: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 2 || x.shape()[1] != 2 * cfg.k() {
        return Err(Error::Shape(format!("expected [N, {}] input, got {:?}", 2 * cfg.k(), x.shape())));
    }
    let mut out = Vec::with_capacity(x.batch() * cfg.k());
    for start in (0..x.batch()).step_by(256) {
        let idx: Vec<usize> = (start..(start + 256).min(x.batch())).collect();
        out.extend(model.forward_prefix(&x.select(&idx), cfg.tap_layers())?.into_data());
    }
    Tensor::new(vec![x.batch(), cfg.k()], out)
}

/// Mean reconstruction MSE over a batch of flattened inputs.
pub fn reconstruction_mse(model: &ModelGraph, x: &Tensor) -> Result<f64> {
    nn::train::evaluate(model, x, x, 256)
}

fn normalize_plane(plane: &mut [f64], how: Normalize) {
    if how == Normalize::Zscore {
        let n = plane.len() as f64;
        let mean = plane.iter().sum::<f64>() / n;
        let sd = (plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        for v in plane.iter_mut() {
            *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedSample {
    pub stack: RealStack,
    pub mode: AeMode,
    pub fingerprint: [u8; 32],
}

/// Appends the feature plane to one 2-channel stack.
pub fn enhance(model: &ModelGraph, cfg: &AeConfig, x: &RealStack) -> Result<EnhancedSample> {
    cfg.check_stack(x)?;
    let flat = Tensor::new(vec![1, 2 * cfg.k()], x.flatten_planes())?;
    let mut feat = extract_features(model, cfg, &flat)?.into_data();
    normalize_plane(&mut feat, cfg.normalize);
    let (re, im) = (x.plane(0), x.plane(1));
    Ok(EnhancedSample {
        stack: RealStack::from_planes(cfg.rows, cfg.cols, &[&re, &im, &feat])?,
        mode: cfg.mode,
        fingerprint: nn::fingerprint(model),
    })
}

/// Maps [`enhance`] over a dataset. Channels 0-1 are copied from the
/// source bytes; the AE fingerprint goes in the header.
pub fn enhance_dataset(model: &ModelGraph, cfg: &AeConfig, ds: &Dataset) -> Result<Dataset> {
    let x = ae_inputs(cfg, ds)?;
    let feats = extract_features(model, cfg, &x)?;
    let n = cfg.k();
    let mut inputs = Vec::with_capacity(ds.len() * 3 * n);
    for i in 0..ds.len() {
        let mut f = feats.sample(i).to_vec();
        normalize_plane(&mut f, cfg.normalize);
        for (px, fv) in ds.input(i).chunks_exact(2).zip(&f) {
            inputs.extend_from_slice(px);
            inputs.push(*fv as f32);
        }
    }
    Ok(Dataset {
        input_dims: TensorDims::new(cfg.rows, cfg.cols, 3),
        inputs,
        fingerprint: nn::fingerprint(model),
        ..ds.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SampleMeta;

    fn pilot_cfg() -> AeConfig {
        AeConfig::new(AeMode::Pilot, &FrameSpec::default(), &PilotPattern::paper_default())
    }

    #[test]
    fn pilot_architecture() {
        let cfg = pilot_cfg();
        assert_eq!(cfg.k(), 48);
        let m = build_ae(&cfg, 1).unwrap();
        assert_eq!(m.param_count(), 21_024);
        assert_eq!(m.input_shape(), &[96]);
        assert_eq!(m.output_shape(), &[96]);
        let relus = m.layers().iter().filter(|l| *l.spec() == LayerSpec::Relu).count();
        assert_eq!(relus, 3);
        let full = AeConfig::new(AeMode::Full, &FrameSpec::default(), &PilotPattern::paper_default());
        assert_eq!((full.k(), 2 * full.k()), (1008, 2016));
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_features() {
        let cfg = pilot_cfg();
        let m = build_ae(&cfg, 3).unwrap();
        let f = extract_features(&m, &cfg, &Tensor::zeros(vec![2, 96])).unwrap();
        assert_eq!(f.shape(), &[2, 48]);
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn enhance_keeps_originals_and_is_non_negative() {
        let cfg = pilot_cfg();
        let m = build_ae(&cfg, 4).unwrap();
        let data: Vec<f64> = (0..96).map(|i| ((i * 7 % 13) as f64 - 6.0) / 3.0).collect();
        let x = RealStack::new(24, 2, 2, data).unwrap();
        let e = enhance(&m, &cfg, &x).unwrap();
        assert_eq!(e.stack.dims(), (24, 2, 3));
        assert_eq!(e.stack.plane(0), x.plane(0));
        assert_eq!(e.stack.plane(1), x.plane(1));
        assert!(e.stack.plane(2).iter().all(|&v| v >= 0.0));
        assert!(e.stack.plane(2).iter().any(|&v| v > 0.0));
        let wrong = RealStack::new(72, 14, 2, vec![0.0; 2016]).unwrap();
        assert!(enhance(&m, &cfg, &wrong).is_err());
    }

    #[test]
    fn dataset_enhancement_matches_single_sample_path() {
        let cfg = pilot_cfg();
        let m = build_ae(&cfg, 5).unwrap();
        let n = 3;
        let ds = Dataset {
            input_dims: TensorDims::new(24, 2, 2),
            target_dims: TensorDims::new(72, 14, 2),
            carrier_freq: 2.1e9,
            subcarrier_spacing: 15e3,
            fingerprint: [0; 32],
            meta: vec![
                SampleMeta {
                    snr_db: 0.0,
                    doppler_hz: 0.0,
                    seed: 0
                };
                n
            ],
            inputs: (0..n * 96).map(|i| ((i * 31 % 17) as f32 - 8.0) / 4.0).collect(),
            targets: vec![0.0; n * 2016],
        };
        let out = enhance_dataset(&m, &cfg, &ds).unwrap();
        assert_eq!(out.input_dims.channels, 3);
        assert_eq!(out.len(), n);
        assert!(out.has_fingerprint());
        for i in 0..n {
            let src = ds.input(i);
            let dst = out.input(i);
            for p in 0..48 {
                assert_eq!(dst[3 * p].to_bits(), src[2 * p].to_bits());
                assert_eq!(dst[3 * p + 1].to_bits(), src[2 * p + 1].to_bits());
            }
            let x = RealStack::new(24, 2, 2, src.iter().map(|&v| v as f64).collect()).unwrap();
            let single = enhance(&m, &cfg, &x).unwrap().stack.plane(2);
            for (p, v) in single.iter().enumerate() {
                assert_eq!(dst[3 * p + 2], *v as f32);
            }
        }
        assert_eq!(enhance_dataset(&m, &cfg, &ds).unwrap(), out);
    }
}
