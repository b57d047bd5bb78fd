//! Benchmark estimator architectures and their 3-channel variants.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{ConvSpec, GraphBuilder, LayerSpec, ModelGraph, NodeId, Padding, TrainConfig, TransposedConvSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Srcnn,
    ChannelNet,
    ReEsNet,
    InterpResNet,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Srcnn, Family::ChannelNet, Family::ReEsNet, Family::InterpResNet];

    pub fn slug(&self) -> &'static str {
        match self {
            Family::Srcnn => "srcnn",
            Family::ChannelNet => "channelnet",
            Family::ReEsNet => "reesnet",
            Family::InterpResNet => "interp-resnet",
        }
    }

    pub fn is_residual(&self) -> bool {
        matches!(self, Family::ReEsNet | Family::InterpResNet)
    }

    /// Residual families read the pilot grid, the others the interpolated
    /// full grid.
    pub fn reads_pilots(&self) -> bool {
        self.is_residual()
    }

    /// Reference training recipe (epochs, initial rate, step decay, batch).
    pub fn train_config(&self) -> TrainConfig {
        let (epochs, drop) = match self {
            Family::Srcnn => (100, None),
            Family::ChannelNet => (50, None),
            Family::ReEsNet | Family::InterpResNet => (50, Some((20, 0.5))),
        };
        TrainConfig {
            epochs,
            initial_lr: 1e-3,
            lr_drop_period: drop.map(|d| d.0),
            lr_drop_factor: drop.map(|d| d.1),
            batch_size: 128,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ZooId {
    pub family: Family,
    /// Filter count of residual families (16 or 12).
    pub filters: Option<usize>,
    pub enhanced: bool,
}

impl ZooId {
    pub fn new(family: Family, filters: Option<usize>, enhanced: bool) -> Result<Self> {
        match (family.is_residual(), filters) {
            (true, Some(16 | 12)) | (false, None) => Ok(Self { family, filters, enhanced }),
            (true, None) => Ok(Self {
                family,
                filters: Some(16),
                enhanced,
            }),
            _ => Err(Error::Config(format!("{} does not take filter count {filters:?}", family.slug()))),
        }
    }

    pub fn in_channels(&self) -> usize {
        if self.enhanced {
            3
        } else {
            2
        }
    }

    /// The same architecture with 2 input channels.
    pub fn baseline(&self) -> Self {
        Self { enhanced: false, ..*self }
    }

    /// Reference parameter count and the relative tolerance it is held to.
    pub fn reference_params(&self) -> (usize, f64) {
        let base = match (self.family, self.filters) {
            (Family::Srcnn, _) => 14_114,
            (Family::ChannelNet, _) => 685_219,
            (Family::ReEsNet, Some(12)) => 29_654,
            (Family::ReEsNet, _) => 52_466,
            (Family::InterpResNet, Some(12)) => 18_050,
            (Family::InterpResNet, _) => 29_250,
        };
        let delta = match (self.enhanced, self.family, self.filters) {
            (false, ..) => 0,
            (true, Family::Srcnn | Family::ChannelNet, _) => 5_184,
            (true, Family::ReEsNet, Some(12)) => 108,
            (true, Family::InterpResNet, Some(12)) => 108,
            (true, ..) => 144,
        };
        let tol = match self.family {
            Family::ChannelNet => 0.01,
            Family::InterpResNet => 0.02,
            _ => 0.0,
        };
        (base + delta, tol)
    }
}

impl fmt::Display for ZooId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.family.slug())?;
        if self.filters == Some(12) {
            f.write_str("-12f")?;
        }
        if self.enhanced {
            f.write_str("-enhanced")?;
        }
        Ok(())
    }
}

impl FromStr for ZooId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let mut rest = lower.as_str();
        let enhanced = match rest.strip_suffix("-enhanced") {
            Some(r) => {
                rest = r;
                true
            }
            None => false,
        };
        let filters = match rest.strip_suffix("-12f") {
            Some(r) => {
                rest = r;
                Some(12)
            }
            None => None,
        };
        let family = Family::ALL
            .into_iter()
            .find(|f| f.slug() == rest)
            .ok_or_else(|| Error::Config(format!("unknown model id {s:?}; expected family[-12f][-enhanced] with family one of srcnn, channelnet, reesnet, interp-resnet")))?;
        ZooId::new(family, filters, enhanced)
    }
}

/// All six baselines followed by their enhanced variants.
pub fn zoo_catalog() -> Vec<ZooId> {
    let mut base = Vec::new();
    for family in Family::ALL {
        let filters: &[Option<usize>] = if family.is_residual() { &[Some(16), Some(12)] } else { &[None] };
        for &f in filters {
            base.push(ZooId { family, filters: f, enhanced: false });
        }
    }
    let enhanced: Vec<ZooId> = base.iter().map(|id| ZooId { enhanced: true, ..*id }).collect();
    base.extend(enhanced);
    base
}

/// Grid sizes the estimators are built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridDims {
    pub n_f: usize,
    pub n_s: usize,
    pub n_pf: usize,
    pub n_ps: usize,
}

impl Default for GridDims {
    fn default() -> Self {
        Self {
            n_f: 72,
            n_s: 14,
            n_pf: 24,
            n_ps: 2,
        }
    }
}

fn conv(b: &mut GraphBuilder, from: NodeId, cin: usize, cout: usize, k: usize) -> Result<NodeId> {
    b.then(LayerSpec::Conv2d(ConvSpec::same(cin, cout, (k, k))), from)
}

fn relu(b: &mut GraphBuilder, from: NodeId) -> Result<NodeId> {
    b.then(LayerSpec::Relu, from)
}

fn add(b: &mut GraphBuilder, x: NodeId, y: NodeId) -> Result<NodeId> {
    b.add(LayerSpec::Add { subtract: false }, &[x, y])
}

fn srcnn_body(b: &mut GraphBuilder, x: NodeId, cin: usize) -> Result<NodeId> {
    let h = conv(b, x, cin, 64, 9)?;
    let h = relu(b, h)?;
    let h = conv(b, h, 64, 32, 1)?;
    let h = relu(b, h)?;
    conv(b, h, 32, 2, 5)
}

/// Conv in→F, four residual blocks, conv with a skip from the first conv.
fn residual_front(b: &mut GraphBuilder, x: NodeId, cin: usize, f: usize) -> Result<NodeId> {
    let first = conv(b, x, cin, f, 3)?;
    let mut h = first;
    for _ in 0..4 {
        let a = conv(b, h, f, f, 3)?;
        let a = relu(b, a)?;
        let a = conv(b, a, f, f, 3)?;
        h = add(b, a, h)?;
    }
    let c = conv(b, h, f, f, 3)?;
    add(b, c, first)
}

/// Stride and crop of a `k`-wide transposed convolution mapping `from`
/// positions onto exactly `to`.
fn upsampling_geometry(from: usize, to: usize, k: usize) -> Result<(usize, usize)> {
    let s = to / from;
    let full = (from - 1) * s + k;
    if s == 0 || to % from != 0 || full < to || (full - to) % 2 != 0 {
        return Err(Error::Config(format!(
            "no symmetric {k}-tap transposed convolution maps {from} onto {to} positions"
        )));
    }
    Ok((s, (full - to) / 2))
}

pub fn build(id: ZooId, dims: GridDims, seed: u64) -> Result<ModelGraph> {
    let cin = id.in_channels();
    let f = id.filters.unwrap_or(16);
    let input: [usize; 3] = if id.family.reads_pilots() { [dims.n_pf, dims.n_ps, cin] } else { [dims.n_f, dims.n_s, cin] };
    let mut b = GraphBuilder::new(&input);
    let x = b.input();
    match id.family {
        Family::Srcnn => {
            srcnn_body(&mut b, x, cin)?;
        }
        Family::ChannelNet => {
            let s = srcnn_body(&mut b, x, cin)?;
            let d = conv(&mut b, s, 2, 64, 3)?;
            let mut d = relu(&mut b, d)?;
            for _ in 0..18 {
                d = conv(&mut b, d, 64, 64, 3)?;
                d = b.then(LayerSpec::BatchNorm { channels: 64 }, d)?;
                d = relu(&mut b, d)?;
            }
            let noise = conv(&mut b, d, 64, 2, 3)?;
            b.add(LayerSpec::Add { subtract: true }, &[s, noise])?;
        }
        Family::ReEsNet => {
            let h = residual_front(&mut b, x, cin, f)?;
            let (sh, ph) = upsampling_geometry(dims.n_pf, dims.n_f, 11)?;
            let (sw, pw) = upsampling_geometry(dims.n_ps, dims.n_s, 11)?;
            let t = TransposedConvSpec {
                in_ch: f,
                out_ch: f,
                kernel: (11, 11),
                stride: (sh, sw),
                padding: (ph, pw),
                output_padding: (0, 0),
            };
            let h = b.then(LayerSpec::TransposedConv2d(t), h)?;
            conv(&mut b, h, f, 2, 3)?;
        }
        Family::InterpResNet => {
            let h = residual_front(&mut b, x, cin, f)?;
            let h = b.then(
                LayerSpec::BilinearUpsample {
                    height: dims.n_f,
                    width: dims.n_s,
                },
                h,
            )?;
            let k = (36, 7);
            b.then(
                LayerSpec::Conv2d(ConvSpec {
                    in_ch: f,
                    out_ch: 2,
                    kernel: k,
                    stride: (1, 1),
                    padding: Padding::same(k),
                }),
                h,
            )?;
        }
    }
    let model = b.build(seed)?;
    if model.output_shape() != [dims.n_f, dims.n_s, 2] {
        return Err(Error::Config(format!(
            "{id} produces {:?}, not the {}x{}x2 frame",
            model.output_shape(),
            dims.n_f,
            dims.n_s
        )));
    }
    Ok(model)
}

pub fn build_srcnn(in_channels: usize, seed: u64) -> Result<ModelGraph> {
    build(ZooId::new(Family::Srcnn, None, channels_flag(in_channels)?)?, GridDims::default(), seed)
}

pub fn build_channelnet(in_channels: usize, seed: u64) -> Result<ModelGraph> {
    build(ZooId::new(Family::ChannelNet, None, channels_flag(in_channels)?)?, GridDims::default(), seed)
}

pub fn build_reesnet(filters: usize, in_channels: usize, seed: u64) -> Result<ModelGraph> {
    build(ZooId::new(Family::ReEsNet, Some(filters), channels_flag(in_channels)?)?, GridDims::default(), seed)
}

pub fn build_interp_resnet(filters: usize, in_channels: usize, seed: u64) -> Result<ModelGraph> {
    build(ZooId::new(Family::InterpResNet, Some(filters), channels_flag(in_channels)?)?, GridDims::default(), seed)
}

fn channels_flag(in_channels: usize) -> Result<bool> {
    match in_channels {
        2 => Ok(false),
        3 => Ok(true),
        n => Err(Error::Config(format!("estimators take 2 or 3 input channels, got {n}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_and_ids() {
        let cat = zoo_catalog();
        assert_eq!(cat.len(), 12);
        assert_eq!(cat.iter().filter(|i| i.enhanced).count(), 6);
        for id in &cat {
            assert_eq!(id.to_string().parse::<ZooId>().unwrap(), *id);
            assert_eq!(id.in_channels(), if id.enhanced { 3 } else { 2 });
        }
        assert_eq!("ReEsNet-12F-Enhanced".parse::<ZooId>().unwrap().to_string(), "reesnet-12f-enhanced");
        assert_eq!("reesnet-16f".parse::<ZooId>().ok(), None);
        assert!("srcnn-12f".parse::<ZooId>().is_err());
        assert!("lstm".parse::<ZooId>().is_err());
    }

    #[test]
    fn exact_counts() {
        assert_eq!(build_srcnn(2, 0).unwrap().param_count(), 14_114);
        assert_eq!(build_srcnn(3, 0).unwrap().param_count(), 19_298);
        assert_eq!(build_reesnet(16, 2, 0).unwrap().param_count(), 52_466);
        assert_eq!(build_reesnet(16, 3, 0).unwrap().param_count(), 52_610);
        assert_eq!(build_reesnet(12, 2, 0).unwrap().param_count(), 29_654);
        assert_eq!(build_reesnet(12, 3, 0).unwrap().param_count(), 29_762);
        assert!(build_srcnn(4, 0).is_err());
    }

    #[test]
    fn under_specified_counts_within_tolerance() {
        for id in zoo_catalog() {
            let m = build(id, GridDims::default(), 0).unwrap();
            let (target, tol) = id.reference_params();
            let dev = (m.param_count() as f64 - target as f64) / target as f64;
            assert!(dev.abs() <= tol, "{id}: {} vs {target}", m.param_count());
            assert_eq!(m.output_shape(), &[72, 14, 2]);
        }
        let a = build_channelnet(2, 0).unwrap().param_count();
        let b = build_channelnet(3, 0).unwrap().param_count();
        assert_eq!(b - a, 5_184);
        let a = build_interp_resnet(16, 2, 0).unwrap();
        assert_eq!(build_interp_resnet(16, 3, 0).unwrap().param_count() - a.param_count(), 144);
        let up = a.layers().iter().find(|l| matches!(l.spec(), LayerSpec::BilinearUpsample { .. })).unwrap();
        assert_eq!(up.spec().param_count(), 0);
    }

    #[test]
    fn transposed_geometry() {
        assert_eq!(upsampling_geometry(24, 72, 11).unwrap(), (3, 4));
        assert_eq!(upsampling_geometry(2, 14, 11).unwrap(), (7, 2));
        assert!(upsampling_geometry(5, 14, 11).is_err());
    }
}
