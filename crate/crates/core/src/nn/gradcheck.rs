//! Central finite-difference checks of the analytic gradients.

use rand::Rng;

use crate::error::Result;
use crate::rng;

use super::graph::{mse_loss, GraphBuilder, ModelGraph};
use super::layers::{ConvSpec, LayerSpec, Padding, TransposedConvSpec};
use super::tensor::Tensor;

pub const STEP: f64 = 1e-5;
/// Denominator floor for the relative error, so that entries whose true
/// gradient vanishes are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub kind: &'static str,
    pub probes: usize,
    pub max_rel_err: f64,
}

pub const KINDS: [&str; 7] = ["Dense", "Conv2d", "TransposedConv2d", "ReLU", "BatchNorm", "Add", "BilinearUpsample"];

/// Small graph exercising one layer kind; returns the graph and the index
/// of the layer under test.
fn case(kind: &str) -> (ModelGraph, usize) {
    let conv = |cin, cout, k, s, p: Padding| {
        LayerSpec::Conv2d(ConvSpec {
            in_ch: cin,
            out_ch: cout,
            kernel: k,
            stride: s,
            padding: p,
        })
    };
    let (b, under_test) = match kind {
        "Dense" => {
            let mut b = GraphBuilder::new(&[2, 3, 1]);
            let x = b.input();
            b.then(LayerSpec::Dense { inputs: 6, outputs: 4 }, x).unwrap();
            (b, 0)
        }
        "Conv2d" => {
            let mut b = GraphBuilder::new(&[5, 4, 2]);
            let x = b.input();
            let p = Padding {
                top: 1,
                bottom: 0,
                left: 1,
                right: 1,
            };
            b.then(conv(2, 3, (3, 2), (2, 1), p), x).unwrap();
            (b, 0)
        }
        "TransposedConv2d" => {
            let mut b = GraphBuilder::new(&[3, 2, 2]);
            let x = b.input();
            let t = TransposedConvSpec {
                in_ch: 2,
                out_ch: 3,
                kernel: (4, 3),
                stride: (2, 3),
                padding: (1, 1),
                output_padding: (1, 0),
            };
            b.then(LayerSpec::TransposedConv2d(t), x).unwrap();
            (b, 0)
        }
        "ReLU" => {
            let mut b = GraphBuilder::new(&[4, 3, 2]);
            let x = b.input();
            b.then(LayerSpec::Relu, x).unwrap();
            (b, 0)
        }
        "BatchNorm" => {
            let mut b = GraphBuilder::new(&[3, 3, 2]);
            let x = b.input();
            b.then(LayerSpec::BatchNorm { channels: 2 }, x).unwrap();
            (b, 0)
        }
        "Add" => {
            let mut b = GraphBuilder::new(&[3, 3, 2]);
            let x = b.input();
            let c = b.then(LayerSpec::Conv2d(ConvSpec::same(2, 2, (3, 3))), x).unwrap();
            let s = b.add(LayerSpec::Add { subtract: true }, &[c, x]).unwrap();
            b.add(LayerSpec::Add { subtract: false }, &[s, c]).unwrap();
            (b, 1)
        }
        "BilinearUpsample" => {
            let mut b = GraphBuilder::new(&[3, 2, 2]);
            let x = b.input();
            b.then(LayerSpec::BilinearUpsample { height: 7, width: 5 }, x).unwrap();
            (b, 0)
        }
        other => panic!("no gradient case for layer kind {other}"),
    };
    (b.build(17).unwrap(), under_test)
}

fn train_loss(model: &mut ModelGraph, x: &Tensor, t: &Tensor) -> Result<f64> {
    let cache = model.forward_train(x)?;
    Ok(mse_loss(cache.output(), t)?.0)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares analytic and central-difference gradients at `probes` random
/// coordinates drawn from the tested layer's parameters and the graph
/// input.
pub fn check_kind(kind: &'static str, probes: usize, seed: u64) -> Result<GradCheck> {
    let (mut model, layer) = case(kind);
    let kind_index = KINDS.iter().position(|k| *k == kind).unwrap_or(0) as u64;
    let mut rng = rng::stream(seed, &[0x6772_6164, kind_index]);
    let batch = 3;
    let mut x_shape = vec![batch];
    x_shape.extend_from_slice(model.input_shape());
    let mut t_shape = vec![batch];
    t_shape.extend_from_slice(model.output_shape());
    // keep inputs away from the ReLU kink
    let x_data = (0..x_shape.iter().product::<usize>())
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    let x = Tensor::new(x_shape, x_data)?;
    let t = Tensor::new(t_shape.clone(), (0..t_shape.iter().product::<usize>()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    // randomize biases and BatchNorm affine terms too
    for p in model.params_mut() {
        for v in p.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }

    model.zero_grads();
    let cache = model.forward_train(&x)?;
    let (_, g) = mse_loss(cache.output(), &t)?;
    let dx = model.backward(&cache, g, true)?.expect("input gradient requested");

    let n_param_tensors = model.layers()[layer].params().len();
    let sizes: Vec<usize> = model.layers()[layer].params().iter().map(Vec::len).collect();
    let n_param_entries: usize = sizes.iter().sum();
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let pick = rng.random_range(0..n_param_entries + x.data().len());
        let (analytic, numeric) = if pick < n_param_entries {
            let (mut j, mut k) = (0, pick);
            while k >= sizes[j] {
                k -= sizes[j];
                j += 1;
            }
            debug_assert!(j < n_param_tensors);
            let analytic = model.layers()[layer].grads()[j][k];
            let orig = model.layers()[layer].params()[j][k];
            model.param_mut(layer, j)[k] = orig + STEP;
            let up = train_loss(&mut model, &x, &t)?;
            model.param_mut(layer, j)[k] = orig - STEP;
            let down = train_loss(&mut model, &x, &t)?;
            model.param_mut(layer, j)[k] = orig;
            (analytic, (up - down) / (2.0 * STEP))
        } else {
            let k = pick - n_param_entries;
            let mut xp = x.clone();
            xp.data_mut()[k] += STEP;
            let up = train_loss(&mut model, &xp, &t)?;
            xp.data_mut()[k] -= 2.0 * STEP;
            let down = train_loss(&mut model, &xp, &t)?;
            (dx.data()[k], (up - down) / (2.0 * STEP))
        };
        worst = worst.max(rel_err(analytic, numeric));
    }
    Ok(GradCheck {
        kind,
        probes,
        max_rel_err: worst,
    })
}

pub fn check_all(probes: usize, seed: u64) -> Result<Vec<GradCheck>> {
    KINDS.iter().map(|k| check_kind(k, probes, seed)).collect()
}
