use crate::error::{Error, Result};

use super::kernels::{self, BnStats};
use super::layers::{check_finite, LayerSpec, BN_MOMENTUM};
use super::tensor::Tensor;

/// Handle to a value in a graph under construction. The graph input is
/// node 0; layer `i` produces node `i + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

pub struct GraphBuilder {
    input_shape: Vec<usize>,
    layers: Vec<(LayerSpec, Vec<usize>, Vec<usize>)>,
}

impl GraphBuilder {
    pub fn new(input_shape: &[usize]) -> Self {
        Self {
            input_shape: input_shape.to_vec(),
            layers: Vec::new(),
        }
    }

    pub fn input(&self) -> NodeId {
        NodeId(0)
    }

    pub fn shape(&self, node: NodeId) -> &[usize] {
        if node.0 == 0 {
            &self.input_shape
        } else {
            &self.layers[node.0 - 1].2
        }
    }

    /// Appends a layer reading from `inputs`; the output shape is resolved
    /// immediately so a mis-shaped graph never gets built.
    pub fn add(&mut self, spec: LayerSpec, inputs: &[NodeId]) -> Result<NodeId> {
        let index = self.layers.len();
        if let Some(bad) = inputs.iter().find(|n| n.0 > index) {
            return Err(spec.layer_error(index, format!("input node {} does not exist yet", bad.0)));
        }
        let shapes: Vec<&[usize]> = inputs.iter().map(|&n| self.shape(n)).collect();
        let out = spec.output_shape(&shapes).map_err(|r| spec.layer_error(index, r))?;
        self.layers.push((spec, inputs.iter().map(|n| n.0).collect(), out));
        Ok(NodeId(index + 1))
    }

    pub fn then(&mut self, spec: LayerSpec, from: NodeId) -> Result<NodeId> {
        self.add(spec, &[from])
    }

    /// Finalizes the graph; the last layer added is the output.
    pub fn build(self, seed: u64) -> Result<ModelGraph> {
        if self.layers.is_empty() {
            return Err(Error::Config("graph has no layers".into()));
        }
        let layers = self
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, (spec, inputs, out_shape))| {
                let params = spec.init_params(seed, i);
                let grads = params.iter().map(|p| vec![0.0; p.len()]).collect();
                Layer {
                    buffers: spec.init_buffers(),
                    spec,
                    inputs,
                    out_shape,
                    params,
                    grads,
                }
            })
            .collect();
        Ok(ModelGraph {
            input_shape: self.input_shape,
            layers,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    spec: LayerSpec,
    inputs: Vec<usize>,
    out_shape: Vec<usize>,
    params: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
    buffers: Vec<Vec<f64>>,
}

impl Layer {
    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    /// Value indices read by this layer (0 is the graph input).
    pub fn inputs(&self) -> &[usize] {
        &self.inputs
    }

    pub fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn grads(&self) -> &[Vec<f64>] {
        &self.grads
    }

    pub fn buffers(&self) -> &[Vec<f64>] {
        &self.buffers
    }

    fn needs_inputs_for_backward(&self) -> bool {
        matches!(
            self.spec,
            LayerSpec::Dense { .. } | LayerSpec::Conv2d(_) | LayerSpec::TransposedConv2d(_) | LayerSpec::BatchNorm { .. }
        )
    }
}

/// Activations kept from a training-mode forward pass.
pub struct ForwardCache {
    values: Vec<Option<Tensor>>,
    bn: Vec<Option<BnStats>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        self.values.last().and_then(|v| v.as_ref()).expect("output is always kept")
    }
}

/// Learned parameters and buffers, detached from the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub params: Vec<Vec<Vec<f64>>>,
    pub buffers: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct ModelGraph {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl ModelGraph {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.layers.last().expect("non-empty").out_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Learnable scalars; BatchNorm running statistics are not counted.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec.param_count()).sum()
    }

    /// Per-frame operation count, `2 · positions · kernel product` summed
    /// over layers.
    pub fn op_count(&self) -> u64 {
        self.layers.iter().map(|l| l.spec.op_count(&l.out_shape)).sum()
    }

    /// Multiply-accumulates per frame (half of [`Self::op_count`]).
    pub fn mac_count(&self) -> u64 {
        self.op_count() / 2
    }

    fn value_shape(&self, v: usize) -> &[usize] {
        if v == 0 {
            &self.input_shape
        } else {
            &self.layers[v - 1].out_shape
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() < 2 || x.sample_shape() != self.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "model expects [N, {}] input, got {:?}",
                self.input_shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", "),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Runs the first `upto` layers; value `upto` is always kept.
    fn run(&self, x: &Tensor, train: bool, upto: usize) -> Result<ForwardCache> {
        self.check_input(x)?;
        let n_values = self.layers.len() + 1;
        let mut uses = vec![0usize; n_values];
        let mut keep = vec![false; n_values];
        keep[upto] = true;
        for (i, l) in self.layers.iter().enumerate().take(upto) {
            for &v in &l.inputs {
                uses[v] += 1;
                keep[v] |= train && l.needs_inputs_for_backward();
            }
            keep[i + 1] |= train && l.spec == LayerSpec::Relu;
        }
        let mut values: Vec<Option<Tensor>> = vec![None; n_values];
        let mut bn = vec![None; self.layers.len()];
        values[0] = Some(x.clone());
        for (i, l) in self.layers.iter().enumerate().take(upto) {
            let ins: Vec<&Tensor> = l.inputs.iter().map(|&v| values[v].as_ref().expect("value released early")).collect();
            let (out, stats) = self.eval_layer(i, &ins, train);
            check_finite(out.data(), i, &l.spec)?;
            values[i + 1] = Some(out);
            bn[i] = stats;
            for &v in &l.inputs {
                uses[v] -= 1;
                if uses[v] == 0 && !keep[v] {
                    values[v] = None;
                }
            }
        }
        Ok(ForwardCache { values, bn })
    }

    fn eval_layer(&self, i: usize, ins: &[&Tensor], train: bool) -> (Tensor, Option<BnStats>) {
        let l = &self.layers[i];
        let x = ins[0];
        let p = &l.params;
        let out = match l.spec {
            LayerSpec::Dense { inputs, outputs } => kernels::dense_forward(x, inputs, outputs, &p[0], &p[1]),
            LayerSpec::Conv2d(c) => kernels::conv_forward(x, &c, &l.out_shape, &p[0], &p[1]),
            LayerSpec::TransposedConv2d(t) => kernels::tconv_forward(x, &t, &l.out_shape, &p[0], &p[1]),
            LayerSpec::Relu => {
                let data = x.data().iter().map(|&v| v.max(0.0)).collect();
                Tensor::new(x.shape().to_vec(), data).expect("same shape")
            }
            LayerSpec::BatchNorm { channels } => {
                if train {
                    let stats = kernels::bn_batch_stats(x, channels);
                    let y = kernels::bn_apply(x, &stats.mean, &stats.inv_std, &p[0], &p[1]);
                    return (y, Some(stats));
                }
                let inv_std: Vec<f64> = l.buffers[1].iter().map(|v| 1.0 / (v + super::layers::BN_EPS).sqrt()).collect();
                kernels::bn_apply(x, &l.buffers[0], &inv_std, &p[0], &p[1])
            }
            LayerSpec::Add { subtract } => {
                let s = if subtract { -1.0 } else { 1.0 };
                let data = x.data().iter().zip(ins[1].data()).map(|(a, b)| a + s * b).collect();
                Tensor::new(x.shape().to_vec(), data).expect("same shape")
            }
            LayerSpec::BilinearUpsample { .. } => kernels::upsample_forward(x, &l.out_shape),
        };
        (out, None)
    }

    /// Inference-mode forward pass (BatchNorm uses running statistics).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_prefix(x, self.layers.len())
    }

    /// Inference-mode output of layer `n_layers - 1`, i.e. of the first
    /// `n_layers` layers only.
    pub fn forward_prefix(&self, x: &Tensor, n_layers: usize) -> Result<Tensor> {
        if n_layers == 0 || n_layers > self.layers.len() {
            return Err(Error::Config(format!("cannot stop after {n_layers} of {} layers", self.layers.len())));
        }
        let mut cache = self.run(x, false, n_layers)?;
        Ok(cache.values[n_layers].take().expect("kept"))
    }

    /// Inference over a large batch, `chunk` samples at a time.
    pub fn predict(&self, x: &Tensor, chunk: usize) -> Result<Tensor> {
        self.check_input(x)?;
        let n = x.batch();
        let chunk = chunk.max(1);
        let mut data = Vec::with_capacity(n * self.output_shape().iter().product::<usize>());
        for start in (0..n).step_by(chunk) {
            let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
            data.extend(self.forward(&x.select(&idx))?.into_data());
        }
        let mut shape = vec![n];
        shape.extend_from_slice(self.output_shape());
        Tensor::new(shape, data)
    }

    /// Training-mode forward pass. Updates BatchNorm running statistics.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<ForwardCache> {
        let cache = self.run(x, true, self.layers.len())?;
        for (l, stats) in self.layers.iter_mut().zip(&cache.bn) {
            if let Some(s) = stats {
                let rows = (x.batch() * l.out_shape.iter().product::<usize>() / s.mean.len()) as f64;
                let unbias = if rows > 1.0 { rows / (rows - 1.0) } else { 1.0 };
                for c in 0..s.mean.len() {
                    l.buffers[0][c] = (1.0 - BN_MOMENTUM) * l.buffers[0][c] + BN_MOMENTUM * s.mean[c];
                    l.buffers[1][c] = (1.0 - BN_MOMENTUM) * l.buffers[1][c] + BN_MOMENTUM * s.var[c] * unbias;
                }
            }
        }
        Ok(cache)
    }

    pub fn zero_grads(&mut self) {
        for l in &mut self.layers {
            for g in &mut l.grads {
                g.fill(0.0);
            }
        }
    }

    /// Reverse pass from `grad_out` (gradient of the loss w.r.t. the
    /// output), accumulating into the parameter gradients. Returns the
    /// gradient w.r.t. the input when `want_input_grad`.
    pub fn backward(&mut self, cache: &ForwardCache, grad_out: Tensor, want_input_grad: bool) -> Result<Option<Tensor>> {
        let n = cache.output().batch();
        if grad_out.shape() != cache.output().shape() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                grad_out.shape(),
                cache.output().shape()
            )));
        }
        let n_values = self.layers.len() + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n_values];
        grads[n_values - 1] = Some(grad_out);
        for i in (0..self.layers.len()).rev() {
            let Some(dy) = grads[i + 1].take() else { continue };
            let want = |v: usize| v != 0 || want_input_grad;
            let shape_of = |v: usize| {
                let mut s = vec![n];
                s.extend_from_slice(self.value_shape(v));
                s
            };
            let l = &self.layers[i];
            let v0 = l.inputs[0];
            let input = |v: usize| cache.values[v].as_ref().expect("input kept for backward");
            let mut dxs: Vec<(usize, Vec<f64>)> = Vec::new();
            let mut dparams: Vec<Vec<f64>> = Vec::new();
            match l.spec {
                LayerSpec::Dense { inputs, outputs } => {
                    let (dx, dw, db) = kernels::dense_backward(input(v0), &dy, inputs, outputs, &l.params[0], want(v0));
                    dparams = vec![dw, db];
                    dxs.extend(dx.map(|d| (v0, d)));
                }
                LayerSpec::Conv2d(c) => {
                    let (dx, dw, db) = kernels::conv_backward(input(v0), &dy, &c, &l.params[0], want(v0));
                    dparams = vec![dw, db];
                    dxs.extend(dx.map(|d| (v0, d)));
                }
                LayerSpec::TransposedConv2d(t) => {
                    let (dx, dw, db) = kernels::tconv_backward(input(v0), &dy, &t, &l.params[0], want(v0));
                    dparams = vec![dw, db];
                    dxs.extend(dx.map(|d| (v0, d)));
                }
                LayerSpec::Relu => {
                    let y = cache.values[i + 1].as_ref().expect("relu output kept");
                    if want(v0) {
                        let d = dy.data().iter().zip(y.data()).map(|(g, &o)| if o > 0.0 { *g } else { 0.0 }).collect();
                        dxs.push((v0, d));
                    }
                }
                LayerSpec::BatchNorm { .. } => {
                    let stats = cache.bn[i].as_ref().ok_or_else(|| l.spec.layer_error(i, "no batch statistics cached"))?;
                    let (dx, dg, db) = kernels::bn_backward(input(v0), &dy, stats, &l.params[0]);
                    dparams = vec![dg, db];
                    if want(v0) {
                        dxs.push((v0, dx));
                    }
                }
                LayerSpec::Add { subtract } => {
                    let v1 = l.inputs[1];
                    if want(v1) {
                        let d = if subtract { dy.data().iter().map(|g| -g).collect() } else { dy.data().to_vec() };
                        dxs.push((v1, d));
                    }
                    if want(v0) {
                        dxs.push((v0, dy.into_data()));
                    }
                }
                LayerSpec::BilinearUpsample { .. } => {
                    if want(v0) {
                        dxs.push((v0, kernels::upsample_backward(self.value_shape(v0), &dy)));
                    }
                }
            }
            for (v, d) in dxs {
                match &mut grads[v] {
                    Some(g) => g.data_mut().iter_mut().zip(&d).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(Tensor::new(shape_of(v), d)?),
                }
            }
            let l = &mut self.layers[i];
            for (g, d) in l.grads.iter_mut().zip(dparams) {
                g.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
            }
        }
        Ok(if want_input_grad { grads[0].take() } else { None })
    }

    /// Zeroes gradients, runs a training step's forward and backward
    /// passes under MSE loss, and returns the loss.
    pub fn loss_and_grads(&mut self, x: &Tensor, target: &Tensor) -> Result<f64> {
        self.zero_grads();
        let cache = self.forward_train(x)?;
        let (loss, grad) = mse_loss(cache.output(), target)?;
        self.backward(&cache, grad, false)?;
        Ok(loss)
    }

    pub(crate) fn slots_mut(&mut self) -> impl Iterator<Item = (&mut Vec<f64>, &Vec<f64>)> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params.iter_mut().zip(l.grads.iter()))
    }

    pub(crate) fn param_mut(&mut self, layer: usize, tensor: usize) -> &mut Vec<f64> {
        &mut self.layers[layer].params[tensor]
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }

    pub(crate) fn buffers_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| l.buffers.iter_mut())
    }

    pub fn state(&self) -> ModelState {
        ModelState {
            params: self.layers.iter().map(|l| l.params.clone()).collect(),
            buffers: self.layers.iter().map(|l| l.buffers.clone()).collect(),
        }
    }

    pub fn set_state(&mut self, state: &ModelState) -> Result<()> {
        let fits = state.params.len() == self.layers.len()
            && self.layers.iter().zip(&state.params).all(|(l, p)| {
                l.params.len() == p.len() && l.params.iter().zip(p).all(|(a, b)| a.len() == b.len())
            });
        if !fits {
            return Err(Error::Shape("state does not match the model's parameters".into()));
        }
        for ((l, p), b) in self.layers.iter_mut().zip(&state.params).zip(&state.buffers) {
            l.params.clone_from(p);
            l.buffers.clone_from(b);
        }
        Ok(())
    }

    /// Rounds every parameter and buffer to the nearest `f32`, the
    /// precision of weight files.
    pub fn round_to_f32(&mut self) {
        for l in &mut self.layers {
            for v in l.params.iter_mut().chain(l.buffers.iter_mut()).flatten() {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// Mean squared error over every element, and its gradient.
pub fn mse_loss(output: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if output.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "target {:?} does not match output {:?}",
            target.shape(),
            output.shape()
        )));
    }
    let n = output.data().len().max(1) as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = output
        .data()
        .iter()
        .zip(target.data())
        .map(|(o, t)| {
            let d = o - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, Tensor::new(output.shape().to_vec(), grad)?))
}
