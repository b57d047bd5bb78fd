use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, purpose};

use super::graph::{mse_loss, ModelGraph, ModelState};
use super::optim::AdamState;
use super::tensor::Tensor;

/// Which weights `train` leaves in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Select {
    #[default]
    BestVal,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub initial_lr: f64,
    pub lr_drop_period: Option<usize>,
    pub lr_drop_factor: Option<f64>,
    pub batch_size: usize,
    pub seed: u64,
    /// Share of samples held out for checkpoint selection.
    pub val_fraction: f64,
    pub select: Select,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            initial_lr: 1e-3,
            lr_drop_period: None,
            lr_drop_factor: None,
            batch_size: 128,
            seed: 0,
            val_fraction: 0.2,
            select: Select::BestVal,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some(f) = self.lr_drop_factor {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("lr_drop_factor must be in (0, 1], got {f}")));
            }
        }
        if self.lr_drop_period == Some(0) {
            return Err(Error::Config("lr_drop_period must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction must be in [0, 1), got {}", self.val_fraction)));
        }
        if !(self.initial_lr >= 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!("initial_lr must be non-negative, got {}", self.initial_lr)));
        }
        Ok(())
    }

    /// Learning rate in force during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match (self.lr_drop_period, self.lr_drop_factor) {
            (Some(p), Some(f)) if p > 0 => self.initial_lr * f.powi((epoch.saturating_sub(1) / p) as i32),
            _ => self.initial_lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept.
    pub kept_epoch: usize,
}

impl TrainReport {
    /// One row per epoch: `epoch,lr,train_loss,val_loss`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,val_loss\n");
        for r in &self.epochs {
            let val = r.val_loss.map(|v| format!("{v:.9e}")).unwrap_or_default();
            s.push_str(&format!("{},{:e},{:.9e},{}\n", r.epoch, r.lr, r.train_loss, val));
        }
        s
    }
}

/// Index split into (train, validation), shuffled once with the seed.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[purpose::SHUFFLE, 0]));
    let n_val = ((n as f64) * val_fraction).round() as usize;
    let n_val = if n_val >= n { 0 } else { n_val };
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Mean MSE of the model over a dataset, evaluated in inference mode.
pub fn evaluate(model: &ModelGraph, inputs: &Tensor, targets: &Tensor, chunk: usize) -> Result<f64> {
    let out = model.predict(inputs, chunk)?;
    Ok(mse_loss(&out, targets)?.0)
}

/// Minibatch Adam under MSE loss.
///
/// Samples are split once into train/validation, the training part is
/// reshuffled every epoch. With `Select::BestVal` and a non-empty
/// validation split the weights of the best validation epoch are kept.
/// All parameters end rounded to `f32`.
pub fn train(model: &mut ModelGraph, inputs: &Tensor, targets: &Tensor, cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(model, inputs, targets, cfg, |_| {})
}

/// As [`train`], calling `on_epoch` after each epoch.
pub fn train_with(
    model: &mut ModelGraph,
    inputs: &Tensor,
    targets: &Tensor,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    let n = inputs.batch();
    if n == 0 {
        return Err(Error::Empty("training set has no samples".into()));
    }
    if targets.batch() != n {
        return Err(Error::Shape(format!("{n} inputs but {} targets", targets.batch())));
    }
    if inputs.sample_shape() != model.input_shape() || targets.sample_shape() != model.output_shape() {
        return Err(Error::Shape(format!(
            "samples {:?} -> {:?} do not fit model {:?} -> {:?}",
            inputs.sample_shape(),
            targets.sample_shape(),
            model.input_shape(),
            model.output_shape()
        )));
    }
    let (mut train_idx, val_idx) = split_indices(n, cfg.val_fraction, cfg.seed);
    let (val_x, val_t) = (inputs.select(&val_idx), targets.select(&val_idx));
    let mut adam = AdamState::default();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelState)> = None;
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        train_idx.shuffle(&mut rng::stream(cfg.seed, &[purpose::SHUFFLE, epoch as u64]));
        let mut total = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            let loss = model.loss_and_grads(&inputs.select(batch), &targets.select(batch))?;
            adam.step(model, lr);
            total += loss * batch.len() as f64;
        }
        let val_loss = if val_idx.is_empty() {
            None
        } else {
            Some(evaluate(model, &val_x, &val_t, cfg.batch_size)?)
        };
        let rec = EpochRecord {
            epoch,
            lr,
            train_loss: total / train_idx.len() as f64,
            val_loss,
        };
        if !rec.train_loss.is_finite() {
            return Err(Error::Domain(format!("training diverged at epoch {epoch} (loss {})", rec.train_loss)));
        }
        if let (Select::BestVal, Some(v)) = (cfg.select, val_loss) {
            if best.as_ref().map_or(true, |b| v < b.0) {
                best = Some((v, epoch, model.state()));
            }
        }
        on_epoch(&rec);
        records.push(rec);
    }
    let kept_epoch = match best {
        Some((_, epoch, state)) => {
            model.set_state(&state)?;
            epoch
        }
        None => cfg.epochs,
    };
    model.round_to_f32();
    Ok(TrainReport {
        epochs: records,
        kept_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::GraphBuilder;
    use crate::nn::layers::LayerSpec;

    #[test]
    fn step_schedule() {
        let cfg = TrainConfig {
            lr_drop_period: Some(20),
            lr_drop_factor: Some(0.5),
            ..TrainConfig::default()
        };
        assert_eq!(cfg.lr_at(1), 1e-3);
        assert_eq!(cfg.lr_at(20), 1e-3);
        assert_eq!(cfg.lr_at(21), 5e-4);
        assert_eq!(cfg.lr_at(41), 2.5e-4);
        assert_eq!(cfg.lr_at(45), 2.5e-4);
        assert_eq!(TrainConfig::default().lr_at(90), 1e-3);
    }

    fn toy() -> (ModelGraph, Tensor, Tensor) {
        let mut b = GraphBuilder::new(&[3]);
        let x = b.input();
        let h = b.then(LayerSpec::Dense { inputs: 3, outputs: 8 }, x).unwrap();
        let h = b.then(LayerSpec::Relu, h).unwrap();
        b.then(LayerSpec::Dense { inputs: 8, outputs: 2 }, h).unwrap();
        let m = b.build(5).unwrap();
        let xs: Vec<f64> = (0..60).map(|i| ((i * 37 % 17) as f64 / 8.0) - 1.0).collect();
        let ts: Vec<f64> = xs.chunks(3).flat_map(|r| [r[0] - r[1], 0.5 * r[2]]).collect();
        (m, Tensor::new(vec![20, 3], xs).unwrap(), Tensor::new(vec![20, 2], ts).unwrap())
    }

    #[test]
    fn zero_lr_leaves_params() {
        let (mut m, x, t) = toy();
        let before = m.state();
        let cfg = TrainConfig {
            epochs: 1,
            initial_lr: 0.0,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let rep = train(&mut m, &x, &t, &cfg).unwrap();
        assert_eq!(m.state(), before);
        assert_eq!(rep.epochs.len(), 1);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let cfg = TrainConfig {
            epochs: 60,
            initial_lr: 0.01,
            batch_size: 4,
            select: Select::Last,
            ..TrainConfig::default()
        };
        let (mut a, x, t) = toy();
        let ra = train(&mut a, &x, &t, &cfg).unwrap();
        assert!(ra.epochs.last().unwrap().train_loss < 0.5 * ra.epochs[0].train_loss);
        let (mut b, _, _) = toy();
        let rb = train(&mut b, &x, &t, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.state(), b.state());
        assert!(ra.to_csv().lines().count() == 61);
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let (tr, va) = split_indices(10, 0.2, 3);
        assert_eq!(va.len(), 2);
        let mut all: Vec<_> = tr.iter().chain(&va).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}
