//! The workflow steps behind each CLI verb.
//!
//! Every step reads and writes files under `out_dir`:
//!
//! ```text
//! config.resolved.toml   manifest.toml
//! data/{train,test,doppler}_{pilot,full}[_enh].ofds   data/stats.ofds
//! ae/ae_{mode}.aedn   ae/ae_{mode}_trace.csv
//! models/{model}.aedn   models/{model}_trace.csv
//! results/eval_snr.csv   results/eval_doppler.csv   results/complexity.csv   (+ .svg)
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use chanest_core::channel::doppler_from_speed;
use chanest_core::classical::{self, ChannelStats, MmseFilter};
use chanest_core::dataset::{hex_digest, Dataset, SampleMeta, TensorDims};
use chanest_core::enhance::{self, AeConfig, AeMode};
use chanest_core::grid::ComplexGrid;
use chanest_core::nn::{self, ModelGraph, Tensor, TrainReport};
use chanest_core::rng::{derive_seed, purpose};
use chanest_core::sim::{draw_speed, Scenario};
use chanest_core::zoo::{self, Family, GridDims, ZooId};
use chanest_core::Complex64;

use crate::chart::{line_chart, Series};
use crate::config::ExperimentConfig;
use crate::manifest::RunManifest;

/// A trained estimator: zoo architecture plus training replicate.
/// Written `reesnet-enhanced` for replicate 0 and `reesnet-enhanced.r2`
/// otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelRef {
    pub id: ZooId,
    pub replicate: usize,
}

impl ModelRef {
    pub fn new(id: ZooId, replicate: usize) -> Self {
        Self { id, replicate }
    }

    /// Shared by a baseline and its enhanced twin.
    pub fn seed(&self, master: u64) -> u64 {
        let fam = Family::ALL.iter().position(|f| *f == self.id.family).unwrap_or(0) as u64;
        derive_seed(
            master,
            &[purpose::MODEL, fam, self.id.filters.unwrap_or(0) as u64, self.replicate as u64],
        )
    }

    pub fn mode(&self) -> AeMode {
        if self.id.family.reads_pilots() {
            AeMode::Pilot
        } else {
            AeMode::Full
        }
    }
}

impl fmt::Display for ModelRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.replicate {
            0 => write!(f, "{}", self.id),
            r => write!(f, "{}.r{r}", self.id),
        }
    }
}

impl FromStr for ModelRef {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let (id, rep) = match s.rsplit_once(".r") {
            Some((id, r)) if !r.is_empty() && r.bytes().all(|b| b.is_ascii_digit()) => (id, r.parse()?),
            _ => (s, 0),
        };
        Ok(Self::new(id.parse()?, rep))
    }
}

/// Estimator tokens to evaluate; `ls` and `mmse` are always reported and
/// skipped here.
pub fn parse_models(tokens: &[String]) -> Result<Vec<ModelRef>> {
    tokens
        .iter()
        .map(|t| t.trim())
        .filter(|t| !t.is_empty() && !t.eq_ignore_ascii_case("ls") && !t.eq_ignore_ascii_case("mmse"))
        .map(|t| t.parse())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    Doppler,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Test, Split::Doppler];

    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Doppler => "doppler",
        }
    }
}

pub fn dataset_rel(split: Split, mode: AeMode, enhanced: bool) -> String {
    format!("data/{}_{mode}{}.ofds", split.name(), if enhanced { "_enh" } else { "" })
}

pub const STATS_REL: &str = "data/stats.ofds";

pub fn ae_rel(mode: AeMode) -> String {
    format!("ae/ae_{mode}.aedn")
}

pub fn model_rel(m: &ModelRef) -> String {
    format!("models/{m}.aedn")
}

pub fn grid_dims(cfg: &ExperimentConfig) -> Result<GridDims> {
    let p = cfg.pattern()?;
    Ok(GridDims {
        n_f: cfg.frame.n_subcarriers,
        n_s: cfg.frame.n_symbols,
        n_pf: p.n_pf(),
        n_ps: p.n_ps(),
    })
}

/// Open run directory; keeps the manifest current as files are written.
struct Run {
    dir: PathBuf,
    manifest: RunManifest,
    command: String,
}

impl Run {
    fn open(cfg: &ExperimentConfig, command: &str) -> Result<Self> {
        let dir = cfg.out_dir.clone();
        for sub in ["data", "ae", "models", "results"] {
            std::fs::create_dir_all(dir.join(sub)).with_context(|| format!("creating {}", dir.join(sub).display()))?;
        }
        let text = cfg.to_toml();
        let mut manifest = RunManifest::load_or_new(&dir)?;
        manifest.version = env!("CARGO_PKG_VERSION").to_string();
        manifest.config_hash = hex_digest(text.as_bytes());
        std::fs::write(dir.join("config.resolved.toml"), text)?;
        let mut run = Self {
            dir,
            manifest,
            command: command.to_string(),
        };
        run.record("config.resolved.toml")?;
        Ok(run)
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn record(&mut self, rel: &str) -> Result<()> {
        self.manifest.record(&self.dir, rel, &self.command)
    }

    fn write_text(&mut self, rel: &str, text: &str) -> Result<()> {
        std::fs::write(self.path(rel), text).with_context(|| format!("writing {}", self.path(rel).display()))?;
        self.record(rel)
    }

    fn write_dataset(&mut self, rel: &str, ds: &Dataset) -> Result<()> {
        ds.write(&self.path(rel))?;
        self.record(rel)
    }

    fn read_dataset(&self, rel: &str, hint: &str) -> Result<Dataset> {
        let path = self.path(rel);
        if !path.exists() {
            bail!("{} not found; run `{hint}` first", path.display());
        }
        Ok(Dataset::read(&path)?)
    }

    fn finish(self) -> Result<()> {
        self.manifest.save(&self.dir)
    }
}

fn generate_hint(cfg: &ExperimentConfig) -> String {
    format!("chanest generate --profile {}", cfg.profile)
}

struct Sample {
    meta: SampleMeta,
    pilot: Vec<f32>,
    full: Vec<f32>,
    target: Vec<f32>,
}

fn push_grid(out: &mut Vec<f32>, g: &ComplexGrid) {
    for z in g.data() {
        out.push(z.re as f32);
        out.push(z.im as f32);
    }
}

fn grid_from_f32(rows: usize, cols: usize, data: &[f32]) -> ComplexGrid {
    ComplexGrid::from_fn(rows, cols, |r, c| {
        let i = 2 * (r * cols + c);
        Complex64::new(data[i] as f64, data[i + 1] as f64)
    })
}

fn observe(sc: &Scenario, seed: u64, doppler_hz: f64, snr_db: f64) -> chanest_core::Result<Sample> {
    let o = sc.observe(seed, doppler_hz, snr_db)?;
    let mut s = Sample {
        meta: SampleMeta {
            snr_db: snr_db as f32,
            doppler_hz: doppler_hz as f32,
            seed,
        },
        pilot: Vec::new(),
        full: Vec::new(),
        target: Vec::new(),
    };
    push_grid(&mut s.pilot, &o.h_ls_p);
    push_grid(&mut s.full, &o.h_ls_full);
    push_grid(&mut s.target, &o.h);
    Ok(s)
}

/// `(seed, doppler_hz, snr_db)` of every sample of a split, in file order.
fn split_plan(cfg: &ExperimentConfig, split: Split) -> Result<Vec<(u64, f64, f64)>> {
    let m = cfg.master_seed;
    let fc = cfg.frame.carrier_freq;
    let range = (cfg.speed_range[0], cfg.speed_range[1]);
    let random_doppler = |seed: u64| -> Result<f64> { Ok(doppler_from_speed(draw_speed(seed, range)?, fc)?) };
    let mut plan = Vec::new();
    match split {
        Split::Train => {
            for (si, &snr) in cfg.snr_train.iter().enumerate() {
                for i in 0..cfg.samples_per_snr {
                    let seed = derive_seed(m, &[purpose::TRAIN_SET, si as u64, i as u64]);
                    plan.push((seed, random_doppler(seed)?, snr));
                }
            }
        }
        // one set of draws reused at every SNR so all points are paired
        Split::Test => {
            for &snr in &cfg.snr_test {
                for i in 0..cfg.test_samples_per_snr {
                    let seed = derive_seed(m, &[purpose::TEST_SET, i as u64]);
                    plan.push((seed, random_doppler(seed)?, snr));
                }
            }
        }
        Split::Doppler => {
            for &speed in &cfg.doppler_sweep {
                let fd = doppler_from_speed(speed, fc)?;
                for i in 0..cfg.doppler_samples {
                    plan.push((derive_seed(m, &[purpose::DOPPLER_SET, i as u64]), fd, cfg.doppler_snr));
                }
            }
        }
    }
    Ok(plan)
}

/// Builds the pilot-mode and full-mode datasets of one split.
fn build_split(cfg: &ExperimentConfig, sc: &Scenario, split: Split) -> Result<(Dataset, Dataset)> {
    let plan = split_plan(cfg, split)?;
    let samples: Vec<Sample> = plan
        .par_iter()
        .map(|&(seed, fd, snr)| observe(sc, seed, fd, snr))
        .collect::<chanest_core::Result<_>>()?;
    let dims = grid_dims(cfg)?;
    let base = Dataset {
        input_dims: TensorDims::new(dims.n_pf, dims.n_ps, 2),
        target_dims: TensorDims::new(dims.n_f, dims.n_s, 2),
        carrier_freq: cfg.frame.carrier_freq,
        subcarrier_spacing: cfg.frame.subcarrier_spacing,
        fingerprint: [0; 32],
        meta: samples.iter().map(|s| s.meta).collect(),
        inputs: samples.iter().flat_map(|s| s.pilot.iter().copied()).collect(),
        targets: samples.iter().flat_map(|s| s.target.iter().copied()).collect(),
    };
    let full = Dataset {
        input_dims: TensorDims::new(dims.n_f, dims.n_s, 2),
        inputs: samples.iter().flat_map(|s| s.full.iter().copied()).collect(),
        ..base.clone()
    };
    Ok((base, full))
}

fn build_stats(cfg: &ExperimentConfig, sc: &Scenario) -> Result<ChannelStats> {
    let fc = cfg.frame.carrier_freq;
    let range = (cfg.speed_range[0], cfg.speed_range[1]);
    let grids: Vec<(ComplexGrid, f64)> = (0..cfg.stats_realizations)
        .into_par_iter()
        .map(|i| -> Result<(ComplexGrid, f64)> {
            let seed = derive_seed(cfg.master_seed, &[purpose::STATS_SET, i as u64]);
            let fd = doppler_from_speed(draw_speed(seed, range)?, fc)?;
            Ok((sc.channel(seed, fd)?, fd))
        })
        .collect::<Result<_>>()?;
    Ok(classical::estimate_stats(
        grids.iter().map(|(g, fd)| (g, *fd)),
        &sc.pattern,
        &cfg.channel.to_string(),
    )?)
}

pub fn generate(cfg: &ExperimentConfig) -> Result<()> {
    let mut run = Run::open(cfg, "generate")?;
    let sc = cfg.scenario()?;
    for split in Split::ALL {
        let (pilot, full) = build_split(cfg, &sc, split)?;
        eprintln!("generate: {} split, {} samples", split.name(), pilot.len());
        run.write_dataset(&dataset_rel(split, AeMode::Pilot, false), &pilot)?;
        run.write_dataset(&dataset_rel(split, AeMode::Full, false), &full)?;
    }
    let stats = build_stats(cfg, &sc)?;
    stats.save(&run.path(STATS_REL))?;
    run.record(STATS_REL)?;
    run.finish()
}

pub fn ae_config(cfg: &ExperimentConfig, mode: AeMode) -> Result<AeConfig> {
    let mut a = AeConfig::new(mode, &cfg.frame, &cfg.pattern()?);
    a.feature_tap = cfg.ae.feature_tap;
    a.normalize = cfg.ae.normalize;
    Ok(a)
}

pub fn ae_seed(cfg: &ExperimentConfig, mode: AeMode) -> u64 {
    let m = match mode {
        AeMode::Pilot => 0,
        AeMode::Full => 1,
    };
    derive_seed(cfg.master_seed, &[purpose::AUTOENCODER, m])
}

pub fn load_ae(cfg: &ExperimentConfig, mode: AeMode) -> Result<(AeConfig, ModelGraph)> {
    let acfg = ae_config(cfg, mode)?;
    let mut model = enhance::build_ae(&acfg, 0)?;
    let path = cfg.out_dir.join(ae_rel(mode));
    if !path.exists() {
        bail!("{} not found; run `chanest train-ae --mode {mode}` first", path.display());
    }
    nn::load_weights(&mut model, &path)?;
    Ok((acfg, model))
}

#[derive(Debug, Clone)]
pub struct AeSummary {
    pub report: TrainReport,
    /// Reconstruction MSE of the trained and the untrained network on the
    /// pilot or full test inputs.
    pub test_mse: f64,
    pub untrained_test_mse: f64,
}

pub fn train_ae(cfg: &ExperimentConfig, mode: AeMode) -> Result<AeSummary> {
    let mut run = Run::open(cfg, "train-ae")?;
    let hint = generate_hint(cfg);
    let train = run.read_dataset(&dataset_rel(Split::Train, mode, false), &hint)?;
    let test = run.read_dataset(&dataset_rel(Split::Test, mode, false), &hint)?;
    let acfg = ae_config(cfg, mode)?;
    let seed = ae_seed(cfg, mode);
    let mut model = enhance::build_ae(&acfg, seed)?;
    let x = enhance::ae_inputs(&acfg, &train)?;
    let x_test = enhance::ae_inputs(&acfg, &test)?;
    let untrained_test_mse = enhance::reconstruction_mse(&model, &x_test)?;
    let tc = cfg.ae.recipe.to_train_config(seed, &cfg.train);
    let report = nn::train_with(&mut model, &x, &x, &tc, |r| log_epoch(&format!("ae-{mode}"), r))?;
    drop(x);
    let test_mse = enhance::reconstruction_mse(&model, &x_test)?;

    let rel = ae_rel(mode);
    nn::save_weights(&model, &run.path(&rel))?;
    run.record(&rel)?;
    run.write_text(&format!("ae/ae_{mode}_trace.csv"), &report.to_csv())?;
    let m = &mut run.manifest;
    m.fingerprints.insert(mode.to_string(), hex(&nn::fingerprint(&model)));
    m.metrics.insert(format!("ae_{mode}.test_mse"), test_mse);
    m.metrics.insert(format!("ae_{mode}.untrained_test_mse"), untrained_test_mse);
    m.metrics.insert(format!("ae_{mode}.kept_epoch"), report.kept_epoch as f64);
    run.finish()?;
    Ok(AeSummary {
        report,
        test_mse,
        untrained_test_mse,
    })
}

fn log_epoch(tag: &str, r: &nn::EpochRecord) {
    match r.val_loss {
        Some(v) => eprintln!("{tag}: epoch {:>3} lr {:.2e} train {:.4e} val {:.4e}", r.epoch, r.lr, r.train_loss, v),
        None => eprintln!("{tag}: epoch {:>3} lr {:.2e} train {:.4e}", r.epoch, r.lr, r.train_loss),
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Appends the AE feature plane to every dataset of `mode`.
pub fn enhance(cfg: &ExperimentConfig, mode: AeMode) -> Result<()> {
    let mut run = Run::open(cfg, "enhance")?;
    let (acfg, model) = load_ae(cfg, mode)?;
    for split in Split::ALL {
        let src = dataset_rel(split, mode, false);
        if split != Split::Train && !run.path(&src).exists() {
            continue;
        }
        let ds = run.read_dataset(&src, &generate_hint(cfg))?;
        if ds.input_dims.channels != 2 {
            bail!("{src} has {} channels; enhancement expects a 2-channel source", ds.input_dims.channels);
        }
        let out = enhance::enhance_dataset(&model, &acfg, &ds)?;
        eprintln!("enhance: {} -> {}", src, dataset_rel(split, mode, true));
        run.write_dataset(&dataset_rel(split, mode, true), &out)?;
    }
    run.finish()
}

/// Checks that an enhanced dataset was produced by the current AE.
fn check_fingerprint(cfg: &ExperimentConfig, mode: AeMode, ds: &Dataset, what: &str) -> Result<()> {
    let (_, ae) = load_ae(cfg, mode)?;
    if ds.fingerprint != nn::fingerprint(&ae) {
        bail!(
            "{what} was enhanced by a different autoencoder than {}; rerun `chanest enhance --mode {mode}`",
            ae_rel(mode)
        );
    }
    Ok(())
}

fn check_channels(m: &ModelRef, ds: &Dataset, what: &str) -> Result<()> {
    let want = m.id.in_channels();
    let got = ds.input_dims.channels;
    if want != got {
        let other = if m.id.enhanced { m.id.baseline().to_string() } else { format!("{}-enhanced", m.id) };
        bail!(
            "model {} expects {want}-channel inputs but {what} has {got} channels; \
             use {other} for this dataset or point --data at a {want}-channel file",
            m.id
        );
    }
    Ok(())
}

fn tensor(ds: &Dataset, range: std::ops::Range<usize>, inputs: bool) -> Result<Tensor> {
    let (d, data) = if inputs {
        (ds.input_dims, &ds.inputs)
    } else {
        (ds.target_dims, &ds.targets)
    };
    let n = d.len();
    Ok(Tensor::from_f32(
        vec![range.len(), d.rows, d.cols, d.channels],
        &data[range.start * n..range.end * n],
    )?)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub model: ModelRef,
    pub report: TrainReport,
    pub best_val_loss: Option<f64>,
}

/// Trains one estimator on its training set (or `data`, when given).
pub fn train_model(cfg: &ExperimentConfig, m: &ModelRef, data: Option<&Path>) -> Result<TrainSummary> {
    let mut run = Run::open(cfg, "train")?;
    let mode = m.mode();
    let (ds, what) = match data {
        Some(p) => (Dataset::read(p)?, p.display().to_string()),
        None => {
            let rel = dataset_rel(Split::Train, mode, m.id.enhanced);
            let hint = if m.id.enhanced {
                format!("chanest enhance --mode {mode}")
            } else {
                generate_hint(cfg)
            };
            (run.read_dataset(&rel, &hint)?, rel)
        }
    };
    check_channels(m, &ds, &what)?;
    if m.id.enhanced {
        check_fingerprint(cfg, mode, &ds, &what)?;
    }
    let seed = m.seed(cfg.master_seed);
    let mut model = zoo::build(m.id, grid_dims(cfg)?, seed)?;
    if ds.input_dims.as_shape().as_slice() != model.input_shape() {
        bail!("{what} holds {:?} inputs but {} reads {:?}", ds.input_dims.as_shape(), m.id, model.input_shape());
    }
    let x = tensor(&ds, 0..ds.len(), true)?;
    let t = tensor(&ds, 0..ds.len(), false)?;
    drop(ds);
    let tc = cfg.train.recipe(m.id.family).to_train_config(seed, &cfg.train);
    let tag = m.to_string();
    let report = nn::train_with(&mut model, &x, &t, &tc, |r| log_epoch(&tag, r))?;

    let rel = model_rel(m);
    nn::save_weights(&model, &run.path(&rel))?;
    run.record(&rel)?;
    run.write_text(&format!("models/{m}_trace.csv"), &report.to_csv())?;
    let best_val_loss = report.epochs.iter().filter_map(|r| r.val_loss).reduce(f64::min);
    if let Some(v) = best_val_loss {
        run.manifest.metrics.insert(format!("{m}.best_val_loss"), v);
    }
    run.manifest.metrics.insert(format!("{m}.kept_epoch"), report.kept_epoch as f64);
    run.finish()?;
    Ok(TrainSummary {
        model: *m,
        report,
        best_val_loss,
    })
}

pub fn load_model(cfg: &ExperimentConfig, m: &ModelRef) -> Result<ModelGraph> {
    let mut model = zoo::build(m.id, grid_dims(cfg)?, 0)?;
    let path = cfg.out_dir.join(model_rel(m));
    if !path.exists() {
        bail!("weights {} not found; run `chanest train --model {m}` first", path.display());
    }
    nn::load_weights(&mut model, &path)?;
    Ok(model)
}

/// Mean per-resource-element complex squared error of one frame.
fn frame_mse(pred: &[f64], target: &[f32]) -> f64 {
    let s: f64 = pred.iter().zip(target).map(|(p, t)| (p - *t as f64).powi(2)).sum();
    s / (target.len() / 2) as f64
}

/// Per-frame MSE of an estimator over a whole dataset.
fn model_frame_mse(model: &ModelGraph, ds: &Dataset, batch: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ds.len());
    let block = batch * 8;
    let nt = ds.target_dims.len();
    for start in (0..ds.len()).step_by(block) {
        let end = (start + block).min(ds.len());
        let pred = model.predict(&tensor(ds, start..end, true)?, batch)?;
        out.extend((start..end).map(|i| frame_mse(pred.sample(i - start), &ds.targets[i * nt..(i + 1) * nt])));
    }
    Ok(out)
}

fn ls_frame_mse(full: &Dataset) -> Vec<f64> {
    (0..full.len())
        .into_par_iter()
        .map(|i| {
            let x: Vec<f64> = full.input(i).iter().map(|v| *v as f64).collect();
            frame_mse(&x, full.target(i))
        })
        .collect()
}

fn mmse_frame_mse(cfg: &ExperimentConfig, pilot: &Dataset, stats: &ChannelStats) -> Result<Vec<f64>> {
    let pattern = cfg.pattern()?;
    let dims = cfg.frame.dims();
    let d = pilot.input_dims;
    let mut filters: Vec<(f32, MmseFilter)> = Vec::new();
    for m in &pilot.meta {
        if !filters.iter().any(|(s, _)| *s == m.snr_db) {
            let nv = chanest_core::channel::noise_variance(m.snr_db as f64, 1.0);
            filters.push((m.snr_db, MmseFilter::new(stats, nv, 1.0)?));
        }
    }
    (0..pilot.len())
        .into_par_iter()
        .map(|i| {
            let f = &filters.iter().find(|(s, _)| *s == pilot.meta[i].snr_db).expect("filter per snr").1;
            let h_p = grid_from_f32(d.rows, d.cols, pilot.input(i));
            let est = f.estimate(&h_p, &pattern, dims)?.h_hat;
            let mut flat = Vec::with_capacity(2 * est.data().len());
            for z in est.data() {
                flat.push(z.re);
                flat.push(z.im);
            }
            Ok(frame_mse(&flat, pilot.target(i)))
        })
        .collect()
}

/// Per-frame MSE for LS, MMSE and every listed estimator over one split.
fn split_frame_mse(cfg: &ExperimentConfig, run: &Run, split: Split, models: &[ModelRef]) -> Result<Vec<(String, Vec<f64>)>> {
    let hint = generate_hint(cfg);
    let full = run.read_dataset(&dataset_rel(split, AeMode::Full, false), &hint)?;
    let pilot = run.read_dataset(&dataset_rel(split, AeMode::Pilot, false), &hint)?;
    if !run.path(STATS_REL).exists() {
        bail!("{} not found; run `{hint}` first", run.path(STATS_REL).display());
    }
    let stats = ChannelStats::load(&run.path(STATS_REL), &cfg.channel.to_string())?;
    let mut rows = vec![
        ("ls".to_string(), ls_frame_mse(&full)),
        ("mmse".to_string(), mmse_frame_mse(cfg, &pilot, &stats)?),
    ];
    drop((full, pilot));
    let mut cache: Vec<(String, Dataset)> = Vec::new();
    for m in models {
        let rel = dataset_rel(split, m.mode(), m.id.enhanced);
        if !cache.iter().any(|(r, _)| *r == rel) {
            let hint = if m.id.enhanced {
                format!("chanest enhance --mode {}", m.mode())
            } else {
                hint.clone()
            };
            let ds = run.read_dataset(&rel, &hint)?;
            if m.id.enhanced {
                check_fingerprint(cfg, m.mode(), &ds, &rel)?;
            }
            cache.push((rel.clone(), ds));
        }
        let ds = &cache.iter().find(|(r, _)| *r == rel).expect("cached").1;
        check_channels(m, ds, &rel)?;
        let model = load_model(cfg, m)?;
        eprintln!("eval: {m} on {rel}");
        rows.push((m.to_string(), model_frame_mse(&model, ds, cfg.eval.batch)?));
    }
    Ok(rows)
}

/// Mean of consecutive groups of `per` frames, in dB.
fn group_db(frames: &[f64], per: usize) -> Vec<f64> {
    frames
        .chunks(per)
        .map(|c| classical::to_db(c.iter().sum::<f64>() / c.len() as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrRow {
    pub snr_db: f64,
    pub model: String,
    pub mse_db: f64,
    pub n_frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DopplerRow {
    pub doppler_hz: f64,
    pub speed_kmh: f64,
    pub model: String,
    pub mse_db: f64,
    pub n_frames: usize,
}

pub fn snr_csv(rows: &[SnrRow]) -> String {
    let mut s = String::from("snr_db,model,mse_db,n_frames\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.4},{}\n", r.snr_db, r.model, r.mse_db, r.n_frames));
    }
    s
}

pub fn doppler_csv(rows: &[DopplerRow]) -> String {
    let mut s = String::from("doppler_hz,speed_kmh,model,mse_db,n_frames\n");
    for r in rows {
        s.push_str(&format!("{:.2},{},{},{:.4},{}\n", r.doppler_hz, r.speed_kmh, r.model, r.mse_db, r.n_frames));
    }
    s
}

fn series_by_model<'r>(rows: impl Iterator<Item = (&'r str, f64, f64)>) -> Vec<Series> {
    let mut out: Vec<Series> = Vec::new();
    for (name, x, y) in rows {
        match out.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push((x, y)),
            None => out.push(Series {
                name: name.to_string(),
                points: vec![(x, y)],
            }),
        }
    }
    out
}

pub fn resolve_models(cfg: &ExperimentConfig, override_models: Option<&[String]>) -> Result<Vec<ModelRef>> {
    parse_models(override_models.unwrap_or(&cfg.eval.models))
}

/// MSE versus SNR on the paired test set.
pub fn eval_snr(cfg: &ExperimentConfig, models: &[ModelRef]) -> Result<Vec<SnrRow>> {
    let mut run = Run::open(cfg, "eval-snr")?;
    let per = cfg.test_samples_per_snr;
    let table = split_frame_mse(cfg, &run, Split::Test, models)?;
    let mut rows = Vec::new();
    for (si, &snr) in cfg.snr_test.iter().enumerate() {
        for (name, frames) in &table {
            if frames.len() != per * cfg.snr_test.len() {
                bail!("test set holds {} frames, expected {}; rerun generate", frames.len(), per * cfg.snr_test.len());
            }
            rows.push(SnrRow {
                snr_db: snr,
                model: name.clone(),
                mse_db: group_db(frames, per)[si],
                n_frames: per,
            });
        }
    }
    run.write_text("results/eval_snr.csv", &snr_csv(&rows))?;
    if cfg.eval.svg {
        let series = series_by_model(rows.iter().map(|r| (r.model.as_str(), r.snr_db, r.mse_db)));
        let svg = line_chart(&format!("MSE versus SNR, {}", cfg.channel), "SNR (dB)", "MSE (dB)", &series);
        run.write_text("results/eval_snr.svg", &svg)?;
    }
    for r in &rows {
        run.manifest.metrics.insert(format!("eval_snr.{}@{}dB", r.model, r.snr_db), r.mse_db);
    }
    run.finish()?;
    Ok(rows)
}

/// MSE versus Doppler shift at the fixed sweep SNR.
pub fn eval_doppler(cfg: &ExperimentConfig, models: &[ModelRef]) -> Result<Vec<DopplerRow>> {
    let mut run = Run::open(cfg, "eval-doppler")?;
    let per = cfg.doppler_samples;
    let table = split_frame_mse(cfg, &run, Split::Doppler, models)?;
    let mut rows = Vec::new();
    for (vi, &speed) in cfg.doppler_sweep.iter().enumerate() {
        let fd = doppler_from_speed(speed, cfg.frame.carrier_freq)?;
        for (name, frames) in &table {
            if frames.len() != per * cfg.doppler_sweep.len() {
                bail!("doppler set holds {} frames, expected {}; rerun generate", frames.len(), per * cfg.doppler_sweep.len());
            }
            rows.push(DopplerRow {
                doppler_hz: fd,
                speed_kmh: speed,
                model: name.clone(),
                mse_db: group_db(frames, per)[vi],
                n_frames: per,
            });
        }
    }
    run.write_text("results/eval_doppler.csv", &doppler_csv(&rows))?;
    if cfg.eval.svg {
        let series = series_by_model(rows.iter().map(|r| (r.model.as_str(), r.doppler_hz, r.mse_db)));
        let title = format!("MSE versus Doppler shift, {} at {} dB", cfg.channel, cfg.doppler_snr);
        run.write_text("results/eval_doppler.svg", &line_chart(&title, "Doppler shift (Hz)", "MSE (dB)", &series))?;
    }
    for r in &rows {
        run.manifest.metrics.insert(format!("eval_doppler.{}@{:.2}Hz", r.model, r.doppler_hz), r.mse_db);
    }
    run.finish()?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityRow {
    pub model: ZooId,
    pub params: usize,
    pub reference: usize,
    pub tolerance: f64,
    pub macs: u64,
    pub input_dims: Vec<usize>,
}

impl ComplexityRow {
    pub fn deviation(&self) -> f64 {
        (self.params as f64 - self.reference as f64) / self.reference as f64
    }

    pub fn within_tolerance(&self) -> bool {
        self.deviation().abs() <= self.tolerance
    }
}

pub fn complexity(cfg: &ExperimentConfig) -> Result<Vec<ComplexityRow>> {
    let dims = grid_dims(cfg)?;
    zoo::zoo_catalog()
        .into_iter()
        .map(|id| {
            let m = zoo::build(id, dims, 0)?;
            let (reference, tolerance) = id.reference_params();
            Ok(ComplexityRow {
                model: id,
                params: m.param_count(),
                reference,
                tolerance,
                macs: m.mac_count(),
                input_dims: m.input_shape().to_vec(),
            })
        })
        .collect()
}

pub fn complexity_csv(rows: &[ComplexityRow]) -> String {
    let mut s = String::from("model,params,reference,deviation_pct,tolerance_pct,status,macs,input_dims\n");
    for r in rows {
        let dims: Vec<String> = r.input_dims.iter().map(|d| d.to_string()).collect();
        s.push_str(&format!(
            "{},{},{},{:.3},{},{},{},{}\n",
            r.model,
            r.params,
            r.reference,
            100.0 * r.deviation(),
            100.0 * r.tolerance,
            status(r),
            r.macs,
            dims.join("x")
        ));
    }
    s
}

fn status(r: &ComplexityRow) -> &'static str {
    match (r.params == r.reference, r.within_tolerance()) {
        (true, _) => "exact",
        (false, true) => "within-tolerance",
        (false, false) => "OUT-OF-TOLERANCE",
    }
}

/// Baseline vs enhanced deltas found in an SNR results table.
pub fn enhancement_deltas(rows: &[SnrRow]) -> Vec<(String, f64, f64)> {
    let mut out = Vec::new();
    for r in rows {
        let Ok(m) = r.model.parse::<ModelRef>() else { continue };
        if !m.id.enhanced {
            continue;
        }
        let base = ModelRef::new(m.id.baseline(), m.replicate).to_string();
        if let Some(b) = rows.iter().find(|b| b.snr_db == r.snr_db && b.model == base) {
            out.push((m.to_string(), r.snr_db, r.mse_db - b.mse_db));
        }
    }
    out
}

pub fn parse_snr_csv(text: &str) -> Result<Vec<SnrRow>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(anyhow!("malformed row {l:?}"));
            }
            Ok(SnrRow {
                snr_db: f[0].parse()?,
                model: f[1].to_string(),
                mse_db: f[2].parse()?,
                n_frames: f[3].parse()?,
            })
        })
        .collect()
}

/// Complexity table, plus enhancement deltas when SNR results exist.
pub fn report(cfg: &ExperimentConfig) -> Result<String> {
    let mut run = Run::open(cfg, "report")?;
    let rows = complexity(cfg)?;
    run.write_text("results/complexity.csv", &complexity_csv(&rows))?;
    let mut out = format!(
        "{:<24} {:>9} {:>9} {:>8} {:>14} {:>12}  input\n",
        "model", "params", "target", "dev %", "status", "MACs"
    );
    for r in &rows {
        let dims: Vec<String> = r.input_dims.iter().map(|d| d.to_string()).collect();
        out.push_str(&format!(
            "{:<24} {:>9} {:>9} {:>+8.3} {:>14} {:>12}  {}\n",
            r.model.to_string(),
            r.params,
            r.reference,
            100.0 * r.deviation(),
            status(r),
            r.macs,
            dims.join("x")
        ));
    }
    let snr_path = run.path("results/eval_snr.csv");
    if snr_path.exists() {
        let deltas = enhancement_deltas(&parse_snr_csv(&std::fs::read_to_string(&snr_path)?)?);
        if !deltas.is_empty() {
            out.push_str("\nenhanced minus baseline MSE (dB):\n");
            for (m, snr, d) in deltas {
                out.push_str(&format!("{m:<28} {snr:>5} dB  {d:+.3}\n"));
            }
        }
    }
    run.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_tokens() {
        let m: ModelRef = "reesnet-12f-enhanced.r2".parse().unwrap();
        assert_eq!(m.replicate, 2);
        assert!(m.id.enhanced);
        assert_eq!(m.to_string(), "reesnet-12f-enhanced.r2");
        assert_eq!("srcnn".parse::<ModelRef>().unwrap().to_string(), "srcnn");
        assert!("nonsense".parse::<ModelRef>().is_err());
        let base: ModelRef = "reesnet.r2".parse().unwrap();
        assert_eq!(base.seed(7), "reesnet-enhanced.r2".parse::<ModelRef>().unwrap().seed(7));
        assert_ne!(base.seed(7), "reesnet.r1".parse::<ModelRef>().unwrap().seed(7));
        assert_eq!(parse_models(&["ls".into(), "mmse".into(), "srcnn".into()]).unwrap().len(), 1);
    }

    #[test]
    fn frame_mse_is_per_resource_element() {
        assert_eq!(frame_mse(&[1.0, 1.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 0.0]), 1.0);
    }

    #[test]
    fn csv_round_trip_and_deltas() {
        let rows = vec![
            SnrRow { snr_db: 20.0, model: "srcnn".into(), mse_db: -25.0, n_frames: 10 },
            SnrRow { snr_db: 20.0, model: "srcnn-enhanced".into(), mse_db: -25.5, n_frames: 10 },
        ];
        let back = parse_snr_csv(&snr_csv(&rows)).unwrap();
        assert_eq!(back, rows);
        let d = enhancement_deltas(&rows);
        assert_eq!(d.len(), 1);
        assert!((d[0].2 + 0.5).abs() < 1e-12);
    }

    #[test]
    fn test_plan_pairs_seeds_across_snr() {
        let mut cfg = ExperimentConfig::for_profile(crate::config::Profile::Desk);
        cfg.test_samples_per_snr = 3;
        let plan = split_plan(&cfg, Split::Test).unwrap();
        assert_eq!(plan.len(), 18);
        for (a, b) in plan.iter().zip(&plan[3..]) {
            assert_eq!((a.0, a.1), (b.0, b.1));
        }
        let d = split_plan(&cfg, Split::Doppler).unwrap();
        assert_eq!(d.len(), 9 * cfg.doppler_samples);
    }
}
