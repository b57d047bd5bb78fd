//! Experiment configuration: profile defaults overlaid with a TOML file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use chanest_core::channel::{FrameSpec, PowerDelayProfile, ProfileName};
use chanest_core::enhance::{FeatureTap, Normalize};
use chanest_core::grid::EdgePolicy;
use chanest_core::link::PilotPattern;
use chanest_core::nn::{Select, TrainConfig};
use chanest_core::sim::Scenario;
use chanest_core::zoo::Family;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Full,
}

impl FromStr for Profile {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            _ => bail!("unknown profile {s:?} (expected desk or full)"),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Full => "full",
        })
    }
}

/// Training recipe as written in config files. A drop period of 0 means
/// a constant learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    pub epochs: usize,
    pub initial_lr: f64,
    pub lr_drop_period: usize,
    pub lr_drop_factor: f64,
    pub batch_size: usize,
}

impl Recipe {
    /// Reference recipe with epochs and drop period scaled by `scale`
    /// (rounded up).
    fn scaled(base: TrainConfig, scale: f64) -> Self {
        let s = |v: usize| ((v as f64 * scale).ceil() as usize).max(1);
        Self {
            epochs: s(base.epochs),
            initial_lr: base.initial_lr,
            lr_drop_period: base.lr_drop_period.map(s).unwrap_or(0),
            lr_drop_factor: base.lr_drop_factor.unwrap_or(1.0),
            batch_size: base.batch_size,
        }
    }

    pub fn to_train_config(&self, seed: u64, train: &TrainSection) -> TrainConfig {
        let drop = self.lr_drop_period > 0 && self.lr_drop_factor != 1.0;
        TrainConfig {
            epochs: self.epochs,
            initial_lr: self.initial_lr,
            lr_drop_period: drop.then_some(self.lr_drop_period),
            lr_drop_factor: drop.then_some(self.lr_drop_factor),
            batch_size: self.batch_size,
            seed,
            val_fraction: train.val_fraction,
            select: train.select,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PilotSection {
    /// 1-based OFDM symbols carrying pilots.
    pub symbols: Vec<usize>,
    /// 1-based first pilot subcarrier of each pilot symbol.
    pub offsets: Vec<usize>,
    pub step: usize,
    pub count: usize,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpSection {
    pub edge: EdgePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeSection {
    pub feature_tap: FeatureTap,
    pub normalize: Normalize,
    pub recipe: Recipe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub select: Select,
    pub val_fraction: f64,
    pub srcnn: Recipe,
    pub channelnet: Recipe,
    pub reesnet: Recipe,
    pub interp_resnet: Recipe,
}

impl TrainSection {
    pub fn recipe(&self, family: Family) -> &Recipe {
        match family {
            Family::Srcnn => &self.srcnn,
            Family::ChannelNet => &self.channelnet,
            Family::ReEsNet => &self.reesnet,
            Family::InterpResNet => &self.interp_resnet,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub models: Vec<String>,
    pub svg: bool,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub channel: ProfileName,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    pub snr_train: Vec<f64>,
    pub snr_test: Vec<f64>,
    pub samples_per_snr: usize,
    pub test_samples_per_snr: usize,
    /// Uniform terminal speed range of training and test frames, km/h.
    pub speed_range: [f64; 2],
    pub doppler_sweep: Vec<f64>,
    pub doppler_snr: f64,
    pub doppler_samples: usize,
    pub stats_realizations: usize,
    pub frame: FrameSpec,
    pub pilot: PilotSection,
    pub interp: InterpSection,
    pub ae: AeSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl ExperimentConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (n_train, n_test, n_doppler, n_stats, scale) = match profile {
            Profile::Desk => (500, 500, 500, 2000, 0.25),
            Profile::Full => (5000, 5000, 5000, 10_000, 1.0),
        };
        let p = PilotPattern::paper_default();
        Self {
            profile,
            channel: ProfileName::Epa,
            master_seed: 2024,
            out_dir: PathBuf::from("run"),
            snr_train: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            snr_test: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0],
            samples_per_snr: n_train,
            test_samples_per_snr: n_test,
            speed_range: [0.0, 50.0],
            doppler_sweep: (0..=8).map(|i| 20.0 * i as f64).collect(),
            doppler_snr: 15.0,
            doppler_samples: n_doppler,
            stats_realizations: n_stats,
            frame: FrameSpec::default(),
            pilot: PilotSection {
                symbols: p.pilot_symbols().to_vec(),
                offsets: vec![1, 2],
                step: p.step(),
                count: p.n_pf(),
                kind: "qpsk".into(),
            },
            interp: InterpSection {
                edge: EdgePolicy::Extrapolate,
            },
            ae: AeSection {
                feature_tap: FeatureTap::PostRelu,
                normalize: Normalize::None,
                recipe: Recipe::scaled(Family::Srcnn.train_config(), scale),
            },
            train: TrainSection {
                select: Select::BestVal,
                val_fraction: 0.2,
                srcnn: Recipe::scaled(Family::Srcnn.train_config(), scale),
                channelnet: Recipe::scaled(Family::ChannelNet.train_config(), scale),
                reesnet: Recipe::scaled(Family::ReEsNet.train_config(), scale),
                interp_resnet: Recipe::scaled(Family::InterpResNet.train_config(), scale),
            },
            eval: EvalSection {
                models: ["srcnn", "srcnn-enhanced", "reesnet", "reesnet-enhanced"].map(String::from).to_vec(),
                svg: true,
                batch: 64,
            },
        }
    }

    /// Profile defaults, overlaid with `text` (TOML). The profile named by
    /// `profile` wins over one named in the text.
    pub fn from_toml(text: &str, profile: Option<Profile>) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        let profile = match (profile, user.get("profile")) {
            (Some(p), _) => p,
            (None, Some(v)) => v.as_str().context("profile must be a string")?.parse()?,
            (None, None) => Profile::Desk,
        };
        let mut merged = toml::Table::try_from(Self::for_profile(profile))?;
        merge(&mut merged, user);
        merged.insert("profile".into(), toml::Value::String(profile.to_string()));
        let cfg: Self = merged.try_into().context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, profile: Option<Profile>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
            None => String::new(),
        };
        Self::from_toml(&text, profile)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, list) in [("snr_train", &self.snr_train), ("snr_test", &self.snr_test), ("doppler_sweep", &self.doppler_sweep)] {
            if list.is_empty() {
                bail!("{name} must not be empty");
            }
        }
        if self.samples_per_snr == 0 || self.test_samples_per_snr == 0 || self.doppler_samples == 0 || self.stats_realizations == 0 {
            bail!("sample counts must be positive");
        }
        if self.pilot.kind != "qpsk" {
            bail!("pilot.kind {:?} is not supported (only qpsk)", self.pilot.kind);
        }
        if self.eval.batch == 0 {
            bail!("eval.batch must be positive");
        }
        chanest_core::sim::draw_speed(0, (self.speed_range[0], self.speed_range[1]))?;
        self.scenario()?;
        Ok(())
    }

    pub fn pattern(&self) -> Result<PilotPattern> {
        let p = PilotPattern::new(self.pilot.symbols.clone(), self.pilot.offsets.clone(), self.pilot.step, self.pilot.count)?;
        p.validate(self.frame.n_subcarriers, self.frame.n_symbols)?;
        Ok(p)
    }

    pub fn scenario(&self) -> Result<Scenario> {
        Ok(Scenario::new(
            PowerDelayProfile::make(self.channel),
            self.frame.clone(),
            self.pattern()?,
            self.interp.edge,
        )?)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
