//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a default; an
//! unknown key or a malformed value is an error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::datakit::AugmentConfig;
use crate::error::{Error, Result};
use crate::lossfns::LossWeights;
use crate::netlib::{ArchConfig, Preset};

/// `(key, default, description)` for every recognised key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("preset", "desk", "network size: paper, desk or tiny"),
    ("input_side", "0", "image side in pixels; 0 uses the preset's"),
    ("seed", "1", "master random seed"),
    ("epochs", "30", "training epochs (one epoch = one pass over the sampled pairs)"),
    ("batch_size", "30", "pairs per training step"),
    ("lr_gen", "0.001", "Adam learning rate of the encoder/decoder"),
    ("lr_disc", "0.0001", "Adam learning rate of the discriminator"),
    ("lambda1", "0.01", "weight of the exchanged-output cross-entropy"),
    ("lambda2", "0.001", "weight of the latent separation loss"),
    ("pair_n", "2000", "training pairs sampled from all KL-0 x KL-2 combinations"),
    ("augment_p", "0.5", "probability of each discriminator input augmentation"),
    ("checkpoint_every", "0", "steps between intermediate checkpoints; 0 saves only at the end"),
    ("data_dir", "data", "split dataset directory (train/ val/ test/)"),
    ("kl0_count", "571", "KL-0 images rendered by gen-data"),
    ("kl2_count", "380", "KL-2 images rendered by gen-data"),
    ("grid_epochs", "10", "training epochs per grid-search cell"),
    ("sizes", "500,1000,5000,10000", "pair counts for the sample-size study"),
    ("eval_seeds", "3", "seed replicates in the sample-size and augmentation studies"),
    ("classifier_epochs", "15", "epochs for each downstream classifier"),
    ("probe_c", "1", "SVM penalty C"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub input_side: usize,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub pair_n: usize,
    pub augment_p: f64,
    pub checkpoint_every: u64,
    pub data_dir: PathBuf,
    pub kl0_count: usize,
    pub kl2_count: usize,
    pub grid_epochs: usize,
    pub sizes: Vec<usize>,
    pub eval_seeds: usize,
    pub classifier_epochs: usize,
    pub probe_c: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = RunConfig {
            preset: Preset::Desk,
            input_side: 0,
            seed: 0,
            epochs: 0,
            batch_size: 0,
            lr_gen: 0.0,
            lr_disc: 0.0,
            lambda1: 0.0,
            lambda2: 0.0,
            pair_n: 0,
            augment_p: 0.0,
            checkpoint_every: 0,
            data_dir: PathBuf::new(),
            kl0_count: 0,
            kl2_count: 0,
            grid_epochs: 0,
            sizes: Vec::new(),
            eval_seeds: 0,
            classifier_epochs: 0,
            probe_c: 0.0,
        };
        for (k, v, _) in KEYS {
            c.set(k, v).expect("defaults parse");
        }
        c
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn fmt_list(v: &[usize]) -> String {
    v.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "preset" => self.preset = v.parse()?,
            "input_side" => self.input_side = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "lr_gen" => self.lr_gen = num(key, v)?,
            "lr_disc" => self.lr_disc = num(key, v)?,
            "lambda1" => self.lambda1 = num(key, v)?,
            "lambda2" => self.lambda2 = num(key, v)?,
            "pair_n" => self.pair_n = num(key, v)?,
            "augment_p" => self.augment_p = num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = num(key, v)?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "kl0_count" => self.kl0_count = num(key, v)?,
            "kl2_count" => self.kl2_count = num(key, v)?,
            "grid_epochs" => self.grid_epochs = num(key, v)?,
            "sizes" => {
                self.sizes = v
                    .split(',')
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "eval_seeds" => self.eval_seeds = num(key, v)?,
            "classifier_epochs" => self.classifier_epochs = num(key, v)?,
            "probe_c" => self.probe_c = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "preset" => self.preset.to_string(),
            "input_side" => self.input_side.to_string(),
            "seed" => self.seed.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr_gen" => self.lr_gen.to_string(),
            "lr_disc" => self.lr_disc.to_string(),
            "lambda1" => self.lambda1.to_string(),
            "lambda2" => self.lambda2.to_string(),
            "pair_n" => self.pair_n.to_string(),
            "augment_p" => self.augment_p.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "data_dir" => self.data_dir.display().to_string(),
            "kl0_count" => self.kl0_count.to_string(),
            "kl2_count" => self.kl2_count.to_string(),
            "grid_epochs" => self.grid_epochs.to_string(),
            "sizes" => fmt_list(&self.sizes),
            "eval_seeds" => self.eval_seeds.to_string(),
            "classifier_epochs" => self.classifier_epochs.to_string(),
            "probe_c" => self.probe_c.to_string(),
            _ => return None,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            c.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    /// Every key with its effective value, in documentation order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, _, _) in KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).unwrap_or_default());
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        if !(self.lr_gen > 0.0 && self.lr_disc > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.augment_p) {
            return Err(Error::Config("augment_p must be in [0, 1]".into()));
        }
        self.arch().validate()
    }

    pub fn arch(&self) -> ArchConfig {
        let mut a = ArchConfig::from_preset(self.preset);
        if self.input_side != 0 {
            a.input_side = self.input_side;
        }
        a
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            p: self.augment_p,
            ..Default::default()
        }
    }
}
