//! Alternating discriminator / generator training loop.

mod checkpoint;
mod generate;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FILES};
pub use generate::{generate, write_generated, Generated, OutputKind};

use std::fmt::Write as _;
use std::path::Path;

use crate::datakit::{augment, AugmentConfig, Grade, ImageSet, SamplePair};
use crate::diffcore::{AdamConfig, BnMode, Graph, Tensor};
use crate::error::{Error, Result};
use crate::lossfns::{j_ce, j_ce2, j_lda, j_mse, j_total, LossReport, LossWeights, LDA_EPS};
use crate::netlib::{exchange, fuse, patch_pairs, ArchConfig, KeCae};
use crate::rng::Rng;
use crate::runconfig::RunConfig;

const SHUFFLE_STREAM: u64 = 0x5f1e;
const AUGMENT_STREAM: u64 = 0xa06e;

pub const METRICS_HEADER: &str = "epoch,j_mse,j_ce1,j_ce2,j_lda,j_total";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: ArchConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub pair_n: usize,
    pub augment: AugmentConfig,
    /// Source of the fields above; echoed into checkpoints.
    pub run: RunConfig,
}

impl TrainConfig {
    pub fn from_run(run: &RunConfig) -> Result<Self> {
        run.validate()?;
        Ok(TrainConfig {
            arch: run.arch(),
            epochs: run.epochs,
            batch_size: run.batch_size,
            lr_gen: run.lr_gen,
            lr_disc: run.lr_disc,
            weights: run.weights(),
            seed: run.seed,
            checkpoint_every: run.checkpoint_every,
            pair_n: run.pair_n,
            augment: run.augment(),
            run: run.clone(),
        })
    }
}

/// Images and labels of one batch of pairs.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x1: Tensor,
    pub x2: Tensor,
    pub y1: Vec<Grade>,
    pub y2: Vec<Grade>,
}

impl Batch {
    pub fn from_pairs(set: &ImageSet, pairs: &[SamplePair]) -> Result<Self> {
        let i0: Vec<usize> = pairs.iter().map(|p| p.kl0).collect();
        let i2: Vec<usize> = pairs.iter().map(|p| p.kl2).collect();
        Ok(Batch {
            x1: set.tensor(Grade::Kl0, &i0)?,
            x2: set.tensor(Grade::Kl2, &i2)?,
            y1: vec![Grade::Kl0; pairs.len()],
            y2: vec![Grade::Kl2; pairs.len()],
        })
    }

    pub fn len(&self) -> usize {
        self.y1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y1.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.y2.len() != n || self.x1.shape().first() != Some(&n) || self.x2.shape() != self.x1.shape() {
            return Err(Error::shape("batch images and labels disagree in size"));
        }
        if n < 2 {
            return Err(Error::DegenerateBatch(format!("batch of {n} pairs; need at least 2")));
        }
        if let Some(i) = (0..n).find(|&i| self.y1[i] != Grade::Kl0 || self.y2[i] != Grade::Kl2) {
            return Err(Error::data(format!(
                "pair {i} is labelled ({}, {}); every pair must be (KL0, KL2)",
                self.y1[i], self.y2[i]
            )));
        }
        Ok(())
    }
}

/// What the generator phase scored its exchanged outputs against.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorTrace {
    pub j_mse: f64,
    pub j_ce2: f64,
    pub j_lda: f64,
    /// Labels applied to `X1'` and `X2'`.
    pub exchanged_labels: (Vec<Grade>, Vec<Grade>),
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: KeCae,
    /// Completed optimisation steps.
    pub step: u64,
    pub epoch: usize,
    /// Batches of the current epoch already consumed.
    pub batch_in_epoch: usize,
    /// `J_MSE` of the very first step, before any update.
    pub initial_mse: Option<f64>,
    pub history: Vec<LossReport>,
    pub(crate) epoch_sums: [f64; 5],
    pub(crate) epoch_steps: usize,
}

fn check_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence(format!("{what} became {v}")))
    }
}

fn report_fields(r: &LossReport) -> [f64; 5] {
    [r.j_mse, r.j_ce1, r.j_ce2, r.j_lda, r.j_total]
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        let model = KeCae::new(&config.arch, config.seed)?;
        Ok(Trainer {
            config,
            model,
            step: 0,
            epoch: 0,
            batch_in_epoch: 0,
            initial_mse: None,
            history: Vec::new(),
            epoch_sums: [0.0; 5],
            epoch_steps: 0,
        })
    }

    /// Phase 1: cross-entropy of the discriminator on augmented real
    /// patches of both inputs, followed by its Adam update. Returns `J_CE1`.
    pub fn discriminator_phase(&mut self, batch: &Batch) -> Result<f64> {
        batch.validate()?;
        let n = batch.len();
        let side = self.config.arch.input_side;
        let mut rng = Rng::stream(self.config.seed, &[AUGMENT_STREAM, self.step]);
        let real = Tensor::concat_batch(&[&batch.x1, &batch.x2])?;
        let mut aug = Vec::with_capacity(real.numel());
        for img in real.data().chunks(side * side) {
            aug.extend(augment(img, side, &self.config.augment, &mut rng));
        }
        let real = Tensor::new(real.shape().to_vec(), aug)?;

        let disc = &mut self.model.discriminator;
        disc.group.zero_grad();
        let mut g = Graph::new();
        let bound = disc.group.bind(&mut g);
        let x = g.constant(real);
        let pairs = patch_pairs(&mut g, x)?;
        let out = disc.forward(&mut g, &bound, pairs, BnMode::Train)?;
        let d1 = g.slice_batch(out.logits, 0, n)?;
        let d2 = g.slice_batch(out.logits, n, n)?;
        let a = j_ce(&mut g, d1, &batch.y1)?;
        let b = j_ce(&mut g, d2, &batch.y2)?;
        let ce1 = g.add(a, b)?;
        let value = check_finite("J_CE1", g.value(ce1).item()?)?;
        g.backward(ce1)?;
        disc.group.accumulate_grads(&g, &bound);
        disc.group.adam_step(&AdamConfig::with_lr(self.config.lr_disc));
        Ok(value)
    }

    /// Phases 2-9: freeze the discriminator, reconstruct and exchange,
    /// score, update the encoder/decoder, unfreeze.
    pub fn generator_phase(&mut self, batch: &Batch) -> Result<GeneratorTrace> {
        batch.validate()?;
        self.model.discriminator.group.freeze();
        let r = self.generator_pass(batch);
        self.model.discriminator.group.unfreeze();
        r
    }

    fn generator_pass(&mut self, batch: &Batch) -> Result<GeneratorTrace> {
        let n = batch.len();
        let w = self.config.weights;
        self.model.generator.zero_grad();
        let mut g = Graph::new();
        let gen_bound = self.model.generator.bind(&mut g);
        let disc_bound = self.model.discriminator.group.bind(&mut g);

        let x1 = g.constant(batch.x1.clone());
        let x2 = g.constant(batch.x2.clone());
        let both = g.concat_batch(&[x1, x2])?;
        let lat = self.model.encode(&mut g, &gen_bound, both, BnMode::Train)?;
        let p1 = lat.slice(&mut g, 0, n)?;
        let p2 = lat.slice(&mut g, n, n)?;
        let h1 = fuse(&mut g, &p1)?;
        let h2 = fuse(&mut g, &p2)?;
        let (e1, e2) = exchange(&mut g, &p1, &p2)?;
        let codes = g.concat_batch(&[h1, h2, e1, e2])?;
        let out = self.model.decode(&mut g, &gen_bound, codes, BnMode::Train)?;
        let xh1 = g.slice_batch(out, 0, n)?;
        let xh2 = g.slice_batch(out, n, n)?;
        let mse = j_mse(&mut g, x1, xh1, x2, xh2)?;

        let exchanged = g.slice_batch(out, 2 * n, 2 * n)?;
        let pairs = patch_pairs(&mut g, exchanged)?;
        let d = self
            .model
            .discriminator
            .forward(&mut g, &disc_bound, pairs, BnMode::Train)?;
        let d1p = g.slice_batch(d.logits, 0, n)?;
        let d2p = g.slice_batch(d.logits, n, n)?;
        let ce2 = j_ce2(&mut g, d1p, d2p, &batch.y1, &batch.y2)?;

        let l1 = j_lda(&mut g, p1.hu, p1.hk, LDA_EPS)?;
        let l2 = j_lda(&mut g, p2.hu, p2.hk, LDA_EPS)?;
        let lda = g.add(l1, l2)?;

        let t1 = g.scale(ce2, w.lambda1);
        let t2 = g.scale(lda, w.lambda2);
        let s = g.add(mse, t1)?;
        let loss = g.add(s, t2)?;
        let trace = GeneratorTrace {
            j_mse: check_finite("J_MSE", g.value(mse).item()?)?,
            j_ce2: check_finite("J_CE2", g.value(ce2).item()?)?,
            j_lda: check_finite("J_LDA", g.value(lda).item()?)?,
            exchanged_labels: (
                batch.y1.iter().map(|y| y.swapped()).collect(),
                batch.y2.iter().map(|y| y.swapped()).collect(),
            ),
        };
        check_finite("generator loss", g.value(loss).item()?)?;
        g.backward(loss)?;
        self.model.generator.accumulate_grads(&g, &gen_bound);
        self.model.generator.adam_step(&AdamConfig::with_lr(self.config.lr_gen));
        Ok(trace)
    }

    /// One full step; the returned report satisfies the `j_total` identity.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossReport> {
        batch.validate()?;
        let ce1 = self.discriminator_phase(batch)?;
        let t = self.generator_phase(batch)?;
        let report = j_total(t.j_mse, ce1, t.j_ce2, t.j_lda, &self.config.weights);
        if self.initial_mse.is_none() {
            self.initial_mse = Some(t.j_mse);
        }
        self.step += 1;
        Ok(report)
    }

    /// Pair order of `epoch`, reproducible from the seed alone.
    pub fn epoch_order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        Rng::stream(self.config.seed, &[SHUFFLE_STREAM, epoch as u64]).shuffle(&mut order);
        order
    }

    /// Batches per epoch; a trailing batch with fewer than two pairs is
    /// dropped.
    pub fn batches_per_epoch(&self, n_pairs: usize) -> usize {
        let b = self.config.batch_size;
        n_pairs / b + usize::from(n_pairs % b >= 2)
    }

    /// Runs one batch of the current epoch, closing the epoch when it was
    /// the last one.
    pub fn advance(&mut self, set: &ImageSet, pairs: &[SamplePair]) -> Result<LossReport> {
        let b = self.config.batch_size;
        let order = self.epoch_order(pairs.len(), self.epoch);
        let lo = self.batch_in_epoch * b;
        let hi = (lo + b).min(pairs.len());
        let chosen: Vec<SamplePair> = order[lo..hi].iter().map(|&i| pairs[i]).collect();
        let report = self.train_step(&Batch::from_pairs(set, &chosen)?)?;
        for (s, v) in self.epoch_sums.iter_mut().zip(report_fields(&report)) {
            *s += v;
        }
        self.epoch_steps += 1;
        self.batch_in_epoch += 1;
        if self.batch_in_epoch >= self.batches_per_epoch(pairs.len()) {
            let k = self.epoch_steps as f64;
            let m = self.epoch_sums.map(|s| s / k);
            self.history.push(LossReport {
                j_mse: m[0],
                j_ce1: m[1],
                j_ce2: m[2],
                j_lda: m[3],
                j_total: m[4],
            });
            self.epoch += 1;
            self.batch_in_epoch = 0;
            self.epoch_sums = [0.0; 5];
            self.epoch_steps = 0;
        }
        Ok(report)
    }

    /// Trains until `config.epochs` epochs are complete. With `out`, writes
    /// `metrics.csv` after each epoch and checkpoints under
    /// `out/checkpoint` every `checkpoint_every` steps and at the end.
    pub fn train(&mut self, set: &ImageSet, pairs: &[SamplePair], out: Option<&Path>) -> Result<()> {
        if self.batches_per_epoch(pairs.len()) == 0 {
            return Err(Error::data(format!(
                "{} pairs do not fill a batch of at least 2",
                pairs.len()
            )));
        }
        while self.epoch < self.config.epochs {
            let epoch = self.epoch;
            self.advance(set, pairs)?;
            if let Some(dir) = out {
                if self.epoch != epoch {
                    let r = self.history[epoch];
                    log::info!(
                        "epoch {epoch}: j_mse {:.5} j_ce1 {:.4} j_ce2 {:.4} j_lda {:.4}",
                        r.j_mse,
                        r.j_ce1,
                        r.j_ce2,
                        r.j_lda
                    );
                    write_metrics(&dir.join("metrics.csv"), &self.history)?;
                }
                let every = self.config.checkpoint_every;
                if every > 0 && self.step % every == 0 {
                    save_checkpoint(self, &dir.join("checkpoint"))?;
                }
            }
        }
        if let Some(dir) = out {
            write_metrics(&dir.join("metrics.csv"), &self.history)?;
            save_checkpoint(self, &dir.join("checkpoint"))?;
        }
        Ok(())
    }
}

pub fn metrics_csv(history: &[LossReport]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for (e, r) in history.iter().enumerate() {
        let _ = writeln!(s, "{e},{},{},{},{},{}", r.j_mse, r.j_ce1, r.j_ce2, r.j_lda, r.j_total);
    }
    s
}

pub fn write_metrics(path: &Path, history: &[LossReport]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, metrics_csv(history)).map_err(|e| Error::io(path, e))
}
