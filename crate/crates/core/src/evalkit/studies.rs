//! Experiment drivers: lambda grid, sample-size sweep and augmentation
//! benefit. Each writes a small CSV table.

use std::fmt::{self, Write as _};
use std::path::Path;

use crate::datakit::{make_pairs, sample_pairs, Dataset, Grade, ImageSet, SamplePair};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::netlib::{ArchConfig, KeCae};
use crate::rng::derive_seed;
use crate::runconfig::RunConfig;
use crate::trainer::{generate, Generated, OutputKind, TrainConfig, Trainer};

use super::classifier::{Classifier, ClassifierKind};
use super::latent::latent_probe;

/// Training images per class used to fit latent probes.
pub const PROBE_PER_CLASS: usize = 200;

/// `{1e-5, 1e-4, ..., 1}`.
pub fn decade_grid() -> Vec<f64> {
    (0..6).map(|i| 10f64.powi(i - 5)).collect()
}

fn train_on(ds: &Dataset, run: &RunConfig) -> Result<Trainer> {
    let idx = make_pairs(ds.train.kl0.len(), ds.train.kl2.len());
    let n = (run.pair_n as u64).min(idx.len()) as usize;
    let pairs = sample_pairs(&idx, n, run.seed)?;
    let mut t = Trainer::new(TrainConfig::from_run(run)?)?;
    t.train(&ds.train, &pairs, None)?;
    Ok(t)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridRow {
    pub lambda1: f64,
    pub lambda2: f64,
    pub acc_hk: f64,
    pub acc_hu: f64,
}

/// Trains one short run per `(lambda1, lambda2)` cell and probes its
/// latents on the validation split. A diverged cell reports NaN.
pub fn grid_search(ds: &Dataset, base: &RunConfig, lambda1: &[f64], lambda2: &[f64], epochs: usize) -> Result<Vec<GridRow>> {
    let mut rows = Vec::with_capacity(lambda1.len() * lambda2.len());
    for &l1 in lambda1 {
        for &l2 in lambda2 {
            let mut run = base.clone();
            run.lambda1 = l1;
            run.lambda2 = l2;
            run.epochs = epochs;
            let scores = train_on(ds, &run).and_then(|mut t| {
                latent_probe(&mut t.model, &ds.train, &ds.val, Some(PROBE_PER_CLASS), base.probe_c)
            });
            let (acc_hk, acc_hu) = match scores {
                Ok(s) => (s.acc_hk, s.acc_hu),
                Err(Error::Divergence(msg)) => {
                    log::warn!("grid cell ({l1}, {l2}) diverged: {msg}");
                    (f64::NAN, f64::NAN)
                }
                Err(e) => return Err(e),
            };
            rows.push(GridRow { lambda1: l1, lambda2: l2, acc_hk, acc_hu });
        }
    }
    Ok(rows)
}

/// Cell with the highest `hK` probe accuracy (first on ties; NaN never wins).
pub fn best_cell(rows: &[GridRow]) -> Option<GridRow> {
    rows.iter()
        .filter(|r| r.acc_hk.is_finite())
        .fold(None, |best: Option<GridRow>, r| match best {
            Some(b) if b.acc_hk >= r.acc_hk => Some(b),
            _ => Some(*r),
        })
}

pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut s = String::from("lambda1,lambda2,acc_hK,acc_hU\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.lambda1, r.lambda2, r.acc_hk, r.acc_hu);
    }
    s
}

pub fn write_grid(path: &Path, rows: &[GridRow]) -> Result<()> {
    write_text(path, &grid_csv(rows))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SizeRow {
    pub n: usize,
    /// Final-epoch `J_MSE`, averaged over seeds.
    pub final_loss: f64,
    /// Test-split `hK` probe accuracy, averaged over seeds.
    pub acc: f64,
}

/// For every pair count, trains `seeds` runs for `base.epochs` epochs and
/// averages the final reconstruction loss and `hK` probe accuracy.
pub fn sample_size_study(ds: &Dataset, base: &RunConfig, sizes: &[usize], seeds: &[u64]) -> Result<Vec<SizeRow>> {
    let available = make_pairs(ds.train.kl0.len(), ds.train.kl2.len()).len();
    if let Some(&n) = sizes.iter().find(|&&n| n as u64 > available) {
        return Err(Error::Range(format!("sample size {n} exceeds the {available} available pairs")));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let (mut loss, mut acc) = (0.0, 0.0);
        for &seed in seeds {
            let mut run = base.clone();
            run.pair_n = n;
            run.seed = seed;
            let mut t = train_on(ds, &run)?;
            loss += t.history.last().map_or(f64::NAN, |r| r.j_mse);
            acc += latent_probe(&mut t.model, &ds.train, &ds.test, Some(PROBE_PER_CLASS), base.probe_c)?.acc_hk;
        }
        let k = seeds.len().max(1) as f64;
        rows.push(SizeRow { n, final_loss: loss / k, acc: acc / k });
    }
    Ok(rows)
}

pub fn sizes_csv(rows: &[SizeRow]) -> String {
    let mut s = String::from("N,final_loss,acc\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.n, r.final_loss, r.acc);
    }
    s
}

pub fn write_sizes(path: &Path, rows: &[SizeRow]) -> Result<()> {
    write_text(path, &sizes_csv(rows))
}

/// Training inputs of the augmentation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InputSet {
    /// Real training images only.
    Real,
    /// Real plus reconstructions.
    WithRecon,
    /// Real plus key-exchanged outputs.
    WithExchanged,
    /// Real plus both.
    WithBoth,
}

impl InputSet {
    pub const ALL: [InputSet; 4] = [InputSet::Real, InputSet::WithRecon, InputSet::WithExchanged, InputSet::WithBoth];

    fn includes(self, kind: OutputKind) -> bool {
        match self {
            InputSet::Real => false,
            InputSet::WithRecon => !kind.is_exchanged(),
            InputSet::WithExchanged => kind.is_exchanged(),
            InputSet::WithBoth => true,
        }
    }
}

impl fmt::Display for InputSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputSet::Real => "X",
            InputSet::WithRecon => "X+Xhat",
            InputSet::WithExchanged => "X+Xprime",
            InputSet::WithBoth => "X+Xhat+Xprime",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentRow {
    pub classifier: ClassifierKind,
    pub input_set: InputSet,
    pub seed: u64,
    pub acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfigEval {
    pub classifiers: Vec<ClassifierKind>,
    pub input_sets: Vec<InputSet>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    /// Training pairs passed through the auto-encoder to synthesise images.
    pub synth_pairs: usize,
    pub arch: ArchConfig,
}

fn labelled(set: &ImageSet) -> (Vec<&[f64]>, Vec<usize>) {
    let mut imgs = Vec::new();
    let mut labels = Vec::new();
    for g in Grade::ALL {
        for r in set.class(g) {
            imgs.push(r.pixels.as_slice());
            labels.push(g.index());
        }
    }
    (imgs, labels)
}

fn stack(images: &[&[f64]], side: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(images.len() * side * side);
    for im in images {
        data.extend(im.iter().map(|v| v.clamp(0.0, 1.0)));
    }
    Tensor::new(vec![images.len(), 1, side, side], data)
}

/// Trains each classifier from scratch on each input set and scores
/// it on the real test split.
pub fn augmentation_eval(model: &mut KeCae, ds: &Dataset, cfg: &AugmentConfigEval) -> Result<Vec<AugmentRow>> {
    let side = ds.train.side;
    let idx = make_pairs(ds.train.kl0.len(), ds.train.kl2.len());
    let n = (cfg.synth_pairs as u64).min(idx.len()) as usize;
    let pairs: Vec<SamplePair> = sample_pairs(&idx, n, derive_seed(0xa7e, &[n as u64]))?;
    let synth: Vec<Generated> = generate(model, &ds.train, &pairs)?;
    let (real, real_labels) = labelled(&ds.train);
    let (test, test_labels) = labelled(&ds.test);
    let test = stack(&test, side)?;
    let mut rows = Vec::new();
    for &kind in &cfg.classifiers {
        for &set in &cfg.input_sets {
            let mut imgs = real.clone();
            let mut labels = real_labels.clone();
            for g in synth.iter().filter(|g| set.includes(g.kind)) {
                imgs.push(&g.pixels);
                labels.push(g.grade.index());
            }
            let x = stack(&imgs, side)?;
            for &seed in &cfg.seeds {
                let mut clf = Classifier::new(kind, &cfg.arch, seed)?;
                clf.fit(&x, &labels, cfg.epochs, seed)?;
                let acc = clf.accuracy(&test, &test_labels)?;
                log::info!("{kind} {set} seed {seed}: {acc:.4}");
                rows.push(AugmentRow { classifier: kind, input_set: set, seed, acc });
            }
        }
    }
    Ok(rows)
}

/// Mean accuracy over seeds of one classifier / input-set cell.
pub fn mean_accuracy(rows: &[AugmentRow], classifier: ClassifierKind, set: InputSet) -> f64 {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.classifier == classifier && r.input_set == set)
        .map(|r| r.acc)
        .collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

pub fn augment_csv(rows: &[AugmentRow]) -> String {
    let mut s = String::from("classifier,input_set,seed,acc\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.classifier, r.input_set, r.seed, r.acc);
    }
    s
}

/// Mean accuracy and difference from `X` per classifier and input set.
pub fn augment_summary_csv(rows: &[AugmentRow]) -> String {
    let mut s = String::from("classifier,input_set,mean_acc,diff_vs_X\n");
    let mut kinds: Vec<ClassifierKind> = Vec::new();
    for r in rows {
        if !kinds.contains(&r.classifier) {
            kinds.push(r.classifier);
        }
    }
    for k in kinds {
        let base = mean_accuracy(rows, k, InputSet::Real);
        let present = |set: InputSet| rows.iter().any(|r| r.classifier == k && r.input_set == set);
        for set in InputSet::ALL.into_iter().filter(|&set| present(set)) {
            let m = mean_accuracy(rows, k, set);
            let _ = writeln!(s, "{k},{set},{m},{}", m - base);
        }
    }
    s
}

pub fn write_augment(dir: &Path, rows: &[AugmentRow]) -> Result<()> {
    write_text(&dir.join("augment.csv"), &augment_csv(rows))?;
    write_text(&dir.join("augment_summary.csv"), &augment_summary_csv(rows))
}
