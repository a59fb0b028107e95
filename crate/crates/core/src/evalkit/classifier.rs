//! Downstream KL-0 / KL-2 classifiers trained from scratch.

use std::fmt;
use std::str::FromStr;

use crate::datakit::patch_pair_tensor;
use crate::diffcore::{AdamConfig, BnMode, Bound, Graph, ParamGroup, Tensor, Var};
use crate::error::{Error, Result};
use crate::netlib::layers::{ConvBnAct, Dense};
use crate::netlib::{ArchConfig, SiameseGap};
use crate::rng::Rng;

const BATCH: usize = 32;
const LR: f64 = 1e-3;
const EVAL_CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClassifierKind {
    /// The discriminator architecture on (lateral, medial) patch pairs.
    SiameseGap,
    /// Four conv blocks and a linear head on the whole image.
    SmallCnn,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 2] = [ClassifierKind::SiameseGap, ClassifierKind::SmallCnn];
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifierKind::SiameseGap => "siamese-gap",
            ClassifierKind::SmallCnn => "small-cnn",
        })
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "siamese-gap" => Ok(ClassifierKind::SiameseGap),
            "small-cnn" => Ok(ClassifierKind::SmallCnn),
            _ => Err(Error::Config(format!("unknown classifier {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
struct SmallCnn {
    group: ParamGroup,
    blocks: Vec<ConvBnAct>,
    head: Dense,
    slope: f64,
}

impl SmallCnn {
    fn new(arch: &ArchConfig, rng: &mut Rng) -> Result<Self> {
        let mut group = ParamGroup::new("small-cnn");
        let mut blocks = Vec::new();
        let mut c_in = 1;
        for (i, &c) in arch.disc_channels.iter().enumerate() {
            blocks.push(ConvBnAct::new(&mut group, &format!("cnn.block{i}"), c_in, c, 3, 2, 1, false, rng)?);
            c_in = c;
        }
        let head = Dense::new(&mut group, "cnn.head", c_in, 2, rng)?;
        Ok(SmallCnn {
            group,
            blocks,
            head,
            slope: arch.leaky_slope,
        })
    }
}

enum Net {
    Siamese(Box<SiameseGap>),
    Cnn(Box<SmallCnn>),
}

/// A classifier over `[n, 1, s, s]` images.
pub struct Classifier {
    pub kind: ClassifierKind,
    net: Net,
}

impl Classifier {
    pub fn new(kind: ClassifierKind, arch: &ArchConfig, seed: u64) -> Result<Self> {
        let mut rng = Rng::stream(seed, &[0xc1a5]);
        let net = match kind {
            ClassifierKind::SiameseGap => Net::Siamese(Box::new(SiameseGap::new("classifier", arch, &mut rng)?)),
            ClassifierKind::SmallCnn => Net::Cnn(Box::new(SmallCnn::new(arch, &mut rng)?)),
        };
        Ok(Classifier { kind, net })
    }

    fn group_mut(&mut self) -> &mut ParamGroup {
        match &mut self.net {
            Net::Siamese(s) => &mut s.group,
            Net::Cnn(c) => &mut c.group,
        }
    }

    /// Logits of `images` on `g`, with the parameter bindings used.
    fn logits(&mut self, g: &mut Graph, images: &Tensor, mode: BnMode) -> Result<(Var, Bound)> {
        match &mut self.net {
            Net::Siamese(s) => {
                let bound = s.group.bind(g);
                let x = g.constant(patch_pair_tensor(images)?);
                Ok((s.forward(g, &bound, x, mode)?.logits, bound))
            }
            Net::Cnn(c) => {
                let bound = c.group.bind(g);
                let mut h = g.constant(images.clone());
                for b in &c.blocks {
                    h = b.forward(g, &bound, &mut c.group, h, mode, c.slope)?;
                }
                let pooled = g.global_avg_pool(h)?;
                Ok((c.head.forward(g, &bound, pooled)?, bound))
            }
        }
    }

    /// Mini-batch Adam on shuffled `(images, labels)`.
    pub fn fit(&mut self, images: &Tensor, labels: &[usize], epochs: usize, seed: u64) -> Result<()> {
        let n = labels.len();
        if images.shape().first() != Some(&n) {
            return Err(Error::shape("classifier images and labels disagree in count"));
        }
        for epoch in 0..epochs {
            let mut order: Vec<usize> = (0..n).collect();
            Rng::stream(seed, &[0x0fd3, epoch as u64]).shuffle(&mut order);
            for chunk in order.chunks(BATCH).filter(|c| c.len() >= 2) {
                let x = gather(images, chunk)?;
                let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                self.group_mut().zero_grad();
                let mut g = Graph::new();
                let (logits, bound) = self.logits(&mut g, &x, BnMode::Train)?;
                let loss = g.softmax_cross_entropy(logits, &y)?;
                if !g.value(loss).item()?.is_finite() {
                    return Err(Error::Divergence("classifier loss is not finite".into()));
                }
                g.backward(loss)?;
                self.group_mut().accumulate_grads(&g, &bound);
                self.group_mut().adam_step(&AdamConfig::with_lr(LR));
            }
        }
        Ok(())
    }

    pub fn predict(&mut self, images: &Tensor) -> Result<Vec<usize>> {
        let n = images.shape().first().copied().unwrap_or(0);
        let mut out = Vec::with_capacity(n);
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(EVAL_CHUNK) {
            let mut g = Graph::new();
            let (logits, _) = self.logits(&mut g, &gather(images, chunk)?, BnMode::Eval)?;
            out.extend(g.value(logits).data().chunks(2).map(|r| usize::from(r[1] > r[0])));
        }
        Ok(out)
    }

    pub fn accuracy(&mut self, images: &Tensor, labels: &[usize]) -> Result<f64> {
        let p = self.predict(images)?;
        Ok(p.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len().max(1) as f64)
    }
}

/// Rows `idx` of a batch-major tensor.
pub fn gather(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let n = t.shape().first().copied().unwrap_or(0);
    let per = t.numel() / n.max(1);
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        if i >= n {
            return Err(Error::shape(format!("row {i} of {n}")));
        }
        data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, data)
}
