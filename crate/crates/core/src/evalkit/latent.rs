//! Probes of the latent codes and the gap-width check of exchanged
//! outputs.

use crate::datakit::synth::gap_range;
use crate::datakit::{Grade, ImageSet, SamplePair};
use crate::error::Result;
use crate::netlib::KeCae;
use crate::trainer::{generate, OutputKind};

use super::gap::{distance_to_range, gap_width_estimate};
use super::svm::probe_train;

const ENCODE_CHUNK: usize = 64;

/// Latent rows of a set of images.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EncodedSet {
    pub hu: Vec<Vec<f64>>,
    pub hk: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Flattened `hU` and `hK` of the images in `set` (eval mode), at most
/// `per_class` per class.
pub fn encode_set(model: &mut KeCae, set: &ImageSet, per_class: Option<usize>) -> Result<EncodedSet> {
    let mut out = EncodedSet::default();
    for grade in Grade::ALL {
        let n = set.class(grade).len().min(per_class.unwrap_or(usize::MAX));
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(ENCODE_CHUNK) {
            let (u, k) = model.encode_images(&set.tensor(grade, chunk)?)?;
            let d = u.numel() / chunk.len();
            out.hu.extend(u.data().chunks(d).map(<[f64]>::to_vec));
            out.hk.extend(k.data().chunks(d).map(<[f64]>::to_vec));
            out.labels.extend(std::iter::repeat_n(grade.index(), chunk.len()));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeScores {
    pub acc_hk: f64,
    pub acc_hu: f64,
}

/// Fits one RBF probe per latent on `train` and scores it on `test`.
pub fn latent_probe(
    model: &mut KeCae,
    train: &ImageSet,
    test: &ImageSet,
    per_class: Option<usize>,
    c: f64,
) -> Result<ProbeScores> {
    let tr = encode_set(model, train, per_class)?;
    let te = encode_set(model, test, None)?;
    Ok(ProbeScores {
        acc_hk: probe_train(&tr.hk, &tr.labels, c, None)?.accuracy(&te.hk, &te.labels),
        acc_hu: probe_train(&tr.hu, &tr.labels, c, None)?.accuracy(&te.hu, &te.labels),
    })
}

/// `n` pairs of held-out images; consecutive pairs advance both classes so
/// every image is used before any repeats.
pub fn held_out_pairs(set: &ImageSet, n: usize) -> Vec<SamplePair> {
    let (a, b) = (set.kl0.len(), set.kl2.len());
    if a == 0 || b == 0 {
        return Vec::new();
    }
    (0..n)
        .map(|i| SamplePair {
            kl0: i % a,
            kl2: (i + i / b) % b,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExchangeScores {
    pub pairs: usize,
    /// Pairs whose `X1'` is strictly nearer the KL-2 gap range than `X̂1`.
    pub closer: usize,
    pub fraction: f64,
    pub mean_gap_recon1: f64,
    pub mean_gap_exchanged1: f64,
}

/// Compares the gap width of each KL-0 reconstruction with that of its
/// key-exchanged counterpart. An undetectable gap counts as width zero.
pub fn exchange_semantics(model: &mut KeCae, set: &ImageSet, pairs: &[SamplePair]) -> Result<ExchangeScores> {
    let side = set.side;
    let (lo, hi) = gap_range(Grade::Kl2);
    let (lo, hi) = (lo * side as f64, hi * side as f64);
    let out = generate(model, set, pairs)?;
    let width = |px: &[f64]| gap_width_estimate(px, side).unwrap_or(0.0);
    let (mut closer, mut sr, mut se) = (0, 0.0, 0.0);
    for quad in out.chunks(4) {
        let pick = |k: OutputKind| &quad.iter().find(|g| g.kind == k).expect("four outputs per pair").pixels;
        let (wr, we) = (width(pick(OutputKind::Recon1)), width(pick(OutputKind::Exchanged1)));
        sr += wr;
        se += we;
        if distance_to_range(we, lo, hi) < distance_to_range(wr, lo, hi) {
            closer += 1;
        }
    }
    let n = pairs.len().max(1) as f64;
    Ok(ExchangeScores {
        pairs: pairs.len(),
        closer,
        fraction: closer as f64 / n,
        mean_gap_recon1: sr / n,
        mean_gap_exchanged1: se / n,
    })
}
