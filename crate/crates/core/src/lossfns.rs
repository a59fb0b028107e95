//! Terms of the hybrid objective, built on the autodiff tape.
//!
//! Batch conventions: reconstruction error is averaged over every pixel of
//! the batch; cross-entropy over samples; the latent separation term is
//! computed per sample over the flattened latent vector and then averaged
//! over samples.

use crate::datakit::Grade;
use crate::diffcore::{Graph, Var};
use crate::error::{Error, Result};

pub const LDA_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1e-2,
            lambda2: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub j_mse: f64,
    pub j_ce1: f64,
    pub j_ce2: f64,
    pub j_lda: f64,
    pub j_total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.j_mse, self.j_ce1, self.j_ce2, self.j_lda, self.j_total]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn mse(g: &mut Graph, x: Var, xh: Var) -> Result<Var> {
    if g.shape(x) != g.shape(xh) {
        return Err(Error::shape(format!(
            "mse: {:?} vs {:?}",
            g.shape(x),
            g.shape(xh)
        )));
    }
    let d = g.sub(xh, x)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// Sum of the two per-pair mean squared reconstruction errors.
pub fn j_mse(g: &mut Graph, x1: Var, xh1: Var, x2: Var, xh2: Var) -> Result<Var> {
    let a = mse(g, x1, xh1)?;
    let b = mse(g, x2, xh2)?;
    g.add(a, b)
}

pub fn j_ce(g: &mut Graph, logits: Var, labels: &[Grade]) -> Result<Var> {
    let idx: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    g.softmax_cross_entropy(logits, &idx)
}

/// Discriminator loss on real images.
pub fn j_ce1(g: &mut Graph, d1: Var, d2: Var, y1: &[Grade], y2: &[Grade]) -> Result<Var> {
    let a = j_ce(g, d1, y1)?;
    let b = j_ce(g, d2, y2)?;
    g.add(a, b)
}

/// Cross-entropy of the exchanged outputs; `y1`, `y2` are the labels of the
/// original inputs and are swapped here.
pub fn j_ce2(g: &mut Graph, d1p: Var, d2p: Var, y1: &[Grade], y2: &[Grade]) -> Result<Var> {
    let s1: Vec<Grade> = y1.iter().map(|l| l.swapped()).collect();
    let s2: Vec<Grade> = y2.iter().map(|l| l.swapped()).collect();
    j_ce1(g, d1p, d2p, &s1, &s2)
}

/// `(var(hU) + var(hK)) / (|mean(hU) - mean(hK)|^2 + eps)` per sample with
/// population variances, averaged over the batch.
pub fn j_lda(g: &mut Graph, hu: Var, hk: Var, eps: f64) -> Result<Var> {
    if g.shape(hu) != g.shape(hk) {
        return Err(Error::shape(format!(
            "lda: {:?} vs {:?}",
            g.shape(hu),
            g.shape(hk)
        )));
    }
    let (mu_u, var_u) = row_moments(g, hu)?;
    let (mu_k, var_k) = row_moments(g, hk)?;
    let num = g.add(var_u, var_k)?;
    let gap = g.sub(mu_u, mu_k)?;
    let gap2 = g.square(gap);
    let den = g.add_scalar(gap2, eps);
    let ratio = g.div(num, den)?;
    Ok(g.mean(ratio))
}

fn row_moments(g: &mut Graph, h: Var) -> Result<(Var, Var)> {
    let mu = g.row_mean(h)?;
    let c = g.sub_row(h, mu)?;
    let sq = g.square(c);
    let var = g.row_mean(sq)?;
    Ok((mu, var))
}

pub fn j_total(j_mse: f64, j_ce1: f64, j_ce2: f64, j_lda: f64, w: &LossWeights) -> LossReport {
    LossReport {
        j_mse,
        j_ce1,
        j_ce2,
        j_lda,
        j_total: j_mse + j_ce1 + w.lambda1 * j_ce2 + w.lambda2 * j_lda,
    }
}
