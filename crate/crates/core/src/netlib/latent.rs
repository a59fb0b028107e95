use crate::diffcore::{Graph, Var};
use crate::error::{Error, Result};

/// Unrelated and key feature maps of one batch of images.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatentPair {
    pub hu: Var,
    pub hk: Var,
}

impl LatentPair {
    /// Samples `start..start + len` of both maps.
    pub fn slice(&self, g: &mut Graph, start: usize, len: usize) -> Result<LatentPair> {
        Ok(LatentPair {
            hu: g.slice_batch(self.hu, start, len)?,
            hk: g.slice_batch(self.hk, start, len)?,
        })
    }
}

/// Element-wise sum `hU + hK`.
pub fn fuse(g: &mut Graph, p: &LatentPair) -> Result<Var> {
    g.add(p.hu, p.hk)
}

/// Swaps the key maps: returns `(h1U + h2K, h2U + h1K)`.
pub fn exchange(g: &mut Graph, p1: &LatentPair, p2: &LatentPair) -> Result<(Var, Var)> {
    let s = g.shape(p1.hu).to_vec();
    for v in [p1.hk, p2.hu, p2.hk] {
        if g.shape(v) != s.as_slice() {
            return Err(Error::shape(format!(
                "exchange needs four equal-shape maps, got {:?} and {:?}",
                s,
                g.shape(v)
            )));
        }
    }
    let h1 = g.add(p1.hu, p2.hk)?;
    let h2 = g.add(p2.hu, p1.hk)?;
    Ok((h1, h2))
}
