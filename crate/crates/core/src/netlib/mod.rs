//! Encoder, decoder and discriminator of the key-exchange auto-encoder,
//! plus the latent split/fuse/exchange operations.

mod config;
mod latent;
pub(crate) mod layers;
mod nets;

pub use config::{ArchConfig, Preset};
pub use latent::{exchange, fuse, LatentPair};
pub use nets::{patch_pairs, softmax_rows, Decoder, DiscOutput, Encoder, SiameseGap};

use crate::diffcore::{BnMode, Bound, Graph, ParamGroup, Tensor, Var};
use crate::error::Result;
use crate::rng::Rng;

const INIT_STREAM: u64 = 0x1417;

/// Encoder + decoder (one parameter group) and the discriminator (another).
#[derive(Clone, Debug)]
pub struct KeCae {
    pub arch: ArchConfig,
    pub generator: ParamGroup,
    pub discriminator: SiameseGap,
    encoder: Encoder,
    decoder: Decoder,
}

/// Eval-mode outputs for a batch of input pairs.
#[derive(Clone, Debug)]
pub struct PairOutputs {
    pub recon1: Tensor,
    pub recon2: Tensor,
    pub exchanged1: Tensor,
    pub exchanged2: Tensor,
}

impl KeCae {
    pub fn new(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut generator = ParamGroup::new("generator");
        let mut rng = Rng::stream(seed, &[INIT_STREAM, 0]);
        let encoder = Encoder::new(&mut generator, arch, &mut rng)?;
        let decoder = Decoder::new(&mut generator, arch, &mut rng)?;
        let mut drng = Rng::stream(seed, &[INIT_STREAM, 1]);
        let discriminator = SiameseGap::new("discriminator", arch, &mut drng)?;
        Ok(KeCae {
            arch: arch.clone(),
            generator,
            discriminator,
            encoder,
            decoder,
        })
    }

    pub fn encode(&mut self, g: &mut Graph, bound: &Bound, x: Var, mode: BnMode) -> Result<LatentPair> {
        self.encoder.forward(g, bound, &mut self.generator, x, mode)
    }

    pub fn decode(&mut self, g: &mut Graph, bound: &Bound, h: Var, mode: BnMode) -> Result<Var> {
        self.decoder.forward(g, bound, &mut self.generator, h, mode)
    }

    /// `(hU, hK)` of concrete images in eval mode.
    pub fn encode_images(&mut self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let bound = self.generator.bind(&mut g);
        let xv = g.constant(x.clone());
        let p = self.encode(&mut g, &bound, xv, BnMode::Eval)?;
        Ok((g.value(p.hu).clone(), g.value(p.hk).clone()))
    }

    /// Reconstructions and key-exchanged outputs of `(x1[i], x2[i])` pairs,
    /// in eval mode.
    pub fn run_pairs(&mut self, x1: &Tensor, x2: &Tensor) -> Result<PairOutputs> {
        let n = x1.shape().first().copied().unwrap_or(0);
        let mut g = Graph::new();
        let bound = self.generator.bind(&mut g);
        let a = g.constant(x1.clone());
        let b = g.constant(x2.clone());
        let both = g.concat_batch(&[a, b])?;
        let lat = self.encode(&mut g, &bound, both, BnMode::Eval)?;
        let p1 = lat.slice(&mut g, 0, n)?;
        let p2 = lat.slice(&mut g, n, n)?;
        let h1 = fuse(&mut g, &p1)?;
        let h2 = fuse(&mut g, &p2)?;
        let (e1, e2) = exchange(&mut g, &p1, &p2)?;
        let all = g.concat_batch(&[h1, h2, e1, e2])?;
        let out = self.decode(&mut g, &bound, all, BnMode::Eval)?;
        let t = g.value(out);
        Ok(PairOutputs {
            recon1: t.slice_batch(0, n)?,
            recon2: t.slice_batch(n, n)?,
            exchanged1: t.slice_batch(2 * n, n)?,
            exchanged2: t.slice_batch(3 * n, n)?,
        })
    }
}
