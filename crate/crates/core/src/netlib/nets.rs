use super::config::ArchConfig;
use super::layers::{ConvBias, ConvBnAct, Dense};
use super::latent::LatentPair;
use crate::datakit::patches::PatchGeometry;
use crate::diffcore::{BnMode, Bound, Graph, ParamGroup, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Shared trunk of stride-2 blocks with two parallel 1x1 heads.
#[derive(Clone, Debug)]
pub struct Encoder {
    blocks: Vec<ConvBnAct>,
    head_u: ConvBias,
    head_k: ConvBias,
    input_side: usize,
    slope: f64,
}

impl Encoder {
    pub fn new(group: &mut ParamGroup, arch: &ArchConfig, rng: &mut Rng) -> Result<Self> {
        let k = arch.enc_kernel;
        let mut blocks = Vec::new();
        let mut c_in = 1;
        for (i, &c) in arch.block_channels.iter().enumerate() {
            blocks.push(ConvBnAct::new(group, &format!("enc.block{i}"), c_in, c, k, 2, k / 2, false, rng)?);
            c_in = c;
        }
        let d = arch.latent_depth;
        let head_u = ConvBias::new(group, "enc.head_u", c_in, d, 1, 1, 0, false, rng)?;
        let head_k = ConvBias::new(group, "enc.head_k", c_in, d, 1, 1, 0, false, rng)?;
        Ok(Encoder {
            blocks,
            head_u,
            head_k,
            input_side: arch.input_side,
            slope: arch.leaky_slope,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        group: &mut ParamGroup,
        x: Var,
        mode: BnMode,
    ) -> Result<LatentPair> {
        let s = self.input_side;
        match *g.shape(x) {
            [_, 1, h, w] if h == s && w == s => {}
            ref other => {
                return Err(Error::shape(format!(
                    "encoder expects [n, 1, {s}, {s}] images, got {other:?}"
                )))
            }
        }
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(g, bound, group, h, mode, self.slope)?;
        }
        let hu = self.head_u.forward(g, bound, h)?;
        let hk = self.head_k.forward(g, bound, h)?;
        Ok(LatentPair { hu, hk })
    }
}

/// Mirror of the encoder: stride-2 4x4 transposed blocks, then a final
/// transposed convolution to one channel with identity output.
#[derive(Clone, Debug)]
pub struct Decoder {
    blocks: Vec<ConvBnAct>,
    out: ConvBias,
    latent_depth: usize,
    latent_side: usize,
    slope: f64,
}

impl Decoder {
    pub fn new(group: &mut ParamGroup, arch: &ArchConfig, rng: &mut Rng) -> Result<Self> {
        let k = arch.dec_kernel;
        let chans = arch.decoder_channels();
        let mut blocks = Vec::new();
        let mut c_in = arch.latent_depth;
        for (i, &c) in chans[..chans.len() - 1].iter().enumerate() {
            blocks.push(ConvBnAct::new(group, &format!("dec.block{i}"), c_in, c, k, 2, 1, true, rng)?);
            c_in = c;
        }
        let out = ConvBias::new(group, "dec.out", c_in, 1, k, 2, 1, true, rng)?;
        Ok(Decoder {
            blocks,
            out,
            latent_depth: arch.latent_depth,
            latent_side: arch.latent_side(),
            slope: arch.leaky_slope,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        group: &mut ParamGroup,
        h: Var,
        mode: BnMode,
    ) -> Result<Var> {
        let (d, s) = (self.latent_depth, self.latent_side);
        match *g.shape(h) {
            [_, c, hh, ww] if c == d && hh == s && ww == s => {}
            ref other => {
                return Err(Error::shape(format!(
                    "decoder expects [n, {d}, {s}, {s}] latents, got {other:?}"
                )))
            }
        }
        let mut x = h;
        for b in &self.blocks {
            x = b.forward(g, bound, group, x, mode, self.slope)?;
        }
        self.out.forward(g, bound, x)
    }
}

/// Discriminator output for a batch of patch pairs.
#[derive(Clone, Debug)]
pub struct DiscOutput {
    /// `[n, 2]`
    pub logits: Var,
    /// Row-wise softmax of the logits, `[n, 2]`.
    pub probs: Tensor,
}

pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.shape().last().copied().unwrap_or(1).max(1);
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - mx).exp());
        let z: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= z);
    }
    Tensor::new(logits.shape().to_vec(), out).expect("same shape")
}

/// Siamese branch network over (lateral, medial-flipped) patches with a
/// global-average-pool tap after every block; all taps of both branches
/// are concatenated (lateral first) into a linear two-way head.
#[derive(Clone, Debug)]
pub struct SiameseGap {
    pub group: ParamGroup,
    blocks: Vec<ConvBnAct>,
    head: Dense,
    slope: f64,
}

impl SiameseGap {
    pub fn new(name: &str, arch: &ArchConfig, rng: &mut Rng) -> Result<Self> {
        let mut group = ParamGroup::new(name);
        let mut blocks = Vec::new();
        let mut c_in = 1;
        for (i, &c) in arch.disc_channels.iter().enumerate() {
            blocks.push(ConvBnAct::new(&mut group, &format!("disc.block{i}"), c_in, c, 3, 2, 1, false, rng)?);
            c_in = c;
        }
        let taps: usize = arch.disc_channels.iter().sum();
        let head = Dense::new(&mut group, "disc.head", 2 * taps, 2, rng)?;
        Ok(SiameseGap {
            group,
            blocks,
            head,
            slope: arch.leaky_slope,
        })
    }

    fn branch(&mut self, g: &mut Graph, bound: &Bound, x: Var, mode: BnMode) -> Result<Vec<Var>> {
        let mut taps = Vec::with_capacity(self.blocks.len());
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(g, bound, &mut self.group, h, mode, self.slope)?;
            taps.push(g.global_avg_pool(h)?);
        }
        Ok(taps)
    }

    /// `pair` is `[n, 2, p, p]`: channel 0 lateral, channel 1 medial.
    pub fn forward(&mut self, g: &mut Graph, bound: &Bound, pair: Var, mode: BnMode) -> Result<DiscOutput> {
        match *g.shape(pair) {
            [_, 2, h, w] if h == w && h > 0 => {}
            ref other => {
                return Err(Error::shape(format!(
                    "discriminator expects [n, 2, p, p] patch pairs, got {other:?}"
                )))
            }
        }
        let lateral = g.select_channel(pair, 0)?;
        let medial = g.select_channel(pair, 1)?;
        let mut taps = self.branch(g, bound, lateral, mode)?;
        taps.extend(self.branch(g, bound, medial, mode)?);
        let feats = g.concat_features(&taps)?;
        let logits = self.head.forward(g, bound, feats)?;
        let probs = softmax_rows(g.value(logits));
        Ok(DiscOutput { logits, probs })
    }

    /// Inference on concrete patch pairs.
    pub fn predict(&mut self, pairs: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.group.bind(&mut g);
        let x = g.constant(pairs.clone());
        Ok(self.forward(&mut g, &bound, x, BnMode::Eval)?.probs)
    }
}

/// `[n, 1, s, s]` images -> `[n, 2, p, p]` (lateral, medial mirrored) on the
/// tape, so gradients reach the images.
pub fn patch_pairs(g: &mut Graph, images: Var) -> Result<Var> {
    let (_, c, h, w) = g.value(images).dims4()?;
    if c != 1 || h != w {
        return Err(Error::shape(format!(
            "patch extraction expects square single-channel images, got {:?}",
            g.shape(images)
        )));
    }
    let geo = PatchGeometry::for_side(h)?;
    let lateral = g.crop(images, geo.top, geo.lateral_left, geo.side, false)?;
    let medial = g.crop(images, geo.top, geo.medial_left, geo.side, true)?;
    g.concat_features(&[lateral, medial])
}
