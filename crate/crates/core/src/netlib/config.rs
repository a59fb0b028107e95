use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Full-scale channel schedule on 256x256 inputs.
    Paper,
    /// Laptop-scale model on 64x64 inputs.
    Desk,
    /// Smallest useful model (32x32), for tests and smoke runs.
    Tiny,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            "tiny" => Ok(Preset::Tiny),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected paper|desk|tiny)"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
            Preset::Tiny => "tiny",
        })
    }
}

/// Network shapes shared by the encoder, decoder and discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchConfig {
    pub preset: Preset,
    pub input_side: usize,
    /// Output depth of every stride-2 encoder block.
    pub block_channels: Vec<usize>,
    /// Depth of each latent map (`hU` and `hK`).
    pub latent_depth: usize,
    pub enc_kernel: usize,
    pub dec_kernel: usize,
    pub leaky_slope: f64,
    /// Output depth of every discriminator branch block.
    pub disc_channels: Vec<usize>,
}

impl ArchConfig {
    pub fn paper() -> Self {
        ArchConfig {
            preset: Preset::Paper,
            input_side: 256,
            block_channels: vec![32, 64, 128, 256, 512, 1024, 2048],
            latent_depth: 2048,
            enc_kernel: 3,
            dec_kernel: 4,
            leaky_slope: 0.2,
            disc_channels: vec![32, 64, 128, 256],
        }
    }

    pub fn desk() -> Self {
        ArchConfig {
            preset: Preset::Desk,
            input_side: 64,
            block_channels: vec![16, 32, 64, 64, 128, 128],
            latent_depth: 64,
            enc_kernel: 3,
            dec_kernel: 4,
            leaky_slope: 0.2,
            disc_channels: vec![16, 32, 64, 64],
        }
    }

    pub fn tiny() -> Self {
        ArchConfig {
            preset: Preset::Tiny,
            input_side: 32,
            block_channels: vec![8, 16, 16, 32, 32],
            latent_depth: 16,
            enc_kernel: 3,
            dec_kernel: 4,
            leaky_slope: 0.2,
            disc_channels: vec![8, 16, 16, 32],
        }
    }

    pub fn from_preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => ArchConfig::paper(),
            Preset::Desk => ArchConfig::desk(),
            Preset::Tiny => ArchConfig::tiny(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_channels.is_empty() || self.disc_channels.is_empty() {
            return Err(Error::Config("channel lists must be non-empty".into()));
        }
        let factor = 1usize << self.block_channels.len();
        if self.input_side == 0 || self.input_side % factor != 0 {
            return Err(Error::Config(format!(
                "input side {} not divisible by 2^{} = {factor}",
                self.input_side,
                self.block_channels.len()
            )));
        }
        if self.latent_depth == 0 || self.block_channels.contains(&0) || self.disc_channels.contains(&0) {
            return Err(Error::Config("channel depths must be >= 1".into()));
        }
        if self.enc_kernel % 2 == 0 {
            return Err(Error::Config("encoder kernel must be odd".into()));
        }
        if self.dec_kernel != 4 {
            return Err(Error::Config("decoder blocks use 4x4 stride-2 kernels".into()));
        }
        Ok(())
    }

    /// Spatial extent of `hU` / `hK`.
    pub fn latent_side(&self) -> usize {
        self.input_side >> self.block_channels.len()
    }

    /// Output depth of every decoder deconvolution, ending in the single
    /// image channel.
    pub fn decoder_channels(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.block_channels.iter().rev().skip(1).copied().collect();
        out.push(1);
        out
    }
}
