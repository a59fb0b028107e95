//! Synthetic data, splitting, pairing, patches and image I/O.

pub mod augment;
mod dataset;
mod grade;
pub mod pairs;
pub mod patches;
pub mod pgm;
pub mod split;
pub mod synth;

pub use augment::{augment, AugmentConfig};
pub use dataset::{generate_pool, Dataset, ImageSet, Record, ATTRIBUTE_HEADER};
pub(crate) use dataset::csv_err;
pub use grade::Grade;
pub use pairs::{make_pairs, read_pairs, sample_pairs, write_pairs, PairIndex, SamplePair};
pub use patches::{extract_patches, patch_pair_tensor, PatchGeometry};
pub use pgm::{read_pgm, write_pgm, GrayImage};
pub use split::{split_oversample, ClassSplit};
pub use synth::{synth_generate, SynthImage, SynthParams};
