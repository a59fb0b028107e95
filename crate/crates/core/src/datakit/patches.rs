use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Patch side as a fraction of the image side, in hundredths (128/299).
const PATCH_PERCENT: usize = 43;

/// Placement of the lateral and medial patches inside an `s x s` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGeometry {
    pub side: usize,
    pub top: usize,
    pub lateral_left: usize,
    pub medial_left: usize,
}

impl PatchGeometry {
    pub fn for_side(image_side: usize) -> Result<Self> {
        let side = image_side * PATCH_PERCENT / 100;
        if side < 4 {
            return Err(Error::shape(format!(
                "image side {image_side} too small for patch extraction"
            )));
        }
        Ok(PatchGeometry {
            side,
            top: (image_side - side) / 2,
            lateral_left: 0,
            medial_left: image_side - side,
        })
    }
}

fn crop(img: &[f64], w: usize, top: usize, left: usize, side: usize, flip: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(side * side);
    for r in 0..side {
        let row = &img[(top + r) * w + left..][..side];
        if flip {
            out.extend(row.iter().rev());
        } else {
            out.extend_from_slice(row);
        }
    }
    out
}

/// Mirrors every row of a square patch.
pub fn hflip(patch: &[f64], side: usize) -> Vec<f64> {
    patch
        .chunks(side)
        .flat_map(|row| row.iter().rev().copied())
        .collect()
}

/// Lateral patch at the left edge and horizontally mirrored medial patch at
/// the right edge of a square image, both vertically centred.
pub fn extract_patches(image: &[f64], image_side: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if image.len() != image_side * image_side {
        return Err(Error::shape(format!(
            "image has {} pixels, expected {image_side}x{image_side}",
            image.len()
        )));
    }
    let geo = PatchGeometry::for_side(image_side)?;
    Ok((
        crop(image, image_side, geo.top, geo.lateral_left, geo.side, false),
        crop(image, image_side, geo.top, geo.medial_left, geo.side, true),
    ))
}

/// `[n, 1, s, s]` -> `[n, 2, p, p]` patch pairs.
pub fn patch_pair_tensor(images: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = images.dims4()?;
    if c != 1 || h != w {
        return Err(Error::shape(format!(
            "expected square single-channel images, got {:?}",
            images.shape()
        )));
    }
    let geo = PatchGeometry::for_side(h)?;
    let mut data = Vec::with_capacity(n * 2 * geo.side * geo.side);
    for img in images.data().chunks(h * w) {
        let (l, m) = extract_patches(img, h)?;
        data.extend(l);
        data.extend(m);
    }
    Tensor::new(vec![n, 2, geo.side, geo.side], data)
}
