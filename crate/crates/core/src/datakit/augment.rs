use crate::rng::Rng;

/// Random rotation, brightness and contrast jitter, each applied with
/// probability `p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub p: f64,
    pub max_degrees: f64,
    pub brightness: f64,
    pub contrast: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p: 0.5,
            max_degrees: 10.0,
            brightness: 0.1,
            contrast: 0.1,
        }
    }
}

/// Bilinear rotation of a square image about its centre, clamping at the
/// border.
pub fn rotate(img: &[f64], side: usize, degrees: f64) -> Vec<f64> {
    let (s, c) = degrees.to_radians().sin_cos();
    let mid = (side as f64 - 1.0) / 2.0;
    let at = |y: isize, x: isize| {
        let yy = y.clamp(0, side as isize - 1) as usize;
        let xx = x.clamp(0, side as isize - 1) as usize;
        img[yy * side + xx]
    };
    let mut out = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            let dx = x as f64 - mid;
            let dy = y as f64 - mid;
            let sx = c * dx + s * dy + mid;
            let sy = -s * dx + c * dy + mid;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            out[y * side + x] = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
        }
    }
    out
}

pub fn augment(img: &[f64], side: usize, cfg: &AugmentConfig, rng: &mut Rng) -> Vec<f64> {
    // draw every variate unconditionally so the stream position does not
    // depend on which transforms fire
    let rot = (rng.bernoulli(cfg.p), rng.range(-cfg.max_degrees, cfg.max_degrees));
    let bri = (rng.bernoulli(cfg.p), rng.range(-cfg.brightness, cfg.brightness));
    let con = (rng.bernoulli(cfg.p), rng.range(1.0 - cfg.contrast, 1.0 + cfg.contrast));
    let mut out = if rot.0 {
        rotate(img, side, rot.1)
    } else {
        img.to_vec()
    };
    if con.0 {
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        out.iter_mut().for_each(|v| *v = mean + (*v - mean) * con.1);
    }
    if bri.0 {
        out.iter_mut().for_each(|v| *v += bri.1);
    }
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}
