use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn eval_scalar<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let out = f(&mut g, xv)?;
    g.value(out).item()
}

/// Compares the tape gradient of scalar `f` at `x` against central
/// differences with step `h`, returning the largest relative error
/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn finite_diff_gradcheck<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&h) {
        return Err(Error::Range(format!("gradcheck step {h} outside [1e-6, 1e-3]")));
    }
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let out = f(&mut g, xv)?;
    if g.value(out).numel() != 1 {
        return Err(Error::Rank(format!(
            "gradcheck needs a scalar function, got shape {:?}",
            g.shape(out)
        )));
    }
    g.backward(out)?;
    let analytic = g
        .grad(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn randn(shape: &[usize], rng: &mut crate::rng::Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.normal())
}

/// Weighted sum `sum(w * y)` with a fixed random `w`, so that no gradient
/// is identically zero.
fn probe(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = crate::rng::Rng::new(seed);
    let w = g.constant(randn(g.shape(y), &mut rng));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// Finite-difference check of every layer primitive at small shapes, with
/// respect to each differentiable input in turn.
pub fn primitive_suite(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    use crate::rng::Rng;
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    let h = 1e-6;

    let x = randn(&[2, 2, 5, 5], &mut rng);
    let w = randn(&[3, 2, 3, 3], &mut rng);
    let b = randn(&[3], &mut rng);
    let (wc, bc) = (w.clone(), b.clone());
    out.push((
        "conv2d/input",
        finite_diff_gradcheck(
            |g, x| {
                let (w, b) = (g.constant(wc.clone()), g.constant(bc.clone()));
                let y = g.conv2d(x, w, Some(b), 2, 1)?;
                probe(g, y, 1)
            },
            &x,
            h,
        )?,
    ));
    let (xc, bc) = (x.clone(), b.clone());
    out.push((
        "conv2d/weight",
        finite_diff_gradcheck(
            |g, w| {
                let (x, b) = (g.constant(xc.clone()), g.constant(bc.clone()));
                let y = g.conv2d(x, w, Some(b), 2, 1)?;
                probe(g, y, 1)
            },
            &w,
            h,
        )?,
    ));
    let (xc, wc) = (x.clone(), w.clone());
    out.push((
        "conv2d/bias",
        finite_diff_gradcheck(
            |g, b| {
                let (x, w) = (g.constant(xc.clone()), g.constant(wc.clone()));
                let y = g.conv2d(x, w, Some(b), 2, 1)?;
                probe(g, y, 1)
            },
            &b,
            h,
        )?,
    ));

    let x = randn(&[2, 3, 3, 3], &mut rng);
    let w = randn(&[3, 2, 4, 4], &mut rng);
    let b = randn(&[2], &mut rng);
    let (wc, bc) = (w.clone(), b.clone());
    out.push((
        "deconv2d/input",
        finite_diff_gradcheck(
            |g, x| {
                let (w, b) = (g.constant(wc.clone()), g.constant(bc.clone()));
                let y = g.deconv2d(x, w, Some(b), 2, 1)?;
                probe(g, y, 2)
            },
            &x,
            h,
        )?,
    ));
    let (xc, bc) = (x.clone(), b.clone());
    out.push((
        "deconv2d/weight",
        finite_diff_gradcheck(
            |g, w| {
                let (x, b) = (g.constant(xc.clone()), g.constant(bc.clone()));
                let y = g.deconv2d(x, w, Some(b), 2, 1)?;
                probe(g, y, 2)
            },
            &w,
            h,
        )?,
    ));
    let (xc, wc) = (x.clone(), w.clone());
    out.push((
        "deconv2d/bias",
        finite_diff_gradcheck(
            |g, b| {
                let (x, w) = (g.constant(xc.clone()), g.constant(wc.clone()));
                let y = g.deconv2d(x, w, Some(b), 2, 1)?;
                probe(g, y, 2)
            },
            &b,
            h,
        )?,
    ));

    let x = randn(&[2, 2, 3, 3], &mut rng);
    let gamma = Tensor::from_fn(&[2], |_| 0.5 + rng.uniform());
    let beta = randn(&[2], &mut rng);
    let (gc, bc) = (gamma.clone(), beta.clone());
    out.push((
        "batchnorm_train/input",
        finite_diff_gradcheck(
            |g, x| {
                let (ga, be) = (g.constant(gc.clone()), g.constant(bc.clone()));
                let (y, _) = g.batchnorm_train(x, ga, be, 1e-5)?;
                probe(g, y, 3)
            },
            &x,
            h,
        )?,
    ));
    let (xc, bc) = (x.clone(), beta.clone());
    out.push((
        "batchnorm_train/gamma",
        finite_diff_gradcheck(
            |g, ga| {
                let (x, be) = (g.constant(xc.clone()), g.constant(bc.clone()));
                let (y, _) = g.batchnorm_train(x, ga, be, 1e-5)?;
                probe(g, y, 3)
            },
            &gamma,
            h,
        )?,
    ));
    let (xc, gc) = (x.clone(), gamma.clone());
    out.push((
        "batchnorm_train/beta",
        finite_diff_gradcheck(
            |g, be| {
                let (x, ga) = (g.constant(xc.clone()), g.constant(gc.clone()));
                let (y, _) = g.batchnorm_train(x, ga, be, 1e-5)?;
                probe(g, y, 3)
            },
            &beta,
            h,
        )?,
    ));
    let (gc, bc) = (gamma.clone(), beta.clone());
    out.push((
        "batchnorm_eval/input",
        finite_diff_gradcheck(
            |g, x| {
                let (ga, be) = (g.constant(gc.clone()), g.constant(bc.clone()));
                let y = g.batchnorm_eval(x, ga, be, &[0.3, -0.2], &[1.4, 0.6], 1e-5)?;
                probe(g, y, 4)
            },
            &x,
            h,
        )?,
    ));

    // keep inputs away from the kink
    let x = Tensor::from_fn(&[2, 3, 4], |_| {
        let v = rng.normal();
        if v.abs() < 0.05 { v + 0.1 } else { v }
    });
    out.push((
        "leaky_relu",
        finite_diff_gradcheck(|g, x| {
            let y = g.leaky_relu(x, 0.2);
            probe(g, y, 5)
        }, &x, h)?,
    ));

    let x = randn(&[2, 3, 3, 2], &mut rng);
    out.push((
        "global_avg_pool",
        finite_diff_gradcheck(|g, x| {
            let y = g.global_avg_pool(x)?;
            probe(g, y, 6)
        }, &x, h)?,
    ));

    let x = randn(&[3, 5], &mut rng);
    let w = randn(&[2, 5], &mut rng);
    let b = randn(&[2], &mut rng);
    let (wc, bc) = (w.clone(), b.clone());
    out.push((
        "linear/input",
        finite_diff_gradcheck(
            |g, x| {
                let (w, b) = (g.constant(wc.clone()), g.constant(bc.clone()));
                let y = g.linear(x, w, Some(b))?;
                probe(g, y, 7)
            },
            &x,
            h,
        )?,
    ));
    let (xc, bc) = (x.clone(), b.clone());
    out.push((
        "linear/weight",
        finite_diff_gradcheck(
            |g, w| {
                let (x, b) = (g.constant(xc.clone()), g.constant(bc.clone()));
                let y = g.linear(x, w, Some(b))?;
                probe(g, y, 7)
            },
            &w,
            h,
        )?,
    ));

    let logits = randn(&[4, 2], &mut rng);
    out.push((
        "softmax_cross_entropy",
        finite_diff_gradcheck(|g, l| g.softmax_cross_entropy(l, &[0, 1, 1, 0]), &logits, h)?,
    ));

    let x = randn(&[2, 2, 6, 6], &mut rng);
    out.push((
        "crop_flip",
        finite_diff_gradcheck(|g, x| {
            let a = g.crop(x, 1, 3, 3, true)?;
            let b = g.crop(x, 1, 0, 3, false)?;
            let c = g.concat_features(&[a, b])?;
            probe(g, c, 8)
        }, &x, h)?,
    ));
    out.push((
        "select_slice_concat",
        finite_diff_gradcheck(|g, x| {
            let a = g.select_channel(x, 1)?;
            let s = g.slice_batch(a, 1, 1)?;
            let t = g.slice_batch(a, 0, 1)?;
            let c = g.concat_batch(&[s, t, s])?;
            probe(g, c, 9)
        }, &x, h)?,
    ));

    let x = randn(&[3, 4], &mut rng);
    out.push((
        "row_moments_ratio",
        finite_diff_gradcheck(|g, x| {
            let m = g.row_mean(x)?;
            let c = g.sub_row(x, m)?;
            let sq = g.square(c);
            let v = g.row_mean(sq)?;
            let m2 = g.square(m);
            let den = g.add_scalar(m2, 0.5);
            let r = g.div(v, den)?;
            probe(g, r, 10)
        }, &x, h)?,
    ));

    Ok(out)
}
