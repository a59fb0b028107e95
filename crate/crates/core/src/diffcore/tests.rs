use super::*;
use crate::error::Error;
use crate::rng::Rng;

fn rand_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.normal())
}

#[test]
fn conv2d_shape_and_zero_input() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 1, 64, 64]));
    let w = g.constant(rand_tensor(&[5, 1, 3, 3], &mut Rng::new(1)));
    let b = g.constant(Tensor::zeros(&[5]));
    let y = g.conv2d(x, w, Some(b), 2, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 5, 32, 32]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv2d_ones_sum_to_nine() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let w = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.conv2d(x, w, Some(b), 1, 0).unwrap();
    assert_eq!(g.value(y).data(), &[9.0]);
}

#[test]
fn conv2d_channel_mismatch_names_axes() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 8, 8]));
    let w = g.constant(Tensor::zeros(&[4, 3, 3, 3]));
    match g.conv2d(x, w, None, 1, 1) {
        Err(Error::Shape(msg)) => assert!(msg.contains("axis"), "{msg}"),
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn deconv2d_shape_and_identity_kernel() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 3, 32, 32]));
    let w = g.constant(Tensor::zeros(&[3, 7, 4, 4]));
    let y = g.deconv2d(x, w, None, 2, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 7, 64, 64]);

    let mut rng = Rng::new(2);
    let input = rand_tensor(&[2, 3, 5, 5], &mut rng);
    let mut eye = Tensor::zeros(&[3, 3, 1, 1]);
    for c in 0..3 {
        eye.data_mut()[c * 3 + c] = 1.0;
    }
    let x = g.constant(input.clone());
    let w = g.constant(eye);
    let y = g.deconv2d(x, w, None, 1, 0).unwrap();
    assert_eq!(g.value(y), &input);
}

/// <conv(x), y> == <x, deconv(y)> for matching hyper-parameters.
#[test]
fn conv_deconv_adjoint() {
    let mut rng = Rng::new(3);
    // (input side, kernel, stride, pad) where the transposed extent round-trips
    for &(side, k, s, p) in &[(9, 3, 2, 1), (8, 4, 2, 1), (6, 3, 1, 1), (7, 1, 1, 0), (5, 3, 1, 0)] {
        for _ in 0..5 {
            let x = rand_tensor(&[2, 3, side, side], &mut rng);
            let w = rand_tensor(&[4, 3, k, k], &mut rng);
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let wv = g.constant(w.clone());
            let cx = g.conv2d(xv, wv, None, s, p).unwrap();
            let y = rand_tensor(g.shape(cx), &mut rng);
            let yv = g.constant(y.clone());
            // the conv weight [o, i, k, k] read as a deconv weight [in=o, out=i, k, k]
            let dy = g.deconv2d(yv, wv, None, s, p).unwrap();
            assert_eq!(g.shape(dy), x.shape());
            let lhs = g.value(cx).dot(&y);
            let rhs = x.dot(g.value(dy));
            assert!((lhs - rhs).abs() < 1e-9, "side {side} k {k}: {lhs} vs {rhs}");
        }
    }
}

/// deconv forward equals the conv input-gradient with the same kernel.
#[test]
fn deconv_is_conv_input_gradient() {
    let mut rng = Rng::new(4);
    let x = rand_tensor(&[1, 2, 8, 8], &mut rng);
    let w = rand_tensor(&[3, 2, 4, 4], &mut rng);
    let mut g = Graph::new();
    let xv = g.param(x);
    let wv = g.constant(w);
    let y = g.conv2d(xv, wv, None, 2, 1).unwrap();
    let upstream = rand_tensor(g.shape(y), &mut rng);
    let u = g.constant(upstream);
    let prod = g.mul(y, u).unwrap();
    let loss = g.sum(prod);
    g.backward(loss).unwrap();
    let dx = g.grad(xv).unwrap().clone();
    let d = g.deconv2d(u, wv, None, 2, 1).unwrap();
    assert!(g.value(d).max_abs_diff(&dx) < 1e-12);
}

#[test]
fn batchnorm_train_normalises() {
    let mut rng = Rng::new(5);
    let x = Tensor::from_fn(&[4, 3, 5, 5], |i| 3.0 + 2.0 * rng.normal() + (i % 7) as f64);
    let mut g = Graph::new();
    let xv = g.constant(x);
    let gamma = g.constant(Tensor::full(&[3], 1.0));
    let beta = g.constant(Tensor::zeros(&[3]));
    let mut rm = Tensor::zeros(&[3]);
    let mut rv = Tensor::full(&[3], 1.0);
    let y = batchnorm2d(&mut g, xv, gamma, beta, &mut rm, &mut rv, BnMode::Train, BnConfig::default()).unwrap();
    let yd = g.value(y).data();
    for c in 0..3 {
        let vals: Vec<f64> = (0..4).flat_map(|n| yd[(n * 3 + c) * 25..][..25].to_vec()).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(m.abs() < 1e-6);
        assert!((v - 1.0).abs() < 1e-4);
    }
    // running estimates moved 10% towards the batch statistics
    assert!(rm.data().iter().all(|&m| m > 0.3 && m < 1.0));
}

#[test]
fn batchnorm_constant_channel_gives_beta() {
    let mut g = Graph::new();
    let xv = g.constant(Tensor::full(&[2, 2, 3, 3], 4.2));
    let gamma = g.constant(Tensor::full(&[2], 1.7));
    let beta = g.constant(Tensor::new(vec![2], vec![0.3, -0.8]).unwrap());
    let (y, _) = g.batchnorm_train(xv, gamma, beta, 1e-5).unwrap();
    for (i, v) in g.value(y).data().iter().enumerate() {
        let expected = if (i / 9) % 2 == 0 { 0.3 } else { -0.8 };
        assert!((v - expected).abs() < 1e-9);
    }
}

#[test]
fn batchnorm_eval_formula() {
    let mut rng = Rng::new(6);
    let x = rand_tensor(&[2, 2, 3, 3], &mut rng);
    let mu = [0.4, -1.1];
    let var = [2.0, 0.3];
    let gam = [1.5, 0.7];
    let bet = [0.2, -0.1];
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let gv = g.constant(Tensor::new(vec![2], gam.to_vec()).unwrap());
    let bv = g.constant(Tensor::new(vec![2], bet.to_vec()).unwrap());
    let mut rm = Tensor::new(vec![2], mu.to_vec()).unwrap();
    let mut rv = Tensor::new(vec![2], var.to_vec()).unwrap();
    let y = batchnorm2d(&mut g, xv, gv, bv, &mut rm, &mut rv, BnMode::Eval, BnConfig::default()).unwrap();
    for (i, (&xi, &yi)) in x.data().iter().zip(g.value(y).data()).enumerate() {
        let c = (i / 9) % 2;
        let expected = (xi - mu[c]) / (var[c] + 1e-5).sqrt() * gam[c] + bet[c];
        assert!((yi - expected).abs() < 1e-12);
    }
    assert_eq!(rm.data(), &mu);
}

#[test]
fn batchnorm_single_value_per_channel_is_degenerate() {
    let mut g = Graph::new();
    let xv = g.constant(Tensor::zeros(&[1, 2, 1, 1]));
    let gamma = g.constant(Tensor::full(&[2], 1.0));
    let beta = g.constant(Tensor::zeros(&[2]));
    assert!(matches!(
        g.batchnorm_train(xv, gamma, beta, 1e-5),
        Err(Error::DegenerateBatch(_))
    ));
}

#[test]
fn frozen_mode_keeps_running_stats() {
    let mut g = Graph::new();
    let xv = g.constant(Tensor::from_fn(&[2, 1, 2, 2], |i| i as f64));
    let gamma = g.constant(Tensor::full(&[1], 1.0));
    let beta = g.constant(Tensor::zeros(&[1]));
    let mut rm = Tensor::zeros(&[1]);
    let mut rv = Tensor::full(&[1], 1.0);
    batchnorm2d(&mut g, xv, gamma, beta, &mut rm, &mut rv, BnMode::Frozen, BnConfig::default()).unwrap();
    assert_eq!(rm.data(), &[0.0]);
    assert_eq!(rv.data(), &[1.0]);
}

#[test]
fn leaky_relu_values_and_subgradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![3], vec![2.0, -1.0, 0.0]).unwrap());
    let y = g.leaky_relu(x, 0.2);
    assert_eq!(g.value(y).data(), &[2.0, -0.2, 0.0]);
    let loss = g.sum(y);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.2, 1.0]);
}

#[test]
fn global_avg_pool_cases() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = g.global_avg_pool(x).unwrap();
    assert_eq!(g.value(y).data(), &[2.5]);
    let c = g.constant(Tensor::full(&[2, 3, 4, 4], -0.75));
    let y = g.global_avg_pool(c).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == -0.75));
    let single = Tensor::from_fn(&[2, 3, 1, 1], |i| i as f64);
    let s = g.constant(single.clone());
    let y = g.global_avg_pool(s).unwrap();
    assert_eq!(g.value(y).data(), single.data());
    assert_eq!(g.shape(y), &[2, 3]);
}

#[test]
fn backward_of_sum_is_ones() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_fn(&[2, 3, 4], |i| i as f64));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn backward_of_mse_closed_form() {
    let mut rng = Rng::new(7);
    let xt = rand_tensor(&[3, 4], &mut rng);
    let tt = rand_tensor(&[3, 4], &mut rng);
    let mut g = Graph::new();
    let x = g.param(xt.clone());
    let t = g.constant(tt.clone());
    let d = g.sub(x, t).unwrap();
    let sq = g.square(d);
    let loss = g.mean(sq);
    g.backward(loss).unwrap();
    let grad = g.grad(x).unwrap();
    for i in 0..12 {
        let expected = 2.0 * (xt.data()[i] - tt.data()[i]) / 12.0;
        assert!((grad.data()[i] - expected).abs() < 1e-15);
    }
}

#[test]
fn backward_accumulates_over_reuse() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![2], vec![1.5, -2.0]).unwrap());
    let a = g.scale(x, 3.0);
    let b = g.square(x);
    let s = g.add(a, b).unwrap();
    let loss = g.sum(s);
    g.backward(loss).unwrap();
    // d/dx (3x + x^2) = 3 + 2x
    assert_eq!(g.grad(x).unwrap().data(), &[6.0, -1.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(x), Err(Error::Rank(_))));
}

#[test]
fn gradcheck_sum_of_squares() {
    let x = rand_tensor(&[3, 4], &mut Rng::new(8));
    let err = finite_diff_gradcheck(
        |g, x| {
            let sq = g.square(x);
            Ok(g.sum(sq))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-7, "{err}");
}

#[test]
fn gradcheck_conv_leaky_mean() {
    let mut rng = Rng::new(9);
    let x = rand_tensor(&[1, 1, 5, 5], &mut rng);
    let w = rand_tensor(&[2, 1, 3, 3], &mut rng);
    let b = rand_tensor(&[2], &mut rng);
    let err = finite_diff_gradcheck(
        |g, x| {
            let wv = g.constant(w.clone());
            let bv = g.constant(b.clone());
            let y = g.conv2d(x, wv, Some(bv), 1, 1)?;
            let y = g.leaky_relu(y, 0.2);
            Ok(g.mean(y))
        },
        &x,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn gradcheck_batchnorm_mean() {
    let x = rand_tensor(&[2, 2, 3, 3], &mut Rng::new(10));
    let bn_mean = |g: &mut Graph, x: Var| {
        let gamma = g.constant(Tensor::full(&[2], 1.0));
        let beta = g.constant(Tensor::zeros(&[2]));
        let (y, _) = g.batchnorm_train(x, gamma, beta, 1e-5)?;
        Ok(g.mean(y))
    };
    let err = finite_diff_gradcheck(bn_mean, &x, 1e-3).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn gradcheck_rejects_bad_inputs() {
    let x = Tensor::zeros(&[2]);
    assert!(matches!(
        finite_diff_gradcheck(|_, x| Ok(x), &x, 1e-4),
        Err(Error::Rank(_))
    ));
    assert!(matches!(
        finite_diff_gradcheck(|g, x| Ok(g.sum(x)), &x, 1e-1),
        Err(Error::Range(_))
    ));
}

#[test]
fn every_primitive_passes_gradcheck() {
    for (name, err) in primitive_suite(0).unwrap() {
        assert!(err < 1e-4, "{name}: {err}");
    }
}
