use hsi_nn::loss::argmax_rows;
use hsi_nn::{
    load_state, param_count, softmax_cross_entropy, state_dict, zero_grad, Adam, BatchNorm, Conv, ConvGeom, Layer,
    Linear, Mode, Pool, PoolKind, Sequential, Sgd, WavelengthConv, WavelengthConvConfig,
};
use ndarray::{array, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], seed: u64) -> ArrayD<f64> {
    let mut r = rng(seed);
    ArrayD::from_shape_fn(IxDyn(shape), |_| r.random_range(-1.0..1.0))
}

#[test]
fn conv2d_matches_direct_summation() {
    let (n, c, o, h, w, k, s, p) = (2, 3, 2, 7, 6, 3, 2, 1);
    let mut conv = Conv::<f64>::new(2, c, o, ConvGeom::cubic(2, k, s, p), true, &mut rng(1));
    let x = random(&[n, c, h, w], 2);
    let (y, _) = conv.forward(x.clone(), Mode::Eval).unwrap();
    let (ho, wo) = ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1);
    assert_eq!(y.shape(), [n, o, ho, wo]);
    let wt = &conv.weight.value;
    let b = &conv.bias.as_ref().unwrap().value;
    for bi in 0..n {
        for oc in 0..o {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b[oc];
                    for ci in 0..c {
                        for a in 0..k {
                            for e in 0..k {
                                let (yy, xx) = ((i * s + a) as isize - p as isize, (j * s + e) as isize - p as isize);
                                if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                                    acc += wt[[oc, ci, a, e]] * x[[bi, ci, yy as usize, xx as usize]];
                                }
                            }
                        }
                    }
                    assert!((acc - y[[bi, oc, i, j]]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn conv3d_matches_direct_summation() {
    let mut conv = Conv::<f64>::new(3, 1, 2, ConvGeom::cubic(3, 2, 1, 0), false, &mut rng(3));
    let x = random(&[1, 1, 4, 3, 3], 4);
    let (y, _) = conv.forward(x.clone(), Mode::Eval).unwrap();
    assert_eq!(y.shape(), [1, 2, 3, 2, 2]);
    let wt = &conv.weight.value;
    for oc in 0..2 {
        for d in 0..3 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut acc = 0.0;
                    for a in 0..2 {
                        for b in 0..2 {
                            for e in 0..2 {
                                acc += wt[[oc, 0, a, b, e]] * x[[0, 0, d + a, i + b, j + e]];
                            }
                        }
                    }
                    assert!((acc - y[[0, oc, d, i, j]]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn conv_backward_is_independent_of_thread_count() {
    let x = random(&[9, 2, 6, 6], 5);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut conv = Conv::<f64>::new(2, 2, 3, ConvGeom::cubic(2, 3, 1, 1), true, &mut rng(6));
            let (y, c) = conv.forward(x.clone(), Mode::Train).unwrap();
            let dx = conv.backward(c, y.mapv(|v| v.sin())).unwrap();
            (dx, conv.weight.grad.clone().unwrap())
        })
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn pooling_values() {
    let x = ArrayD::from_shape_vec(IxDyn(&[1, 1, 2, 4]), vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, -1.0, 7.0]).unwrap();
    let (m, _) = Pool::new(PoolKind::Max, 2, 2, 2, 0).forward(x.clone(), Mode::Eval).unwrap();
    assert_eq!(m.into_raw_vec_and_offset().0, vec![5.0, 7.0]);
    let (a, _) = Pool::new(PoolKind::Avg, 2, 2, 2, 0).forward(x, Mode::Eval).unwrap();
    assert_eq!(a.into_raw_vec_and_offset().0, vec![13.0 / 4.0, 8.0 / 4.0]);
}

#[test]
fn batch_norm_running_statistics() {
    let mut bn = BatchNorm::<f64>::new(1);
    let x = ArrayD::from_shape_vec(IxDyn(&[4, 1]), vec![1.0, 2.0, 3.0, 6.0]).unwrap();
    let (y, _) = bn.forward(x.clone(), Mode::Train).unwrap();
    let mean = 3.0;
    let var_b: f64 = [4.0, 1.0, 0.0, 9.0].iter().sum::<f64>() / 4.0;
    let var_u: f64 = [4.0, 1.0, 0.0, 9.0].iter().sum::<f64>() / 3.0;
    assert!((y[[0, 0]] - (1.0 - mean) / (var_b + 1e-5).sqrt()).abs() < 1e-12);
    assert!((bn.running_mean[0] - 0.1 * mean).abs() < 1e-12);
    assert!((bn.running_var[0] - (0.9 + 0.1 * var_u)).abs() < 1e-12);
    let (e, _) = bn.forward(x, Mode::Eval).unwrap();
    assert!((e[[3, 0]] - (6.0 - 0.3) / (bn.running_var[0] + 1e-5).sqrt()).abs() < 1e-12);
}

#[test]
fn cross_entropy_value_and_gradient() {
    let logits = array![[1.0, 2.0, 0.5], [0.0, 0.0, 0.0]];
    let (l, g) = softmax_cross_entropy(logits.view(), &[1, 2]).unwrap();
    let z: f64 = [1.0f64, 2.0, 0.5].iter().map(|v| v.exp()).sum();
    assert!((l[0] - (z.ln() - 2.0)).abs() < 1e-12);
    assert!((l[1] - 3f64.ln()).abs() < 1e-12);
    for i in 0..2 {
        for j in 0..3 {
            let mut p = logits.clone();
            p[[i, j]] += 1e-6;
            let mut m = logits.clone();
            m[[i, j]] -= 1e-6;
            let fp: f64 = softmax_cross_entropy(p.view(), &[1, 2]).unwrap().0.iter().sum();
            let fm: f64 = softmax_cross_entropy(m.view(), &[1, 2]).unwrap().0.iter().sum();
            assert!((g[[i, j]] - (fp - fm) / 2e-6).abs() < 1e-8);
        }
    }
    assert!(softmax_cross_entropy(logits.view(), &[3, 0]).is_err());
    assert_eq!(argmax_rows(logits.view()), vec![1, 0]);
}

#[test]
fn adam_matches_hand_computed_steps() {
    let mut lin = Linear::<f64>::new(1, 1, &mut rng(7));
    lin.weight.value.fill(1.0);
    lin.bias.value.fill(0.0);
    let mut opt = Adam::new(0.1);
    let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 1.0f64);
    for t in 1..=3 {
        zero_grad(&mut lin);
        let g = 2.0 * t as f64;
        lin.weight.grad = Some(ArrayD::from_elem(IxDyn(&[1, 1]), g));
        assert_eq!(opt.step(&mut lin), 1, "bias has no gradient and is skipped");
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        w -= 0.1 * mh / (vh.sqrt() + 1e-8);
        assert!((lin.weight.value[[0, 0]] - w).abs() < 1e-12);
    }
    assert_eq!(lin.bias.value[0], 0.0);
}

#[test]
fn sgd_momentum_matches_hand_computed_steps() {
    let mut lin = Linear::<f64>::new(1, 1, &mut rng(7));
    lin.weight.value.fill(1.0);
    let mut opt = Sgd::new(0.1, 0.9);
    let (mut v, mut w) = (0.0f64, 1.0f64);
    for t in 1..=3 {
        zero_grad(&mut lin);
        let g = t as f64;
        lin.weight.grad = Some(ArrayD::from_elem(IxDyn(&[1, 1]), g));
        assert_eq!(opt.step(&mut lin), 1);
        v = 0.9 * v + g;
        w -= 0.1 * v;
        assert!((lin.weight.value[[0, 0]] - w).abs() < 1e-12);
    }
}

#[test]
fn state_round_trip_and_param_count() {
    let mut r = rng(8);
    let mut net = Sequential::<f32>::new()
        .with(Conv::new(2, 3, 4, ConvGeom::cubic(2, 3, 1, 1), true, &mut r))
        .with(BatchNorm::new(4))
        .with(Linear::new(4, 2, &mut r));
    assert_eq!(param_count(&net), 4 * 3 * 9 + 4 + 4 + 4 + 8 + 2);
    let saved = state_dict(&net);
    assert!(saved.iter().any(|(n, _)| n == "1.running_var"));
    let mut other = Sequential::<f32>::new()
        .with(Conv::new(2, 3, 4, ConvGeom::cubic(2, 3, 1, 1), true, &mut rng(9)))
        .with(BatchNorm::new(4))
        .with(Linear::new(4, 2, &mut rng(9)));
    load_state(&mut other, &saved).unwrap();
    assert_eq!(state_dict(&other), saved);
    let mut short = saved.clone();
    short.pop();
    assert!(load_state(&mut net, &short).is_err());
}

fn closed_form(layer: &WavelengthConv<f64>, positions: &[f64]) -> Vec<f64> {
    let cfg = layer.config();
    let (nf, ng, k) = (cfg.filters, cfg.components, cfg.kernel);
    let mut out = Vec::new();
    for f in 0..nf {
        for &p in positions {
            for i in 0..k {
                for j in 0..k {
                    let mut acc = 0.0;
                    for g in 0..ng {
                        let mu = layer.mu.value[[f, g]];
                        let s = layer.sigma.value[[f, g]].max(cfg.sigma_min);
                        acc += (-(p - mu).powi(2) / (2.0 * s * s)).exp() * layer.taps.value[[f, g, i, j]];
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

#[test]
fn wavelength_kernel_closed_form_and_shared_wavelengths() {
    let cfg = WavelengthConvConfig::new(4, 3, (400.0, 1000.0));
    let layer = WavelengthConv::<f64>::new(cfg, &mut rng(10)).unwrap();
    let coarse: Vec<f64> = (0..7).map(|i| 400.0 + 100.0 * i as f64).collect();
    let fine: Vec<f64> = (0..25).map(|i| 400.0 + 25.0 * i as f64).collect();
    let kc = layer.weights_for(&coarse).unwrap();
    let kf = layer.weights_for(&fine).unwrap();
    assert_eq!(kc.shape(), [4, 7, 3, 3]);
    assert_eq!(kf.shape(), [4, 25, 3, 3]);
    let oracle: Vec<f64> = closed_form(&layer, &coarse.iter().map(|w| (w - 400.0) / 600.0).collect::<Vec<_>>());
    for (a, b) in kc.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
    for (ci, w) in coarse.iter().enumerate() {
        let fi = fine.iter().position(|v| (v - w).abs() < 1e-9).unwrap();
        for f in 0..4 {
            for i in 0..3 {
                for j in 0..3 {
                    assert!((kc[[f, ci, i, j]] - kf[[f, fi, i, j]]).abs() < 1e-6);
                }
            }
        }
    }
}

#[test]
fn wavelength_kernel_flat_for_wide_gaussians() {
    let mut cfg = WavelengthConvConfig::new(2, 3, (400.0, 1000.0));
    cfg.components = 1;
    let mut layer = WavelengthConv::<f64>::new(cfg, &mut rng(11)).unwrap();
    layer.sigma.value.fill(100.0);
    let grid: Vec<f64> = (0..50).map(|i| 400.0 + 12.0 * i as f64).collect();
    let k = layer.weights_for(&grid).unwrap();
    for f in 0..2 {
        for i in 0..3 {
            for j in 0..3 {
                let col: Vec<f64> = (0..50).map(|b| k[[f, b, i, j]]).collect();
                let hi = col.iter().cloned().fold(f64::MIN, f64::max);
                let lo = col.iter().cloned().fold(f64::MAX, f64::min);
                let scale = hi.abs().max(lo.abs());
                assert!((hi - lo) / scale < 1e-3);
            }
        }
    }
}

#[test]
fn wavelength_conv_rejects_out_of_range_grid_and_accepts_any_band_count() {
    let cfg = WavelengthConvConfig::new(4, 3, (400.0, 1000.0));
    let mut layer = WavelengthConv::<f32>::new(cfg, &mut rng(12)).unwrap();
    let err = layer.set_grid(&[390.0, 500.0, 1010.0]).unwrap_err().to_string();
    assert!(err.contains("390") && err.contains("1010"), "{err}");
    for bands in [224usize, 249] {
        let grid: Vec<f64> = (0..bands).map(|i| 400.0 + 600.0 * i as f64 / (bands - 1) as f64).collect();
        layer.set_grid(&grid).unwrap();
        let x = ArrayD::<f32>::zeros(IxDyn(&[1, bands, 5, 5]));
        let (y, _) = layer.forward(x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), [1, 4, 5, 5]);
    }
}

#[test]
fn sigma_gradient_vanishes_when_clamped() {
    let mut cfg = WavelengthConvConfig::new(1, 1, (0.0, 1.0));
    cfg.components = 1;
    let mut layer = WavelengthConv::<f64>::new(cfg, &mut rng(13)).unwrap();
    layer.sigma.value.fill(0.001);
    layer.set_grid(&[0.2, 0.5, 0.51]).unwrap();
    let x = random(&[2, 3, 2, 2], 14);
    let (y, c) = layer.forward(x, Mode::Train).unwrap();
    layer.backward(c, y.mapv(|_| 1.0)).unwrap();
    assert_eq!(layer.sigma.grad.as_ref().unwrap()[[0, 0]], 0.0);
}
