use hsi_core::cube::PreprocessSpec;
use hsi_models::rgb::{adapt_rgb_kernel, load_rgb_backbone, rgb_channel};
use hsi_models::{BuildParams, Checkpoint, ModelError, ModelRegistry, ModelSpec, StemKind};
use hsi_nn::{softmax_cross_entropy, Adam, Layer, Mode, Tensor};
use ndarray::{Array4, ArrayD, Ix2, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RANGE: (f64, f64) = (400.0, 2500.0);

fn params(bands: usize, patch: usize) -> BuildParams {
    BuildParams::new(bands, patch).with_range(RANGE.0, RANGE.1)
}

fn grid(bands: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..bands).map(|i| lo + (hi - lo) * i as f64 / (bands - 1) as f64).collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn input(shape: &[usize], seed: u64) -> ArrayD<f32> {
    let mut r = rng(seed);
    ArrayD::from_shape_fn(IxDyn(shape), |_| r.random_range(-1.0..1.0))
}

fn with_head(name: &str, bands: usize, patch: usize, classes: usize) -> hsi_models::BackboneHeadModel {
    let reg = ModelRegistry::with_builtins();
    let mut m = reg.build(name, &params(bands, patch), 7).unwrap();
    let g = grid(bands, 450.0, 2400.0);
    m.attach_head("a", classes, Some(&g), &mut rng(1)).unwrap();
    m
}

/// Per-model totals for 224 bands, 63x63 patches and 3 classes.
#[test]
fn parameter_counts_match_reference_sizes() {
    let targets = [
        ("mlp", 29_000.0),
        ("rnn", 27_000.0),
        ("1d_cnn", 73_000.0),
        ("deephs_net", 32_800.0),
        ("deephs_net_hyve", 17_000.0),
        ("deephs_net_hyve_large", 232_000.0),
        ("resnet18", 11_870_000.0),
        ("resnet18_hyve", 11_180_000.0),
        ("2d_cnn_spectral", 7_380_000.0),
        ("resnet152", 58_840_000.0),
        ("resnet152_hyve", 58_150_000.0),
    ];
    for (name, want) in targets {
        let n = with_head(name, 224, 63, 3).param_count() as f64;
        println!("{name}: {n}");
        assert!((n - want).abs() <= 0.25 * want, "{name}: {n} parameters, expected about {want}");
    }
    let n = with_head("2d_cnn", 40, 63, 3).param_count() as f64;
    assert!((n - 7_380_000.0).abs() <= 0.25 * 7_380_000.0, "2d_cnn: {n}");
    let n = with_head("3d_cnn", 40, 63, 3).param_count() as f64;
    assert!((n - 29_030_000.0).abs() <= 0.25 * 29_030_000.0, "3d_cnn: {n}");
}

/// Closed-form count for the small convolutional backbone.
#[test]
fn deephs_net_count_matches_closed_form() {
    let (b, c) = (224, 3);
    let conv = |cin: usize, cout: usize| cin * cout * 9 + cout;
    let expected = conv(b, 8) + 2 * 8 + conv(8, 32) + 2 * 32 + conv(32, 48) + 2 * 48 + 2 * 48 + 48 * c + c;
    assert_eq!(with_head("deephs_net", b, 63, c).param_count(), expected);
}

#[test]
fn spatial_models_reject_single_pixels_and_wrong_channel_counts() {
    let reg = ModelRegistry::with_builtins();
    assert!(reg.build("3d_cnn", &params(40, 1), 0).is_err());
    assert!(reg.build("2d_cnn", &params(40, 1), 0).is_err());
    assert!(matches!(reg.build("2d_cnn", &params(224, 63), 0), Err(ModelError::Incompatible(_))));
    assert!(matches!(reg.build("2d_cnn_spatial", &params(224, 63), 0), Err(ModelError::Incompatible(_))));
    let m = reg.build("2d_cnn_spatial", &params(1, 63), 0).unwrap();
    assert_eq!(m.input_shape(), vec![1, 63, 63]);
    assert!(matches!(reg.build("deephs_net_hyve", &BuildParams::new(224, 63), 0), Err(ModelError::Incompatible(_))));
}

#[test]
fn spectral_models_read_one_pixel() {
    let reg = ModelRegistry::with_builtins();
    for name in ["mlp", "rnn", "1d_cnn", "2d_cnn_spectral"] {
        assert!(!reg.spec(name).unwrap().spatial_context);
        assert_eq!(reg.build(name, &params(30, 15), 0).unwrap().input_shape(), vec![30, 1, 1]);
    }
}

/// Moving any non-centre pixel leaves spectral-only outputs unchanged.
#[test]
fn spectral_models_ignore_neighbours() {
    for name in ["mlp", "rnn", "1d_cnn", "2d_cnn_spectral"] {
        let mut m = with_head(name, 30, 15, 4);
        let x = input(&[3, 30, 5, 5], 2);
        let mut y = x.clone();
        for n in 0..3 {
            for b in 0..30 {
                for i in 0..5 {
                    for j in 0..5 {
                        if (i, j) != (2, 2) {
                            y[[n, b, i, j]] = x[[n, b, 4 - j, 4 - i]] * 3.0 + 1.0;
                        }
                    }
                }
            }
        }
        let (a, _) = m.forward(x, Mode::Eval).unwrap();
        let (b, _) = m.forward(y, Mode::Eval).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn plugin_slots_need_an_implementation() {
    let mut reg = ModelRegistry::with_builtins();
    for name in ["svm", "hybridsn", "spectralformer", "hit"] {
        assert!(reg.names().iter().any(|n| n == name));
        match reg.build(name, &params(30, 15), 0) {
            Err(ModelError::NotImplemented(msg)) => assert!(msg.contains("register an implementation")),
            Err(e) => panic!("{name}: {e}"),
            Ok(_) => panic!("{name} built without an implementation"),
        }
    }
    assert!(matches!(reg.build("nope", &params(30, 15), 0), Err(ModelError::UnknownModel(_))));
    let spec = reg.spec("hybridsn").unwrap().clone();
    reg.register(spec, std::sync::Arc::new(hsi_models::zoo::cnn_2d));
    let m = reg.build("hybridsn", &params(30, 15), 0).unwrap();
    assert_eq!(m.spec().input, PreprocessSpec::pca(30));
    assert!(reg.implemented().contains(&"hybridsn"));
}

#[test]
fn wavelength_stems_require_wavelength_preserving_input() {
    let reg = ModelRegistry::with_builtins();
    let spec = ModelSpec::new("deephs_net_hyve", PreprocessSpec::pca(10), true, StemKind::Wavelength);
    assert!(matches!(reg.build_with_spec(spec, &params(10, 15), 0), Err(ModelError::Incompatible(_))));
}

#[test]
fn construction_is_seeded() {
    let reg = ModelRegistry::with_builtins();
    let p = params(20, 15);
    let a = reg.build("deephs_net_hyve", &p, 3).unwrap();
    let b = reg.build("deephs_net_hyve", &p, 3).unwrap();
    let c = reg.build("deephs_net_hyve", &p, 4).unwrap();
    assert_eq!(a.backbone_hash(), b.backbone_hash());
    assert_ne!(a.backbone_hash(), c.backbone_hash());
}

fn loss(
    m: &mut hsi_models::BackboneHeadModel,
    x: &ArrayD<f32>,
    labels: &[usize],
    mode: Mode,
) -> (f64, hsi_nn::Cache, ArrayD<f32>) {
    let (y, cache) = m.forward(x.clone(), mode).unwrap();
    let (l, g) = softmax_cross_entropy(y.view().into_dimensionality::<Ix2>().unwrap(), labels).unwrap();
    (l.iter().sum(), cache, g.into_dyn())
}

#[test]
fn inactive_heads_receive_no_gradient() {
    let mut m = with_head("deephs_net_hyve", 12, 8, 3);
    let g2 = grid(16, 500.0, 2000.0);
    m.attach_head("b", 5, Some(&g2), &mut rng(2)).unwrap();
    assert_eq!(m.active_head(), Some("a"));
    let x = input(&[4, 12, 8, 8], 3);
    let (_, cache, g) = loss(&mut m, &x, &[0, 1, 2, 0], Mode::Train);
    hsi_nn::zero_grad(&mut m);
    m.backward(cache, g).unwrap();
    let mut touched = Vec::new();
    m.visit("", &mut |n, t| {
        if let Tensor::Param(p) = t {
            touched.push((n.to_string(), p.grad.is_some()));
        }
    });
    for (n, t) in touched {
        if n.starts_with("heads.b.") {
            assert!(!t, "{n} received a gradient");
        } else if n.starts_with("heads.a.") || n.starts_with("body.") || n.starts_with("stem.") {
            assert!(t, "{n} missing a gradient");
        }
    }
    let before = hsi_nn::state_dict(&m);
    let mut opt = Adam::new(0.01);
    opt.step(&mut m);
    let after = hsi_nn::state_dict(&m);
    for ((n, a), (_, b)) in before.iter().zip(&after) {
        if n.starts_with("heads.b.") {
            assert_eq!(a, b, "{n} changed");
        }
    }
}

#[test]
fn loss_through_one_head_ignores_the_others() {
    let mut m = with_head("deephs_net", 12, 8, 3);
    m.attach_head("b", 4, None, &mut rng(2)).unwrap();
    let x = input(&[4, 12, 8, 8], 3);
    let (l0, _, _) = loss(&mut m, &x, &[0, 1, 2, 0], Mode::Eval);
    m.visit_mut("", &mut |n, t| {
        if let (true, hsi_nn::TensorMut::Param(p)) = (n.starts_with("heads.b."), t) {
            p.value.mapv_inplace(|v| v * -3.0 + 0.5);
        }
    });
    let (l1, _, _) = loss(&mut m, &x, &[0, 1, 2, 0], Mode::Eval);
    assert_eq!(l0, l1);
    m.switch_head("b").unwrap();
    let (y, _) = m.forward(x, Mode::Eval).unwrap();
    assert_eq!(y.shape(), &[4, 4]);
}

#[test]
fn reinit_keeps_backbone_and_normalisation() {
    let mut m = with_head("deephs_net_hyve", 12, 8, 3);
    m.attach_head("b", 4, Some(&grid(10, 500.0, 900.0)), &mut rng(2)).unwrap();
    let x = input(&[6, 12, 8, 8], 3);
    let (_, cache, g) = loss(&mut m, &x, &[0, 1, 2, 0, 1, 2], Mode::Train);
    m.backward(cache, g).unwrap();
    Adam::new(0.01).step(&mut m);
    let hash = m.backbone_hash();
    let head_a = m.head("a").unwrap();
    let (mean, var) = (head_a.bn.running_mean.clone(), head_a.bn.running_var.clone());
    let fc = head_a.fc.weight.value.clone();
    assert_ne!(mean.iter().copied().sum::<f32>(), 0.0);

    let target = grid(7, 420.0, 1000.0);
    m.reinit_head_for_finetune("target", 5, Some(&target), &mut rng(9)).unwrap();
    assert_eq!(m.backbone_hash(), hash);
    assert_eq!(m.head_ids(), &["target".to_string()]);
    assert_eq!(m.active_head(), Some("target"));
    let h = m.head("target").unwrap();
    assert_eq!(h.bn.running_mean, mean);
    assert_eq!(h.bn.running_var, var);
    assert_eq!(h.classes, 5);
    assert_ne!(h.fc.weight.value.shape(), fc.shape());
    let (y, _) = m.forward(input(&[2, 7, 8, 8], 4), Mode::Eval).unwrap();
    assert_eq!(y.shape(), &[2, 5]);
}

#[test]
fn wavelength_models_accept_any_grid_in_range() {
    let mut m = with_head("deephs_net_hyve", 224, 16, 3);
    m.attach_head("b", 3, Some(&grid(249, 400.0, 2500.0)), &mut rng(5)).unwrap();
    let (y, _) = m.forward(input(&[2, 224, 16, 16], 1), Mode::Eval).unwrap();
    assert_eq!(y.shape(), &[2, 3]);
    m.switch_head("b").unwrap();
    let (y, _) = m.forward(input(&[2, 249, 16, 16], 1), Mode::Eval).unwrap();
    assert_eq!(y.shape(), &[2, 3]);
    assert!(m.forward(input(&[2, 224, 16, 16], 1), Mode::Eval).is_err());
    let err = m.attach_head("c", 3, Some(&[350.0, 600.0]), &mut rng(5)).unwrap_err();
    assert!(matches!(err, ModelError::Coverage(_)), "{err}");

    let mut fixed = with_head("deephs_net", 224, 16, 3);
    assert!(fixed.forward(input(&[2, 249, 16, 16], 1), Mode::Eval).is_err());
}

#[test]
fn forward_is_deterministic() {
    let mut m = with_head("resnet18_hyve", 20, 16, 3);
    let x = input(&[3, 20, 16, 16], 8);
    let (a, _) = m.forward(x.clone(), Mode::Eval).unwrap();
    let (b, _) = m.forward(x, Mode::Eval).unwrap();
    assert_eq!(a, b);
}

#[test]
fn small_network_overfits_a_few_samples() {
    let mut m = with_head("deephs_net", 6, 8, 2);
    let x = input(&[12, 6, 8, 8], 11);
    let labels: Vec<usize> = (0..12).map(|i| i % 2).collect();
    let mut opt = Adam::new(0.01);
    for _ in 0..100 {
        let (_, cache, g) = loss(&mut m, &x, &labels, Mode::Train);
        hsi_nn::zero_grad(&mut m);
        m.backward(cache, g).unwrap();
        opt.step(&mut m);
    }
    let (y, _) = m.forward(x, Mode::Eval).unwrap();
    let pred = hsi_nn::loss::argmax_rows(y.view().into_dimensionality::<Ix2>().unwrap());
    assert_eq!(pred, labels);
}

#[test]
fn checkpoint_round_trip() {
    let mut m = with_head("deephs_net_hyve", 12, 8, 3);
    m.attach_head("b", 4, Some(&grid(9, 500.0, 900.0)), &mut rng(2)).unwrap();
    let x = input(&[4, 12, 8, 8], 3);
    let (_, cache, g) = loss(&mut m, &x, &[0, 1, 2, 0], Mode::Train);
    m.backward(cache, g).unwrap();
    Adam::new(0.01).step(&mut m);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    Checkpoint::capture(&m).with_manifest_hash("abc").save(&path).unwrap();
    let ck = Checkpoint::load(&path).unwrap();
    assert_eq!(ck.manifest_hash.as_deref(), Some("abc"));
    let mut r = ck.restore(&ModelRegistry::with_builtins()).unwrap();
    assert_eq!(r.backbone_hash(), m.backbone_hash());
    assert_eq!(hsi_nn::state_dict(&r), hsi_nn::state_dict(&m));
    let (a, _) = m.forward(x.clone(), Mode::Eval).unwrap();
    let (b, _) = r.forward(x, Mode::Eval).unwrap();
    assert_eq!(a, b);

    let mut newer = ck.clone();
    newer.version += 1;
    assert!(Checkpoint::from_json(&newer.to_json().unwrap()).is_err());
    let mut broken = ck;
    broken.tensors.pop();
    assert!(broken.restore(&ModelRegistry::with_builtins()).is_err());
}

#[test]
fn rgb_kernel_adaptation() {
    let mut r = rng(4);
    let rgb = Array4::from_shape_fn((2, 3, 3, 3), |_| r.random_range(-1.0f32..1.0));
    let w = [450.0, 550.0, 650.0, 900.0];
    let a = adapt_rgb_kernel(rgb.view(), &w).unwrap();
    assert_eq!(a.dim(), (2, 4, 3, 3));
    for (b, &nm) in w.iter().enumerate() {
        let c = rgb_channel(nm);
        for o in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(a[[o, b, i, j]], rgb[[o, c, i, j]] * 0.75);
                }
            }
        }
    }
    assert_eq!([450.0, 550.0, 650.0].map(rgb_channel), [2, 1, 0]);

    let reg = ModelRegistry::with_builtins();
    let mut src = reg.build("resnet18", &BuildParams::new(3, 32), 1).unwrap();
    src.attach_head("rgb", 10, None, &mut rng(0)).unwrap();
    let state: Vec<_> =
        src.backbone_state().into_iter().map(|(n, v)| (n.trim_start_matches("body.").to_string(), v)).collect();
    let mut dst = with_head("resnet18", 4, 32, 3);
    let rep = load_rgb_backbone(&mut dst, &state, &w).unwrap();
    assert!(rep.stem_adapted);
    assert_eq!(rep.loaded, state.len());
    let mut hyve = with_head("resnet18_hyve", 4, 32, 3);
    let rep = load_rgb_backbone(&mut hyve, &state, &w).unwrap();
    assert_eq!(rep.loaded, state.len() - 1);
    assert!(!rep.stem_adapted);
}
