mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use common::{model, quick, spectral, Scene};
use hsi_core::cube::PreprocessSpec;
use hsi_core::sampler::{MixedBatch, SampleSource};
use hsi_core::splits::{SplitTag, Unit};
use hsi_core::DataConfig;
use hsi_models::{Checkpoint, ModelRegistry};
use hsi_nn::{Layer, Mode, Tensor, TensorMut};
use hsi_train::fit::batch_gradients;
use hsi_train::{evaluate, finetune, pretrain, train, TrainConfig, TrainError};
use ndarray::{Array3, Array4, Axis, Ix2};

fn grads(m: &dyn Layer<f32>, prefix: &str) -> BTreeMap<String, Vec<f32>> {
    let mut out = BTreeMap::new();
    m.visit("", &mut |name, t| {
        if let Tensor::Param(p) = t {
            if name.starts_with(prefix) {
                if let Some(g) = &p.grad {
                    out.insert(name.to_string(), g.iter().copied().collect());
                }
            }
        }
    });
    out
}

#[test]
fn default_schedule_steps_at_thirty_and_forty_five() {
    let c = TrainConfig::default();
    assert_eq!(c.lr_at(0), 0.01);
    assert_eq!(c.lr_at(29), 0.01);
    assert_eq!(c.lr_at(30), 0.01 * 0.1);
    assert_eq!(c.lr_at(44), 0.01 * 0.1);
    assert_eq!(c.lr_at(46), 0.01 * 0.1 * 0.1);
    assert!((c.lr_at(46) - 0.0001).abs() < 1e-15);
}

#[test]
fn pretraining_rate_is_lr0_over_n() {
    let datas: Vec<_> = (0..6).map(|i| spectral(&format!("s{i}"))).collect();
    for n in 1..=6 {
        let refs: Vec<_> = datas[..n].iter().collect();
        let mut m = model("mlp", &refs, 1, 0);
        let cfg = TrainConfig { batch_size: 12, ..quick(1) };
        let out = pretrain(&mut m, &refs, &cfg, 0).unwrap();
        assert_eq!(out.base_lr, 0.01 / n as f64, "N = {n}");
        assert_eq!(out.history[0].lr, 0.01 / n as f64, "N = {n}");
        assert_eq!(m.head_ids().len(), n);
    }
}

#[test]
fn mixed_batches_split_evenly_across_configurations() {
    let datas: Vec<_> = (0..3).map(|i| spectral(&format!("m{i}"))).collect();
    let refs: Vec<_> = datas.iter().collect();
    let mut m = model("mlp", &refs, 1, 0);
    let cfg = TrainConfig { batch_size: 16, ..quick(2) };
    let out = pretrain(&mut m, &refs, &cfg, 3).unwrap();
    assert!(!out.batch_counts.is_empty());
    for counts in &out.batch_counts {
        assert_eq!(counts.iter().sum::<usize>(), 16);
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{counts:?}");
    }
}

/// Gradient of a mixed batch equals the quota-weighted sum of per-configuration gradients.
#[test]
fn mixed_gradient_is_quota_weighted_sum() {
    let a = spectral("ga");
    let b = spectral("gb");
    let refs = [&a, &b];
    let mut m = model("1d_cnn", &refs, 1, 0);
    for d in refs {
        hsi_train::fit::ensure_head(&mut m, d, 0).unwrap();
    }
    let entries: Vec<(usize, usize)> = (0..5).map(|i| (0, i)).chain((0..3).map(|i| (1, i))).collect();
    let total = entries.len() as f32;
    batch_gradients(&mut m, &refs, &MixedBatch { entries: entries.clone() }, None, (0, 0)).unwrap();
    let joint = grads(&m, "body");
    let mut summed: BTreeMap<String, Vec<f32>> = BTreeMap::new();
    for k in 0..2 {
        let part: Vec<_> = entries.iter().copied().filter(|(c, _)| *c == k).collect();
        let w = part.len() as f32 / total;
        batch_gradients(&mut m, &refs, &MixedBatch { entries: part }, None, (0, 0)).unwrap();
        for (name, g) in grads(&m, "body") {
            let acc = summed.entry(name).or_insert_with(|| vec![0.0; g.len()]);
            for (s, v) in acc.iter_mut().zip(g) {
                *s += w * v;
            }
        }
    }
    assert_eq!(joint.keys().collect::<Vec<_>>(), summed.keys().collect::<Vec<_>>());
    assert!(!joint.is_empty());
    for (name, g) in &joint {
        for (x, y) in g.iter().zip(&summed[name]) {
            assert!((x - y).abs() <= 1e-5 * (1.0 + x.abs()), "{name}: {x} vs {y}");
        }
    }
}

#[test]
fn single_configuration_pretraining_equals_training() {
    let d = spectral("one");
    let cfg = quick(4);
    let mut a = model("mlp", &[&d], 1, 5);
    let mut b = model("mlp", &[&d], 1, 5);
    let ta = train(&mut a, &d, &cfg, 5).unwrap();
    let tb = pretrain(&mut b, &[&d], &cfg, 5).unwrap();
    assert_eq!(ta.history, tb.history);
    assert_eq!(a.backbone_hash(), b.backbone_hash());
}

/// Accuracy equals the trace of an independently tallied confusion matrix.
#[test]
fn evaluation_matches_independent_confusion_tally() {
    let d = spectral("conf");
    let mut m = model("mlp", &[&d], 1, 0);
    train(&mut m, &d, &quick(3), 0).unwrap();
    let ev = evaluate(&mut m, &d, SplitTag::Test, 7).unwrap();

    let src = d.test.as_ref();
    let [c, h, w] = src.sample_shape();
    let mut x = Array4::<f32>::zeros((src.len(), c, h, w));
    for (i, mut s) in x.axis_iter_mut(Axis(0)).enumerate() {
        s.assign(&src.tensor(i));
    }
    m.switch_head(&d.id()).unwrap();
    let (y, _) = m.forward(x.into_dyn(), Mode::Eval).unwrap();
    let y = y.into_dimensionality::<Ix2>().unwrap();
    let mut tally = vec![vec![0u64; d.classes]; d.classes];
    for (i, row) in y.outer_iter().enumerate() {
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        tally[src.label(i) as usize][best] += 1;
    }
    let trace: u64 = (0..d.classes).map(|k| tally[k][k]).sum();
    assert_eq!(ev.confusion, tally);
    assert_eq!(ev.samples, src.len());
    assert_eq!(ev.accuracy, trace as f64 / src.len() as f64);
}

#[test]
fn training_on_test_samples_is_rejected() {
    let mut d = spectral("leak");
    d.train = d.test.clone();
    let mut m = model("mlp", &[&d], 1, 0);
    let err = train(&mut m, &d, &quick(1), 0).unwrap_err();
    assert!(matches!(err, TrainError::Leak(_)), "{err}");
}

/// Wraps a source and shifts its labels.
struct Rewrite {
    inner: Arc<dyn SampleSource>,
    shift: u16,
}

impl SampleSource for Rewrite {
    fn len(&self) -> usize {
        self.inner.len()
    }
    fn label(&self, i: usize) -> u16 {
        (self.inner.label(i) + self.shift) % self.inner.class_count() as u16
    }
    fn unit(&self, i: usize) -> &Unit {
        self.inner.unit(i)
    }
    fn split(&self) -> SplitTag {
        self.inner.split()
    }
    fn config(&self) -> &Arc<DataConfig> {
        self.inner.config()
    }
    fn class_count(&self) -> usize {
        self.inner.class_count()
    }
    fn sample_shape(&self) -> [usize; 3] {
        self.inner.sample_shape()
    }
    fn tensor(&self, i: usize) -> Array3<f32> {
        self.inner.tensor(i)
    }
}

/// Validation labels disagree with training labels, so validation loss rises
/// while training fits; the loop must stop `patience` epochs after the best.
#[test]
fn early_stopping_halts_after_patience() {
    let mut d = spectral("stop");
    d.val = Arc::new(Rewrite { inner: d.val.clone(), shift: 1 });
    let mut m = model("mlp", &[&d], 1, 0);
    let cfg = TrainConfig { patience: 3, ..quick(50) };
    let out = train(&mut m, &d, &cfg, 0).unwrap();
    assert!(out.stopped_early);
    assert!(out.epochs_run < 50);
    assert_eq!(out.epochs_run, out.best_epoch + cfg.patience + 1);
    let after = &out.history[out.best_epoch + 1..];
    assert!(after.iter().all(|e| e.val_loss >= out.best_val_loss));
}

#[test]
fn non_finite_loss_aborts_with_diagnostic() {
    let d = spectral("nan");
    let mut m = model("mlp", &[&d], 1, 0);
    hsi_train::fit::ensure_head(&mut m, &d, 0).unwrap();
    m.visit_mut("", &mut |name, t| {
        if let (true, TensorMut::Param(p)) = (name.ends_with("fc.bias"), t) {
            p.value.fill(f32::NAN);
        }
    });
    match train(&mut m, &d, &quick(2), 0).unwrap_err() {
        TrainError::Diverged { epoch, batch, .. } => assert_eq!((epoch, batch), (0, 0)),
        e => panic!("expected divergence, got {e}"),
    }
}

/// The restored state reproduces the recorded best validation loss, also
/// after a checkpoint round trip.
#[test]
fn restored_checkpoint_reproduces_best_validation_loss() {
    let d = spectral("restore");
    let mut m = model("1d_cnn", &[&d], 1, 0);
    let out = train(&mut m, &d, &quick(8), 0).unwrap();
    let val = evaluate(&mut m, &d, SplitTag::Val, 64).unwrap().mean_loss;
    assert!((val - out.best_val_loss).abs() < 1e-6, "{val} vs {}", out.best_val_loss);

    let json = Checkpoint::capture(&m).to_json().unwrap();
    let mut back = Checkpoint::from_json(&json).unwrap().restore(&ModelRegistry::with_builtins()).unwrap();
    let val = evaluate(&mut back, &d, SplitTag::Val, 64).unwrap().mean_loss;
    assert!((val - out.best_val_loss).abs() < 1e-6);
}

#[test]
fn same_seed_gives_identical_runs() {
    let d = Scene::new("det", 12).prepared(0.3, PreprocessSpec::RAW, 5);
    let cfg = TrainConfig { augment: Some(Default::default()), ..quick(3) };
    let run = || {
        let mut m = model("deephs_net", &[&d], 5, 2);
        let out = train(&mut m, &d, &cfg, 2).unwrap();
        (out, evaluate(&mut m, &d, SplitTag::Test, 32).unwrap(), m.backbone_hash())
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_epoch_finetune_keeps_backbone_and_fresh_head() {
    let src = spectral("pre");
    let dst = spectral("post");
    let mut m = model("mlp", &[&src], 1, 0);
    train(&mut m, &src, &quick(2), 0).unwrap();
    let hash = m.backbone_hash();
    let out = finetune(&mut m, &dst, &quick(0), 0).unwrap();
    assert_eq!(out.epochs_run, 0);
    assert_eq!(m.backbone_hash(), hash);
    assert_eq!(m.head_ids(), [dst.id()]);
    let ev = evaluate(&mut m, &dst, SplitTag::Test, 64).unwrap();
    assert!(ev.accuracy >= 0.0 && ev.accuracy <= 1.0);
}

#[test]
fn uncovered_grid_fails_before_any_step() {
    let inside = Scene::new("in", 16).prepared(0.3, PreprocessSpec::RAW, 5);
    let mut wide = Scene::new("wide", 16);
    wide.range = (400.0, 1200.0);
    let outside = wide.prepared(0.3, PreprocessSpec::RAW, 5);
    let mut m = model("deephs_net_hyve", &[&inside], 5, 0);
    let hash = m.backbone_hash();
    let err = pretrain(&mut m, &[&inside, &outside], &quick(1), 0).unwrap_err();
    assert!(matches!(err, TrainError::Model(_)), "{err}");
    assert_eq!(m.backbone_hash(), hash);
}

#[test]
fn batch_must_leave_two_samples_per_configuration() {
    let datas: Vec<_> = (0..3).map(|i| spectral(&format!("b{i}"))).collect();
    let refs: Vec<_> = datas.iter().collect();
    let mut m = model("mlp", &refs, 1, 0);
    let cfg = TrainConfig { batch_size: 5, ..quick(1) };
    assert!(matches!(pretrain(&mut m, &refs, &cfg, 0), Err(TrainError::Invalid(_))));
}

/// Overfit sanity: the model reaches 100% accuracy on a tiny three-class
/// training split within 50 epochs of the standard schedule.
fn fits_tiny_set(names: &[&str]) {
    let reg = ModelRegistry::with_builtins();
    let scene = Scene { side: 20, margin: 1.0, noise: 0.02, ..Scene::new("tiny", 40) };
    for &name in names {
        let spec = reg.spec(name).unwrap().clone();
        let d = scene.prepared(0.3, spec.input, spec.input_extent(15));
        let mut m = reg.build(name, &hsi_train::build_params(&[&d], 15), 0).unwrap();
        let cfg = TrainConfig { lr0: spec.hyperparameters.lr, track_train_accuracy: true, ..quick(50) };
        let out = train(&mut m, &d, &cfg, 0).unwrap();
        let first = out.history.iter().position(|e| e.train_accuracy == Some(1.0));
        let best = out.history.iter().filter_map(|e| e.train_accuracy).fold(0.0, f64::max);
        println!("{name}: 100% train accuracy first at epoch {first:?}, best {best:.3}");
        assert!(first.is_some(), "{name} never fit the training split");
    }
}

#[test]
fn compact_zoo_models_fit_a_tiny_set() {
    let heavy = ["resnet18", "resnet18_hyve", "resnet152", "resnet152_hyve"];
    let reg = ModelRegistry::with_builtins();
    let names: Vec<&str> = reg.implemented().into_iter().filter(|n| !heavy.contains(n)).collect();
    assert_eq!(names.len() + heavy.len(), 14);
    fits_tiny_set(&names);
}

#[test]
fn resnet18_models_fit_a_tiny_set() {
    fits_tiny_set(&["resnet18", "resnet18_hyve"]);
}

#[test]
#[ignore = "takes several minutes on one core; run with --ignored"]
fn resnet152_models_fit_a_tiny_set() {
    fits_tiny_set(&["resnet152", "resnet152_hyve"]);
}
