use hsi_nn::gradcheck::GradCheck;
use hsi_nn::{
    BatchNorm, CenterPixel, Conv, ConvGeom, Flatten, GlobalAvgPool, Gru, Layer, Linear, Pool, PoolKind, Relu, Reshape,
    Residual, Sequential, Tile, WavelengthConv, WavelengthConvConfig,
};
use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn input(shape: &[usize], seed: u64) -> ArrayD<f64> {
    let mut r = rng(seed);
    ArrayD::from_shape_fn(IxDyn(shape), |_| r.random_range(-1.0..1.0))
}

fn check(layer: &mut dyn Layer<f64>, x: &ArrayD<f64>) {
    let rep = GradCheck::default().run(layer, x).unwrap();
    assert!(rep.checked > 0);
    assert!(rep.max_rel_error < TOL, "{} max rel error {:e} at {}", layer.kind(), rep.max_rel_error, rep.worst);
}

#[test]
fn linear() {
    check(&mut Linear::new(7, 4, &mut rng(1)), &input(&[5, 7], 2));
}

#[test]
fn conv1d_2d_3d_with_stride_and_padding() {
    check(&mut Conv::new(1, 2, 3, ConvGeom::cubic(1, 4, 2, 1), true, &mut rng(3)), &input(&[3, 2, 11], 4));
    check(&mut Conv::new(2, 3, 4, ConvGeom::cubic(2, 3, 1, 1), true, &mut rng(5)), &input(&[2, 3, 6, 5], 6));
    check(&mut Conv::new(2, 2, 2, ConvGeom::cubic(2, 3, 2, 0), false, &mut rng(7)), &input(&[2, 2, 7, 7], 8));
    check(&mut Conv::new(3, 1, 2, ConvGeom::cubic(3, 3, 1, 0), true, &mut rng(9)), &input(&[2, 1, 5, 4, 4], 10));
}

#[test]
fn batch_norm_vector_and_image() {
    let mut bn = BatchNorm::new(4);
    bn.gamma.value = input(&[4], 11);
    check(&mut bn, &input(&[6, 4], 12));
    check(&mut BatchNorm::new(3), &input(&[2, 3, 3, 3], 13));
}

#[test]
fn pools_and_shape_layers() {
    check(&mut Pool::new(PoolKind::Max, 2, 2, 2, 0), &input(&[2, 2, 6, 6], 14));
    check(&mut Pool::new(PoolKind::Max, 2, 3, 2, 1), &input(&[2, 2, 7, 7], 15));
    check(&mut Pool::new(PoolKind::Avg, 2, 4, 4, 0), &input(&[2, 3, 9, 8], 16));
    check(&mut Pool::new(PoolKind::Max, 1, 5, 5, 0), &input(&[2, 3, 21], 17));
    check(&mut Pool::new(PoolKind::Max, 3, 2, 2, 0), &input(&[1, 2, 4, 5, 4], 18));
    check(&mut GlobalAvgPool, &input(&[3, 4, 3, 2], 19));
    check(&mut CenterPixel, &input(&[2, 5, 5, 5], 20));
    check(&mut Tile { height: 3, width: 2 }, &input(&[2, 4], 21));
    check(&mut Flatten, &input(&[2, 3, 2, 2], 22));
    check(&mut Reshape { shape: vec![6, 1] }, &input(&[2, 3, 2], 23));
    check(&mut Relu, &input(&[4, 9], 24));
}

#[test]
fn gru_through_time() {
    check(&mut Gru::new(2, 5, &mut rng(25)), &input(&[3, 6, 2], 26));
}

#[test]
fn residual_block_with_projection() {
    let mut r = rng(27);
    let main = Sequential::new()
        .with(Conv::new(2, 3, 4, ConvGeom::cubic(2, 3, 2, 1), false, &mut r))
        .with(BatchNorm::new(4))
        .with(Relu)
        .with(Conv::new(2, 4, 4, ConvGeom::cubic(2, 3, 1, 1), false, &mut r));
    let shortcut =
        Sequential::new().with(Conv::new(2, 3, 4, ConvGeom::cubic(2, 1, 2, 0), false, &mut r)).with(BatchNorm::new(4));
    check(&mut Residual { main, shortcut: Some(shortcut) }, &input(&[2, 3, 6, 6], 28));
    let ident = Sequential::new().with(Conv::new(2, 3, 3, ConvGeom::cubic(2, 3, 1, 1), true, &mut r));
    check(&mut Residual { main: ident, shortcut: None }, &input(&[2, 3, 4, 4], 29));
}

#[test]
fn small_network_end_to_end() {
    let mut r = rng(30);
    let mut net = Sequential::new()
        .with(Conv::new(2, 4, 3, ConvGeom::cubic(2, 3, 1, 1), true, &mut r))
        .with(BatchNorm::new(3))
        .with(Relu)
        .with(Pool::new(PoolKind::Avg, 2, 2, 2, 0))
        .with(Flatten)
        .with(Linear::new(12, 3, &mut r));
    check(&mut net, &input(&[4, 4, 4, 4], 31));
}

#[test]
fn wavelength_conv_all_parameters() {
    let mut cfg = WavelengthConvConfig::new(3, 3, (400.0, 1000.0));
    cfg.components = 2;
    let mut layer = WavelengthConv::<f64>::new(cfg, &mut rng(32)).unwrap();
    layer.set_grid(&[420.0, 510.0, 640.0, 700.0, 910.0]).unwrap();
    check(&mut layer, &input(&[2, 5, 5, 5], 33));
}

#[test]
fn wavelength_conv_random_draws() {
    let mut worst: f64 = 0.0;
    for draw in 0..100u64 {
        let mut r = rng(1000 + draw);
        let mut cfg = WavelengthConvConfig::new(2, 3, (400.0, 1000.0));
        cfg.components = 1 + (draw as usize % 5);
        let mut layer = WavelengthConv::<f64>::new(cfg, &mut r).unwrap();
        layer.mu.value.mapv_inplace(|_| r.random_range(0.0..1.0));
        layer.sigma.value.mapv_inplace(|_| r.random_range(0.02..0.5));
        let bands = r.random_range(3..9);
        let mut grid: Vec<f64> = (0..bands).map(|_| r.random_range(400.0..1000.0)).collect();
        grid.sort_by(f64::total_cmp);
        layer.set_grid(&grid).unwrap();
        let rep =
            GradCheck { seed: draw, ..GradCheck::default() }.run(&mut layer, &input(&[2, bands, 4, 4], draw)).unwrap();
        assert!(rep.max_rel_error < TOL, "draw {draw}: {:e} at {}", rep.max_rel_error, rep.worst);
        worst = worst.max(rep.max_rel_error);
    }
    println!("worst relative error {worst:e}");
}
