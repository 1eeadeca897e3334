//! Builders for the built-in backbones.

use hsi_nn::{
    BatchNorm, CenterPixel, Conv, ConvGeom, Flatten, GlobalAvgPool, Gru, Layer, Linear, Pool, PoolKind, Relu, Reshape,
    Residual, Sequential, Tile, WavelengthConv, WavelengthConvConfig,
};
use rand_chacha::ChaCha8Rng;

use crate::model::{Backbone, BuildParams};
use crate::{ModelError, Result};

/// Sequential body that tracks its per-sample output shape while layers are added.
struct Net {
    seq: Sequential<f32>,
    shape: Vec<usize>,
    next: usize,
}

impl Net {
    fn new(shape: Vec<usize>) -> Self {
        Self { seq: Sequential::new(), shape, next: 0 }
    }

    /// Body after a wavelength stem; numbering starts at 1 so that layer names
    /// line up with the channel-stem variant whose layer 0 is the first convolution.
    fn after_stem(shape: Vec<usize>) -> Self {
        Self { seq: Sequential::new(), shape, next: 1 }
    }

    fn add(&mut self, layer: impl Layer<f32> + 'static) -> Result<&mut Self> {
        self.shape = layer.output_shape(&self.shape)?;
        self.seq.push_named(self.next.to_string(), Box::new(layer));
        self.next += 1;
        Ok(self)
    }

    fn channels(&self) -> usize {
        self.shape[0]
    }

    /// Smallest spatial extent.
    fn extent(&self) -> usize {
        self.shape[1..].iter().copied().min().unwrap_or(1)
    }

    fn finish(self, stem: Option<WavelengthConv<f32>>) -> Result<Backbone> {
        match self.shape.as_slice() {
            [d] => Ok(Backbone { stem, body: self.seq, feature_dim: *d }),
            s => Err(ModelError::Incompatible(format!("backbone ends with shape {s:?}, expected a vector"))),
        }
    }
}

fn first_conv(dims: usize, cin: usize, cout: usize, g: ConvGeom, bias: bool, rng: &mut ChaCha8Rng) -> Conv<f32> {
    let mut c = Conv::new(dims, cin, cout, g, bias, rng);
    c.input_grad = false;
    c
}

fn conv2(cin: usize, cout: usize, k: usize, s: usize, p: usize, bias: bool, rng: &mut ChaCha8Rng) -> Conv<f32> {
    Conv::new(2, cin, cout, ConvGeom::cubic(2, k, s, p), bias, rng)
}

/// Non-overlapping pooling with the window clamped to the current extent.
fn clamped_pool(kind: PoolKind, dims: usize, k: usize, net: &Net) -> Pool {
    let k = k.min(net.extent()).max(1);
    Pool::new(kind, dims, k, k, 0)
}

fn range(p: &BuildParams, name: &str) -> Result<(f64, f64)> {
    p.range_nm.ok_or_else(|| ModelError::Incompatible(format!("{name} needs a wavelength range for its first layer")))
}

fn wavelength_stem(cfg: WavelengthConvConfig, rng: &mut ChaCha8Rng) -> Result<WavelengthConv<f32>> {
    let mut s = WavelengthConv::new(cfg, rng)?;
    s.input_grad = false;
    Ok(s)
}

fn spectral_input(p: &BuildParams) -> Vec<usize> {
    vec![p.bands, 1, 1]
}

fn spatial_input(p: &BuildParams) -> Vec<usize> {
    vec![p.bands, p.patch, p.patch]
}

pub fn mlp(p: &BuildParams, rng: &mut ChaCha8Rng) -> Result<Backbone> {
    let mut n = Net::new(spectral_input(p));
    n.add(CenterPixel)?;
    n.add(Linear::new(p.bands, 100, rng))?.add(Relu)?;
    n.add(Linear::new(100, 50, rng))?.add(Relu)?;
    n.finish(None)
}

pub fn rnn(p: &BuildParams, rng: &mut ChaCha8Rng) -> Result<Backbone> {
    let mut n = Net::new(spectral_input(p));
    n.add(CenterPixel)?.add(Reshape { shape: vec![p.bands, 1] })?;
    n.add(Gru::new(1, 90, rng))?;
    n.finish(None)
}

pub fn cnn_1d(p: &BuildParams, rng: &mut ChaCha8Rng) -> Result<Backbone> {
    let mut n = Net::new(spectral_input(p));
    n.add(CenterPixel)?.add(Reshape { shape: vec![1, p.bands] })?;
    let k = 24.min(p.bands);
    n.add(first_conv(1, 1, 20, ConvGeom::cubic(1, k, 1, 0), true, rng))?;
    n.add(BatchNorm::new(20))?.add(Relu)?;
    let pool = clamped_pool(PoolKind::Max, 1, 5, &n);
    n.add(pool)?.add(Flatten)?;
    let flat = n.shape[0];
    n.add(Linear::new(flat, 100, rng))?.add(Relu)?;
    n.finish(None)
}

/// Two valid 5x5 conv blocks with 2x2 max pooling and a 500-unit dense layer.
fn cnn_2d_body(mut n: Net, rng: &mut ChaCha8Rng) -> Result<Backbone> {
    let c = n.channels();
    n.add(first_conv(2, c, 50, ConvGeom::cubic(2, 5, 1, 0), true, rng))?;
    n.add(BatchNorm::new(50))?.add(Relu)?;
    let pool = clamped_pool(PoolKind::Max, 2, 2, &n);
    n.add(pool)?;
    n.add(conv2(50, 100, 5, 1, 0, true, rng))?;
    n.add(BatchNorm::new(100))?.add(Relu)?;
    let pool = clamped_pool(PoolKind::Max, 2, 2, &n);
    n.add(pool)?.add(Flatten)?;
    let flat = n.shape[0];
    n.add(Linear::new(flat, 500, rng))?.add(Relu)?;
    n.finish(None)
}

pub fn cnn_2d(p: &BuildParams, rng: &mut ChaCha8Rng) -> Result<Backbone> {
    cnn_2d_body(Net::new(spatial_input(p)), rng)
}

pub fn cnn_2d_spatial(p: &BuildParams, rng: &mut ChaCha8Rng) -> Result<Backbone> {
    if p.bands != 1 {
        return Err(ModelError::Incompatible(format!(
            "2d_cnn_spatial reads the single-band mean image, got {} channels",
            p.bands
        )));
    }
    cnn_2d_body(Net::new(spatial_input(p)), rng)
}

/// Centre spectrum tiled over the patch, so no spatial variation reaches the convolutions.
pub fn cnn_2d_spectral(p: &BuildParams, rng: &mut ChaCha8Rng) -> Result<Backbone> {
    let mut n = Net::new(spectral_input(p));
    n.add(CenterPixel)?.add(Tile { height: p.patch, width: p.patch })?;
    cnn_2d_body(n, rng)
}

pub fn cnn_3d(p: &BuildParams, rng: &mut ChaCha8Rng) -> Result<Backbone> {
    let mut n = Net::new(spatial_input(p));
    n.add(Reshape { shape: vec![1, p.bands, p.patch, p.patch] })?;
    n.add(first_conv(3, 1, 16, ConvGeom::cubic(3, 5, 1, 0), true, rng))?;
    n.add(BatchNorm::new(16))?.add(Relu)?;
    let pool = clamped_pool(PoolKind::Max, 3, 2, &n);
    n.add(pool)?;
    n.add(Conv::new(3, 16, 32, ConvGeom::cubic(3, 5, 1, 0), true, rng))?;
    n.add(BatchNorm::new(32))?.add(Relu)?;
    let pool = clamped_pool(PoolKind::Max, 3, 2, &n);
    n.add(pool)?.add(Flatten)?;
    let flat = n.shape[0];
    n.add(Linear::new(flat, 900, rng))?.add(Relu)?;
    n.finish(None)
}

/// Conv/BN/ReLU stack with average pooling after the first two blocks and global pooling at the end.
fn deephs(p: &BuildParams, widths: &[usize], hyve: bool, rng: &mut ChaCha8Rng) -> Result<Backbone> {
    let (stem, mut n) = if hyve {
        let mut cfg = WavelengthConvConfig::new(widths[0], 3, range(p, "deephs_net_hyve")?);
        cfg.pad = 1;
        let stem = wavelength_stem(cfg, rng)?;
        let shape = stem.output_shape(&spatial_input(p))?;
        (Some(stem), Net::after_stem(shape))
    } else {
        let mut n = Net::new(spatial_input(p));
        n.add(first_conv(2, p.bands, widths[0], ConvGeom::cubic(2, 3, 1, 1), true, rng))?;
        (None, n)
    };
    for (i, &w) in widths.iter().enumerate() {
        if i > 0 {
            let c = n.channels();
            n.add(conv2(c, w, 3, 1, 1, true, rng))?;
        }
        n.add(BatchNorm::new(w))?.add(Relu)?;
        if i < 2 {
            let pool = clamped_pool(PoolKind::Avg, 2, 4, &n);
            n.add(pool)?;
        }
    }
    n.add(GlobalAvgPool)?;
    n.finish(stem)
}

pub fn deephs_net(p: &BuildParams, rng: &mut ChaCha8Rng) -> Result<Backbone> {
    deephs(p, &[8, 32, 48], false, rng)
}

pub fn deephs_net_hyve(p: &BuildParams, rng: &mut ChaCha8Rng) -> Result<Backbone> {
    deephs(p, &[8, 32, 48], true, rng)
}

pub fn deephs_net_hyve_large(p: &BuildParams, rng: &mut ChaCha8Rng) -> Result<Backbone> {
    deephs(p, &[16, 64, 96, 96, 96], true, rng)
}

fn basic_block(cin: usize, cout: usize, stride: usize, rng: &mut ChaCha8Rng) -> Sequential<f32> {
    let main = Sequential::new()
        .with(conv2(cin, cout, 3, stride, 1, false, rng))
        .with(BatchNorm::new(cout))
        .with(Relu)
        .with(conv2(cout, cout, 3, 1, 1, false, rng))
        .with(BatchNorm::new(cout));
    let shortcut = (stride != 1 || cin != cout)
        .then(|| Sequential::new().with(conv2(cin, cout, 1, stride, 0, false, rng)).with(BatchNorm::new(cout)));
    Sequential::new().with(Residual { main, shortcut }).with(Relu)
}

fn bottleneck(cin: usize, width: usize, stride: usize, rng: &mut ChaCha8Rng) -> Sequential<f32> {
    let cout = width * 4;
    let main = Sequential::new()
        .with(conv2(cin, width, 1, 1, 0, false, rng))
        .with(BatchNorm::new(width))
        .with(Relu)
        .with(conv2(width, width, 3, stride, 1, false, rng))
        .with(BatchNorm::new(width))
        .with(Relu)
        .with(conv2(width, cout, 1, 1, 0, false, rng))
        .with(BatchNorm::new(cout));
    let shortcut = (stride != 1 || cin != cout)
        .then(|| Sequential::new().with(conv2(cin, cout, 1, stride, 0, false, rng)).with(BatchNorm::new(cout)));
    Sequential::new().with(Residual { main, shortcut }).with(Relu)
}

fn resnet(p: &BuildParams, blocks: [usize; 4], deep: bool, hyve: bool, rng: &mut ChaCha8Rng) -> Result<Backbone> {
    let (stem, mut n) = if hyve {
        let mut cfg = WavelengthConvConfig::new(64, 7, range(p, "resnet_hyve")?);
        cfg.stride = 2;
        cfg.pad = 3;
        cfg.bias = false;
        let stem = wavelength_stem(cfg, rng)?;
        let shape = stem.output_shape(&spatial_input(p))?;
        (Some(stem), Net::after_stem(shape))
    } else {
        let mut n = Net::new(spatial_input(p));
        n.add(first_conv(2, p.bands, 64, ConvGeom::cubic(2, 7, 2, 3), false, rng))?;
        (None, n)
    };
    n.add(BatchNorm::new(64))?.add(Relu)?;
    n.add(Pool::new(PoolKind::Max, 2, 3, 2, 1))?;
    let mut cin = 64;
    for (stage, &count) in blocks.iter().enumerate() {
        let width = 64 << stage;
        for b in 0..count {
            let stride = if stage > 0 && b == 0 { 2 } else { 1 };
            let block = if deep { bottleneck(cin, width, stride, rng) } else { basic_block(cin, width, stride, rng) };
            n.add(block)?;
            cin = if deep { width * 4 } else { width };
        }
    }
    n.add(GlobalAvgPool)?;
    n.finish(stem)
}

pub fn resnet18(p: &BuildParams, rng: &mut ChaCha8Rng) -> Result<Backbone> {
    resnet(p, [2, 2, 2, 2], false, false, rng)
}

pub fn resnet18_hyve(p: &BuildParams, rng: &mut ChaCha8Rng) -> Result<Backbone> {
    resnet(p, [2, 2, 2, 2], false, true, rng)
}

pub fn resnet152(p: &BuildParams, rng: &mut ChaCha8Rng) -> Result<Backbone> {
    resnet(p, [3, 8, 36, 3], true, false, rng)
}

pub fn resnet152_hyve(p: &BuildParams, rng: &mut ChaCha8Rng) -> Result<Backbone> {
    resnet(p, [3, 8, 36, 3], true, true, rng)
}

pub type ZooBuilder = fn(&BuildParams, &mut ChaCha8Rng) -> Result<Backbone>;

/// Builder for each built-in model name.
pub fn builders() -> Vec<(&'static str, ZooBuilder)> {
    vec![
        ("mlp", mlp as ZooBuilder),
        ("rnn", rnn),
        ("1d_cnn", cnn_1d),
        ("2d_cnn", cnn_2d),
        ("2d_cnn_spatial", cnn_2d_spatial),
        ("2d_cnn_spectral", cnn_2d_spectral),
        ("3d_cnn", cnn_3d),
        ("deephs_net", deephs_net),
        ("deephs_net_hyve", deephs_net_hyve),
        ("deephs_net_hyve_large", deephs_net_hyve_large),
        ("resnet18", resnet18),
        ("resnet18_hyve", resnet18_hyve),
        ("resnet152", resnet152),
        ("resnet152_hyve", resnet152_hyve),
    ]
}
