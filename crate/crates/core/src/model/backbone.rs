//! Feature extractors whose parameter paths match the torchvision module
//! names, so converted pretrained weights load by name.

use echo_nn::layers::{BatchNorm2d, Conv2d, GlobalAvgPool, MaxPool2d, Relu, Residual, Silu, SqueezeExcite};
use echo_nn::{Layer, Scalar, Sequential};
use rand::Rng;

use super::BackboneName;

const BN_EPS: f64 = 1e-5;

fn conv<T: Scalar>(
    inp: usize,
    out: usize,
    kernel: usize,
    stride: usize,
    groups: usize,
    rng: &mut impl Rng,
) -> Conv2d<T> {
    Conv2d::new(inp, out, kernel, stride, (kernel - 1) / 2, groups, false, rng)
}

/// The first convolution never needs a gradient with respect to the image.
fn stem_conv<T: Scalar>(inp: usize, out: usize, kernel: usize, stride: usize, rng: &mut impl Rng) -> Conv2d<T> {
    let mut c = conv(inp, out, kernel, stride, 1, rng);
    c.input_grad = false;
    c
}

pub(crate) fn build<T: Scalar>(name: BackboneName, rng: &mut impl Rng) -> Sequential<T> {
    match name {
        BackboneName::TinyCnn => tiny_cnn(rng),
        BackboneName::Resnet18 => resnet(&[2, 2, 2, 2], false, rng),
        BackboneName::Resnet50 => resnet(&[3, 4, 6, 3], true, rng),
        BackboneName::EfficientnetB0 => efficientnet(1.0, rng),
        BackboneName::EfficientnetB1 => efficientnet(1.1, rng),
    }
}

/// Four `conv3x3 → BN → ReLU → maxpool2` blocks (8/16/32/64 channels) and
/// global average pooling.
fn tiny_cnn<T: Scalar>(rng: &mut impl Rng) -> Sequential<T> {
    let mut features = Sequential::new();
    let mut inp = 3;
    for (i, &out) in [8, 16, 32, 64].iter().enumerate() {
        let c = if i == 0 {
            stem_conv(inp, out, 3, 1, rng)
        } else {
            conv(inp, out, 3, 1, 1, rng)
        };
        features.push_indexed(
            Sequential::new()
                .with("0", c)
                .with("1", BatchNorm2d::new(out, BN_EPS))
                .with("2", Relu::new())
                .with("3", MaxPool2d::new(2, 2, 0)),
        );
        inp = out;
    }
    Sequential::new()
        .with("features", features)
        .with("avgpool", GlobalAvgPool::new(false))
}

fn resnet<T: Scalar>(layers: &[usize; 4], bottleneck: bool, rng: &mut impl Rng) -> Sequential<T> {
    let expansion = if bottleneck { 4 } else { 1 };
    let mut net = Sequential::new()
        .with("conv1", stem_conv(3, 64, 7, 2, rng))
        .with("bn1", BatchNorm2d::new(64, BN_EPS))
        .with("relu", Relu::new())
        .with("maxpool", MaxPool2d::new(3, 2, 1));
    let mut inp = 64;
    for (stage, &blocks) in layers.iter().enumerate() {
        let planes = 64 << stage;
        let mut seq = Sequential::new();
        for b in 0..blocks {
            let stride = if b == 0 && stage > 0 { 2 } else { 1 };
            let out = planes * expansion;
            let body = if bottleneck {
                Sequential::new()
                    .with("conv1", conv(inp, planes, 1, 1, 1, rng))
                    .with("bn1", BatchNorm2d::new(planes, BN_EPS))
                    .with("relu1", Relu::new())
                    .with("conv2", conv(planes, planes, 3, stride, 1, rng))
                    .with("bn2", BatchNorm2d::new(planes, BN_EPS))
                    .with("relu2", Relu::new())
                    .with("conv3", conv(planes, out, 1, 1, 1, rng))
                    .with("bn3", BatchNorm2d::new(out, BN_EPS))
            } else {
                Sequential::new()
                    .with("conv1", conv(inp, planes, 3, stride, 1, rng))
                    .with("bn1", BatchNorm2d::new(planes, BN_EPS))
                    .with("relu1", Relu::new())
                    .with("conv2", conv(planes, planes, 3, 1, 1, rng))
                    .with("bn2", BatchNorm2d::new(planes, BN_EPS))
            };
            let shortcut = (stride != 1 || inp != out).then(|| {
                Sequential::new()
                    .with("0", conv(inp, out, 1, stride, 1, rng))
                    .with("1", BatchNorm2d::new(out, BN_EPS))
            });
            seq.push_indexed(Residual::new(body, shortcut, true));
            inp = out;
        }
        net.push(format!("layer{}", stage + 1), seq);
    }
    net.with("avgpool", GlobalAvgPool::new(false))
}

fn conv_bn_act<T: Scalar>(c: Conv2d<T>, act: bool) -> Sequential<T> {
    let out = c.out_channels();
    let s = Sequential::new().with("0", c).with("1", BatchNorm2d::new(out, BN_EPS));
    if act {
        s.with("2", Silu::new())
    } else {
        s
    }
}

/// Mobile inverted bottleneck with squeeze-excitation; residual when the
/// shape is preserved.
fn mbconv<T: Scalar>(
    inp: usize,
    out: usize,
    kernel: usize,
    stride: usize,
    expand: usize,
    rng: &mut impl Rng,
) -> Layer<T> {
    let hidden = inp * expand;
    let mut block = Sequential::new();
    if expand != 1 {
        block.push_indexed(conv_bn_act(conv(inp, hidden, 1, 1, 1, rng), true));
    }
    block.push_indexed(conv_bn_act(conv(hidden, hidden, kernel, stride, hidden, rng), true));
    block.push_indexed(SqueezeExcite::new(hidden, (inp / 4).max(1), rng));
    block.push_indexed(conv_bn_act(conv(hidden, out, 1, 1, 1, rng), false));
    let wrapped = Sequential::new().with("block", block);
    if stride == 1 && inp == out {
        Residual::new(wrapped, None, false).into()
    } else {
        wrapped.into()
    }
}

/// EfficientNet at width 1.0 with the given depth multiplier (B0: 1.0,
/// B1: 1.1). Stochastic depth is not applied.
fn efficientnet<T: Scalar>(depth: f64, rng: &mut impl Rng) -> Sequential<T> {
    // (expand, kernel, stride, in, out, layers)
    const STAGES: [(usize, usize, usize, usize, usize, usize); 7] = [
        (1, 3, 1, 32, 16, 1),
        (6, 3, 2, 16, 24, 2),
        (6, 5, 2, 24, 40, 2),
        (6, 3, 2, 40, 80, 3),
        (6, 5, 1, 80, 112, 3),
        (6, 5, 2, 112, 192, 4),
        (6, 3, 1, 192, 320, 1),
    ];
    let mut features = Sequential::new();
    features.push_indexed(conv_bn_act(stem_conv(3, 32, 3, 2, rng), true));
    for &(expand, kernel, stride, inp, out, layers) in &STAGES {
        let repeats = (layers as f64 * depth).ceil() as usize;
        let mut stage = Sequential::new();
        for j in 0..repeats {
            let (i, s) = if j == 0 { (inp, stride) } else { (out, 1) };
            stage.push_indexed(mbconv(i, out, kernel, s, expand, rng));
        }
        features.push_indexed(stage);
    }
    features.push_indexed(conv_bn_act(conv(320, 1280, 1, 1, 1, rng), true));
    Sequential::new()
        .with("features", features)
        .with("avgpool", GlobalAvgPool::new(false))
}
