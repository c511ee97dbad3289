mod common;

use common::*;
use dcf_core::ffc::{FfcConfig, FfcLayer, FfcResBlock, FourierUnit, SpectralTransform};
use dcf_core::nn::{Activation, Session};
use dcf_core::params::ParamKind;
use dcf_core::{ParamStore, Shape, Tape, Tensor};

fn eval<F>(store: &mut ParamStore, x: &Tensor, f: F) -> Tensor
where
    F: FnOnce(&mut Session, dcf_core::Var) -> dcf_core::Result<dcf_core::Var>,
{
    let mut tape = Tape::inference();
    let v = tape.constant(x.clone());
    let mut s = Session::new(&mut tape, store, true);
    let y = f(&mut s, v).unwrap();
    tape.value(y).clone()
}

#[test]
fn fourier_unit_with_identity_conv_is_identity() {
    let mut store = ParamStore::new();
    let fu = FourierUnit::with_options(&mut store, "fu", 3, false, Activation::Identity, &mut rng(0));
    let w = store.get_mut(fu.conv.weight);
    *w = Tensor::from_fn(w.shape(), |o, i, _, _| if o == i { 1.0 } else { 0.0 });
    for side in [8, 16] {
        let x = Tensor::randn(Shape::new(2, 3, side, side), 1.0, &mut rng(side as u64));
        let y = eval(&mut store, &x, |s, v| fu.forward(s, v));
        assert!(y.max_abs_diff(&x) < 1e-10);
    }
}

#[test]
fn fourier_unit_shapes() {
    let mut store = ParamStore::new();
    let fu = FourierUnit::new(&mut store, "fu", 4, &mut rng(1));
    for side in [16, 64] {
        let x = Tensor::randn(Shape::new(1, 4, side, side), 1.0, &mut rng(2));
        assert_eq!(eval(&mut store, &x, |s, v| fu.forward(s, v)).shape(), x.shape());
    }
}

#[test]
fn fourier_unit_receptive_field_is_global() {
    let mut store = ParamStore::new();
    // Without the nonlinearity an impulse only reaches its mirror pixel.
    let fu = FourierUnit::with_options(&mut store, "fu", 2, false, Activation::Relu, &mut rng(3));
    let x = Tensor::randn(Shape::new(1, 2, 8, 8), 1.0, &mut rng(4));
    let mut x2 = x.clone();
    x2.set(0, 0, 3, 5, x.at(0, 0, 3, 5) + 1.0);
    let (a, b) = (
        eval(&mut store, &x, |s, v| fu.forward(s, v)),
        eval(&mut store, &x2, |s, v| fu.forward(s, v)),
    );
    let changed = a
        .data()
        .iter()
        .zip(b.data())
        .filter(|(p, q)| (*p - *q).abs() > 1e-12)
        .count();
    // Every pixel of at least one channel moves.
    assert!(changed >= 64, "only {changed} outputs changed");
}

#[test]
fn spectral_transform_shapes_and_lfu_switch() {
    let x = Tensor::randn(Shape::new(1, 8, 16, 16), 1.0, &mut rng(5));
    let mut s1 = ParamStore::new();
    let with = SpectralTransform::new(&mut s1, "st", 8, 8, true, &mut rng(6)).unwrap();
    let mut s2 = ParamStore::new();
    let without = SpectralTransform::new(&mut s2, "st", 8, 8, false, &mut rng(6)).unwrap();
    let a = eval(&mut s1, &x, |s, v| with.forward(s, v));
    let b = eval(&mut s2, &x, |s, v| without.forward(s, v));
    assert_eq!(a.shape(), x.shape());
    assert_eq!(b.shape(), x.shape());
    assert!(a.max_abs_diff(&b) > 1e-6);
}

#[test]
fn layer_channel_bookkeeping() {
    let config = FfcConfig::new(256);
    assert_eq!((config.local_channels(), config.global_channels()), (128, 128));
    let mut store = ParamStore::new();
    let layer = FfcLayer::new(&mut store, "l", config, &mut rng(7)).unwrap();
    let mut tape = Tape::inference();
    let xl = tape.constant(Tensor::randn(Shape::new(1, 128, 8, 8), 1.0, &mut rng(8)));
    let xg = tape.constant(Tensor::randn(Shape::new(1, 128, 8, 8), 1.0, &mut rng(9)));
    let mut s = Session::new(&mut tape, &mut store, true);
    let (yl, yg) = layer.forward(&mut s, xl, xg).unwrap();
    assert_eq!(tape.shape(yl), Shape::new(1, 128, 8, 8));
    assert_eq!(tape.shape(yg), Shape::new(1, 128, 8, 8));
}

#[test]
fn layer_maps_zero_to_zero() {
    let mut store = ParamStore::new();
    let layer = FfcLayer::new(&mut store, "l", FfcConfig::new(16), &mut rng(10)).unwrap();
    let mut tape = Tape::inference();
    let z = tape.constant(Tensor::zeros(Shape::new(1, 8, 8, 8)));
    // Eval mode: running statistics are (0, 1), so zero stays zero.
    let mut s = Session::new(&mut tape, &mut store, false);
    let (yl, yg) = layer.forward(&mut s, z, z).unwrap();
    assert!(tape
        .value(yl)
        .data()
        .iter()
        .chain(tape.value(yg).data())
        .all(|&v| v == 0.0));
}

#[test]
fn res_block_with_zero_weights_is_identity() {
    let mut store = ParamStore::new();
    let block = FfcResBlock::new(&mut store, "b", FfcConfig::new(16), &mut rng(11)).unwrap();
    for p in store.params_mut() {
        if p.kind == ParamKind::Trainable && p.name.ends_with("weight") {
            p.value = Tensor::zeros(p.value.shape());
        }
    }
    let x = Tensor::randn(Shape::new(1, 16, 8, 8), 1.0, &mut rng(12));
    let mut tape = Tape::inference();
    let v = tape.constant(x.clone());
    let mut s = Session::new(&mut tape, &mut store, false);
    let y = block.forward(&mut s, v).unwrap();
    assert_eq!(tape.value(y), &x);
}

#[test]
fn res_block_preserves_reference_shape() {
    let mut store = ParamStore::new();
    let block = FfcResBlock::new(&mut store, "b", FfcConfig::new(256), &mut rng(13)).unwrap();
    let x = Tensor::randn(Shape::new(1, 256, 64, 64), 1.0, &mut rng(14));
    let y = eval(&mut store, &x, |s, v| block.forward(s, v));
    assert_eq!(y.shape(), x.shape());
}

#[test]
fn config_validation() {
    assert!(FfcConfig {
        channels: 256,
        global_ratio: 0.0,
        enable_lfu: true
    }
    .validate()
    .is_err());
    assert!(FfcConfig {
        channels: 2,
        global_ratio: 0.5,
        enable_lfu: true
    }
    .validate()
    .is_err());
    assert!(FfcConfig {
        channels: 8,
        global_ratio: 0.5,
        enable_lfu: false
    }
    .validate()
    .is_ok());
}
