use dcf_core::masks::{center_mask, MaskGrid};
use dcf_core::pipeline::adam::{adam_update, clip_grad_norm, Adam};
use dcf_core::pipeline::checkpoint::{Checkpoint, MAGIC};
use dcf_core::pipeline::config::{MaskMode, TrainConfig, CONFIG_KEYS};
use dcf_core::pipeline::data::{byte_to_unit, load_dataset, read_mask, save_dataset, write_image, write_mask};
use dcf_core::pipeline::train::{curve_csv, mean_fill, CURVE_HEADER};
use dcf_core::pipeline::{evaluate, load_checkpoint, save_checkpoint, synthetic_textures, Trainer};
use dcf_core::{ParamKind, ParamStore, Shape, Tensor};
use proptest::prelude::*;

fn tiny_config(adversarial: bool) -> TrainConfig {
    let mut c = TrainConfig::desk();
    c.resolution = 16;
    c.batch_size = 2;
    c.iterations = 6;
    c.seed = 11;
    c.adversarial = adversarial;
    c.ffc_blocks = 2;
    c
}

#[test]
fn config_keys_all_settable() {
    let mut c = TrainConfig::desk();
    let values = [
        ("preset", "desk"),
        ("resolution", "32"),
        ("batch_size", "2"),
        ("iterations", "10"),
        ("learning_rate", "0.001"),
        ("seed", "9"),
        ("lambda_l1", "2"),
        ("lambda_adv", "0"),
        ("lambda_perceptual", "0.5"),
        ("lambda_style", "100"),
        ("mask_mode", "center"),
        ("adversarial", "false"),
        ("checkpoint_interval", "5"),
        ("grad_clip", "1.0"),
        ("model", "no_lfu,ffc_blocks=3"),
    ];
    assert_eq!(values.len(), CONFIG_KEYS.len());
    for ((k, v), (key, _)) in values.iter().zip(CONFIG_KEYS) {
        assert_eq!(*k, key);
        c.set(k, v).unwrap();
    }
    assert_eq!(c.resolution, 32);
    assert_eq!(c.mask_mode, MaskMode::Center);
    assert!(!c.enable_lfu);
    assert_eq!(c.ffc_blocks, 3);
    assert_eq!(c.grad_clip, Some(1.0));
    assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
}

#[test]
fn config_validation() {
    assert!(TrainConfig::parse("resolution=48").is_err());
    assert!(TrainConfig::parse("resolution=8\nadversarial=true").is_err());
    assert!(TrainConfig::parse("resolution=8\nadversarial=false").is_ok());
    assert!(TrainConfig::parse("mask_mode=stripes").is_err());
    assert!(TrainConfig::parse("adversarial=maybe").is_err());
    assert!(TrainConfig::parse("just words").is_err());
    let c = TrainConfig::parse("# comment only\n\nseed = 4 # trailing\n").unwrap();
    assert_eq!(c.seed, 4);
}

#[test]
fn adam_first_step_closed_form() {
    let (mut p, g) = (vec![1.0, -2.0], vec![0.5, -0.25]);
    let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
    adam_update(&mut p, &g, &mut m, &mut v, 0.1, 0.9, 0.999, 1e-8, 1);
    // After bias correction the first step is lr * sign(g) up to eps.
    assert!((p[0] - 0.9).abs() < 1e-7);
    assert!((p[1] + 1.9).abs() < 1e-7);
    assert!((m[0] - 0.05).abs() < 1e-15);
    assert!((v[0] - 0.00025).abs() < 1e-15);
}

#[test]
fn adam_skips_frozen_and_buffers() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::full(Shape::new(1, 1, 1, 2), 1.0), ParamKind::Trainable);
    let b = store.add("b", Tensor::full(Shape::new(1, 1, 1, 2), 1.0), ParamKind::Buffer);
    for p in store.params_mut() {
        p.grad = Tensor::full(p.value.shape(), 1.0);
    }
    let mut opt = Adam::new(&store, 0.5);
    opt.step(&mut store).unwrap();
    assert!(store.get(w).data()[0] < 1.0);
    assert_eq!(store.get(b).data(), &[1.0, 1.0]);
    assert_eq!(opt.state.t, 1);
}

#[test]
fn grad_clipping() {
    let mut store = ParamStore::new();
    store.add("w", Tensor::zeros(Shape::new(1, 1, 1, 2)), ParamKind::Trainable);
    store.params_mut()[0].grad = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![3.0, 4.0]).unwrap();
    assert_eq!(clip_grad_norm(&mut store, 1.0), 5.0);
    let g = store.params()[0].grad.data().to_vec();
    assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
}

#[test]
fn training_is_deterministic_and_resumable() {
    let data = synthetic_textures(4, 16, 3).unwrap();
    let config = tiny_config(true);

    let mut a = Trainer::new(config.clone()).unwrap();
    let curve_a = a.run(&data, |_, _| Ok(())).unwrap();
    let mut b = Trainer::new(config.clone()).unwrap();
    let curve_b = b.run(&data, |_, _| Ok(())).unwrap();
    assert_eq!(curve_a, curve_b);
    assert!(a.net.params.values_identical(&b.net.params));

    // Stop halfway, persist, restore, finish.
    let mut c = Trainer::new(config).unwrap();
    for _ in 0..3 {
        c.step(&data).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ckpt");
    save_checkpoint(&path, &c.checkpoint()).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, c.checkpoint());
    let mut d = Trainer::from_checkpoint(&loaded).unwrap();
    let tail = d.run(&data, |_, _| Ok(())).unwrap();
    assert_eq!(tail.len(), 3);
    assert_eq!(tail, curve_a[3..].to_vec());
    assert!(d.net.params.values_identical(&a.net.params));
    assert!(d.disc.params.values_identical(&a.disc.params));
    assert!(d.opt_g.state.bitwise_eq(&a.opt_g.state));
    assert!(d.opt_d.state.bitwise_eq(&a.opt_d.state));
}

#[test]
fn training_reduces_loss_on_one_image() {
    let data = synthetic_textures(1, 16, 5).unwrap();
    let mut config = tiny_config(false);
    config.batch_size = 1;
    config.mask_mode = MaskMode::Center;
    config.learning_rate = 1e-3;
    config.iterations = 30;
    let mut t = Trainer::new(config).unwrap();
    let mask = center_mask(16, 16).unwrap();
    let first = t.train_step(&data.images[0], std::slice::from_ref(&mask)).unwrap();
    let mut last = first;
    for _ in 1..30 {
        last = t.train_step(&data.images[0], std::slice::from_ref(&mask)).unwrap();
    }
    assert!(last.l1 < 0.5 * first.l1, "{} -> {}", first.l1, last.l1);
    assert_eq!(first.adversarial, 0.0);
}

#[test]
fn checkpoint_byte_format() {
    let t = Trainer::new(tiny_config(true)).unwrap();
    let bytes = t.checkpoint().to_bytes();
    assert_eq!(&bytes[..8], MAGIC);
    assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), t.checkpoint());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut long = bytes.clone();
    long.push(0);
    assert!(Checkpoint::from_bytes(&long).is_err());
    let mut version = bytes;
    version[8] = 99;
    assert!(Checkpoint::from_bytes(&version).is_err());
}

#[test]
fn checkpoint_rejects_other_architecture() {
    let ckpt = Trainer::new(tiny_config(false)).unwrap().checkpoint();
    let mut other = ckpt.clone();
    other.config.ffc_blocks = 1;
    assert!(Trainer::from_checkpoint(&other).is_err());
}

#[test]
fn curve_csv_format() {
    let data = synthetic_textures(2, 16, 1).unwrap();
    let mut config = tiny_config(false);
    config.iterations = 2;
    let mut t = Trainer::new(config).unwrap();
    let curve = t.run(&data, |_, _| Ok(())).unwrap();
    let csv = curve_csv(&curve);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CURVE_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,"));
    assert_eq!(lines[2].split(',').count(), 6);
}

#[test]
fn dataset_io_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_textures(3, 16, 2).unwrap();
    save_dataset(dir.path(), &data).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), 3);
    assert_eq!(back.names[0], "texture_0000.png");
    // Synthetic textures are already 8-bit quantized.
    for (a, b) in data.images.iter().zip(&back.images) {
        assert_eq!(a, b);
    }
    let m = center_mask(16, 16).unwrap();
    let mp = dir.path().join("mask.png");
    write_mask(&mp, &m).unwrap();
    assert_eq!(read_mask(&mp).unwrap(), m);
    let empty = tempfile::tempdir().unwrap();
    assert!(load_dataset(empty.path()).is_err());
    let odd = tempfile::tempdir().unwrap();
    write_image(&odd.path().join("a.png"), &Tensor::zeros(Shape::new(1, 3, 16, 16))).unwrap();
    write_image(&odd.path().join("b.png"), &Tensor::zeros(Shape::new(1, 3, 8, 8))).unwrap();
    assert!(load_dataset(odd.path()).is_err());
}

#[test]
fn evaluation_reports_all_fills() {
    let data = synthetic_textures(2, 16, 4).unwrap();
    let mut t = Trainer::new(tiny_config(false)).unwrap();
    let report = evaluate(&mut t.net, &data, MaskMode::Irregular, &[1, 2], &mut t.extractor).unwrap();
    assert_eq!(report.samples, 4);
    let kv = report.to_kv();
    for key in ["model.psnr_holes=", "mid_gray.ssim_full=", "mean_fill.frechet="] {
        assert!(kv.contains(key), "{kv}");
    }
    assert!(report.model.psnr_holes.db().is_finite() && report.mean_fill.frechet >= 0.0);
    assert!(evaluate(&mut t.net, &data, MaskMode::Center, &[], &mut t.extractor).is_err());
}

#[test]
fn mean_fill_uses_known_pixels() {
    let mut x = Tensor::zeros(Shape::new(1, 1, 2, 2));
    x.set(0, 0, 0, 0, 0.4);
    x.set(0, 0, 0, 1, 0.8);
    let mask = MaskGrid::from_vec(2, 2, vec![1, 1, 0, 0]).unwrap().to_tensor();
    let out = mean_fill(&x, &mask);
    assert!((out.at(0, 0, 1, 0) - 0.6).abs() < 1e-15);
    assert_eq!(out.at(0, 0, 0, 0), 0.4);
}

proptest! {
    #[test]
    fn byte_mapping_is_affine(v in any::<u8>()) {
        let u = byte_to_unit(v);
        prop_assert!((-1.0..=1.0).contains(&u));
        prop_assert!((u - (v as f64 / 127.5 - 1.0)).abs() < 1e-15);
    }
}
