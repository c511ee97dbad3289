//! Built-in reference suites: each fast path is compared against a direct
//! nested-loop implementation on random inputs.

#[path = "../../core/tests/common/mod.rs"]
mod oracles;

use dcf_core::filtering::{apply_filter, normalize_kernels, KernelField};
use dcf_core::gradsuite;
use dcf_core::linalg::Matrix;
use dcf_core::losses::{l1_loss, style_loss, FeatureExtractor};
use dcf_core::masks::{center_mask, irregular_mask, DEFAULT_COVERAGE};
use dcf_core::metrics::{frechet_distance, psnr, ssim, GaussianStats};
use dcf_core::model::{audit_schedule, DcfConfig, LAYER_TABLE};
use dcf_core::ops::conv::{conv2d, conv_transpose2d};
use dcf_core::ops::pool::avg_pool2;
use dcf_core::spectral::{irfft2, rfft2};
use dcf_core::{ConvSpec, Padding, Shape, Tape, Tensor};
use oracles::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Suite = Result<String, String>;

const CASES: usize = 25;

fn check(label: &str, err: f64, tol: f64) -> Result<(), String> {
    if err <= tol {
        Ok(())
    } else {
        Err(format!("{label}: error {err:e} > {tol:e}"))
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn conv(r: &mut ChaCha8Rng) -> Suite {
    let mut worst: f64 = 0.0;
    for _ in 0..CASES {
        let (cin, cout, k) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..5));
        let pad = Padding::new(
            r.random_range(0..3),
            r.random_range(0..3),
            r.random_range(0..3),
            r.random_range(0..3),
        );
        let spec = ConvSpec::conv(k, cin, cout).stride(r.random_range(1..3)).padding(pad);
        let x = Tensor::randn(
            Shape::new(2, cin, r.random_range(k..k + 6), r.random_range(k..k + 6)),
            1.0,
            r,
        );
        let w = Tensor::randn(spec.weight_shape(), 1.0, r);
        let b = Tensor::randn(spec.bias_shape(), 1.0, r);
        let got = conv2d(&x, &w, Some(&b), &spec).map_err(e2s)?;
        worst = worst.max(got.max_abs_diff(&conv2d_naive(&x, &w, Some(&b), &spec)));
    }
    check("conv2d", worst, 1e-12)?;
    Ok(format!("{CASES} cases, max diff {worst:.1e}"))
}

fn conv_transpose(r: &mut ChaCha8Rng) -> Suite {
    let mut worst: f64 = 0.0;
    for _ in 0..CASES {
        let (cin, cout, k) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..5));
        let st = r.random_range(1..3);
        let spec = ConvSpec::transposed(k, cin, cout)
            .stride(st)
            .pad(r.random_range(0..k))
            .output_padding(r.random_range(0..st));
        let x = Tensor::randn(Shape::new(1, cin, 6, 6), 1.0, r);
        let w = Tensor::randn(spec.weight_shape(), 1.0, r);
        let b = Tensor::randn(spec.bias_shape(), 1.0, r);
        let got = conv_transpose2d(&x, &w, Some(&b), &spec).map_err(e2s)?;
        worst = worst.max(got.max_abs_diff(&conv_transpose2d_naive(&x, &w, Some(&b), &spec)));
    }
    check("conv_transpose2d", worst, 1e-12)?;
    Ok(format!("{CASES} cases, max diff {worst:.1e}"))
}

fn pool(r: &mut ChaCha8Rng) -> Suite {
    let mut worst: f64 = 0.0;
    for _ in 0..CASES {
        let x = Tensor::randn(
            Shape::new(1, 3, 2 * r.random_range(1..6), 2 * r.random_range(1..6)),
            1.0,
            r,
        );
        worst = worst.max(avg_pool2(&x).map_err(e2s)?.max_abs_diff(&avg_pool2_naive(&x)));
    }
    check("avg_pool2", worst, 1e-12)?;
    Ok(format!("{CASES} cases, max diff {worst:.1e}"))
}

fn filter(r: &mut ChaCha8Rng) -> Suite {
    let mut worst: f64 = 0.0;
    for case in 0..CASES {
        let n = [1, 3, 5, 7][case % 4];
        let (h, w) = (r.random_range(1..9), r.random_range(1..9));
        let f = Tensor::randn(Shape::new(1, 4, h, w), 1.0, r);
        let logits = Tensor::randn(Shape::new(1, n * n, h, w), 2.0, r);
        let field = normalize_kernels(&KernelField::new(logits).map_err(e2s)?);
        let got = apply_filter(&f, &field).map_err(e2s)?;
        worst = worst.max(got.max_abs_diff(&filter_naive(&f, field.weights())));
    }
    check("apply_filter", worst, 1e-12)?;
    Ok(format!("{CASES} cases, max diff {worst:.1e}"))
}

fn fft(r: &mut ChaCha8Rng) -> Suite {
    let (mut dft, mut round_trip) = (0.0f64, 0.0f64);
    for _ in 0..CASES {
        let (h, w) = (1usize << r.random_range(1..5), 1usize << r.random_range(1..5));
        let x = Tensor::randn(Shape::new(1, 1, h, w), 1.0, r);
        let s = rfft2(&x).map_err(e2s)?;
        let (re, im) = dft2_naive(x.data(), h, w);
        for k in 0..h {
            for l in 0..w / 2 + 1 {
                let (a, b) = s.get(0, 0, k, l);
                dft = dft.max((a - re[k * w + l]).abs()).max((b - im[k * w + l]).abs());
            }
        }
        round_trip = round_trip.max(irfft2(&s, h, w).map_err(e2s)?.max_abs_diff(&x));
    }
    check("rfft2 vs DFT", dft, 1e-8)?;
    check("round trip", round_trip, 1e-10)?;
    Ok(format!(
        "{CASES} cases, DFT diff {dft:.1e}, round trip {round_trip:.1e}"
    ))
}

fn losses(r: &mut ChaCha8Rng) -> Suite {
    let mut ext = FeatureExtractor::default();
    let (mut l1w, mut stylew) = (0.0f64, 0.0f64);
    for _ in 0..CASES / 5 {
        let shape = Shape::new(1, 3, 16, 16);
        let a = Tensor::rand_uniform(shape, -1.0, 1.0, r);
        let b = Tensor::rand_uniform(shape, -1.0, 1.0, r);
        let mut tape = Tape::inference();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let l1 = l1_loss(&mut tape, va, vb).map_err(e2s)?;
        l1w = l1w.max((tape.value(l1).data()[0] - mean_abs_naive(a.data(), b.data())).abs());
        let fa = ext.features(&mut tape, va).map_err(e2s)?;
        let fb = ext.features(&mut tape, vb).map_err(e2s)?;
        let style = style_loss(&mut tape, &fa, &fb).map_err(e2s)?;
        let want: f64 = fa
            .iter()
            .zip(&fb)
            .map(|(&p, &q)| mean_abs_naive(&gram_naive(tape.value(p), 0), &gram_naive(tape.value(q), 0)))
            .sum();
        stylew = stylew.max((tape.value(style).data()[0] - want).abs());
    }
    check("l1", l1w, 1e-12)?;
    check("style", stylew, 1e-12)?;
    Ok(format!("l1 diff {l1w:.1e}, style diff {stylew:.1e}"))
}

fn metrics(r: &mut ChaCha8Rng) -> Suite {
    let (mut ps, mut ss, mut fr) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..CASES {
        let shape = Shape::new(1, 3, r.random_range(11..20), r.random_range(11..20));
        let a = Tensor::rand_uniform(shape, 0.0, 1.0, r);
        let noise = Tensor::randn(shape, 0.1, r);
        let b = a.zip_map(&noise, |x, n| (x + n).clamp(0.0, 1.0)).map_err(e2s)?;
        let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.numel() as f64;
        ps = ps.max((psnr(&a, &b, 1.0).map_err(e2s)?.db() + 10.0 * mse.log10()).abs());
        ss = ss.max((ssim(&a, &b, 1.0).map_err(e2s)? - ssim_naive(&a, &b, 1.0)).abs());

        let n = r.random_range(1..7);
        let (ca, cb) = (random_spd(n, r), random_spd(n, r));
        let ma: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let mb: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let sa = GaussianStats {
            mean: ma.clone(),
            cov: Matrix::from_vec(n, ca.clone()).map_err(e2s)?,
            n: 10,
        };
        let sb = GaussianStats {
            mean: mb.clone(),
            cov: Matrix::from_vec(n, cb.clone()).map_err(e2s)?,
            n: 10,
        };
        fr = fr.max((frechet_distance(&sa, &sb).map_err(e2s)? - frechet_naive(&ma, &ca, &mb, &cb)).abs());
    }
    check("psnr", ps, 1e-12)?;
    check("ssim", ss, 1e-12)?;
    check("frechet", fr, 1e-6)?;
    Ok(format!("psnr {ps:.1e}, ssim {ss:.1e}, frechet {fr:.1e}"))
}

fn masks() -> Suite {
    let (mut lo, mut hi) = (1.0f64, 0.0f64);
    for seed in 0..500 {
        let c = irregular_mask(64, 64, seed, DEFAULT_COVERAGE).map_err(e2s)?.coverage();
        if !(0.2..=0.4).contains(&c) {
            return Err(format!("seed {seed}: coverage {c}"));
        }
        lo = lo.min(c);
        hi = hi.max(c);
    }
    let c = center_mask(256, 256).map_err(e2s)?.coverage();
    if c != 0.25 {
        return Err(format!("center coverage {c}"));
    }
    Ok(format!("500 irregular masks in [{lo:.3}, {hi:.3}], center 0.25"))
}

fn audit() -> Suite {
    let rows = audit_schedule(&DcfConfig::with_resolution(256)).map_err(e2s)?;
    if rows.len() != LAYER_TABLE.len() {
        return Err(format!("{} rows, expected {}", rows.len(), LAYER_TABLE.len()));
    }
    if let Some(bad) = rows.iter().find(|row| !row.matches()) {
        return Err(format!("{}: expected {}, got {}", bad.name, bad.expected, bad.actual));
    }
    Ok(format!("{} layers match at 256x256", rows.len()))
}

fn gradients() -> Suite {
    let outcomes = gradsuite::run("all").map_err(e2s)?;
    if let Some(bad) = outcomes.iter().find(|o| !o.passed()) {
        return Err(format!(
            "{}: {:.2e} >= {:.0e}",
            bad.name, bad.report.max_relative_error, bad.tolerance
        ));
    }
    let worst = outcomes.iter().map(|o| o.report.max_relative_error).fold(0.0, f64::max);
    Ok(format!("{} checks, worst {worst:.1e}", outcomes.len()))
}

pub fn run_all() -> Vec<(&'static str, Suite)> {
    let mut r = rng(0x5e1f);
    vec![
        ("conv2d", conv(&mut r)),
        ("conv_transpose2d", conv_transpose(&mut r)),
        ("avg_pool2", pool(&mut r)),
        ("filter", filter(&mut r)),
        ("fft", fft(&mut r)),
        ("losses", losses(&mut r)),
        ("psnr/ssim/frechet", metrics(&mut r)),
        ("masks", masks()),
        ("shape audit", audit()),
        ("gradients", gradients()),
    ]
}
