//! Named finite-difference checks over every differentiable layer, block
//! and loss, shared by the test suite and the command-line tool.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::ffc::{FfcConfig, FfcLayer, FfcResBlock, FourierUnit, SpectralTransform};
use crate::gradcheck::{finite_diff_check, finite_diff_check_params, finite_diff_check_sampled, GradCheckReport};
use crate::losses::{self, AdversarialRole, FeatureExtractor, LossWeights, PatchDiscriminator};
use crate::masks::center_mask;
use crate::model::{DcfConfig, DcfNet};
use crate::nn::{BatchNorm, Session};
use crate::ops::conv::{ConvSpec, Padding};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::{Shape, Tensor};

pub const STEP: f64 = 1e-5;
pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const NETWORK_TOLERANCE: f64 = 1e-3;

/// Modules accepted by [`run`], in execution order.
pub const MODULES: [&str; 7] = ["tensor", "spectral", "filtering", "ffc", "losses", "model", "all"];

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub report: GradCheckReport,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.report.passes(self.tolerance)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: Shape, seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

/// Up to `per_param` entries from every trainable tensor of `store`.
fn param_coords(store: &ParamStore, per_param: usize, seed: u64) -> Vec<(ParamId, usize)> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for id in store.ids() {
        let p = store.param(id);
        if p.kind != ParamKind::Trainable {
            continue;
        }
        let n = p.value.numel();
        for e in sample(&mut r, n, per_param.min(n)).into_iter() {
            out.push((id, e));
        }
    }
    out
}

fn merge(a: GradCheckReport, b: GradCheckReport) -> GradCheckReport {
    let worst = if b.max_relative_error > a.max_relative_error {
        b.worst
    } else {
        a.worst
    };
    GradCheckReport {
        max_relative_error: a.max_relative_error.max(b.max_relative_error),
        checked: a.checked + b.checked,
        worst,
    }
}

fn outcome(name: &'static str, report: GradCheckReport) -> CheckOutcome {
    CheckOutcome {
        name,
        report,
        tolerance: LAYER_TOLERANCE,
    }
}

/// Checks a layer with respect to its input (all or `sampled` elements)
/// and a sample of its parameters.
fn check_layer<F>(
    name: &'static str,
    store: &mut ParamStore,
    input: Tensor,
    sampled: Option<usize>,
    forward: F,
) -> Result<CheckOutcome>
where
    F: Fn(&mut Session, Var) -> Result<Var>,
{
    let x = input.clone();
    let mut s2 = store.clone();
    let by_input = finite_diff_check_sampled(
        |tape: &mut Tape, v: &[Var]| {
            let mut s = Session::new(tape, &mut s2, true);
            forward(&mut s, v[0])
        },
        &[input],
        STEP,
        sampled,
        1,
    )?;
    let coords = param_coords(store, 3, 2);
    let by_param = finite_diff_check_params(
        |s: &mut Session| {
            let v = s.tape.constant(x.clone());
            forward(s, v)
        },
        store,
        &coords,
        STEP,
    )?;
    Ok(outcome(name, merge(by_input, by_param)))
}

fn tensor_checks() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let spec = ConvSpec::conv(3, 2, 3).pad(1);
    let r = finite_diff_check(
        |t: &mut Tape, v: &[Var]| t.conv2d(v[0], v[1], Some(v[2]), spec),
        &[
            randn(Shape::new(1, 2, 6, 6), 1),
            randn(spec.weight_shape(), 2),
            randn(spec.bias_shape(), 3),
        ],
        STEP,
    )?;
    out.push(outcome("conv2d", r));

    let spec = ConvSpec::conv(4, 2, 2).stride(2).padding(Padding::new(1, 2, 0, 1));
    let r = finite_diff_check(
        |t: &mut Tape, v: &[Var]| t.conv2d(v[0], v[1], None, spec),
        &[randn(Shape::new(2, 2, 7, 6), 4), randn(spec.weight_shape(), 5)],
        STEP,
    )?;
    out.push(outcome("conv2d_strided_asymmetric", r));

    let spec = ConvSpec::transposed(4, 2, 3).stride(2).pad(1);
    let r = finite_diff_check(
        |t: &mut Tape, v: &[Var]| t.conv_transpose2d(v[0], v[1], Some(v[2]), spec),
        &[
            randn(Shape::new(1, 2, 4, 4), 6),
            randn(spec.weight_shape(), 7),
            randn(spec.bias_shape(), 8),
        ],
        STEP,
    )?;
    out.push(outcome("conv_transpose2d", r));

    let spec = ConvSpec::transposed(7, 2, 1).stride(2).pad(3).output_padding(1);
    let r = finite_diff_check(
        |t: &mut Tape, v: &[Var]| t.conv_transpose2d(v[0], v[1], None, spec),
        &[randn(Shape::new(1, 2, 3, 3), 9), randn(spec.weight_shape(), 10)],
        STEP,
    )?;
    out.push(outcome("conv_transpose2d_output_padding", r));

    let r = finite_diff_check(
        |t: &mut Tape, v: &[Var]| t.avg_pool2(v[0]),
        &[randn(Shape::new(1, 2, 4, 6), 11)],
        STEP,
    )?;
    out.push(outcome("avg_pool2", r));

    let r = finite_diff_check(
        |t: &mut Tape, v: &[Var]| {
            let a = t.tanh(v[0])?;
            let b = t.leaky_relu(v[1], 0.2)?;
            let c = t.concat_channels(a, b)?;
            let d = t.narrow_channels(c, 1, 2)?;
            t.mul(d, d)
        },
        &[randn(Shape::new(1, 2, 3, 3), 12), randn(Shape::new(1, 1, 3, 3), 13)],
        STEP,
    )?;
    out.push(outcome("activations_and_layout", r));

    let mut store = ParamStore::new();
    let bn = BatchNorm::new(&mut store, "bn", 3);
    // Move gamma and beta away from their initial values.
    *store.get_mut(bn.gamma) = randn(Shape::new(1, 3, 1, 1), 14);
    *store.get_mut(bn.beta) = randn(Shape::new(1, 3, 1, 1), 15);
    out.push(check_layer(
        "batch_norm",
        &mut store,
        randn(Shape::new(2, 3, 3, 3), 16),
        None,
        |s, x| bn.forward(s, x),
    )?);
    Ok(out)
}

fn spectral_checks() -> Result<Vec<CheckOutcome>> {
    let r = finite_diff_check(
        |t: &mut Tape, v: &[Var]| t.rfft2_stacked(v[0]),
        &[randn(Shape::new(1, 2, 4, 8), 20)],
        STEP,
    )?;
    let mut out = vec![outcome("rfft2", r)];
    let r = finite_diff_check(
        |t: &mut Tape, v: &[Var]| t.irfft2_stacked(v[0], 8, 4),
        &[randn(Shape::new(1, 4, 8, 3), 21)],
        STEP,
    )?;
    out.push(outcome("irfft2", r));
    Ok(out)
}

fn filtering_checks() -> Result<Vec<CheckOutcome>> {
    let r = finite_diff_check(
        |t: &mut Tape, v: &[Var]| t.apply_filter(v[0], v[1]),
        &[
            randn(Shape::new(1, 2, 5, 5), 30),
            Tensor::rand_uniform(Shape::new(1, 9, 5, 5), 0.0, 1.0, &mut rng(31)),
        ],
        STEP,
    )?;
    let mut out = vec![outcome("apply_filter", r)];
    let r = finite_diff_check(
        |t: &mut Tape, v: &[Var]| {
            let k = t.softmax_channels(v[1])?;
            t.apply_filter(v[0], k)
        },
        &[randn(Shape::new(2, 3, 4, 4), 32), randn(Shape::new(2, 9, 4, 4), 33)],
        STEP,
    )?;
    out.push(outcome("softmax_kernels_then_filter", r));
    Ok(out)
}

fn ffc_checks() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    // With batch statistics and a single item, the corner pixel only moves
    // every frequency bin by the same amount, which the norm removes. Two
    // items keep that gradient away from exact zero.
    let mut store = ParamStore::new();
    let fu = FourierUnit::new(&mut store, "fu", 4, &mut rng(40));
    out.push(check_layer(
        "fourier_unit",
        &mut store,
        randn(Shape::new(2, 4, 8, 8), 41),
        None,
        |s, x| fu.forward(s, x),
    )?);

    let mut store = ParamStore::new();
    let st = SpectralTransform::new(&mut store, "st", 8, 8, true, &mut rng(42))?;
    out.push(check_layer(
        "spectral_transform",
        &mut store,
        randn(Shape::new(2, 8, 8, 8), 43),
        None,
        |s, x| st.forward(s, x),
    )?);

    let config = FfcConfig::new(16);
    let mut store = ParamStore::new();
    let layer = FfcLayer::new(&mut store, "ffc", config, &mut rng(44))?;
    out.push(check_layer(
        "ffc_layer",
        &mut store,
        randn(Shape::new(1, 16, 8, 8), 45),
        Some(96),
        |s, x| {
            let l = s.tape.narrow_channels(x, 0, 8)?;
            let g = s.tape.narrow_channels(x, 8, 8)?;
            let (a, b) = layer.forward(s, l, g)?;
            s.tape.concat_channels(a, b)
        },
    )?);

    let mut store = ParamStore::new();
    let block = FfcResBlock::new(&mut store, "res", config, &mut rng(46))?;
    out.push(check_layer(
        "ffc_res_block",
        &mut store,
        randn(Shape::new(1, 16, 8, 8), 47),
        Some(96),
        |s, x| block.forward(s, x),
    )?);
    Ok(out)
}

fn loss_checks() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let shape = Shape::new(1, 3, 16, 16);
    let (p, t) = (randn(shape, 50).scale(0.5), randn(shape, 51).scale(0.5));
    let r = finite_diff_check(
        |tape: &mut Tape, v: &[Var]| losses::l1_loss(tape, v[0], v[1]),
        &[p.clone(), t.clone()],
        STEP,
    )?;
    out.push(outcome("l1_loss", r));

    let mut ext = FeatureExtractor::default();
    let r = finite_diff_check_sampled(
        |tape: &mut Tape, v: &[Var]| {
            let target = tape.constant(t.clone());
            let fp = ext.features(tape, v[0])?;
            let ft = ext.features(tape, target)?;
            losses::perceptual_loss(tape, &fp, &ft)
        },
        std::slice::from_ref(&p),
        STEP,
        Some(128),
        52,
    )?;
    out.push(outcome("perceptual_loss", r));

    let r = finite_diff_check_sampled(
        |tape: &mut Tape, v: &[Var]| {
            let target = tape.constant(t.clone());
            let fp = ext.features(tape, v[0])?;
            let ft = ext.features(tape, target)?;
            losses::style_loss(tape, &fp, &ft)
        },
        std::slice::from_ref(&p),
        STEP,
        Some(128),
        53,
    )?;
    out.push(outcome("style_loss", r));

    let mut disc = PatchDiscriminator::new(54);
    for role in [AdversarialRole::Generator, AdversarialRole::Discriminator] {
        let r = finite_diff_check_sampled(
            |tape: &mut Tape, v: &[Var]| {
                let target = tape.constant(t.clone());
                losses::adversarial_loss(tape, &mut disc, v[0], target, role)
            },
            std::slice::from_ref(&p),
            STEP,
            Some(128),
            55,
        )?;
        let name = match role {
            AdversarialRole::Generator => "adversarial_loss_generator",
            AdversarialRole::Discriminator => "adversarial_loss_discriminator",
        };
        out.push(outcome(name, r));
    }

    let weights = LossWeights::default();
    let mut disc = PatchDiscriminator::new(56);
    let r = finite_diff_check_sampled(
        |tape: &mut Tape, v: &[Var]| {
            let target = tape.constant(t.clone());
            let obj = losses::generator_objective(tape, &mut ext, Some(&mut disc), v[0], target, &weights)?;
            Ok(obj.total)
        },
        std::slice::from_ref(&p),
        STEP,
        Some(128),
        57,
    )?;
    out.push(outcome("total_objective", r));
    Ok(out)
}

/// Full network at resolution 16: gradient of a random projection of the
/// raw output with respect to eight random parameter entries.
pub fn network_check(seed: u64) -> Result<CheckOutcome> {
    let net = DcfNet::build(DcfConfig::with_resolution(16), seed)?;
    let mut store = net.params.clone();
    let mut r = rng(seed ^ 0xf00d);
    let trainable: Vec<ParamId> = store
        .ids()
        .filter(|&id| store.param(id).kind == ParamKind::Trainable)
        .collect();
    let picks = sample(&mut r, trainable.len(), 8);
    let coords: Vec<(ParamId, usize)> = picks
        .into_iter()
        .map(|i| {
            let id = trainable[i];
            (id, r.random_range(0..store.get(id).numel()))
        })
        .collect();
    let image = Tensor::rand_uniform(Shape::new(1, 3, 16, 16), -1.0, 1.0, &mut r);
    let mask = center_mask(16, 16)?;
    let masked = crate::masks::apply_mask(&image, &mask)?;
    let mask = mask.to_tensor();
    let report = finite_diff_check_params(
        |s: &mut Session| {
            let x = s.tape.constant(masked.clone());
            Ok(net.forward_with(s, x, &mask)?.raw)
        },
        &mut store,
        &coords,
        STEP,
    )?;
    Ok(CheckOutcome {
        name: "dcf_network_r16",
        report,
        tolerance: NETWORK_TOLERANCE,
    })
}

/// Runs the checks of one module, or of all of them.
pub fn run(module: &str) -> Result<Vec<CheckOutcome>> {
    match module {
        "tensor" => tensor_checks(),
        "spectral" => spectral_checks(),
        "filtering" => filtering_checks(),
        "ffc" => ffc_checks(),
        "losses" => loss_checks(),
        "model" => Ok(vec![network_check(7)?]),
        "all" => {
            let mut out = Vec::new();
            for m in &MODULES[..MODULES.len() - 1] {
                out.extend(run(m)?);
            }
            Ok(out)
        }
        _ => Err(Error::invalid(format!(
            "unknown module {module:?}; expected one of {}",
            MODULES.join(", ")
        ))),
    }
}
