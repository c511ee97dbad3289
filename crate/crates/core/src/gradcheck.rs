//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::nn::Session;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Relative discrepancy used by every check:
/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// `(input, element, analytic, numeric)` at the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    fn record(&mut self, input: usize, elem: usize, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        if e > self.max_relative_error || self.worst.is_none() {
            self.max_relative_error = self.max_relative_error.max(e);
            self.worst = Some((input, elem, analytic, numeric));
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_relative_error < tol
    }
}

/// Fixed random contraction that turns any output into a scalar.
struct Projection {
    rng: ChaCha8Rng,
    weights: Option<Tensor>,
}

impl Projection {
    fn new(seed: u64) -> Self {
        Projection {
            rng: ChaCha8Rng::seed_from_u64(seed),
            weights: None,
        }
    }

    fn apply(&mut self, tape: &mut Tape, y: Var) -> Result<Var> {
        let shape = tape.shape(y);
        let rng = &mut self.rng;
        let w = self.weights.get_or_insert_with(|| {
            if shape.numel() == 1 {
                Tensor::full(shape, 1.0)
            } else {
                Tensor::randn(shape, 1.0 / (shape.numel() as f64).sqrt(), rng)
            }
        });
        tape.dot_const(y, w.clone())
    }
}

fn pick(len: usize, limit: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match limit {
        Some(k) if k < len => {
            let mut idx = sample(rng, len, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..len).collect(),
    }
}

/// Checks gradients of `f` with respect to every element of every input.
/// Non-scalar outputs are contracted with fixed random weights.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    finite_diff_check_sampled(f, inputs, h, None, 0)
}

/// Like [`finite_diff_check`], probing at most `per_input` randomly chosen
/// elements of each input.
pub fn finite_diff_check_sampled<F>(
    mut f: F,
    inputs: &[Tensor],
    h: f64,
    per_input: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut proj = Projection::new(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let y = f(&mut tape, &vars)?;
    let loss = proj.apply(&mut tape, y)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get_or_zeros(*v, t.shape()))
        .collect();

    let mut eval = |point: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = point.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let y = f(&mut tape, &vars)?;
        let l = proj.apply(&mut tape, y)?;
        Ok(tape.value(l).data()[0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    let mut point: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for e in pick(input.numel(), per_input, &mut rng) {
            let orig = input.data()[e];
            point[i].data_mut()[e] = orig + h;
            let plus = eval(&point)?;
            point[i].data_mut()[e] = orig - h;
            let minus = eval(&point)?;
            point[i].data_mut()[e] = orig;
            report.record(i, e, analytic[i].data()[e], (plus - minus) / (2.0 * h));
        }
    }
    Ok(report)
}

/// Checks gradients of a network-level function with respect to selected
/// parameter entries `(param, flat index)`. Resets the store's gradients.
pub fn finite_diff_check_params<F>(
    mut f: F,
    store: &mut ParamStore,
    coords: &[(ParamId, usize)],
    h: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Session) -> Result<Var>,
{
    let mut proj = Projection::new(0x5eed);
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = {
        let mut s = Session::new(&mut tape, store, true);
        let y = f(&mut s)?;
        proj.apply(s.tape, y)?
    };
    let grads = tape.backward(loss)?;
    store.collect_grads(&tape, &grads);

    let mut report = GradCheckReport::default();
    for (n, &(id, e)) in coords.iter().enumerate() {
        let analytic = store.grad(id).data()[e];
        let orig = store.get(id).data()[e];
        let mut eval = |v: f64, store: &mut ParamStore| -> Result<f64> {
            store.get_mut(id).data_mut()[e] = v;
            let mut tape = Tape::inference();
            let mut s = Session::new(&mut tape, store, true);
            let y = f(&mut s)?;
            let l = proj.apply(s.tape, y)?;
            Ok(tape.value(l).data()[0])
        };
        let plus = eval(orig + h, store)?;
        let minus = eval(orig - h, store)?;
        store.get_mut(id).data_mut()[e] = orig;
        report.record(n, e, analytic, (plus - minus) / (2.0 * h));
    }
    Ok(report)
}
