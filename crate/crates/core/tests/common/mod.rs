#![allow(dead_code)]

use neuroscatter::neuron::{lif_step, synapse_filter_step, LifConfig, LifState, ResetPolicy};
use neuroscatter::tensor::{Mode, SpikeForward, Tape, Tensor, Var};
use neuroscatter::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Relative error with a floor so that near-zero gradients compare in
/// absolute terms.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

pub type Graph<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a;

fn eval(inputs: &[Tensor<f64>], f: &Graph<'_>) -> f64 {
    let mut tape = Tape::new(Mode::Inference).with_spike_forward(SpikeForward::Surrogate);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars).expect("forward");
    tape.value(out).item()
}

/// Compares backprop against central differences of the surrogate-smoothed
/// forward graph at `picks` random coordinates; returns every
/// (analytic, numeric) pair.
pub fn gradcheck(
    inputs: &[Tensor<f64>],
    f: &Graph<'_>,
    picks: usize,
    step: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<(f64, f64)> {
    let mut tape = Tape::train().with_spike_forward(SpikeForward::Surrogate);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars).expect("forward");
    let grads = tape.backward(loss).expect("backward");
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let mut pairs = Vec::with_capacity(picks);
    for _ in 0..picks {
        let i = rng.random_range(0..inputs.len());
        let k = rng.random_range(0..inputs[i].len());
        let mut plus = inputs.to_vec();
        plus[i].data_mut()[k] += step;
        let mut minus = inputs.to_vec();
        minus[i].data_mut()[k] -= step;
        let numeric = (eval(&plus, f) - eval(&minus, f)) / (2.0 * step);
        pairs.push((analytic[i].data()[k], numeric));
    }
    pairs
}

pub fn max_rel_err(pairs: &[(f64, f64)]) -> f64 {
    pairs.iter().map(|&(a, n)| rel_err(a, n)).fold(0.0, f64::max)
}

/// Contracts a tensor to a scalar with fixed random weights so every output
/// element carries a distinct gradient.
pub fn weighted_sum(tape: &mut Tape<f64>, x: Var, seed: u64) -> Result<Var> {
    let mut r = rng(seed);
    let w = randn(&mut r, tape.shape(x));
    let w = tape.constant(w);
    let p = tape.mul(x, w)?;
    tape.sum(p)
}

/// Number of distinct `op_case` kinds.
pub const OP_CASES: usize = 8;

/// One random instance of a differentiable op with its inputs.
pub fn op_case(which: usize, seed: u64) -> (Vec<Tensor<f64>>, Box<Graph<'static>>) {
    let mut r = rng(seed);
    match which {
        0 => {
            let stride = 1 + (seed % 2) as usize;
            let (pad, h) = if stride == 1 { (1, 6) } else { (0, 7) };
            (
                vec![randn(&mut r, &[2, 2, h, h]), randn(&mut r, &[3, 2, 3, 3]), randn(&mut r, &[3])],
                Box::new(move |t, v| {
                    let y = t.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
                    weighted_sum(t, y, seed)
                }),
            )
        }
        1 => (
            vec![randn(&mut r, &[3, 5]), randn(&mut r, &[4, 5]), randn(&mut r, &[4])],
            Box::new(move |t, v| {
                let y = t.fully_connected(v[0], v[1], Some(v[2]))?;
                weighted_sum(t, y, seed)
            }),
        ),
        2 => {
            let train = seed % 2 == 0;
            (
                vec![randn(&mut r, &[2, 3, 4, 4]), uniform(&mut r, &[3], 0.5, 1.5), randn(&mut r, &[3])],
                Box::new(move |t, v| {
                    let (mut rm, mut rv) = (vec![0.1, -0.2, 0.3], vec![1.5, 0.8, 1.1]);
                    let y = t.batch_norm(v[0], v[1], v[2], &mut rm, &mut rv, train, 1e-5, 0.1)?;
                    weighted_sum(t, y, seed)
                }),
            )
        }
        3 => (
            vec![randn(&mut r, &[2, 2, 4, 6])],
            Box::new(move |t, v| {
                let y = t.max_pool2(v[0])?;
                weighted_sum(t, y, seed)
            }),
        ),
        4 => {
            let bilinear = seed % 2 == 0;
            (
                vec![randn(&mut r, &[1, 2, 3, 4])],
                Box::new(move |t, v| {
                    let y = if bilinear { t.upsample2_bilinear(v[0])? } else { t.upsample2_nearest(v[0])? };
                    weighted_sum(t, y, seed)
                }),
            )
        }
        5 => (
            vec![randn(&mut r, &[1, 3, 2, 2]), randn(&mut r, &[3, 2, 2, 2]), randn(&mut r, &[2])],
            Box::new(move |t, v| {
                let y = t.conv_transpose2(v[0], v[1], Some(v[2]))?;
                weighted_sum(t, y, seed)
            }),
        ),
        6 => (
            vec![randn(&mut r, &[2, 3]), randn(&mut r, &[2, 3])],
            Box::new(move |t, v| {
                let m = t.mul(v[0], v[1])?;
                let s = t.sigmoid(m)?;
                let a = t.affine(&[(s, 0.7), (v[1], -1.3)], 0.2)?;
                let a4 = t.reshape(a, &[1, 1, 2, 3])?;
                let x4 = t.reshape(v[0], &[1, 1, 2, 3])?;
                let c = t.concat_channels(&[a4, x4])?;
                let m = t.mean(c)?;
                let w = weighted_sum(t, c, seed)?;
                t.add(m, w)
            }),
        ),
        _ => {
            // Two LIF steps plus a synapse filter, reset policy chosen by seed.
            let reset = if seed % 2 == 0 { ResetPolicy::HardToRest } else { ResetPolicy::Subtract };
            (
                vec![uniform(&mut r, &[1, 6], 0.0, 1.5), uniform(&mut r, &[1, 6], 0.0, 1.5)],
                Box::new(move |t, v| {
                    let cfg = LifConfig { beta: 0.8, reset, ..LifConfig::default() };
                    let mut st = LifState::default();
                    let mut filt = None;
                    let mut acc = Vec::new();
                    for &x in v {
                        let o = lif_step(t, &mut st, x, &cfg)?;
                        let f = synapse_filter_step(t, &mut filt, o.spikes.unwrap(), 0.5)?;
                        acc.push(weighted_sum(t, f, seed)?);
                        acc.push(weighted_sum(t, o.v_pre, seed + 1)?);
                    }
                    let terms: Vec<_> = acc.into_iter().map(|a| (a, 1.0)).collect();
                    t.affine(&terms, 0.0)
                }),
            )
        }
    }
}
