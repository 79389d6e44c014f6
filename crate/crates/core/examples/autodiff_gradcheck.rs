//! Builds a small conv + LIF graph on a tape, backpropagates, and compares
//! one gradient entry against a central difference.

use neuroscatter::neuron::{lif_step, LifConfig, LifState};
use neuroscatter::tensor::{Mode, SpikeForward, Tape, Tensor, Var};

fn loss(tape: &mut Tape<f64>, x: Var, k: Var) -> neuroscatter::Result<Var> {
    let cfg = LifConfig::default();
    let mut st = LifState::default();
    let c = tape.conv2d(x, k, None, 1, 1)?;
    let o1 = lif_step(tape, &mut st, c, &cfg)?;
    let o2 = lif_step(tape, &mut st, c, &cfg)?;
    let s = tape.add(o1.v_pre, o2.v_pre)?;
    let sq = tape.mul(s, s)?;
    tape.sum(sq)
}

fn value(x: &Tensor<f64>, k: &Tensor<f64>) -> neuroscatter::Result<f64> {
    let mut tape = Tape::new(Mode::Inference).with_spike_forward(SpikeForward::Surrogate);
    let (xv, kv) = (tape.constant(x.clone()), tape.param(k.clone()));
    let l = loss(&mut tape, xv, kv)?;
    Ok(tape.value(l).item())
}

fn main() -> neuroscatter::Result<()> {
    let x = Tensor::from_fn(&[1, 1, 5, 5], |i| ((i * 7 % 11) as f64) / 10.0);
    let k = Tensor::from_fn(&[2, 1, 3, 3], |i| ((i as f64) - 8.0) / 20.0);
    let mut tape = Tape::train().with_spike_forward(SpikeForward::Surrogate);
    let (xv, kv) = (tape.constant(x.clone()), tape.param(k.clone()));
    let l = loss(&mut tape, xv, kv)?;
    println!("loss {:.6}, {} recorded ops", tape.value(l).item(), tape.recorded_ops());
    let grads = tape.backward(l)?;
    let g = grads.get(kv).expect("kernel gradient");

    let h = 1e-5;
    for idx in [0, 4, 13] {
        let (mut plus, mut minus) = (k.clone(), k.clone());
        plus.data_mut()[idx] += h;
        minus.data_mut()[idx] -= h;
        let numeric = (value(&x, &plus)? - value(&x, &minus)?) / (2.0 * h);
        println!("dL/dk[{idx:>2}]  backprop {:>12.6}  central diff {numeric:>12.6}", g.data()[idx]);
    }
    Ok(())
}
