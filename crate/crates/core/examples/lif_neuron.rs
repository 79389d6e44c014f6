//! Drives one LIF layer with ramped constant currents and prints the spike
//! raster, then the ATan surrogate derivative used during training.

use neuroscatter::neuron::{lif_step, surrogate_grad, LifConfig, LifState};
use neuroscatter::tensor::{Tape, Tensor};

fn main() -> neuroscatter::Result<()> {
    let cfg = LifConfig::default();
    let currents = [0.05f32, 0.12, 0.2, 0.35, 0.6, 1.1];
    let mut tape = Tape::<f32>::inference();
    let mut state = LifState::default();
    let mut raster = vec![String::new(); currents.len()];
    for _ in 0..40 {
        let x = tape.constant(Tensor::new(vec![1, currents.len()], currents.to_vec())?);
        let out = lif_step(&mut tape, &mut state, x, &cfg)?;
        let spikes = tape.value(out.spikes.expect("spiking readout"));
        for (row, &s) in raster.iter_mut().zip(spikes.data()) {
            row.push(if s == 1.0 { '|' } else { '.' });
        }
    }
    println!("beta {}  threshold {}  (40 steps)", cfg.beta, cfg.v_threshold);
    for (c, row) in currents.iter().zip(&raster) {
        let n = row.matches('|').count();
        println!("I = {c:<5} {row}  {n:>2} spikes");
    }

    println!("\nsurrogate derivative, alpha = {}", cfg.surrogate_alpha);
    for x in [-1.0f32, -0.5, -0.1, 0.0, 0.1, 0.5, 1.0] {
        println!("  x = {x:>5}: {:.4}", surrogate_grad(x, cfg.surrogate_alpha));
    }
    Ok(())
}
